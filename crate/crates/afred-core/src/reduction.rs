//! The finite-dimensional reduction and its consistency checks.
//!
//! `f_ε(k)` is the complement-coefficient part of the solution map and
//! `φ_ε(k)` its domain part; zeros of `f_ε` inside the kernel ball
//! correspond one-to-one to zeros of `F_ε` inside the solution ball. The
//! module evaluates the reduced map on grids, finds its zeros by damped
//! Newton, finds zeros of the full family by an independent damped
//! Gauss-Newton descent on `½‖F‖²`, and cross-checks the two zero sets.

use crate::error::{AfredError, Result};
use crate::family::AdiabaticFamily;
use crate::sample::halton_ball;
use crate::solver::{Pipeline, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::spaces::{TangentVector, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

/// Armijo slope fraction used by both damped searches.
const ARMIJO_C1: f64 = 1e-4;

/// One evaluated point of the reduced map.
#[derive(Debug, Clone)]
pub struct ReducedPoint {
    /// Parameter coordinates.
    pub eps: Vec<f64>,
    /// Kernel coefficients.
    pub k_coeffs: DVector<f64>,
    /// Reduced map value (complement coefficients).
    pub f: DVector<f64>,
    /// Derivative of the reduced map, `dim 𝔠 × dim 𝔎`.
    pub df: DMatrix<f64>,
    /// Solution branch value `φ_ε(k)`.
    pub gamma: DVector<f64>,
    /// Contraction residual at exit.
    pub residual: f64,
    /// Contraction iterations used.
    pub iterations: usize,
}

/// Evaluates the reduced map and its derivative at one point.
pub fn reduce_point(pipeline: &Pipeline, eps: &[f64], k_coeffs: &DVector<f64>) -> Result<ReducedPoint> {
    let sample = pipeline.solve(eps, k_coeffs, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let dim_k = pipeline.kernel_cokernel().dim_kernel();
    let dim_c = pipeline.kernel_cokernel().dim_cokernel();
    let mut df = DMatrix::zeros(dim_c, dim_k);
    for j in 0..dim_k {
        let mut e = DVector::zeros(dim_k);
        e[j] = 1.0;
        let d = pipeline.d_sigma(&sample, &e)?;
        df.set_column(j, &d.c_prime);
    }
    Ok(ReducedPoint {
        eps: eps.to_vec(),
        k_coeffs: k_coeffs.clone(),
        f: sample.c_coeffs.clone(),
        df,
        gamma: sample.gamma.clone(),
        residual: sample.residual,
        iterations: sample.iterations,
    })
}

/// Evaluates the reduced map over the product of a parameter list and a
/// kernel grid, parameter-major. Points are computed in parallel; the output
/// order is the deterministic product order.
pub fn reduce_grid(
    pipeline: &Pipeline,
    eps_list: &[Vec<f64>],
    k_grid: &[DVector<f64>],
) -> Result<Vec<ReducedPoint>> {
    let jobs: Vec<(usize, usize)> = (0..eps_list.len())
        .flat_map(|e| (0..k_grid.len()).map(move |k| (e, k)))
        .collect();
    jobs.par_iter()
        .map(|&(e, k)| reduce_point(pipeline, &eps_list[e], &k_grid[k]))
        .collect()
}

/// A zero of the full family found by brute-force descent.
#[derive(Debug, Clone)]
pub struct BruteZero {
    /// The zero itself.
    pub gamma: DVector<f64>,
    /// `‖F_ε(γ)‖_Ω(ε)` at the accepted point.
    pub residual: f64,
    /// Number of seeds whose descent ended in this zero's cluster.
    pub basin_count: usize,
}

/// Independent zero-finder: damped Gauss-Newton with Armijo backtracking on
/// `½‖F_ε‖²_Ω(ε)`, multi-started from a deterministic ball sample.
///
/// A point is accepted when `‖F_ε(γ)‖_Ω(ε) ≤ zero_tol` and `‖γ‖_Γ(ε)` stays
/// inside `ball_radius`. Accepted points closer than the merge radius
/// (`match_tol`, widened to `10·sqrt(zero_tol)` so the linearly-converging
/// cluster around a degenerate zero collapses to one report) are merged.
pub fn brute_force_zeros(
    fam: &AdiabaticFamily,
    eps: &[f64],
    ball_radius: f64,
    n_seeds: usize,
    zero_tol: f64,
    match_tol: f64,
    seed: u64,
) -> Result<Vec<BruteZero>> {
    let w_gamma = fam.gamma_norms().weight_at(eps);
    let w_omega = fam.omega_norms().weight_at(eps);
    let s_omega = w_omega.sqrt().clone();
    let seeds = halton_ball(w_gamma.as_ref(), ball_radius, n_seeds, seed);

    let descents: Vec<Option<DVector<f64>>> = seeds
        .par_iter()
        .map(|g0| descend(fam, eps, g0, &s_omega, w_gamma.as_ref(), ball_radius, zero_tol).ok())
        .collect();

    let merge_radius = match_tol.max(10.0 * zero_tol.sqrt());
    let w0 = fam.gamma_norms().weight_at_zero();
    let mut clusters: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    for g in descents.into_iter().flatten() {
        let res = w_omega.norm(&fam.evaluate(eps, &g)?);
        match clusters
            .iter_mut()
            .find(|(rep, _, _)| w0.norm(&(&g - &*rep)) <= merge_radius)
        {
            Some((rep, best, count)) => {
                if res < *best {
                    *rep = g;
                    *best = res;
                }
                *count += 1;
            }
            None => clusters.push((g, res, 1)),
        }
    }
    clusters.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(clusters
        .into_iter()
        .map(|(gamma, residual, basin_count)| BruteZero {
            gamma,
            residual,
            basin_count,
        })
        .collect())
}

/// One damped Gauss-Newton descent; returns the converged point or an error
/// when the seed's descent stalls or leaves the ball.
fn descend(
    fam: &AdiabaticFamily,
    eps: &[f64],
    g0: &DVector<f64>,
    s_omega: &DMatrix<f64>,
    w_gamma: &WeightMatrix,
    ball_radius: f64,
    zero_tol: f64,
) -> Result<DVector<f64>> {
    let mut g = g0.clone();
    let merit = |v: &DVector<f64>| -> Result<f64> {
        let f = fam.evaluate(eps, v)?;
        Ok(0.5 * (s_omega * f).norm_squared())
    };
    let mut phi = merit(&g)?;
    for _ in 0..80 {
        if (2.0 * phi).sqrt() <= zero_tol {
            return Ok(g);
        }
        let f = fam.evaluate(eps, &g)?;
        let j = fam.jacobian(eps, &g)?;
        let jt = s_omega * j;
        let ft = s_omega * f;
        // Weighted least-squares step; the pseudo-inverse handles the
        // rank-deficient case at degenerate zeros.
        let step = jt
            .svd(true, true)
            .solve(&ft, 1e-12)
            .map_err(|e| AfredError::SingularStabilization(e.to_string()))?;
        let mut t = 1.0;
        let slope = -2.0 * phi; // descent slope of the Gauss-Newton direction
        loop {
            let cand = &g - &step * t;
            if w_gamma.norm(&cand) < ball_radius && fam.in_domain(&cand) {
                if let Ok(phi_c) = merit(&cand) {
                    if phi_c <= phi + ARMIJO_C1 * t * slope {
                        g = cand;
                        phi = phi_c;
                        break;
                    }
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(AfredError::NoConvergence {
                    max_iter: 80,
                    last_step: t,
                });
            }
        }
    }
    if (2.0 * phi).sqrt() <= zero_tol {
        Ok(g)
    } else {
        Err(AfredError::NoConvergence {
            max_iter: 80,
            last_step: (2.0 * phi).sqrt(),
        })
    }
}

/// A zero of the reduced map.
#[derive(Debug, Clone)]
pub struct ReducedZero {
    /// Kernel coefficients of the zero.
    pub k_coeffs: DVector<f64>,
    /// `‖f_ε(k)‖` at the accepted point.
    pub f_norm: f64,
    /// The corresponding solution-branch point `φ_ε(k)`.
    pub gamma: DVector<f64>,
    /// Set when the reduced derivative is rank-deficient at the zero — the
    /// zero is degenerate (multiple).
    pub degenerate: bool,
    /// Number of seeds whose iteration ended in this zero's cluster.
    pub basin_count: usize,
}

/// Zero set of the reduced map.
#[derive(Debug, Clone)]
pub struct ReducedZeros {
    /// Deduplicated zeros.
    pub zeros: Vec<ReducedZero>,
    /// Set when `dim 𝔠 = 0`: the zero set is all of the kernel ball, so no
    /// discrete list is reported.
    pub positive_dimensional: bool,
    /// Set when `dim 𝔎 ≠ dim 𝔠` forced Gauss-Newton instead of Newton.
    pub gauss_newton: bool,
}

/// Finds zeros of the reduced map by damped (Gauss-)Newton from a
/// deterministic multi-start inside the kernel ball.
pub fn find_reduced_zeros(
    pipeline: &Pipeline,
    eps: &[f64],
    n_seeds: usize,
    zero_tol: f64,
    match_tol: f64,
    seed: u64,
) -> Result<ReducedZeros> {
    let kc = pipeline.kernel_cokernel();
    let (dim_k, dim_c) = (kc.dim_kernel(), kc.dim_cokernel());
    if dim_c == 0 {
        return Ok(ReducedZeros {
            zeros: Vec::new(),
            positive_dimensional: true,
            gauss_newton: false,
        });
    }
    let gauss_newton = dim_k != dim_c;
    let r_k = pipeline.plan().r_k;
    let seeds = halton_ball(&WeightMatrix::identity(dim_k), r_k * 0.98, n_seeds, seed);

    let runs: Vec<Option<DVector<f64>>> = seeds
        .par_iter()
        .map(|k0| newton_on_reduced(pipeline, eps, k0, r_k, zero_tol).ok())
        .collect();

    let merge_radius = match_tol.max(10.0 * zero_tol.sqrt());
    let mut clusters: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    for k in runs.into_iter().flatten() {
        let pt = reduce_point(pipeline, eps, &k)?;
        let fe = pt.f.norm();
        match clusters
            .iter_mut()
            .find(|(rep, _, _)| (&k - &*rep).norm() <= merge_radius)
        {
            Some((rep, best, count)) => {
                if fe < *best {
                    *rep = k;
                    *best = fe;
                }
                *count += 1;
            }
            None => clusters.push((k, fe, 1)),
        }
    }
    clusters.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0.iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut zeros = Vec::with_capacity(clusters.len());
    for (k, f_norm, basin_count) in clusters {
        let pt = reduce_point(pipeline, eps, &k)?;
        let svals = pt.df.clone().svd(false, false).singular_values;
        let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
        // Degenerate when the derivative cannot localize the zero to the
        // match tolerance: position uncertainty ≈ zero_tol / σ_min.
        let degenerate = smin < zero_tol / match_tol;
        zeros.push(ReducedZero {
            k_coeffs: k,
            f_norm,
            gamma: pt.gamma,
            degenerate,
            basin_count,
        });
    }
    Ok(ReducedZeros {
        zeros,
        positive_dimensional: false,
        gauss_newton,
    })
}

fn newton_on_reduced(
    pipeline: &Pipeline,
    eps: &[f64],
    k0: &DVector<f64>,
    r_k: f64,
    zero_tol: f64,
) -> Result<DVector<f64>> {
    let mut k = k0.clone();
    let value = |k: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let pt = reduce_point(pipeline, eps, k)?;
        Ok((pt.f, pt.df))
    };
    let (mut f, mut df) = value(&k)?;
    for _ in 0..80 {
        if f.norm() <= zero_tol {
            return Ok(k);
        }
        let step = df
            .clone()
            .svd(true, true)
            .solve(&f, 1e-12)
            .map_err(|e| AfredError::SingularStabilization(e.to_string()))?;
        let phi = 0.5 * f.norm_squared();
        let mut t = 1.0;
        loop {
            let mut cand = &k - &step * t;
            // Stay strictly inside the kernel ball the solver accepts.
            let norm = cand.norm();
            if norm > r_k * 0.999 {
                cand *= r_k * 0.999 / norm;
            }
            match value(&cand) {
                Ok((fc, dfc)) => {
                    let phi_c = 0.5 * fc.norm_squared();
                    if phi_c <= phi * (1.0 - ARMIJO_C1 * t) {
                        k = cand;
                        f = fc;
                        df = dfc;
                        break;
                    }
                }
                Err(_) => {}
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(AfredError::NoConvergence {
                    max_iter: 80,
                    last_step: t,
                });
            }
        }
    }
    if f.norm() <= zero_tol {
        Ok(k)
    } else {
        Err(AfredError::NoConvergence {
            max_iter: 80,
            last_step: f.norm(),
        })
    }
}

/// One matched pair of the zero-set comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroMatch {
    /// Index into the brute-force list.
    pub brute: usize,
    /// Index into the reduced list.
    pub reduced: usize,
    /// Base-norm distance between the brute zero and the reduced zero's
    /// solution-branch point.
    pub gamma_mismatch: f64,
    /// Distance between the brute zero's kernel projection and the reduced
    /// zero's coefficients.
    pub k_mismatch: f64,
}

/// Result of the zero-set equivalence check.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroEquivalence {
    /// Matched pairs.
    pub pairs: Vec<ZeroMatch>,
    /// Brute zeros without a reduced partner.
    pub unmatched_brute: Vec<usize>,
    /// Reduced zeros without a brute partner.
    pub unmatched_reduced: Vec<usize>,
    /// Largest mismatch over all matched pairs.
    pub max_mismatch: f64,
    /// Bijection established within tolerance.
    pub pass: bool,
}

/// Matches the brute-force zero set of `F_ε` against the zero set of the
/// reduced map through the kernel projection and the solution branch.
pub fn zero_equivalence(
    pipeline: &Pipeline,
    brute: &[BruteZero],
    reduced: &ReducedZeros,
    match_tol: f64,
) -> ZeroEquivalence {
    let kc = pipeline.kernel_cokernel();
    let w0 = pipeline.family().gamma_norms().weight_at_zero();
    let mut pairs = Vec::new();
    let mut used = vec![false; reduced.zeros.len()];
    let mut unmatched_brute = Vec::new();
    let mut max_mismatch: f64 = 0.0;
    for (bi, bz) in brute.iter().enumerate() {
        let k_b = &kc.pi_k * &bz.gamma;
        let best = reduced
            .zeros
            .iter()
            .enumerate()
            .filter(|(ri, _)| !used[*ri])
            .map(|(ri, rz)| ((&k_b - &rz.k_coeffs).norm(), ri))
            .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
        match best {
            Some((dist, ri)) if dist <= match_tol => {
                used[ri] = true;
                let gamma_mismatch = w0.norm(&(&bz.gamma - &reduced.zeros[ri].gamma));
                max_mismatch = max_mismatch.max(dist).max(gamma_mismatch);
                pairs.push(ZeroMatch {
                    brute: bi,
                    reduced: ri,
                    gamma_mismatch,
                    k_mismatch: dist,
                });
            }
            _ => unmatched_brute.push(bi),
        }
    }
    let unmatched_reduced: Vec<usize> =
        (0..reduced.zeros.len()).filter(|&i| !used[i]).collect();
    let pass = unmatched_brute.is_empty() && unmatched_reduced.is_empty();
    ZeroEquivalence {
        pairs,
        unmatched_brute,
        unmatched_reduced,
        max_mismatch,
        pass,
    }
}

/// One row of the regularity profile.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    /// Parameter of the row.
    pub eps: Vec<f64>,
    /// `sup_k ‖D^j f_ε(k) − D^j f_ref(k)‖` for j = 0..=order.
    pub sup_diff: Vec<f64>,
}

/// Convergence profile of reduced-map derivatives along a parameter path.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityProfile {
    /// Derivative orders covered (0..=order).
    pub order: u32,
    /// Rows along the path; the last path point is the reference.
    pub rows: Vec<ProfileRow>,
    /// Per-order monotone decrease along the path.
    pub monotone: Vec<bool>,
    /// Per-order difference at the second-to-last path point — the closest
    /// genuine approach to the reference.
    pub final_diff: Vec<f64>,
    /// All orders monotone and final values below tolerance.
    pub pass: bool,
}

/// Evaluates `sup_k ‖D^j f_ε − D^j f_ref‖` for `j ≤ order` along a parameter
/// path whose **last** entry is the reference parameter; passes when each
/// column decreases monotonically along the path and ends below `tol`.
pub fn regularity_profile(
    pipeline: &Pipeline,
    eps_path: &[Vec<f64>],
    k_grid: &[DVector<f64>],
    order: u32,
    tol: f64,
) -> Result<RegularityProfile> {
    if order > 2 {
        return Err(AfredError::InvalidConfig(
            "regularity profiles are supported up to order 2".into(),
        ));
    }
    let last = eps_path.last().ok_or_else(|| {
        AfredError::InvalidConfig("regularity profile needs a nonempty parameter path".into())
    })?;
    let derivs = |eps: &[f64]| -> Result<Vec<Vec<DVector<f64>>>> {
        // Per grid point, the list [f, Df·e_j …, D²f(e_i,e_j) …] flattened.
        k_grid
            .iter()
            .map(|k| derivative_stack(pipeline, eps, k, order))
            .collect()
    };
    let ref_stack = derivs(last)?;
    let mut rows = Vec::with_capacity(eps_path.len());
    for eps in eps_path {
        let stack = derivs(eps)?;
        let mut sup = vec![0.0f64; order as usize + 1];
        for (point, ref_point) in stack.iter().zip(&ref_stack) {
            for (j, s) in sup.iter_mut().enumerate() {
                *s = s.max((&point[j] - &ref_point[j]).norm());
            }
        }
        rows.push(ProfileRow {
            eps: eps.clone(),
            sup_diff: sup,
        });
    }
    let mut monotone = vec![true; order as usize + 1];
    for j in 0..=order as usize {
        for w in rows.windows(2) {
            if w[1].sup_diff[j] > w[0].sup_diff[j] + 1e-12 {
                monotone[j] = false;
            }
        }
    }
    // The last path point IS the reference (difference identically zero), so
    // the meaningful end value is the closest genuine approach to the limit:
    // the second-to-last row. Single-point paths have nothing to compare.
    let final_diff: Vec<f64> = if rows.len() >= 2 {
        rows[rows.len() - 2].sup_diff.clone()
    } else {
        vec![0.0; order as usize + 1]
    };
    let pass = monotone.iter().all(|&m| m) && final_diff.iter().all(|&d| d <= tol);
    Ok(RegularityProfile {
        order,
        rows,
        monotone,
        final_diff,
        pass,
    })
}

/// Flattened derivative data `[f, Df columns, D²f entries]` up to `order` at
/// one point, each order as one stacked vector for easy norm comparison.
fn derivative_stack(
    pipeline: &Pipeline,
    eps: &[f64],
    k: &DVector<f64>,
    order: u32,
) -> Result<Vec<DVector<f64>>> {
    let dim_k = pipeline.kernel_cokernel().dim_kernel();
    let dim_c = pipeline.kernel_cokernel().dim_cokernel();
    let mut out = Vec::with_capacity(order as usize + 1);
    let pt = reduce_point(pipeline, eps, k)?;
    out.push(pt.f.clone());
    if order >= 1 {
        let mut flat = DVector::zeros(dim_c * dim_k);
        for j in 0..dim_k {
            flat.rows_mut(j * dim_c, dim_c)
                .copy_from(&pt.df.column(j).into_owned());
        }
        out.push(flat);
    }
    if order >= 2 {
        let mut flat = DVector::zeros(dim_c * dim_k * dim_k);
        for i in 0..dim_k {
            for j in 0..=i {
                let mut e_i = DVector::zeros(dim_k);
                e_i[i] = 1.0;
                let mut e_j = DVector::zeros(dim_k);
                e_j[j] = 1.0;
                let tv = TangentVector::new(
                    2,
                    vec![k.clone(), e_i.clone(), e_j.clone(), DVector::zeros(dim_k)],
                )?;
                let ts = pipeline.tangent_sigma(eps, &tv)?;
                let c3 = ts.tv.entries()[3].rows(0, dim_c).into_owned();
                flat.rows_mut((i * dim_k + j) * dim_c, dim_c).copy_from(&c3);
                if i != j {
                    flat.rows_mut((j * dim_k + i) * dim_c, dim_c).copy_from(&c3);
                }
            }
        }
        out.push(flat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_squared_map, make_toy_shrink};
    use crate::solver::Pipeline;
    use approx::assert_relative_eq;

    fn toy_pipeline() -> Pipeline {
        let fam = make_toy_shrink(0.01, false).unwrap();
        Pipeline::from_declared(fam, 0.5, Some(0.12)).unwrap()
    }

    #[test]
    fn brute_force_finds_both_toy_zeros() {
        // Zeros of F_{(ε,τ)} sit at x = ±sqrt(τ/(1+ε)), y = εx.
        let fam = make_toy_shrink(0.01, false).unwrap();
        let zeros = brute_force_zeros(&fam, &[0.25, 0.01], 0.25, 60, 1e-10, 1e-6, 3).unwrap();
        assert_eq!(zeros.len(), 2, "zeros found: {zeros:?}");
        let expect = (0.01f64 / 1.25).sqrt();
        let mut xs: Vec<f64> = zeros.iter().map(|z| z.gamma[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(xs[0], -expect, epsilon = 1e-8);
        assert_relative_eq!(xs[1], expect, epsilon = 1e-8);
        for z in &zeros {
            assert_relative_eq!(z.gamma[1], 0.25 * z.gamma[0], epsilon = 1e-8);
            assert!(z.residual <= 1e-10);
        }
    }

    #[test]
    fn brute_force_merges_degenerate_cluster() {
        // The squared map has a single double zero at the origin: every
        // descent converges towards 0 and the cluster must merge.
        let fam = make_squared_map();
        let zeros = brute_force_zeros(&fam, &[], 0.4, 40, 1e-8, 1e-6, 5).unwrap();
        assert_eq!(zeros.len(), 1);
        assert!(zeros[0].gamma.norm() < 2e-4);
        assert!(zeros[0].basin_count > 10);
    }

    #[test]
    fn reduced_zeros_match_closed_form_positions() {
        let p = toy_pipeline();
        let rz = find_reduced_zeros(&p, &[0.1, 0.01], 24, 1e-10, 1e-6, 9).unwrap();
        assert!(!rz.positive_dimensional && !rz.gauss_newton);
        assert_eq!(rz.zeros.len(), 2);
        let sign = p.kernel_cokernel().kernel[0][0];
        let expect = (0.01f64 / 1.1).sqrt();
        let mut ks: Vec<f64> = rz.zeros.iter().map(|z| sign * z.k_coeffs[0]).collect();
        ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(ks[0], -expect, epsilon = 1e-8);
        assert_relative_eq!(ks[1], expect, epsilon = 1e-8);
        assert!(rz.zeros.iter().all(|z| !z.degenerate));
    }

    #[test]
    fn zero_sets_are_in_bijection_on_toy() {
        let p = toy_pipeline();
        let eps = [0.25, 0.0025];
        let brute =
            brute_force_zeros(p.family(), &eps, 0.25, 60, 1e-10, 1e-6, 3).unwrap();
        let reduced = find_reduced_zeros(&p, &eps, 24, 1e-10, 1e-6, 9).unwrap();
        let eq = zero_equivalence(&p, &brute, &reduced, 1e-6);
        assert!(eq.pass, "equivalence: {eq:?}");
        assert_eq!(eq.pairs.len(), 2);
        assert!(eq.max_mismatch < 1e-8, "mismatch {}", eq.max_mismatch);
    }

    #[test]
    fn degenerate_reduced_zero_is_flagged() {
        let fam = make_squared_map();
        let p = Pipeline::from_declared(fam, 0.5, None).unwrap();
        let rz = find_reduced_zeros(&p, &[], 24, 1e-8, 1e-6, 9).unwrap();
        assert_eq!(rz.zeros.len(), 1);
        assert!(rz.zeros[0].degenerate);
    }

    #[test]
    fn toy_regularity_profile_decreases_to_zero() {
        let p = toy_pipeline();
        let path: Vec<Vec<f64>> = [0.2, 0.1, 0.05, 0.025, 1e-8, 0.0]
            .iter()
            .map(|&e| vec![e, 0.01])
            .collect();
        let k_grid: Vec<DVector<f64>> = (0..9)
            .map(|i| DVector::from_column_slice(&[-0.012 + 0.003 * i as f64]))
            .collect();
        let profile = regularity_profile(&p, &path, &k_grid, 1, 1e-9).unwrap();
        assert!(profile.pass, "profile: {profile:?}");
        // sup |f_ε − f_0| = ε·max k² on the grid.
        let first = profile.rows[0].sup_diff[0];
        assert_relative_eq!(first, 0.2 * 0.012f64.powi(2), epsilon = 1e-10);
    }
}
