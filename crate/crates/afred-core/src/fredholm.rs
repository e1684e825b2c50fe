//! Kernel/cokernel extraction and stabilized inversion.
//!
//! At the base parameter the linearization `A = DF_0(0)` is analyzed through
//! the weighted singular value decomposition of `Ã = S_Ω A S_Γ⁻¹` (the
//! square-root conjugation by the base-point norm weights), which yields a
//! norm-orthonormal kernel basis and a norm-orthonormal complement of the
//! range. Stabilized operators
//!
//! `P_ε(γ₀)(c, γ) = (π_K γ, DF_ε(γ₀) γ − c)`
//!
//! are square by the index relation and are inverted in weighted coordinates
//! so the recorded residuals and operator norms are the parameter-norm ones.

use crate::error::{AfredError, Result};
use crate::family::{AdiabaticFamily, FamilyConstants};
use crate::sample::halton_ball;
use crate::spaces::{weighted_complement, weighted_orthonormalize, ParameterBox, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Default rank cutoff as a multiple of the largest singular value.
pub const DEFAULT_RANK_TOL_FACTOR: f64 = 1e-8;

/// Width of the ambiguity band around the rank cutoff (tol/10 to tol·10).
const RANK_BAND: f64 = 10.0;

/// Hard ceiling on acceptable inverse residuals before an inversion is
/// declared singular.
const INVERSE_RESIDUAL_LIMIT: f64 = 1e-8;

/// Spectral norm of a dense matrix.
fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Kernel and cokernel data of the base-point linearization.
#[derive(Debug, Clone)]
pub struct KernelCokernel {
    /// Base-norm-orthonormal kernel basis of `DF_0(0)`.
    pub kernel: Vec<DVector<f64>>,
    /// Base-norm-orthonormal basis of the orthogonal complement of the range.
    pub cokernel: Vec<DVector<f64>>,
    /// Weighted singular values, descending.
    pub singular_values: Vec<f64>,
    /// Rank cutoff actually used.
    pub rank_tol: f64,
    /// Projection matrix onto kernel coefficients: `coeffs = pi_k · γ`.
    pub pi_k: DMatrix<f64>,
    /// Injection matrix from complement coefficients into the target space.
    pub c_inj: DMatrix<f64>,
}

impl KernelCokernel {
    /// Kernel dimension.
    pub fn dim_kernel(&self) -> usize {
        self.kernel.len()
    }

    /// Cokernel dimension.
    pub fn dim_cokernel(&self) -> usize {
        self.cokernel.len()
    }

    /// Index `dim 𝔠 − dim 𝔎`.
    pub fn index(&self) -> i64 {
        self.dim_cokernel() as i64 - self.dim_kernel() as i64
    }

    /// Kernel element from coefficient vector.
    pub fn kernel_element(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let n = self.pi_k.ncols();
        let mut out = DVector::zeros(n);
        for (i, k) in self.kernel.iter().enumerate() {
            out += k * coeffs[i];
        }
        out
    }

    /// Complement element from coefficient vector.
    pub fn cokernel_element(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.c_inj * coeffs
    }
}

/// Computes kernel and cokernel bases of `DF_0(0)` through the weighted SVD.
///
/// Singular values inside `[tol/10, tol·10)` trigger `AmbiguousRank`: the
/// rank decision would hinge on the cutoff, so the caller must choose an
/// explicit `rank_tol` instead. Bases are orthonormal in the base-point
/// norms to 1e−12 and the computed index must match the declared one.
pub fn kernel_cokernel(fam: &AdiabaticFamily, rank_tol: Option<f64>) -> Result<KernelCokernel> {
    let eps0 = fam.delta().zero();
    let zero = DVector::zeros(fam.n_domain());
    let a = fam.jacobian(&eps0, &zero)?;
    let w_gamma = fam.gamma_norms().weight_at_zero();
    let w_omega = fam.omega_norms().weight_at_zero();
    let a_tilde = w_omega.sqrt() * &a * w_gamma.inv_sqrt();

    let (m, n) = (a_tilde.nrows(), a_tilde.ncols());
    let svd = a_tilde.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("singular values are finite")
    });
    let sigmas: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = sigmas.first().copied().unwrap_or(0.0);
    let tol = rank_tol.unwrap_or(DEFAULT_RANK_TOL_FACTOR * sigma_max);
    if tol > 0.0 {
        for &s in &sigmas {
            if s >= tol / RANK_BAND && s < tol * RANK_BAND {
                return Err(AfredError::AmbiguousRank { sigma: s, tol });
            }
        }
    }

    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_gamma_inv = w_gamma.inv_sqrt();
    let s_omega_inv = w_omega.inv_sqrt();

    // Right singular vectors, pulled back to the domain: base-norm
    // orthonormal because the conjugation is an isometry.
    let mut kernel: Vec<DVector<f64>> = Vec::new();
    let mut row_space: Vec<DVector<f64>> = Vec::new();
    for (rank_pos, &i) in order.iter().enumerate() {
        let v_col = s_gamma_inv_col(&s_gamma_inv, v_t, i);
        if sigmas[rank_pos] <= tol {
            kernel.push(v_col);
        } else {
            row_space.push(v_col);
        }
    }
    // Directions the thin SVD never produced (n > min(m, n)) are kernel too.
    let mut all_right: Vec<DVector<f64>> = row_space.clone();
    all_right.extend(kernel.iter().cloned());
    if all_right.len() < n {
        kernel.extend(weighted_complement(w_gamma.as_ref(), &all_right));
    }
    let kernel = weighted_orthonormalize(w_gamma.as_ref(), &kernel, 1e-10);

    // Left singular vectors with small σ span the complement of the range.
    let mut cokernel: Vec<DVector<f64>> = Vec::new();
    let mut range_span: Vec<DVector<f64>> = Vec::new();
    for (rank_pos, &i) in order.iter().enumerate() {
        let u_col = s_omega_inv * u.column(i).into_owned();
        if sigmas[rank_pos] <= tol {
            cokernel.push(u_col);
        } else {
            range_span.push(u_col);
        }
    }
    let mut all_left: Vec<DVector<f64>> = range_span.clone();
    all_left.extend(cokernel.iter().cloned());
    if all_left.len() < m {
        cokernel.extend(weighted_complement(w_omega.as_ref(), &all_left));
    }
    let cokernel = weighted_orthonormalize(w_omega.as_ref(), &cokernel, 1e-10);

    for (basis, weight) in [(&kernel, &w_gamma), (&cokernel, &w_omega)] {
        // Gram defects accumulate with the ambient dimension, so the
        // invariant tolerance scales with it.
        let gram_tol = 1e-12 * (weight.dim() as f64).max(1.0);
        for (i, x) in basis.iter().enumerate() {
            for (j, y) in basis.iter().enumerate() {
                let g = weight.inner(x, y) - if i == j { 1.0 } else { 0.0 };
                if g.abs() > gram_tol {
                    return Err(AfredError::SingularStabilization(format!(
                        "kernel/cokernel basis failed orthonormality by {g:.3e}"
                    )));
                }
            }
        }
    }

    let computed_index = cokernel.len() as i64 - kernel.len() as i64;
    if computed_index != fam.declared_index() {
        return Err(AfredError::InvalidConfig(format!(
            "computed index {} disagrees with declared index {} for family '{}'",
            computed_index,
            fam.declared_index(),
            fam.name()
        )));
    }

    let mut pi_k = DMatrix::zeros(kernel.len(), n);
    for (i, k) in kernel.iter().enumerate() {
        let row = w_gamma.matrix() * k;
        pi_k.set_row(i, &row.transpose());
    }
    let mut c_inj = DMatrix::zeros(m, cokernel.len());
    for (j, c) in cokernel.iter().enumerate() {
        c_inj.set_column(j, c);
    }

    Ok(KernelCokernel {
        kernel,
        cokernel,
        singular_values: sigmas,
        rank_tol: tol,
        pi_k,
        c_inj,
    })
}

fn s_gamma_inv_col(
    s_gamma_inv: &DMatrix<f64>,
    v_t: &DMatrix<f64>,
    i: usize,
) -> DVector<f64> {
    s_gamma_inv * v_t.row(i).transpose()
}

/// Bounds inside which stabilizations are certified invertible.
#[derive(Debug, Clone)]
pub struct StabilizationBounds {
    /// Parameter sub-box on which the inverse formulas are certified.
    pub delta_box: ParameterBox,
    /// Radius (in the parameter norm) of the certified base-point ball.
    pub delta_q: f64,
}

/// The stabilized linear operator `P_ε(γ₀)` together with the weights of its
/// domain `𝔠-coeffs × Γ` and target `𝔎-coeffs × Ω`.
#[derive(Debug, Clone)]
pub struct Stabilization {
    /// Parameter at which the operator was assembled.
    pub eps: Vec<f64>,
    /// Expansion point of the linearization.
    pub gamma0: DVector<f64>,
    /// Kernel dimension (size of the first target block).
    pub dim_kernel: usize,
    /// Cokernel dimension (size of the first domain block).
    pub dim_cokernel: usize,
    /// Dense matrix of `P` in stacked coordinates `[c; γ] ↦ [k; ω]`.
    pub p_matrix: DMatrix<f64>,
    /// Block weight `diag(Id_𝔠, W_Γ(ε))` of the domain.
    pub domain_weight: WeightMatrix,
    /// Block weight `diag(Id_𝔎, W_Ω(ε))` of the target.
    pub target_weight: WeightMatrix,
}

impl Stabilization {
    /// Applies `P` to stacked coordinates.
    pub fn apply(&self, cw: &DVector<f64>) -> DVector<f64> {
        &self.p_matrix * cw
    }

    /// The operator in weighted (isometric) coordinates.
    pub fn p_tilde(&self) -> DMatrix<f64> {
        self.target_weight.sqrt() * &self.p_matrix * self.domain_weight.inv_sqrt()
    }
}

/// Assembles `P_ε(γ₀)` from the family, the kernel/cokernel data, and the
/// expansion point.
///
/// When certified `bounds` are supplied the parameter must lie in the
/// certified sub-box and `‖γ₀‖_ε` within the certified ball, unless
/// `allow_outside` overrides the check (used by widened working plans, which
/// re-certify at runtime through the recorded inverse residuals).
pub fn assemble_stabilization(
    fam: &AdiabaticFamily,
    kc: &KernelCokernel,
    eps: &[f64],
    gamma0: &DVector<f64>,
    bounds: Option<&StabilizationBounds>,
    allow_outside: bool,
) -> Result<Stabilization> {
    if !fam.delta().contains(eps) {
        return Err(AfredError::OutOfDomain(format!(
            "parameter {eps:?} outside the family box"
        )));
    }
    if !fam.in_domain(gamma0) {
        return Err(AfredError::OutOfDomain(
            "expansion point outside the open domain ball".into(),
        ));
    }
    if let Some(b) = bounds {
        if !allow_outside {
            let gnorm = fam.gamma_norms().norm(eps, gamma0);
            if !b.delta_box.contains(eps) {
                return Err(AfredError::OutOfDomain(format!(
                    "parameter {eps:?} outside the certified inverse box"
                )));
            }
            if gnorm > b.delta_q {
                return Err(AfredError::OutOfDomain(format!(
                    "expansion point norm {gnorm:.3e} exceeds certified radius {:.3e}",
                    b.delta_q
                )));
            }
        }
    }
    let (m, n) = (fam.n_target(), fam.n_domain());
    let (dim_k, dim_c) = (kc.dim_kernel(), kc.dim_cokernel());
    let df = fam.jacobian(eps, gamma0)?;
    let mut p = DMatrix::zeros(dim_k + m, dim_c + n);
    p.view_mut((0, dim_c), (dim_k, n)).copy_from(&kc.pi_k);
    p.view_mut((dim_k, 0), (m, dim_c)).copy_from(&(-&kc.c_inj));
    p.view_mut((dim_k, dim_c), (m, n)).copy_from(&df);

    let w_gamma = fam.gamma_norms().weight_at(eps);
    let w_omega = fam.omega_norms().weight_at(eps);
    let domain_weight = WeightMatrix::block_diag(&WeightMatrix::identity(dim_c), w_gamma.as_ref());
    let target_weight = WeightMatrix::block_diag(&WeightMatrix::identity(dim_k), w_omega.as_ref());
    Ok(Stabilization {
        eps: eps.to_vec(),
        gamma0: gamma0.clone(),
        dim_kernel: dim_k,
        dim_cokernel: dim_c,
        p_matrix: p,
        domain_weight,
        target_weight,
    })
}

/// The inverse `Q = P⁻¹` with its certification data.
#[derive(Debug, Clone)]
pub struct InverseOperator {
    /// Parameter of the underlying stabilization.
    pub eps: Vec<f64>,
    /// Inverse in stacked coordinates `[k; ω] ↦ [c; γ]`.
    pub q_matrix: DMatrix<f64>,
    /// Inverse in weighted coordinates.
    pub q_tilde: DMatrix<f64>,
    /// Weighted operator norm of `QP − Id`.
    pub residual_qp: f64,
    /// Weighted operator norm of `PQ − Id`.
    pub residual_pq: f64,
    /// Weighted operator norm of `Q` itself.
    pub cq_observed: f64,
    /// Kernel dimension of the stabilization.
    pub dim_kernel: usize,
    /// Cokernel dimension of the stabilization.
    pub dim_cokernel: usize,
    /// Domain weight of `P` (target weight of `Q`).
    pub domain_weight: WeightMatrix,
    /// Target weight of `P` (domain weight of `Q`).
    pub target_weight: WeightMatrix,
}

impl InverseOperator {
    /// Applies `Q` to stacked coordinates `[k; ω]`.
    pub fn apply(&self, kw: &DVector<f64>) -> DVector<f64> {
        &self.q_matrix * kw
    }

    /// Splits a domain-side stacked vector into complement coefficients and
    /// the domain component.
    pub fn split_cw(&self, cw: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c = cw.rows(0, self.dim_cokernel).into_owned();
        let g = cw.rows(self.dim_cokernel, cw.len() - self.dim_cokernel).into_owned();
        (c, g)
    }
}

fn build_inverse(
    st: &Stabilization,
    q_tilde: DMatrix<f64>,
    p_tilde: &DMatrix<f64>,
    s_dom_inv: &DMatrix<f64>,
    s_tar: &DMatrix<f64>,
) -> Result<InverseOperator> {
    let dim = p_tilde.nrows();
    let id = DMatrix::<f64>::identity(dim, dim);
    let residual_qp = spectral_norm(&(&q_tilde * p_tilde - &id));
    let residual_pq = spectral_norm(&(p_tilde * &q_tilde - &id));
    if residual_qp > INVERSE_RESIDUAL_LIMIT || residual_pq > INVERSE_RESIDUAL_LIMIT {
        return Err(AfredError::SingularStabilization(format!(
            "inverse residuals {residual_qp:.3e} / {residual_pq:.3e} exceed {INVERSE_RESIDUAL_LIMIT:.1e}"
        )));
    }
    let cq_observed = spectral_norm(&q_tilde);
    let q_matrix = s_dom_inv * &q_tilde * s_tar;
    Ok(InverseOperator {
        eps: st.eps.clone(),
        q_matrix,
        q_tilde,
        residual_qp,
        residual_pq,
        cq_observed,
        dim_kernel: st.dim_kernel,
        dim_cokernel: st.dim_cokernel,
        domain_weight: st.domain_weight.clone(),
        target_weight: st.target_weight.clone(),
    })
}

/// Inverts a stabilization by full-pivot LU in weighted coordinates.
pub fn invert_direct(st: &Stabilization) -> Result<InverseOperator> {
    if st.p_matrix.nrows() != st.p_matrix.ncols() {
        return Err(AfredError::DimensionMismatch(format!(
            "stabilized operator is {}×{}, expected square",
            st.p_matrix.nrows(),
            st.p_matrix.ncols()
        )));
    }
    let p_tilde = st.p_tilde();
    let lu = p_tilde.clone().full_piv_lu();
    let q_tilde = lu.try_inverse().ok_or_else(|| {
        AfredError::SingularStabilization("stabilized operator is numerically singular".into())
    })?;
    build_inverse(
        st,
        q_tilde,
        &p_tilde,
        &st.domain_weight.inv_sqrt(),
        &st.target_weight.sqrt(),
    )
}

/// Result data of a Neumann-series inversion.
#[derive(Debug, Clone)]
pub struct NeumannInverse {
    /// The assembled inverse of the perturbed operator.
    pub inverse: InverseOperator,
    /// Weighted norm of the series generator `T = Q₀(P₀ − P₁)`.
    pub t_norm: f64,
    /// Number of series terms accumulated (including the zeroth).
    pub terms: usize,
}

/// Inverts a nearby stabilization `P₁` from a known inverse `Q₀` through the
/// geometric series `Q₁ = (Σ Tⁿ) Q₀` with `T = Id − Q₀P₁`.
///
/// Fails with `NotContractive` when `‖T‖ ≥ 1` and with `NoConvergence` when
/// the term norm has not dropped below `tol` after `max_terms` terms.
pub fn invert_neumann(
    q0: &InverseOperator,
    p1: &Stabilization,
    max_terms: usize,
    tol: f64,
) -> Result<NeumannInverse> {
    if q0.q_tilde.nrows() != p1.p_matrix.nrows() {
        return Err(AfredError::DimensionMismatch(
            "base inverse and perturbed operator have different sizes".into(),
        ));
    }
    let p1_tilde = p1.p_tilde();
    let dim = p1_tilde.nrows();
    let id = DMatrix::<f64>::identity(dim, dim);
    let t = &id - &q0.q_tilde * &p1_tilde;
    let t_norm = spectral_norm(&t);
    if t_norm >= 1.0 {
        return Err(AfredError::NotContractive { t_norm });
    }
    let mut acc = q0.q_tilde.clone();
    let mut term = q0.q_tilde.clone();
    let mut terms = 1;
    loop {
        term = &t * &term;
        let step = spectral_norm(&term);
        if step < tol {
            break;
        }
        acc += &term;
        terms += 1;
        if terms >= max_terms {
            return Err(AfredError::NoConvergence {
                max_iter: max_terms,
                last_step: step,
            });
        }
    }
    let inverse = build_inverse(
        p1,
        acc,
        &p1_tilde,
        &p1.domain_weight.inv_sqrt(),
        &p1.target_weight.sqrt(),
    )?;
    Ok(NeumannInverse {
        inverse,
        t_norm,
        terms,
    })
}

/// One parameter row of the inverse-continuity audit.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuitySample {
    /// Parameter at which the pairs were drawn.
    pub eps: Vec<f64>,
    /// Largest observed `‖Q(γ₀') − Q(γ₀)‖` over the pairs.
    pub max_observed: f64,
    /// Largest ratio of observed difference to the certified bound.
    pub max_ratio: f64,
}

/// Report of the inverse-continuity audit.
#[derive(Debug, Clone, Serialize)]
pub struct StabilizationContinuityReport {
    /// Per-parameter worst cases.
    pub per_eps: Vec<ContinuitySample>,
    /// Largest bound ratio over all parameters.
    pub max_ratio: f64,
    /// Whether every observed difference stayed within the certified bound.
    pub pass: bool,
}

/// Audits `‖Q_ε(γ₀') − Q_ε(γ₀)‖ ≤ C_Q² · c¹_F(‖γ₀' − γ₀‖_ε)` on sampled
/// pairs of expansion points inside the certified ball.
pub fn stabilization_continuity_audit(
    fam: &AdiabaticFamily,
    kc: &KernelCokernel,
    constants: &FamilyConstants,
    delta_q: f64,
    eps_list: &[Vec<f64>],
    n_pairs: usize,
    seed: u64,
) -> Result<StabilizationContinuityReport> {
    let mut per_eps = Vec::with_capacity(eps_list.len());
    let mut max_ratio: f64 = 0.0;
    for (eidx, eps) in eps_list.iter().enumerate() {
        let weight = fam.gamma_norms().weight_at(eps);
        let points = halton_ball(
            weight.as_ref(),
            delta_q,
            2 * n_pairs,
            seed.wrapping_add(1000 + eidx as u64),
        );
        let mut max_observed: f64 = 0.0;
        let mut eps_ratio: f64 = 0.0;
        for pair in points.chunks_exact(2) {
            let (g0, g1) = (&pair[0], &pair[1]);
            if !fam.in_domain(g0) || !fam.in_domain(g1) {
                continue;
            }
            let st0 = assemble_stabilization(fam, kc, eps, g0, None, false)?;
            let st1 = assemble_stabilization(fam, kc, eps, g1, None, false)?;
            let q0 = invert_direct(&st0)?;
            let q1 = invert_direct(&st1)?;
            let observed = spectral_norm(&(&q1.q_tilde - &q0.q_tilde));
            let dist = fam.gamma_norms().norm(eps, &(g1 - g0));
            let bound = constants.cq * constants.cq * constants.modulus_c1f.eval(dist);
            max_observed = max_observed.max(observed);
            if bound > 1e-14 {
                eps_ratio = eps_ratio.max(observed / bound);
            } else if observed > 1e-12 {
                eps_ratio = f64::INFINITY;
            }
        }
        max_ratio = max_ratio.max(eps_ratio);
        per_eps.push(ContinuitySample {
            eps: eps.clone(),
            max_observed,
            max_ratio: eps_ratio,
        });
    }
    Ok(StabilizationContinuityReport {
        per_eps,
        max_ratio,
        pass: max_ratio <= 1.0 + 1e-3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        make_classical_parabola, make_discrete_strip, make_squared_map, make_toy_shrink,
        StripGrid,
    };
    use approx::assert_relative_eq;

    #[test]
    fn parabola_kernel_cokernel() {
        let fam = make_classical_parabola();
        let kc = kernel_cokernel(&fam, None).unwrap();
        assert_eq!(kc.dim_kernel(), 1);
        assert_eq!(kc.dim_cokernel(), 0);
        assert_eq!(kc.index(), -1);
        // Kernel of [0 1] is the x-axis.
        assert_relative_eq!(kc.kernel[0][0].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(kc.kernel[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn squared_map_kernel_is_everything() {
        let fam = make_squared_map();
        let kc = kernel_cokernel(&fam, None).unwrap();
        assert_eq!(kc.dim_kernel(), 2);
        assert_eq!(kc.dim_cokernel(), 2);
        assert_eq!(kc.index(), 0);
    }

    #[test]
    fn toy_shrink_kernel_and_cokernel_are_slow() {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        assert_eq!((kc.dim_kernel(), kc.dim_cokernel()), (1, 1));
        // DF_0(0) = [[0,0],[0,1]]: kernel and range complement both along the
        // slow axis.
        assert_relative_eq!(kc.kernel[0][0].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(kc.cokernel[0][0].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn broken_toy_cokernel_is_fast() {
        let fam = make_toy_shrink(0.01, true).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        assert_eq!((kc.dim_kernel(), kc.dim_cokernel()), (1, 1));
        assert_relative_eq!(kc.cokernel[0][1].abs(), 1.0, epsilon = 1e-12);
        // The fast complement direction carries the ε^{-1/2} blow-up the
        // complement-norm audit must catch: ratio 10 at ε = 0.01.
        let c = &kc.cokernel[0];
        let ratio = fam.omega_norms().norm(&[0.01, 0.0], c) / fam.omega_norms().norm_at_zero(c);
        assert_relative_eq!(ratio, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn strip_kernel_dimension_counts_boundary_intersection() {
        let fam = make_discrete_strip(StripGrid::default()).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        // t-constant fields valued in Λ0 ∩ Λ1 = span{e₁}: one per s-point.
        assert_eq!(kc.dim_kernel(), 4);
        assert_eq!(kc.dim_cokernel(), 4);
        assert_eq!(kc.index(), 0);
    }

    #[test]
    fn toy_stabilization_matches_hand_inverse() {
        // At ε = 0: P(t, (x,y)) = (x, (−t, y)) and Q(k, (u,v)) = (−u, (k, v)),
        // up to the sign of the computed basis vectors.
        let fam = make_toy_shrink(0.01, false).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let sk = kc.kernel[0][0]; // ±1
        let sc = kc.cokernel[0][0]; // ±1
        let zero = DVector::zeros(2);
        let st = assemble_stabilization(&fam, &kc, &[0.0, 0.0], &zero, None, false).unwrap();
        let q = invert_direct(&st).unwrap();
        // Apply P to (t, (x, y)) = (1, (2, 3)).
        let out = st.apply(&DVector::from_column_slice(&[1.0, 2.0, 3.0]));
        assert_relative_eq!(out[0], sk * 2.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], -sc * 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[2], 3.0, epsilon = 1e-12);
        // Apply Q to (k, (u, v)) = (1, (2, 3)).
        let back = q.apply(&DVector::from_column_slice(&[1.0, 2.0, 3.0]));
        assert_relative_eq!(back[0], -sc * 2.0, epsilon = 1e-12);
        assert_relative_eq!(back[1], sk * 1.0, epsilon = 1e-12);
        assert_relative_eq!(back[2], 3.0, epsilon = 1e-12);
        assert!(q.residual_qp < 1e-12 && q.residual_pq < 1e-12);
    }

    #[test]
    fn squared_map_stabilization_is_isometric() {
        // P(c, γ) = (γ, −c) up to basis signs: the inverse has norm exactly 1.
        let fam = make_squared_map();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let zero = DVector::zeros(2);
        let st = assemble_stabilization(&fam, &kc, &[], &zero, None, false).unwrap();
        let q = invert_direct(&st).unwrap();
        assert_relative_eq!(q.cq_observed, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strip_inverse_residuals_are_tiny() {
        let fam = make_discrete_strip(StripGrid::default()).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let zero = DVector::zeros(fam.n_domain());
        for eps in [[1.0], [0.25], [0.01]] {
            let st = assemble_stabilization(&fam, &kc, &eps, &zero, None, false).unwrap();
            let q = invert_direct(&st).unwrap();
            assert!(q.residual_qp < 1e-10, "residual {}", q.residual_qp);
            assert!(q.residual_pq < 1e-10, "residual {}", q.residual_pq);
        }
    }

    fn toy_stab_at(gamma: &[f64], eps: &[f64]) -> (Stabilization, InverseOperator) {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let g = DVector::from_column_slice(gamma);
        let st = assemble_stabilization(&fam, &kc, eps, &g, None, false).unwrap();
        let q = invert_direct(&st).unwrap();
        (st, q)
    }

    fn plain_stab(p: DMatrix<f64>) -> Stabilization {
        let n = p.nrows();
        Stabilization {
            eps: vec![],
            gamma0: DVector::zeros(0),
            dim_kernel: 1,
            dim_cokernel: 1,
            p_matrix: p,
            domain_weight: WeightMatrix::identity(n),
            target_weight: WeightMatrix::identity(n),
        }
    }

    #[test]
    fn neumann_nilpotent_case_terminates_in_two_terms() {
        let p0 = plain_stab(DMatrix::identity(2, 2));
        let q0 = invert_direct(&p0).unwrap();
        let p1 = plain_stab(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        let nm = invert_neumann(&q0, &p1, 50, 1e-12).unwrap();
        assert_eq!(nm.terms, 2);
        assert_relative_eq!(nm.t_norm, 0.1, epsilon = 1e-12);
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 0.0, 1.0]);
        assert!((nm.inverse.q_matrix.clone() - expect).amax() < 1e-12);
    }

    #[test]
    fn neumann_scalar_contraction_sums_geometric_series() {
        let p0 = plain_stab(DMatrix::identity(2, 2));
        let q0 = invert_direct(&p0).unwrap();
        let p1 = plain_stab(DMatrix::identity(2, 2) * 0.9);
        let nm = invert_neumann(&q0, &p1, 100, 1e-13).unwrap();
        assert!((nm.inverse.q_matrix[(0, 0)] - 1.0 / 0.9).abs() < 1e-12);
        assert!((nm.inverse.q_matrix[(0, 1)]).abs() < 1e-13);
    }

    #[test]
    fn neumann_rejects_non_contractive_perturbation() {
        let p0 = plain_stab(DMatrix::identity(2, 2));
        let q0 = invert_direct(&p0).unwrap();
        let p1 = plain_stab(DMatrix::zeros(2, 2));
        match invert_neumann(&q0, &p1, 50, 1e-12) {
            Err(AfredError::NotContractive { t_norm }) => {
                assert_relative_eq!(t_norm, 1.0, epsilon = 1e-12)
            }
            other => panic!("expected NotContractive, got {other:?}"),
        }
    }

    #[test]
    fn neumann_agrees_with_direct_inverse_on_toy_pair() {
        let (_, q0) = toy_stab_at(&[0.0, 0.0], &[0.25, 0.005]);
        let (st1, q1_direct) = toy_stab_at(&[0.02, 0.01], &[0.25, 0.005]);
        let nm = invert_neumann(&q0, &st1, 200, 1e-14).unwrap();
        let diff = spectral_norm(&(&nm.inverse.q_tilde - &q1_direct.q_tilde));
        assert!(diff < 1e-10, "difference {diff}");
        assert!(nm.t_norm < 0.5);
    }

    #[test]
    fn continuity_audit_passes_on_toy() {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let constants = fam.declared_constants().cloned().unwrap();
        let report = stabilization_continuity_audit(
            &fam,
            &kc,
            &constants,
            0.05,
            &[vec![0.0, 0.0], vec![0.3, 0.005]],
            20,
            7,
        )
        .unwrap();
        assert!(report.pass, "max ratio {}", report.max_ratio);
    }

    #[test]
    fn bounds_are_enforced_unless_overridden() {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let kc = kernel_cokernel(&fam, None).unwrap();
        let bounds = StabilizationBounds {
            delta_box: ParameterBox::new(vec![0.0, 0.0], vec![0.05, 0.01]).unwrap(),
            delta_q: 0.1,
        };
        let zero = DVector::zeros(2);
        let eps = [0.5, 0.005];
        let err =
            assemble_stabilization(&fam, &kc, &eps, &zero, Some(&bounds), false).unwrap_err();
        assert!(matches!(err, AfredError::OutOfDomain(_)));
        assert!(
            assemble_stabilization(&fam, &kc, &eps, &zero, Some(&bounds), true).is_ok()
        );
    }
}
