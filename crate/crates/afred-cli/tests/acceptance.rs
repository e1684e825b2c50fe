//! Acceptance suite: every numbered criterion runs as one test and prints a
//! single pass/fail line. The tests drive the public library surface (and,
//! for the determinism criterion, the installed binary) on the built-in
//! model families at the stated tolerances.

use afred_core::diagnostics::{dt_bound_audit, pipeline_for, pointwise_decay, verify_family};
use afred_core::family::{AdiabaticFamily, FamilySpec};
use afred_core::fredholm::{assemble_stabilization, invert_direct, invert_neumann, kernel_cokernel};
use afred_core::models::{
    make_classical_parabola, make_discrete_strip, make_squared_map, make_toy_shrink,
    strip_aux_forward, strip_aux_inverse, StripGrid,
};
use afred_core::reduction::{
    brute_force_zeros, find_reduced_zeros, reduce_point, regularity_profile, zero_equivalence,
};
use afred_core::sample::{halton_ball, halton_cube, halton_directions, SamplePlan};
use afred_core::solver::{sigma_continuity_audit, Pipeline};
use afred_core::spaces::{NormFamily, ParameterBox, TangentVector, WeightMatrix};
use afred_core::InverseOperator;
use nalgebra::{DMatrix, DVector};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Arc;

/// Runs one criterion body and prints exactly one verdict line.
fn gate<F>(name: &str, body: F)
where
    F: FnOnce() -> String,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) => println!("[PASS] {name}: {detail}"),
        Err(e) => {
            println!("[FAIL] {name}");
            resume_unwind(e);
        }
    }
}

/// The built-in families with declared constants.
fn declared_families() -> Vec<AdiabaticFamily> {
    vec![
        make_classical_parabola(),
        make_squared_map(),
        make_toy_shrink(0.01, false).unwrap(),
    ]
}

/// Certified pipelines for all four healthy families (strip constants are
/// estimated from samples).
fn certified_pipelines() -> Vec<Pipeline> {
    let mut out: Vec<Pipeline> = declared_families()
        .into_iter()
        .map(|f| Pipeline::from_declared(f, 0.5, None).unwrap())
        .collect();
    let strip = make_discrete_strip(StripGrid::default()).unwrap();
    let (pl, _) = pipeline_for(strip, &SamplePlan::quick(13), 0.5, None).unwrap();
    out.push(pl);
    out
}

/// Parameter points spread through a box.
fn box_points(bx: &ParameterBox, factors: &[f64]) -> Vec<Vec<f64>> {
    if bx.dim() == 0 {
        return vec![vec![]];
    }
    factors
        .iter()
        .map(|&t| bx.lerp(&vec![t; bx.dim()]))
        .collect()
}

#[test]
fn criterion_01_inverse_residuals() {
    gate("criterion-01 stabilized inverse residuals", || {
        let mut total = 0usize;
        let mut worst: f64 = 0.0;
        for pl in certified_pipelines() {
            let fam = pl.family();
            let kc = pl.kernel_cokernel();
            let bounds = pl.plan().bounds();
            let mut count = 0usize;
            let eps_pts = box_points(&pl.plan().delta_box, &[0.0, 0.25, 0.5, 0.75, 1.0]);
            let draws = 200usize.div_ceil(eps_pts.len());
            for eps in eps_pts {
                let wg = fam.gamma_norms().weight_at(&eps);
                let radius = 0.98 * bounds.delta_q.min(fam.domain_radius());
                for g0 in halton_ball(wg.as_ref(), radius, draws, 17) {
                    if !fam.in_domain(&g0) {
                        continue;
                    }
                    let st =
                        assemble_stabilization(fam, kc, &eps, &g0, Some(&bounds), false).unwrap();
                    let inv = invert_direct(&st).unwrap();
                    assert!(
                        inv.residual_qp <= 1e-10 && inv.residual_pq <= 1e-10,
                        "family {} at {:?}: residuals {:.3e}/{:.3e}",
                        fam.name(),
                        eps,
                        inv.residual_qp,
                        inv.residual_pq
                    );
                    worst = worst.max(inv.residual_qp).max(inv.residual_pq);
                    count += 1;
                }
            }
            assert!(count >= 200, "family {}: only {count} samples", fam.name());
            total += count;
        }
        format!("{total} inversions, worst residual {worst:.3e}")
    });
}

#[test]
fn criterion_02_neumann_matches_direct() {
    gate("criterion-02 parameter-step inverses via the identity-perturbation series", || {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let pl = Pipeline::from_declared(fam.clone(), 0.5, None).unwrap();
        let kc = pl.kernel_cokernel();
        let bx = &pl.plan().delta_box;
        let zero = DVector::zeros(fam.n_domain());
        let mut used = 0usize;
        let mut worst: f64 = 0.0;
        // Parameter pairs: a point and a 2% step inside the certified box.
        for u in halton_cube(2, 60, 23) {
            let e0 = bx.lerp(&u);
            let e1 = bx.lerp(&[(u[0] + 0.02).min(1.0), (u[1] + 0.02).min(1.0)]);
            let q0 = invert_direct(
                &assemble_stabilization(&fam, kc, &e0, &zero, None, true).unwrap(),
            )
            .unwrap();
            let p1 = assemble_stabilization(&fam, kc, &e1, &zero, None, true).unwrap();
            let nm = invert_neumann(&q0, &p1, 400, 1e-13).unwrap();
            if nm.t_norm <= 0.5 {
                let direct = invert_direct(&p1).unwrap();
                let gap = (&nm.inverse.q_tilde - &direct.q_tilde).norm();
                assert!(gap <= 1e-8, "parameter pair gap {gap:.3e}");
                worst = worst.max(gap);
                used += 1;
            }
        }
        // Expansion-point pairs at a fixed parameter.
        let eps = bx.lerp(&[0.5, 0.5]);
        let wg = fam.gamma_norms().weight_at(&eps);
        let delta_q = pl.plan().delta_q;
        for g0 in halton_ball(wg.as_ref(), 0.25 * delta_q, 60, 29) {
            let g1 = &g0 * 1.02;
            let q0 = invert_direct(
                &assemble_stabilization(&fam, kc, &eps, &g0, None, true).unwrap(),
            )
            .unwrap();
            let p1 = assemble_stabilization(&fam, kc, &eps, &g1, None, true).unwrap();
            let nm = invert_neumann(&q0, &p1, 400, 1e-13).unwrap();
            if nm.t_norm <= 0.5 {
                let direct = invert_direct(&p1).unwrap();
                let gap = (&nm.inverse.q_tilde - &direct.q_tilde).norm();
                assert!(gap <= 1e-8, "expansion pair gap {gap:.3e}");
                worst = worst.max(gap);
                used += 1;
            }
        }
        assert!(used >= 100, "only {used} pairs had a small perturbation norm");
        format!("{used} pairs, worst inverse gap {worst:.3e}")
    });
}

#[test]
fn criterion_03_toy_zero_bijection() {
    gate("criterion-03 zero-set bijection on the shrinking toy", || {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let pl = Pipeline::from_declared(fam, 0.5, Some(0.12)).unwrap();
        let kc = pl.kernel_cokernel();
        let mut checked = 0usize;
        let mut worst: f64 = 0.0;
        for e0 in [0.0, 0.1, 0.25] {
            for tau in [0.0025, 0.01] {
                let eps = vec![e0, tau];
                let reduced =
                    find_reduced_zeros(&pl, &eps, 48, 1e-12, 1e-6, 31).unwrap();
                let brute = brute_force_zeros(
                    pl.family(),
                    &eps,
                    pl.plan().delta_sigma,
                    96,
                    1e-12,
                    1e-6,
                    32,
                )
                .unwrap();
                let eq = zero_equivalence(&pl, &brute, &reduced, 1e-6);
                assert!(eq.pass, "eps {eps:?}: unmatched zeros");
                assert!(
                    eq.max_mismatch <= 1e-8,
                    "eps {eps:?}: mismatch {:.3e}",
                    eq.max_mismatch
                );
                assert_eq!(reduced.zeros.len(), 2, "eps {eps:?}");
                let expect = (tau / (1.0 + e0)).sqrt();
                for z in &reduced.zeros {
                    let x = kc.kernel_element(&z.k_coeffs)[0];
                    assert!(
                        (x.abs() - expect).abs() <= 1e-8,
                        "eps {eps:?}: zero at {x}, expected ±{expect}"
                    );
                    assert!((z.gamma[1] - e0 * z.gamma[0]).abs() <= 1e-8);
                    assert!(!z.degenerate);
                }
                worst = worst.max(eq.max_mismatch);
                checked += 1;
            }
        }
        format!("{checked} parameter points, worst matched-pair gap {worst:.3e}")
    });
}

#[test]
fn criterion_04_reduced_map_values() {
    gate("criterion-04 reduced-map values against closed forms", || {
        // Shrinking toy: f(k) = (1+ε)k² − τ on a 3 × 5 × 9 grid.
        let fam = make_toy_shrink(0.01, false).unwrap();
        let pl = Pipeline::from_declared(fam, 0.5, Some(0.12)).unwrap();
        let kc = pl.kernel_cokernel();
        let mut worst: f64 = 0.0;
        let mut count = 0usize;
        for e0 in [0.0, 0.1, 0.25] {
            for i in 0..5 {
                let tau = 0.002 + 0.008 * i as f64 / 4.0;
                for j in 0..9 {
                    let k = -0.1 + 0.2 * j as f64 / 8.0;
                    let eps = vec![e0, tau];
                    let kv = DVector::from_vec(vec![k]);
                    let p = reduce_point(&pl, &eps, &kv).unwrap();
                    let x = kc.kernel_element(&kv)[0];
                    let expect = (1.0 + e0) * x * x - tau;
                    let got = kc.cokernel_element(&p.f)[0];
                    let gap = (got - expect).abs();
                    assert!(gap <= 1e-8, "toy at ({e0},{tau},{k}): gap {gap:.3e}");
                    worst = worst.max(gap);
                    count += 1;
                }
            }
        }
        // Squared map: the reduction changes nothing, f = F exactly.
        let fam = make_squared_map();
        let pl = Pipeline::from_declared(fam, 0.5, None).unwrap();
        let kc = pl.kernel_cokernel();
        let r = 0.9 * pl.plan().r_k / 2f64.sqrt();
        for i in 0..5 {
            for j in 0..5 {
                let k = DVector::from_vec(vec![
                    -r + 2.0 * r * i as f64 / 4.0,
                    -r + 2.0 * r * j as f64 / 4.0,
                ]);
                let p = reduce_point(&pl, &[], &k).unwrap();
                let gamma = kc.kernel_element(&k);
                let f_direct = pl.family().evaluate(&[], &gamma).unwrap();
                let gap = (kc.cokernel_element(&p.f) - f_direct).norm();
                assert!(gap <= 1e-14, "squared map at {k:?}: gap {gap:.3e}");
                assert!((&p.gamma - &gamma).norm() <= 1e-14);
                worst = worst.max(gap);
                count += 1;
            }
        }
        format!("{count} grid points, worst closed-form gap {worst:.3e}")
    });
}

#[test]
fn criterion_05_solution_derivative_consistency() {
    gate("criterion-05 solution-map derivatives: two formulas and differences", || {
        let mut samples = 0usize;
        let mut worst: f64 = 0.0;
        for pl in certified_pipelines() {
            let dim_k = pl.kernel_cokernel().dim_kernel();
            if dim_k == 0 {
                continue;
            }
            let per_family = if pl.family().n_domain() > 4 { 12 } else { 34 };
            let eps_pts = box_points(&pl.plan().delta_box, &[0.25, 0.5, 1.0]);
            let id_k = WeightMatrix::identity(dim_k);
            let r_k = pl.plan().r_k;
            let h = (0.1 * r_k).min(1e-4);
            for (ei, eps) in eps_pts.iter().enumerate() {
                for k in halton_ball(&id_k, 0.8 * r_k, per_family, 41 + ei as u64) {
                    let s = pl.solve(eps, &k, 1e-12, 200).unwrap();
                    for d in 0..dim_k {
                        let mut dir = DVector::zeros(dim_k);
                        dir[d] = 1.0;
                        let ds = pl.d_sigma(&s, &dir).unwrap();
                        assert!(
                            ds.formula_gap <= 1e-8,
                            "family {}: formula gap {:.3e}",
                            pl.family().name(),
                            ds.formula_gap
                        );
                        let sp = pl.solve(eps, &(&k + &dir * h), 1e-12, 200).unwrap();
                        let sm = pl.solve(eps, &(&k - &dir * h), 1e-12, 200).unwrap();
                        let fd_c = (&sp.c_coeffs - &sm.c_coeffs) / (2.0 * h);
                        let fd_g = (&sp.gamma - &sm.gamma) / (2.0 * h);
                        let scale = ds.c_prime.norm() + ds.gamma_prime.norm();
                        let gap = (&fd_c - &ds.c_prime).norm() + (&fd_g - &ds.gamma_prime).norm();
                        let tol = 1e-8 + 1e-5 * scale;
                        assert!(
                            gap <= tol,
                            "family {}: derivative vs differences {gap:.3e} (tol {tol:.3e})",
                            pl.family().name()
                        );
                        worst = worst.max(gap);
                        samples += 1;
                    }
                }
            }
        }
        assert!(samples >= 300, "only {samples} derivative samples");
        format!("{samples} samples, worst difference gap {worst:.3e}")
    });
}

/// Reconstruction of the fixed-point map from public pieces: for a stacked
/// `w = (c, γ)` the next iterate is `Q_ε(0) · (k, DF_ε(0)γ − F_ε(γ))`.
fn b_map(
    pl: &Pipeline,
    q0: &InverseOperator,
    df0: &DMatrix<f64>,
    eps: &[f64],
    k: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    let fam = pl.family();
    let kc = pl.kernel_cokernel();
    let (n, m, dim_k, dim_c) = (
        fam.n_domain(),
        fam.n_target(),
        kc.dim_kernel(),
        kc.dim_cokernel(),
    );
    let gamma = w.rows(dim_c, n).into_owned();
    let val = df0 * &gamma - fam.evaluate(eps, &gamma).unwrap();
    let mut rhs = DVector::zeros(dim_k + m);
    rhs.rows_mut(0, dim_k).copy_from(k);
    rhs.rows_mut(dim_k, m).copy_from(&val);
    q0.apply(&rhs)
}

#[test]
fn criterion_06_contraction_and_smallness() {
    gate("criterion-06 contraction factor and first-step smallness", || {
        let theta = 0.5;
        let mut pair_count = 0usize;
        let mut worst_ratio: f64 = 0.0;
        for pl in certified_pipelines() {
            let fam = pl.family();
            let kc = pl.kernel_cokernel();
            let plan = pl.plan();
            let (n, dim_k, dim_c) = (fam.n_domain(), kc.dim_kernel(), kc.dim_cokernel());
            let zero_k = DVector::zeros(dim_k);
            for (ei, eps) in box_points(&plan.delta_box, &[0.3, 1.0]).iter().enumerate() {
                let q0 = pl.base_inverse(eps).unwrap();
                let df0 = fam.jacobian(eps, &DVector::zeros(n)).unwrap();
                let wg = fam.gamma_norms().weight_at(eps);
                let w_norm = |w: &DVector<f64>| {
                    w.rows(0, dim_c).norm() + wg.norm(&w.rows(dim_c, n).into_owned())
                };
                // Pairs inside the certified contraction ball.
                let r = 0.49 * plan.delta_theta;
                let gammas = halton_ball(wg.as_ref(), r, 1000, 47 + ei as u64);
                let cs = halton_directions(dim_c.max(1), 1000, 53 + ei as u64);
                let build = |i: usize| {
                    let mut w = DVector::zeros(dim_c + n);
                    if dim_c > 0 {
                        let scale = r * (i % 7) as f64 / 7.0;
                        w.rows_mut(0, dim_c).copy_from(&(&cs[i].rows(0, dim_c) * scale));
                    }
                    w.rows_mut(dim_c, n).copy_from(&gammas[i]);
                    w
                };
                for i in 0..500 {
                    let wa = build(2 * i);
                    let wb = build(2 * i + 1);
                    let d = w_norm(&(&wa - &wb));
                    if d < 1e-12 {
                        continue;
                    }
                    let ba = b_map(&pl, &q0, &df0, eps, &zero_k, &wa);
                    let bb = b_map(&pl, &q0, &df0, eps, &zero_k, &wb);
                    let ratio = w_norm(&(&ba - &bb)) / d;
                    assert!(
                        ratio <= theta + 1e-9,
                        "family {} at {eps:?}: contraction ratio {ratio:.6}",
                        fam.name()
                    );
                    worst_ratio = worst_ratio.max(ratio);
                    pair_count += 1;
                }
                // First-step smallness over sampled kernel coefficients.
                let id_k = WeightMatrix::identity(dim_k);
                for k in halton_ball(&id_k, 0.98 * plan.r_k, 50, 59) {
                    let b0 = b_map(&pl, &q0, &df0, eps, &k, &DVector::zeros(dim_c + n));
                    let norm = w_norm(&b0);
                    assert!(
                        norm <= (1.0 - theta) * plan.delta_sigma * (1.0 + 1e-9),
                        "family {} at {eps:?}: first step {norm:.6e} vs {:.6e}",
                        fam.name(),
                        (1.0 - theta) * plan.delta_sigma
                    );
                }
            }
        }
        assert!(pair_count >= 1000, "only {pair_count} pairs");
        format!("{pair_count} pairs, worst contraction ratio {worst_ratio:.4}")
    });
}

#[test]
fn criterion_07_solution_map_continuity() {
    gate("criterion-07 solution-map continuity bound", || {
        let mut worst: f64 = 0.0;
        for pl in certified_pipelines() {
            if pl.kernel_cokernel().dim_kernel() == 0 {
                continue;
            }
            let eps_list = box_points(&pl.plan().delta_box, &[0.25, 0.5, 1.0]);
            let report = sigma_continuity_audit(&pl, &eps_list, 100, 61).unwrap();
            assert!(
                report.pass && report.max_ratio <= 1.0 + 1e-9,
                "family {}: ratio {:.6}",
                pl.family().name(),
                report.max_ratio
            );
            worst = worst.max(report.max_ratio);
        }
        format!("worst bound ratio {worst:.4}")
    });
}

#[test]
fn criterion_08_definition_audits() {
    gate("criterion-08 defining-estimate audits on all models", || {
        let plan = SamplePlan::quick(11);
        for fam in [
            make_classical_parabola(),
            make_squared_map(),
            make_toy_shrink(0.01, false).unwrap(),
            make_discrete_strip(StripGrid::default()).unwrap(),
        ] {
            let report = verify_family(&fam, &plan).unwrap();
            assert_eq!(report.conditions.len(), 11, "family {}", report.family);
            assert!(
                report.pass,
                "family {} fails {:?}",
                report.family,
                report.failing()
            );
        }
        let broken = make_toy_shrink(0.01, true).unwrap();
        let mut plan = SamplePlan::quick(11);
        plan.extra_eps = vec![vec![0.01, 0.0025], vec![0.04, 0.0025]];
        let report = verify_family(&broken, &plan).unwrap();
        assert_eq!(
            report.failing(),
            vec!["cokernel_bound"],
            "broken family must fail exactly the complement-norm bound"
        );
        let cond = report.condition("cokernel_bound").unwrap();
        let at = |e: f64| {
            cond.per_eps
                .iter()
                .find(|r| (r.eps[0] - e).abs() < 1e-12)
                .map(|r| r.value)
                .unwrap()
        };
        let (r1, r4) = (at(0.01), at(0.04));
        assert!((r1 - 10.0).abs() <= 0.1, "ratio at 0.01: {r1}");
        assert!((r4 - 5.0).abs() <= 0.05, "ratio at 0.04: {r4}");
        format!(
            "four families pass 11/11; broken variant fails only cokernel_bound \
             (ratios {r1:.3} and {r4:.3})"
        )
    });
}

#[test]
fn criterion_09_strip_structure() {
    gate("criterion-09 strip auxiliary isomorphism and norm bounds", || {
        let mut worst_iso: f64 = 0.0;
        for (n_s, n_t) in [(4, 2), (5, 3), (8, 4)] {
            let grid = StripGrid::with_size(n_s, n_t);
            let n_eta = n_s * grid.d * n_t;
            let n_lambda = n_s * grid.lambda0.ncols();
            let etas = halton_directions(n_eta, 100, 67);
            let lambdas = halton_directions(n_lambda, 100, 71);
            for (eta, lambda) in etas.iter().zip(&lambdas) {
                let xi = strip_aux_inverse(&grid, eta, lambda).unwrap();
                let (eta2, lambda2) = strip_aux_forward(&grid, &xi).unwrap();
                let err = (&eta2 - eta).norm().max((&lambda2 - lambda).norm());
                let xi2 = strip_aux_inverse(&grid, &eta2, &lambda2).unwrap();
                let err = err.max((&xi2 - &xi).norm());
                assert!(err <= 1e-12, "grid {n_s}×{n_t}: identity error {err:.3e}");
                worst_iso = worst_iso.max(err);
            }
        }
        let fam = make_discrete_strip(StripGrid::default()).unwrap();
        let declared = fam
            .gamma_norms()
            .lower_bound_constant()
            .max(fam.omega_norms().lower_bound_constant());
        let mut worst_ratio: f64 = 0.0;
        for eps in [1.0, 0.25, 0.0625] {
            let wg = fam.gamma_norms().weight_at(&[eps]);
            let wo = fam.omega_norms().weight_at(&[eps]);
            let wg0 = fam.gamma_norms().weight_at_zero();
            let wo0 = fam.omega_norms().weight_at_zero();
            for v in halton_directions(fam.n_domain(), 200, 73) {
                worst_ratio = worst_ratio.max(wg0.norm(&v) / wg.norm(&v));
            }
            for v in halton_directions(fam.n_target(), 200, 79) {
                worst_ratio = worst_ratio.max(wo0.norm(&v) / wo.norm(&v));
            }
        }
        assert!(
            worst_ratio <= declared * (1.0 + 1e-9),
            "lower-bound ratio {worst_ratio} vs declared {declared}"
        );
        format!(
            "identities to {worst_iso:.3e} on 300 draws; norm ratio {worst_ratio:.6} ≤ {declared}"
        )
    });
}

/// Identity-normed parameter-free family from closures, for the chain-rule
/// criterion.
fn plain_family(
    name: &str,
    dim: usize,
    order: u32,
    eval: Arc<dyn Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync>,
    diff: Option<
        Arc<dyn Fn(&[f64], &DVector<f64>, &[DVector<f64>]) -> DVector<f64> + Send + Sync>,
    >,
) -> AdiabaticFamily {
    let norms = || {
        NormFamily::new(
            dim,
            vec![],
            WeightMatrix::identity(dim),
            1.0,
            Arc::new(move |_: &[f64]| WeightMatrix::identity(dim)),
        )
        .unwrap()
    };
    AdiabaticFamily::new(FamilySpec {
        name: name.into(),
        n_domain: dim,
        n_target: dim,
        delta: ParameterBox::new(vec![], vec![]).unwrap(),
        domain_radius: 4.0,
        gamma_norms: norms(),
        omega_norms: norms(),
        eval,
        diff,
        max_analytic_order: order,
        declared_constants: None,
        declared_index: 0,
    })
    .unwrap()
}

#[test]
fn criterion_10_tangent_functoriality() {
    gate("criterion-10 second tangent maps compose", || {
        // g has genuine third derivatives so the difference fallback in the
        // composed family is actually exercised (and stays non-circular: the
        // composition only declares its first derivative).
        let g_eval = |v: &DVector<f64>| {
            DVector::from_vec(vec![
                v[0] + 0.3 * v[1] * v[1] + 0.02 * v[0] * v[0] * v[0],
                v[1] - 0.2 * v[0] * v[1],
            ])
        };
        let g_d1 = |v: &DVector<f64>, u: &DVector<f64>| {
            DVector::from_vec(vec![
                u[0] * (1.0 + 0.06 * v[0] * v[0]) + 0.6 * v[1] * u[1],
                -0.2 * v[1] * u[0] + (1.0 - 0.2 * v[0]) * u[1],
            ])
        };
        let g_d2 = |v: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>| {
            DVector::from_vec(vec![
                0.12 * v[0] * u[0] * w[0] + 0.6 * u[1] * w[1],
                -0.2 * (u[0] * w[1] + u[1] * w[0]),
            ])
        };
        let f_eval = |v: &DVector<f64>| {
            DVector::from_vec(vec![
                v[0] * v[1] + 0.1 * v[0] * v[0],
                v[0] - 0.25 * v[1] * v[1] + 0.02 * v[1] * v[1] * v[1],
            ])
        };
        let f_d1 = |v: &DVector<f64>, u: &DVector<f64>| {
            DVector::from_vec(vec![
                v[1] * u[0] + v[0] * u[1] + 0.2 * v[0] * u[0],
                u[0] + (-0.5 * v[1] + 0.06 * v[1] * v[1]) * u[1],
            ])
        };
        let f_d2 = |v: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>| {
            DVector::from_vec(vec![
                u[0] * w[1] + u[1] * w[0] + 0.2 * u[0] * w[0],
                (-0.5 + 0.12 * v[1]) * u[1] * w[1],
            ])
        };
        let analytic =
            move |d1: fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
                  d2: fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>| {
                Arc::new(move |_: &[f64], v: &DVector<f64>, dirs: &[DVector<f64>]| {
                    match dirs.len() {
                        1 => d1(v, &dirs[0]),
                        2 => d2(v, &dirs[0], &dirs[1]),
                        _ => unreachable!("analytic derivatives stop at order 2"),
                    }
                })
            };
        let g_fam = plain_family(
            "g",
            2,
            2,
            Arc::new(move |_: &[f64], v: &DVector<f64>| g_eval(v)),
            Some(analytic(g_d1, g_d2)),
        );
        let f_fam = plain_family(
            "f",
            2,
            2,
            Arc::new(move |_: &[f64], v: &DVector<f64>| f_eval(v)),
            Some(analytic(f_d1, f_d2)),
        );
        // The composition declares only the chain-rule first derivative; its
        // second derivative comes from central differences inside the
        // library, which is the non-circular reference.
        let comp = plain_family(
            "f∘g",
            2,
            1,
            Arc::new(move |_: &[f64], v: &DVector<f64>| f_eval(&g_eval(v))),
            Some(Arc::new(move |_: &[f64], v: &DVector<f64>, dirs: &[DVector<f64>]| {
                f_d1(&g_eval(v), &g_d1(v, &dirs[0]))
            })),
        );
        let mut worst: f64 = 0.0;
        for (i, base) in halton_directions(2, 12, 83).into_iter().enumerate() {
            let dirs = halton_directions(2, 3, 89 + i as u64);
            let tv = TangentVector::new(
                2,
                vec![base * 0.5, dirs[0].clone(), dirs[1].clone(), dirs[2].clone()],
            )
            .unwrap();
            let lhs = comp.tangent_map(&[], 2, &tv).unwrap();
            let mid = g_fam.tangent_map(&[], 2, &tv).unwrap();
            let rhs = f_fam.tangent_map(&[], 2, &mid).unwrap();
            let gap: f64 = lhs
                .entries()
                .iter()
                .zip(rhs.entries())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(gap <= 1e-9, "composition gap {gap:.3e}");
            worst = worst.max(gap);
            // Last-entry identity on the outer family.
            let lift = f_fam.tangent_map(&[], 2, &tv).unwrap();
            let v = tv.entries();
            let direct = f_fam
                .differential(&[], &v[0], &[v[1].clone(), v[2].clone()])
                .unwrap()
                + f_fam.differential(&[], &v[0], &[v[3].clone()]).unwrap();
            assert!((&lift.entries()[3] - &direct).norm() <= 1e-12);
        }
        // Lift norms stay controlled by the derivative budget.
        let toy = make_toy_shrink(0.01, false).unwrap();
        for level in [1, 2] {
            let audit = dt_bound_audit(&toy, level, &SamplePlan::quick(7)).unwrap();
            assert!(audit.pass && audit.samples > 0);
        }
        format!("12 tangent vectors, worst composition gap {worst:.3e}")
    });
}

#[test]
fn criterion_11_adiabatic_decay() {
    gate("criterion-11 parameter-term decay along shrinking paths", || {
        // Reduced-map derivatives converge along the toy's shrinking path.
        let fam = make_toy_shrink(0.01, false).unwrap();
        let pl = Pipeline::from_declared(fam, 0.5, Some(0.02)).unwrap();
        let path: Vec<Vec<f64>> = [0.2, 0.1, 0.05, 0.025, 1e-8, 0.0]
            .iter()
            .map(|&e| vec![e, 0.01])
            .collect();
        let k_grid: Vec<DVector<f64>> = (0..9)
            .map(|i| DVector::from_vec(vec![-0.012 + 0.024 * i as f64 / 8.0]))
            .collect();
        let profile = regularity_profile(&pl, &path, &k_grid, 1, 1e-9).unwrap();
        assert!(
            profile.pass && profile.monotone.iter().all(|&m| m),
            "profile rows {:?}",
            profile.rows
        );
        for (order, fin) in profile.final_diff.iter().enumerate() {
            assert!(*fin <= 1e-9, "order {order}: final difference {fin:.3e}");
        }
        // Strip: the parameter term decays on base-kernel fields and grows
        // on a generic control field.
        let strip = make_discrete_strip(StripGrid::default()).unwrap();
        let kc = kernel_cokernel(&strip, None).unwrap();
        let path: Vec<Vec<f64>> = [1.0, 0.25, 0.0625, 0.015625, 0.00390625]
            .iter()
            .map(|&e| vec![e])
            .collect();
        assert!(!kc.kernel.is_empty());
        for k in &kc.kernel {
            let vals = pointwise_decay(&strip, k, &path).unwrap();
            assert!(
                vals.last().unwrap() <= &(0.5 * vals[0]),
                "kernel path did not decay: {vals:?}"
            );
        }
        let control = &halton_directions(strip.n_domain(), 1, 97)[0];
        let vals = pointwise_decay(&strip, control, &path).unwrap();
        assert!(
            vals.last().unwrap() >= &(2.0 * vals[0]),
            "control path unexpectedly decayed: {vals:?}"
        );
        format!(
            "toy derivative profile monotone to ≤ 1e-9; strip kernel fields decay, control grows"
        )
    });
}

#[test]
fn criterion_12_cli_determinism() {
    gate("criterion-12 byte-identical reports across runs", || {
        let bin = env!("CARGO_BIN_EXE_afred");
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            let run = std::process::Command::new(bin)
                .args([
                    "reduce",
                    "--family",
                    "toy-shrink",
                    "--quick",
                    "--seed",
                    "7",
                    "--out",
                ])
                .arg(out)
                .output()
                .unwrap();
            assert!(
                run.status.success(),
                "reduce run failed: {}",
                String::from_utf8_lossy(&run.stderr)
            );
        }
        let ra = std::fs::read(a.join("report.json")).unwrap();
        let rb = std::fs::read(b.join("report.json")).unwrap();
        assert!(!ra.is_empty() && ra == rb, "report.json differs between runs");
        let ca = std::fs::read(a.join("grid.csv")).unwrap();
        let cb = std::fs::read(b.join("grid.csv")).unwrap();
        assert!(!ca.is_empty() && ca == cb, "grid.csv differs between runs");
        // The broken family exits with the audit-failure code and a marker.
        let out_c = dir.path().join("c");
        let run = std::process::Command::new(bin)
            .args(["verify", "--family", "toy-shrink-broken", "--quick", "--out"])
            .arg(&out_c)
            .output()
            .unwrap();
        assert_eq!(run.status.code(), Some(1), "broken verify should exit 1");
        assert!(out_c.join("FAILED").exists());
        format!(
            "report.json and grid.csv byte-identical ({} and {} bytes); audit failure exits 1",
            ra.len(),
            ca.len()
        )
    });
}
