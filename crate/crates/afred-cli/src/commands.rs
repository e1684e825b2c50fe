//! Implementations of the five subcommands.

use crate::{
    parse_eps, parse_k_grid, verdict, write_reports, ProfileArgs, ReduceArgs, Settings,
    StripCheckArgs, VerifyArgs, ZerosArgs,
};
use afred_core::diagnostics::{
    adiabatic_regularity_audit, dt_bound_audit, pipeline_for, verify_family, PerEpsValue,
};
use afred_core::fredholm::kernel_cokernel;
use afred_core::models::{model_by_name, strip_aux_forward, strip_aux_inverse, StripGrid};
use afred_core::reduction::{
    brute_force_zeros, find_reduced_zeros, reduce_grid, regularity_profile, zero_equivalence,
};
use afred_core::report::{
    grid_csv, BruteZeroRow, IsoCheckRow, ProfileReport, ReduceReport, ReducedZeroRow, RunMeta,
    StripCheckReport, VerifyReport, ZerosReport,
};
use afred_core::sample::halton_directions;
use afred_core::solver::Pipeline;
use anyhow::{bail, Context};
use nalgebra::DVector;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Hard cap on tensor-product grid sizes.
const MAX_GRID_POINTS: usize = 20_000;

fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn meta(settings: &Settings, command: &str, started: u128, t0: Instant) -> RunMeta {
    RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        family: settings.family.clone(),
        seed: settings.seed,
        started_unix_ms: started,
        duration_ms: t0.elapsed().as_millis(),
    }
}

/// Writes the failure marker and error line when a command cannot complete.
fn abort_failed(settings: &Settings, what: &str, err: &afred_core::AfredError) -> anyhow::Result<i32> {
    verdict(false, what, &err.to_string());
    std::fs::create_dir_all(&settings.out)
        .with_context(|| format!("creating output directory {}", settings.out.display()))?;
    std::fs::write(
        settings.out.join("FAILED"),
        format!("{what}: {err}\n"),
    )?;
    Ok(1)
}

/// Default parameter list: the plan's certified box scaled by the given
/// factors (a widened plan covers the full family box).
fn scaled_eps_list(bx: &afred_core::ParameterBox, factors: &[f64]) -> Vec<Vec<f64>> {
    let dim = bx.dim();
    if dim == 0 {
        return vec![vec![]];
    }
    factors.iter().map(|&t| bx.lerp(&vec![t; dim])).collect()
}

/// Tensor-product kernel grid: `count` points from `min` to `max` in each of
/// `dim` coordinates.
fn tensor_grid(min: f64, max: f64, count: usize, dim: usize) -> anyhow::Result<Vec<DVector<f64>>> {
    if dim == 0 {
        return Ok(vec![DVector::zeros(0)]);
    }
    let total = count.checked_pow(dim as u32).unwrap_or(usize::MAX);
    if total > MAX_GRID_POINTS {
        bail!("kernel grid would have {total} points (cap {MAX_GRID_POINTS}); lower the count");
    }
    let axis: Vec<f64> = (0..count)
        .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
        .collect();
    let mut grid = vec![Vec::<f64>::new()];
    for _ in 0..dim {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    Ok(grid.into_iter().map(DVector::from_vec).collect())
}

/// Validates user parameter points against the plan's certified box,
/// falling back to scaled defaults when none are given.
fn validated_eps(
    pipeline: &Pipeline,
    texts: &[String],
    default_factors: &[f64],
) -> anyhow::Result<Vec<Vec<f64>>> {
    let bx = &pipeline.plan().delta_box;
    if texts.is_empty() {
        return Ok(scaled_eps_list(bx, default_factors));
    }
    let dim = bx.dim();
    let mut out = Vec::with_capacity(texts.len());
    for t in texts {
        let eps = parse_eps(t, dim)?;
        if !bx.contains(&eps) {
            if pipeline.family().delta().contains(&eps) {
                bail!(
                    "parameter point '{t}' lies outside the certified inverse box \
                     (highs {:?}); pass --widen to cover the full family box",
                    bx.highs()
                );
            }
            bail!("parameter point '{t}' lies outside the family's box");
        }
        out.push(eps);
    }
    Ok(out)
}

/// `verify`: run every defining-estimate audit and the regularity audits.
pub fn verify(args: &VerifyArgs) -> anyhow::Result<i32> {
    if args.level == 0 || args.level > 2 {
        bail!("--level must be 1 or 2");
    }
    let settings = Settings::resolve(&args.common)?;
    settings.init_workers();
    let started = now_unix_ms();
    let t0 = Instant::now();
    let fam = settings.family()?;
    let plan = settings.plan();

    let definition = match verify_family(&fam, &plan) {
        Ok(d) => d,
        Err(e) => return abort_failed(&settings, "verify", &e),
    };
    let (pipeline, provenance) = match pipeline_for(fam.clone(), &plan, settings.theta, None) {
        Ok(p) => p,
        Err(e) => return abort_failed(&settings, "verify (radius plan)", &e),
    };
    let regularity = match adiabatic_regularity_audit(&fam, &plan) {
        Ok(r) => r,
        Err(e) => return abort_failed(&settings, "verify (regularity)", &e),
    };
    let mut dt_bounds = Vec::new();
    for level in 1..=args.level {
        match dt_bound_audit(&fam, level, &plan) {
            Ok(a) => dt_bounds.push(a),
            Err(e) => return abort_failed(&settings, "verify (tangent bound)", &e),
        }
    }

    for c in &definition.conditions {
        let declared = c
            .declared
            .map(|d| format!(", declared {d:.6e}"))
            .unwrap_or_default();
        verdict(
            c.pass,
            &c.name,
            &format!("empirical {:.6e}{declared}", c.empirical),
        );
    }
    verdict(
        regularity.pass,
        "adiabatic_regularity",
        &format!(
            "derivative moduli {:.3e} / {:.3e}, {} decay paths",
            regularity.c1f_max,
            regularity.c2f_max,
            regularity.decay.len()
        ),
    );
    for a in &dt_bounds {
        verdict(
            a.pass,
            &format!("tangent_bound_level_{}", a.level),
            &format!("observed constant {:.6e} over {} samples", a.c_t_observed, a.samples),
        );
    }

    let pass = definition.pass && regularity.pass && dt_bounds.iter().all(|a| a.pass);
    let mut failures: Vec<String> = definition.failing().iter().map(|s| s.to_string()).collect();
    if !regularity.pass {
        failures.push("adiabatic_regularity".into());
    }
    failures.extend(
        dt_bounds
            .iter()
            .filter(|a| !a.pass)
            .map(|a| format!("tangent_bound_level_{}", a.level)),
    );
    let report = VerifyReport {
        family: settings.family.clone(),
        pass,
        provenance,
        constants: pipeline.plan().into(),
        definition,
        regularity: Some(regularity),
        dt_bounds,
    };
    write_reports(
        &settings.out,
        &report,
        &meta(&settings, "verify", started, t0),
        pass,
        &failures,
    )?;
    verdict(pass, "verify", &format!("family {}", settings.family));
    Ok(if pass { 0 } else { 1 })
}

fn build_pipeline(settings: &Settings) -> anyhow::Result<(Pipeline, afred_core::solver::ConstantsProvenance)> {
    let fam = settings.family()?;
    Ok(pipeline_for(fam, &settings.plan(), settings.theta, settings.widen)?)
}

/// `reduce`: solve the reduced map on a parameter × kernel grid.
pub fn reduce(args: &ReduceArgs) -> anyhow::Result<i32> {
    let settings = Settings::resolve(&args.common)?;
    settings.init_workers();
    let started = now_unix_ms();
    let t0 = Instant::now();
    let (pipeline, _) = build_pipeline(&settings)?;
    let fam = pipeline.family();
    let kc = pipeline.kernel_cokernel();
    let (dim_eps, dim_k, dim_c) = (fam.delta().dim(), kc.dim_kernel(), kc.dim_cokernel());
    let r_k = pipeline.plan().r_k;

    let eps_list = validated_eps(&pipeline, &args.eps, &[1.0, 0.5, 0.25])?;
    // Grid bounds are per component; the corner of a dim_k-cube reaches
    // √dim_k times further in the ball norm.
    let corner = (dim_k as f64).sqrt().max(1.0);
    let (min, max, count) = match &args.k_grid {
        Some(spec) => {
            let parsed = parse_k_grid(spec)?;
            if parsed.0.abs().max(parsed.1.abs()) * corner > r_k * (1.0 + 1e-12) {
                bail!(
                    "kernel grid [{}, {}] reaches norm {:.6e} at a corner, beyond the \
                     certified kernel radius {r_k:.6e}; shrink the grid or pass --widen",
                    parsed.0,
                    parsed.1,
                    parsed.0.abs().max(parsed.1.abs()) * corner
                );
            }
            parsed
        }
        None => (-0.9 * r_k / corner, 0.9 * r_k / corner, 5),
    };
    let k_grid = tensor_grid(min, max, count, dim_k)?;

    let points = match reduce_grid(&pipeline, &eps_list, &k_grid) {
        Ok(p) => p,
        Err(e) => return abort_failed(&settings, "reduce", &e),
    };
    let report = ReduceReport::from_points(
        settings.family.clone(),
        pipeline.plan(),
        &points,
        eps_list.len(),
        k_grid.len(),
        settings.tol,
    );
    std::fs::create_dir_all(&settings.out)?;
    std::fs::write(
        settings.out.join("grid.csv"),
        grid_csv(&points, dim_eps, dim_k, dim_c),
    )?;
    verdict(
        report.pass,
        "reduce",
        &format!(
            "{} points, max residual {:.3e}, max iterations {}",
            report.rows.len(),
            report.max_residual,
            report.max_iterations
        ),
    );
    let pass = report.pass;
    write_reports(
        &settings.out,
        &report,
        &meta(&settings, "reduce", started, t0),
        pass,
        &["reduce: residuals above tolerance".into()],
    )?;
    Ok(if pass { 0 } else { 1 })
}

/// `zeros`: reduced zero set cross-checked against brute force.
pub fn zeros(args: &ZerosArgs) -> anyhow::Result<i32> {
    let settings = Settings::resolve(&args.common)?;
    settings.init_workers();
    let started = now_unix_ms();
    let t0 = Instant::now();
    let (pipeline, _) = build_pipeline(&settings)?;
    let eps = match &args.eps {
        Some(text) => validated_eps(&pipeline, std::slice::from_ref(text), &[])?.remove(0),
        None => scaled_eps_list(&pipeline.plan().delta_box, &[0.5]).remove(0),
    };

    let reduced = match find_reduced_zeros(
        &pipeline,
        &eps,
        args.n_seeds,
        settings.zero_tol,
        settings.match_tol,
        settings.seed,
    ) {
        Ok(r) => r,
        Err(e) => return abort_failed(&settings, "zeros (reduced)", &e),
    };
    let ball = pipeline.plan().delta_sigma;
    let brute = match brute_force_zeros(
        pipeline.family(),
        &eps,
        ball,
        2 * args.n_seeds,
        settings.zero_tol,
        settings.match_tol,
        settings.seed.wrapping_add(1),
    ) {
        Ok(b) => b,
        Err(e) => return abort_failed(&settings, "zeros (brute force)", &e),
    };

    let equivalence = if reduced.positive_dimensional {
        None
    } else {
        // Same effective radius the finders use for clustering: a zero of
        // multiplicity > 1 is only localizable to ~√zero_tol.
        let eff_match = settings.match_tol.max(10.0 * settings.zero_tol.sqrt());
        Some(zero_equivalence(&pipeline, &brute, &reduced, eff_match))
    };
    let pass = equivalence.as_ref().map(|e| e.pass).unwrap_or(true);
    let detail = match &equivalence {
        Some(e) => format!(
            "{} reduced, {} brute, {} matched, worst mismatch {:.3e}",
            reduced.zeros.len(),
            brute.len(),
            e.pairs.len(),
            e.max_mismatch
        ),
        None => "reduced zero set is positive-dimensional; no matching attempted".into(),
    };
    verdict(pass, "zeros", &detail);

    let report = ZerosReport {
        family: settings.family.clone(),
        eps,
        r_k: pipeline.plan().r_k,
        positive_dimensional: reduced.positive_dimensional,
        gauss_newton: reduced.gauss_newton,
        reduced: reduced.zeros.iter().map(ReducedZeroRow::from).collect(),
        brute: brute.iter().map(BruteZeroRow::from).collect(),
        equivalence,
        pass,
    };
    write_reports(
        &settings.out,
        &report,
        &meta(&settings, "zeros", started, t0),
        pass,
        &["zeros: reduced and brute-force zero sets disagree".into()],
    )?;
    Ok(if pass { 0 } else { 1 })
}

/// `profile`: reduced-derivative convergence along a parameter path.
pub fn profile(args: &ProfileArgs) -> anyhow::Result<i32> {
    if args.order > 2 {
        bail!("--order must be 0, 1, or 2");
    }
    let settings = Settings::resolve(&args.common)?;
    settings.init_workers();
    let started = now_unix_ms();
    let t0 = Instant::now();
    let (pipeline, _) = build_pipeline(&settings)?;
    let fam = pipeline.family();

    let path: Vec<Vec<f64>> = match &args.eps_path {
        Some(text) => {
            let pieces: Vec<String> = text
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.to_string())
                .collect();
            if pieces.len() < 2 && fam.delta().dim() > 0 {
                bail!("--eps-path needs at least two points; the last is the reference");
            }
            validated_eps(&pipeline, &pieces, &[])?
        }
        // The default path halves its way down, then takes a near-limit
        // approach point so the final difference truly measures convergence
        // (the last point is the reference itself).
        None => scaled_eps_list(
            &pipeline.plan().delta_box,
            &[1.0, 0.5, 0.25, 0.125, 1e-10, 0.0],
        ),
    };
    let r_k = pipeline.plan().r_k;
    let dim_k = pipeline.kernel_cokernel().dim_kernel();
    let corner = (dim_k as f64).sqrt().max(1.0);
    // Points per axis chosen so the tensor grid stays near 81 points total —
    // each point costs O(dim_k²) tangent solves at order 2.
    let per_axis = match dim_k {
        0 | 1 => 9,
        d => (81f64.powf(1.0 / d as f64).floor() as usize).clamp(2, 9),
    };
    let k_grid = tensor_grid(-0.9 * r_k / corner, 0.9 * r_k / corner, per_axis, dim_k)?;

    let profile = match regularity_profile(&pipeline, &path, &k_grid, args.order, args.profile_tol)
    {
        Ok(p) => p,
        Err(e) => return abort_failed(&settings, "profile", &e),
    };
    for (order, (final_diff, monotone)) in profile
        .final_diff
        .iter()
        .zip(&profile.monotone)
        .enumerate()
    {
        verdict(
            *monotone && *final_diff <= args.profile_tol,
            &format!("profile_order_{order}"),
            &format!("final sup-difference {final_diff:.3e}, monotone {monotone}"),
        );
    }
    let pass = profile.pass;
    let report = ProfileReport {
        family: settings.family.clone(),
        plan: pipeline.plan().into(),
        profile,
        pass,
    };
    write_reports(
        &settings.out,
        &report,
        &meta(&settings, "profile", started, t0),
        pass,
        &["profile: derivative convergence failed".into()],
    )?;
    verdict(pass, "profile", &format!("family {}", settings.family));
    Ok(if pass { 0 } else { 1 })
}

/// `strip-check`: structural identities of the discrete strip model.
pub fn strip_check(args: &StripCheckArgs) -> anyhow::Result<i32> {
    let settings = Settings::resolve(&args.common)?;
    settings.init_workers();
    if settings.family != "toy-shrink" && settings.family != "discrete-strip" {
        bail!("strip-check always runs on the discrete strip; drop --family");
    }
    let started = now_unix_ms();
    let t0 = Instant::now();
    let base = StripGrid::with_size(settings.grid_ns, settings.grid_nt);
    let fam = model_by_name("discrete-strip", settings.tau, Some(base.clone()))?;

    // Isomorphism identities across a spread of grid sizes.
    let mut iso_checks = Vec::new();
    let mut iso_pass = true;
    let mut sizes = vec![(base.n_s, base.n_t), (5, 3), (8, 4)];
    sizes.dedup();
    for (n_s, n_t) in sizes {
        let grid = StripGrid::with_size(n_s, n_t);
        let n_eta = grid.n_s * grid.d * grid.n_t;
        let n_lambda = grid.n_s * grid.lambda0.ncols();
        let etas = halton_directions(n_eta, args.draws, settings.seed.wrapping_add(61));
        let lambdas = halton_directions(n_lambda, args.draws, settings.seed.wrapping_add(62));
        let mut fwd_err: f64 = 0.0;
        let mut inv_err: f64 = 0.0;
        for (eta, lambda) in etas.iter().zip(&lambdas) {
            let xi = match strip_aux_inverse(&grid, eta, lambda) {
                Ok(x) => x,
                Err(e) => return abort_failed(&settings, "strip-check", &e),
            };
            let (eta2, lambda2) = match strip_aux_forward(&grid, &xi) {
                Ok(p) => p,
                Err(e) => return abort_failed(&settings, "strip-check", &e),
            };
            fwd_err = fwd_err.max((&eta2 - eta).norm()).max((&lambda2 - lambda).norm());
            let xi2 = match strip_aux_inverse(&grid, &eta2, &lambda2) {
                Ok(x) => x,
                Err(e) => return abort_failed(&settings, "strip-check", &e),
            };
            inv_err = inv_err.max((xi2 - &xi).norm());
        }
        iso_pass &= fwd_err <= 1e-10 && inv_err <= 1e-10;
        verdict(
            fwd_err <= 1e-10 && inv_err <= 1e-10,
            "strip_iso",
            &format!("grid {n_s}×{n_t}: forward∘inverse {fwd_err:.3e}, inverse∘forward {inv_err:.3e}"),
        );
        iso_checks.push(IsoCheckRow {
            n_s,
            n_t,
            forward_inverse_error: fwd_err,
            inverse_forward_error: inv_err,
        });
    }

    // Base-norm lower bound at a spread of parameters.
    let mut lower_bound_ratios = Vec::new();
    let mut lb_pass = true;
    for eps in [1.0, 0.25, 0.0625] {
        let wg = fam.gamma_norms().weight_at(&[eps]);
        let wo = fam.omega_norms().weight_at(&[eps]);
        let wg0 = fam.gamma_norms().weight_at_zero();
        let wo0 = fam.omega_norms().weight_at_zero();
        let mut ratio: f64 = 0.0;
        for v in halton_directions(fam.n_domain(), 64, settings.seed.wrapping_add(63)) {
            ratio = ratio.max(wg0.norm(&v) / wg.norm(&v));
        }
        for v in halton_directions(fam.n_target(), 64, settings.seed.wrapping_add(64)) {
            ratio = ratio.max(wo0.norm(&v) / wo.norm(&v));
        }
        lb_pass &= ratio <= 1.0 + 1e-9;
        verdict(
            ratio <= 1.0 + 1e-9,
            "strip_lower_bound",
            &format!("eps {eps}: max ‖v‖₀/‖v‖_ε = {ratio:.12}"),
        );
        lower_bound_ratios.push(PerEpsValue {
            eps: vec![eps],
            value: ratio,
        });
    }

    let kc = match kernel_cokernel(&fam, None) {
        Ok(k) => k,
        Err(e) => return abort_failed(&settings, "strip-check (kernel)", &e),
    };
    let pass = iso_pass && lb_pass;
    let report = StripCheckReport {
        n_s: base.n_s,
        n_t: base.n_t,
        d: base.d,
        n_domain: fam.n_domain(),
        n_target: fam.n_target(),
        iso_checks,
        lower_bound_ratios,
        kernel_dim_at_zero: kc.dim_kernel(),
        pass,
    };
    write_reports(
        &settings.out,
        &report,
        &meta(&settings, "strip-check", started, t0),
        pass,
        &["strip-check: structural identity failed".into()],
    )?;
    verdict(
        pass,
        "strip-check",
        &format!(
            "grid {}×{}, kernel dim {} at the base parameter",
            base.n_s,
            base.n_t,
            kc.dim_kernel()
        ),
    );
    Ok(if pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_grid_dims() {
        let g = tensor_grid(-1.0, 1.0, 3, 2).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], DVector::from_vec(vec![-1.0, -1.0]));
        assert_eq!(g[8], DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(tensor_grid(0.0, 1.0, 5, 0).unwrap().len(), 1);
        assert!(tensor_grid(-1.0, 1.0, 100, 4).is_err());
    }

    #[test]
    fn parse_helpers() {
        assert_eq!(parse_eps("0.25, 0.01", 2).unwrap(), vec![0.25, 0.01]);
        assert!(parse_eps("0.25", 2).is_err());
        assert_eq!(parse_k_grid("-0.1:0.1:5").unwrap(), (-0.1, 0.1, 5));
        assert!(parse_k_grid("0.1:-0.1:5").is_err());
        assert!(parse_k_grid("1:2").is_err());
    }
}
