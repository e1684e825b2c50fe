//! Contraction solver for the solution map and its derivatives.
//!
//! With `Q_ε = P_ε(0)⁻¹` in hand, solving `F_ε(γ) ∈ 𝔠` over a kernel element
//! `k` is a fixed point of
//!
//! `B_ε(k, (c, γ)) = Q_ε(0) (k, DF_ε(0) γ − F_ε(γ))`,
//!
//! which contracts with rate `θ` on a ball whose radius comes from the
//! quadratic-ish modulus and the inverse bound. The fixed point
//! `σ_ε(k) = (c, γ)` defines the reduced map (the complement coefficients)
//! and the solution branch (the domain component). First derivatives are
//! computed two independent ways and cross-checked; second-order tangent
//! data is certified against the stabilized tangent equations.

use crate::error::{AfredError, Result};
use crate::family::{AdiabaticFamily, FamilyConstants};
use crate::fredholm::{
    assemble_stabilization, invert_direct, kernel_cokernel, InverseOperator, KernelCokernel,
    Stabilization, StabilizationBounds,
};
use crate::sample::halton_ball;
use crate::spaces::{ParameterBox, TangentVector, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

/// Default fixed-point stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default fixed-point iteration cap.
pub const DEFAULT_MAX_ITER: usize = 200;
/// Two independent derivative formulas must agree to this before the result
/// is trusted.
const DSIGMA_AGREE: f64 = 1e-8;
/// Beyond this disagreement the derivative is rejected outright.
const DSIGMA_LIMIT: f64 = 1e-6;
/// Ceiling on the tangent-equation certificate of second-order data.
const TANGENT_CERT_LIMIT: f64 = 1e-6;

/// Where the constants behind a radius plan came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsProvenance {
    /// Supplied with the family definition.
    Declared,
    /// Estimated by sampling the defining inequalities.
    Estimated,
}

/// Radii and parameter box on which the contraction argument is run.
#[derive(Debug, Clone, Serialize)]
pub struct RadiusPlan {
    /// Contraction rate the plan is built for.
    pub theta: f64,
    /// Largest radius at which the quadratic-ish modulus stays below θ/C_Q.
    pub delta_theta: f64,
    /// Largest radius at which the inverse bound stays valid.
    pub delta_q: f64,
    /// Working ball radius for the solution branch: min(δ_θ, δ_Q, ρ).
    pub delta_sigma: f64,
    /// Kernel-coefficient radius (1 − θ)·δ_σ / C_Q.
    pub r_k: f64,
    /// Parameter sub-box on which the base inverse perturbs to all ε.
    #[serde(skip)]
    pub delta_box: ParameterBox,
    /// Whether the plan was widened beyond the certified formulas.
    pub widened: bool,
    /// Origin of the constants.
    pub provenance: ConstantsProvenance,
    /// The constants the formulas were evaluated on.
    pub constants: FamilyConstants,
}

impl RadiusPlan {
    /// The certified-bounds view used when assembling stabilizations.
    pub fn bounds(&self) -> StabilizationBounds {
        StabilizationBounds {
            delta_box: self.delta_box.clone(),
            delta_q: self.delta_q,
        }
    }
}

/// Evaluates the radius formulas on the given constants.
///
/// * `δ_θ`: largest tabulated radius with quadratic-ish modulus ≤ θ/C_Q;
/// * `δ_Q`: largest tabulated radius with modulus ≤ 1/(2·C_Q^prelim);
/// * `δ_σ = min(δ_θ, δ_Q, ρ)` and `r_K = (1 − θ)·δ_σ/C_Q`;
/// * parameter box capped where the derivative-continuity modulus stays
///   below `1/(2(1 + C₁ + C_𝔠)C₀)`.
pub fn select_radii(
    fam: &AdiabaticFamily,
    constants: &FamilyConstants,
    provenance: ConstantsProvenance,
    theta: f64,
) -> Result<RadiusPlan> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(AfredError::InvalidConfig(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let delta_theta = constants
        .modulus_c
        .largest_arg_with_value_leq(theta / constants.cq)
        .ok_or_else(|| {
            AfredError::InvalidConfig(
                "quadratic-ish modulus exceeds θ/C_Q at the smallest tabulated radius".into(),
            )
        })?;
    let delta_q = constants
        .modulus_c
        .largest_arg_with_value_leq(0.5 / constants.cq_prelim)
        .ok_or_else(|| {
            AfredError::InvalidConfig(
                "quadratic-ish modulus exceeds the inverse-perturbation budget everywhere".into(),
            )
        })?;
    let delta_sigma = delta_theta.min(delta_q).min(fam.domain_radius());
    let r_k = (1.0 - theta) * delta_sigma / constants.cq;
    let delta_box = if fam.delta().dim() == 0 {
        fam.delta().clone()
    } else {
        let budget = 0.5 / ((1.0 + constants.c1 + constants.c_cok) * constants.c0);
        let extent = constants
            .modulus_c_delta
            .largest_arg_with_value_leq(budget)
            .unwrap_or(0.0);
        fam.delta().capped_at(extent)
    };
    Ok(RadiusPlan {
        theta,
        delta_theta,
        delta_q,
        delta_sigma,
        r_k,
        delta_box,
        widened: false,
        provenance,
        constants: constants.clone(),
    })
}

impl RadiusPlan {
    /// Extends the plan to a requested working region beyond the certified
    /// formulas. The certified values stay recorded; solving on the widened
    /// region is re-certified at runtime through inverse residuals and the
    /// observed contraction ratios.
    pub fn widen_for(&self, fam: &AdiabaticFamily, working_box: &ParameterBox, r_k: f64) -> Self {
        let mut plan = self.clone();
        plan.widened = true;
        plan.r_k = plan.r_k.max(r_k);
        // Keep the iterate ball inside the open domain while granting the
        // room the widened kernel radius needs.
        let needed = plan.constants.cq * plan.r_k / (1.0 - plan.theta);
        plan.delta_sigma = plan
            .delta_sigma
            .max(needed)
            .min(0.999 * fam.domain_radius());
        plan.delta_box = working_box.clone();
        plan
    }
}

/// Result of one contraction run.
#[derive(Debug, Clone)]
pub struct FixedPointResult {
    /// Fixed point in stacked coordinates `[c; γ]`.
    pub w: DVector<f64>,
    /// Iterations used (number of map applications).
    pub iterations: usize,
    /// Largest observed successive-step ratio.
    pub theta_observed: f64,
    /// Norm of the final step.
    pub residual: f64,
}

/// A solved point of the solution map.
#[derive(Debug, Clone)]
pub struct SolutionSample {
    /// Parameter of the sample.
    pub eps: Vec<f64>,
    /// Kernel coefficients fed in.
    pub k_coeffs: DVector<f64>,
    /// Complement coefficients of the fixed point — the reduced map value.
    pub c_coeffs: DVector<f64>,
    /// Domain component of the fixed point — the solution branch value.
    pub gamma: DVector<f64>,
    /// Final step norm of the contraction.
    pub residual: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Largest observed contraction ratio.
    pub theta_observed: f64,
}

/// First derivative of the solution map along one kernel direction.
#[derive(Debug, Clone)]
pub struct DSigma {
    /// Derivative of the complement coefficients.
    pub c_prime: DVector<f64>,
    /// Derivative of the domain component.
    pub gamma_prime: DVector<f64>,
    /// Weighted disagreement between the two independent formulas.
    pub formula_gap: f64,
}

/// Tangent data of the solution map with its certificate.
#[derive(Debug, Clone)]
pub struct TangentSolution {
    /// Entries are stacked `[c; γ]` vectors, base entry first.
    pub tv: TangentVector,
    /// Largest stabilized tangent-equation residual.
    pub certificate: f64,
}

/// Per-parameter data cached by the pipeline.
struct EpsData {
    q0: InverseOperator,
    df0: DMatrix<f64>,
    w_gamma: Arc<WeightMatrix>,
}

/// Solver pipeline: a family with its kernel/cokernel data, a radius plan,
/// and cached base inverses per parameter.
pub struct Pipeline {
    fam: AdiabaticFamily,
    kc: KernelCokernel,
    plan: RadiusPlan,
    cache: Mutex<HashMap<u64, Arc<EpsData>>>,
}

fn eps_key(eps: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in eps {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

impl Pipeline {
    /// Builds a pipeline from declared constants.
    ///
    /// `widen` extends the working region to the full family box and the
    /// given kernel radius when the certified formulas come out smaller.
    pub fn new(
        fam: AdiabaticFamily,
        constants: FamilyConstants,
        provenance: ConstantsProvenance,
        theta: f64,
        widen_to_r_k: Option<f64>,
    ) -> Result<Self> {
        let kc = kernel_cokernel(&fam, None)?;
        let mut plan = select_radii(&fam, &constants, provenance, theta)?;
        if let Some(rk) = widen_to_r_k {
            let full = fam.delta().clone();
            plan = plan.widen_for(&fam, &full, rk);
        }
        Ok(Self {
            fam,
            kc,
            plan,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Builds a pipeline taking the constants from the family declaration.
    pub fn from_declared(
        fam: AdiabaticFamily,
        theta: f64,
        widen_to_r_k: Option<f64>,
    ) -> Result<Self> {
        let constants = fam.declared_constants().cloned().ok_or_else(|| {
            AfredError::InvalidConfig(format!(
                "family '{}' declares no constants; estimate them first",
                fam.name()
            ))
        })?;
        Self::new(fam, constants, ConstantsProvenance::Declared, theta, widen_to_r_k)
    }

    /// The underlying family.
    pub fn family(&self) -> &AdiabaticFamily {
        &self.fam
    }

    /// The kernel/cokernel data at the base parameter.
    pub fn kernel_cokernel(&self) -> &KernelCokernel {
        &self.kc
    }

    /// The active radius plan.
    pub fn plan(&self) -> &RadiusPlan {
        &self.plan
    }

    fn eps_data(&self, eps: &[f64]) -> Result<Arc<EpsData>> {
        let key = eps_key(eps);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let zero = DVector::zeros(self.fam.n_domain());
        let bounds = self.plan.bounds();
        let st = assemble_stabilization(
            &self.fam,
            &self.kc,
            eps,
            &zero,
            Some(&bounds),
            self.plan.widened,
        )?;
        let q0 = invert_direct(&st)?;
        let df0 = self.fam.jacobian(eps, &zero)?;
        let w_gamma = self.fam.gamma_norms().weight_at(eps);
        let data = Arc::new(EpsData { q0, df0, w_gamma });
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, data.clone());
        Ok(data)
    }

    /// The cached base inverse at a parameter.
    pub fn base_inverse(&self, eps: &[f64]) -> Result<InverseOperator> {
        Ok(self.eps_data(eps)?.q0.clone())
    }

    /// Applies the contraction map `B_ε(k, ·)` once.
    fn apply_b(
        &self,
        data: &EpsData,
        eps: &[f64],
        k_coeffs: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.fam.n_domain();
        let dim_c = self.kc.dim_cokernel();
        let gamma = w.rows(dim_c, n).into_owned();
        let val = &data.df0 * &gamma - self.fam.evaluate(eps, &gamma)?;
        let mut rhs = DVector::zeros(self.kc.dim_kernel() + self.fam.n_target());
        rhs.rows_mut(0, self.kc.dim_kernel()).copy_from(k_coeffs);
        rhs.rows_mut(self.kc.dim_kernel(), self.fam.n_target())
            .copy_from(&val);
        Ok(data.q0.apply(&rhs))
    }

    /// Sum-norm `‖c‖ + ‖γ‖_ε` of a stacked vector.
    fn w_norm(&self, data: &EpsData, w: &DVector<f64>) -> f64 {
        let dim_c = self.kc.dim_cokernel();
        let c = w.rows(0, dim_c).into_owned();
        let gamma = w.rows(dim_c, self.fam.n_domain()).into_owned();
        c.norm() + data.w_gamma.norm(&gamma)
    }

    /// Runs the contraction from `w₀ = 0` with the plan's guards.
    pub fn fixed_point(
        &self,
        eps: &[f64],
        k_coeffs: &DVector<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Result<FixedPointResult> {
        let data = self.eps_data(eps)?;
        let dim_w = self.kc.dim_cokernel() + self.fam.n_domain();
        let mut w = DVector::zeros(dim_w);
        let mut prev_step: Option<f64> = None;
        let mut theta_observed: f64 = 0.0;
        for it in 1..=max_iter {
            let next = self.apply_b(&data, eps, k_coeffs, &w)?;
            let step = self.w_norm(&data, &(&next - &w));
            if let Some(p) = prev_step {
                if p > 1e-15 {
                    let ratio = step / p;
                    theta_observed = theta_observed.max(ratio);
                    if ratio > 1.0 + 1e-9 && step > 10.0 * tol {
                        return Err(AfredError::NotContracting {
                            ratio,
                            iteration: it,
                        });
                    }
                }
            }
            let norm = self.w_norm(&data, &next);
            if norm > self.plan.delta_sigma {
                return Err(AfredError::LeftBall {
                    norm,
                    radius: self.plan.delta_sigma,
                    iteration: it,
                });
            }
            w = next;
            // A-posteriori stopping: on widened plans the observed ratio
            // replaces the planned rate when it is worse.
            let theta_eff = self.plan.theta.max(theta_observed.min(0.99));
            if step <= tol * (1.0 - theta_eff) {
                return Ok(FixedPointResult {
                    w,
                    iterations: it,
                    theta_observed,
                    residual: step,
                });
            }
            prev_step = Some(step);
        }
        Err(AfredError::NoConvergence {
            max_iter,
            last_step: prev_step.unwrap_or(f64::NAN),
        })
    }

    /// Solves the family over a kernel element: `σ_ε(k)`.
    pub fn solve(
        &self,
        eps: &[f64],
        k_coeffs: &DVector<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Result<SolutionSample> {
        if k_coeffs.len() != self.kc.dim_kernel() {
            return Err(AfredError::DimensionMismatch(format!(
                "kernel coefficient vector has length {}, expected {}",
                k_coeffs.len(),
                self.kc.dim_kernel()
            )));
        }
        if k_coeffs.norm() > self.plan.r_k * (1.0 + 1e-12) {
            return Err(AfredError::OutOfDomain(format!(
                "kernel coefficients at norm {:.3e} exceed the plan radius {:.3e}",
                k_coeffs.norm(),
                self.plan.r_k
            )));
        }
        let fp = self.fixed_point(eps, k_coeffs, tol, max_iter)?;
        let dim_c = self.kc.dim_cokernel();
        let c_coeffs = fp.w.rows(0, dim_c).into_owned();
        let gamma = fp.w.rows(dim_c, self.fam.n_domain()).into_owned();
        Ok(SolutionSample {
            eps: eps.to_vec(),
            k_coeffs: k_coeffs.clone(),
            c_coeffs,
            gamma,
            residual: fp.residual,
            iterations: fp.iterations,
            theta_observed: fp.theta_observed,
        })
    }

    /// Stabilization at the solved point (expansion at `γ = σ`).
    fn stabilization_at(&self, sample: &SolutionSample) -> Result<Stabilization> {
        let bounds = self.plan.bounds();
        assemble_stabilization(
            &self.fam,
            &self.kc,
            &sample.eps,
            &sample.gamma,
            Some(&bounds),
            true, // the solved point may exceed δ_Q on widened plans
        )
    }

    /// First derivative of the solution map along `k₁`, computed through two
    /// independent formulas and cross-checked:
    ///
    /// 1. `Dσ(k)k₁ = Q_ε(σ(k)) (k₁, 0)`;
    /// 2. `(Id − D_W B)⁻¹ D_K B k₁` at the fixed point.
    pub fn d_sigma(&self, sample: &SolutionSample, k1: &DVector<f64>) -> Result<DSigma> {
        let data = self.eps_data(&sample.eps)?;
        let (dim_k, dim_c, n, m) = (
            self.kc.dim_kernel(),
            self.kc.dim_cokernel(),
            self.fam.n_domain(),
            self.fam.n_target(),
        );
        // Formula 1: inverse of the stabilization at the solved point.
        let st = self.stabilization_at(sample)?;
        let q_solved = invert_direct(&st)?;
        let mut rhs = DVector::zeros(dim_k + m);
        rhs.rows_mut(0, dim_k).copy_from(k1);
        let w_a = q_solved.apply(&rhs);

        // Formula 2: implicit differentiation of the fixed-point equation.
        let df_solved = self.fam.jacobian(&sample.eps, &sample.gamma)?;
        let mut inner = DMatrix::zeros(dim_k + m, dim_c + n);
        inner
            .view_mut((dim_k, dim_c), (m, n))
            .copy_from(&(&data.df0 - &df_solved));
        let dwb = &data.q0.q_matrix * inner;
        let mut dkb_rhs = DMatrix::zeros(dim_k + m, dim_k);
        dkb_rhs.view_mut((0, 0), (dim_k, dim_k)).fill_with_identity();
        let dkb = &data.q0.q_matrix * dkb_rhs;
        let lhs = DMatrix::identity(dim_c + n, dim_c + n) - dwb;
        let w_b = lhs
            .full_piv_lu()
            .solve(&(&dkb * k1))
            .ok_or_else(|| {
                AfredError::SingularStabilization(
                    "implicit-derivative system is singular".into(),
                )
            })?;

        let diff = &w_a - &w_b;
        let gap = diff.rows(0, dim_c).norm()
            + data.w_gamma.norm(&diff.rows(dim_c, n).into_owned());
        if gap > DSIGMA_LIMIT {
            return Err(AfredError::Disagreement {
                difference: gap,
                limit: DSIGMA_LIMIT,
            });
        }
        debug_assert!(
            gap <= DSIGMA_AGREE,
            "derivative formulas differ by {gap:.3e}"
        );
        Ok(DSigma {
            c_prime: w_a.rows(0, dim_c).into_owned(),
            gamma_prime: w_a.rows(dim_c, n).into_owned(),
            formula_gap: gap,
        })
    }

    /// First derivative at a freshly solved point (convenience wrapper).
    pub fn d_sigma_at(
        &self,
        eps: &[f64],
        k_coeffs: &DVector<f64>,
        k1: &DVector<f64>,
    ) -> Result<DSigma> {
        let sample = self.solve(eps, k_coeffs, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        self.d_sigma(&sample, k1)
    }

    fn stack(&self, c: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let dim_c = self.kc.dim_cokernel();
        let mut w = DVector::zeros(dim_c + self.fam.n_domain());
        w.rows_mut(0, dim_c).copy_from(c);
        w.rows_mut(dim_c, self.fam.n_domain()).copy_from(g);
        w
    }

    fn split(&self, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let dim_c = self.kc.dim_cokernel();
        (
            w.rows(0, dim_c).into_owned(),
            w.rows(dim_c, self.fam.n_domain()).into_owned(),
        )
    }

    /// Second derivative `D²σ(k)(k₁, k₂)` by a central difference of the
    /// exact first-derivative formula.
    fn d2_sigma(
        &self,
        eps: &[f64],
        k_coeffs: &DVector<f64>,
        k1: &DVector<f64>,
        k2: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let h = crate::family::FD_STEP * k_coeffs.norm().max(1.0);
        let kp = k_coeffs + k2 * h;
        let km = k_coeffs - k2 * h;
        let dp = self.d_sigma_at(eps, &kp, k1)?;
        let dm = self.d_sigma_at(eps, &km, k1)?;
        let wp = self.stack(&dp.c_prime, &dp.gamma_prime);
        let wm = self.stack(&dm.c_prime, &dm.gamma_prime);
        Ok((wp - wm) / (2.0 * h))
    }

    /// Tangent lift of the solution map up to second order.
    ///
    /// The input is a tangent vector of kernel coefficient vectors; the
    /// output entries are stacked `[c; γ]` vectors. Every entry is certified
    /// against the stabilized tangent equations
    ///
    /// `F(γ₀) = c₀ᵉ`, `DF(γ₀)γᵢ = cᵢᵉ` (i = 1, 2),
    /// `D²F(γ₀)(γ₁, γ₂) + DF(γ₀)γ₃ = c₃ᵉ`,
    ///
    /// together with the kernel-projection identities `π_K γᵢ = kᵢ`.
    pub fn tangent_sigma(&self, eps: &[f64], tv_k: &TangentVector) -> Result<TangentSolution> {
        let level = tv_k.level();
        if level > 2 {
            return Err(AfredError::InvalidConfig(
                "tangent solutions are supported up to order 2".into(),
            ));
        }
        let k0 = tv_k.base();
        let sample = self.solve(eps, k0, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let w0 = self.stack(&sample.c_coeffs, &sample.gamma);
        let entries: Vec<DVector<f64>> = match level {
            0 => vec![w0.clone()],
            1 => {
                let d = self.d_sigma(&sample, &tv_k.entries()[1])?;
                vec![w0.clone(), self.stack(&d.c_prime, &d.gamma_prime)]
            }
            _ => {
                let k1 = &tv_k.entries()[1];
                let k2 = &tv_k.entries()[2];
                let k3 = &tv_k.entries()[3];
                let d1 = self.d_sigma(&sample, k1)?;
                let d2 = self.d_sigma(&sample, k2)?;
                let second = self.d2_sigma(eps, k0, k1, k2)?;
                let lin3 = self.d_sigma(&sample, k3)?;
                let w3 = second + self.stack(&lin3.c_prime, &lin3.gamma_prime);
                vec![
                    w0.clone(),
                    self.stack(&d1.c_prime, &d1.gamma_prime),
                    self.stack(&d2.c_prime, &d2.gamma_prime),
                    w3,
                ]
            }
        };

        // Certificate: stabilized tangent equations in the target norm.
        let w_omega = self.fam.omega_norms().weight_at(eps);
        let mut cert: f64 = 0.0;
        let parts: Vec<(DVector<f64>, DVector<f64>)> =
            entries.iter().map(|w| self.split(w)).collect();
        let (c0, g0) = &parts[0];
        let r0 = self.fam.evaluate(eps, g0)? - self.kc.cokernel_element(c0);
        cert = cert.max(w_omega.norm(&r0));
        cert = cert.max((&self.kc.pi_k * g0 - k0).norm());
        if level >= 1 {
            for i in 1..parts.len().min(3) {
                let (ci, gi) = &parts[i];
                let r = self.fam.differential(eps, g0, &[gi.clone()])?
                    - self.kc.cokernel_element(ci);
                cert = cert.max(w_omega.norm(&r));
                cert = cert.max((&self.kc.pi_k * gi - &tv_k.entries()[i]).norm());
            }
        }
        if level == 2 {
            let (c3, g3) = &parts[3];
            let (_, g1) = &parts[1];
            let (_, g2) = &parts[2];
            let r = self.fam.differential(eps, g0, &[g1.clone(), g2.clone()])?
                + self.fam.differential(eps, g0, &[g3.clone()])?
                - self.kc.cokernel_element(c3);
            cert = cert.max(w_omega.norm(&r));
        }
        if cert > TANGENT_CERT_LIMIT {
            return Err(AfredError::Disagreement {
                difference: cert,
                limit: TANGENT_CERT_LIMIT,
            });
        }
        let tv = TangentVector::new(level, entries)?;
        Ok(TangentSolution {
            tv,
            certificate: cert,
        })
    }
}

/// One parameter row of the solution-map continuity audit.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaContinuitySample {
    /// Parameter of the row.
    pub eps: Vec<f64>,
    /// Largest `‖σ(l) − σ(k)‖` observed.
    pub max_diff: f64,
    /// Largest ratio against the certified bound.
    pub max_ratio: f64,
}

/// Report of the solution-map continuity audit.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaContinuityReport {
    /// The Lipschitz coefficient `C_Q/(1 − θ)` used in the bound.
    pub bound_coeff: f64,
    /// Per-parameter worst cases.
    pub per_eps: Vec<SigmaContinuitySample>,
    /// Largest ratio over all parameters.
    pub max_ratio: f64,
    /// Whether every pair satisfied the bound.
    pub pass: bool,
}

/// Audits `‖σ_ε(l) − σ_ε(k)‖ ≤ C_Q/(1 − θ)·‖l − k‖ + 1e−9` on sampled pairs
/// of kernel coefficients inside the plan radius.
pub fn sigma_continuity_audit(
    pipeline: &Pipeline,
    eps_list: &[Vec<f64>],
    n_pairs: usize,
    seed: u64,
) -> Result<SigmaContinuityReport> {
    let plan = pipeline.plan();
    let coeff = plan.constants.cq / (1.0 - plan.theta);
    let dim_k = pipeline.kernel_cokernel().dim_kernel();
    let id_k = WeightMatrix::identity(dim_k);
    let mut per_eps = Vec::with_capacity(eps_list.len());
    let mut max_ratio: f64 = 0.0;
    for (eidx, eps) in eps_list.iter().enumerate() {
        let draws = halton_ball(&id_k, plan.r_k, 2 * n_pairs, seed.wrapping_add(eidx as u64));
        let data = pipeline.eps_data(eps)?;
        let mut row_diff: f64 = 0.0;
        let mut row_ratio: f64 = 0.0;
        for pair in draws.chunks_exact(2) {
            let (k, l) = (&pair[0], &pair[1]);
            let dist = (l - k).norm();
            if dist < 1e-12 {
                continue;
            }
            let sk = pipeline.solve(eps, k, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let sl = pipeline.solve(eps, l, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let diff = pipeline.w_norm(
                &data,
                &(pipeline.stack(&sl.c_coeffs, &sl.gamma)
                    - pipeline.stack(&sk.c_coeffs, &sk.gamma)),
            );
            let bound = coeff * dist + 1e-9;
            row_diff = row_diff.max(diff);
            row_ratio = row_ratio.max(diff / bound);
        }
        max_ratio = max_ratio.max(row_ratio);
        per_eps.push(SigmaContinuitySample {
            eps: eps.clone(),
            max_diff: row_diff,
            max_ratio: row_ratio,
        });
    }
    Ok(SigmaContinuityReport {
        bound_coeff: coeff,
        per_eps,
        max_ratio,
        pass: max_ratio <= 1.0,
    })
}
