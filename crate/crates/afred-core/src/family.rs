//! Parameter-indexed families of nonlinear maps between weighted spaces.
//!
//! An [`AdiabaticFamily`] packages the maps `F_ε : V_Γ → Ω`, the two norm
//! families, the parameter box, and optional analytic derivative closures
//! with a finite-difference fallback. Iterated tangent maps up to level 2
//! are provided in the explicit component form used by the audits.

use crate::error::{AfredError, Result};
use crate::spaces::{NormFamily, ParameterBox, TangentVector};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Base step for central finite differences; scaled by `max(1, ‖γ‖₀)`.
pub const FD_STEP: f64 = 1e-4;

type EvalFn = dyn Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync;
type DiffFn =
    dyn Fn(&[f64], &DVector<f64>, &[DVector<f64>]) -> DVector<f64> + Send + Sync;

/// A monotone modulus recorded as a sampled envelope table: `value[i]` bounds
/// the modulus on arguments up to `args[i]`. Arguments ascend, values are
/// non-decreasing, and the implicit value at 0 is 0.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModulusTable {
    /// Ascending table arguments (bin upper edges).
    pub args: Vec<f64>,
    /// Non-decreasing bound values per bin.
    pub values: Vec<f64>,
}

impl ModulusTable {
    /// Builds a table, validating monotonicity.
    pub fn new(args: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if args.len() != values.len() || args.is_empty() {
            return Err(AfredError::DimensionMismatch(
                "modulus table needs equally many args and values".into(),
            ));
        }
        if args.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AfredError::InvalidConfig(
                "modulus table arguments must strictly ascend".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] > w[1]) || values[0] < 0.0 {
            return Err(AfredError::InvalidConfig(
                "modulus table values must be non-negative and non-decreasing".into(),
            ));
        }
        Ok(Self { args, values })
    }

    /// Tabulates a closed-form modulus on `bins` log-spaced arguments up to
    /// `max_arg`.
    pub fn from_closed_form(f: impl Fn(f64) -> f64, max_arg: f64, bins: usize) -> Self {
        let args = log_bins(max_arg, bins);
        let mut values: Vec<f64> = args.iter().map(|&a| f(a).max(0.0)).collect();
        for i in 1..values.len() {
            values[i] = values[i].max(values[i - 1]);
        }
        Self { args, values }
    }

    /// All-zero modulus (e.g. for linear families) on a given range.
    pub fn zero(max_arg: f64) -> Self {
        Self {
            args: vec![max_arg],
            values: vec![0.0],
        }
    }

    /// Conservative evaluation: the bound at the smallest tabulated argument
    /// ≥ `x` (0 at x = 0; the last value beyond the table).
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.args.iter().position(|&a| a >= x) {
            Some(i) => self.values[i],
            None => *self.values.last().expect("table is non-empty"),
        }
    }

    /// Largest tabulated argument whose bound is ≤ `limit`; `None` when even
    /// the first bin exceeds it.
    pub fn largest_arg_with_value_leq(&self, limit: f64) -> Option<f64> {
        self.args
            .iter()
            .zip(&self.values)
            .rev()
            .find(|(_, &v)| v <= limit)
            .map(|(&a, _)| a)
    }
}

/// Log-spaced bin edges ending at `max_arg` spanning four decades.
pub fn log_bins(max_arg: f64, bins: usize) -> Vec<f64> {
    let hi = max_arg.max(f64::MIN_POSITIVE);
    let lo = hi * 1e-4;
    (0..bins)
        .map(|i| lo * (hi / lo).powf(i as f64 / (bins - 1).max(1) as f64))
        .collect()
}

/// The scalar constants and modulus envelopes attached to a family, either
/// declared from closed-form analysis or estimated by the diagnostics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FamilyConstants {
    /// Base-point stabilization constant.
    pub c0: f64,
    /// Uniform domain-norm estimate constant.
    pub c1: f64,
    /// Uniform cokernel-norm constant.
    pub c_cok: f64,
    /// Preliminary inverse bound `2(C₁ + C₀ + C₀C₁ + C₀C_𝔠)`.
    pub cq_prelim: f64,
    /// Inverse bound `max{1, 4(C₁ + C₀ + C₀C₁ + C₀C_𝔠)}` (or a declared
    /// certified value).
    pub cq: f64,
    /// Modulus bounding `‖(DF_ε(γ₀) − DF_ε(0))γ‖ ≤ c(‖γ₀‖)·‖γ‖`.
    pub modulus_c: ModulusTable,
    /// Modulus bounding the base-norm drift of derivatives in the parameter,
    /// argument = max-norm distance from the base point.
    pub modulus_c_delta: ModulusTable,
    /// Uniform continuity modulus of the first derivative in the domain
    /// variable.
    pub modulus_c1f: ModulusTable,
}

impl FamilyConstants {
    /// The pinned combinations of the scalar constants.
    pub fn cq_from_scalars(c0: f64, c1: f64, c_cok: f64) -> (f64, f64) {
        let prelim = 2.0 * (c1 + c0 + c0 * c1 + c0 * c_cok);
        (prelim, (2.0 * prelim).max(1.0))
    }
}

/// A family of maps `F_ε : V_Γ → Ω` with parameter-dependent norms.
///
/// The domain `V_Γ` is the open ball of radius `domain_radius` in the
/// base-point norm on the domain space. Derivative closures, when given,
/// compute `D^k F_ε(γ)(v₁, …, v_k)` for `k ≤ max_analytic_order`; higher
/// orders (or absent closures) fall back to central finite differences.
#[derive(Clone)]
pub struct AdiabaticFamily {
    name: String,
    n_domain: usize,
    n_target: usize,
    delta: ParameterBox,
    domain_radius: f64,
    gamma_norms: NormFamily,
    omega_norms: NormFamily,
    eval: Arc<EvalFn>,
    diff: Option<Arc<DiffFn>>,
    max_analytic_order: u32,
    declared_constants: Option<FamilyConstants>,
    declared_index: i64,
}

impl std::fmt::Debug for AdiabaticFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdiabaticFamily")
            .field("name", &self.name)
            .field("n_domain", &self.n_domain)
            .field("n_target", &self.n_target)
            .field("delta", &self.delta)
            .field("domain_radius", &self.domain_radius)
            .field("declared_index", &self.declared_index)
            .finish()
    }
}

/// Builder-style constructor arguments for [`AdiabaticFamily`].
pub struct FamilySpec {
    pub name: String,
    pub n_domain: usize,
    pub n_target: usize,
    pub delta: ParameterBox,
    pub domain_radius: f64,
    pub gamma_norms: NormFamily,
    pub omega_norms: NormFamily,
    pub eval: Arc<EvalFn>,
    pub diff: Option<Arc<DiffFn>>,
    pub max_analytic_order: u32,
    pub declared_constants: Option<FamilyConstants>,
    pub declared_index: i64,
}

impl AdiabaticFamily {
    /// Validates dimensions and wraps the data.
    pub fn new(spec: FamilySpec) -> Result<Self> {
        if spec.gamma_norms.dim() != spec.n_domain {
            return Err(AfredError::DimensionMismatch(
                "domain norm family dimension differs from n_domain".into(),
            ));
        }
        if spec.omega_norms.dim() != spec.n_target {
            return Err(AfredError::DimensionMismatch(
                "target norm family dimension differs from n_target".into(),
            ));
        }
        if !(spec.domain_radius > 0.0) {
            return Err(AfredError::InvalidConfig(
                "domain radius must be positive".into(),
            ));
        }
        Ok(Self {
            name: spec.name,
            n_domain: spec.n_domain,
            n_target: spec.n_target,
            delta: spec.delta,
            domain_radius: spec.domain_radius,
            gamma_norms: spec.gamma_norms,
            omega_norms: spec.omega_norms,
            eval: spec.eval,
            diff: spec.diff,
            max_analytic_order: spec.max_analytic_order,
            declared_constants: spec.declared_constants,
            declared_index: spec.declared_index,
        })
    }

    /// Family name (stable identifier used by reports and the CLI).
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Domain dimension.
    pub fn n_domain(&self) -> usize {
        self.n_domain
    }

    /// Target dimension.
    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// The parameter box.
    pub fn delta(&self) -> &ParameterBox {
        &self.delta
    }

    /// Radius ρ of the domain ball in the base-point norm.
    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    /// Norm family on the domain.
    pub fn gamma_norms(&self) -> &NormFamily {
        &self.gamma_norms
    }

    /// Norm family on the target.
    pub fn omega_norms(&self) -> &NormFamily {
        &self.omega_norms
    }

    /// Declared constants, when the model ships closed-form analysis.
    pub fn declared_constants(&self) -> Option<&FamilyConstants> {
        self.declared_constants.as_ref()
    }

    /// Declared index (target-complement minus kernel dimension).
    pub fn declared_index(&self) -> i64 {
        self.declared_index
    }

    /// Highest derivative order served by the analytic closure.
    pub fn max_analytic_order(&self) -> u32 {
        self.max_analytic_order
    }

    /// Checks that `γ` lies in the open domain ball.
    pub fn in_domain(&self, gamma: &DVector<f64>) -> bool {
        self.gamma_norms.norm_at_zero(gamma) < self.domain_radius
    }

    /// Evaluates `F_ε(γ)`, checking membership of both arguments.
    pub fn evaluate(&self, eps: &[f64], gamma: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.delta.contains(eps) {
            return Err(AfredError::OutOfDomain(format!(
                "parameter {eps:?} outside the box"
            )));
        }
        if gamma.len() != self.n_domain {
            return Err(AfredError::DimensionMismatch(format!(
                "gamma has length {}, expected {}",
                gamma.len(),
                self.n_domain
            )));
        }
        if !self.in_domain(gamma) {
            return Err(AfredError::OutOfDomain(format!(
                "‖γ‖₀ = {:.6e} ≥ ρ = {:.6e}",
                self.gamma_norms.norm_at_zero(gamma),
                self.domain_radius
            )));
        }
        Ok(self.eval_unchecked(eps, gamma))
    }

    /// Evaluation without the domain checks (used by finite differences that
    /// may poke marginally outside the open ball).
    pub fn eval_unchecked(&self, eps: &[f64], gamma: &DVector<f64>) -> DVector<f64> {
        let out = (self.eval)(eps, gamma);
        debug_assert_eq!(out.len(), self.n_target, "eval returned wrong dimension");
        out
    }

    /// `D^k F_ε(γ)(v₁, …, v_k)`: analytic closure when available for the
    /// order, otherwise central finite differences (recursively in the last
    /// direction).
    pub fn differential(
        &self,
        eps: &[f64],
        gamma: &DVector<f64>,
        dirs: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        let order = dirs.len() as u32;
        if order == 0 {
            return Ok(self.eval_unchecked(eps, gamma));
        }
        if dirs.iter().any(|d| d.len() != self.n_domain) {
            return Err(AfredError::DimensionMismatch(
                "derivative direction has wrong dimension".into(),
            ));
        }
        if self.diff.is_some() && order <= self.max_analytic_order {
            let d = self.diff.as_ref().expect("checked above");
            return Ok(d(eps, gamma, dirs));
        }
        // Central difference in the last direction of the order-(k-1) value.
        let h = FD_STEP * self.gamma_norms.norm_at_zero(gamma).max(1.0);
        let last = &dirs[dirs.len() - 1];
        let rest = &dirs[..dirs.len() - 1];
        let plus = self.differential(eps, &(gamma + last * h), rest)?;
        let minus = self.differential(eps, &(gamma - last * h), rest)?;
        Ok((plus - minus) / (2.0 * h))
    }

    /// Assembles the Jacobian matrix `DF_ε(γ)` column by column.
    pub fn jacobian(&self, eps: &[f64], gamma: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.n_target, self.n_domain);
        for j in 0..self.n_domain {
            let mut e = DVector::zeros(self.n_domain);
            e[j] = 1.0;
            let col = self.differential(eps, gamma, &[e])?;
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Iterated tangent map `T^ℓ F_ε` in explicit components (ℓ ≤ 2):
    ///
    /// * ℓ = 0: `(F(v₀))`
    /// * ℓ = 1: `(F(v₀), DF(v₀)v₁)`
    /// * ℓ = 2: `(F(v₀), DF(v₀)v₁, DF(v₀)v₂, D²F(v₀)(v₁,v₂) + DF(v₀)v₃)`
    pub fn tangent_map(
        &self,
        eps: &[f64],
        level: u32,
        tv: &TangentVector,
    ) -> Result<TangentVector> {
        if level > 2 {
            return Err(AfredError::InvalidConfig(
                "tangent maps are provided up to level 2".into(),
            ));
        }
        if tv.level() != level {
            return Err(AfredError::DimensionMismatch(format!(
                "tangent vector has level {}, expected {level}",
                tv.level()
            )));
        }
        let v = tv.entries();
        let out = match level {
            0 => vec![self.eval_unchecked(eps, &v[0])],
            1 => vec![
                self.eval_unchecked(eps, &v[0]),
                self.differential(eps, &v[0], &[v[1].clone()])?,
            ],
            _ => {
                let second = self.differential(eps, &v[0], &[v[1].clone(), v[2].clone()])?;
                vec![
                    self.eval_unchecked(eps, &v[0]),
                    self.differential(eps, &v[0], &[v[1].clone()])?,
                    self.differential(eps, &v[0], &[v[2].clone()])?,
                    second + self.differential(eps, &v[0], &[v[3].clone()])?,
                ]
            }
        };
        TangentVector::new(level, out)
    }
}
