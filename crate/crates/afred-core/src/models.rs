//! Built-in model families with closed-form reference data.
//!
//! Four families exercise the pipeline end to end:
//!
//! * `classical-parabola` — `F(x,y) = y − x²`, one equation in two unknowns,
//!   a one-dimensional kernel and trivial complement.
//! * `squared-map` — `F(x,y) = (x² − y², 2xy)`, vanishing linearization, so
//!   kernel and complement are everything and the reduced map equals `F`.
//! * `toy-shrink` — a two-parameter family with a slow/fast split and
//!   parameter-weighted norms; its reduced map is `(1+ε)k² − τ` with zeros
//!   at `±sqrt(τ/(1+ε))`. A deliberately broken variant moves the target
//!   complement into the fast direction, where its parameter-norm blows up
//!   like `ε^{-1/2}`.
//! * `discrete-strip` — a linear transport family `D_t ξ − ε·J·D_s ξ` on a
//!   periodic-in-s, bounded-in-t grid with boundary penalty rows and the
//!   adiabatic norm weights `ε^{-1}`, `ε^{-3}` on t-derivative energies.

use crate::error::{AfredError, Result};
use crate::family::{AdiabaticFamily, FamilyConstants, FamilySpec, ModulusTable};
use crate::spaces::{NormFamily, ParameterBox, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Number of log bins used for closed-form modulus tables.
const MODULUS_BINS: usize = 32;

fn identity_norms(dim: usize, eps_zero: Vec<f64>) -> NormFamily {
    NormFamily::constant(dim, eps_zero, WeightMatrix::identity(dim))
        .expect("identity norms are valid")
}

/// `F(x, y) = y − x²` with parameter-independent Euclidean norms.
///
/// The linearization at 0 is `[0 1]`: kernel `span{(1,0)}`, target
/// complement trivial, declared index −1. The reduced point map is
/// `k ↦ (k, k²)` and the reduced equation is empty.
pub fn make_classical_parabola() -> AdiabaticFamily {
    let rho = 1.0;
    let constants = FamilyConstants {
        c0: 1.0,
        c1: 1.0,
        c_cok: 1.0,
        cq_prelim: 0.8,
        cq: 1.6,
        modulus_c: ModulusTable::from_closed_form(|r| 2.0 * r, rho, MODULUS_BINS),
        modulus_c_delta: ModulusTable::zero(1.0),
        modulus_c1f: ModulusTable::from_closed_form(|x| 2.0 * x, 2.0 * rho, MODULUS_BINS),
    };
    AdiabaticFamily::new(FamilySpec {
        name: "classical-parabola".into(),
        n_domain: 2,
        n_target: 1,
        delta: ParameterBox::new(vec![], vec![]).expect("empty box"),
        domain_radius: rho,
        gamma_norms: identity_norms(2, vec![]),
        omega_norms: identity_norms(1, vec![]),
        eval: Arc::new(|_eps, g| DVector::from_column_slice(&[g[1] - g[0] * g[0]])),
        diff: Some(Arc::new(|_eps, g, dirs| match dirs {
            [u] => DVector::from_column_slice(&[u[1] - 2.0 * g[0] * u[0]]),
            [u, v] => DVector::from_column_slice(&[-2.0 * u[0] * v[0]]),
            _ => DVector::zeros(1),
        })),
        max_analytic_order: 2,
        declared_constants: Some(constants),
        declared_index: -1,
    })
    .expect("parabola model is well formed")
}

/// `F(x, y) = (x² − y², 2xy)` (the complex square) with Euclidean norms.
///
/// `DF(0) = 0`, so the kernel and target complement are all of ℝ²; the
/// reduced map coincides with `F` itself and the origin is a double zero.
pub fn make_squared_map() -> AdiabaticFamily {
    let rho = 0.5;
    let constants = FamilyConstants {
        c0: 1.0,
        c1: 1.0,
        c_cok: 1.0,
        cq_prelim: 0.85,
        cq: 1.7,
        // ‖DF(γ₀)γ‖ = 2‖γ₀‖‖γ‖ exactly (conformal), so the modulus is 2r.
        modulus_c: ModulusTable::from_closed_form(|r| 2.0 * r, rho, MODULUS_BINS),
        modulus_c_delta: ModulusTable::zero(1.0),
        modulus_c1f: ModulusTable::from_closed_form(|x| 2.0 * x, 2.0 * rho, MODULUS_BINS),
    };
    AdiabaticFamily::new(FamilySpec {
        name: "squared-map".into(),
        n_domain: 2,
        n_target: 2,
        delta: ParameterBox::new(vec![], vec![]).expect("empty box"),
        domain_radius: rho,
        gamma_norms: identity_norms(2, vec![]),
        omega_norms: identity_norms(2, vec![]),
        eval: Arc::new(|_eps, g| {
            DVector::from_column_slice(&[g[0] * g[0] - g[1] * g[1], 2.0 * g[0] * g[1]])
        }),
        diff: Some(Arc::new(|_eps, g, dirs| match dirs {
            [u] => DVector::from_column_slice(&[
                2.0 * (g[0] * u[0] - g[1] * u[1]),
                2.0 * (g[1] * u[0] + g[0] * u[1]),
            ]),
            [u, v] => DVector::from_column_slice(&[
                2.0 * (u[0] * v[0] - u[1] * v[1]),
                2.0 * (u[0] * v[1] + u[1] * v[0]),
            ]),
            _ => DVector::zeros(2),
        })),
        max_analytic_order: 2,
        declared_constants: Some(constants),
        declared_index: 0,
    })
    .expect("squared-map model is well formed")
}

/// Weight closure shared by the shrink models: `diag(1, 1/ε)` for ε > 0 and
/// the identity at ε = 0 (the parameter is the first coordinate).
fn shrink_weight(eps: &[f64]) -> WeightMatrix {
    let e = eps[0];
    if e <= 0.0 {
        WeightMatrix::identity(2)
    } else {
        WeightMatrix::from_diagonal(&[1.0, 1.0 / e]).expect("positive diagonal")
    }
}

/// Two-parameter shrink family on `Δ = [0,1] × [0, tau_max]`.
///
/// Healthy variant: `F_{(ε,τ)}(x,y) = (x² + xy − τ, y − εx)` with both norms
/// weighted `diag(1, 1/ε)`. The slow direction carries the target
/// complement; the reduced map is `(1+ε)k² − τ` with zeros at
/// `±sqrt(τ/(1+ε))` and the solution branch is `σ(k) = (k, εk)` at
/// complement coefficient `(1+ε)k² − τ`.
///
/// Broken variant (`broken = true`): `F_{(ε,τ)}(x,y) = (x² + xy + y − τ, −εx)`
/// with flat domain norms and the same weighted target norms. Its target
/// complement at the base point is the fast direction `span{(0,1)}`, whose
/// parameter-norm ratio is `ε^{-1/2}` — exactly the failure the uniform
/// complement-norm audit is designed to catch. Everything else still passes.
pub fn make_toy_shrink(tau_max: f64, broken: bool) -> Result<AdiabaticFamily> {
    if !(tau_max > 0.0 && tau_max <= 0.05) {
        return Err(AfredError::InvalidConfig(format!(
            "tau_max must lie in (0, 0.05], got {tau_max}"
        )));
    }
    let rho = 0.3;
    let delta = ParameterBox::new(vec![0.0, 0.0], vec![1.0, tau_max])?;
    let eps_zero = delta.zero();
    let weighted = NormFamily::new(
        2,
        eps_zero.clone(),
        WeightMatrix::identity(2),
        1.0,
        Arc::new(shrink_weight),
    )?;
    let gamma_norms = if broken {
        identity_norms(2, eps_zero.clone())
    } else {
        weighted.clone()
    };
    let omega_norms = weighted;
    let constants = FamilyConstants {
        c0: 1.5,
        c1: if broken { 1.05 } else { 1.5 },
        c_cok: 1.0,
        cq_prelim: 1.1,
        cq: 2.2,
        modulus_c: ModulusTable::from_closed_form(|r| 3.0 * r, rho, MODULUS_BINS),
        modulus_c_delta: ModulusTable::from_closed_form(|a| a, 1.0, MODULUS_BINS),
        modulus_c1f: ModulusTable::from_closed_form(|x| 3.0 * x, 2.0 * rho, MODULUS_BINS),
    };
    let name = if broken { "toy-shrink-broken" } else { "toy-shrink" };
    let eval: Arc<dyn Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync> = if broken {
        Arc::new(|eps: &[f64], g: &DVector<f64>| {
            let (e, t) = (eps[0], eps[1]);
            let (x, y) = (g[0], g[1]);
            DVector::from_column_slice(&[x * x + x * y + y - t, -e * x])
        })
    } else {
        Arc::new(|eps: &[f64], g: &DVector<f64>| {
            let (e, t) = (eps[0], eps[1]);
            let (x, y) = (g[0], g[1]);
            DVector::from_column_slice(&[x * x + x * y - t, y - e * x])
        })
    };
    let diff: Arc<
        dyn Fn(&[f64], &DVector<f64>, &[DVector<f64>]) -> DVector<f64> + Send + Sync,
    > = if broken {
        Arc::new(|eps: &[f64], g: &DVector<f64>, dirs: &[DVector<f64>]| {
            let e = eps[0];
            let (x, y) = (g[0], g[1]);
            match dirs {
                [u] => DVector::from_column_slice(&[
                    (2.0 * x + y) * u[0] + (x + 1.0) * u[1],
                    -e * u[0],
                ]),
                [u, v] => DVector::from_column_slice(&[
                    2.0 * u[0] * v[0] + u[0] * v[1] + u[1] * v[0],
                    0.0,
                ]),
                _ => DVector::zeros(2),
            }
        })
    } else {
        Arc::new(|eps: &[f64], g: &DVector<f64>, dirs: &[DVector<f64>]| {
            let e = eps[0];
            let (x, y) = (g[0], g[1]);
            match dirs {
                [u] => DVector::from_column_slice(&[
                    (2.0 * x + y) * u[0] + x * u[1],
                    -e * u[0] + u[1],
                ]),
                [u, v] => DVector::from_column_slice(&[
                    2.0 * u[0] * v[0] + u[0] * v[1] + u[1] * v[0],
                    0.0,
                ]),
                _ => DVector::zeros(2),
            }
        })
    };
    AdiabaticFamily::new(FamilySpec {
        name: name.into(),
        n_domain: 2,
        n_target: 2,
        delta,
        domain_radius: rho,
        gamma_norms,
        omega_norms,
        eval,
        diff: Some(diff),
        max_analytic_order: 2,
        declared_constants: Some(constants),
        declared_index: 0,
    })
}

/// Grid and geometric data for the discrete strip model.
#[derive(Debug, Clone)]
pub struct StripGrid {
    /// Number of periodic s-gridpoints.
    pub n_s: usize,
    /// Number of t-intervals (t-gridpoints are `n_t + 1`).
    pub n_t: usize,
    /// Fiber dimension per gridpoint.
    pub d: usize,
    /// Orthonormal basis columns of the boundary subspace at t = 0.
    pub lambda0: DMatrix<f64>,
    /// Orthonormal basis columns of the boundary subspace at t = 1.
    pub lambda1: DMatrix<f64>,
    /// Complex-structure-like matrix with `J² = −Id`.
    pub j_mat: DMatrix<f64>,
}

impl Default for StripGrid {
    fn default() -> Self {
        Self {
            n_s: 4,
            n_t: 2,
            d: 2,
            lambda0: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            lambda1: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            j_mat: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        }
    }
}

impl StripGrid {
    /// Like `Default` but with chosen grid sizes.
    pub fn with_size(n_s: usize, n_t: usize) -> Self {
        Self {
            n_s,
            n_t,
            ..Self::default()
        }
    }

    /// Domain dimension `n_s · (n_t + 1) · d`.
    pub fn n_domain(&self) -> usize {
        self.n_s * (self.n_t + 1) * self.d
    }

    /// Target dimension: interior rows plus boundary penalty rows.
    pub fn n_target(&self) -> usize {
        let a0 = self.lambda0.ncols();
        let a1 = self.lambda1.ncols();
        self.n_s * self.n_t * self.d + self.n_s * (self.d - a0) + self.n_s * (self.d - a1)
    }

    /// Flat index of component `a` at s-point `i` and t-level `j`.
    pub fn idx(&self, i: usize, j: usize, a: usize) -> usize {
        (j * self.n_s + i) * self.d + a
    }

    fn validate(&self) -> Result<()> {
        if self.n_s < 2 || self.n_t < 2 || self.d < 1 {
            return Err(AfredError::InvalidConfig(
                "strip grid needs n_s ≥ 2, n_t ≥ 2, d ≥ 1".into(),
            ));
        }
        if self.n_domain() > 4096 {
            return Err(AfredError::DimensionOverflow(format!(
                "strip domain dimension {} exceeds 4096",
                self.n_domain()
            )));
        }
        let d = self.d;
        if self.j_mat.nrows() != d || self.j_mat.ncols() != d {
            return Err(AfredError::DimensionMismatch("J must be d×d".into()));
        }
        let j2 = &self.j_mat * &self.j_mat;
        let id = DMatrix::<f64>::identity(d, d);
        if (j2 + &id).amax() > 1e-12 {
            return Err(AfredError::InvalidConfig("J² must equal −Id".into()));
        }
        for (name, l) in [("lambda0", &self.lambda0), ("lambda1", &self.lambda1)] {
            if l.nrows() != d || l.ncols() == 0 || l.ncols() > d {
                return Err(AfredError::DimensionMismatch(format!(
                    "{name} must be d×a with 1 ≤ a ≤ d"
                )));
            }
            let gram = l.transpose() * l;
            let ida = DMatrix::<f64>::identity(l.ncols(), l.ncols());
            if (gram - ida).amax() > 1e-12 {
                return Err(AfredError::InvalidConfig(format!(
                    "{name} columns must be orthonormal"
                )));
            }
        }
        Ok(())
    }

    /// Orthonormal basis of the orthogonal complement of `lambda` in ℝ^d.
    fn complement_of(&self, lambda: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.d;
        let w = WeightMatrix::identity(d);
        let cols: Vec<DVector<f64>> =
            (0..lambda.ncols()).map(|c| lambda.column(c).into_owned()).collect();
        let comp = crate::spaces::weighted_complement(&w, &cols);
        let mut m = DMatrix::zeros(d, comp.len());
        for (c, v) in comp.iter().enumerate() {
            m.set_column(c, v);
        }
        m
    }
}

/// Assembles the linear operator `A_ε` of the strip family as a dense matrix:
/// forward t-differences minus `ε J` times centered periodic s-differences,
/// plus boundary penalty rows expressed in the complement bases.
fn strip_operator(grid: &StripGrid, eps: f64) -> DMatrix<f64> {
    let (n_s, n_t, d) = (grid.n_s, grid.n_t, grid.d);
    let h_t = 1.0 / n_t as f64;
    let h_s = 1.0 / n_s as f64;
    let mut a = DMatrix::zeros(grid.n_target(), grid.n_domain());
    let mut row = 0;
    // Interior rows: (ξ_{j+1} − ξ_j)/h_t − ε J (ξ(i+1,j) − ξ(i−1,j))/(2 h_s).
    for j in 0..n_t {
        for i in 0..n_s {
            let ip = (i + 1) % n_s;
            let im = (i + n_s - 1) % n_s;
            for a_out in 0..d {
                a[(row + a_out, grid.idx(i, j + 1, a_out))] += 1.0 / h_t;
                a[(row + a_out, grid.idx(i, j, a_out))] -= 1.0 / h_t;
                for a_in in 0..d {
                    let jc = eps * grid.j_mat[(a_out, a_in)] / (2.0 * h_s);
                    a[(row + a_out, grid.idx(ip, j, a_in))] -= jc;
                    a[(row + a_out, grid.idx(im, j, a_in))] += jc;
                }
            }
            row += d;
        }
    }
    // Boundary penalty rows: components of ξ|_{t=0} (resp. t=1) outside the
    // boundary subspaces, in the orthonormal complement bases.
    for (level, lambda) in [(0usize, &grid.lambda0), (n_t, &grid.lambda1)] {
        let comp = grid.complement_of(lambda);
        for i in 0..n_s {
            for c in 0..comp.ncols() {
                for a_in in 0..d {
                    a[(row, grid.idx(i, level, a_in))] = comp[(a_in, c)];
                }
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, grid.n_target());
    a
}

/// Difference operators entering the strip weights.
struct StripOps {
    /// Centered periodic s-difference on the domain grid.
    ds: DMatrix<f64>,
    /// Second centered periodic s-difference on the domain grid.
    ds2: DMatrix<f64>,
    /// Forward t-difference, domain grid → interval grid.
    dt: DMatrix<f64>,
    /// Mixed difference: ds after dt.
    dst: DMatrix<f64>,
    /// Second t-difference on the domain grid.
    dt2: DMatrix<f64>,
    /// Centered periodic s-difference on the interval (target) grid.
    ds_int: DMatrix<f64>,
    /// Forward t-difference between interval levels of the target grid.
    dt_int: DMatrix<f64>,
}

fn strip_ops(grid: &StripGrid) -> StripOps {
    let (n_s, n_t, d) = (grid.n_s, grid.n_t, grid.d);
    let h_t = 1.0 / n_t as f64;
    let h_s = 1.0 / n_s as f64;
    let n_dom = grid.n_domain();
    let n_int = n_s * n_t * d;
    let int_idx = |i: usize, j: usize, a: usize| (j * n_s + i) * d + a;

    let mut ds = DMatrix::zeros(n_dom, n_dom);
    let mut ds2 = DMatrix::zeros(n_dom, n_dom);
    for j in 0..=n_t {
        for i in 0..n_s {
            let ip = (i + 1) % n_s;
            let im = (i + n_s - 1) % n_s;
            for a in 0..d {
                let r = grid.idx(i, j, a);
                ds[(r, grid.idx(ip, j, a))] += 1.0 / (2.0 * h_s);
                ds[(r, grid.idx(im, j, a))] -= 1.0 / (2.0 * h_s);
                ds2[(r, grid.idx(ip, j, a))] += 1.0 / (h_s * h_s);
                ds2[(r, grid.idx(im, j, a))] += 1.0 / (h_s * h_s);
                ds2[(r, grid.idx(i, j, a))] -= 2.0 / (h_s * h_s);
            }
        }
    }
    let mut dt = DMatrix::zeros(n_int, n_dom);
    for j in 0..n_t {
        for i in 0..n_s {
            for a in 0..d {
                let r = int_idx(i, j, a);
                dt[(r, grid.idx(i, j + 1, a))] += 1.0 / h_t;
                dt[(r, grid.idx(i, j, a))] -= 1.0 / h_t;
            }
        }
    }
    let mut ds_int = DMatrix::zeros(n_int, n_int);
    for j in 0..n_t {
        for i in 0..n_s {
            let ip = (i + 1) % n_s;
            let im = (i + n_s - 1) % n_s;
            for a in 0..d {
                let r = int_idx(i, j, a);
                ds_int[(r, int_idx(ip, j, a))] += 1.0 / (2.0 * h_s);
                ds_int[(r, int_idx(im, j, a))] -= 1.0 / (2.0 * h_s);
            }
        }
    }
    let dst = &ds_int * &dt;
    let mut dt2 = DMatrix::zeros(n_s * (n_t - 1) * d, n_dom);
    for j in 0..(n_t - 1) {
        for i in 0..n_s {
            for a in 0..d {
                let r = (j * n_s + i) * d + a;
                dt2[(r, grid.idx(i, j + 2, a))] += 1.0 / (h_t * h_t);
                dt2[(r, grid.idx(i, j + 1, a))] -= 2.0 / (h_t * h_t);
                dt2[(r, grid.idx(i, j, a))] += 1.0 / (h_t * h_t);
            }
        }
    }
    let mut dt_int = DMatrix::zeros(n_s * (n_t - 1) * d, n_int);
    for j in 0..(n_t - 1) {
        for i in 0..n_s {
            for a in 0..d {
                let r = (j * n_s + i) * d + a;
                dt_int[(r, int_idx(i, j + 1, a))] += 1.0 / h_t;
                dt_int[(r, int_idx(i, j, a))] -= 1.0 / h_t;
            }
        }
    }
    StripOps {
        ds,
        ds2,
        dt,
        dst,
        dt2,
        ds_int,
        dt_int,
    }
}

/// Domain weight: value/s-derivative energies at weight 1, first t-derivative
/// energies at `ε^{-1}`, second t-derivative energy at `ε^{-3}` (squared-norm
/// coefficients of the `ε^{-1/2}`, `ε^{-3/2}` norm weights).
fn strip_gamma_weight(ops: &StripOps, n_dom: usize, eps: f64) -> DMatrix<f64> {
    let e1 = 1.0 / eps;
    let e3 = 1.0 / (eps * eps * eps);
    DMatrix::identity(n_dom, n_dom)
        + ops.ds.transpose() * &ops.ds
        + ops.ds2.transpose() * &ops.ds2
        + (ops.dt.transpose() * &ops.dt + ops.dst.transpose() * &ops.dst) * e1
        + (ops.dt2.transpose() * &ops.dt2) * e3
}

/// Target weight: interior value/s-derivative energies at `ε^{-1}` and
/// t-difference energy at `ε^{-3}`; boundary rows at weight 1.
fn strip_omega_weight(
    ops: &StripOps,
    n_int: usize,
    n_target: usize,
    eps: f64,
) -> DMatrix<f64> {
    let e1 = 1.0 / eps;
    let e3 = 1.0 / (eps * eps * eps);
    let w_int = DMatrix::identity(n_int, n_int) * e1
        + (ops.ds_int.transpose() * &ops.ds_int) * e1
        + (ops.dt_int.transpose() * &ops.dt_int) * e3;
    let mut w = DMatrix::identity(n_target, n_target);
    w.view_mut((0, 0), (n_int, n_int)).copy_from(&w_int);
    w
}

/// Weight evaluations floor ε here: the `ε^{-3}` energies reach 10¹²-scale
/// entries at the floor already, and far beneath it the SPD factorization
/// loses definiteness to roundoff. The transport operator itself never
/// clamps — only the norms freeze.
const STRIP_WEIGHT_EPS_FLOOR: f64 = 1e-4;

/// Linear transport family on the strip grid over `Δ = [0, 1]`.
///
/// The base-point weights equal the ε = 1 weights, so the norm lower bound
/// holds with constant exactly 1 on the whole box. No scalar constants are
/// declared; the diagnostics estimate them.
pub fn make_discrete_strip(grid: StripGrid) -> Result<AdiabaticFamily> {
    grid.validate()?;
    let n_dom = grid.n_domain();
    let n_tar = grid.n_target();
    let n_int = grid.n_s * grid.n_t * grid.d;
    let delta = ParameterBox::new(vec![0.0], vec![1.0])?;
    let eps_zero = delta.zero();
    let ops = Arc::new(strip_ops(&grid));

    let gamma_zero = WeightMatrix::new(strip_gamma_weight(&ops, n_dom, 1.0))?;
    let omega_zero = WeightMatrix::new(strip_omega_weight(&ops, n_int, n_tar, 1.0))?;
    let ops_g = ops.clone();
    let gamma_norms = NormFamily::new(
        n_dom,
        eps_zero.clone(),
        gamma_zero,
        1.0,
        Arc::new(move |eps: &[f64]| {
            let e = eps[0].max(STRIP_WEIGHT_EPS_FLOOR);
            WeightMatrix::new(strip_gamma_weight(&ops_g, n_dom, e))
                .expect("strip domain weight is positive definite")
        }),
    )?;
    let ops_o = ops.clone();
    let omega_norms = NormFamily::new(
        n_tar,
        eps_zero.clone(),
        omega_zero,
        1.0,
        Arc::new(move |eps: &[f64]| {
            let e = eps[0].max(STRIP_WEIGHT_EPS_FLOOR);
            WeightMatrix::new(strip_omega_weight(&ops_o, n_int, n_tar, e))
                .expect("strip target weight is positive definite")
        }),
    )?;

    let a0 = grid.lambda0.ncols() as i64;
    let a1 = grid.lambda1.ncols() as i64;
    let declared_index = grid.n_s as i64 * (grid.d as i64 - a0 - a1);

    let grid_eval = grid.clone();
    let grid_diff = grid.clone();
    AdiabaticFamily::new(FamilySpec {
        name: "discrete-strip".into(),
        n_domain: n_dom,
        n_target: n_tar,
        delta,
        domain_radius: 1.0,
        gamma_norms,
        omega_norms,
        eval: Arc::new(move |eps: &[f64], g: &DVector<f64>| {
            strip_operator(&grid_eval, eps[0]) * g
        }),
        diff: Some(Arc::new(
            move |eps: &[f64], _g: &DVector<f64>, dirs: &[DVector<f64>]| match dirs {
                [u] => strip_operator(&grid_diff, eps[0]) * u,
                _ => DVector::zeros(grid_diff.n_target()),
            },
        )),
        max_analytic_order: 2,
        declared_constants: None,
        declared_index,
    })
}

/// Forward half of the strip auxiliary isomorphism: the divided forward
/// t-differences together with the boundary-subspace coefficients of the
/// t = 0 trace.
pub fn strip_aux_forward(grid: &StripGrid, xi: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    grid.validate()?;
    if xi.len() != grid.n_domain() {
        return Err(AfredError::DimensionMismatch(
            "field has wrong dimension for the grid".into(),
        ));
    }
    let (n_s, n_t, d) = (grid.n_s, grid.n_t, grid.d);
    let h_t = 1.0 / n_t as f64;
    let a0 = grid.lambda0.ncols();
    let mut eta = DVector::zeros(n_s * n_t * d);
    for j in 0..n_t {
        for i in 0..n_s {
            for a in 0..d {
                eta[(j * n_s + i) * d + a] =
                    (xi[grid.idx(i, j + 1, a)] - xi[grid.idx(i, j, a)]) / h_t;
            }
        }
    }
    let mut lambda = DVector::zeros(n_s * a0);
    for i in 0..n_s {
        for b in 0..a0 {
            let mut acc = 0.0;
            for a in 0..d {
                acc += grid.lambda0[(a, b)] * xi[grid.idx(i, 0, a)];
            }
            lambda[i * a0 + b] = acc;
        }
    }
    Ok((eta, lambda))
}

/// Inverse half of the auxiliary isomorphism: lift the boundary coefficients,
/// accumulate the t-differences, and project the total increment off the
/// boundary subspace so the forward map recovers `(η, λ)` exactly.
pub fn strip_aux_inverse(
    grid: &StripGrid,
    eta: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    grid.validate()?;
    let (n_s, n_t, d) = (grid.n_s, grid.n_t, grid.d);
    let h_t = 1.0 / n_t as f64;
    let a0 = grid.lambda0.ncols();
    if eta.len() != n_s * n_t * d || lambda.len() != n_s * a0 {
        return Err(AfredError::DimensionMismatch(
            "eta or lambda has wrong dimension for the grid".into(),
        ));
    }
    let mut xi = DVector::zeros(grid.n_domain());
    for i in 0..n_s {
        // lift(λ) ∈ span(Λ0).
        let mut base = DVector::<f64>::zeros(d);
        for b in 0..a0 {
            for a in 0..d {
                base[a] += grid.lambda0[(a, b)] * lambda[i * a0 + b];
            }
        }
        // Cumulative sums of η·h_t and the Λ0-orthocomplement part of the
        // total increment.
        let mut cums: Vec<DVector<f64>> = Vec::with_capacity(n_t + 1);
        let mut acc = DVector::<f64>::zeros(d);
        cums.push(acc.clone());
        for j in 0..n_t {
            for a in 0..d {
                acc[a] += h_t * eta[(j * n_s + i) * d + a];
            }
            cums.push(acc.clone());
        }
        let total = cums[n_t].clone();
        let mut proj = DVector::<f64>::zeros(d);
        for b in 0..a0 {
            let mut coeff = 0.0;
            for a in 0..d {
                coeff += grid.lambda0[(a, b)] * total[a];
            }
            for a in 0..d {
                proj[a] += grid.lambda0[(a, b)] * coeff;
            }
        }
        let correction = total - proj;
        for (j, c) in cums.iter().enumerate() {
            for a in 0..d {
                xi[grid.idx(i, j, a)] = base[a] + c[a] - correction[a];
            }
        }
    }
    Ok(xi)
}

/// Looks up a built-in family by its CLI name.
pub fn model_by_name(name: &str, tau_max: f64, grid: Option<StripGrid>) -> Result<AdiabaticFamily> {
    match name {
        "classical-parabola" => Ok(make_classical_parabola()),
        "squared-map" => Ok(make_squared_map()),
        "toy-shrink" => make_toy_shrink(tau_max, false),
        "toy-shrink-broken" => make_toy_shrink(tau_max, true),
        "discrete-strip" => make_discrete_strip(grid.unwrap_or_default()),
        other => Err(AfredError::InvalidConfig(format!(
            "unknown family '{other}' (expected classical-parabola, squared-map, toy-shrink, toy-shrink-broken, or discrete-strip)"
        ))),
    }
}

/// Names of all built-in families.
pub const MODEL_NAMES: [&str; 5] = [
    "classical-parabola",
    "squared-map",
    "toy-shrink",
    "toy-shrink-broken",
    "discrete-strip",
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn toy_shrink_frozen_evaluation() {
        // At (ε,τ) = (0.25, 0.01), γ = (0.1, 0.025):
        // x² + xy − τ = 0.01 + 0.0025 − 0.01 = 0.0025 and y − εx = 0.
        let fam = make_toy_shrink(0.01, false).unwrap();
        let g = DVector::from_column_slice(&[0.1, 0.025]);
        let out = fam.evaluate(&[0.25, 0.01], &g).unwrap();
        assert_relative_eq!(out[0], 0.0025, epsilon = 1e-15);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn toy_shrink_jacobian_matches_closed_form() {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let g = DVector::from_column_slice(&[0.07, -0.03]);
        let jac = fam.jacobian(&[0.4, 0.005], &g).unwrap();
        // [[2x + y, x], [−ε, 1]]
        assert_relative_eq!(jac[(0, 0)], 2.0 * 0.07 - 0.03, epsilon = 1e-12);
        assert_relative_eq!(jac[(0, 1)], 0.07, epsilon = 1e-12);
        assert_relative_eq!(jac[(1, 0)], -0.4, epsilon = 1e-12);
        assert_relative_eq!(jac[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn toy_shrink_weights_scale_fast_direction() {
        let fam = make_toy_shrink(0.01, false).unwrap();
        let fast = DVector::from_column_slice(&[0.0, 1.0]);
        // ‖(0,1)‖ at ε = 0.25 is sqrt(1/0.25) = 2; at the base point it is 1.
        assert_relative_eq!(fam.gamma_norms().norm(&[0.25, 0.0], &fast), 2.0);
        assert_relative_eq!(fam.gamma_norms().norm_at_zero(&fast), 1.0);
    }

    #[test]
    fn broken_variant_keeps_fast_row_linear_in_eps() {
        let fam = make_toy_shrink(0.01, true).unwrap();
        let g = DVector::from_column_slice(&[0.1, 0.0]);
        let out = fam.evaluate(&[0.5, 0.0], &g).unwrap();
        // (x² + xy + y − τ, −εx) = (0.01, −0.05)
        assert_relative_eq!(out[0], 0.01, epsilon = 1e-15);
        assert_relative_eq!(out[1], -0.05, epsilon = 1e-15);
    }

    #[test]
    fn strip_dimensions_and_index() {
        let grid = StripGrid::default();
        assert_eq!(grid.n_domain(), 24);
        assert_eq!(grid.n_target(), 24);
        let fam = make_discrete_strip(grid).unwrap();
        assert_eq!(fam.declared_index(), 0);
        // Linear and homogeneous: F_ε(0) = 0 at every parameter.
        let zero = DVector::zeros(24);
        let out = fam.evaluate(&[0.7], &zero).unwrap();
        assert!(out.amax() == 0.0);
    }

    #[test]
    fn strip_operator_is_the_jacobian() {
        let grid = StripGrid::default();
        let fam = make_discrete_strip(grid.clone()).unwrap();
        let g = DVector::from_fn(24, |i, _| (i as f64 * 0.37).sin() * 0.01);
        let v = DVector::from_fn(24, |i, _| (i as f64 * 0.11).cos());
        let lhs = fam.differential(&[0.3], &g, &[v.clone()]).unwrap();
        let rhs = strip_operator(&grid, 0.3) * v;
        assert_relative_eq!((lhs - rhs).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn strip_t_constant_boundary_fields_are_kernel_at_base_point() {
        // A t-constant field valued in Λ0 ∩ Λ1 at each s solves F_0(ξ) = 0.
        let grid = StripGrid::default();
        let fam = make_discrete_strip(grid.clone()).unwrap();
        let mut xi = DVector::zeros(grid.n_domain());
        for i in 0..grid.n_s {
            for j in 0..=grid.n_t {
                xi[grid.idx(i, j, 0)] = (i as f64 + 1.0) * 0.001;
            }
        }
        let out = fam.evaluate(&[0.0], &xi).unwrap();
        assert!(out.amax() < 1e-14);
        // At ε > 0 the transport term activates and the field leaves the
        // kernel.
        let out_eps = fam.evaluate(&[0.5], &xi).unwrap();
        assert!(out_eps.amax() > 1e-6);
    }

    #[test]
    fn aux_iso_forward_of_inverse_is_identity() {
        let grid = StripGrid::with_size(5, 3);
        let n_eta = grid.n_s * grid.n_t * grid.d;
        let n_lam = grid.n_s * grid.lambda0.ncols();
        let eta = DVector::from_fn(n_eta, |i, _| ((i * 7 + 3) as f64 * 0.139).sin());
        let lam = DVector::from_fn(n_lam, |i, _| ((i * 5 + 1) as f64 * 0.233).cos());
        let xi = strip_aux_inverse(&grid, &eta, &lam).unwrap();
        let (eta2, lam2) = strip_aux_forward(&grid, &xi).unwrap();
        assert!((eta2 - eta).amax() < 1e-12);
        assert!((lam2 - lam).amax() < 1e-12);
    }

    #[test]
    fn aux_iso_inverse_of_forward_on_boundary_subspace() {
        // Fields whose t = 1 trace lies in Λ0 are reconstructed exactly.
        let grid = StripGrid::default();
        let mut xi = DVector::zeros(grid.n_domain());
        for i in 0..grid.n_s {
            for j in 0..=grid.n_t {
                let f = (i as f64 + 1.0) * 0.1 + j as f64 * 0.05;
                xi[grid.idx(i, j, 0)] = f;
                // Second component must vanish at t = 1 (Λ0 = span{e₁}).
                xi[grid.idx(i, j, 1)] =
                    if j == grid.n_t { 0.0 } else { f * 0.5 - 0.02 };
            }
        }
        let (eta, lam) = strip_aux_forward(&grid, &xi).unwrap();
        let back = strip_aux_inverse(&grid, &eta, &lam).unwrap();
        assert!((back - xi).amax() < 1e-12);
    }

    #[test]
    fn model_lookup_by_name() {
        for name in MODEL_NAMES {
            let fam = model_by_name(name, 0.01, None).unwrap();
            assert_eq!(fam.name(), name);
        }
        assert!(model_by_name("nope", 0.01, None).is_err());
    }
}
