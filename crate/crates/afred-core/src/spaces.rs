//! Weighted inner-product spaces, parameter boxes, norm families, and
//! tangent vectors.
//!
//! Every norm in this crate is induced by a symmetric positive definite
//! weight matrix `W`: `‖v‖_W = sqrt(vᵀ W v)`. Parameter-dependent norms are
//! represented by a [`NormFamily`] mapping a parameter point to its weight
//! matrix, with a distinguished weight at the base point of the parameter
//! box. Operator norms between weighted spaces are computed exactly as the
//! largest singular value of the weight-conjugated matrix.

use crate::error::{AfredError, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Relative tolerance used when checking weight-matrix symmetry.
const SYMMETRY_RTOL: f64 = 1e-12;

/// A symmetric positive definite weight matrix together with its symmetric
/// square root and inverse square root.
///
/// The square roots are what conjugate weighted problems into Euclidean ones:
/// `‖v‖_W = |S v|₂` with `S = W^{1/2}`, and the operator norm of
/// `A : (ℝⁿ, W_in) → (ℝᵐ, W_out)` equals `σ_max(S_out A S_in⁻¹)`.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    dim: usize,
    mat: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    /// Set when the matrix is diagonal; kept for cheap norm evaluation.
    diag: Option<DVector<f64>>,
}

impl WeightMatrix {
    /// Builds a weight from a dense symmetric positive definite matrix.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let dim = mat.nrows();
        if mat.ncols() != dim {
            return Err(AfredError::DimensionMismatch(format!(
                "weight matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let scale = mat.amax().max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (mat[(i, j)] - mat[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(AfredError::NotPositiveDefinite(format!(
                        "asymmetry at ({i},{j}): {} vs {}",
                        mat[(i, j)],
                        mat[(j, i)]
                    )));
                }
            }
        }
        // Fast path: exactly diagonal matrices (all built-in model weights).
        let is_diagonal = (0..dim)
            .all(|i| (0..dim).all(|j| i == j || mat[(i, j)] == 0.0));
        if is_diagonal {
            let d = DVector::from_iterator(dim, (0..dim).map(|i| mat[(i, i)]));
            return Self::from_diagonal_vec(d);
        }
        // Symmetric eigendecomposition gives the symmetric square root.
        let sym = (mat.clone() + mat.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(AfredError::NotPositiveDefinite(format!(
                "smallest eigenvalue {min_eig:.3e} is not positive"
            )));
        }
        let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
        let inv_sqrt_vals = sqrt_vals.map(|s| 1.0 / s);
        let q = &eig.eigenvectors;
        let sqrt = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
        let inv_sqrt = q * DMatrix::from_diagonal(&inv_sqrt_vals) * q.transpose();
        Ok(Self {
            dim,
            mat: sym,
            sqrt,
            inv_sqrt,
            diag: None,
        })
    }

    /// Builds a diagonal weight from per-coordinate positive entries.
    pub fn from_diagonal(entries: &[f64]) -> Result<Self> {
        Self::from_diagonal_vec(DVector::from_column_slice(entries))
    }

    fn from_diagonal_vec(d: DVector<f64>) -> Result<Self> {
        if let Some(bad) = d.iter().find(|x| **x <= 0.0 || !x.is_finite()) {
            return Err(AfredError::NotPositiveDefinite(format!(
                "diagonal entry {bad} is not a positive finite number"
            )));
        }
        let dim = d.len();
        let sqrt_d = d.map(f64::sqrt);
        Ok(Self {
            dim,
            mat: DMatrix::from_diagonal(&d),
            sqrt: DMatrix::from_diagonal(&sqrt_d),
            inv_sqrt: DMatrix::from_diagonal(&sqrt_d.map(|s| 1.0 / s)),
            diag: Some(d),
        })
    }

    /// The identity weight (plain Euclidean norm).
    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal_vec(DVector::from_element(dim, 1.0))
            .expect("identity weight is positive definite")
    }

    /// Block-diagonal combination of two weights; the induced norm is the
    /// ℓ²-combination of the component norms. Used for operator norms on
    /// product spaces.
    pub fn block_diag(a: &WeightMatrix, b: &WeightMatrix) -> Self {
        let dim = a.dim + b.dim;
        if let (Some(da), Some(db)) = (&a.diag, &b.diag) {
            let mut d = DVector::zeros(dim);
            d.rows_mut(0, a.dim).copy_from(da);
            d.rows_mut(a.dim, b.dim).copy_from(db);
            return Self::from_diagonal_vec(d).expect("blocks are positive definite");
        }
        let mut mat = DMatrix::zeros(dim, dim);
        mat.view_mut((0, 0), (a.dim, a.dim)).copy_from(&a.mat);
        mat.view_mut((a.dim, a.dim), (b.dim, b.dim)).copy_from(&b.mat);
        let mut sqrt = DMatrix::zeros(dim, dim);
        sqrt.view_mut((0, 0), (a.dim, a.dim)).copy_from(&a.sqrt);
        sqrt.view_mut((a.dim, a.dim), (b.dim, b.dim)).copy_from(&b.sqrt);
        let mut inv_sqrt = DMatrix::zeros(dim, dim);
        inv_sqrt
            .view_mut((0, 0), (a.dim, a.dim))
            .copy_from(&a.inv_sqrt);
        inv_sqrt
            .view_mut((a.dim, a.dim), (b.dim, b.dim))
            .copy_from(&b.inv_sqrt);
        Self {
            dim,
            mat,
            sqrt,
            inv_sqrt,
            diag: None,
        }
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The weight matrix itself.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Symmetric square root `W^{1/2}`.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Symmetric inverse square root `W^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    /// Weighted norm `sqrt(vᵀ W v)`.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        assert_eq!(v.len(), self.dim, "vector/weight dimension mismatch");
        match &self.diag {
            Some(d) => v
                .iter()
                .zip(d.iter())
                .map(|(x, w)| w * x * x)
                .sum::<f64>()
                .sqrt(),
            None => (self.sqrt.clone() * v).norm(),
        }
    }

    /// Weighted inner product `uᵀ W v`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match &self.diag {
            Some(d) => u
                .iter()
                .zip(v.iter())
                .zip(d.iter())
                .map(|((a, b), w)| w * a * b)
                .sum(),
            None => u.dot(&(&self.mat * v)),
        }
    }
}

/// Weighted norm of a vector: `sqrt(vᵀ W v)`.
pub fn weighted_norm(weight: &WeightMatrix, v: &DVector<f64>) -> f64 {
    weight.norm(v)
}

/// Exact operator norm of `a : (ℝⁿ, w_in) → (ℝᵐ, w_out)` via the largest
/// singular value of the weight-conjugated matrix `W_out^{1/2} A W_in^{-1/2}`.
pub fn weighted_op_norm(w_out: &WeightMatrix, a: &DMatrix<f64>, w_in: &WeightMatrix) -> f64 {
    assert_eq!(a.nrows(), w_out.dim(), "output dimension mismatch");
    assert_eq!(a.ncols(), w_in.dim(), "input dimension mismatch");
    let conj = w_out.sqrt() * a * w_in.inv_sqrt();
    conj.singular_values().max()
}

/// Singular values of the weight-conjugated matrix, descending.
pub fn weighted_singular_values(
    w_out: &WeightMatrix,
    a: &DMatrix<f64>,
    w_in: &WeightMatrix,
) -> Vec<f64> {
    let conj = w_out.sqrt() * a * w_in.inv_sqrt();
    let mut sv: Vec<f64> = conj.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).expect("singular values are finite"));
    sv
}

/// Orthonormalizes the columns of `basis` in the inner product of `weight`
/// by modified Gram–Schmidt, dropping columns whose residual falls below
/// `drop_tol` relative to the largest column norm. Returns the resulting
/// columns.
pub fn weighted_orthonormalize(
    weight: &WeightMatrix,
    basis: &[DVector<f64>],
    drop_tol: f64,
) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(basis.len());
    let scale = basis
        .iter()
        .map(|v| weight.norm(v))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for v in basis {
        let mut w = v.clone();
        // Two rounds of projection for numerical orthogonality.
        for _ in 0..2 {
            for q in &out {
                let coeff = weight.inner(q, &w);
                w -= q * coeff;
            }
        }
        let n = weight.norm(&w);
        if n > drop_tol * scale {
            out.push(w / n);
        }
    }
    out
}

/// Completes an orthonormal set to a full orthonormal basis of the weighted
/// space and returns only the new (complementary) directions.
pub fn weighted_complement(weight: &WeightMatrix, basis: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let dim = weight.dim();
    let mut full: Vec<DVector<f64>> = basis.to_vec();
    let mut complement = Vec::new();
    // Seed with inverse-square-root columns: they are exactly orthonormal in
    // the weighted inner product, so the projections are well scaled.
    for i in 0..dim {
        let seed: DVector<f64> = weight.inv_sqrt().column(i).into_owned();
        let mut w = seed;
        for _ in 0..2 {
            for q in &full {
                let coeff = weight.inner(q, &w);
                w -= q * coeff;
            }
        }
        let n = weight.norm(&w);
        if n > 1e-8 {
            let q = w / n;
            full.push(q.clone());
            complement.push(q);
        }
        if full.len() == dim {
            break;
        }
    }
    complement
}

/// An axis-aligned parameter box `Δ = Π [low_i, high_i]` whose distinguished
/// base point is the low corner.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl ParameterBox {
    /// Builds a box from per-coordinate bounds. Zero-dimensional boxes are
    /// allowed and describe a family with a single parameter value.
    pub fn new(lows: Vec<f64>, highs: Vec<f64>) -> Result<Self> {
        if lows.len() != highs.len() {
            return Err(AfredError::DimensionMismatch(
                "parameter box bounds have different lengths".into(),
            ));
        }
        for (l, h) in lows.iter().zip(&highs) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(AfredError::InvalidConfig(format!(
                    "invalid box interval [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lows, highs })
    }

    /// Number of parameter coordinates.
    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    /// The distinguished base point (low corner).
    pub fn zero(&self) -> Vec<f64> {
        self.lows.clone()
    }

    /// Lower corner.
    pub fn lows(&self) -> &[f64] {
        &self.lows
    }

    /// Upper corner.
    pub fn highs(&self) -> &[f64] {
        &self.highs
    }

    /// Membership test with an absolute slack for roundoff.
    pub fn contains(&self, eps: &[f64]) -> bool {
        eps.len() == self.dim()
            && eps.iter().zip(self.lows.iter().zip(&self.highs)).all(
                |(x, (l, h))| *x >= l - 1e-12 && *x <= h + 1e-12,
            )
    }

    /// Max-norm distance from the base point, the scalar argument used by
    /// parameter-continuity modulus tables.
    pub fn dist_from_zero(&self, eps: &[f64]) -> f64 {
        eps.iter()
            .zip(&self.lows)
            .map(|(x, l)| (x - l).abs())
            .fold(0.0, f64::max)
    }

    /// Shrinks the box towards the base point so that no coordinate extends
    /// more than `max_extent` from it.
    pub fn capped_at(&self, max_extent: f64) -> Self {
        let highs = self
            .lows
            .iter()
            .zip(&self.highs)
            .map(|(l, h)| h.min(l + max_extent))
            .collect();
        Self {
            lows: self.lows.clone(),
            highs,
        }
    }

    /// Maps a point of the unit cube into the box.
    pub fn lerp(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lows.iter().zip(&self.highs))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect()
    }
}

/// Hash key for a parameter point, exact on bit patterns.
fn eps_key(eps: &[f64]) -> Vec<u64> {
    eps.iter().map(|x| x.to_bits()).collect()
}

type WeightFn = dyn Fn(&[f64]) -> WeightMatrix + Send + Sync;

/// A family of weighted norms indexed by a parameter point.
///
/// The weight at the distinguished base point is stored explicitly and is
/// authoritative: `weight_at(0_Δ)` returns it even when the closure's limit
/// would disagree (weights may blow up or degenerate as the parameter
/// approaches the base point).
#[derive(Clone)]
pub struct NormFamily {
    dim: usize,
    eps_zero: Vec<f64>,
    weight_at_zero: Arc<WeightMatrix>,
    lower_bound_constant: f64,
    weight_fn: Arc<WeightFn>,
    cache: Arc<Mutex<HashMap<Vec<u64>, Arc<WeightMatrix>>>>,
}

impl std::fmt::Debug for NormFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormFamily")
            .field("dim", &self.dim)
            .field("eps_zero", &self.eps_zero)
            .field("lower_bound_constant", &self.lower_bound_constant)
            .finish()
    }
}

impl NormFamily {
    /// Builds a norm family.
    ///
    /// `lower_bound_constant` is the declared constant `C ≥ 1` for which
    /// `‖v‖_0 ≤ C · ‖v‖_ε` should hold throughout the box; it is audited,
    /// not assumed.
    pub fn new(
        dim: usize,
        eps_zero: Vec<f64>,
        weight_at_zero: WeightMatrix,
        lower_bound_constant: f64,
        weight_fn: Arc<WeightFn>,
    ) -> Result<Self> {
        if weight_at_zero.dim() != dim {
            return Err(AfredError::DimensionMismatch(
                "weight_at_zero dimension differs from declared dim".into(),
            ));
        }
        if !(lower_bound_constant >= 1.0) {
            return Err(AfredError::InvalidConfig(
                "lower bound constant must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            dim,
            eps_zero,
            weight_at_zero: Arc::new(weight_at_zero),
            lower_bound_constant,
            weight_fn,
            cache: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    /// Constant (parameter-independent) norm family.
    pub fn constant(dim: usize, eps_zero: Vec<f64>, weight: WeightMatrix) -> Result<Self> {
        let w = weight.clone();
        Self::new(dim, eps_zero, weight, 1.0, Arc::new(move |_| w.clone()))
    }

    /// Dimension of the normed space.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared constant for the lower bound `‖v‖_0 ≤ C‖v‖_ε`.
    pub fn lower_bound_constant(&self) -> f64 {
        self.lower_bound_constant
    }

    /// Weight at the distinguished base point.
    pub fn weight_at_zero(&self) -> Arc<WeightMatrix> {
        self.weight_at_zero.clone()
    }

    /// Weight at a parameter point (cached; the base point returns the
    /// stored `weight_at_zero`).
    pub fn weight_at(&self, eps: &[f64]) -> Arc<WeightMatrix> {
        if eps == self.eps_zero.as_slice() {
            return self.weight_at_zero.clone();
        }
        let key = eps_key(eps);
        if let Some(w) = self.cache.lock().expect("weight cache poisoned").get(&key) {
            return w.clone();
        }
        let w = Arc::new((self.weight_fn)(eps));
        assert_eq!(w.dim(), self.dim, "weight closure returned wrong dimension");
        self.cache
            .lock()
            .expect("weight cache poisoned")
            .insert(key, w.clone());
        w
    }

    /// Norm of `v` at parameter `eps`.
    pub fn norm(&self, eps: &[f64], v: &DVector<f64>) -> f64 {
        self.weight_at(eps).norm(v)
    }

    /// Norm of `v` at the base point.
    pub fn norm_at_zero(&self, v: &DVector<f64>) -> f64 {
        self.weight_at_zero.norm(v)
    }
}

/// Per-parameter outcome of the norm lower-bound audit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormLowerBoundSample {
    /// Parameter point audited.
    pub eps: Vec<f64>,
    /// Largest observed `‖v‖_0 / ‖v‖_ε` over the sampled vectors.
    pub max_ratio: f64,
}

/// Report of [`norm_lower_bound_audit`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct NormAuditReport {
    /// Declared constant the ratios are compared against.
    pub declared_constant: f64,
    /// Largest ratio over all parameters and samples.
    pub max_ratio: f64,
    /// Per-parameter worst ratios.
    pub per_eps: Vec<NormLowerBoundSample>,
    /// Whether every ratio stayed within the declared constant (with a 1e−9
    /// additive slack for roundoff).
    pub pass: bool,
}

/// Samples random directions and checks `‖v‖_0 ≤ C · ‖v‖_ε` at each given
/// parameter point, reporting the worst observed ratio.
pub fn norm_lower_bound_audit(
    family: &NormFamily,
    eps_list: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> NormAuditReport {
    let dim = family.dim();
    let dirs = crate::sample::halton_directions(dim, n_samples, seed);
    let mut per_eps = Vec::with_capacity(eps_list.len());
    let mut max_ratio: f64 = 0.0;
    for eps in eps_list {
        let w_eps = family.weight_at(eps);
        let w0 = family.weight_at_zero();
        let mut worst: f64 = 0.0;
        for v in &dirs {
            let denom = w_eps.norm(v);
            if denom > 0.0 {
                worst = worst.max(w0.norm(v) / denom);
            }
        }
        max_ratio = max_ratio.max(worst);
        per_eps.push(NormLowerBoundSample {
            eps: eps.clone(),
            max_ratio: worst,
        });
    }
    NormAuditReport {
        declared_constant: family.lower_bound_constant(),
        max_ratio,
        per_eps,
        pass: max_ratio <= family.lower_bound_constant() + 1e-9,
    }
}

/// A point of an iterated tangent space `T^ℓ V ≅ V^{2^ℓ}`.
///
/// Entry 0 is the base point; entries 1..2^ℓ are the fiber components. The
/// recursive identification is `T^ℓ V = T^{ℓ-1} V × T^{ℓ-1} V` with the
/// first half holding the lower-level point and the second half the
/// lower-level direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    level: u32,
    entries: Vec<DVector<f64>>,
}

impl TangentVector {
    /// Builds a tangent vector of the given level from its `2^level`
    /// components, base point first.
    pub fn new(level: u32, entries: Vec<DVector<f64>>) -> Result<Self> {
        let expected = 1usize << level;
        if entries.len() != expected {
            return Err(AfredError::DimensionMismatch(format!(
                "level-{level} tangent vector needs {expected} entries, got {}",
                entries.len()
            )));
        }
        let dim = entries[0].len();
        if entries.iter().any(|e| e.len() != dim) {
            return Err(AfredError::DimensionMismatch(
                "tangent entries have mixed dimensions".into(),
            ));
        }
        Ok(Self { level, entries })
    }

    /// Level ℓ of the tangent space.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    /// All components, base point first.
    pub fn entries(&self) -> &[DVector<f64>] {
        &self.entries
    }

    /// Base point (entry 0).
    pub fn base(&self) -> &DVector<f64> {
        &self.entries[0]
    }

    /// Splits `T^ℓ V = T^{ℓ-1} V × T^{ℓ-1} V` into (point, direction).
    pub fn split(&self) -> (TangentVector, TangentVector) {
        assert!(self.level > 0, "cannot split a level-0 tangent vector");
        let half = self.entries.len() / 2;
        let lo = TangentVector {
            level: self.level - 1,
            entries: self.entries[..half].to_vec(),
        };
        let hi = TangentVector {
            level: self.level - 1,
            entries: self.entries[half..].to_vec(),
        };
        (lo, hi)
    }

    /// Joins (point, direction) into the next-level tangent vector.
    pub fn join(lo: TangentVector, hi: TangentVector) -> Result<Self> {
        if lo.level != hi.level {
            return Err(AfredError::DimensionMismatch(
                "tangent join requires equal levels".into(),
            ));
        }
        let mut entries = lo.entries;
        entries.extend(hi.entries);
        TangentVector::new(lo.level + 1, entries)
    }
}

/// Sum and fiber norms of a tangent vector in a weighted space: the sum of
/// all component norms, and the max over the fiber components (entries ≥ 1).
pub fn tangent_norms(tv: &TangentVector, weight: &WeightMatrix) -> (f64, f64) {
    let norms: Vec<f64> = tv.entries().iter().map(|v| weight.norm(v)).collect();
    let sum = norms.iter().sum();
    let fiber = norms.iter().skip(1).fold(0.0_f64, |a, b| a.max(*b));
    (sum, fiber)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_weight_norm_matches_closed_form() {
        let w = WeightMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let v = DVector::from_column_slice(&[3.0, 0.5]);
        // sqrt(9 + 4*0.25) = sqrt(10)
        assert_relative_eq!(w.norm(&v), 10.0_f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn dense_weight_matches_diagonal_on_diagonal_input() {
        let mat = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let w = WeightMatrix::new(mat).unwrap();
        let v = DVector::from_column_slice(&[1.0, 1.0]);
        assert_relative_eq!(w.norm(&v), 10.0_f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn non_spd_weight_is_rejected() {
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            WeightMatrix::new(mat),
            Err(AfredError::NotPositiveDefinite(_))
        ));
        assert!(WeightMatrix::from_diagonal(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn op_norm_of_scaled_identity_in_weighted_spaces() {
        // A = diag(2, 3) from (ℝ², I) to (ℝ², diag(1, 1/9)): the weighted
        // norms divide the second row by 3, so the conjugated matrix is
        // diag(2, 1) and the operator norm is 2.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let w_in = WeightMatrix::identity(2);
        let w_out = WeightMatrix::from_diagonal(&[1.0, 1.0 / 9.0]).unwrap();
        assert_relative_eq!(weighted_op_norm(&w_out, &a, &w_in), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn parameter_box_base_point_is_low_corner() {
        let b =
            ParameterBox::new(vec![0.0, 0.0], vec![1.0, 0.05]).unwrap();
        assert_eq!(b.zero(), vec![0.0, 0.0]);
        assert!(b.contains(&[0.5, 0.01]));
        assert!(!b.contains(&[1.5, 0.01]));
        assert_relative_eq!(b.dist_from_zero(&[0.25, 0.01]), 0.25);
    }

    #[test]
    fn norm_family_base_weight_is_authoritative() {
        // Closure blows up as eps -> 0; the stored zero weight must win at
        // the base point itself.
        let nf = NormFamily::new(
            2,
            vec![0.0],
            WeightMatrix::identity(2),
            1.0,
            Arc::new(|eps: &[f64]| {
                WeightMatrix::from_diagonal(&[1.0, 1.0 / eps[0].max(1e-300)]).unwrap()
            }),
        )
        .unwrap();
        let v = DVector::from_column_slice(&[0.0, 1.0]);
        assert_relative_eq!(nf.norm(&[0.0], &v), 1.0);
        assert_relative_eq!(nf.norm(&[0.25], &v), 2.0);
    }

    #[test]
    fn tangent_split_join_roundtrip() {
        let e = |x: f64| DVector::from_column_slice(&[x]);
        let tv =
            TangentVector::new(2, vec![e(1.0), e(2.0), e(3.0), e(4.0)]).unwrap();
        let (lo, hi) = tv.split();
        assert_eq!(lo.entries()[1], e(2.0));
        assert_eq!(hi.entries()[0], e(3.0));
        let back = TangentVector::join(lo, hi).unwrap();
        assert_eq!(back, tv);
    }

    #[test]
    fn tangent_norms_sum_and_fiber() {
        let e = |x: f64, y: f64| DVector::from_column_slice(&[x, y]);
        let tv = TangentVector::new(
            1,
            vec![e(3.0, 4.0), e(0.0, 2.0)],
        )
        .unwrap();
        let w = WeightMatrix::identity(2);
        let (sum, fiber) = tangent_norms(&tv, &w);
        assert_relative_eq!(sum, 7.0);
        assert_relative_eq!(fiber, 2.0);
    }

    #[test]
    fn orthonormal_complement_spans_weighted_space() {
        let w = WeightMatrix::from_diagonal(&[1.0, 0.25, 9.0]).unwrap();
        let k = weighted_orthonormalize(
            &w,
            &[DVector::from_column_slice(&[1.0, 1.0, 0.0])],
            1e-12,
        );
        let c = weighted_complement(&w, &k);
        assert_eq!(c.len(), 2);
        for q in &c {
            assert_relative_eq!(w.norm(q), 1.0, max_relative = 1e-12);
            assert!(w.inner(&k[0], q).abs() < 1e-12);
        }
        assert!(w.inner(&c[0], &c[1]).abs() < 1e-12);
    }
}
