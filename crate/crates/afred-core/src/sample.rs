//! Deterministic sample plans: Halton sequences on boxes and weighted balls.
//!
//! All audits draw their sample points from these routines, so a fixed seed
//! yields bit-identical samples on every platform and worker count. The seed
//! offsets the Halton index (a leap-frog style scramble), and ball sampling
//! maps low-discrepancy cube points through the inverse normal CDF.

use crate::spaces::{ParameterBox, WeightMatrix};
use nalgebra::DVector;

/// First 25 primes, the Halton bases for up to 25 dimensions; higher
/// dimensions cycle through recomputed primes.
const PRIMES: [usize; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97,
];

fn nth_prime(n: usize) -> usize {
    if n < PRIMES.len() {
        return PRIMES[n];
    }
    // Simple sieve extension; dimensions beyond 25 are rare here.
    let mut count = PRIMES.len();
    let mut candidate = *PRIMES.last().unwrap();
    loop {
        candidate += 2;
        if (2..).take_while(|d| d * d <= candidate).all(|d| candidate % d != 0) {
            if count == n {
                return candidate;
            }
            count += 1;
        }
    }
}

/// Radical-inverse of `index` in the given base.
fn radical_inverse(mut index: usize, base: usize) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while index > 0 {
        denom *= base as f64;
        inv += (index % base) as f64 / denom;
        index /= base;
    }
    inv
}

/// `count` Halton points in the unit cube `[0,1)^dim`; the seed shifts the
/// starting index so distinct seeds give distinct, still low-discrepancy,
/// point sets.
pub fn halton_cube(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let offset = 17 + (seed % 8191) as usize * 7;
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|d| radical_inverse(offset + i, nth_prime(d)))
                .collect()
        })
        .collect()
}

/// Halton points mapped into a parameter box. A zero-dimensional box yields
/// `count` copies of its single point.
pub fn halton_box(bx: &ParameterBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if bx.dim() == 0 {
        return vec![Vec::new(); count];
    }
    halton_cube(bx.dim(), count, seed)
        .into_iter()
        .map(|u| bx.lerp(&u))
        .collect()
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// absolute error below 1.2e−9, deterministic).
pub fn inv_norm_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_norm_cdf(1.0 - p)
    }
}

/// `count` unit-ish direction vectors in ℝ^dim from Halton points via the
/// inverse normal map; each is normalized to Euclidean length 1.
pub fn halton_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    halton_cube(dim, count, seed)
        .into_iter()
        .map(|u| {
            let mut v = DVector::from_iterator(
                dim,
                u.iter().map(|&x| inv_norm_cdf(x.clamp(1e-12, 1.0 - 1e-12))),
            );
            let n = v.norm();
            if n > 0.0 {
                v /= n;
            } else {
                v[0] = 1.0;
            }
            v
        })
        .collect()
}

/// `count` points in the closed weighted ball `{‖v‖_W ≤ radius}`, drawn from
/// a Halton set: direction via inverse-normal transform, radius via the
/// `u^{1/dim}` volume map, then pulled back through `W^{-1/2}`.
pub fn halton_ball(
    weight: &WeightMatrix,
    radius: f64,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let dim = weight.dim();
    let cube = halton_cube(dim + 1, count, seed);
    cube.into_iter()
        .map(|u| {
            let mut y = DVector::from_iterator(
                dim,
                u[..dim]
                    .iter()
                    .map(|&x| inv_norm_cdf(x.clamp(1e-12, 1.0 - 1e-12))),
            );
            let n = y.norm();
            if n > 0.0 {
                y /= n;
            } else {
                y[0] = 1.0;
            }
            let r = radius * u[dim].powf(1.0 / dim.max(1) as f64);
            // W^{-1/2} maps the Euclidean ball onto the weighted ball.
            let v = weight.inv_sqrt() * y;
            v * r
        })
        .collect()
}

/// A deterministic sampling plan shared by the audits.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplePlan {
    /// Seed for every Halton stream derived from this plan.
    pub seed: u64,
    /// Number of parameter samples drawn from the box.
    pub n_eps: usize,
    /// Number of vector samples per parameter (directions, ball points).
    pub n_vectors: usize,
    /// Number of pair samples for two-point estimates.
    pub n_pairs: usize,
    /// Extra parameter points audited verbatim in addition to the Halton
    /// draws (the base point is always included).
    pub extra_eps: Vec<Vec<f64>>,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            seed: 7,
            n_eps: 12,
            n_vectors: 1000,
            n_pairs: 100,
            extra_eps: Vec::new(),
        }
    }
}

impl SamplePlan {
    /// Smaller plan for quick checks.
    pub fn quick(seed: u64) -> Self {
        Self {
            seed,
            n_eps: 6,
            n_vectors: 200,
            n_pairs: 50,
            extra_eps: Vec::new(),
        }
    }

    /// The parameter points this plan audits: the base point, the explicit
    /// extras, then Halton draws from the box.
    pub fn eps_points(&self, bx: &ParameterBox) -> Vec<Vec<f64>> {
        let mut pts = vec![bx.zero()];
        for e in &self.extra_eps {
            if bx.contains(e) {
                pts.push(e.clone());
            }
        }
        pts.extend(halton_box(bx, self.n_eps, self.seed));
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn halton_is_deterministic_and_in_cube() {
        let a = halton_cube(3, 50, 42);
        let b = halton_cube(3, 50, 42);
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&x| (0.0..1.0).contains(&x)));
        let c = halton_cube(3, 50, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn inv_norm_cdf_hits_known_quantiles() {
        assert_relative_eq!(inv_norm_cdf(0.5), 0.0, epsilon = 1e-9);
        // Φ⁻¹(0.975) = 1.959963984540054
        assert_relative_eq!(inv_norm_cdf(0.975), 1.959963984540054, epsilon = 1e-8);
        assert_relative_eq!(inv_norm_cdf(0.025), -1.959963984540054, epsilon = 1e-8);
    }

    #[test]
    fn ball_samples_respect_weighted_radius() {
        let w = WeightMatrix::from_diagonal(&[1.0, 100.0]).unwrap();
        let pts = halton_ball(&w, 0.5, 200, 9);
        for p in &pts {
            assert!(w.norm(p) <= 0.5 + 1e-12);
        }
        // The samples should fill a decent part of the ball, not collapse.
        let max_norm = pts.iter().map(|p| w.norm(p)).fold(0.0_f64, f64::max);
        assert!(max_norm > 0.4);
    }

    #[test]
    fn directions_have_unit_length() {
        for v in halton_directions(5, 100, 3) {
            assert_relative_eq!(v.norm(), 1.0, max_relative = 1e-12);
        }
    }
}
