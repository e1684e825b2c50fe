//! Property tests for the structural invariants: norm axioms, tangent
//! bookkeeping, the auxiliary strip isomorphism, sampling determinism, and
//! canonical serialization.

use afred_core::models::{strip_aux_forward, strip_aux_inverse, StripGrid};
use afred_core::report::canonical_json;
use afred_core::sample::{halton_ball, halton_cube, halton_directions};
use afred_core::spaces::{TangentVector, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Random SPD weight from a random square factor plus a diagonal shift.
fn spd_weight(dim: usize, entries: Vec<f64>) -> WeightMatrix {
    let a = DMatrix::from_vec(dim, dim, entries);
    let w = &a.transpose() * &a + DMatrix::<f64>::identity(dim, dim) * 0.5;
    WeightMatrix::new(w).expect("shifted Gram matrix is SPD")
}

fn small_floats(count: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weighted_norm_axioms(dim in 1usize..5, e in small_floats(16), u in small_floats(4), v in small_floats(4), c in -3.0f64..3.0) {
        let w = spd_weight(dim, e[..dim * dim].to_vec());
        let u = DVector::from_vec(u[..dim].to_vec());
        let v = DVector::from_vec(v[..dim].to_vec());
        // Positivity, homogeneity, triangle inequality.
        prop_assert!(w.norm(&u) >= 0.0);
        prop_assert!((w.norm(&(&u * c)) - c.abs() * w.norm(&u)).abs() <= 1e-10 * (1.0 + w.norm(&u)));
        prop_assert!(w.norm(&(&u + &v)) <= w.norm(&u) + w.norm(&v) + 1e-10);
        // Cauchy-Schwarz for the induced inner product.
        prop_assert!(w.inner(&u, &v).abs() <= w.norm(&u) * w.norm(&v) + 1e-10);
    }

    #[test]
    fn tangent_split_join_roundtrip(level in 0u32..3, dim in 1usize..4, e in small_floats(32)) {
        let entries: Vec<DVector<f64>> = (0..(1usize << level))
            .map(|i| DVector::from_vec(e[i * dim..(i + 1) * dim].to_vec()))
            .collect();
        let tv = TangentVector::new(level, entries.clone()).unwrap();
        if level > 0 {
            let (lo, hi) = tv.split();
            let back = TangentVector::join(lo, hi).unwrap();
            prop_assert_eq!(back.entries(), tv.entries());
        }
        prop_assert_eq!(tv.dim(), dim);
    }

    #[test]
    fn strip_aux_isomorphism_roundtrip(e in small_floats(64), n_s in 2usize..5, n_t in 2usize..4) {
        let grid = StripGrid::with_size(n_s, n_t);
        let n_eta = n_s * grid.d * n_t;
        let n_lambda = n_s * grid.lambda0.ncols();
        let eta = DVector::from_vec(e.iter().cycle().take(n_eta).copied().collect());
        let lambda = DVector::from_vec(e.iter().rev().cycle().take(n_lambda).copied().collect());
        let xi = strip_aux_inverse(&grid, &eta, &lambda).unwrap();
        let (eta2, lambda2) = strip_aux_forward(&grid, &xi).unwrap();
        prop_assert!((eta2 - &eta).norm() <= 1e-10 * (1.0 + eta.norm()));
        prop_assert!((lambda2 - &lambda).norm() <= 1e-10 * (1.0 + lambda.norm()));
    }

    #[test]
    fn halton_points_are_deterministic(dim in 1usize..6, count in 1usize..40, seed in 0u64..1000) {
        let a = halton_cube(dim, count, seed);
        let b = halton_cube(dim, count, seed);
        prop_assert_eq!(a, b);
        let d1 = halton_directions(dim, count, seed);
        let d2 = halton_directions(dim, count, seed);
        prop_assert_eq!(d1, d2);
    }

    #[test]
    fn halton_ball_stays_inside(dim in 1usize..4, e in small_floats(9), radius in 0.01f64..2.0, seed in 0u64..100) {
        let w = spd_weight(dim, e[..dim * dim].to_vec());
        for p in halton_ball(&w, radius, 24, seed) {
            prop_assert!(w.norm(&p) <= radius * (1.0 + 1e-12));
        }
    }

    #[test]
    fn canonical_json_roundtrips_floats(bits in proptest::collection::vec(any::<u64>(), 1..8)) {
        let vals: Vec<f64> = bits
            .iter()
            .map(|&b| f64::from_bits(b))
            .filter(|x| x.is_finite())
            .collect();
        let s1 = canonical_json(&vals).unwrap();
        let s2 = canonical_json(&vals).unwrap();
        prop_assert_eq!(&s1, &s2);
        let parsed: Vec<f64> = serde_json::from_str(&s1).unwrap();
        prop_assert_eq!(parsed, vals);
    }
}
