mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use recovery_core::geometry::{ExtendedReal, ModelSet};

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0_f64, n).prop_map(DVector::from_vec)
}

/// Random model set of dimension `n` together with a seed for its matrices.
fn model_set(n: usize) -> impl Strategy<Value = ModelSet> {
    (0..3usize, any::<u64>(), 0.1..3.0_f64).prop_map(move |(kind, seed, r)| {
        let mut rng = common::rng(seed);
        match kind {
            0 => ModelSet::ellipsoid(common::well_conditioned(&mut rng, n)).unwrap(),
            1 => ModelSet::cube(n, r).unwrap(),
            _ => {
                let k = seed as usize % n;
                ModelSet::approximability(common::orthonormal_columns(&mut rng, n, k), r).unwrap()
            }
        }
    })
}

fn set_and_vectors() -> impl Strategy<Value = (ModelSet, DVector<f64>, DVector<f64>)> {
    (1..=6usize).prop_flat_map(|n| (model_set(n), vector(n), vector(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gauge_is_positively_homogeneous_and_even(
        (set, f, _) in set_and_vectors(),
        t in 0.01..100.0_f64,
    ) {
        let g = set.gauge(&f).unwrap().to_f64();
        let scaled = set.gauge(&(&f * t)).unwrap().to_f64();
        prop_assert!((scaled - t * g).abs() <= 1e-10 * (1.0 + t * g));
        prop_assert_eq!(set.gauge(&-&f).unwrap(), set.gauge(&f).unwrap());
    }

    #[test]
    fn support_bounds_pairing((set, f, c) in set_and_vectors()) {
        let g = set.gauge(&f).unwrap().to_f64();
        prop_assume!(g > 0.0);
        let unit = &f / g;
        if let ExtendedReal::Finite(h) = set.support_value(&c).unwrap() {
            prop_assert!(c.dot(&unit).abs() <= h + 1e-10 * (1.0 + h));
        }
    }

    #[test]
    fn support_is_even_and_subadditive((set, c, d) in set_and_vectors()) {
        let hc = set.support_value(&c).unwrap();
        prop_assert_eq!(set.support_value(&-&c).unwrap(), hc);
        let hd = set.support_value(&d).unwrap();
        let sum = set.support_value(&(&c + &d)).unwrap();
        if let (ExtendedReal::Finite(s), ExtendedReal::Finite(x)) = (sum, hc + hd) {
            prop_assert!(s <= x + 1e-10 * (1.0 + x));
        }
    }

    #[test]
    fn box_support_matches_vertex_enumeration(
        c in (1..=6usize).prop_flat_map(vector),
        tau in 0.1..3.0_f64,
    ) {
        let set = ModelSet::cube(c.len(), tau).unwrap();
        let exact = common::box_support_by_vertices(&c, tau);
        let h = set.support_value(&c).unwrap().to_f64();
        prop_assert!((h - exact).abs() <= 1e-12 * (1.0 + exact), "{} vs {}", h, exact);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipsoid_support_matches_projected_ascent(
        (seed, c) in (1..=5usize).prop_flat_map(|n| (any::<u64>(), vector(n))),
    ) {
        prop_assume!(c.norm() > 1e-3);
        let mut rng = common::rng(seed);
        let a = common::well_conditioned(&mut rng, c.len());
        let set = ModelSet::ellipsoid(a.clone()).unwrap();
        let oracle = common::ellipsoid_support_by_ascent(&a.tr_mul(&a), &c);
        let h = set.support_value(&c).unwrap().to_f64();
        prop_assert!((h - oracle).abs() <= 1e-6 * oracle, "{} vs {}", h, oracle);
    }
}

#[test]
fn approximability_support_is_infinite_off_the_complement() {
    let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
    let set = ModelSet::approximability(v, 0.5).unwrap();
    let along = DVector::from_vec(vec![1.0, 2.0, 0.0]);
    assert_eq!(set.support_value(&along).unwrap(), ExtendedReal::Infinite);
    let perp = DVector::from_vec(vec![0.0, 3.0, 4.0]);
    assert_eq!(set.support_value(&perp).unwrap(), ExtendedReal::Finite(2.5));
    assert!(!set.is_bounded());
}

#[test]
fn infinity_serialises_as_string() {
    let text = serde_json::to_string(&ExtendedReal::Infinite).unwrap();
    assert_eq!(text, "\"inf\"");
    let back: ExtendedReal = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ExtendedReal::Infinite);
    let finite: ExtendedReal = serde_json::from_str("1.5").unwrap();
    assert_eq!(finite, ExtendedReal::Finite(1.5));
}

#[test]
fn regularity_detects_shared_kernel() {
    // V = e₁ and Λ kills e₁: e₁ has zero gauge and zero observation
    let v = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let set = ModelSet::approximability(v, 1.0).unwrap();
    let lambda = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let r = set.regularity(&lambda).unwrap();
    assert!(!r.regular);
    let w = r.witness.unwrap();
    assert!(w[1].abs() < 1e-12 && (w[0].abs() - 1.0).abs() < 1e-12);

    let lambda = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    assert!(set.regularity(&lambda).unwrap().regular);
}
