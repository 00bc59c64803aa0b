use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

use whitney::expr::{Expr, ExprFn};
use whitney::geometry::{dist, GraphCellDesc, OpenCellDesc, SetDesc};
use whitney::jet::{jet_add, jet_compose, jet_mul, JetShape, PointJet};
use whitney::verify::{finite_difference, rate_fit};

type Q = BigRational;

fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

fn rational() -> impl Strategy<Value = Q> {
    (-20i64..=20, 1i64..=7).prop_map(|(n, d)| q(n, d))
}

/// Three jets sharing one shape and base.
fn jet_triple() -> impl Strategy<Value = (PointJet<Q>, PointJet<Q>, PointJet<Q>)> {
    (1usize..=2, 0u32..=3).prop_flat_map(|(n, p)| {
        let len = JetShape::get(n, p).len();
        (
            prop::collection::vec(rational(), n),
            prop::collection::vec(rational(), len),
            prop::collection::vec(rational(), len),
            prop::collection::vec(rational(), len),
        )
            .prop_map(move |(base, a, b, c)| {
                let mk = |v: Vec<Q>| PointJet::new(JetShape::get(n, p), base.clone(), v).unwrap();
                (mk(a), mk(b), mk(c))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jets_form_a_commutative_ring((a, b, c) in jet_triple()) {
        prop_assert_eq!(jet_mul(&a, &b).unwrap(), jet_mul(&b, &a).unwrap());
        prop_assert_eq!(
            jet_mul(&jet_mul(&a, &b).unwrap(), &c).unwrap(),
            jet_mul(&a, &jet_mul(&b, &c).unwrap()).unwrap()
        );
        prop_assert_eq!(
            jet_mul(&a, &jet_add(&b, &c).unwrap()).unwrap(),
            jet_add(&jet_mul(&a, &b).unwrap(), &jet_mul(&a, &c).unwrap()).unwrap()
        );
        let one = PointJet::constant(a.n(), a.order(), a.base().to_vec(), q(1, 1));
        prop_assert_eq!(jet_mul(&a, &one).unwrap(), a.clone());
        prop_assert_eq!(jet_add(&a, &a.negate()).unwrap(), PointJet::zero(a.n(), a.order(), a.base().to_vec()));
    }

    #[test]
    fn composition_is_associative((f, g, h) in jet_triple()) {
        // f: R^n -> R^n; g, h reinterpreted on the image bases.
        let n = f.n();
        let shifted = |j: &PointJet<Q>, k: usize| {
            // a second component: shift coefficients so components differ
            let mut v = j.coeffs().to_vec();
            let len = v.len();
            v.rotate_left(k % len);
            PointJet::new(j.shape().clone(), j.base().to_vec(), v).unwrap()
        };
        let fs: Vec<PointJet<Q>> = (0..n).map(|k| shifted(&f, k)).collect();
        let fb: Vec<Q> = fs.iter().map(|j| j.value().clone()).collect();
        let gs: Vec<PointJet<Q>> = (0..n).map(|k| shifted(&g, k).rebased(fb.clone())).collect();
        let gfs: Vec<PointJet<Q>> = gs.iter().map(|gi| jet_compose(gi, &fs).unwrap()).collect();
        let gb: Vec<Q> = gs.iter().map(|j| j.value().clone()).collect();
        let hj = h.rebased(gb);
        let left = jet_compose(&jet_compose(&hj, &gs).unwrap(), &fs).unwrap();
        let right = jet_compose(&hj, &gfs).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn distance_is_monotone_and_lipschitz(
        x in prop::collection::vec(-2.0f64..2.0, 2),
        y in prop::collection::vec(-2.0f64..2.0, 2),
        extra in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let arc = Arc::new(
            GraphCellDesc::new(
                2,
                OpenCellDesc::interval(0.0, 1.0),
                vec![ExprFn::new(1, Expr::pow(Expr::var(0), 2)).unwrap()],
                vec![0, 1],
            )
            .unwrap(),
        );
        let small = SetDesc::cell_closure(arc.clone(), 10.0);
        let big = SetDesc::cell_closure(arc, 10.0).union(SetDesc::points(vec![extra]));
        let (ds, db) = (small.distance(&x), big.distance(&x));
        // A larger set is never farther.
        prop_assert!(db.lower <= ds.upper + 1e-9);
        let dy = small.distance(&y);
        prop_assert!(ds.lower <= dy.upper + dist(&x, &y) + 1e-9);
    }

    #[test]
    fn rate_fit_verdict_ignores_scale(k in 1e-6f64..1e6, e in 0.0f64..3.0, slope in 0.0f64..4.0) {
        let samples: Vec<(f64, f64)> = (0..8).map(|i| {
            let s = 0.1 * 0.5f64.powi(i);
            (s, s.powf(slope))
        }).collect();
        let scaled: Vec<(f64, f64)> = samples.iter().map(|&(s, v)| (s, k * v)).collect();
        let a = rate_fit(&samples, e).unwrap();
        let b = rate_fit(&scaled, e).unwrap();
        prop_assert_eq!(a.slope_pass, b.slope_pass);
    }

    #[test]
    fn finite_differences_converge(c in -1.0f64..1.0, x in -1.0f64..1.0, order in 1u32..=2) {
        let f = |y: &[f64]| Ok((c * y[0]).sin() + y[0].powi(3));
        let exact = match order {
            1 => c * (c * x).cos() + 3.0 * x * x,
            _ => -c * c * (c * x).sin() + 6.0 * x,
        };
        let coarse = finite_difference(&f, &[order], &[x], 2e-2).unwrap();
        let fine = finite_difference(&f, &[order], &[x], 1e-2).unwrap();
        let (ec, ef) = ((coarse.value - exact).abs(), (fine.value - exact).abs());
        // Halving h cuts the error by at least 3 until round-off takes over.
        prop_assert!(ef * 3.0 <= ec || ef < 1e-9, "{} {}", ec, ef);
    }
}
