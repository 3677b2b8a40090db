mod common;

use num_rational::Ratio;
use proptest::prelude::*;
use qpn_core::geometry::{segments_properly_intersect, Point};

type Seg = ((i64, i64), (i64, i64));

fn seg(range: i64) -> impl Strategy<Value = Seg> {
    let p = (-range..=range, -range..=range);
    (p.clone(), p)
}

fn cross<T: num_traits::Num + PartialOrd + Copy>(a: Seg, b: Seg, f: impl Fn(i64) -> T) -> bool {
    let p = |q: (i64, i64)| Point::new(f(q.0), f(q.1));
    segments_properly_intersect(p(a.0), p(a.1), p(b.0), p(b.1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn agrees_with_parametric_oracle_on_small_grids(a in seg(3), b in seg(3)) {
        let want = common::crossing_by_parameters(a.0, a.1, b.0, b.1);
        prop_assert_eq!(cross(a, b, |x| x), want);
        prop_assert_eq!(cross(a, b, |x| x as f64), want);
        prop_assert_eq!(cross(a, b, Ratio::from_integer), want);
    }

    #[test]
    fn symmetric_under_swaps_and_reversal(a in seg(50), b in seg(50)) {
        let base = cross(a, b, |x| x);
        prop_assert_eq!(cross(b, a, |x| x), base);
        prop_assert_eq!(cross((a.1, a.0), b, |x| x), base);
        prop_assert_eq!(cross(a, (b.1, b.0), |x| x), base);
    }

    #[test]
    fn invariant_under_translation(a in seg(50), b in seg(50), dx in -100i64..100, dy in -100i64..100) {
        let shift = |s: Seg| ((s.0 .0 + dx, s.0 .1 + dy), (s.1 .0 + dx, s.1 .1 + dy));
        prop_assert_eq!(cross(shift(a), shift(b), |x| x), cross(a, b, |x| x));
    }

    #[test]
    fn shared_endpoints_never_cross(a in seg(20), c in (-20i64..=20, -20i64..=20)) {
        prop_assert!(!cross(a, (a.1, c), |x| x));
        prop_assert!(!cross(a, (c, a.0), |x| x));
    }
}
