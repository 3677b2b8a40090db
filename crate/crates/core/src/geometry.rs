//! Planar points and the proper-crossing predicate.
//!
//! The predicate only needs ring arithmetic and an ordering, so it runs on
//! floats as well as exact rationals.

use num_traits::{Float, Num};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T> Point<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

impl<T: Float> Point<T> {
    pub fn distance(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Twice the signed area of `(a, b, c)`: positive for a counter-clockwise turn.
pub fn orientation<T: Num + Copy>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn strictly_opposite<T: Num + PartialOrd + Copy>(p: T, q: T) -> bool {
    let zero = T::zero();
    (p > zero && q < zero) || (p < zero && q > zero)
}

/// True iff the open segments `(a1, a2)` and `(b1, b2)` cross at a single
/// interior point. Shared endpoints, T-junctions and collinear overlaps are
/// not proper crossings.
pub fn segments_properly_intersect<T: Num + PartialOrd + Copy>(
    a1: Point<T>,
    a2: Point<T>,
    b1: Point<T>,
    b2: Point<T>,
) -> bool {
    strictly_opposite(orientation(a1, a2, b1), orientation(a1, a2, b2))
        && strictly_opposite(orientation(b1, b2, a1), orientation(b1, b2, a2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn p(x: f64, y: f64) -> Point<f64> {
        Point::new(x, y)
    }

    #[test]
    fn crossing_cases() {
        assert!(segments_properly_intersect(
            p(0.0, 0.0),
            p(1.0, 1.0),
            p(0.0, 1.0),
            p(1.0, 0.0)
        ));
        assert!(!segments_properly_intersect(
            p(0.0, 0.0),
            p(1.0, 0.0),
            p(0.0, 1.0),
            p(1.0, 1.0)
        ));
        assert!(!segments_properly_intersect(
            p(0.0, 0.0),
            p(1.0, 0.0),
            p(1.0, 0.0),
            p(1.0, 1.0)
        ));
    }

    #[test]
    fn degenerate_contacts_are_not_crossings() {
        // T-junction
        assert!(!segments_properly_intersect(
            p(0.0, 0.0),
            p(2.0, 0.0),
            p(1.0, 0.0),
            p(1.0, 1.0)
        ));
        // collinear overlap
        assert!(!segments_properly_intersect(
            p(0.0, 0.0),
            p(2.0, 0.0),
            p(1.0, 0.0),
            p(3.0, 0.0)
        ));
        // identical
        assert!(!segments_properly_intersect(
            p(0.0, 0.0),
            p(1.0, 1.0),
            p(0.0, 0.0),
            p(1.0, 1.0)
        ));
        // zero-length
        assert!(!segments_properly_intersect(
            p(0.5, 0.5),
            p(0.5, 0.5),
            p(0.0, 1.0),
            p(1.0, 0.0)
        ));
    }

    #[test]
    fn exact_rationals() {
        let r = |n: i64, d: i64| Ratio::new(n, d);
        let q = |x, y| Point::new(x, y);
        assert!(segments_properly_intersect(
            q(r(0, 1), r(0, 1)),
            q(r(1, 1), r(1, 3)),
            q(r(1, 2), r(0, 1)),
            q(r(1, 2), r(1, 1)),
        ));
        // passes exactly through an endpoint of the other segment
        assert!(!segments_properly_intersect(
            q(r(0, 1), r(0, 1)),
            q(r(1, 1), r(1, 3)),
            q(r(1, 2), r(1, 6)),
            q(r(1, 2), r(1, 1)),
        ));
    }

    #[test]
    fn distance() {
        assert_eq!(p(0.0, 0.0).distance(p(3.0, 4.0)), 5.0);
    }
}
