//! Points of the flat torus `[0,1)^2` and the small linear algebra used throughout.

use serde::{Deserialize, Serialize};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

/// Reduces a real number into `[0, 1)`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    // rem_euclid of a tiny negative number rounds up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` reduced to the representative in `[-1/2, 1/2)`.
#[inline]
pub fn wrapped_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// A point of the torus, both coordinates kept in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TorusPoint {
    x1: f64,
    x2: f64,
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            x1: wrap_unit(x1),
            x2: wrap_unit(x2),
        }
    }

    pub fn origin() -> Self {
        Self { x1: 0.0, x2: 0.0 }
    }

    /// Projects a point of the universal cover onto the torus.
    pub fn from_lift(lift: Vec2) -> Self {
        Self::new(lift[0], lift[1])
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }

    /// The representative in `[0,1)^2`, as a vector of the cover.
    #[inline]
    pub fn lift(&self) -> Vec2 {
        Vec2::new(self.x1, self.x2)
    }

    pub fn translate(&self, v: Vec2) -> Self {
        Self::new(self.x1 + v[0], self.x2 + v[1])
    }

    /// Shortest displacement `self - other` on the cover.
    pub fn delta(&self, other: &TorusPoint) -> Vec2 {
        Vec2::new(
            wrapped_delta(self.x1, other.x1),
            wrapped_delta(self.x2, other.x2),
        )
    }

    /// Euclidean length of the shortest displacement; at most `sqrt(2)/2`.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.delta(other).norm()
    }
}

impl From<[f64; 2]> for TorusPoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<TorusPoint> for [f64; 2] {
    fn from(p: TorusPoint) -> Self {
        [p.x1, p.x2]
    }
}

/// `(inverse, det)` or `None` when `|det| < threshold`.
pub fn checked_inverse(m: &Mat2, threshold: f64) -> Option<(Mat2, f64)> {
    let det = m.determinant();
    if !(det.abs() >= threshold) {
        return None;
    }
    let inv = Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;
    Some((inv, det))
}
