//! Truncated bivariate Taylor polynomials, used to get arbitrary partial
//! derivatives (up to order 4) of vector fields without hand-written formulas.

use std::ops::{Add, Mul, Neg, Sub};

pub const MAX_ORDER: usize = 4;
const LEN: usize = (MAX_ORDER + 1) * (MAX_ORDER + 2) / 2;

#[inline]
const fn slot(a: usize, b: usize) -> usize {
    // monomials ordered by total degree, then by the power of the second variable
    let d = a + b;
    d * (d + 1) / 2 + b
}

/// `sum c[a,b] dx^a dy^b` truncated at total degree [`MAX_ORDER`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    c: [f64; LEN],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; LEN];
        c[0] = v;
        Self { c }
    }

    /// The independent variable `var` (0 or 1) expanded around `at`.
    pub fn variable(var: usize, at: f64) -> Self {
        let mut j = Self::constant(at);
        if var == 0 {
            j.c[slot(1, 0)] = 1.0;
        } else {
            j.c[slot(0, 1)] = 1.0;
        }
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `d^(a+b) / dx^a dy^b` at the expansion point.
    pub fn partial(&self, a: usize, b: usize) -> f64 {
        assert!(a + b <= MAX_ORDER, "jets carry derivatives up to order {MAX_ORDER}");
        self.c[slot(a, b)] * factorial(a) * factorial(b)
    }

    pub fn scale(mut self, k: f64) -> Self {
        for v in &mut self.c {
            *v *= k;
        }
        self
    }

    fn nilpotent_part(&self) -> Self {
        let mut d = *self;
        d.c[0] = 0.0;
        d
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let d = self.nilpotent_part();
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d3 * d;
        let cos_d = Self::constant(1.0) - d2.scale(0.5) + d4.scale(1.0 / 24.0);
        let sin_d = d - d3.scale(1.0 / 6.0);
        cos_d.scale(s) + sin_d.scale(c)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let d = self.nilpotent_part();
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d3 * d;
        let cos_d = Self::constant(1.0) - d2.scale(0.5) + d4.scale(1.0 / 24.0);
        let sin_d = d - d3.scale(1.0 / 6.0);
        cos_d.scale(c) - sin_d.scale(s)
    }

    pub fn recip(&self) -> Self {
        let a = self.c[0];
        let q = self.nilpotent_part().scale(-1.0 / a);
        // 1/(a(1-q')) with q' = -d/a
        let mut acc = Self::constant(1.0);
        let mut pow = Self::constant(1.0);
        for _ in 0..MAX_ORDER {
            pow = pow * q;
            acc = acc + pow;
        }
        acc.scale(1.0 / a)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: Jet2) -> Jet2 {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(mut self, rhs: Jet2) -> Jet2 {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
        self
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let mut out = [0.0; LEN];
        for d1 in 0..=MAX_ORDER {
            for b1 in 0..=d1 {
                let f = self.c[slot(d1 - b1, b1)];
                if f == 0.0 {
                    continue;
                }
                for d2 in 0..=(MAX_ORDER - d1) {
                    for b2 in 0..=d2 {
                        let a = d1 - b1 + d2 - b2;
                        out[slot(a, b1 + b2)] += f * rhs.c[slot(d2 - b2, b2)];
                    }
                }
            }
        }
        Jet2 { c: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_of_product_matches_hand_derivatives() {
        // f = sin(x*y) at (0.3, 0.7)
        let (x0, y0) = (0.3, 0.7);
        let f = (Jet2::variable(0, x0) * Jet2::variable(1, y0)).sin();
        let u = x0 * y0;
        assert!((f.value() - u.sin()).abs() < 1e-15);
        assert!((f.partial(1, 0) - y0 * u.cos()).abs() < 1e-14);
        assert!((f.partial(2, 0) + y0 * y0 * u.sin()).abs() < 1e-14);
        // d2/dxdy sin(xy) = cos(xy) - xy sin(xy)
        assert!((f.partial(1, 1) - (u.cos() - u * u.sin())).abs() < 1e-14);
        // d4/dx4 sin(xy) = y^4 sin(xy)
        assert!((f.partial(4, 0) - y0.powi(4) * u.sin()).abs() < 1e-13);
    }

    #[test]
    fn reciprocal_inverts() {
        let g = Jet2::constant(2.0) + Jet2::variable(0, 0.0).cos() * Jet2::variable(1, 0.4);
        let one = g * g.recip();
        assert!((one.value() - 1.0).abs() < 1e-15);
        for a in 0..=MAX_ORDER {
            for b in 0..=(MAX_ORDER - a) {
                if a + b > 0 {
                    assert!(one.partial(a, b).abs() < 1e-12, "({a},{b})");
                }
            }
        }
    }
}
