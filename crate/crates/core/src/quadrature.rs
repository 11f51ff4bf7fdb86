//! Quadrature against waiting-time densities on `(0, inf)` and their tensor products.
//!
//! Two families of one-dimensional rules are provided. Gauss-Laguerre rules (optionally
//! generalized, for gamma densities) are exact for polynomials of degree up to `2m - 1`.
//! Composite rules place Gauss-Legendre panels of fixed width on `[0, horizon]` with the
//! density folded into the weights and close the exponential tail with a short Laguerre
//! rule; they stay accurate for integrands that oscillate in time, such as a function
//! sampled along an irrational line on the torus.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{GapDistribution, SwitchingLaw};

/// Four-point Gauss-Legendre rule on `[-1, 1]`.
pub const GAUSS_LEGENDRE_4: ([f64; 4], [f64; 4]) = (
    [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ],
    [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ],
);

/// Golub-Welsch: nodes and weights (normalized to the first moment `mu0`) from the Jacobi
/// matrix with diagonal `diag` and off-diagonal `off`.
fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        jac[(i, i)] = diag[i];
        if i + 1 < m {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// `m`-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = vec![0.0; m];
    let off: Vec<f64> = (1..m)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    let (x, w) = golub_welsch(&diag, &off, 2.0);
    // symmetrize away eigen-solver rounding
    let xs: Vec<f64> = (0..m).map(|k| 0.5 * (x[k] - x[m - 1 - k])).collect();
    let ws: Vec<f64> = (0..m).map(|k| 0.5 * (w[k] + w[m - 1 - k])).collect();
    (xs, ws)
}

/// Generalized Gauss-Laguerre rule for the weight `x^alpha e^{-x}`, weights summing to 1.
fn gauss_laguerre_unit(m: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let diag: Vec<f64> = (0..m).map(|i| 2.0 * i as f64 + alpha + 1.0).collect();
    let off: Vec<f64> = (1..m).map(|i| (i as f64 * (i as f64 + alpha)).sqrt()).collect();
    let (x, w) = golub_welsch(&diag, &off, 1.0);
    let total: f64 = w.iter().sum();
    (x, w.into_iter().map(|v| v / total).collect())
}

/// Nodes and weights reproducing `int_0^inf chi(t) f(t) dt` for one waiting-time density.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exponential_rate: Option<f64>,
}

impl Rule1d {
    /// Gauss-Laguerre rule of order `m` for the density `rate e^{-rate t}`.
    pub fn gauss_laguerre(m: usize, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if m == 0 {
            return Err(Error::InvalidArgument("quadrature order must be positive".into()));
        }
        let (x, w) = gauss_laguerre_unit(m, 0.0);
        Ok(Self {
            nodes: x.into_iter().map(|v| v / rate).collect(),
            weights: w,
            exponential_rate: Some(rate),
        })
    }

    /// Generalized Gauss-Laguerre rule for the gamma density with the given shape and rate.
    pub fn gauss_laguerre_gamma(m: usize, shape: f64, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        if m == 0 || !(shape > 0.0) {
            return Err(Error::InvalidArgument("quadrature order and shape must be positive".into()));
        }
        let (x, w) = gauss_laguerre_unit(m, shape - 1.0);
        Ok(Self {
            nodes: x.into_iter().map(|v| v / rate).collect(),
            weights: w,
            exponential_rate: if shape == 1.0 { Some(rate) } else { None },
        })
    }

    /// Composite rule for the density `rate e^{-rate t}`.
    pub fn composite_exponential(rate: f64, params: &CompositeParams) -> Result<Self> {
        check_rate(rate)?;
        params.validate()?;
        let horizon = params.horizon_scale / rate;
        let density = |t: f64| rate * (-rate * t).exp();
        let (mut nodes, mut weights) = panels(&density, horizon, params.panel_width, params.panel_order);
        if params.tail_order > 0 {
            // int_H^inf rate e^{-rate t} f = e^{-rate H} int_0^inf rate e^{-rate u} f(H + u)
            let (x, w) = gauss_laguerre_unit(params.tail_order, 0.0);
            let tail = (-rate * horizon).exp();
            for (xi, wi) in x.into_iter().zip(w) {
                nodes.push(horizon + xi / rate);
                weights.push(tail * wi);
            }
        }
        Ok(Self {
            nodes,
            weights,
            exponential_rate: Some(rate),
        })
    }

    /// Composite rule for an arbitrary density, truncated at `horizon_scale` times its mean.
    pub fn composite_density(density: impl Fn(f64) -> f64, mean: f64, params: &CompositeParams) -> Result<Self> {
        params.validate()?;
        if !(mean > 0.0) {
            return Err(Error::InvalidArgument(format!("density mean must be positive, got {mean}")));
        }
        let horizon = params.horizon_scale * mean;
        let (nodes, weights) = panels(&density, horizon, params.panel_width, params.panel_order);
        Ok(Self {
            nodes,
            weights,
            exponential_rate: None,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Some(lambda)` when the rule integrates against `lambda e^{-lambda t}`.
    pub fn exponential_rate(&self) -> Option<f64> {
        self.exponential_rate
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(t, w)| w * f(*t)).sum()
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rate must be positive, got {rate}")))
    }
}

fn panels(density: &impl Fn(f64) -> f64, horizon: f64, width: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let count = ((horizon / width).ceil() as usize).max(1);
    let h = horizon / count as f64;
    let (x, w) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(count * order);
    let mut weights = Vec::with_capacity(count * order);
    for p in 0..count {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            let t = a + 0.5 * h * (xi + 1.0);
            nodes.push(t);
            weights.push(0.5 * h * wi * density(t));
        }
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeParams {
    pub panel_width: f64,
    pub panel_order: usize,
    /// Truncation point in units of the mean waiting time.
    pub horizon_scale: f64,
    /// Order of the Laguerre rule closing the exponential tail (0 drops it).
    pub tail_order: usize,
}

impl Default for CompositeParams {
    fn default() -> Self {
        Self {
            panel_width: 0.5,
            panel_order: 8,
            horizon_scale: 18.0,
            tail_order: 8,
        }
    }
}

impl CompositeParams {
    /// Panels fine enough to resolve functions that only vary on the scale of one cell of an
    /// `n x n` grid.
    pub fn for_rough(n: usize) -> Self {
        Self {
            panel_width: 2.0 / n as f64,
            panel_order: 6,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.panel_width > 0.0 && self.horizon_scale > 0.0 && self.panel_order > 0) {
            return Err(Error::InvalidArgument(format!("invalid composite quadrature parameters {self:?}")));
        }
        Ok(())
    }
}

/// Configuration-level choice of the one-dimensional rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureSpec {
    Laguerre { order: usize },
    Composite(CompositeParams),
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Composite(CompositeParams::default())
    }
}

impl QuadratureSpec {
    pub fn build(&self, law: &SwitchingLaw, lambda: f64) -> Result<Rule1d> {
        let gaps = law.build(lambda)?;
        self.build_for(law, &gaps)
    }

    pub fn build_for(&self, law: &SwitchingLaw, gaps: &GapDistribution) -> Result<Rule1d> {
        match (self, law, gaps) {
            (QuadratureSpec::Laguerre { order }, SwitchingLaw::Gamma { shape, rate }, _) => {
                Rule1d::gauss_laguerre_gamma(*order, *shape, *rate)
            }
            (QuadratureSpec::Laguerre { order }, _, GapDistribution::Exponential { rate }) => {
                Rule1d::gauss_laguerre(*order, *rate)
            }
            (QuadratureSpec::Composite(p), _, GapDistribution::Exponential { rate }) => {
                Rule1d::composite_exponential(*rate, p)
            }
            (QuadratureSpec::Composite(p), _, GapDistribution::Custom(c)) => {
                Rule1d::composite_density(|t| c.density(t), c.mean(), p)
            }
            (QuadratureSpec::Laguerre { .. }, _, GapDistribution::Custom(_)) => Err(Error::InvalidArgument(
                "Laguerre rules are only available for exponential and gamma laws".into(),
            )),
        }
    }
}

/// Tensor product of one rule with itself, integrating against `chi(s) chi(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    axis: Rule1d,
}

impl QuadratureRule {
    pub fn tensor(axis: Rule1d) -> Self {
        Self { axis }
    }

    pub fn gauss_laguerre(m: usize, rate: f64) -> Result<Self> {
        Ok(Self::tensor(Rule1d::gauss_laguerre(m, rate)?))
    }

    pub fn axis(&self) -> &Rule1d {
        &self.axis
    }

    /// Nodes per axis.
    pub fn order(&self) -> usize {
        self.axis.len()
    }

    pub fn exponential_rate(&self) -> Option<f64> {
        self.axis.exponential_rate()
    }

    /// `(s, t, weight)` over all tensor nodes.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let a = &self.axis;
        a.nodes.iter().zip(&a.weights).flat_map(move |(s, ws)| {
            a.nodes.iter().zip(&a.weights).map(move |(t, wt)| (*s, *t, ws * wt))
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.axis.total_weight().powi(2)
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.iter().map(|(s, t, w)| w * f(s, t)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn factorial(k: u32) -> f64 {
        (1..=k).map(f64::from).product()
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // int_{-1}^1 x^8 = 2/9
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
        let (x4, w4) = GAUSS_LEGENDRE_4;
        let (y, v) = gauss_legendre(4);
        for k in 0..4 {
            assert!((x4[k] - y[k]).abs() < 1e-15 && (w4[k] - v[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn laguerre_weights_sum_to_one() {
        let r = Rule1d::gauss_laguerre(32, 1.0).unwrap();
        assert!((r.total_weight() - 1.0).abs() < 1e-12);
        let q = QuadratureRule::gauss_laguerre(32, 2.5).unwrap();
        assert!((q.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laguerre_exact_for_moments() {
        // E[T^k] = k!/lambda^k for T ~ Exp(lambda)
        let lambda = 1.7;
        let r = Rule1d::gauss_laguerre(8, lambda).unwrap();
        for k in 0..=15u32 {
            let exact = factorial(k) / lambda.powi(k as i32);
            let v = r.integrate(|t| t.powi(k as i32));
            assert!((v / exact - 1.0).abs() < 1e-9, "k={k}: {v} vs {exact}");
        }
    }

    #[test]
    fn gamma_laguerre_moments() {
        // Gamma(2, rate 2): E[T^k] = (k+1)!/2^k
        let r = Rule1d::gauss_laguerre_gamma(10, 2.0, 2.0).unwrap();
        for k in 0..=12u32 {
            let exact = factorial(k + 1) / 2f64.powi(k as i32);
            assert!((r.integrate(|t| t.powi(k as i32)) / exact - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_rule_is_exact_for_bivariate_polynomials() {
        let q = QuadratureRule::gauss_laguerre(6, 1.0).unwrap();
        // E[S^3 T^5] = 3! 5!
        let v = q.integrate(|s, t| s.powi(3) * t.powi(5));
        assert!((v / (6.0 * 120.0) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn composite_rule_handles_oscillation() {
        // E[e^{i w T}] = lambda / (lambda - i w)
        let rule = Rule1d::composite_exponential(1.0, &CompositeParams::default()).unwrap();
        assert!((rule.total_weight() - 1.0).abs() < 1e-12);
        for w in [TAU, 5.0 * TAU / 2.0, 20.0] {
            let re = rule.integrate(|t| (w * t).cos());
            let im = rule.integrate(|t| (w * t).sin());
            let exact_re = 1.0 / (1.0 + w * w);
            let exact_im = w / (1.0 + w * w);
            assert!((re - exact_re).abs() < 1e-7 && (im - exact_im).abs() < 1e-7, "w={w}");
        }
    }

    #[test]
    fn composite_density_matches_gamma_moments() {
        let law = SwitchingLaw::Gamma { shape: 2.0, rate: 2.0 };
        let rule = QuadratureSpec::default().build(&law, 1.0).unwrap();
        assert!((rule.total_weight() - 1.0).abs() < 1e-10);
        assert!((rule.integrate(|t| t) - 1.0).abs() < 1e-10);
        assert!(rule.exponential_rate().is_none());
    }

    #[test]
    fn spec_round_trip_and_errors() {
        let spec: QuadratureSpec = serde_json::from_str(r#"{"rule":"laguerre","order":32}"#).unwrap();
        assert_eq!(spec, QuadratureSpec::Laguerre { order: 32 });
        assert!(serde_json::from_str::<QuadratureSpec>(r#"{"rule":"laguerre","order":3,"x":1}"#).is_err());
        assert!(Rule1d::gauss_laguerre(0, 1.0).is_err());
        assert!(Rule1d::gauss_laguerre(4, -1.0).is_err());
    }
}
