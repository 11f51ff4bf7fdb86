//! Laws of the waiting time between switches.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::GAUSS_LEGENDRE_4;

/// Nodes of the inverse-CDF table for custom laws.
pub const INVERSE_TABLE_SIZE: usize = 1 << 16;
/// Allowed deviation of a custom density's total mass from 1.
pub const DENSITY_MASS_TOL: f64 = 1e-8;

/// Configuration-level description of the waiting-time law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchingLaw {
    /// Exponential with the configured rate `lambda`.
    #[default]
    Exponential,
    /// Gamma density `rate^shape t^(shape-1) e^(-rate t) / Gamma(shape)`, `shape >= 1`.
    Gamma { shape: f64, rate: f64 },
}

impl SwitchingLaw {
    pub fn is_exponential(&self) -> bool {
        matches!(self, SwitchingLaw::Exponential)
    }

    pub fn build(&self, lambda: f64) -> Result<GapDistribution> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        match *self {
            SwitchingLaw::Exponential => Ok(GapDistribution::Exponential { rate: lambda }),
            SwitchingLaw::Gamma { shape, rate } => Ok(GapDistribution::Custom(Arc::new(CustomLaw::gamma(shape, rate)?))),
        }
    }
}

/// A smooth density on `(0, inf)` sampled through a tabulated inverse CDF.
pub struct CustomLaw {
    name: String,
    density: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    support_end: f64,
    all_moments: bool,
    mean: f64,
    /// `cdf[k]` at `k * spacing`.
    cdf: Vec<f64>,
    spacing: f64,
}

impl std::fmt::Debug for CustomLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomLaw")
            .field("name", &self.name)
            .field("support_end", &self.support_end)
            .field("all_moments", &self.all_moments)
            .field("mean", &self.mean)
            .finish()
    }
}

impl CustomLaw {
    /// `support_end` is a time beyond which the density carries negligible mass.
    pub fn new(
        name: impl Into<String>,
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support_end: f64,
        all_moments: bool,
    ) -> Result<Self> {
        if !(support_end > 0.0 && support_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("support end must be positive, got {support_end}")));
        }
        let name = name.into();
        let density: Box<dyn Fn(f64) -> f64 + Send + Sync> = Box::new(density);
        let (gl_x, gl_w) = GAUSS_LEGENDRE_4;
        let n = INVERSE_TABLE_SIZE;
        let spacing = support_end / (n - 1) as f64;
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut first_moment = 0.0;
        for k in 0..n - 1 {
            let a = k as f64 * spacing;
            let mut piece = 0.0;
            for (x, w) in gl_x.iter().zip(&gl_w) {
                let t = a + 0.5 * spacing * (x + 1.0);
                let d = density(t);
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::InvalidArgument(format!("density is negative or non-finite at t = {t}")));
                }
                piece += 0.5 * spacing * w * d;
                first_moment += 0.5 * spacing * w * d * t;
            }
            acc += piece;
            cdf.push(acc);
        }
        if (acc - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "switching density '{name}' integrates to {acc}, not 1"
            )));
        }
        Ok(Self {
            name,
            density,
            support_end,
            all_moments,
            mean: first_moment / acc,
            cdf,
            spacing,
        })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        if !(shape >= 1.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma law needs shape >= 1 and rate > 0, got shape={shape}, rate={rate}"
            )));
        }
        let log_norm = shape * rate.ln() - ln_gamma(shape);
        let density = move |t: f64| {
            if t <= 0.0 {
                if shape == 1.0 {
                    rate
                } else {
                    0.0
                }
            } else {
                (log_norm + (shape - 1.0) * t.ln() - rate * t).exp()
            }
        };
        let support_end = (shape + 40.0 * shape.sqrt() + 40.0) / rate;
        Self::new(format!("gamma(shape={shape}, rate={rate})"), density, support_end, true)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else {
            (self.density)(t)
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    pub fn has_all_moments(&self) -> bool {
        self.all_moments
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.support_end {
            return 1.0;
        }
        let k = ((t / self.spacing) as usize).min(self.cdf.len() - 2);
        self.cdf[k] + self.partial_mass(k as f64 * self.spacing, t)
    }

    fn partial_mass(&self, a: f64, b: f64) -> f64 {
        let (gl_x, gl_w) = GAUSS_LEGENDRE_4;
        let half = 0.5 * (b - a);
        gl_x.iter()
            .zip(&gl_w)
            .map(|(x, w)| half * w * (self.density)(a + half * (x + 1.0)))
            .sum()
    }

    /// Smallest `t` with `cdf(t) = u`, by table lookup and Newton refinement.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = *self.cdf.last().unwrap();
        let u = u.clamp(0.0, 1.0) * total;
        let k = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(k) => return k as f64 * self.spacing,
            Err(k) => k.saturating_sub(1).min(self.cdf.len() - 2),
        };
        let (c0, c1) = (self.cdf[k], self.cdf[k + 1]);
        let a = k as f64 * self.spacing;
        let b = a + self.spacing;
        let mut t = if c1 > c0 { a + (u - c0) / (c1 - c0) * self.spacing } else { a };
        for _ in 0..3 {
            let d = (self.density)(t);
            if !(d > 0.0) {
                break;
            }
            let r = c0 + self.partial_mass(a, t) - u;
            t = (t - r / d).clamp(a, b);
        }
        t
    }
}

/// Runtime waiting-time law.
#[derive(Debug, Clone)]
pub enum GapDistribution {
    Exponential { rate: f64 },
    Custom(Arc<CustomLaw>),
}

impl GapDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1 - U lies in (0, 1]
        let u = 1.0 - rng.gen::<f64>();
        match self {
            GapDistribution::Exponential { rate } => -u.ln() / rate,
            GapDistribution::Custom(law) => law.quantile(1.0 - u),
        }
    }

    pub fn density(&self, t: f64) -> f64 {
        match self {
            GapDistribution::Exponential { rate } => {
                if t < 0.0 {
                    0.0
                } else {
                    rate * (-rate * t).exp()
                }
            }
            GapDistribution::Custom(law) => law.density(t),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            GapDistribution::Exponential { rate } => 1.0 / rate,
            GapDistribution::Custom(law) => law.mean(),
        }
    }

    pub fn exponential_rate(&self) -> Option<f64> {
        match self {
            GapDistribution::Exponential { rate } => Some(*rate),
            GapDistribution::Custom(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_law_is_normalized_with_known_mean() {
        let law = CustomLaw::gamma(2.0, 2.0).unwrap();
        assert!((law.mean() - 1.0).abs() < 1e-10);
        // cdf of Gamma(2, rate 2): 1 - (1 + 2t) e^{-2t}
        for t in [0.1f64, 0.5, 1.0, 2.7] {
            let exact = 1.0 - (1.0 + 2.0 * t) * (-2.0 * t).exp();
            assert!((law.cdf(t) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let law = CustomLaw::gamma(2.0, 2.0).unwrap();
        for u in [1e-6, 0.01, 0.25, 0.5, 0.9, 0.999999] {
            let t = law.quantile(u);
            assert!((law.cdf(t) - u).abs() < 1e-8, "u={u} t={t}");
        }
    }

    #[test]
    fn rejects_unnormalized_density() {
        let err = CustomLaw::new("half", |t: f64| 0.5 * (-t).exp(), 60.0, true).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn exponential_gap_mean() {
        let law = SwitchingLaw::Exponential.build(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn gamma_gap_mean_and_variance() {
        let law = SwitchingLaw::Gamma { shape: 2.0, rate: 2.0 }.build(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert!((var - 0.5).abs() < 0.02);
    }

    #[test]
    fn invalid_rate_rejected() {
        assert!(SwitchingLaw::Exponential.build(0.0).is_err());
        assert!(SwitchingLaw::Gamma { shape: 0.5, rate: 1.0 }.build(1.0).is_err());
    }
}
