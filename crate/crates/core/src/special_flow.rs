//! Vertical unit-speed flow under a roof `H` over the circle rotation `r -> r + omega`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::fields::{ALPHA, BETA};
use crate::flows::loglog_slope;
use crate::sampler::trajectory_rng;
use crate::torus::{wrap_unit, wrapped_delta, Mat2};

/// Irrational rotation numbers, stored by name rather than by value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    /// `(sqrt 5 - 1) / 2`
    Golden,
    /// `sqrt 2 - 1`
    Silver,
}

impl Rotation {
    pub fn value(self) -> f64 {
        match self {
            Rotation::Golden => ALPHA,
            Rotation::Silver => BETA,
        }
    }
}

/// `H(r) = base + amplitude * sin(2 pi frequency r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roof {
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: u32,
}

fn one() -> u32 {
    1
}

impl Roof {
    pub fn constant(height: f64) -> Self {
        Roof {
            base: height,
            amplitude: 0.0,
            frequency: 1,
        }
    }

    pub fn sinusoid(base: f64, amplitude: f64) -> Self {
        Roof {
            base,
            amplitude,
            frequency: 1,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.base + self.amplitude * (TAU * self.frequency as f64 * r).sin()
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let w = TAU * self.frequency as f64;
        self.amplitude * w * (w * r).cos()
    }

    pub fn min(&self) -> f64 {
        self.base - self.amplitude.abs()
    }

    pub fn max(&self) -> f64 {
        self.base + self.amplitude.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct SpecialFlowSpec {
    rotation: Rotation,
    roof: Roof,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    rotation: Rotation,
    roof: Roof,
}

impl TryFrom<RawSpec> for SpecialFlowSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        SpecialFlowSpec::new(raw.rotation, raw.roof)
    }
}

impl From<SpecialFlowSpec> for RawSpec {
    fn from(s: SpecialFlowSpec) -> Self {
        RawSpec {
            rotation: s.rotation,
            roof: s.roof,
        }
    }
}

impl SpecialFlowSpec {
    pub fn new(rotation: Rotation, roof: Roof) -> Result<Self> {
        if !(roof.base.is_finite() && roof.amplitude.is_finite()) || roof.frequency == 0 {
            return Err(Error::InvalidArgument(format!("invalid roof {roof:?}")));
        }
        if !(roof.min() > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "roof must stay positive, minimum is {}",
                roof.min()
            )));
        }
        Ok(SpecialFlowSpec { rotation, roof })
    }

    pub fn omega(&self) -> f64 {
        self.rotation.value()
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn roof(&self) -> &Roof {
        &self.roof
    }

    pub fn h_min(&self) -> f64 {
        self.roof.min()
    }

    pub fn h_max(&self) -> f64 {
        self.roof.max()
    }

    /// `n <= c0 (1 + t)` with `c0 = 1 / H_min`.
    pub fn crossing_bound(&self, t: f64) -> f64 {
        (1.0 + t) / self.h_min()
    }

    /// `t / H_max - 1 <= n <= t / H_min + 1`.
    pub fn crossing_count_range(&self, t: f64) -> (f64, f64) {
        (t / self.h_max() - 1.0, t / self.h_min() + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    pub r: f64,
    pub h: f64,
}

impl SpecialPoint {
    pub fn new(spec: &SpecialFlowSpec, r: f64, h: f64) -> Result<Self> {
        let r = wrap_unit(r);
        if !(h >= 0.0 && h < spec.roof.eval(r)) {
            return Err(Error::InvalidArgument(format!(
                "height {h} outside [0, H({r}))"
            )));
        }
        Ok(SpecialPoint { r, h })
    }
}

/// Flows `p` for time `t`, returning the end point and the base points where the roof was hit.
pub fn special_step(spec: &SpecialFlowSpec, p: SpecialPoint, t: f64) -> (SpecialPoint, Vec<f64>) {
    let mut crossings = Vec::new();
    let (mut r, mut h) = (p.r, p.h);
    let mut remaining = t.max(0.0);
    loop {
        let to_roof = spec.roof.eval(r) - h;
        if remaining < to_roof {
            h += remaining;
            break;
        }
        remaining -= to_roof;
        crossings.push(r);
        r = wrap_unit(r + spec.omega());
        h = 0.0;
    }
    (SpecialPoint { r, h }, crossings)
}

/// `[[1, 0], [-sum H'(r_k), 1]]`.
pub fn shear_from_crossings(spec: &SpecialFlowSpec, crossings: &[f64]) -> Mat2 {
    let a: f64 = crossings.iter().map(|&r| spec.roof.derivative(r)).sum();
    Mat2::new(1.0, 0.0, -a, 1.0)
}

pub fn shear_jacobian(spec: &SpecialFlowSpec, p: SpecialPoint, t: f64) -> Mat2 {
    shear_from_crossings(spec, &special_step(spec, p, t).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShearRow {
    pub t: f64,
    pub max_shear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<ShearRow>,
    /// Log-log slope of `max_shear` against `t`; zero when every shear vanishes.
    pub fitted_exponent: f64,
}

impl GrowthReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,max_shear,fitted_exponent\n");
        for row in &self.rows {
            out.push_str(&format!("{},{:e},{}\n", row.t, row.max_shear, self.fitted_exponent));
        }
        out
    }
}

/// Max `|sum H'(r_k)|` over `n_samples` stratified start points at `t = 1, ..., t_max`.
pub fn growth_report(spec: &SpecialFlowSpec, t_max: usize, n_samples: usize) -> Result<GrowthReport> {
    if t_max == 0 || n_samples == 0 {
        return Err(Error::EmptyInput("growth report needs t_max and samples".into()));
    }
    let starts: Vec<SpecialPoint> = (0..n_samples)
        .map(|k| {
            let r = (k as f64 + 0.5) / n_samples as f64;
            SpecialPoint { r, h: 0.5 * spec.roof.eval(r) }
        })
        .collect();
    let mut max_shear = vec![0.0f64; t_max];
    for p in starts {
        // advance one unit at a time, accumulating the shear across steps
        let mut q = p;
        let mut a = 0.0;
        for slot in max_shear.iter_mut() {
            let (next, crossings) = special_step(spec, q, 1.0);
            a += crossings.iter().map(|&r| spec.roof.derivative(r)).sum::<f64>();
            q = next;
            *slot = slot.max(a.abs());
        }
    }
    let rows: Vec<ShearRow> = max_shear
        .iter()
        .enumerate()
        .map(|(k, &m)| ShearRow {
            t: (k + 1) as f64,
            max_shear: m,
        })
        .collect();
    let (ts, ms): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.max_shear > 0.0).map(|r| (r.t, r.max_shear)).unzip();
    let fitted_exponent = if ts.len() >= 2 { loglog_slope(&ts, &ms).unwrap_or(0.0) } else { 0.0 };
    Ok(GrowthReport { rows, fitted_exponent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpecialFlowCheck {
    pub samples: usize,
    /// Every shear had determinant and diagonal exactly 1.
    pub unit_determinant: bool,
    /// `n <= (1 + t) / H_min * (1 + margin)` at every sample.
    pub crossing_bound_holds: bool,
    /// Largest entrywise gap between the shear and centred differences of the flow map.
    pub max_fd_error: f64,
    pub fd_samples: usize,
}

/// Random `(p, t)` with `t <= t_max`; the difference check uses samples with `t <= fd_t_max`
/// whose end point keeps `1e-4` away from the floor and the roof and whose probes cross the
/// roof the same number of times.
pub fn special_flow_check(spec: &SpecialFlowSpec, samples: usize, t_max: f64, fd_t_max: f64, margin: f64, seed: u64) -> SpecialFlowCheck {
    let mut rng = trajectory_rng(seed, 0);
    let d = 1e-6;
    let mut out = SpecialFlowCheck {
        samples,
        unit_determinant: true,
        crossing_bound_holds: true,
        max_fd_error: 0.0,
        fd_samples: 0,
    };
    for _ in 0..samples {
        let r: f64 = rng.gen();
        let h = rng.gen_range(0.0..0.999) * spec.roof.eval(r);
        let t = rng.gen_range(0.0..=t_max);
        let (q, crossings) = special_step(spec, SpecialPoint { r, h }, t);
        let shear = shear_from_crossings(spec, &crossings);
        out.unit_determinant &= shear.determinant() == 1.0 && shear[(0, 0)] == 1.0 && shear[(1, 1)] == 1.0;
        out.crossing_bound_holds &= crossings.len() as f64 <= spec.crossing_bound(t) * (1.0 + margin);
        if t > fd_t_max || h < d || q.h < 1e-4 || spec.roof.eval(q.r) - q.h < 1e-4 {
            continue;
        }
        let step = |dr: f64, dh: f64| special_step(spec, SpecialPoint { r: wrap_unit(r + dr), h: h + dh }, t);
        let probes = [step(d, 0.0), step(-d, 0.0), step(0.0, d), step(0.0, -d)];
        if probes.iter().any(|(_, c)| c.len() != crossings.len()) {
            continue;
        }
        let fd = Mat2::new(
            wrapped_delta(probes[0].0.r, probes[1].0.r) / (2.0 * d),
            wrapped_delta(probes[2].0.r, probes[3].0.r) / (2.0 * d),
            (probes[0].0.h - probes[1].0.h) / (2.0 * d),
            (probes[2].0.h - probes[3].0.h) / (2.0 * d),
        );
        out.max_fd_error = out.max_fd_error.max((fd - shear).amax());
        out.fd_samples += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sinusoid() -> SpecialFlowSpec {
        SpecialFlowSpec::new(Rotation::Golden, Roof::sinusoid(1.0, 0.3)).unwrap()
    }

    #[test]
    fn unit_roof_arithmetic() {
        let spec = SpecialFlowSpec::new(Rotation::Golden, Roof::constant(1.0)).unwrap();
        let (q, c) = special_step(&spec, SpecialPoint { r: 0.0, h: 0.0 }, 5.5);
        assert_eq!(c.len(), 5);
        assert!((q.r - (5.0 * ALPHA).fract()).abs() < 1e-12);
        assert!((q.h - 0.5).abs() < 1e-12);
        assert_eq!(shear_jacobian(&spec, q, 37.0), Mat2::identity());
        let p = SpecialPoint { r: 0.3, h: 0.2 };
        assert_eq!(special_step(&spec, p, 0.0), (p, vec![]));
        let g = growth_report(&spec, 20, 5).unwrap();
        assert!(g.rows.iter().all(|r| r.max_shear == 0.0));
        assert_eq!(g.fitted_exponent, 0.0);
    }

    #[test]
    fn validation() {
        assert!(SpecialFlowSpec::new(Rotation::Silver, Roof::sinusoid(1.0, 1.0)).is_err());
        assert!(SpecialPoint::new(&sinusoid(), 0.25, 1.3).is_err());
        assert!(SpecialPoint::new(&sinusoid(), 0.25, 1.29).is_ok());
        let spec: SpecialFlowSpec = serde_json::from_str(r#"{"rotation":"silver","roof":{"base":2.0,"amplitude":0.5}}"#).unwrap();
        assert_eq!(spec.omega(), BETA);
        assert!(serde_json::from_str::<SpecialFlowSpec>(r#"{"rotation":"golden","roof":{"base":0.2,"amplitude":0.5}}"#).is_err());
    }

    #[test]
    fn roof_derivative_matches_differences() {
        let roof = Roof { base: 1.0, amplitude: 0.3, frequency: 2 };
        let d = 1e-6;
        for k in 0..50 {
            let r = k as f64 / 50.0;
            let fd = (roof.eval(r + d) - roof.eval(r - d)) / (2.0 * d);
            assert!((fd - roof.derivative(r)).abs() < 1e-8);
        }
    }

    #[test]
    fn shear_matches_flow_map_differences() {
        let spec = sinusoid();
        let d = 1e-6;
        let mut checked = 0;
        for k in 0..40 {
            let r = (k as f64 + 0.37) / 40.0;
            let p = SpecialPoint { r, h: 0.4 };
            let (q, c) = special_step(&spec, p, 10.0);
            if q.h < 1e-4 || spec.roof.eval(q.r) - q.h < 1e-4 {
                continue;
            }
            let step = |dr: f64, dh: f64| special_step(&spec, SpecialPoint { r: wrap_unit(r + dr), h: 0.4 + dh }, 10.0);
            let (pr, cr) = step(d, 0.0);
            let (mr, cm) = step(-d, 0.0);
            let (ph, ch) = step(0.0, d);
            let (mh, cmh) = step(0.0, -d);
            if [cr.len(), cm.len(), ch.len(), cmh.len()].iter().any(|&n| n != c.len()) {
                continue;
            }
            let fd = Mat2::new(
                wrapped_delta(pr.r, mr.r) / (2.0 * d),
                wrapped_delta(ph.r, mh.r) / (2.0 * d),
                (pr.h - mr.h) / (2.0 * d),
                (ph.h - mh.h) / (2.0 * d),
            );
            let exact = shear_from_crossings(&spec, &c);
            assert!((fd - exact).amax() < 1e-5, "{fd} vs {exact}");
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn crossing_counts_stay_in_range() {
        let spec = sinusoid();
        for k in 0..100 {
            let p = SpecialPoint { r: k as f64 / 100.0, h: 0.0 };
            let t = 2.0 * k as f64;
            let n = special_step(&spec, p, t).1.len() as f64;
            let (lo, hi) = spec.crossing_count_range(t);
            assert!(lo <= n && n <= hi);
            assert!(n <= spec.crossing_bound(t));
        }
    }

    #[test]
    fn shear_growth_is_at_most_linear() {
        let g = growth_report(&sinusoid(), 200, 64).unwrap();
        assert!(g.fitted_exponent <= 1.1, "{}", g.fitted_exponent);
        let csv = g.to_csv();
        assert!(csv.starts_with("t,max_shear,fitted_exponent\n"));
        assert_eq!(csv.lines().count(), 201);
        let doubled = SpecialFlowSpec::new(Rotation::Golden, Roof::sinusoid(1.0, 0.6)).unwrap();
        let g2 = growth_report(&doubled, 50, 64).unwrap();
        assert!(g2.rows[49].max_shear <= 2.0 * g.rows[49].max_shear * 1.05 + 1e-12);
    }

    proptest! {
        #[test]
        fn semigroup_and_unit_determinant(r in 0.0..1.0f64, frac in 0.0..0.999f64, t1 in 0.0..40.0f64, t2 in 0.0..40.0f64) {
            let spec = sinusoid();
            let p = SpecialPoint { r, h: frac * spec.roof().eval(r) };
            let (a, ca) = special_step(&spec, p, t1);
            let (b, cb) = special_step(&spec, a, t2);
            let (c, cc) = special_step(&spec, p, t1 + t2);
            prop_assume!(cc.len() == ca.len() + cb.len());
            prop_assert!(wrapped_delta(b.r, c.r).abs() < 1e-9);
            prop_assert!((b.h - c.h).abs() < 1e-9);
            let joined: Vec<f64> = ca.iter().chain(&cb).copied().collect();
            for (x, y) in joined.iter().zip(&cc) {
                prop_assert!(wrapped_delta(*x, *y).abs() < 1e-9);
            }
            prop_assert_eq!(shear_jacobian(&spec, p, t1 + t2).determinant(), 1.0);
        }
    }
}
