//! Flow maps, inverse flows and their Jacobians.
//!
//! All integration is classical RK4 with a fixed step of at most [`MAX_STEP`], carried out on
//! the universal cover; only endpoints are reduced to the torus.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VectorFieldSpec;
use crate::torus::{Mat2, TorusPoint, Vec2};

pub const MAX_STEP: f64 = 1e-2;
/// Largest `|t|` accepted by [`flow`].
pub const DEFAULT_HORIZON: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub endpoint: TorusPoint,
    /// Endpoint on the cover, continuous from the starting lift.
    pub lift: Vec2,
    pub jacobian: Mat2,
    pub elapsed: f64,
}

/// Number of RK4 steps used for a time span.
pub fn step_count(t: f64) -> usize {
    ((t.abs() / MAX_STEP).ceil() as usize).max(1)
}

/// Integrates the autonomous system `y' = rhs(y)` from time 0, calling `visit` at every entry
/// of the non-decreasing, non-negative `times`. Each gap between visits is split into equal
/// steps no longer than `max_step`.
pub(crate) fn rk4_march<const N: usize, F, V>(
    rhs: F,
    y0: [f64; N],
    times: &[f64],
    max_step: f64,
    mut visit: V,
) -> Result<()>
where
    F: Fn(&[f64; N]) -> [f64; N],
    V: FnMut(usize, f64, &[f64; N]) -> Result<()>,
{
    let mut y = y0;
    let mut now = 0.0;
    for (k, &target) in times.iter().enumerate() {
        let span = target - now;
        if span < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "march times must be non-decreasing and non-negative, got {target} after {now}"
            )));
        }
        if span > 0.0 {
            let steps = ((span / max_step).ceil() as usize).max(1);
            let h = span / steps as f64;
            for _ in 0..steps {
                y = rk4_step(&rhs, &y, h);
            }
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Integration {
                    time: target,
                    reason: "state became non-finite".into(),
                });
            }
        }
        now = target;
        visit(k, target, &y)?;
    }
    Ok(())
}

#[inline]
fn rk4_step<const N: usize, F: Fn(&[f64; N]) -> [f64; N]>(rhs: &F, y: &[f64; N], h: f64) -> [f64; N] {
    let k1 = rhs(y);
    let k2 = rhs(&axpy(y, 0.5 * h, &k1));
    let k3 = rhs(&axpy(y, 0.5 * h, &k2));
    let k4 = rhs(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

fn check_horizon(t: f64) -> Result<()> {
    if !t.is_finite() || t.abs() > DEFAULT_HORIZON {
        return Err(Error::InvalidArgument(format!(
            "flow time {t} exceeds the horizon {DEFAULT_HORIZON}"
        )));
    }
    Ok(())
}

/// `Phi^t(x)` with its Jacobian; negative `t` runs backwards.
pub fn flow(field: &VectorFieldSpec, x: &TorusPoint, t: f64) -> Result<FlowResult> {
    flow_with_steps(field, x, t, step_count(t))
}

/// [`flow`] with an explicit number of RK4 steps.
pub fn flow_with_steps(field: &VectorFieldSpec, x: &TorusPoint, t: f64, steps: usize) -> Result<FlowResult> {
    check_horizon(t)?;
    let (lift, jacobian) = flow_lift(field, &x.lift(), t, steps.max(1))?;
    Ok(FlowResult {
        endpoint: TorusPoint::from_lift(lift),
        lift,
        jacobian,
        elapsed: t,
    })
}

/// `Psi^t(x) = Phi^{-t}(x)`.
pub fn inverse_flow(field: &VectorFieldSpec, x: &TorusPoint, t: f64) -> Result<FlowResult> {
    let mut r = flow(field, x, -t)?;
    r.elapsed = t;
    Ok(r)
}

/// Flow on the cover with `steps` fixed RK4 steps over `[0, t]`.
pub(crate) fn flow_lift(field: &VectorFieldSpec, x: &Vec2, t: f64, steps: usize) -> Result<(Vec2, Mat2)> {
    if let VectorFieldSpec::Constant { v } = field {
        return Ok((x + Vec2::new(v[0], v[1]) * t, Mat2::identity()));
    }
    if t == 0.0 {
        return Ok((*x, Mat2::identity()));
    }
    let h = t / steps as f64;
    let rhs = |y: &[f64; 6]| -> [f64; 6] {
        let (u, du) = field.eval_with_jacobian(&Vec2::new(y[0], y[1]));
        let f = Mat2::new(y[2], y[3], y[4], y[5]);
        let df = du * f;
        [u[0], u[1], df[(0, 0)], df[(0, 1)], df[(1, 0)], df[(1, 1)]]
    };
    let mut y = [x[0], x[1], 1.0, 0.0, 0.0, 1.0];
    for _ in 0..steps {
        y = rk4_step(&rhs, &y, h);
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration {
            time: t,
            reason: "state became non-finite".into(),
        });
    }
    let jac = Mat2::new(y[2], y[3], y[4], y[5]);
    let det = jac.determinant();
    if !(det > 0.0) {
        return Err(Error::Integration {
            time: t,
            reason: format!("variational determinant {det} is not positive"),
        });
    }
    Ok((Vec2::new(y[0], y[1]), jac))
}

/// Position-only flow on the cover (no variational equation).
pub fn flow_position(field: &VectorFieldSpec, x: &Vec2, t: f64) -> Result<Vec2> {
    if let VectorFieldSpec::Constant { v } = field {
        return Ok(x + Vec2::new(v[0], v[1]) * t);
    }
    if t == 0.0 {
        return Ok(*x);
    }
    let steps = step_count(t);
    let h = t / steps as f64;
    let rhs = |y: &[f64; 2]| -> [f64; 2] {
        let u = field.eval(&Vec2::new(y[0], y[1]));
        [u[0], u[1]]
    };
    let mut y = [x[0], x[1]];
    for _ in 0..steps {
        y = rk4_step(&rhs, &y, h);
    }
    if !(y[0].is_finite() && y[1].is_finite()) {
        return Err(Error::Integration {
            time: t,
            reason: "state became non-finite".into(),
        });
    }
    Ok(Vec2::new(y[0], y[1]))
}

/// Flow endpoint using the closed form when the field has one, RK4 otherwise.
pub fn flow_position_fast(field: &VectorFieldSpec, x: &Vec2, t: f64) -> Result<Vec2> {
    match field.exact_flow(x, t)? {
        Some(y) => Ok(y),
        None => flow_position(field, x, t),
    }
}

/// State of an inverse flow `Psi^t` started at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    pub time: f64,
    /// `Psi^t(x)` on the cover.
    pub position: Vec2,
    /// `D Psi^t(x)`.
    pub jacobian: Mat2,
    /// `grad_x log det D Psi^t(x)`; zero unless requested.
    pub log_det_gradient: Vec2,
}

impl FlowState {
    pub fn det(&self) -> f64 {
        self.jacobian.determinant()
    }
}

/// Runs the inverse flow `Psi^t` of `field` from `x` and reports its state at each of the
/// non-decreasing `times`. With `with_gradient` the gradient of `log det D Psi^t` is carried
/// along, which needs second derivatives of the field.
pub fn march_inverse_flow<V>(
    field: &VectorFieldSpec,
    x: &Vec2,
    times: &[f64],
    with_gradient: bool,
    mut visit: V,
) -> Result<()>
where
    V: FnMut(usize, &FlowState) -> Result<()>,
{
    if let VectorFieldSpec::Constant { v } = field {
        let v = Vec2::new(v[0], v[1]);
        for (k, &t) in times.iter().enumerate() {
            visit(
                k,
                &FlowState {
                    time: t,
                    position: x - v * t,
                    jacobian: Mat2::identity(),
                    log_det_gradient: Vec2::zeros(),
                },
            )?;
        }
        return Ok(());
    }
    if with_gradient {
        let rhs = |y: &[f64; 8]| -> [f64; 8] {
            let d = field.derivs(&Vec2::new(y[0], y[1]), 2);
            let f = Mat2::new(y[2], y[3], y[4], y[5]);
            let df = -(d.jacobian * f);
            let dg = -(f.transpose() * d.grad_div);
            [
                -d.value[0],
                -d.value[1],
                df[(0, 0)],
                df[(0, 1)],
                df[(1, 0)],
                df[(1, 1)],
                dg[0],
                dg[1],
            ]
        };
        let y0 = [x[0], x[1], 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        rk4_march(rhs, y0, times, MAX_STEP, |k, t, y| {
            visit(
                k,
                &FlowState {
                    time: t,
                    position: Vec2::new(y[0], y[1]),
                    jacobian: Mat2::new(y[2], y[3], y[4], y[5]),
                    log_det_gradient: Vec2::new(y[6], y[7]),
                },
            )
        })
    } else {
        let rhs = |y: &[f64; 6]| -> [f64; 6] {
            let (u, du) = field.eval_with_jacobian(&Vec2::new(y[0], y[1]));
            let f = Mat2::new(y[2], y[3], y[4], y[5]);
            let df = -(du * f);
            [-u[0], -u[1], df[(0, 0)], df[(0, 1)], df[(1, 0)], df[(1, 1)]]
        };
        let y0 = [x[0], x[1], 1.0, 0.0, 0.0, 1.0];
        rk4_march(rhs, y0, times, MAX_STEP, |k, t, y| {
            visit(
                k,
                &FlowState {
                    time: t,
                    position: Vec2::new(y[0], y[1]),
                    jacobian: Mat2::new(y[2], y[3], y[4], y[5]),
                    log_det_gradient: Vec2::zeros(),
                },
            )
        })
    }
}

/// `Psi^{(s,t)}(x) = Psi_1^s(Psi_0^t(x))` with its chain Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedInverse {
    pub point: TorusPoint,
    pub lift: Vec2,
    /// `Psi_0^t(x)` on the cover.
    pub intermediate: Vec2,
    /// `F_1^s(Psi_0^t x) F_0^t(x)`.
    pub chain_jacobian: Mat2,
    pub scalar_jacobian: f64,
}

pub fn composed_inverse(
    u0: &VectorFieldSpec,
    u1: &VectorFieldSpec,
    x: &TorusPoint,
    s: f64,
    t: f64,
) -> Result<ComposedInverse> {
    composed_inverse_with_steps(u0, u1, &x.lift(), s, t, step_count(s), step_count(t))
}

/// [`composed_inverse`] on the cover with explicit step counts for each leg.
pub fn composed_inverse_with_steps(
    u0: &VectorFieldSpec,
    u1: &VectorFieldSpec,
    x: &Vec2,
    s: f64,
    t: f64,
    steps_s: usize,
    steps_t: usize,
) -> Result<ComposedInverse> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "switch times must be non-negative, got s={s}, t={t}"
        )));
    }
    check_horizon(s)?;
    check_horizon(t)?;
    let (y, f0) = flow_lift(u0, x, -t, steps_t.max(1))?;
    let (z, f1) = flow_lift(u1, &y, -s, steps_s.max(1))?;
    let chain = f1 * f0;
    Ok(ComposedInverse {
        point: TorusPoint::from_lift(z),
        lift: z,
        intermediate: y,
        chain_jacobian: chain,
        scalar_jacobian: chain.determinant(),
    })
}

/// Least-squares slope of `log y` against `log x`, ignoring non-positive entries.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    pub t: f64,
    pub min_det: f64,
    pub max_det: f64,
    /// Largest absolute entry of `D Phi^t` over the scanned starts.
    pub max_partial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianScan {
    pub min_det: f64,
    pub max_det: f64,
    pub rows: Vec<GrowthRow>,
    /// Fitted exponent of `max_partial` against `1 + t`.
    pub growth_exponent: f64,
}

/// Scans `det D Phi^t(x)` for `t = 1..=t_max` over a grid of starting points.
pub fn jacobian_bounds_scan(field: &VectorFieldSpec, t_max: usize, grid_resolution: usize) -> Result<JacobianScan> {
    if field.conjugacy().is_none() && !field.is_constant() {
        return Err(Error::InvalidArgument(
            "jacobian scans need a conjugated or constant field".into(),
        ));
    }
    if t_max == 0 || grid_resolution == 0 {
        return Err(Error::InvalidArgument("t_max and grid_resolution must be positive".into()));
    }
    let times: Vec<f64> = (1..=t_max).map(|k| k as f64).collect();
    let mut rows: Vec<GrowthRow> = times
        .iter()
        .map(|&t| GrowthRow {
            t,
            min_det: f64::INFINITY,
            max_det: f64::NEG_INFINITY,
            max_partial: 0.0,
        })
        .collect();
    // forward flow Phi^t is the inverse flow of -u
    let reversed = negate(field);
    for i in 0..grid_resolution {
        for j in 0..grid_resolution {
            let x = Vec2::new(
                (i as f64 + 0.5) / grid_resolution as f64,
                (j as f64 + 0.5) / grid_resolution as f64,
            );
            march_inverse_flow(&reversed, &x, &times, false, |k, st| {
                let d = st.det();
                let row = &mut rows[k];
                row.min_det = row.min_det.min(d);
                row.max_det = row.max_det.max(d);
                row.max_partial = row.max_partial.max(st.jacobian.amax());
                Ok(())
            })
            .map_err(|e| e.context(format!("jacobian scan from ({:.4}, {:.4})", x[0], x[1])))?;
        }
    }
    let min_det = rows.iter().map(|r| r.min_det).fold(f64::INFINITY, f64::min);
    let max_det = rows.iter().map(|r| r.max_det).fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 + r.t).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_partial).collect();
    let growth_exponent = loglog_slope(&xs, &ys).unwrap_or(0.0);
    Ok(JacobianScan {
        min_det,
        max_det,
        rows,
        growth_exponent,
    })
}

/// The field `-u`.
pub fn negate(field: &VectorFieldSpec) -> VectorFieldSpec {
    match field {
        VectorFieldSpec::Constant { v } => VectorFieldSpec::Constant { v: [-v[0], -v[1]] },
        VectorFieldSpec::Conjugated { base, sigma } => VectorFieldSpec::Conjugated {
            base: [-base[0], -base[1]],
            sigma: sigma.clone(),
        },
        VectorFieldSpec::Trig { components } => {
            let flip = |terms: &Vec<crate::fields::TrigTerm>| {
                terms
                    .iter()
                    .map(|t| crate::fields::TrigTerm {
                        wave: t.wave,
                        cos: -t.cos,
                        sin: -t.sin,
                    })
                    .collect::<Vec<_>>()
            };
            VectorFieldSpec::Trig {
                components: [flip(&components[0]), flip(&components[1])],
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{presets, ALPHA, BETA};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_flow_is_translation() {
        let f = VectorFieldSpec::constant(1.0, ALPHA);
        let r = flow(&f, &TorusPoint::origin(), 1.0).unwrap();
        assert!(r.endpoint.x1().abs() < 1e-15);
        assert!((r.endpoint.x2() - ALPHA).abs() < 1e-15);
        assert_eq!(r.jacobian, Mat2::identity());
    }

    #[test]
    fn zero_time_is_identity() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = TorusPoint::new(0.3, 0.9);
        let r = flow(&pair.u0, &x, 0.0).unwrap();
        assert_eq!(r.endpoint, x);
        assert_eq!(r.jacobian, Mat2::identity());
    }

    #[test]
    fn horizon_is_enforced() {
        let f = VectorFieldSpec::constant(1.0, ALPHA);
        assert!(flow(&f, &TorusPoint::origin(), 250.0).is_err());
    }

    #[test]
    fn conjugated_flow_matches_conjugacy() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let (sigma, base) = pair.u0.conjugacy().unwrap();
        let x = Vec2::new(0.41, 0.27);
        let r = flow(&pair.u0, &TorusPoint::from_lift(x), 10.0).unwrap();
        let straight = sigma.forward_lift(&x) + base * 10.0;
        assert!((sigma.forward_lift(&r.lift) - straight).amax() < 1e-8);
        let expected = sigma.jacobian(&x).determinant() / sigma.jacobian(&r.lift).determinant();
        assert!((r.jacobian.determinant() / expected - 1.0).abs() < 1e-7);
    }

    #[test]
    fn inverse_round_trip() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = TorusPoint::new(0.12, 0.58);
        let fwd = flow(&pair.u1, &x, 25.0).unwrap();
        let back = inverse_flow(&pair.u1, &fwd.endpoint, 25.0).unwrap();
        assert!(back.endpoint.distance(&x) < 1e-9);
    }

    #[test]
    fn constant_inverse_flow() {
        let f = VectorFieldSpec::constant(1.0, ALPHA);
        let r = inverse_flow(&f, &TorusPoint::new(0.5, 0.5), 0.25).unwrap();
        assert!((r.endpoint.x1() - 0.25).abs() < 1e-15);
        assert!((r.endpoint.x2() - (0.5 - 0.25 * ALPHA)).abs() < 1e-15);
    }

    #[test]
    fn group_law() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = TorusPoint::new(rng.gen(), rng.gen());
            let t1: f64 = rng.gen_range(0.0..5.0);
            let t2: f64 = rng.gen_range(0.0..5.0);
            let whole = flow(&pair.u0, &x, t1 + t2).unwrap();
            let a = flow(&pair.u0, &x, t1).unwrap();
            let b = flow(&pair.u0, &a.endpoint, t2).unwrap();
            assert!(whole.endpoint.distance(&b.endpoint) < 1e-9);
            assert!((whole.jacobian - b.jacobian * a.jacobian).amax() < 1e-7);
        }
    }

    #[test]
    fn composed_inverse_of_constant_pair() {
        let pair = presets::constant_pair();
        let x = TorusPoint::new(0.2, 0.7);
        let c = composed_inverse(&pair.u0, &pair.u1, &x, 1.5, 0.4).unwrap();
        let expected = TorusPoint::new(0.2 - 0.4 - 1.5 * -BETA, 0.7 - 0.4 * ALPHA - 1.5);
        assert!(c.point.distance(&expected) < 1e-14);
        assert_eq!(c.scalar_jacobian, 1.0);
        let zero = composed_inverse(&pair.u0, &pair.u1, &x, 0.0, 0.0).unwrap();
        assert_eq!(zero.point, x);
        assert_eq!(zero.chain_jacobian, Mat2::identity());
        assert!(composed_inverse(&pair.u0, &pair.u1, &x, -1.0, 0.0).is_err());
    }

    #[test]
    fn composed_inverse_round_trip_and_fd_determinant() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = Vec2::new(0.33, 0.61);
        let (s, t) = (1.3, 0.7);
        let c = composed_inverse(&pair.u0, &pair.u1, &TorusPoint::from_lift(x), s, t).unwrap();
        let back = flow(&pair.u0, &flow(&pair.u1, &c.point, s).unwrap().endpoint, t).unwrap();
        assert!(back.endpoint.distance(&TorusPoint::from_lift(x)) < 1e-8);

        let (ss, st) = (step_count(s), step_count(t));
        let map = |y: Vec2| composed_inverse_with_steps(&pair.u0, &pair.u1, &y, s, t, ss, st).unwrap().lift;
        let h = 1e-5;
        let c1 = (map(x + Vec2::new(h, 0.0)) - map(x - Vec2::new(h, 0.0))) / (2.0 * h);
        let c2 = (map(x + Vec2::new(0.0, h)) - map(x - Vec2::new(0.0, h))) / (2.0 * h);
        let fd = Mat2::from_columns(&[c1, c2]).determinant();
        assert!((fd - c.scalar_jacobian).abs() < 1e-6);
    }

    #[test]
    fn march_matches_single_flows() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = Vec2::new(0.8, 0.05);
        let times = [0.0, 0.37, 1.0, 2.5];
        let mut states = Vec::new();
        march_inverse_flow(&pair.u1, &x, &times, true, |_, st| {
            states.push(*st);
            Ok(())
        })
        .unwrap();
        for st in &states {
            let r = inverse_flow(&pair.u1, &TorusPoint::from_lift(x), st.time).unwrap();
            assert!(TorusPoint::from_lift(st.position).distance(&r.endpoint) < 1e-9);
            assert!((st.jacobian - r.jacobian).amax() < 1e-8);
        }
        // gradient of log det against centred differences in x
        let h = 1e-5;
        let logdet = |y: Vec2, t: f64| {
            let n = step_count(t);
            flow_lift(&pair.u1, &y, -t, n).unwrap().1.determinant().ln()
        };
        let st = states[3];
        let fd = Vec2::new(
            (logdet(x + Vec2::new(h, 0.0), 2.5) - logdet(x - Vec2::new(h, 0.0), 2.5)) / (2.0 * h),
            (logdet(x + Vec2::new(0.0, h), 2.5) - logdet(x - Vec2::new(0.0, h), 2.5)) / (2.0 * h),
        );
        assert!((fd - st.log_det_gradient).amax() < 1e-6, "{fd:?} vs {:?}", st.log_det_gradient);
    }

    #[test]
    fn jacobian_scan_identity_sigma() {
        let f = crate::fields::make_conjugated_field([1.0, ALPHA], crate::fields::DiffeoSpec::identity());
        let scan = jacobian_bounds_scan(&f, 5, 4).unwrap();
        assert_eq!(scan.min_det, 1.0);
        assert_eq!(scan.max_det, 1.0);
    }

    #[test]
    fn loglog_slope_recovers_power() {
        let xs: Vec<f64> = (1..20).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
    }
}
