//! Derivatives of `Q h` that never differentiate `h`.
//!
//! With `y = Psi_0^t x`, `F_0 = D Psi_0^t(x)` and `U(y) = (u1(y), u0(y))`, the matrix
//! `tau_t(x) = -U(y)^{-1} F_0` turns a spatial direction `xi` into the switch-time direction
//! `(a, b) = tau_t(x) xi` along which `h(Psi^{(s,t)} x)` changes at the same rate. Integrating
//! by parts against the exponential density moves that derivative onto the weights:
//!
//! ```text
//! D_x(Qh)(x) xi = E[(D_x J xi + K(x,S,T,xi)) h(Psi^{(S,T)} x)]
//!               + E[B_s(x,S,xi) h(Psi^{(S,0)} x)] + E[B_t(x,T,xi) h(Psi^{(0,T)} x)]
//! K   = J (lambda (a + b) - d_t b) - d_s J a - d_t J b
//! B_s = -lambda J(x,s,0) b_0,    B_t = -lambda J(x,0,t) a_t
//! ```
//!
//! The time derivatives of `J` and `tau` and the spatial derivative of `J` are computed from
//! the variational system carried along each march, including `grad log det D Psi`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{drive_matrix_at, FieldPair};
use crate::flows::{composed_inverse_with_steps, flow_lift, loglog_slope, march_inverse_flow, step_count, FlowState};
use crate::grid::{cell_center, DensityGrid, PeriodicSpline};
use crate::quadrature::{QuadratureRule, Rule1d};
use crate::sampler::trajectory_rng;
use crate::torus::{Mat2, TorusPoint, Vec2};
use crate::transfer::TransferOperator;

/// Step of the switch-time finite differences in [`check_transfer_identity`].
pub const TIME_FD_STEP: f64 = 1e-5;

/// `tau_t(x)` together with `d/dt tau_t(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEval {
    pub tau: Mat2,
    pub dtau_dt: Mat2,
}

/// Everything the kernels need about the `Psi_0` leg at one time.
#[derive(Debug, Clone, Copy)]
struct OuterNode {
    y: Vec2,
    f0: Mat2,
    j0: f64,
    g0: Vec2,
    tau: TauEval,
    u0: Vec2,
    div_u0: f64,
}

fn outer_node(fields: &FieldPair, st: &FlowState) -> Result<OuterNode> {
    let y = st.position;
    let d0 = fields.u0.derivs(&y, 1);
    let d1 = fields.u1.derivs(&y, 1);
    let drive = drive_matrix_at(&fields.u0, &fields.u1, &y)?;
    let ydot = -d0.value;
    let du = Mat2::from_columns(&[d1.jacobian * ydot, d0.jacobian * ydot]);
    let uinv = drive.inverse;
    let f0 = st.jacobian;
    let tau = -(uinv * f0);
    let dtau_dt = uinv * du * uinv * f0 + uinv * d0.jacobian * f0;
    Ok(OuterNode {
        y,
        f0,
        j0: f0.determinant(),
        g0: st.log_det_gradient,
        tau: TauEval { tau, dtau_dt },
        u0: d0.value,
        div_u0: d0.div(),
    })
}

fn single_state(field: &crate::fields::VectorFieldSpec, x: &Vec2, t: f64, with_gradient: bool) -> Result<FlowState> {
    let mut out = None;
    march_inverse_flow(field, x, &[t], with_gradient, |_, st| {
        out = Some(*st);
        Ok(())
    })?;
    Ok(out.expect("one march node"))
}

fn check_times(s: f64, t: f64) -> Result<()> {
    if s < 0.0 || t < 0.0 || !s.is_finite() || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "switch times must be finite and non-negative, got s={s}, t={t}"
        )));
    }
    Ok(())
}

pub fn tau(fields: &FieldPair, x: &TorusPoint, t: f64) -> Result<Mat2> {
    Ok(tau_with_derivative(fields, x, t)?.tau)
}

pub fn tau_with_derivative(fields: &FieldPair, x: &TorusPoint, t: f64) -> Result<TauEval> {
    check_times(0.0, t)?;
    let st = single_state(&fields.u0, &x.lift(), t, false)?;
    Ok(outer_node(fields, &st)?.tau)
}

/// `|D_x Psi^{(s,t)}(x) xi - D_{(s,t)} Psi^{(s,t)}(x) tau_t(x) xi|`, the switch-time
/// derivative taken by centred differences on the cover with fixed RK4 step counts.
pub fn check_transfer_identity(fields: &FieldPair, x: &TorusPoint, s: f64, t: f64, xi: Vec2) -> Result<f64> {
    check_times(s, t)?;
    let d = TIME_FD_STEP;
    let (ns, nt) = (step_count(s + d), step_count(t + d));
    let x = x.lift();
    let lhs = composed_inverse_with_steps(&fields.u0, &fields.u1, &x, s, t, ns, nt)?.chain_jacobian * xi;
    // negative times are allowed here: the map is smooth through s = 0 and t = 0
    let psi = |ss: f64, tt: f64| -> Result<Vec2> {
        let (y, _) = flow_lift(&fields.u0, &x, -tt, nt)?;
        Ok(flow_lift(&fields.u1, &y, -ss, ns)?.0)
    };
    let ds = (psi(s + d, t)? - psi(s - d, t)?) / (2.0 * d);
    let dt = (psi(s, t + d)? - psi(s, t - d)?) / (2.0 * d);
    let tau = tau(fields, &TorusPoint::from_lift(x), t)?;
    let rhs = Mat2::from_columns(&[ds, dt]) * (tau * xi);
    Ok((lhs - rhs).norm())
}

/// Largest [`check_transfer_identity`] residual over `samples` random points, switch times in
/// `[0, max_time]` and unit directions.
pub fn transfer_identity_sweep(fields: &FieldPair, samples: usize, max_time: f64, seed: u64) -> Result<f64> {
    let mut rng = trajectory_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = TorusPoint::new(rng.gen(), rng.gen());
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let xi = Vec2::new(theta.cos(), theta.sin());
        let (s, t) = (rng.gen_range(0.0..=max_time), rng.gen_range(0.0..=max_time));
        worst = worst.max(check_transfer_identity(fields, &x, s, t, xi)?);
    }
    Ok(worst)
}

/// Kernel evaluator for `G = J_{(s,t)}(x)` at the switching rate `lambda`.
#[derive(Debug, Clone)]
pub struct IbpKernels {
    fields: FieldPair,
    lambda: f64,
}

pub fn build_kernels(fields: &FieldPair, lambda: f64) -> Result<IbpKernels> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    Ok(IbpKernels {
        fields: fields.clone(),
        lambda,
    })
}

/// Values of `J` and its derivatives at one `(x, s, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianDerivatives {
    pub j: f64,
    /// `(d_s J, d_t J)`.
    pub d_time: Vec2,
    /// `grad_x J`.
    pub d_space: Vec2,
}

impl IbpKernels {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn legs(&self, x: &Vec2, s: f64, t: f64) -> Result<(OuterNode, FlowState)> {
        check_times(s, t)?;
        let outer = outer_node(&self.fields, &single_state(&self.fields.u0, x, t, true)?)?;
        let inner = single_state(&self.fields.u1, &outer.y, s, true)?;
        Ok((outer, inner))
    }

    /// `J_{(s,t)}(x)` with its switch-time and spatial gradients.
    pub fn jacobian_derivatives(&self, x: &TorusPoint, s: f64, t: f64) -> Result<JacobianDerivatives> {
        let (o, inner) = self.legs(&x.lift(), s, t)?;
        let j = o.j0 * inner.det();
        let div_u1 = self.fields.u1.divergence(&inner.position);
        let g1 = inner.log_det_gradient;
        Ok(JacobianDerivatives {
            j,
            d_time: Vec2::new(-div_u1 * j, -j * (g1.dot(&o.u0) + o.div_u0)),
            d_space: (o.f0.transpose() * g1 + o.g0) * j,
        })
    }

    /// Interior kernel `K(x, s, t, xi)`.
    pub fn interior(&self, x: &TorusPoint, s: f64, t: f64, xi: Vec2) -> Result<f64> {
        let (o, inner) = self.legs(&x.lift(), s, t)?;
        let j1 = inner.det();
        let div_u1 = self.fields.u1.divergence(&inner.position);
        Ok(interior_value(self.lambda, &o, j1, inner.log_det_gradient, div_u1, xi))
    }

    /// `B_s(x, s, xi) = -lambda J(x, s, 0) (tau_0 xi)_2`.
    pub fn boundary_s(&self, x: &TorusPoint, s: f64, xi: Vec2) -> Result<f64> {
        check_times(s, 0.0)?;
        let x = x.lift();
        let drive = drive_matrix_at(&self.fields.u0, &self.fields.u1, &x)?;
        let b0 = (-(drive.inverse * xi))[1];
        let j1 = single_state(&self.fields.u1, &x, s, false)?.det();
        Ok(-self.lambda * j1 * b0)
    }

    /// `B_t(x, t, xi) = -lambda J(x, 0, t) (tau_t xi)_1`.
    pub fn boundary_t(&self, x: &TorusPoint, t: f64, xi: Vec2) -> Result<f64> {
        check_times(0.0, t)?;
        let o = outer_node(&self.fields, &single_state(&self.fields.u0, &x.lift(), t, false)?)?;
        Ok(-self.lambda * o.j0 * (o.tau.tau * xi)[0])
    }
}

#[inline]
fn interior_value(lambda: f64, o: &OuterNode, j1: f64, g1: Vec2, div_u1: f64, xi: Vec2) -> f64 {
    let ab = o.tau.tau * xi;
    let db = (o.tau.dtau_dt * xi)[1];
    let j = o.j0 * j1;
    let ds_j = -div_u1 * j;
    let dt_j = -j * (g1.dot(&o.u0) + o.div_u0);
    j * (lambda * (ab[0] + ab[1]) - db) - ds_j * ab[0] - dt_j * ab[1]
}

#[inline]
fn dx_j_value(o: &OuterNode, j1: f64, g1: Vec2, xi: Vec2) -> f64 {
    o.j0 * j1 * (g1.dot(&(o.f0 * xi)) + o.g0.dot(&xi))
}

fn exponential_rate(rule: &Rule1d, lambda: f64) -> Result<()> {
    match rule.exponential_rate() {
        Some(rate) if (rate - lambda).abs() <= 1e-12 * lambda => Ok(()),
        Some(rate) => Err(Error::InvalidArgument(format!(
            "quadrature built for rate {rate}, kernels use lambda {lambda}"
        ))),
        None => Err(Error::InvalidArgument(
            "integration by parts needs exponential switching times".into(),
        )),
    }
}

/// `D_x(Qh)(x) xi` by the integration-by-parts formula, each expectation by the matching
/// tensor or one-dimensional rule.
pub fn ibp_gradient(h: &DensityGrid, fields: &FieldPair, quad: &QuadratureRule, lambda: f64, x: &TorusPoint, xi: Vec2) -> Result<f64> {
    ibp_gradient_with_spline(&h.spline(), fields, quad.axis(), lambda, x, xi)
}

pub fn ibp_gradient_with_spline(
    h: &PeriodicSpline,
    fields: &FieldPair,
    rule: &Rule1d,
    lambda: f64,
    x: &TorusPoint,
    xi: Vec2,
) -> Result<f64> {
    exponential_rate(rule, lambda)?;
    let nodes = rule.nodes();
    let w = rule.weights();
    let x = x.lift();
    let mut bulk = 0.0;
    let mut edge_t = 0.0;
    march_inverse_flow(&fields.u0, &x, nodes, true, |kt, st| {
        let o = outer_node(fields, st)?;
        let a = (o.tau.tau * xi)[0];
        edge_t += w[kt] * (-lambda * o.j0 * a) * h.eval(&o.y);
        let mut inner = 0.0;
        march_inverse_flow(&fields.u1, &o.y, nodes, true, |ks, st1| {
            let j1 = st1.det();
            let g1 = st1.log_det_gradient;
            let div_u1 = fields.u1.divergence(&st1.position);
            let kernel = dx_j_value(&o, j1, g1, xi) + interior_value(lambda, &o, j1, g1, div_u1, xi);
            inner += w[ks] * kernel * h.eval(&st1.position);
            Ok(())
        })?;
        bulk += w[kt] * inner;
        Ok(())
    })?;
    let drive = drive_matrix_at(&fields.u0, &fields.u1, &x)?;
    let b0 = (-(drive.inverse * xi))[1];
    let mut edge_s = 0.0;
    march_inverse_flow(&fields.u1, &x, nodes, false, |ks, st| {
        edge_s += w[ks] * (-lambda * st.det() * b0) * h.eval(&st.position);
        Ok(())
    })?;
    Ok(bulk + edge_t + edge_s)
}

/// `(d_1 Qh, d_2 Qh)` at every cell centre.
#[derive(Debug, Clone)]
pub struct GradientGrids {
    pub d1: DensityGrid,
    pub d2: DensityGrid,
}

impl GradientGrids {
    /// Mean over cells of `max(|d1|, |d2|, |d1 + d2|/sqrt 2, |d1 - d2|/sqrt 2)`.
    pub fn sup_l1(&self) -> f64 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let n = self.d1.n();
        self.d1
            .values()
            .iter()
            .zip(self.d2.values())
            .map(|(a, b)| a.abs().max(b.abs()).max(((a + b) * r).abs()).max(((a - b) * r).abs()))
            .sum::<f64>()
            / (n * n) as f64
    }

    /// Mean over cells of the Euclidean norm of the gradient.
    pub fn euclidean_l1(&self) -> f64 {
        let n = self.d1.n();
        self.d1
            .values()
            .iter()
            .zip(self.d2.values())
            .map(|(a, b)| a.hypot(*b))
            .sum::<f64>()
            / (n * n) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.d1.values().iter().chain(self.d2.values()).all(|v| v.is_finite())
    }
}

/// The integration-by-parts gradient on the whole grid, organised like `Q = P_0 P_1`: the
/// `s`-expectations are tabulated once per cell and interpolated along each `Psi_0` march.
pub fn ibp_gradient_grid(h: &DensityGrid, fields: &FieldPair, rule: &Rule1d, lambda: f64) -> Result<GradientGrids> {
    exponential_rate(rule, lambda)?;
    let n = h.n();
    let nodes = rule.nodes();
    let w = rule.weights();
    let h_spline = h.spline();

    // inner tables: E[j1 h], E[d_s j1 h], E[j1 grad log j1 h] along Psi_1 from each cell
    let inner: Vec<[f64; 4]> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let y = cell_center(n, idx / n, idx % n);
            let mut acc = [0.0; 4];
            march_inverse_flow(&fields.u1, &y, nodes, true, |k, st| {
                let j1 = st.det();
                let hv = h_spline.eval(&st.position) * w[k] * j1;
                let div_u1 = fields.u1.divergence(&st.position);
                acc[0] += hv;
                acc[1] -= div_u1 * hv;
                acc[2] += st.log_det_gradient[0] * hv;
                acc[3] += st.log_det_gradient[1] * hv;
                Ok(())
            })
            .map_err(|e| e.context(format!("inner march from cell {idx}")))?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let table = |c: usize| DensityGrid::new(n, inner.iter().map(|v| v[c]).collect());
    let i0 = table(0)?;
    let splines: Vec<PeriodicSpline> = (0..4).map(|c| table(c).map(|g| g.spline())).collect::<Result<_>>()?;

    let grads: Vec<[f64; 2]> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let x = cell_center(n, idx / n, idx % n);
            let drive = drive_matrix_at(&fields.u0, &fields.u1, &x)?;
            let b0 = -drive.inverse.row(1);
            let mut out = [0.0; 2];
            for k in 0..2 {
                out[k] = -lambda * b0[k] * i0.values()[idx];
            }
            march_inverse_flow(&fields.u0, &x, nodes, true, |kt, st| {
                let o = outer_node(fields, st)?;
                let e0 = splines[0].eval(&o.y);
                let es = splines[1].eval(&o.y);
                let eg = Vec2::new(splines[2].eval(&o.y), splines[3].eval(&o.y));
                let hy = h_spline.eval(&o.y);
                for (k, slot) in out.iter_mut().enumerate() {
                    let a = o.tau.tau[(0, k)];
                    let b = o.tau.tau[(1, k)];
                    let db = o.tau.dtau_dt[(1, k)];
                    let f0xi = o.f0.column(k).into_owned();
                    let bulk = eg.dot(&f0xi)
                        + o.g0[k] * e0
                        + (lambda * (a + b) - db) * e0
                        - a * es
                        + b * (eg.dot(&o.u0) + o.div_u0 * e0);
                    *slot += w[kt] * o.j0 * (bulk - lambda * a * hy);
                }
                Ok(())
            })
            .map_err(|e| e.context(format!("outer march from cell {idx}")))?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(GradientGrids {
        d1: DensityGrid::new(n, grads.iter().map(|g| g[0]).collect())?,
        d2: DensityGrid::new(n, grads.iter().map(|g| g[1]).collect())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    /// `||g_ibp - g_fd||_2 / ||g_fd||_2` over both components and all cells.
    pub relative_l2: f64,
    pub finite: bool,
}

/// Compares the grid IBP gradient with centred differences of `Q h` computed by composition
/// with the same rule.
pub fn gradient_fd_discrepancy(h: &DensityGrid, fields: &FieldPair, rule: &Rule1d, lambda: f64) -> Result<GradientCheck> {
    let grads = ibp_gradient_grid(h, fields, rule, lambda)?;
    let qh = TransferOperator::new(fields.clone(), rule.clone()).apply(h)?;
    let (f1, f2) = qh.gradient_fd();
    let (mut num, mut den) = (0.0, 0.0);
    for (g, f) in grads.d1.values().iter().zip(&f1).chain(grads.d2.values().iter().zip(&f2)) {
        num += (g - f).powi(2);
        den += f * f;
    }
    let relative_l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(GradientCheck {
        relative_l2,
        finite: grads.is_finite(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L1GradientBound {
    /// Mean over cells of the sup-over-directions surrogate of `|grad Qh|`.
    pub gradient_l1: f64,
    pub h_l1: f64,
    /// `gradient_l1 / h_l1`.
    pub k_hat: f64,
}

pub fn l1_gradient_bound(h: &DensityGrid, fields: &FieldPair, rule: &Rule1d, lambda: f64) -> Result<L1GradientBound> {
    let h_l1 = h.l1_norm();
    if !(h_l1 > 0.0) {
        return Err(Error::InvalidArgument("h must have positive L1 norm".into()));
    }
    let grads = ibp_gradient_grid(h, fields, rule, lambda)?;
    let gradient_l1 = grads.sup_l1();
    Ok(L1GradientBound {
        gradient_l1,
        h_l1,
        k_hat: gradient_l1 / h_l1,
    })
}

/// Envelope of `|K(x, s, t, xi)|` over sampled points and directions as a function of `s + t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelBoundFit {
    /// `(s + t, max |K|)` pairs.
    pub envelope: Vec<(f64, f64)>,
    /// Fitted exponent of the envelope against `1 + s + t`.
    pub growth_exponent: f64,
    /// Smallest `c` with `|K| <= c (1 + s + t)^degree` on the samples.
    pub constant: f64,
    pub degree: u32,
}

/// Samples the interior kernel on an `(s, t)` lattice over `[0, t_max]^2` at the given points
/// and unit directions, and fits a polynomial envelope of the given degree.
pub fn kernel_polynomial_bound(
    kernels: &IbpKernels,
    points: &[TorusPoint],
    directions: &[Vec2],
    t_max: f64,
    lattice: usize,
    degree: u32,
) -> Result<KernelBoundFit> {
    if lattice < 2 || points.is_empty() || directions.is_empty() {
        return Err(Error::EmptyInput("kernel bound needs points, directions and a lattice".into()));
    }
    let times: Vec<f64> = (0..lattice).map(|k| t_max * k as f64 / (lattice - 1) as f64).collect();
    let mut samples = Vec::new();
    for &s in &times {
        for &t in &times {
            let mut worst: f64 = 0.0;
            for x in points {
                for xi in directions {
                    worst = worst.max(kernels.interior(x, s, t, *xi)?.abs());
                }
            }
            samples.push((s + t, worst));
        }
    }
    let mut envelope: Vec<(f64, f64)> = Vec::new();
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (r, v) in samples {
        match envelope.last_mut() {
            Some(last) if (last.0 - r).abs() < 1e-12 => last.1 = last.1.max(v),
            _ => envelope.push((r, v)),
        }
    }
    let xs: Vec<f64> = envelope.iter().map(|e| 1.0 + e.0).collect();
    let ys: Vec<f64> = envelope.iter().map(|e| e.1).collect();
    let growth_exponent = loglog_slope(&xs, &ys).unwrap_or(0.0);
    let constant = envelope
        .iter()
        .map(|(r, v)| v / (1.0 + r).powi(degree as i32))
        .fold(0.0, f64::max);
    Ok(KernelBoundFit {
        envelope,
        growth_exponent,
        constant,
        degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{presets, ALPHA, BETA};
    use crate::quadrature::CompositeParams;

    fn rule() -> Rule1d {
        Rule1d::composite_exponential(1.0, &CompositeParams::default()).unwrap()
    }

    fn constant_uinv() -> Mat2 {
        Mat2::new(-BETA, 1.0, 1.0, ALPHA).try_inverse().unwrap()
    }

    #[test]
    fn tau_at_zero_is_minus_inverse_drive() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = TorusPoint::new(0.3, 0.6);
        let d = crate::fields::eval_drive_matrix(&pair.u0, &pair.u1, &x).unwrap();
        assert!((tau(&pair, &x, 0.0).unwrap() + d.inverse).amax() < 1e-15);
    }

    #[test]
    fn tau_of_constant_pair_is_constant() {
        let pair = presets::constant_pair();
        let e = tau_with_derivative(&pair, &TorusPoint::new(0.1, 0.9), 2.3).unwrap();
        assert!((e.tau + constant_uinv()).amax() < 1e-14);
        assert_eq!(e.dtau_dt.amax(), 0.0);
    }

    #[test]
    fn tau_time_derivative_matches_differences() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let x = TorusPoint::new(0.72, 0.18);
        let t = 1.7;
        let d = 1e-4;
        // fixed step count on both sides of t
        let at = |tt: f64| {
            let (y, f0) = flow_lift(&pair.u0, &x.lift(), -tt, step_count(t + d)).unwrap();
            let drive = drive_matrix_at(&pair.u0, &pair.u1, &y).unwrap();
            -(drive.inverse * f0)
        };
        let fd = (at(t + d) - at(t - d)) / (2.0 * d);
        let e = tau_with_derivative(&pair, &x, t).unwrap();
        assert!((fd - e.dtau_dt).amax() < 1e-6, "{fd} vs {}", e.dtau_dt);
    }

    #[test]
    fn transfer_identity_constant_pair_and_origin() {
        let pair = presets::constant_pair();
        let xi = Vec2::new(0.6, 0.8);
        assert!(check_transfer_identity(&pair, &TorusPoint::new(0.4, 0.2), 1.0, 2.0, xi).unwrap() < 1e-9);
        let conj = presets::conjugated_pair(0.1).unwrap();
        assert!(check_transfer_identity(&conj, &TorusPoint::new(0.4, 0.2), 0.0, 0.0, xi).unwrap() < 1e-9);
    }

    #[test]
    fn jacobian_derivatives_match_differences() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let kernels = build_kernels(&pair, 1.0).unwrap();
        let x = Vec2::new(0.15, 0.43);
        let (s, t) = (1.1, 0.8);
        let d = 1e-4;
        let (ns, nt) = (step_count(s + d), step_count(t + d));
        let j = |y: Vec2, ss: f64, tt: f64| {
            composed_inverse_with_steps(&pair.u0, &pair.u1, &y, ss, tt, ns, nt).unwrap().scalar_jacobian
        };
        let exact = kernels.jacobian_derivatives(&TorusPoint::from_lift(x), s, t).unwrap();
        assert!((exact.j - j(x, s, t)).abs() < 1e-9);
        let ds = (j(x, s + d, t) - j(x, s - d, t)) / (2.0 * d);
        let dt = (j(x, s, t + d) - j(x, s, t - d)) / (2.0 * d);
        assert!((Vec2::new(ds, dt) - exact.d_time).amax() < 1e-6);
        let dx1 = (j(x + Vec2::new(d, 0.0), s, t) - j(x - Vec2::new(d, 0.0), s, t)) / (2.0 * d);
        let dx2 = (j(x + Vec2::new(0.0, d), s, t) - j(x - Vec2::new(0.0, d), s, t)) / (2.0 * d);
        assert!((Vec2::new(dx1, dx2) - exact.d_space).amax() < 1e-6);
    }

    #[test]
    fn constant_pair_kernels_reduce() {
        let pair = presets::constant_pair();
        let k = build_kernels(&pair, 1.3).unwrap();
        let xi = Vec2::new(0.0, 1.0);
        let txi = -(constant_uinv() * xi);
        let x = TorusPoint::new(0.5, 0.1);
        for (s, t) in [(0.0, 0.0), (1.0, 4.0), (7.5, 0.2)] {
            let v = k.interior(&x, s, t, xi).unwrap();
            assert!((v - 1.3 * (txi[0] + txi[1])).abs() < 1e-12);
        }
        assert!((k.boundary_s(&x, 2.0, xi).unwrap() + 1.3 * txi[1]).abs() < 1e-12);
        assert!((k.boundary_t(&x, 2.0, xi).unwrap() + 1.3 * txi[0]).abs() < 1e-12);
        assert_eq!(k.interior(&x, 1.0, 1.0, Vec2::zeros()).unwrap(), 0.0);
        assert!(build_kernels(&pair, 0.0).is_err());
    }

    #[test]
    fn kernels_are_linear_in_direction() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let k = build_kernels(&pair, 1.0).unwrap();
        let x = TorusPoint::new(0.33, 0.77);
        let (u, v) = (Vec2::new(0.3, -1.2), Vec2::new(2.0, 0.5));
        let f = |xi: Vec2| k.interior(&x, 0.9, 1.4, xi).unwrap();
        assert!((f(u * 2.0 - v * 3.0) - (2.0 * f(u) - 3.0 * f(v))).abs() < 1e-10);
        let b = |xi: Vec2| k.boundary_s(&x, 0.9, xi).unwrap();
        assert!((b(u + v) - b(u) - b(v)).abs() < 1e-12);
        let c = |xi: Vec2| k.boundary_t(&x, 0.9, xi).unwrap();
        assert!((c(u + v) - c(u) - c(v)).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let pair = presets::constant_pair();
        let quad = QuadratureRule::tensor(rule());
        let h = DensityGrid::uniform(8);
        for xi in [Vec2::new(1.0, 0.0), Vec2::new(0.6, -0.8)] {
            let g = ibp_gradient(&h, &pair, &quad, 1.0, &TorusPoint::new(0.2, 0.3), xi).unwrap();
            assert!(g.abs() < 1e-8, "{g}");
        }
        let b = l1_gradient_bound(&h, &pair, &rule(), 1.0).unwrap();
        assert!(b.gradient_l1 < 1e-6);
    }

    #[test]
    fn grid_route_matches_pointwise_route() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let n = 24;
        let h = DensityGrid::from_fn(n, |x| 1.0 + 0.5 * (std::f64::consts::TAU * x[0]).sin() * (std::f64::consts::TAU * x[1]).cos());
        let grads = ibp_gradient_grid(&h, &pair, &rule(), 1.0).unwrap();
        let quad = QuadratureRule::tensor(rule());
        for (j, k) in [(0, 0), (5, 17), (20, 3)] {
            let x = TorusPoint::from_lift(cell_center(n, j, k));
            let g1 = ibp_gradient(&h, &pair, &quad, 1.0, &x, Vec2::new(1.0, 0.0)).unwrap();
            let g2 = ibp_gradient(&h, &pair, &quad, 1.0, &x, Vec2::new(0.0, 1.0)).unwrap();
            assert!((g1 - grads.d1.get(j, k)).abs() < 1e-3, "{g1} vs {}", grads.d1.get(j, k));
            assert!((g2 - grads.d2.get(j, k)).abs() < 1e-3, "{g2} vs {}", grads.d2.get(j, k));
        }
    }

    #[test]
    fn gradient_is_linear_in_h_and_scaling_keeps_k_hat() {
        let pair = presets::constant_pair();
        let n = 16;
        let h = DensityGrid::from_fn(n, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let a = l1_gradient_bound(&h, &pair, &rule(), 1.0).unwrap();
        let b = l1_gradient_bound(&h.scaled(2.0), &pair, &rule(), 1.0).unwrap();
        assert!((b.gradient_l1 - 2.0 * a.gradient_l1).abs() < 1e-10 * a.gradient_l1.max(1.0));
        assert!((a.k_hat - b.k_hat).abs() < 1e-10);
    }

    #[test]
    fn rejects_mismatched_rules() {
        let pair = presets::constant_pair();
        let h = DensityGrid::uniform(4);
        let wrong = Rule1d::gauss_laguerre(8, 2.0).unwrap();
        assert!(ibp_gradient_grid(&h, &pair, &wrong, 1.0).is_err());
        let gamma = Rule1d::gauss_laguerre_gamma(8, 2.0, 2.0).unwrap();
        assert!(ibp_gradient_grid(&h, &pair, &gamma, 1.0).is_err());
    }

    #[test]
    fn magic_identity_on_random_samples() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let worst = transfer_identity_sweep(&pair, 10, 3.0, 21).unwrap();
        assert!(worst < 1e-5, "{worst}");
        assert_eq!(transfer_identity_sweep(&pair, 0, 3.0, 21).unwrap(), 0.0);
    }
}
