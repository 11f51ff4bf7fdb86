//! Driving vector fields on the torus.
//!
//! Three kinds of fields are supported:
//!
//! * `constant`: a linear flow `u(x) = v`;
//! * `conjugated`: `u(x) = (D sigma(x))^{-1} b` for a constant base vector `b` and a
//!   near-identity diffeomorphism `sigma`, so that `sigma` carries the flow of `u` onto the
//!   straight-line flow of `b`; the flow preserves the density `det D sigma(x)`;
//! * `trig`: each component a finite trigonometric sum.
//!
//! JSON schema (tagged by `kind`):
//!
//! ```json
//! {"kind": "constant", "v": [1.0, 0.618]}
//! {"kind": "conjugated", "base": [1.0, 0.618],
//!  "sigma": {"epsilon": 0.1,
//!            "modes": [{"component": 0, "amplitude": 1.0, "wave": [0, 1], "phase": 0.0}]}}
//! {"kind": "trig", "components": [[{"wave": [0, 0], "cos": 1.0, "sin": 0.0}],
//!                                 [{"wave": [1, 0], "cos": 0.2, "sin": 0.0}]]}
//! ```
//!
//! A `sigma` mode adds `epsilon * amplitude * sin(2 pi (wave . x) + phase) / (2 pi)` to
//! coordinate `component` of the identity map.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet2, MAX_ORDER};
use crate::torus::{checked_inverse, Mat2, TorusPoint, Vec2};

/// Golden-mean rotation `(sqrt 5 - 1)/2`.
pub const ALPHA: f64 = 0.618_033_988_749_894_9;
/// Silver-mean rotation `sqrt 2 - 1`.
pub const BETA: f64 = 0.414_213_562_373_095_1;

/// Below this `|det U(x)|` the drive matrix is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;
/// Default pass threshold for [`check_transversality`].
pub const DEFAULT_TRANSVERSALITY_THRESHOLD: f64 = 1e-6;

const INVERSE_MAX_ITER: usize = 50;
const INVERSE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigMode {
    pub component: usize,
    pub amplitude: f64,
    pub wave: [i32; 2],
    #[serde(default)]
    pub phase: f64,
}

impl TrigMode {
    pub fn new(component: usize, amplitude: f64, wave: [i32; 2], phase: f64) -> Self {
        Self {
            component,
            amplitude,
            wave,
            phase,
        }
    }

    #[inline]
    fn angle(&self, x: &Vec2) -> f64 {
        TAU * (self.wave[0] as f64 * x[0] + self.wave[1] as f64 * x[1]) + self.phase
    }

    #[inline]
    fn k(&self) -> [f64; 2] {
        [self.wave[0] as f64, self.wave[1] as f64]
    }
}

/// Identity plus a trigonometric perturbation of size `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawDiffeo")]
pub struct DiffeoSpec {
    epsilon: f64,
    modes: Vec<TrigMode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffeo {
    epsilon: f64,
    modes: Vec<TrigMode>,
}

impl TryFrom<RawDiffeo> for DiffeoSpec {
    type Error = Error;
    fn try_from(raw: RawDiffeo) -> Result<Self> {
        DiffeoSpec::new(raw.epsilon, raw.modes)
    }
}

/// Derivatives of the perturbation `p` (without the `epsilon` factor) at one point.
struct PerturbationDerivs {
    /// `d1[c][j] = d_j p_c`
    d1: [[f64; 2]; 2],
    /// `d2[c][j][l] = d_j d_l p_c`
    d2: [[[f64; 2]; 2]; 2],
    /// `d3[c][j][l][m]`
    d3: [[[[f64; 2]; 2]; 2]; 2],
}

impl DiffeoSpec {
    pub fn identity() -> Self {
        Self {
            epsilon: 0.0,
            modes: Vec::new(),
        }
    }

    pub fn new(epsilon: f64, modes: Vec<TrigMode>) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma epsilon must be non-negative, got {epsilon}"
            )));
        }
        if let Some(m) = modes.iter().find(|m| m.component > 1) {
            return Err(Error::InvalidArgument(format!(
                "sigma mode component must be 0 or 1, got {}",
                m.component
            )));
        }
        let spec = Self { epsilon, modes };
        let bound = spec.diffeo_bound();
        if epsilon > 0.0 && epsilon >= bound {
            return Err(Error::InvalidArgument(format!(
                "sigma epsilon {epsilon} is not below the diffeomorphism bound {bound:.4}"
            )));
        }
        Ok(spec)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn modes(&self) -> &[TrigMode] {
        &self.modes
    }

    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0 || self.modes.is_empty()
    }

    /// Upper bound on the operator norm of `Dp` (Frobenius of row-wise sums).
    pub fn lipschitz_bound(&self) -> f64 {
        let mut rows = [0.0f64; 2];
        for m in &self.modes {
            rows[m.component] += m.amplitude.abs() * (m.k()[0].hypot(m.k()[1]));
        }
        rows[0].hypot(rows[1])
    }

    /// `sigma` is a diffeomorphism and the inverse iteration contracts for `epsilon` below this.
    pub fn diffeo_bound(&self) -> f64 {
        let l = self.lipschitz_bound();
        if l == 0.0 {
            f64::INFINITY
        } else {
            1.0 / l
        }
    }

    fn perturbation(&self, x: &Vec2) -> Vec2 {
        let mut p = Vec2::zeros();
        for m in &self.modes {
            p[m.component] += m.amplitude * m.angle(x).sin() / TAU;
        }
        p
    }

    fn perturbation_jacobian(&self, x: &Vec2) -> Mat2 {
        let mut d = Mat2::zeros();
        for m in &self.modes {
            let c = m.amplitude * m.angle(x).cos();
            let k = m.k();
            d[(m.component, 0)] += c * k[0];
            d[(m.component, 1)] += c * k[1];
        }
        d
    }

    fn perturbation_derivs(&self, x: &Vec2, order: usize) -> PerturbationDerivs {
        let mut out = PerturbationDerivs {
            d1: [[0.0; 2]; 2],
            d2: [[[0.0; 2]; 2]; 2],
            d3: [[[[0.0; 2]; 2]; 2]; 2],
        };
        for m in &self.modes {
            let (s, c) = m.angle(x).sin_cos();
            let k = m.k();
            let a = m.amplitude;
            let comp = m.component;
            for j in 0..2 {
                out.d1[comp][j] += a * k[j] * c;
                if order < 2 {
                    continue;
                }
                for l in 0..2 {
                    out.d2[comp][j][l] -= TAU * a * k[j] * k[l] * s;
                    if order < 3 {
                        continue;
                    }
                    for q in 0..2 {
                        out.d3[comp][j][l][q] -= TAU * TAU * a * k[j] * k[l] * k[q] * c;
                    }
                }
            }
        }
        out
    }

    /// `sigma` on the universal cover.
    pub fn forward_lift(&self, x: &Vec2) -> Vec2 {
        x + self.perturbation(x) * self.epsilon
    }

    pub fn forward(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::from_lift(self.forward_lift(&x.lift()))
    }

    /// `D sigma(x)`.
    pub fn jacobian(&self, x: &Vec2) -> Mat2 {
        Mat2::identity() + self.perturbation_jacobian(x) * self.epsilon
    }

    /// Solves `sigma(x) = y` on the cover by the fixed-point iteration
    /// `x <- y - epsilon p(x)`, finishing with Newton steps if the iteration stalls.
    pub fn inverse_lift(&self, y: &Vec2) -> Result<Vec2> {
        if self.is_identity() {
            return Ok(*y);
        }
        let mut x = *y;
        let mut step = f64::INFINITY;
        for _ in 0..INVERSE_MAX_ITER {
            let next = y - self.perturbation(&x) * self.epsilon;
            step = (next - x).amax();
            x = next;
            if step < INVERSE_TOL {
                return Ok(x);
            }
        }
        for _ in 0..10 {
            let r = self.forward_lift(&x) - y;
            let (inv, _) = checked_inverse(&self.jacobian(&x), SINGULAR_DET).ok_or(
                Error::Inversion {
                    iterations: INVERSE_MAX_ITER,
                    residual: r.amax(),
                },
            )?;
            let dx = inv * r;
            x -= dx;
            step = dx.amax();
            if step < INVERSE_TOL {
                return Ok(x);
            }
        }
        Err(Error::Inversion {
            iterations: INVERSE_MAX_ITER + 10,
            residual: step,
        })
    }

    pub fn inverse(&self, y: &TorusPoint) -> Result<TorusPoint> {
        Ok(TorusPoint::from_lift(self.inverse_lift(&y.lift())?))
    }

    /// Extremes of `det D sigma` over an `res x res` grid of cell centres.
    pub fn det_range(&self, res: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..res {
            for j in 0..res {
                let x = Vec2::new((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
                let d = self.jacobian(&x).determinant();
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub wave: [i32; 2],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Value, Jacobian and gradient of the divergence of a field at one point.
#[derive(Debug, Clone, Copy)]
pub struct FieldDerivs {
    pub value: Vec2,
    /// `jacobian[(i, j)] = d_j u_i`
    pub jacobian: Mat2,
    pub grad_div: Vec2,
}

impl FieldDerivs {
    pub fn div(&self) -> f64 {
        self.jacobian.trace()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorFieldSpec {
    Constant { v: [f64; 2] },
    Conjugated { base: [f64; 2], sigma: DiffeoSpec },
    Trig { components: [Vec<TrigTerm>; 2] },
}

impl VectorFieldSpec {
    pub fn constant(v1: f64, v2: f64) -> Self {
        VectorFieldSpec::Constant { v: [v1, v2] }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn is_constant(&self) -> bool {
        match self {
            VectorFieldSpec::Constant { .. } => true,
            VectorFieldSpec::Conjugated { sigma, .. } => sigma.is_identity(),
            VectorFieldSpec::Trig { components } => components
                .iter()
                .all(|terms| terms.iter().all(|t| t.wave == [0, 0] || (t.cos == 0.0 && t.sin == 0.0))),
        }
    }

    /// The conjugacy carrying this field to a constant one, if it is of that kind.
    pub fn conjugacy(&self) -> Option<(&DiffeoSpec, Vec2)> {
        match self {
            VectorFieldSpec::Conjugated { base, sigma } => Some((sigma, Vec2::new(base[0], base[1]))),
            _ => None,
        }
    }

    /// `u(x)`; `x` may be any lift.
    pub fn eval(&self, x: &Vec2) -> Vec2 {
        match self {
            VectorFieldSpec::Constant { v } => Vec2::new(v[0], v[1]),
            VectorFieldSpec::Conjugated { base, sigma } => {
                let b = Vec2::new(base[0], base[1]);
                if sigma.is_identity() {
                    return b;
                }
                let m = sigma.jacobian(x);
                let det = m.determinant();
                Vec2::new(m[(1, 1)] * b[0] - m[(0, 1)] * b[1], m[(0, 0)] * b[1] - m[(1, 0)] * b[0]) / det
            }
            VectorFieldSpec::Trig { components } => {
                let mut out = Vec2::zeros();
                for (c, terms) in components.iter().enumerate() {
                    for t in terms {
                        let (s, co) = trig_angle(t.wave, x).sin_cos();
                        out[c] += t.cos * co + t.sin * s;
                    }
                }
                out
            }
        }
    }

    pub fn jacobian(&self, x: &Vec2) -> Mat2 {
        self.eval_with_jacobian(x).1
    }

    pub fn eval_with_jacobian(&self, x: &Vec2) -> (Vec2, Mat2) {
        match self {
            VectorFieldSpec::Constant { .. } => (self.eval(x), Mat2::zeros()),
            VectorFieldSpec::Conjugated { .. } => {
                let d = self.derivs(x, 1);
                (d.value, d.jacobian)
            }
            VectorFieldSpec::Trig { components } => {
                let mut v = Vec2::zeros();
                let mut jac = Mat2::zeros();
                for (c, terms) in components.iter().enumerate() {
                    for t in terms {
                        let (s, co) = trig_angle(t.wave, x).sin_cos();
                        v[c] += t.cos * co + t.sin * s;
                        let d = TAU * (-t.cos * s + t.sin * co);
                        jac[(c, 0)] += d * t.wave[0] as f64;
                        jac[(c, 1)] += d * t.wave[1] as f64;
                    }
                }
                (v, jac)
            }
        }
    }

    /// Value, Jacobian and (when `order >= 2`) gradient of the divergence.
    pub fn derivs(&self, x: &Vec2, order: usize) -> FieldDerivs {
        match self {
            VectorFieldSpec::Constant { v } => FieldDerivs {
                value: Vec2::new(v[0], v[1]),
                jacobian: Mat2::zeros(),
                grad_div: Vec2::zeros(),
            },
            VectorFieldSpec::Conjugated { base, sigma } => {
                let b = Vec2::new(base[0], base[1]);
                if sigma.is_identity() {
                    return FieldDerivs {
                        value: b,
                        jacobian: Mat2::zeros(),
                        grad_div: Vec2::zeros(),
                    };
                }
                conjugated_derivs(sigma, b, x, order)
            }
            VectorFieldSpec::Trig { components } => {
                let mut value = Vec2::zeros();
                let mut jacobian = Mat2::zeros();
                let mut grad_div = Vec2::zeros();
                for (c, terms) in components.iter().enumerate() {
                    for t in terms {
                        let (s, co) = trig_angle(t.wave, x).sin_cos();
                        let k = [t.wave[0] as f64, t.wave[1] as f64];
                        value[c] += t.cos * co + t.sin * s;
                        let d1 = TAU * (-t.cos * s + t.sin * co);
                        let d2 = -TAU * TAU * (t.cos * co + t.sin * s);
                        for j in 0..2 {
                            jacobian[(c, j)] += d1 * k[j];
                            if order >= 2 {
                                // d_j (d_c u_c)
                                grad_div[j] += d2 * k[c] * k[j];
                            }
                        }
                    }
                }
                FieldDerivs {
                    value,
                    jacobian,
                    grad_div,
                }
            }
        }
    }

    pub fn divergence(&self, x: &Vec2) -> f64 {
        self.jacobian(x).trace()
    }

    /// Taylor expansion of both components around `x`.
    pub fn jet(&self, x: &Vec2) -> [Jet2; 2] {
        let vars = [Jet2::variable(0, x[0]), Jet2::variable(1, x[1])];
        match self {
            VectorFieldSpec::Constant { v } => [Jet2::constant(v[0]), Jet2::constant(v[1])],
            VectorFieldSpec::Conjugated { base, sigma } => {
                // u = adj(D sigma) b / det(D sigma), with D sigma expanded mode by mode
                let mut m = [[Jet2::constant(1.0), Jet2::constant(0.0)], [Jet2::constant(0.0), Jet2::constant(1.0)]];
                for md in sigma.modes() {
                    let k = md.k();
                    let arg = (vars[0].scale(TAU * k[0]) + vars[1].scale(TAU * k[1])) + Jet2::constant(md.phase);
                    let c = arg.cos().scale(sigma.epsilon() * md.amplitude);
                    for j in 0..2 {
                        m[md.component][j] = m[md.component][j] + c.scale(k[j]);
                    }
                }
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let inv_det = det.recip();
                let b = [Jet2::constant(base[0]), Jet2::constant(base[1])];
                [
                    (m[1][1] * b[0] - m[0][1] * b[1]) * inv_det,
                    (m[0][0] * b[1] - m[1][0] * b[0]) * inv_det,
                ]
            }
            VectorFieldSpec::Trig { components } => {
                let mut out = [Jet2::constant(0.0), Jet2::constant(0.0)];
                for (c, terms) in components.iter().enumerate() {
                    for t in terms {
                        let arg = vars[0].scale(TAU * t.wave[0] as f64) + vars[1].scale(TAU * t.wave[1] as f64);
                        out[c] = out[c] + arg.cos().scale(t.cos) + arg.sin().scale(t.sin);
                    }
                }
                out
            }
        }
    }

    /// Mixed partial `d_1^a d_2^b u(x)` for `a + b <= 4`.
    pub fn partial(&self, x: &Vec2, multi_index: [usize; 2]) -> Result<Vec2> {
        let [a, b] = multi_index;
        if a + b > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "partials are available up to order {MAX_ORDER}, requested {}",
                a + b
            )));
        }
        let jet = self.jet(x);
        Ok(Vec2::new(jet[0].partial(a, b), jet[1].partial(a, b)))
    }

    /// Closed-form flow for fields that are (conjugate to) translations.
    pub fn exact_flow(&self, x: &Vec2, t: f64) -> Result<Option<Vec2>> {
        match self {
            VectorFieldSpec::Constant { v } => Ok(Some(x + Vec2::new(v[0], v[1]) * t)),
            VectorFieldSpec::Conjugated { base, sigma } => {
                let b = Vec2::new(base[0], base[1]);
                let y = sigma.forward_lift(x) + b * t;
                Ok(Some(sigma.inverse_lift(&y)?))
            }
            VectorFieldSpec::Trig { .. } => Ok(None),
        }
    }

    /// Unnormalized invariant density of the single flow, when it is known in closed form.
    pub fn invariant_density(&self, x: &Vec2) -> Option<f64> {
        match self {
            VectorFieldSpec::Constant { .. } => Some(1.0),
            VectorFieldSpec::Conjugated { sigma, .. } => Some(sigma.jacobian(x).determinant()),
            VectorFieldSpec::Trig { .. } => None,
        }
    }
}

#[inline]
fn trig_angle(wave: [i32; 2], x: &Vec2) -> f64 {
    TAU * (wave[0] as f64 * x[0] + wave[1] as f64 * x[1])
}

fn conjugated_derivs(sigma: &DiffeoSpec, b: Vec2, x: &Vec2, order: usize) -> FieldDerivs {
    let eps = sigma.epsilon();
    let p = sigma.perturbation_derivs(x, order + 1);
    let m = Mat2::new(
        1.0 + eps * p.d1[0][0],
        eps * p.d1[0][1],
        eps * p.d1[1][0],
        1.0 + eps * p.d1[1][1],
    );
    let det = m.determinant();
    let minv = Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;
    let u = minv * b;
    // d_j M, entries (c, l) = eps d_j d_l p_c
    let dm = |j: usize| -> Mat2 {
        Mat2::new(
            eps * p.d2[0][j][0],
            eps * p.d2[0][j][1],
            eps * p.d2[1][j][0],
            eps * p.d2[1][j][1],
        )
    };
    let dm_j = [dm(0), dm(1)];
    let du = [-(minv * (dm_j[0] * u)), -(minv * (dm_j[1] * u))];
    let jacobian = Mat2::from_columns(&[du[0], du[1]]);
    let mut grad_div = Vec2::zeros();
    if order >= 2 {
        for q in 0..2 {
            let mut div_q = 0.0;
            for j in 0..2 {
                let ddm = Mat2::new(
                    eps * p.d3[0][q][j][0],
                    eps * p.d3[0][q][j][1],
                    eps * p.d3[1][q][j][0],
                    eps * p.d3[1][q][j][1],
                );
                // d_q d_j u
                let ddu = -(minv * (ddm * u + dm_j[j] * du[q] + dm_j[q] * du[j]));
                div_q += ddu[j];
            }
            grad_div[q] = div_q;
        }
    }
    FieldDerivs {
        value: u,
        jacobian,
        grad_div,
    }
}

/// `U(x) = (u1(x), u0(x))` with its determinant and inverse.
#[derive(Debug, Clone, Copy)]
pub struct DriveMatrix {
    pub matrix: Mat2,
    pub det: f64,
    pub inverse: Mat2,
}

pub fn eval_drive_matrix(u0: &VectorFieldSpec, u1: &VectorFieldSpec, x: &TorusPoint) -> Result<DriveMatrix> {
    drive_matrix_at(u0, u1, &x.lift())
}

pub(crate) fn drive_matrix_at(u0: &VectorFieldSpec, u1: &VectorFieldSpec, x: &Vec2) -> Result<DriveMatrix> {
    let matrix = Mat2::from_columns(&[u1.eval(x), u0.eval(x)]);
    match checked_inverse(&matrix, SINGULAR_DET) {
        Some((inverse, det)) => Ok(DriveMatrix { matrix, det, inverse }),
        None => Err(Error::SingularMatrix {
            point: TorusPoint::from_lift(*x),
            det: matrix.determinant(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransversalityReport {
    pub resolution: usize,
    pub min_abs_det: f64,
    pub max_abs_det: f64,
    pub argmin: [f64; 2],
    pub threshold: f64,
    pub pass: bool,
}

/// Scans `|det U(x)|` over the cell centres of a `resolution x resolution` grid.
pub fn check_transversality(
    u0: &VectorFieldSpec,
    u1: &VectorFieldSpec,
    resolution: usize,
    threshold: f64,
) -> Result<TransversalityReport> {
    if resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "transversality grid resolution must be at least 16, got {resolution}"
        )));
    }
    let mut min_abs = f64::INFINITY;
    let mut max_abs = 0.0f64;
    let mut argmin = [0.0, 0.0];
    for i in 0..resolution {
        for j in 0..resolution {
            let x = Vec2::new(
                (i as f64 + 0.5) / resolution as f64,
                (j as f64 + 0.5) / resolution as f64,
            );
            let d = Mat2::from_columns(&[u1.eval(&x), u0.eval(&x)]).determinant().abs();
            if d < min_abs {
                min_abs = d;
                argmin = [x[0], x[1]];
            }
            max_abs = max_abs.max(d);
        }
    }
    Ok(TransversalityReport {
        resolution,
        min_abs_det: min_abs,
        max_abs_det: max_abs,
        argmin,
        threshold,
        pass: min_abs > threshold,
    })
}

pub fn make_conjugated_field(base: [f64; 2], sigma: DiffeoSpec) -> VectorFieldSpec {
    VectorFieldSpec::Conjugated { base, sigma }
}

/// A pair of driving fields `(u0, u1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldPair {
    pub u0: VectorFieldSpec,
    pub u1: VectorFieldSpec,
}

impl FieldPair {
    pub fn new(u0: VectorFieldSpec, u1: VectorFieldSpec) -> Self {
        Self { u0, u1 }
    }

    pub fn field(&self, mode: usize) -> Result<&VectorFieldSpec> {
        match mode {
            0 => Ok(&self.u0),
            1 => Ok(&self.u1),
            other => Err(Error::InvalidArgument(format!("mode must be 0 or 1, got {other}"))),
        }
    }
}

/// Field pairs used by the examples, tests and shipped configurations.
pub mod presets {
    use super::*;

    /// `u0 = (1, alpha)`, `u1 = (-beta, 1)`.
    pub fn constant_pair() -> FieldPair {
        FieldPair::new(
            VectorFieldSpec::constant(1.0, ALPHA),
            VectorFieldSpec::constant(-BETA, 1.0),
        )
    }

    pub fn sigma0(epsilon: f64) -> Result<DiffeoSpec> {
        DiffeoSpec::new(
            epsilon,
            vec![
                TrigMode::new(0, 1.0, [0, 1], 0.0),
                TrigMode::new(0, 0.5, [1, 1], 0.3),
                TrigMode::new(1, 1.0, [1, 0], 0.0),
                TrigMode::new(1, 0.5, [1, -1], 1.1),
            ],
        )
    }

    pub fn sigma1(epsilon: f64) -> Result<DiffeoSpec> {
        DiffeoSpec::new(
            epsilon,
            vec![
                TrigMode::new(0, 1.0, [0, 1], 0.7),
                TrigMode::new(1, 1.0, [1, 0], 2.0),
                TrigMode::new(1, 0.5, [1, 1], 0.0),
            ],
        )
    }

    /// The constant pair, each field conjugated by its own near-identity map.
    pub fn conjugated_pair(epsilon: f64) -> Result<FieldPair> {
        Ok(FieldPair::new(
            make_conjugated_field([1.0, ALPHA], sigma0(epsilon)?),
            make_conjugated_field([-BETA, 1.0], sigma1(epsilon)?),
        ))
    }

    /// Single-mode shears, valid up to `epsilon < 1`; transversality degrades as it grows.
    pub fn sheared_pair(epsilon: f64) -> Result<FieldPair> {
        let s0 = DiffeoSpec::new(epsilon, vec![TrigMode::new(1, 1.0, [1, 0], 0.0)])?;
        let s1 = DiffeoSpec::new(epsilon, vec![TrigMode::new(0, 1.0, [0, 1], 0.0)])?;
        Ok(FieldPair::new(
            make_conjugated_field([1.0, ALPHA], s0),
            make_conjugated_field([-BETA, 1.0], s1),
        ))
    }

    /// Both fields equal to `(1, 0)`: transversality fails everywhere.
    pub fn parallel_pair() -> FieldPair {
        FieldPair::new(VectorFieldSpec::constant(1.0, 0.0), VectorFieldSpec::constant(1.0, 0.0))
    }
}
