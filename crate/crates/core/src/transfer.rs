//! The two-switch transfer operator `Q` on periodic grids.
//!
//! `(Q h)(x) = E[ J_{(S,T)}(x) h(Psi_1^S Psi_0^T x) ]` for independent waiting times `S, T`.
//! It factors as `Q = P_0 P_1` with the single-switch operators
//! `(P_i g)(x) = E[ det D Psi_i^T(x) g(Psi_i^T x) ]`, and the invariant densities satisfy
//! `rho_0 = P_0 rho_1`, `rho_1 = P_1 rho_0`.
//!
//! Functions on the grid are evaluated off-grid through their periodic cubic spline.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::FieldPair;
use crate::flows::march_inverse_flow;
use crate::grid::{cell_center, DensityGrid, PeriodicSpline};
use crate::quadrature::{QuadratureRule, Rule1d};
use crate::torus::Vec2;

/// Values below this count as interpolation undershoot of a non-negative input.
pub const POSITIVITY_TOL: f64 = 1e-10;

fn check_mode(mode: usize) -> Result<()> {
    if mode > 1 {
        Err(Error::InvalidArgument(format!("mode must be 0 or 1, got {mode}")))
    } else {
        Ok(())
    }
}

fn per_cell(n: usize, f: impl Fn(usize, Vec2) -> Result<f64> + Sync + Send) -> Result<DensityGrid> {
    let values = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (j, k) = (idx / n, idx % n);
            f(idx, cell_center(n, j, k)).map_err(|e| e.context(format!("cell ({j}, {k})")))
        })
        .collect::<Result<Vec<f64>>>()?;
    DensityGrid::new(n, values)
}

/// Direct evaluation of `Q h` with the tensor rule, marching `Psi_1` from every `Psi_0` node.
pub fn apply_q(h: &DensityGrid, fields: &FieldPair, quad: &QuadratureRule) -> Result<DensityGrid> {
    let spline = h.spline();
    let axis = quad.axis();
    let times = axis.nodes();
    let weights = axis.weights();
    per_cell(h.n(), |_, x| {
        let mut acc = 0.0;
        march_inverse_flow(&fields.u0, &x, times, false, |kt, outer| {
            let j0 = outer.det();
            let mut inner = 0.0;
            march_inverse_flow(&fields.u1, &outer.position, times, false, |ks, st| {
                inner += weights[ks] * st.det() * spline.eval(&st.position);
                Ok(())
            })
            .map_err(|e| e.context(format!("s-node march from t-node {kt}")))?;
            acc += weights[kt] * j0 * inner;
            Ok(())
        })?;
        Ok(acc)
    })
}

/// `P_mode g` evaluated by marching the inverse flow of `u_mode` from every cell centre.
pub fn apply_single_switch(g: &DensityGrid, mode: usize, fields: &FieldPair, rule: &Rule1d) -> Result<DensityGrid> {
    check_mode(mode)?;
    let field = fields.field(mode)?;
    let spline = g.spline();
    let weights = rule.weights();
    per_cell(g.n(), |_, x| {
        let mut acc = 0.0;
        march_inverse_flow(field, &x, rule.nodes(), false, |k, st| {
            acc += weights[k] * st.det() * spline.eval(&st.position);
            Ok(())
        })?;
        Ok(acc)
    })
}

/// Node positions and weights of `P_mode` for every cell of an `n x n` grid, so that repeated
/// applications only need spline evaluations.
#[derive(Debug, Clone)]
pub struct SingleSwitchPlan {
    n: usize,
    mode: usize,
    nodes_per_cell: usize,
    /// Positions reduced to `[0, 1)^2`.
    positions: Vec<[f64; 2]>,
    /// Quadrature weight times `det D Psi`.
    weights: Vec<f64>,
}

impl SingleSwitchPlan {
    pub fn build(fields: &FieldPair, mode: usize, rule: &Rule1d, n: usize) -> Result<Self> {
        check_mode(mode)?;
        let field = fields.field(mode)?;
        let m = rule.len();
        let rows = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let x = cell_center(n, idx / n, idx % n);
                let mut pos = Vec::with_capacity(m);
                let mut wts = Vec::with_capacity(m);
                march_inverse_flow(field, &x, rule.nodes(), false, |k, st| {
                    pos.push([st.position[0].rem_euclid(1.0), st.position[1].rem_euclid(1.0)]);
                    wts.push(rule.weights()[k] * st.det());
                    Ok(())
                })
                .map_err(|e| e.context(format!("cell {idx}")))?;
                Ok((pos, wts))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut positions = Vec::with_capacity(n * n * m);
        let mut weights = Vec::with_capacity(n * n * m);
        for (p, w) in rows {
            positions.extend(p);
            weights.extend(w);
        }
        Ok(Self {
            n,
            mode,
            nodes_per_cell: m,
            positions,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn apply(&self, g: &DensityGrid) -> Result<DensityGrid> {
        if g.n() != self.n {
            return Err(Error::InvalidArgument(format!(
                "plan built for n={}, grid has n={}",
                self.n,
                g.n()
            )));
        }
        let spline = g.spline();
        self.apply_spline(&spline)
    }

    fn apply_spline(&self, spline: &PeriodicSpline) -> Result<DensityGrid> {
        let m = self.nodes_per_cell;
        let values = (0..self.n * self.n)
            .into_par_iter()
            .map(|idx| {
                let range = idx * m..(idx + 1) * m;
                self.positions[range.clone()]
                    .iter()
                    .zip(&self.weights[range])
                    .map(|(p, w)| w * spline.eval(&Vec2::new(p[0], p[1])))
                    .sum()
            })
            .collect();
        DensityGrid::new(self.n, values)
    }
}

/// `Q = P_0 P_1` with a shared one-dimensional rule, optionally with cached plans.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    fields: FieldPair,
    rule: Rule1d,
    plans: Option<[SingleSwitchPlan; 2]>,
}

impl TransferOperator {
    pub fn new(fields: FieldPair, rule: Rule1d) -> Self {
        Self {
            fields,
            rule,
            plans: None,
        }
    }

    /// Precomputes both single-switch plans for `n x n` grids.
    pub fn with_plans(mut self, n: usize) -> Result<Self> {
        let p0 = SingleSwitchPlan::build(&self.fields, 0, &self.rule, n)?;
        let p1 = SingleSwitchPlan::build(&self.fields, 1, &self.rule, n)?;
        self.plans = Some([p0, p1]);
        Ok(self)
    }

    pub fn fields(&self) -> &FieldPair {
        &self.fields
    }

    pub fn rule(&self) -> &Rule1d {
        &self.rule
    }

    pub fn single(&self, g: &DensityGrid, mode: usize) -> Result<DensityGrid> {
        check_mode(mode)?;
        match &self.plans {
            Some(plans) if plans[mode].n() == g.n() => plans[mode].apply(g),
            _ => apply_single_switch(g, mode, &self.fields, &self.rule),
        }
    }

    pub fn apply(&self, h: &DensityGrid) -> Result<DensityGrid> {
        let inner = self.single(h, 1)?;
        self.single(&inner, 0)
    }

    /// `Q^k h`.
    pub fn apply_power(&self, h: &DensityGrid, k: usize) -> Result<DensityGrid> {
        let mut g = h.clone();
        for _ in 0..k {
            g = self.apply(&g)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    #[serde(skip)]
    pub density: DensityGrid,
    pub iterations: usize,
    /// `||Q rho - rho||_1` for the returned density.
    pub residual: f64,
    /// L1 change between consecutive normalized iterates.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Smallest value of `Q rho`; below `-POSITIVITY_TOL` signals interpolation undershoot.
    pub min_value: f64,
}

impl FixedPointReport {
    pub fn positivity_flag(&self) -> bool {
        self.min_value < -POSITIVITY_TOL
    }
}

/// Iterates `h <- normalize(Q h)` until the L1 change drops below `tol` or `max_iter` is hit.
pub fn fixed_point(op: &TransferOperator, h0: &DensityGrid, tol: f64, max_iter: usize) -> Result<FixedPointReport> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let mass = h0.mass();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("initial density must have unit mass, got {mass}")));
    }
    let mut h = h0.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = op.apply(&h)?.normalized()?;
        let change = next.l1_distance(&h)?;
        history.push(change);
        h = next;
        iterations += 1;
        if change < tol {
            converged = true;
            break;
        }
    }
    let qh = op.apply(&h)?;
    Ok(FixedPointReport {
        residual: qh.l1_distance(&h)?,
        min_value: qh.min_value(),
        density: h,
        iterations,
        residual_history: history,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingRow {
    pub applications: usize,
    pub l1: f64,
    pub gradient_l1: f64,
    pub hessian_l1: f64,
}

pub const MAX_SMOOTHING_APPLICATIONS: usize = 5;

/// Grid norms of `Q^k h` and of its first two centred-difference derivatives for
/// `k = 0..=n_applications`.
pub fn smoothing_profile(op: &TransferOperator, h: &DensityGrid, n_applications: usize) -> Result<Vec<SmoothingRow>> {
    if n_applications > MAX_SMOOTHING_APPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_SMOOTHING_APPLICATIONS} applications, got {n_applications}"
        )));
    }
    let mut rows = Vec::with_capacity(n_applications + 1);
    let mut g = h.clone();
    for k in 0..=n_applications {
        if k > 0 {
            g = op.apply(&g)?;
        }
        rows.push(SmoothingRow {
            applications: k,
            l1: g.l1_norm(),
            gradient_l1: g.gradient_l1(),
            hessian_l1: g.hessian_l1(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{presets, BETA};
    use crate::quadrature::CompositeParams;
    use nalgebra::Complex;
    use std::f64::consts::TAU;

    fn default_rule() -> Rule1d {
        Rule1d::composite_exponential(1.0, &CompositeParams::default()).unwrap()
    }

    /// `E[exp(-2 pi i a T)]` for `T ~ Exp(lambda)`.
    fn char_fn(a: f64, lambda: f64) -> Complex<f64> {
        Complex::new(lambda, 0.0) / Complex::new(lambda, TAU * a)
    }

    fn q_of_sine_oracle(x: Vec2) -> f64 {
        // h = 1 + sin(2 pi x1), Q acts on the (1,0) mode by the product of characteristic functions
        let m = char_fn(1.0, 1.0) * char_fn(-BETA, 1.0);
        let phase = Complex::new(0.0, TAU * x[0]).exp();
        1.0 + (phase * m).im
    }

    #[test]
    fn constant_pair_preserves_constants() {
        let pair = presets::constant_pair();
        let quad = QuadratureRule::tensor(default_rule());
        let q = apply_q(&DensityGrid::uniform(16), &pair, &quad).unwrap();
        assert!(q.max_deviation_from(1.0) < 1e-10);
        let zero = apply_q(&DensityGrid::zeros(8), &pair, &quad).unwrap();
        assert_eq!(zero.max_deviation_from(0.0), 0.0);
    }

    #[test]
    fn constant_pair_sine_matches_characteristic_functions() {
        let pair = presets::constant_pair();
        let h = DensityGrid::from_fn(64, |x| 1.0 + (TAU * x[0]).sin());
        let quad = QuadratureRule::tensor(default_rule());
        let q = apply_q(&h, &pair, &quad).unwrap();
        let exact = DensityGrid::from_fn(64, q_of_sine_oracle);
        let err = q.max_abs_difference(&exact).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn single_switch_rejects_bad_mode() {
        let pair = presets::constant_pair();
        let err = apply_single_switch(&DensityGrid::uniform(4), 2, &pair, &default_rule()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(SingleSwitchPlan::build(&pair, 5, &default_rule(), 4).is_err());
    }

    #[test]
    fn single_switch_of_constant_is_constant() {
        let pair = presets::constant_pair();
        let g = apply_single_switch(&DensityGrid::uniform(8), 0, &pair, &default_rule()).unwrap();
        assert!(g.max_deviation_from(1.0) < 1e-12);
    }

    #[test]
    fn plans_agree_with_streaming() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let rule = default_rule();
        let h = DensityGrid::from_fn(12, |x| 1.0 + 0.5 * (TAU * x[0]).sin() * (TAU * x[1]).cos());
        let streamed = TransferOperator::new(pair.clone(), rule.clone()).apply(&h).unwrap();
        let cached = TransferOperator::new(pair, rule).with_plans(12).unwrap().apply(&h).unwrap();
        assert!(streamed.max_abs_difference(&cached).unwrap() < 1e-13);
    }

    #[test]
    fn linearity() {
        let pair = presets::conjugated_pair(0.1).unwrap();
        let op = TransferOperator::new(pair, default_rule()).with_plans(10).unwrap();
        let h1 = DensityGrid::from_fn(10, |x| (TAU * x[0]).cos());
        let h2 = DensityGrid::from_fn(10, |x| if x[1] < 0.3 { 1.0 } else { 0.0 });
        let lhs = op.apply(&h1.combine(2.0, &h2, -0.5).unwrap()).unwrap();
        let rhs = op.apply(&h1).unwrap().combine(2.0, &op.apply(&h2).unwrap(), -0.5).unwrap();
        assert!(lhs.max_abs_difference(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn fixed_point_from_uniform_is_immediate() {
        let op = TransferOperator::new(presets::constant_pair(), default_rule());
        let r = fixed_point(&op, &DensityGrid::uniform(16), 1e-6, 50).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn fixed_point_loop_contract() {
        let op = TransferOperator::new(presets::constant_pair(), default_rule());
        let h0 = DensityGrid::from_fn(16, |x| 1.0 + 0.5 * (TAU * x[0]).cos());
        let forced = fixed_point(&op, &h0, 0.0, 3).unwrap();
        assert_eq!(forced.iterations, 3);
        assert!(!forced.converged);
        let one = fixed_point(&op, &h0, 1e-6, 1).unwrap();
        assert!(!one.converged);
        assert!(fixed_point(&op, &DensityGrid::zeros(4), 1e-6, 5).is_err());
    }

    #[test]
    fn smoothing_profile_contract() {
        let op = TransferOperator::new(presets::constant_pair(), default_rule());
        let h = DensityGrid::from_fn(16, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let rows = smoothing_profile(&op, &h, 2).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].gradient_l1, h.gradient_l1());
        assert_eq!(rows[0].hessian_l1, h.hessian_l1());
        let flat = smoothing_profile(&op, &DensityGrid::uniform(8), 1).unwrap();
        assert!(flat.iter().all(|r| r.gradient_l1 < 1e-12 && r.hessian_l1 < 1e-9));
        assert!(smoothing_profile(&op, &h, 6).is_err());
    }

    #[test]
    fn invariant_pair_relations() {
        // rho_1 = P_1 rho_0 is itself fixed under P_1 P_0
        let pair = presets::conjugated_pair(0.1).unwrap();
        let op = TransferOperator::new(pair, default_rule()).with_plans(16).unwrap();
        let r = fixed_point(&op, &DensityGrid::uniform(16), 1e-10, 200).unwrap();
        assert!(r.converged);
        let rho1 = op.single(&r.density, 1).unwrap();
        let back = op.single(&op.single(&rho1, 0).unwrap(), 1).unwrap();
        // the discrete operator leaks O(1e-8) mass on a 16x16 grid
        assert!((back.mass() - rho1.mass()).abs() < 1e-7);
        let d = back.normalized().unwrap().l1_distance(&rho1.normalized().unwrap()).unwrap();
        assert!(d < 1e-8, "{d}");
    }
}
