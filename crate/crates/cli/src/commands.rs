use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use switchflow::flows::jacobian_bounds_scan;
use switchflow::ibp::{gradient_fd_discrepancy, l1_gradient_bound, transfer_identity_sweep};
use switchflow::quadrature::CompositeParams;
use switchflow::sampler::occupation_density;
use switchflow::special_flow::{growth_report, special_flow_check};
use switchflow::transfer::smoothing_profile;
use switchflow::{
    check_transversality, fixed_point, sample_trajectories, DensityGrid, Rule1d, SwitchingConfig, TransferOperator,
    VectorFieldSpec,
};

use crate::config::{ExperimentConfig, StartDensity};

/// How a command finished when it did not error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NotConverged,
    VerificationFailed,
}

pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub out: PathBuf,
}

impl RunContext<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        write_file(&self.path(name), &text)
    }

    fn write_grid(&self, stem: &str, grid: &DensityGrid, mode: usize) -> Result<()> {
        grid.write_csv(&self.path(&format!("{stem}.csv")), self.config.lambda, mode)
            .with_context(|| format!("writing {stem}.csv"))?;
        grid.write_pgm(&self.path(&format!("{stem}.pgm")))
            .with_context(|| format!("writing {stem}.pgm"))?;
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn start_density(kind: StartDensity, n: usize) -> Result<DensityGrid> {
    let tau = std::f64::consts::TAU;
    let grid = match kind {
        StartDensity::Uniform => DensityGrid::uniform(n),
        StartDensity::Perturbed => {
            DensityGrid::from_fn(n, |x| 1.0 + 0.4 * (tau * x[0]).sin() + 0.3 * (tau * (x[0] + 2.0 * x[1])).cos())
        }
        StartDensity::Indicator => DensityGrid::from_fn(n, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }),
    };
    Ok(grid.normalized()?)
}

pub fn simulate(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.config;
    let started = Instant::now();
    let params = &cfg.simulate;
    let per_trajectory = params.n_switches.div_ceil(params.n_trajectories);
    let switching = SwitchingConfig::new(cfg.fields.clone(), cfg.lambda, cfg.seed).with_law(cfg.law);
    let trajectories = sample_trajectories(&switching, params.n_trajectories, per_trajectory)?;
    let mut masses = Vec::new();
    for mode in 0..2 {
        let grid = occupation_density(&switching, &trajectories, cfg.grid_n, mode)?;
        masses.push(grid.mass());
        ctx.write_grid(&format!("occupation_mode{mode}"), &grid, mode)?;
    }
    let total: f64 = trajectories.iter().map(|t| t.total_time).sum();
    let in_mode0: f64 = trajectories.iter().map(|t| t.time_in_mode(0)).sum();
    ctx.write_json(
        "summary.json",
        &json!({
            "n_switches": per_trajectory * params.n_trajectories,
            "n_trajectories": params.n_trajectories,
            "total_time": total,
            "fraction_in_mode0": in_mode0 / total,
            "mass": masses,
            "wall_time": started.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )?;
    Ok(Outcome::Ok)
}

pub fn solve(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.config;
    let started = Instant::now();
    let n = cfg.grid_n;
    let op = TransferOperator::new(cfg.fields.clone(), cfg.rule()?).with_plans(n)?;
    let report = fixed_point(&op, &start_density(cfg.solve.start, n)?, cfg.solve.tol, cfg.solve.max_iter)?;
    let rho1 = op.single(&report.density, 1)?.normalized()?;
    ctx.write_grid("rho0", &report.density, 0)?;
    ctx.write_grid("rho1", &rho1, 1)?;
    ctx.write_json(
        "solve.json",
        &json!({
            "iterations": report.iterations,
            "residual": report.residual,
            "converged": report.converged,
            "residual_history": report.residual_history,
            "min_value": report.min_value,
            "positivity_flag": report.positivity_flag(),
            "quadrature_nodes": op.rule().len(),
            "wall_time": started.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )?;
    Ok(if report.converged { Outcome::Ok } else { Outcome::NotConverged })
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    value: f64,
    threshold: f64,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
            note: None,
        }
    }

    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            pass: value <= threshold,
            ..Check::below(name, value, threshold)
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            pass: value >= threshold,
            ..Check::below(name, value, threshold)
        }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            pass: value > threshold,
            ..Check::below(name, value, threshold)
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// `det D Phi^t` bracket implied by the field's conjugacy, if it has one.
fn det_bracket(field: &VectorFieldSpec) -> Option<(f64, f64)> {
    if field.is_constant() {
        return Some((1.0, 1.0));
    }
    let (sigma, _) = field.conjugacy()?;
    let (lo, hi) = sigma.det_range(512);
    Some((lo / hi, hi / lo))
}

pub fn verify(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.config;
    let v = &cfg.verify;
    let mut checks = Vec::new();
    let mut skipped = Vec::new();

    let tr = check_transversality(&cfg.fields.u0, &cfg.fields.u1, cfg.transversality.resolution, cfg.transversality.threshold)?;
    checks.push(Check::above("transversality_min_abs_det", tr.min_abs_det, tr.threshold));
    if tr.pass {
        let worst = transfer_identity_sweep(&cfg.fields, v.samples, v.max_time, cfg.seed)?;
        checks.push(Check::below("transfer_identity_max_residual", worst, v.identity_tol));

        if cfg.law.is_exponential() {
            let n = v.gradient_grid_n;
            let tau = std::f64::consts::TAU;
            let smooth = DensityGrid::from_fn(n, |x| 1.0 + 0.5 * (tau * x[0]).sin() * (tau * x[1]).cos());
            let rule = Rule1d::composite_exponential(cfg.lambda, &CompositeParams::default())?;
            let g = gradient_fd_discrepancy(&smooth, &cfg.fields, &rule, cfg.lambda)?;
            checks.push(Check::below("ibp_gradient_rel_l2_smooth", g.relative_l2, v.gradient_rel_tol));
            if v.rough {
                let rough = start_density(StartDensity::Indicator, n)?;
                let rule = Rule1d::composite_exponential(cfg.lambda, &CompositeParams::for_rough(n))?;
                let g = gradient_fd_discrepancy(&rough, &cfg.fields, &rule, cfg.lambda)?;
                let check = Check::below("ibp_gradient_rel_l2_indicator", g.relative_l2, v.gradient_rel_tol);
                checks.push(Check { pass: check.pass && g.finite, ..check });
            }
        } else {
            skipped.push("ibp gradient: integration by parts needs exponential switching");
        }

        for (mode, field) in [(0, &cfg.fields.u0), (1, &cfg.fields.u1)] {
            let Some((lo, hi)) = det_bracket(field) else {
                skipped.push("jacobian scan: field is neither constant nor conjugated");
                continue;
            };
            let scan = jacobian_bounds_scan(field, v.jacobian_t_max, v.jacobian_grid)?;
            let slack = 1.0 + v.det_slack;
            let note = format!("inclusive bracket with slack {}", v.det_slack);
            checks.push(Check::at_least(format!("u{mode}_det_min"), scan.min_det, lo / slack).note(note.clone()));
            checks.push(Check::at_most(format!("u{mode}_det_max"), scan.max_det, hi * slack).note(note));
            checks.push(Check::at_most(
                format!("u{mode}_growth_exponent"),
                scan.growth_exponent,
                v.growth_exponent_max,
            ));
        }
    } else {
        skipped.push("field checks: drive matrix is singular somewhere");
    }

    let sf = &cfg.special_flow;
    let s = special_flow_check(&sf.spec, v.special_flow_samples, sf.t_max as f64, 10.0, v.crossing_margin, cfg.seed);
    checks.push(Check {
        name: "special_flow_unit_determinant".into(),
        value: if s.unit_determinant { 1.0 } else { 0.0 },
        threshold: 1.0,
        pass: s.unit_determinant,
        note: Some(format!("{} samples", s.samples)),
    });
    checks.push(Check {
        name: "special_flow_crossing_bound".into(),
        value: if s.crossing_bound_holds { 1.0 } else { 0.0 },
        threshold: 1.0 + v.crossing_margin,
        pass: s.crossing_bound_holds,
        note: Some("n <= (1 + t) / H_min * threshold".into()),
    });
    checks.push(Check::below("special_flow_shear_fd_error", s.max_fd_error, v.shear_fd_tol).note(format!("{} samples", s.fd_samples)));

    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        eprintln!("{} {} value={:e} threshold={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    ctx.write_json(
        "verify.json",
        &json!({ "pass": pass, "checks": checks, "skipped": skipped, "transversality": tr, "config": cfg }),
    )?;
    Ok(if pass { Outcome::Ok } else { Outcome::VerificationFailed })
}

pub fn smoothing(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.config;
    let n = cfg.grid_n;
    let params = &cfg.smoothing;
    let rule = if params.rough_rule { cfg.rough_rule(n)? } else { cfg.rule()? };
    let h = start_density(params.start, n)?;
    let op = TransferOperator::new(cfg.fields.clone(), rule.clone());
    let rows = smoothing_profile(&op, &h, params.applications)?;
    let mut csv = String::from("applications,l1,gradient_l1,hessian_l1\n");
    for r in &rows {
        csv.push_str(&format!("{},{:e},{:e},{:e}\n", r.applications, r.l1, r.gradient_l1, r.hessian_l1));
    }
    write_file(&ctx.path("smoothing.csv"), &csv)?;
    let bound = if cfg.law.is_exponential() {
        Some(l1_gradient_bound(&h, &cfg.fields, &rule, cfg.lambda)?)
    } else {
        None
    };
    ctx.write_json(
        "smoothing.json",
        &json!({ "rows": rows, "ibp_gradient_bound": bound, "quadrature_nodes": rule.len(), "config": cfg }),
    )?;
    Ok(Outcome::Ok)
}

pub fn special_flow(ctx: &RunContext) -> Result<Outcome> {
    let sf = &ctx.config.special_flow;
    let report = growth_report(&sf.spec, sf.t_max, sf.n_samples)?;
    write_file(&ctx.path("special_flow_growth.csv"), &report.to_csv())?;
    let pass = report.fitted_exponent <= sf.growth_exponent_max;
    ctx.write_json(
        "special_flow.json",
        &json!({
            "fitted_exponent": report.fitted_exponent,
            "threshold": sf.growth_exponent_max,
            "pass": pass,
            "max_shear": report.rows.iter().map(|r| r.max_shear).fold(0.0, f64::max),
            "config": ctx.config,
        }),
    )?;
    Ok(if pass { Outcome::Ok } else { Outcome::VerificationFailed })
}

pub fn transversality(ctx: &RunContext) -> Result<Outcome> {
    let cfg = ctx.config;
    let t = &cfg.transversality;
    let report = check_transversality(&cfg.fields.u0, &cfg.fields.u1, t.resolution, t.threshold)?;
    ctx.write_json("transversality.json", &json!({ "report": report, "config": cfg }))?;
    eprintln!(
        "{} min |det U| = {:e} at ({:.4}, {:.4}), threshold {:e}",
        if report.pass { "PASS" } else { "FAIL" },
        report.min_abs_det,
        report.argmin[0],
        report.argmin[1],
        report.threshold
    );
    Ok(if report.pass { Outcome::Ok } else { Outcome::VerificationFailed })
}
