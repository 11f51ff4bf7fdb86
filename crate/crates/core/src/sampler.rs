//! Monte Carlo simulation of the switching process and of its embedded chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldPair, VectorFieldSpec};
use crate::flows::{flow_position_fast, rk4_march, MAX_STEP};
use crate::grid::DensityGrid;
use crate::law::{GapDistribution, SwitchingLaw};
use crate::torus::{wrap_unit, TorusPoint, Vec2};

/// Sub-sampling step for occupation measures.
pub const OCCUPATION_DT: f64 = 1e-2;

/// Generator for trajectory `index`: the master seed picks the key, the index the stream.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingConfig {
    pub fields: FieldPair,
    pub lambda: f64,
    #[serde(default)]
    pub law: SwitchingLaw,
    pub seed: u64,
}

impl SwitchingConfig {
    pub fn new(fields: FieldPair, lambda: f64, seed: u64) -> Self {
        Self {
            fields,
            lambda,
            law: SwitchingLaw::Exponential,
            seed,
        }
    }

    pub fn with_law(mut self, law: SwitchingLaw) -> Self {
        self.law = law;
        self
    }

    pub fn gaps(&self) -> Result<GapDistribution> {
        self.law.build(self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub time: f64,
    pub position: TorusPoint,
    /// Mode followed from this record until the next one.
    pub mode: usize,
}

/// Switch records starting with the initial state; segment `k` runs from record `k` to `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<SwitchRecord>,
    pub total_time: f64,
}

impl Trajectory {
    pub fn segments(&self) -> impl Iterator<Item = (&SwitchRecord, f64)> {
        self.records.windows(2).map(|w| (&w[0], w[1].time - w[0].time))
    }

    /// Time spent in `mode`.
    pub fn time_in_mode(&self, mode: usize) -> f64 {
        self.segments().filter(|(r, _)| r.mode == mode).map(|(_, d)| d).sum()
    }
}

fn check_mode(mode: usize) -> Result<()> {
    if mode > 1 {
        Err(Error::InvalidArgument(format!("mode must be 0 or 1, got {mode}")))
    } else {
        Ok(())
    }
}

pub fn sample_trajectory(cfg: &SwitchingConfig, x0: TorusPoint, mode0: usize, n_switches: usize) -> Result<Trajectory> {
    let gaps = cfg.gaps()?;
    let mut rng = trajectory_rng(cfg.seed, 0);
    sample_with(cfg, &gaps, &mut rng, x0, mode0, n_switches)
}

fn sample_with(
    cfg: &SwitchingConfig,
    gaps: &GapDistribution,
    rng: &mut ChaCha8Rng,
    x0: TorusPoint,
    mode0: usize,
    n_switches: usize,
) -> Result<Trajectory> {
    check_mode(mode0)?;
    if n_switches == 0 {
        return Err(Error::InvalidArgument("a trajectory needs at least one switch".into()));
    }
    let mut records = Vec::with_capacity(n_switches + 1);
    let mut time = 0.0;
    let mut pos = x0;
    let mut mode = mode0;
    records.push(SwitchRecord { time, position: pos, mode });
    for k in 0..n_switches {
        let gap = gaps.sample(rng);
        let field = cfg.fields.field(mode)?;
        let end = flow_position_fast(field, &pos.lift(), gap).map_err(|e| e.context(format!("switch {}", k + 1)))?;
        pos = TorusPoint::from_lift(end);
        time += gap;
        mode = 1 - mode;
        records.push(SwitchRecord { time, position: pos, mode });
    }
    Ok(Trajectory {
        records,
        total_time: time,
    })
}

/// `n_trajectories` independent trajectories with uniformly random starts, one RNG stream each.
pub fn sample_trajectories(cfg: &SwitchingConfig, n_trajectories: usize, n_switches: usize) -> Result<Vec<Trajectory>> {
    let gaps = cfg.gaps()?;
    (0..n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(cfg.seed, i as u64);
            let x0 = TorusPoint::new(rng.gen(), rng.gen());
            let mode0 = rng.gen_range(0..2);
            sample_with(cfg, &gaps, &mut rng, x0, mode0, n_switches).map_err(|e| e.context(format!("trajectory {i}")))
        })
        .collect()
}

/// `Z_{k+1} = Phi_0^{T_k}(Phi_1^{S_k}(Z_k))`; returns `n_steps + 1` points starting at `z0`.
pub fn embedded_chain(cfg: &SwitchingConfig, z0: TorusPoint, n_steps: usize) -> Result<Vec<TorusPoint>> {
    let gaps = cfg.gaps()?;
    let mut rng = trajectory_rng(cfg.seed, 0);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(z0);
    let mut z = z0;
    for k in 0..n_steps {
        z = chain_step(&cfg.fields, &gaps, &mut rng, z).map_err(|e| e.context(format!("chain step {}", k + 1)))?;
        out.push(z);
    }
    Ok(out)
}

fn chain_step(fields: &FieldPair, gaps: &GapDistribution, rng: &mut ChaCha8Rng, z: TorusPoint) -> Result<TorusPoint> {
    let s = gaps.sample(rng);
    let t = gaps.sample(rng);
    let mid = flow_position_fast(&fields.u1, &z.lift(), s)?;
    let mid = TorusPoint::from_lift(mid).lift();
    Ok(TorusPoint::from_lift(flow_position_fast(&fields.u0, &mid, t)?))
}

/// Histogram of the embedded chain, split over `n_chains` independent chains with random
/// starts; `burn_in` steps of each chain are discarded. Returns a unit-mass density grid.
pub fn embedded_chain_histogram(
    cfg: &SwitchingConfig,
    total_steps: usize,
    grid_n: usize,
    n_chains: usize,
    burn_in: usize,
) -> Result<DensityGrid> {
    if n_chains == 0 || total_steps < n_chains {
        return Err(Error::EmptyInput("need at least one recorded step per chain".into()));
    }
    let gaps = cfg.gaps()?;
    let per_chain = total_steps / n_chains;
    let extra = total_steps % n_chains;
    let counts: Vec<Vec<u64>> = (0..n_chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<u64>> {
            let mut rng = trajectory_rng(cfg.seed, c as u64);
            let mut z = TorusPoint::new(rng.gen(), rng.gen());
            for _ in 0..burn_in {
                z = chain_step(&cfg.fields, &gaps, &mut rng, z)?;
            }
            let steps = per_chain + usize::from(c < extra);
            let mut hist = vec![0u64; grid_n * grid_n];
            for _ in 0..steps {
                z = chain_step(&cfg.fields, &gaps, &mut rng, z)?;
                hist[cell_index(grid_n, &z)] += 1;
            }
            Ok(hist)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; grid_n * grid_n];
    for hist in &counts {
        for (t, h) in total.iter_mut().zip(hist) {
            *t += h;
        }
    }
    let values = total.into_iter().map(|c| c as f64).collect();
    DensityGrid::new(grid_n, values)?.normalized()
}

#[inline]
fn cell_index(n: usize, p: &TorusPoint) -> usize {
    let j = ((p.x1() * n as f64) as usize).min(n - 1);
    let k = ((p.x2() * n as f64) as usize).min(n - 1);
    j * n + k
}

/// Adds `weight` at every sub-sample of the segment of `field` starting at `start` with
/// duration `duration` into the raw histogram `acc`.
fn bin_segment(field: &VectorFieldSpec, start: &TorusPoint, duration: f64, n: usize, acc: &mut [f64]) -> Result<()> {
    let pieces = ((duration / OCCUPATION_DT).ceil() as usize).max(1);
    let h = duration / pieces as f64;
    let times: Vec<f64> = (0..pieces).map(|k| (k as f64 + 0.5) * h).collect();
    let x = start.lift();
    let mut add = |y: Vec2| {
        let p = TorusPoint::new(wrap_unit(y[0]), wrap_unit(y[1]));
        acc[cell_index(n, &p)] += h;
    };
    if field.exact_flow(&x, 0.0)?.is_some() {
        for &t in &times {
            add(field.exact_flow(&x, t)?.expect("closed-form flow"));
        }
        Ok(())
    } else {
        let rhs = |y: &[f64; 2]| {
            let u = field.eval(&Vec2::new(y[0], y[1]));
            [u[0], u[1]]
        };
        rk4_march(rhs, [x[0], x[1]], &times, MAX_STEP, |_, _, y| {
            add(Vec2::new(y[0], y[1]));
            Ok(())
        })
    }
}

/// Time-weighted occupation density of `mode` over all trajectories, normalized to unit mass.
pub fn occupation_density(cfg: &SwitchingConfig, trajectories: &[Trajectory], grid_n: usize, mode: usize) -> Result<DensityGrid> {
    check_mode(mode)?;
    if grid_n == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    let field = cfg.fields.field(mode)?;
    let partials: Vec<Vec<f64>> = trajectories
        .par_iter()
        .map(|traj| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; grid_n * grid_n];
            for (rec, d) in traj.segments() {
                if rec.mode == mode && d > 0.0 {
                    bin_segment(field, &rec.position, d, grid_n, &mut acc)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; grid_n * grid_n];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let time: f64 = total.iter().sum();
    if !(time > 0.0) {
        return Err(Error::EmptyInput(format!("no simulated time in mode {mode}")));
    }
    let scale = (grid_n * grid_n) as f64 / time;
    DensityGrid::new(grid_n, total.into_iter().map(|v| v * scale).collect())
}
