//! Discretized mean-field Langevin dynamics on the particle clouds:
//!
//! ```text
//! X ← X − η_k ∇V_i(X) + √(2 η_k (τ_k + ε_k)) Z
//! ```
//!
//! Noise for particle `j` of cloud `i` at iteration `k` comes from a stream
//! keyed by `(seed, k, i, j)`, so a run is reproducible across thread counts
//! and across checkpoint/resume boundaries.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{sinkhorn_unbalanced, tilt_marginals, BridgeSolution, CostSpec, DualPair, SinkhornOptions};
use crate::error::{Error, Result};
use crate::noise::{self, Stream};
use crate::objective::{first_variation, objective_report, ObjectiveParams, ObjectiveReport};
use crate::par;
use crate::points::{Points, WeightedPoints};
use crate::preprocess::compute_scaling;
use crate::types::{AnnealingSchedule, EpsilonMode, Initializer, MarginalState, ProblemConfig, SnapshotSeries};

/// Schedule values in effect at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValues {
    pub k: usize,
    pub tau: f64,
    pub sigma: f64,
    pub eta: f64,
    pub epsilon: f64,
}

/// `τ_k = max{c r^k, τ_f}` (exactly `τ_f` from `anneal_steps` on), with `η`
/// and `σ²` optionally scaled by `τ_k/τ_f`.
pub fn schedule_at(schedule: &AnnealingSchedule, k: usize, config: &ProblemConfig) -> ScheduleValues {
    let tau = if k >= schedule.anneal_steps {
        schedule.tau_f
    } else {
        (schedule.c * schedule.r.powi(k.min(i32::MAX as usize) as i32)).max(schedule.tau_f)
    };
    let ratio = tau / schedule.tau_f;
    let eta = if schedule.scale_eta { config.eta * ratio } else { config.eta };
    let sigma = if schedule.scale_sigma {
        config.sigma * ratio.sqrt()
    } else {
        config.sigma
    };
    let epsilon = match schedule.epsilon_mode {
        EpsilonMode::None => config.epsilon,
        EpsilonMode::Geometric => config.epsilon * schedule.r.powi(k.min(i32::MAX as usize) as i32),
        EpsilonMode::Logarithmic { alpha, k0 } => alpha / (k as f64 + k0).ln(),
    };
    ScheduleValues {
        k,
        tau,
        sigma,
        eta,
        epsilon,
    }
}

/// Divisors applied to squared distances: `cost` in the transport cost and
/// `fit` in the data-fit kernel. Both are 1 unless auto-scaling is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub cost: f64,
    pub fit: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Self { cost: 1.0, fit: 1.0 }
    }
}

impl Scales {
    pub fn for_config(series: &SnapshotSeries, config: &ProblemConfig) -> Result<Self> {
        if !config.auto_scale {
            return Ok(Self::default());
        }
        let s = compute_scaling(series)?;
        Ok(Self {
            cost: s.sigma_scale_sq,
            fit: s.eta_scale_sq,
        })
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub marginals: MarginalState,
    /// Warm-start duals per interval, from the last solve.
    pub duals: Vec<Option<DualPair>>,
    pub seed: u64,
    /// Schedule values used by the most recent step.
    pub last_schedule: Option<ScheduleValues>,
}

impl OptimizerState {
    pub fn new(marginals: MarginalState, seed: u64) -> Self {
        let n = marginals.timepoints().saturating_sub(1);
        Self {
            marginals,
            duals: vec![None; n],
            seed,
            last_schedule: None,
        }
    }

    /// Number of completed updates.
    pub fn iteration(&self) -> usize {
        self.marginals.iteration
    }
}

fn resample_indices(weights: &[f64], m: usize, seed: u64, i: usize) -> Vec<usize> {
    let n = weights.len();
    let mut rng = noise::rng(seed, Stream::Init, &[i as u64, 1]);
    let uniform = weights.iter().all(|w| (w - weights[0]).abs() <= 1e-12 * weights[0]);
    if uniform {
        // Whole shuffled blocks first, so m = n reproduces the snapshot.
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let mut block: Vec<usize> = (0..n).collect();
            block.shuffle(&mut rng);
            out.extend(block.into_iter().take(m - out.len()));
        }
        out
    } else {
        let mut cum = Vec::with_capacity(n);
        let mut s = 0.0;
        for w in weights {
            s += w;
            cum.push(s);
        }
        (0..m)
            .map(|_| {
                let r = rng.random::<f64>() * s;
                cum.partition_point(|c| *c <= r).min(n - 1)
            })
            .collect()
    }
}

/// Draws the initial clouds. Deterministic given the config seed.
pub fn init_particles(series: &SnapshotSeries, config: &ProblemConfig) -> Result<MarginalState> {
    let (t, m, d) = (series.len(), config.m, series.dim());
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let clouds = match &config.init {
        Initializer::Gaussian { mean, std } => (0..t)
            .map(|i| {
                let mut z = vec![0.0; m * d];
                noise::fill_normal(config.seed, Stream::Init, &[i as u64], &mut z);
                z.iter_mut().for_each(|v| *v = mean + std * *v);
                Points::new(d, z)
            })
            .collect::<Result<Vec<_>>>()?,
        Initializer::Resample { jitter } => (0..t)
            .map(|i| {
                let snap = series.get(i);
                let idx = resample_indices(snap.weights(), m, config.seed, i);
                let mut cloud = snap.points().select(&idx);
                if *jitter > 0.0 {
                    let mut z = vec![0.0; m * d];
                    noise::fill_normal(config.seed, Stream::Init, &[i as u64, 2], &mut z);
                    for (x, e) in cloud.as_mut_slice().iter_mut().zip(&z) {
                        *x += jitter * e;
                    }
                }
                cloud
            })
            .collect(),
        Initializer::File { path } => {
            let state = crate::io::read_marginals(std::path::Path::new(path))?;
            if state.timepoints() != t || state.particles() != m || state.dim() != d {
                return Err(Error::Config(format!(
                    "initial marginals in {path} are {}x{}x{}, expected {t}x{m}x{d}",
                    state.timepoints(),
                    state.particles(),
                    state.dim()
                )));
            }
            state.clouds
        }
    };
    MarginalState::new(clouds)
}

/// Solves the `T−1` bridges between consecutive clouds at temperature `tau`,
/// tilting the endpoints by the growth prior when one is configured.
pub fn solve_bridges(
    clouds: &[Points],
    series: &SnapshotSeries,
    config: &ProblemConfig,
    tau: f64,
    scales: Scales,
    warm: &[Option<DualPair>],
) -> Result<Vec<BridgeSolution>> {
    let intervals = series.intervals(tau)?;
    let original_times = series.original_times();
    let original_lengths = series.original_interval_lengths();
    let cost = CostSpec::with_scale(scales.cost)?;
    let opts = SinkhornOptions {
        tol: config.sinkhorn_tol,
        max_iter: config.sinkhorn_max_iter,
    };
    par::try_map_range(intervals.len(), |i| {
        let mut source = WeightedPoints::uniform(clouds[i].clone());
        let mut target = WeightedPoints::uniform(clouds[i + 1].clone());
        if let Some(g) = &config.growth {
            (source, target) = tilt_marginals(
                &source,
                &target,
                g,
                original_times[i],
                original_times[i + 1],
                original_lengths[i],
            )?;
        }
        let w = if config.warm_start {
            warm.get(i).and_then(|d| d.as_ref())
        } else {
            None
        };
        let sol = sinkhorn_unbalanced(&source, &target, cost, intervals[i].tau, config.rho, &opts, w)?;
        if !sol.converged {
            log::warn!(
                "bridge {i} did not converge in {} iterations (violation {:.3e})",
                sol.iterations,
                sol.marginal_violation
            );
        }
        Ok(sol)
    })
}

/// Objective parameters for the given schedule values.
pub fn objective_params(config: &ProblemConfig, sv: &ScheduleValues, scales: Scales) -> ObjectiveParams {
    ObjectiveParams {
        lambda: config.lambda,
        sigma: sv.sigma * scales.fit.sqrt(),
        tau: sv.tau,
        confine_sigma: config.confine_sigma,
        knn_k: config.knn_k,
    }
}

/// What one step produced besides the new state.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Objective at the clouds the step started from.
    pub report: Option<ObjectiveReport>,
    /// Bridges between the clouds the step started from.
    pub bridges: Vec<BridgeSolution>,
}

/// L1 marginal violation (out of a possible 2) beyond which a balanced
/// bridge is treated as failed rather than merely unconverged.
pub const MAX_BRIDGE_VIOLATION: f64 = 1.0;

/// One MFL update of every particle. The objective report is computed from
/// the same bridges when `report` is set.
pub fn mfl_step(
    state: &mut OptimizerState,
    series: &SnapshotSeries,
    config: &ProblemConfig,
    schedule: &AnnealingSchedule,
    scales: Scales,
    report: bool,
) -> Result<StepOutput> {
    let k = state.iteration();
    let sv = schedule_at(schedule, k, config);
    let bridges = solve_bridges(&state.marginals.clouds, series, config, sv.tau, scales, &state.duals)?;
    let failed = |b: &BridgeSolution| {
        let limit = if b.rho.is_infinite() { MAX_BRIDGE_VIOLATION } else { f64::INFINITY };
        !(b.marginal_violation.is_finite() && b.marginal_violation <= limit)
    };
    if let Some(interval) = bridges.iter().position(failed) {
        return Err(Error::BridgeFailed {
            iteration: k,
            interval,
            violation: bridges[interval].marginal_violation,
        });
    }
    let params = objective_params(config, &sv, scales);
    let report = if report {
        let mut r = objective_report(&state.marginals, series, &bridges, &params)?;
        r.iteration = k + 1;
        r.eta = sv.eta;
        r.epsilon = sv.epsilon;
        Some(r)
    } else {
        None
    };
    let grads = first_variation(&state.marginals, series, &bridges, &params)?.gradients();
    let noise_scale = (2.0 * sv.eta * (sv.tau + sv.epsilon)).sqrt();
    let seed = state.seed;
    for (i, (cloud, grad)) in state.marginals.clouds.iter_mut().zip(&grads).enumerate() {
        let d = cloud.dim();
        par::for_each_chunk_mut(cloud.as_mut_slice(), d, |j, x| {
            let mut z = vec![0.0; d];
            if noise_scale > 0.0 {
                noise::fill_normal(seed, Stream::Langevin, &[k as u64, i as u64, j as u64], &mut z);
            }
            let g = grad.row(j);
            for c in 0..d {
                x[c] += -sv.eta * g[c] + noise_scale * z[c];
            }
        });
        if let Some(flat) = cloud.first_non_finite() {
            return Err(Error::Diverged {
                iteration: k,
                timepoint: i,
                particle: flat / d,
            });
        }
    }
    state.duals = bridges.iter().map(|b| Some(b.duals())).collect();
    state.marginals.iteration += 1;
    state.last_schedule = Some(sv);
    Ok(StepOutput { report, bridges })
}

/// On-disk snapshot of a run in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ProblemConfig,
    pub state: OptimizerState,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(config: &ProblemConfig, state: &OptimizerState) -> Self {
        Self {
            version: Self::VERSION,
            config: config.clone(),
            state: state.clone(),
        }
    }
}

/// Hooks called by [`run`]. Errors abort the run.
pub trait Observer {
    fn on_report(&mut self, _report: &ObjectiveReport) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl Observer for NoObserver {}

/// Observer that keeps every report in memory.
#[derive(Debug, Default)]
pub struct CollectReports(pub Vec<ObjectiveReport>);

impl Observer for CollectReports {
    fn on_report(&mut self, report: &ObjectiveReport) -> Result<()> {
        self.0.push(report.clone());
        Ok(())
    }
}

/// Per-coordinate box around all observations, inflated by 5 standard
/// deviations.
fn inflated_box(series: &SnapshotSeries) -> (Vec<f64>, Vec<f64>) {
    let d = series.dim();
    let mut n = 0.0;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    for s in series.iter() {
        for x in s.points().rows() {
            n += 1.0;
            for k in 0..d {
                mean[k] += x[k];
                sq[k] += x[k] * x[k];
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
    }
    for k in 0..d {
        mean[k] /= n;
        let sd = (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt();
        lo[k] -= 5.0 * sd;
        hi[k] += 5.0 * sd;
    }
    (lo, hi)
}

fn outside(clouds: &[Points], lo: &[f64], hi: &[f64]) -> usize {
    clouds
        .iter()
        .flat_map(|c| c.rows())
        .filter(|x| x.iter().enumerate().any(|(k, v)| *v < lo[k] || *v > hi[k]))
        .count()
}

/// Runs until `config.iterations` updates have been applied, starting from
/// `state` (fresh or restored from a checkpoint).
pub fn run(
    series: &SnapshotSeries,
    config: &ProblemConfig,
    mut state: OptimizerState,
    observer: &mut dyn Observer,
) -> Result<OptimizerState> {
    config.validate()?;
    if state.marginals.timepoints() != series.len() || state.marginals.dim() != series.dim() {
        return Err(Error::Config(format!(
            "state has {} clouds in dimension {}, data has {} snapshots in dimension {}",
            state.marginals.timepoints(),
            state.marginals.dim(),
            series.len(),
            series.dim()
        )));
    }
    let schedule = config.schedule();
    let scales = Scales::for_config(series, config)?;
    let (lo, hi) = inflated_box(series);
    let mut warned = false;
    while state.iteration() < config.iterations {
        let k = state.iteration();
        let want_report = k % config.report_stride == 0 || k + 1 == config.iterations;
        let out = mfl_step(&mut state, series, config, &schedule, scales, want_report)?;
        if let Some(r) = &out.report {
            observer.on_report(r)?;
        }
        if !warned {
            let n = outside(&state.marginals.clouds, &lo, &hi);
            if n > 0 {
                log::warn!("{n} particles left the data bounding box (inflated by 5 sd) at iteration {}", k + 1);
                warned = true;
            }
        }
        if config.checkpoint_every > 0 && state.iteration() % config.checkpoint_every == 0 {
            observer.on_checkpoint(&Checkpoint::new(config, &state))?;
        }
    }
    Ok(state)
}

/// Fresh state from the configured initializer, then [`run`].
pub fn run_from_start(
    series: &SnapshotSeries,
    config: &ProblemConfig,
    observer: &mut dyn Observer,
) -> Result<OptimizerState> {
    config.validate()?;
    let init = init_particles(series, config)?;
    run(series, config, OptimizerState::new(init, config.seed), observer)
}

/// Bridges between the final clouds at the final temperature, for path
/// sampling.
pub fn final_bridges(state: &OptimizerState, series: &SnapshotSeries, config: &ProblemConfig) -> Result<Vec<BridgeSolution>> {
    let sv = schedule_at(&config.schedule(), state.iteration(), config);
    let scales = Scales::for_config(series, config)?;
    solve_bridges(&state.marginals.clouds, series, config, sv.tau, scales, &state.duals)
}
