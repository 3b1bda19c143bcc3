//! Domain types shared across the crate.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{config, Error, Result};
use crate::points::{Points, WeightedPoints};

/// One observed population sample at a single time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Time rescaled to `[0, 1]`.
    pub time: f64,
    /// Time as it appeared in the input.
    pub original_time: f64,
    pub measure: WeightedPoints,
}

impl Snapshot {
    pub fn points(&self) -> &Points {
        &self.measure.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.measure.weights
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }
}

/// Ordered snapshots `μ̂_{t_1}, …, μ̂_{t_T}` with `T ≥ 2`.
///
/// Times are mapped affinely so that `t_1 = 0` and `t_T = 1`; the original
/// times are kept for labelling outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    snapshots: Vec<Snapshot>,
}

impl SnapshotSeries {
    /// Builds a series from `(original time, measure)` pairs. Weights are
    /// renormalized to sum to one.
    pub fn new(entries: Vec<(f64, WeightedPoints)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(config(format!(
                "need at least 2 snapshots, got {}",
                entries.len()
            )));
        }
        let dim = entries[0].1.dim();
        for (k, (t, m)) in entries.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Input(format!("snapshot {k} has non-finite time")));
            }
            if m.is_empty() {
                return Err(config(format!("snapshot {k} is empty")));
            }
            if m.dim() != dim {
                return Err(config(format!(
                    "snapshot {k} has dimension {} but snapshot 0 has {dim}",
                    m.dim()
                )));
            }
            if !m.points.all_finite() {
                return Err(Error::Input(format!("snapshot {k} has non-finite coordinates")));
            }
        }
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(config(format!(
                    "snapshot times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        let t0 = entries[0].0;
        let span = entries[entries.len() - 1].0 - t0;
        let last = entries.len() - 1;
        let snapshots = entries
            .into_iter()
            .enumerate()
            .map(|(k, (t, m))| {
                let time = if k == last { 1.0 } else { (t - t0) / span };
                let measure = WeightedPoints::normalized(m.points, m.weights)?;
                Ok(Snapshot {
                    time,
                    original_time: t,
                    measure,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { snapshots })
    }

    /// Uniformly weighted snapshots from `(time, points)` pairs.
    pub fn from_points(entries: Vec<(f64, Points)>) -> Result<Self> {
        Self::new(
            entries
                .into_iter()
                .map(|(t, p)| {
                    if p.is_empty() {
                        Err(config("snapshot is empty"))
                    } else {
                        Ok((t, WeightedPoints::uniform(p)))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].measure.dim()
    }

    pub fn get(&self, i: usize) -> &Snapshot {
        &self.snapshots[i]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Snapshot> {
        self.snapshots.iter()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn original_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.original_time).collect()
    }

    /// Maps a rescaled time back to input units.
    pub fn to_original_time(&self, t: f64) -> f64 {
        let a = self.snapshots[0].original_time;
        let b = self.snapshots[self.len() - 1].original_time;
        a + t * (b - a)
    }

    /// Observation weights `Δt_i`, recomputed from the current times.
    pub fn delta_t_weights(&self) -> Vec<f64> {
        delta_t_weights(&self.times())
    }

    pub fn intervals(&self, tau: f64) -> Result<Vec<IntervalSpec>> {
        derive_intervals(&self.times(), tau)
    }

    /// Original-unit lengths of the intervals between consecutive snapshots.
    pub fn original_interval_lengths(&self) -> Vec<f64> {
        self.snapshots
            .windows(2)
            .map(|w| w[1].original_time - w[0].original_time)
            .collect()
    }

    pub fn total_points(&self) -> usize {
        self.snapshots.iter().map(|s| s.len()).sum()
    }
}

/// One interval `[t_i, t_{i+1}]` with its bridge temperature `τ_i = (t_{i+1} − t_i) τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub start: f64,
    pub end: f64,
    pub tau: f64,
}

impl IntervalSpec {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

pub fn derive_intervals(times: &[f64], tau: f64) -> Result<Vec<IntervalSpec>> {
    if times.len() < 2 {
        return Err(config(format!(
            "need at least 2 timepoints, got {}",
            times.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(config(format!("tau must be positive, got {tau}")));
    }
    times
        .windows(2)
        .map(|w| {
            let len = w[1] - w[0];
            if !(len > 0.0) {
                return Err(config("times must be strictly increasing"));
            }
            Ok(IntervalSpec {
                start: w[0],
                end: w[1],
                tau: len * tau,
            })
        })
        .collect()
}

/// `Δt_i = (t_{i+1} − t_{i−1}) / 2` with `t_0 = 0` and `t_{T+1} = 1`.
pub fn delta_t_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            let prev = if i == 0 { 0.0 } else { times[i - 1] };
            let next = if i + 1 == n { 1.0 } else { times[i + 1] };
            (next - prev) / 2.0
        })
        .collect()
}

/// The optimization variable: `T` clouds of `m` particles each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalState {
    pub clouds: Vec<Points>,
    pub iteration: usize,
}

impl MarginalState {
    pub fn new(clouds: Vec<Points>) -> Result<Self> {
        let first = clouds
            .first()
            .ok_or_else(|| config("marginal state needs at least one cloud"))?;
        let (m, d) = (first.len(), first.dim());
        if m == 0 {
            return Err(config("clouds must contain at least one particle"));
        }
        for (i, c) in clouds.iter().enumerate() {
            if c.len() != m || c.dim() != d {
                return Err(config(format!(
                    "cloud {i} is {}x{} but cloud 0 is {m}x{d}",
                    c.len(),
                    c.dim()
                )));
            }
        }
        Ok(Self {
            clouds,
            iteration: 0,
        })
    }

    pub fn timepoints(&self) -> usize {
        self.clouds.len()
    }

    pub fn particles(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn dim(&self) -> usize {
        self.clouds[0].dim()
    }

    pub fn measures(&self) -> Vec<WeightedPoints> {
        self.clouds
            .iter()
            .map(|c| WeightedPoints::uniform(c.clone()))
            .collect()
    }
}

/// Marginal penalty strength `ρ`; infinity means hard marginal constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho(pub f64);

impl Rho {
    pub const INFINITE: Rho = Rho(f64::INFINITY);

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Default for Rho {
    fn default() -> Self {
        Rho::INFINITE
    }
}

impl Serialize for Rho {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Rho {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RhoVisitor;
        impl Visitor<'_> for RhoVisitor {
            type Value = Rho;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Rho, E> {
                Ok(Rho(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Rho, E> {
                Ok(Rho(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Rho, E> {
                Ok(Rho(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Rho, E> {
                match v {
                    "inf" | "infinity" | "Infinity" => Ok(Rho::INFINITE),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(RhoVisitor)
    }
}

/// Prior growth rate `g(t, x)`; positive values mean division.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthPrior {
    Constant { rate: f64 },
    /// `amplitude · (tanh(slope · x[coordinate]) + 1) / 2`.
    Tanh {
        amplitude: f64,
        slope: f64,
        #[serde(default)]
        coordinate: usize,
    },
}

impl GrowthPrior {
    /// Growth prior of the branching benchmark.
    pub fn bistable_benchmark() -> Self {
        GrowthPrior::Tanh {
            amplitude: 10.0,
            slope: 2.0,
            coordinate: 0,
        }
    }

    pub fn rate(&self, _t: f64, x: &[f64]) -> f64 {
        match *self {
            GrowthPrior::Constant { rate } => rate,
            GrowthPrior::Tanh {
                amplitude,
                slope,
                coordinate,
            } => amplitude * ((slope * x[coordinate]).tanh() + 1.0) / 2.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            GrowthPrior::Constant { rate } if !rate.is_finite() => {
                Err(config("growth rate must be finite"))
            }
            GrowthPrior::Tanh {
                amplitude,
                slope,
                coordinate,
            } => {
                if !amplitude.is_finite() || !slope.is_finite() {
                    Err(config("growth parameters must be finite"))
                } else if coordinate >= dim {
                    Err(config(format!(
                        "growth coordinate {coordinate} out of range for dimension {dim}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Largest rate magnitude the prior can produce, if bounded.
    pub fn max_abs_rate(&self) -> f64 {
        match *self {
            GrowthPrior::Constant { rate } => rate.abs(),
            GrowthPrior::Tanh { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// How the initial particle clouds are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initializer {
    /// Isotropic Gaussian `N(mean·1, std²·I)` for every timepoint.
    Gaussian { mean: f64, std: f64 },
    /// Resample each cloud from its snapshot and add Gaussian jitter.
    Resample { jitter: f64 },
    /// Marginals CSV written by a previous run.
    File { path: String },
}

impl Default for Initializer {
    fn default() -> Self {
        Initializer::Gaussian {
            mean: 0.0,
            std: 0.1,
        }
    }
}

/// Extra-entropy schedule `ε_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonMode {
    /// `ε_k = ε`.
    #[default]
    None,
    /// `ε_k = ε · r^k`.
    Geometric,
    /// `ε_k = α / log(k + k0)`, with `k0 ≥ 2`.
    Logarithmic { alpha: f64, k0: f64 },
}

/// Temperature schedule `τ_k = max{c r^k, τ_f}`, optionally carrying the step
/// size and the squared fit bandwidth along with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingSchedule {
    pub c: f64,
    pub r: f64,
    pub tau_f: f64,
    /// From this iteration on `τ_k = τ_f` exactly.
    pub anneal_steps: usize,
    #[serde(default)]
    pub scale_eta: bool,
    #[serde(default)]
    pub scale_sigma: bool,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
}

impl AnnealingSchedule {
    /// No annealing: `τ_k = τ` for every `k`.
    pub fn constant(tau: f64) -> Self {
        Self {
            c: tau,
            r: 0.5,
            tau_f: tau,
            anneal_steps: 0,
            scale_eta: false,
            scale_sigma: false,
            epsilon_mode: EpsilonMode::None,
        }
    }

    /// Starts at `factor · τ_f` and decays geometrically to `τ_f` in `steps`
    /// iterations, scaling `η` and `σ²` along.
    pub fn geometric(tau_f: f64, factor: f64, steps: usize) -> Self {
        let r = if steps == 0 {
            0.5
        } else {
            (1.0 / factor).powf(1.0 / steps as f64)
        };
        Self {
            c: factor * tau_f,
            r,
            tau_f,
            anneal_steps: steps,
            scale_eta: true,
            scale_sigma: true,
            epsilon_mode: EpsilonMode::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(config(format!("schedule c must be positive, got {}", self.c)));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(config(format!("schedule r must lie in (0,1), got {}", self.r)));
        }
        if !(self.tau_f > 0.0 && self.tau_f.is_finite()) {
            return Err(config(format!(
                "schedule tau_f must be positive, got {}",
                self.tau_f
            )));
        }
        if let EpsilonMode::Logarithmic { alpha, k0 } = self.epsilon_mode {
            if !(alpha >= 0.0) || !(k0 >= 2.0) {
                return Err(config("logarithmic epsilon needs alpha >= 0 and k0 >= 2"));
            }
        }
        Ok(())
    }
}

fn default_eta() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    2500
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    10_000
}
fn default_knn_k() -> usize {
    4
}
fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}

/// Problem and solver settings.
///
/// | key | default |
/// |-----|---------|
/// | `lambda`, `sigma`, `tau`, `m` | required |
/// | `eta` | 0.1 |
/// | `iterations` | 2500 |
/// | `seed` | 0 |
/// | `epsilon` | 0 |
/// | `growth` | none |
/// | `rho` | `"inf"` |
/// | `confine_sigma` | none (no confining potential) |
/// | `init` | gaussian, mean 0, std 0.1 |
/// | `sinkhorn_tol` | 1e-6 |
/// | `sinkhorn_max_iter` | 10000 |
/// | `warm_start` | true |
/// | `auto_scale` | false |
/// | `knn_k` | 4 |
/// | `report_stride` | 1 |
/// | `checkpoint_every` | 0 (off) |
/// | `annealing` | none (constant temperature) |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub tau: f64,
    pub m: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub growth: Option<GrowthPrior>,
    #[serde(default)]
    pub rho: Rho,
    #[serde(default)]
    pub confine_sigma: Option<f64>,
    #[serde(default)]
    pub init: Initializer,
    #[serde(default = "default_tol")]
    pub sinkhorn_tol: f64,
    #[serde(default = "default_max_iter")]
    pub sinkhorn_max_iter: usize,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub auto_scale: bool,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_stride")]
    pub report_stride: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub annealing: Option<AnnealingSchedule>,
}

impl ProblemConfig {
    /// A config with the given required fields and every default filled in.
    pub fn new(lambda: f64, sigma: f64, tau: f64, m: usize) -> Self {
        Self {
            lambda,
            sigma,
            tau,
            m,
            eta: default_eta(),
            iterations: default_iterations(),
            seed: 0,
            epsilon: 0.0,
            growth: None,
            rho: Rho::INFINITE,
            confine_sigma: None,
            init: Initializer::default(),
            sinkhorn_tol: default_tol(),
            sinkhorn_max_iter: default_max_iter(),
            warm_start: true,
            auto_scale: false,
            knn_k: default_knn_k(),
            report_stride: default_stride(),
            checkpoint_every: 0,
            annealing: None,
        }
    }

    /// Settings of the bifurcation benchmark: `λ=0.05, σ=0.5, τ=1/4, m=100,
    /// η=0.1`, 2500 iterations.
    pub fn bifurcation_benchmark() -> Self {
        Self::new(0.05, 0.5, 0.25, 100)
    }

    /// Settings of the branching benchmark (`τ=1, λ=0.025`), optionally
    /// with the known growth prior and `ρ = ∞`.
    pub fn bistable_benchmark(with_growth: bool) -> Self {
        let mut c = Self::new(0.025, 0.5, 1.0, 100);
        if with_growth {
            c.growth = Some(GrowthPrior::bistable_benchmark());
        }
        c
    }

    /// The annealing schedule to use: the configured one, or constant `τ`.
    pub fn schedule(&self) -> AnnealingSchedule {
        self.annealing
            .clone()
            .unwrap_or_else(|| AnnealingSchedule::constant(self.tau))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("sinkhorn_tol", self.sinkhorn_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(config(format!("eta must be nonnegative, got {}", self.eta)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if self.m == 0 {
            return Err(config("m must be at least 1"));
        }
        if !(self.rho.0 > 0.0) {
            return Err(config(format!("rho must be positive, got {}", self.rho.0)));
        }
        if let Some(s) = self.confine_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config(format!("confine_sigma must be positive, got {s}")));
            }
        }
        if self.sinkhorn_max_iter == 0 {
            return Err(config("sinkhorn_max_iter must be at least 1"));
        }
        if self.knn_k == 0 {
            return Err(config("knn_k must be at least 1"));
        }
        if self.report_stride == 0 {
            return Err(config("report_stride must be at least 1"));
        }
        match &self.init {
            Initializer::Gaussian { mean, std } if !mean.is_finite() || !(*std >= 0.0) => {
                return Err(config("gaussian initializer needs finite mean and std >= 0"))
            }
            Initializer::Resample { jitter } if !(*jitter >= 0.0) => {
                return Err(config("resample jitter must be nonnegative"))
            }
            _ => {}
        }
        if let Some(s) = &self.annealing {
            s.validate()?;
            if (s.tau_f - self.tau).abs() > 1e-12 * self.tau.max(1.0) {
                return Err(config(format!(
                    "annealing tau_f ({}) must equal tau ({})",
                    s.tau_f, self.tau
                )));
            }
        }
        Ok(())
    }
}
