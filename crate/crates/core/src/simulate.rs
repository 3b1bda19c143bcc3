//! Ground-truth generator: Euler–Maruyama for `dX = −∇Ψ(t, X) dt + √τ dB`
//! with optional Bernoulli branching, plus the two synthetic benchmarks.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{BranchClassifier, branch_fraction_of_points};
use crate::noise::{self, Stream};
use crate::par;
use crate::points::{Points, WeightedPoints};
use crate::types::{GrowthPrior, SnapshotSeries};

/// Built-in potentials `Ψ(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `½(x₁−1.5)²(x₁+1.5)² + 10(x₂+t)² + 10 Σ_{k≥3} x_k²` in 10 dimensions.
    Bifurcation,
    /// `1.25 ‖x−a‖² ‖x−b‖² + 10 Σ_{k≥3} x_k²` in 10 dimensions.
    Bistable { a: Vec<f64>, b: Vec<f64> },
    /// `½ strength ‖x − center‖²`, any dimension.
    Quadratic { strength: f64, center: Vec<f64> },
}

pub const BENCHMARK_DIM: usize = 10;

impl PotentialSpec {
    pub fn bistable_benchmark() -> Self {
        let mut a = vec![0.0; BENCHMARK_DIM];
        let mut b = vec![0.0; BENCHMARK_DIM];
        a[..2].copy_from_slice(&[1.4, 1.4]);
        b[..2].copy_from_slice(&[-1.25, -1.25]);
        PotentialSpec::Bistable { a, b }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let expected = match self {
            PotentialSpec::Bifurcation => BENCHMARK_DIM,
            PotentialSpec::Bistable { a, b } => {
                if a.len() != b.len() {
                    return Err(Error::Config("bistable centers differ in length".into()));
                }
                a.len()
            }
            PotentialSpec::Quadratic { center, .. } => center.len(),
        };
        if d != expected {
            return Err(Error::Config(format!(
                "potential expects dimension {expected}, got {d}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Bifurcation => {
                let tail: f64 = x[2..].iter().map(|v| v * v).sum();
                0.5 * (x[0] - 1.5).powi(2) * (x[0] + 1.5).powi(2) + 10.0 * (x[1] + t).powi(2) + 10.0 * tail
            }
            PotentialSpec::Bistable { a, b } => {
                let tail: f64 = x[2..].iter().map(|v| v * v).sum();
                1.25 * crate::points::sq_dist(x, a) * crate::points::sq_dist(x, b) + 10.0 * tail
            }
            PotentialSpec::Quadratic { strength, center } => 0.5 * strength * crate::points::sq_dist(x, center),
        }
    }

    pub fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            PotentialSpec::Bifurcation => {
                out[0] = 2.0 * x[0] * (x[0] * x[0] - 2.25);
                out[1] = 20.0 * (x[1] + t);
                for k in 2..x.len() {
                    out[k] = 20.0 * x[k];
                }
            }
            PotentialSpec::Bistable { a, b } => {
                let da = crate::points::sq_dist(x, a);
                let db = crate::points::sq_dist(x, b);
                for k in 0..x.len() {
                    out[k] = 2.5 * ((x[k] - a[k]) * db + (x[k] - b[k]) * da);
                    if k >= 2 {
                        out[k] += 20.0 * x[k];
                    }
                }
            }
            PotentialSpec::Quadratic { strength, center } => {
                for k in 0..x.len() {
                    out[k] = strength * (x[k] - center[k]);
                }
            }
        }
    }
}

/// Live population at one recording time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub time: f64,
    pub points: Points,
    /// Particle id of each row.
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub records: Vec<Record>,
    /// `parents[id]` is the particle that `id` split off from.
    pub parents: Vec<Option<usize>>,
    /// Number of founding particles; they have ids `0..founders`.
    pub founders: usize,
}

impl SimulationResult {
    /// Founder of a particle's lineage.
    pub fn root(&self, mut id: usize) -> usize {
        while let Some(p) = self.parents[id] {
            id = p;
        }
        id
    }

    /// Positions at the last record of the founders still alive. Each
    /// founder keeps its id through divisions, so this follows one path per
    /// founding lineage.
    pub fn founder_endpoints(&self) -> Points {
        let last = self.records.last().expect("simulation has records");
        let rows: Vec<usize> = (0..last.ids.len()).filter(|&r| last.ids[r] < self.founders).collect();
        last.points.select(&rows)
    }
}

/// Settings of [`euler_maruyama`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub potential: PotentialSpec,
    pub tau: f64,
    pub dt: f64,
    pub growth: Option<GrowthPrior>,
    /// Start of the simulation; recording times must not precede it.
    pub t0: f64,
}

/// Integrates every particle from `x0` at `spec.t0` and records the live
/// population at each of the sorted `record_times`. Steps are shortened so
/// every recording time is hit exactly.
pub fn euler_maruyama(spec: &SimulationSpec, x0: &Points, record_times: &[f64], seed: u64) -> Result<SimulationResult> {
    let d = x0.dim();
    spec.potential.check_dim(d)?;
    if !(spec.dt > 0.0) || !(spec.tau >= 0.0) {
        return Err(Error::Config("dt must be positive and tau nonnegative".into()));
    }
    if let Some(g) = &spec.growth {
        g.validate(d)?;
        if g.max_abs_rate() * spec.dt >= 1.0 {
            return Err(Error::Config(format!(
                "dt * max |g| = {} is not a valid probability",
                g.max_abs_rate() * spec.dt
            )));
        }
    }
    let mut prev = spec.t0;
    for &t in record_times {
        if !(t >= prev) {
            return Err(Error::Config("recording times must be sorted and not before t0".into()));
        }
        prev = t;
    }

    let mut pos = x0.clone();
    let mut ids: Vec<usize> = (0..x0.len()).collect();
    let mut parents: Vec<Option<usize>> = vec![None; x0.len()];
    let mut records = Vec::with_capacity(record_times.len());
    let mut t = spec.t0;
    let mut step: u64 = 0;
    for &target in record_times {
        let n_steps = ((target - t) / spec.dt - 1e-9).ceil().max(0.0) as usize;
        let h = if n_steps > 0 { (target - t) / n_steps as f64 } else { 0.0 };
        for s in 0..n_steps {
            let now = t + s as f64 * h;
            let sd = (spec.tau * h).sqrt();
            {
                let ids = &ids;
                par::for_each_chunk_mut(pos.as_mut_slice(), d, |r, x| {
                    let mut grad = vec![0.0; d];
                    spec.potential.gradient(now, x, &mut grad);
                    let mut z = vec![0.0; d];
                    if sd > 0.0 {
                        noise::fill_normal(seed, Stream::Simulation, &[step, ids[r] as u64], &mut z);
                    }
                    for k in 0..d {
                        x[k] += -grad[k] * h + sd * z[k];
                    }
                });
            }
            if let Some(g) = &spec.growth {
                // Rates at the start of the step, decided per particle id.
                let events = par::map_range(ids.len(), |r| {
                    let rate = g.rate(now, pos.row(r));
                    let u: f64 = noise::rng(seed, Stream::Branching, &[step, ids[r] as u64]).random();
                    if rate > 0.0 && u < rate * h {
                        1i8
                    } else if rate < 0.0 && u < -rate * h {
                        -1
                    } else {
                        0
                    }
                });
                if events.iter().any(|e| *e != 0) {
                    let mut next = Points::zeros(0, d);
                    let mut next_ids = Vec::with_capacity(ids.len());
                    let mut children = Vec::new();
                    for (r, e) in events.iter().enumerate() {
                        if *e >= 0 {
                            next.push(pos.row(r));
                            next_ids.push(ids[r]);
                        }
                        if *e > 0 {
                            children.push(r);
                        }
                    }
                    for r in children {
                        let child = parents.len();
                        parents.push(Some(ids[r]));
                        next.push(pos.row(r));
                        next_ids.push(child);
                    }
                    pos = next;
                    ids = next_ids;
                }
            }
            if let Some(bad) = pos.first_non_finite() {
                return Err(Error::Diverged {
                    iteration: step as usize,
                    timepoint: records.len(),
                    particle: bad / d,
                });
            }
            step += 1;
        }
        t = target;
        records.push(Record {
            time: target,
            points: pos.clone(),
            ids: ids.clone(),
        });
    }
    Ok(SimulationResult {
        records,
        parents,
        founders: x0.len(),
    })
}

/// Samples `counts[i]` particles uniformly without replacement from the
/// population at record `i`, avoiding ids used at earlier times when the
/// population permits.
pub fn extract_snapshots(result: &SimulationResult, counts: &[usize], seed: u64) -> Result<SnapshotSeries> {
    if counts.len() != result.records.len() {
        return Err(Error::Config(format!(
            "{} counts for {} recording times",
            counts.len(),
            result.records.len()
        )));
    }
    let mut used = vec![false; result.parents.len()];
    let mut entries = Vec::with_capacity(counts.len());
    for (i, (rec, &n)) in result.records.iter().zip(counts).enumerate() {
        if n > rec.ids.len() {
            return Err(Error::Sampling(format!(
                "requested {n} particles at t = {} but only {} are alive",
                rec.time,
                rec.ids.len()
            )));
        }
        if n == 0 {
            return Err(Error::Sampling(format!("zero particles requested at t = {}", rec.time)));
        }
        let fresh: Vec<usize> = (0..rec.ids.len()).filter(|&r| !used[rec.ids[r]]).collect();
        let pool: Vec<usize> = if fresh.len() >= n {
            fresh
        } else {
            log::warn!("population at t = {} too small for disjoint sampling; reusing particles", rec.time);
            (0..rec.ids.len()).collect()
        };
        let mut rng = noise::rng(seed, Stream::Extraction, &[i as u64]);
        let mut rows: Vec<usize> = index::sample(&mut rng, pool.len(), n).into_iter().map(|k| pool[k]).collect();
        rows.sort_unstable();
        for &r in &rows {
            used[rec.ids[r]] = true;
        }
        entries.push((rec.time, WeightedPoints::uniform(rec.points.select(&rows))));
    }
    SnapshotSeries::new(entries)
}

/// One of the two synthetic benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: SimulationSpec,
    pub times: Vec<f64>,
    /// Standard deviation of the isotropic Gaussian start at `t = 0`.
    pub x0_std: f64,
    pub dim: usize,
    /// Classifier that names the lower branch, when the benchmark has one.
    pub classifier: Option<BranchClassifier>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect()
}

impl Benchmark {
    /// Bifurcating potential, `τ = 1/4`, 10 even times on `[0, 1.25]`.
    pub fn bifurcation() -> Self {
        Self {
            spec: SimulationSpec {
                potential: PotentialSpec::Bifurcation,
                tau: 0.25,
                dt: 1e-3,
                growth: None,
                t0: 0.0,
            },
            times: linspace(0.0, 1.25, 10),
            x0_std: 0.1,
            dim: BENCHMARK_DIM,
            classifier: Some(BranchClassifier::Halfspace {
                coordinate: 0,
                threshold: 0.0,
                below: true,
            }),
        }
    }

    /// Bistable potential, `τ = 1`, 10 even times on `[0, 0.5]`, branching
    /// with `g = 10 (tanh(2 x₀) + 1)/2` when `growth` is set.
    pub fn bistable(growth: bool) -> Self {
        let potential = PotentialSpec::bistable_benchmark();
        let (a, b) = match &potential {
            PotentialSpec::Bistable { a, b } => (a[..2].to_vec(), b[..2].to_vec()),
            _ => unreachable!(),
        };
        Self {
            spec: SimulationSpec {
                potential,
                tau: 1.0,
                dt: 1e-3,
                growth: growth.then(GrowthPrior::bistable_benchmark),
                t0: 0.0,
            },
            times: linspace(0.0, 0.5, 10),
            x0_std: 0.1,
            dim: BENCHMARK_DIM,
            classifier: Some(BranchClassifier::NearestCenter {
                target: b,
                other: a,
            }),
        }
    }

    fn initial(&self, n: usize, seed: u64, tag: u64) -> Points {
        let mut z = vec![0.0; n * self.dim];
        noise::fill_normal(seed, Stream::Simulation, &[u64::MAX, tag], &mut z);
        z.iter_mut().for_each(|v| *v *= self.x0_std);
        Points::new(self.dim, z).expect("dimension is positive")
    }

    pub fn simulate(&self, founders: usize, seed: u64, tag: u64) -> Result<SimulationResult> {
        let x0 = self.initial(founders, seed, tag);
        euler_maruyama(&self.spec, &x0, &self.times, noise::key(seed, Stream::Simulation, &[tag]))
    }

    /// The `(64, N, …, N, 64)` observation pattern.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let t = self.times.len();
        (0..t).map(|i| if i == 0 || i + 1 == t { 64 } else { n }).collect()
    }

    /// Observed snapshots with the given counts, and dense ground truth with
    /// `truth_per_time` particles per time from an independent simulation.
    pub fn generate(&self, counts: &[usize], truth_per_time: usize, seed: u64) -> Result<BenchmarkData> {
        let observed_sim = self.simulate(counts.iter().sum(), seed, 0)?;
        let observed = extract_snapshots(&observed_sim, counts, seed)?;
        let truth_sim = self.simulate(truth_per_time, seed, 1)?;
        let truth_counts = vec![truth_per_time; self.times.len()];
        let truth = truth_snapshots(&truth_sim, &truth_counts, seed)?;
        let truth_branch_fraction = self
            .classifier
            .as_ref()
            .map(|c| branch_fraction_of_points(&truth_sim.founder_endpoints(), c));
        Ok(BenchmarkData {
            observed,
            truth,
            truth_branch_fraction,
        })
    }
}

/// Uniform subsamples of the live population, without the disjointness
/// constraint.
fn truth_snapshots(sim: &SimulationResult, counts: &[usize], seed: u64) -> Result<SnapshotSeries> {
    let mut entries = Vec::new();
    for (i, (rec, &n)) in sim.records.iter().zip(counts).enumerate() {
        let rows: Vec<usize> = if rec.ids.len() <= n {
            (0..rec.ids.len()).collect()
        } else {
            let mut rng = noise::rng(seed, Stream::Extraction, &[u64::MAX, i as u64]);
            let mut r = index::sample(&mut rng, rec.ids.len(), n).into_vec();
            r.sort_unstable();
            r
        };
        entries.push((rec.time, WeightedPoints::uniform(rec.points.select(&rows))));
    }
    SnapshotSeries::new(entries)
}

#[derive(Debug, Clone)]
pub struct BenchmarkData {
    pub observed: SnapshotSeries,
    pub truth: SnapshotSeries,
    /// Fraction of founding lineages ending in the lower branch.
    pub truth_branch_fraction: Option<f64>,
}
