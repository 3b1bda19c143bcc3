//! Continuous trajectories from solved bridges: a Markov chain through the
//! interval couplings gives discrete skeletons `(x_1, …, x_T)`, and Brownian
//! bridges with diffusivity `τ` fill each gap.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bridge::{BridgeSolution, Coupling};
use crate::error::{Error, Result};
use crate::noise::{self, Stream};
use crate::par;
use crate::points::Points;

/// Composition of interval couplings together with the particle positions.
#[derive(Debug, Clone)]
pub struct PathLaw {
    pub couplings: Vec<Coupling>,
    /// Particle positions per timepoint.
    pub clouds: Vec<Points>,
    /// Internal (rescaled) times.
    pub times: Vec<f64>,
    /// Times in data units, for output.
    pub original_times: Vec<f64>,
    pub tau: f64,
    /// Set when bridges were tilted by a growth prior; the law is then only a
    /// heuristic.
    pub growth_heuristic: bool,
    cumulative: Vec<Vec<f64>>,
    first_cumulative: Vec<f64>,
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    w.iter()
        .map(|x| {
            s += x;
            s
        })
        .collect()
}

fn draw(cum: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cum.last().unwrap();
    let r = rng.random::<f64>() * total;
    cum.partition_point(|c| *c <= r).min(cum.len() - 1)
}

impl PathLaw {
    pub fn new(
        couplings: Vec<Coupling>,
        clouds: Vec<Points>,
        times: Vec<f64>,
        original_times: Vec<f64>,
        tau: f64,
        growth_heuristic: bool,
    ) -> Result<Self> {
        let t = clouds.len();
        if t < 2 || couplings.len() + 1 != t || times.len() != t || original_times.len() != t {
            return Err(Error::Internal(format!(
                "path law needs T clouds and times with T-1 couplings; got {t} clouds, {} couplings, {} times",
                couplings.len(),
                times.len()
            )));
        }
        for (i, c) in couplings.iter().enumerate() {
            if c.rows != clouds[i].len() || c.cols != clouds[i + 1].len() {
                return Err(Error::Internal(format!("coupling {i} does not match its clouds")));
            }
        }
        for i in 1..couplings.len() {
            let a = couplings[i - 1].col_marginal();
            let b = couplings[i].row_marginal();
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let gap: f64 = a.iter().zip(&b).map(|(x, y)| (x / sa - y / sb).abs()).sum();
            if gap > 1e-3 {
                log::warn!("couplings {} and {i} disagree on their shared marginal (L1 {gap:.3e})", i - 1);
            }
        }
        let cum = couplings
            .iter()
            .flat_map(|c| (0..c.rows).map(move |r| cumulative(c.row(r))))
            .collect();
        let first_cumulative = cumulative(&couplings[0].row_marginal());
        if !(first_cumulative.last().copied().unwrap_or(0.0) > 0.0) {
            return Err(Error::Sampling("first coupling has no mass".into()));
        }
        Ok(Self {
            couplings,
            clouds,
            times,
            original_times,
            tau,
            growth_heuristic,
            cumulative: cum,
            first_cumulative,
        })
    }

    /// Law built from the bridges between consecutive final clouds.
    pub fn from_bridges(bridges: &[BridgeSolution], times: Vec<f64>, original_times: Vec<f64>, tau: f64, growth_heuristic: bool) -> Result<Self> {
        let first = bridges
            .first()
            .ok_or_else(|| Error::Internal("no bridges to build a path law from".into()))?;
        let mut clouds = vec![first.source.points.clone()];
        clouds.extend(bridges.iter().map(|b| b.target.points.clone()));
        Self::new(
            bridges.iter().map(|b| b.coupling()).collect(),
            clouds,
            times,
            original_times,
            tau,
            growth_heuristic,
        )
    }

    pub fn timepoints(&self) -> usize {
        self.clouds.len()
    }

    fn row_cumulative(&self, interval: usize, row: usize) -> &[f64] {
        let offset: usize = self.couplings[..interval].iter().map(|c| c.rows).sum();
        &self.cumulative[offset + row]
    }

    fn original_time(&self, i: usize, t: f64) -> f64 {
        if i + 1 == self.times.len() {
            return self.original_times[i];
        }
        let f = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.original_times[i] + f * (self.original_times[i + 1] - self.original_times[i])
    }
}

/// Samples one skeleton with the given generator.
fn sample_skeleton(law: &PathLaw, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = vec![draw(&law.first_cumulative, rng)];
    for i in 0..law.couplings.len() {
        let cur = *idx.last().unwrap();
        let cum = law.row_cumulative(i, cur);
        let next = if cum.last().copied().unwrap_or(0.0) > 0.0 {
            draw(cum, rng)
        } else {
            // Restart from the coupling's row marginal, then step from there.
            log::info!("zero-mass row {cur} in coupling {i}; restarting from the row marginal");
            let restart = draw(&cumulative(&law.couplings[i].row_marginal()), rng);
            draw(law.row_cumulative(i, restart), rng)
        };
        idx.push(next);
    }
    idx
}

/// Discrete skeletons as particle indices per timepoint. Path `p` uses its
/// own stream keyed by `(seed, p)`.
pub fn chain_sample(law: &PathLaw, count: usize, seed: u64) -> Vec<Vec<usize>> {
    par::map_range(count, |p| {
        let mut rng = noise::rng(seed, Stream::Skeleton, &[p as u64]);
        sample_skeleton(law, &mut rng)
    })
}

/// Brownian bridge with diffusivity `tau` from `(t_a, x_a)` to `(t_b, x_b)`
/// at the sorted grid times, sampled sequentially. Grid points equal to
/// `t_a` or `t_b` return the endpoints exactly.
pub fn brownian_bridge(
    x_a: &[f64],
    x_b: &[f64],
    t_a: f64,
    t_b: f64,
    tau: f64,
    grid: &[f64],
    rng: &mut impl Rng,
) -> Result<Points> {
    if !(t_a < t_b) {
        return Err(Error::Config(format!("bridge needs t_a < t_b, got {t_a} and {t_b}")));
    }
    let d = x_a.len();
    let mut out = Points::zeros(0, d);
    let mut s = t_a;
    let mut x = x_a.to_vec();
    for &t in grid {
        if !(t >= t_a && t <= t_b) || t < s {
            return Err(Error::Config(format!("grid time {t} outside [{t_a}, {t_b}] or unsorted")));
        }
        if t == t_a {
            out.push(x_a);
            continue;
        }
        if t == t_b {
            out.push(x_b);
            s = t;
            x = x_b.to_vec();
            continue;
        }
        let f = (t - s) / (t_b - s);
        let sd = (tau * (t - s) * (t_b - t) / (t_b - s)).max(0.0).sqrt();
        for k in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            x[k] += f * (x_b[k] - x[k]) + sd * z;
        }
        s = t;
        out.push(&x);
    }
    Ok(out)
}

/// A sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub id: usize,
    /// Particle index at each timepoint.
    pub skeleton: Vec<usize>,
    /// Grid times in data units.
    pub times: Vec<f64>,
    pub positions: Points,
    pub growth_heuristic: bool,
}

impl PathSample {
    pub fn final_position(&self) -> &[f64] {
        self.positions.row(self.positions.len() - 1)
    }
}

/// Samples `count` skeletons and joins them by Brownian bridges on a grid
/// of `grid_resolution` points per interval (endpoints included, shared
/// endpoints listed once).
pub fn reconstruct_paths(law: &PathLaw, count: usize, grid_resolution: usize, seed: u64) -> Result<Vec<PathSample>> {
    if grid_resolution < 2 {
        return Err(Error::Config("grid_resolution must be at least 2".into()));
    }
    let skeletons = chain_sample(law, count, seed);
    let t = law.timepoints();
    let d = law.clouds[0].dim();
    par::try_map_range(count, |p| {
        let sk = &skeletons[p];
        let mut rng = noise::rng(seed, Stream::Bridge, &[p as u64]);
        let mut positions = Points::zeros(0, d);
        let mut times = Vec::new();
        positions.push(law.clouds[0].row(sk[0]));
        times.push(law.original_times[0]);
        for i in 0..t - 1 {
            let (a, b) = (law.times[i], law.times[i + 1]);
            let grid: Vec<f64> = (1..grid_resolution)
                .map(|g| {
                    if g + 1 == grid_resolution {
                        b
                    } else {
                        a + (b - a) * g as f64 / (grid_resolution - 1) as f64
                    }
                })
                .collect();
            let seg = brownian_bridge(law.clouds[i].row(sk[i]), law.clouds[i + 1].row(sk[i + 1]), a, b, law.tau, &grid, &mut rng)?;
            positions.extend(&seg);
            times.extend(grid.iter().map(|&g| law.original_time(i, g)));
        }
        Ok(PathSample {
            id: p,
            skeleton: sk.clone(),
            times,
            positions,
            growth_heuristic: law.growth_heuristic,
        })
    })
}
