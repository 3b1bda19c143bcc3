//! The reduced objective `F = G + τH` and the first variation of `G`.
//!
//! `G` sums the data-fit terms `(Δt_i/λ) Fit_σ(μ_i | μ̂_i)`, the bridge
//! values `T_{τ_i}(μ_i, μ_{i+1}) / (t_{i+1} − t_i)` and, optionally, a
//! confining potential. Its first variation at timepoint `i` is
//!
//! ```text
//! V_i = δFit/δμ_i + φ_{i,i+1}/(t_{i+1} − t_i) + ψ_{i,i−1}/(t_i − t_{i−1})
//! ```
//!
//! where the bridge terms are dropped at the two ends. For particle clouds
//! with `m` points, `∇V_i` at a particle equals `m` times the gradient of `G`
//! with respect to that particle's position.

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeSolution;
use crate::entropy::kozachenko_leonenko;
use crate::error::{Error, Result};
use crate::par;
use crate::points::{sq_dist, Points, WeightedPoints};
use crate::types::{delta_t_weights, MarginalState, SnapshotSeries};

/// Parameters the objective needs at one iteration. `sigma` is the effective
/// fit bandwidth, already multiplied by any annealing or scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub lambda: f64,
    pub sigma: f64,
    pub tau: f64,
    pub confine_sigma: Option<f64>,
    pub knn_k: usize,
}

/// `log Σ_x exp(−‖x−y‖²/(2σ²))` for every data point `y`.
fn log_kernel_sums(cloud: &Points, data: &Points, sigma: f64) -> Vec<f64> {
    let s2 = 2.0 * sigma * sigma;
    par::map_range(data.len(), |b| {
        let y = data.row(b);
        let mut mx = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(cloud.len());
        for x in cloud.rows() {
            let t = -sq_dist(x, y) / s2;
            mx = mx.max(t);
            terms.push(t);
        }
        mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    })
}

/// `Fit_σ = Σ_y ŵ_y · (−log[(1/m) Σ_x exp(−‖x−y‖²/(2σ²))])`.
pub fn fit_value(cloud: &Points, snapshot: &WeightedPoints, sigma: f64) -> f64 {
    let log_m = (cloud.len() as f64).ln();
    log_kernel_sums(cloud, &snapshot.points, sigma)
        .iter()
        .zip(&snapshot.weights)
        .map(|(l, w)| w * (log_m - l))
        .sum()
}

/// Values and gradients of `δFit/δμ` at every particle, scaled by `Δt/λ`.
///
/// Value: `−(Δt/λ) Σ_y ŵ_y g_σ(x−y) / (g_σ∗μ)(y)`;
/// gradient: `(Δt/λ) Σ_y ŵ_y (x−y)/σ² · g_σ(x−y) / (g_σ∗μ)(y)`.
pub fn fit_first_variation(
    cloud: &Points,
    snapshot: &WeightedPoints,
    sigma: f64,
    delta_t: f64,
    lambda: f64,
) -> (Vec<f64>, Points) {
    let d = cloud.dim();
    let m = cloud.len() as f64;
    let s2 = sigma * sigma;
    let coef = delta_t / lambda;
    let logs = log_kernel_sums(cloud, &snapshot.points, sigma);
    let data = &snapshot.points;
    let results = par::map_range(cloud.len(), |a| {
        let x = cloud.row(a);
        let mut grad = vec![0.0; d];
        let mut value = 0.0;
        for (b, y) in data.rows().enumerate() {
            // ŵ_y · g(x−y)/(g∗μ)(y) with (g∗μ)(y) = (1/m) Σ_x' g(x'−y).
            let r = snapshot.weights[b] * m * (-sq_dist(x, y) / (2.0 * s2) - logs[b]).exp();
            value += r;
            for k in 0..d {
                grad[k] += r * (x[k] - y[k]) / s2;
            }
        }
        (-coef * value, grad.into_iter().map(|g| coef * g).collect::<Vec<_>>())
    });
    let mut values = Vec::with_capacity(results.len());
    let mut grads = Points::zeros(cloud.len(), d);
    for (a, (v, g)) in results.into_iter().enumerate() {
        values.push(v);
        grads.row_mut(a).copy_from_slice(&g);
    }
    (values, grads)
}

pub fn fit_gradient(
    cloud: &Points,
    snapshot: &WeightedPoints,
    sigma: f64,
    delta_t: f64,
    lambda: f64,
) -> Points {
    fit_first_variation(cloud, snapshot, sigma, delta_t, lambda).1
}

/// Per-particle values and gradients of one additive term of `V_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub values: Vec<f64>,
    pub gradients: Points,
}

impl Term {
    fn scaled(values: Vec<f64>, gradients: Points, s: f64) -> Self {
        let mut gradients = gradients;
        gradients.scale(s);
        Self {
            values: values.into_iter().map(|v| v * s).collect(),
            gradients,
        }
    }
}

/// Confining potential penalizing particles far from every observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Confinement {
    /// `−(1/(T m)) Σ_particles log Σ_y ν̂_y exp(−‖x−y‖²/(2σ²))`.
    pub value: f64,
    /// First variation with respect to each cloud, per particle.
    pub terms: Vec<Term>,
}

/// Confinement against the time mixture `ν̂ = (1/T) Σ_i μ̂_i` of the
/// observations, for the reconstructed mixture `(1/T) Σ_i μ_i`.
pub fn confine_value_and_gradient(
    clouds: &[Points],
    snapshots: &[WeightedPoints],
    confine_sigma: f64,
) -> Confinement {
    let t_data = snapshots.len() as f64;
    let t_clouds = clouds.len() as f64;
    let d = clouds[0].dim();
    let mut pooled = Points::zeros(0, d);
    let mut log_w = Vec::new();
    for s in snapshots {
        pooled.extend(&s.points);
        log_w.extend(s.weights.iter().map(|w| (w / t_data).ln()));
    }
    let s2 = confine_sigma * confine_sigma;
    let mut value = 0.0;
    let mut terms = Vec::with_capacity(clouds.len());
    for cloud in clouds {
        let m = cloud.len() as f64;
        let per = par::map_range(cloud.len(), |a| {
            let x = cloud.row(a);
            let t: Vec<f64> = pooled
                .rows()
                .zip(&log_w)
                .map(|(y, lw)| lw - sq_dist(x, y) / (2.0 * s2))
                .collect();
            let mx = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = t.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            let mut g = vec![0.0; d];
            for (y, tv) in pooled.rows().zip(&t) {
                let w = (tv - lse).exp();
                for k in 0..d {
                    g[k] += w * (x[k] - y[k]) / s2;
                }
            }
            (-lse, g)
        });
        let mut values = Vec::with_capacity(cloud.len());
        let mut grads = Points::zeros(cloud.len(), d);
        for (a, (v, g)) in per.into_iter().enumerate() {
            value += v / (t_clouds * m);
            values.push(v / t_clouds);
            grads.row_mut(a).copy_from_slice(&g);
        }
        grads.scale(1.0 / t_clouds);
        terms.push(Term {
            values,
            gradients: grads,
        });
    }
    Confinement { value, terms }
}

/// Decomposed first variation at one timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TimepointVariation {
    pub fit: Term,
    /// `φ_{i,i+1} / (t_{i+1} − t_i)`; absent at the last timepoint.
    pub forward: Option<Term>,
    /// `ψ_{i,i−1} / (t_i − t_{i−1})`; absent at the first timepoint.
    pub backward: Option<Term>,
    pub confine: Option<Term>,
}

impl TimepointVariation {
    fn parts(&self) -> impl Iterator<Item = &Term> {
        std::iter::once(&self.fit)
            .chain(self.forward.as_ref())
            .chain(self.backward.as_ref())
            .chain(self.confine.as_ref())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.fit.values.len()];
        for t in self.parts() {
            for (o, v) in out.iter_mut().zip(&t.values) {
                *o += v;
            }
        }
        out
    }

    /// `∇V_i` at every particle of cloud `i`.
    pub fn gradient(&self) -> Points {
        let mut out = self.fit.gradients.clone();
        for t in self.parts().skip(1) {
            for (o, g) in out.as_mut_slice().iter_mut().zip(t.gradients.as_slice()) {
                *o += g;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstVariation {
    pub timepoints: Vec<TimepointVariation>,
}

impl FirstVariation {
    pub fn gradients(&self) -> Vec<Points> {
        self.timepoints.iter().map(|t| t.gradient()).collect()
    }
}

fn check_bridges(state: &MarginalState, series: &SnapshotSeries, bridges: &[BridgeSolution]) -> Result<()> {
    let t = state.timepoints();
    if t != series.len() {
        return Err(Error::Internal(format!(
            "{t} clouds for {} snapshots",
            series.len()
        )));
    }
    if bridges.len() + 1 != t {
        return Err(Error::Internal(format!(
            "expected {} bridges for {t} timepoints, got {}",
            t - 1,
            bridges.len()
        )));
    }
    Ok(())
}

/// Assembles `V_i` and `∇V_i` at every particle from solved bridges between
/// consecutive clouds (in order).
pub fn first_variation(
    state: &MarginalState,
    series: &SnapshotSeries,
    bridges: &[BridgeSolution],
    params: &ObjectiveParams,
) -> Result<FirstVariation> {
    check_bridges(state, series, bridges)?;
    let times = series.times();
    let dts = delta_t_weights(&times);
    let t = state.timepoints();
    let confine = params.confine_sigma.map(|s| {
        let data: Vec<WeightedPoints> = series.iter().map(|s| s.measure.clone()).collect();
        confine_value_and_gradient(&state.clouds, &data, s)
    });
    let mut confine_terms = confine.map(|c| c.terms.into_iter());
    let mut timepoints = Vec::with_capacity(t);
    for i in 0..t {
        let cloud = &state.clouds[i];
        let (fv, fg) = fit_first_variation(
            cloud,
            &series.get(i).measure,
            params.sigma,
            dts[i],
            params.lambda,
        );
        let forward = (i + 1 < t).then(|| {
            let b = &bridges[i];
            let len = times[i + 1] - times[i];
            Term::scaled(
                b.extend_source_potential(cloud),
                b.source_potential_gradient(cloud),
                1.0 / len,
            )
        });
        let backward = (i > 0).then(|| {
            let b = &bridges[i - 1];
            let len = times[i] - times[i - 1];
            Term::scaled(
                b.extend_target_potential(cloud),
                b.target_potential_gradient(cloud),
                1.0 / len,
            )
        });
        timepoints.push(TimepointVariation {
            fit: Term {
                values: fv,
                gradients: fg,
            },
            forward,
            backward,
            confine: confine_terms.as_mut().and_then(|it| it.next()),
        });
    }
    Ok(FirstVariation { timepoints })
}

/// `Σ_i (Δt_i/λ) Fit_σ(μ_i | μ̂_i)`.
pub fn total_fit(state: &MarginalState, series: &SnapshotSeries, lambda: f64, sigma: f64) -> f64 {
    let dts = series.delta_t_weights();
    state
        .clouds
        .iter()
        .zip(series.iter())
        .zip(&dts)
        .map(|((c, s), dt)| dt / lambda * fit_value(c, &s.measure, sigma))
        .sum()
}

/// `Σ_i T_{τ_i}(μ_i, μ_{i+1}) / (t_{i+1} − t_i)` from solved bridges.
pub fn total_transport(series: &SnapshotSeries, bridges: &[BridgeSolution]) -> f64 {
    let times = series.times();
    bridges
        .iter()
        .enumerate()
        .map(|(i, b)| b.primal_value() / (times[i + 1] - times[i]))
        .sum()
}

/// `G` evaluated at the clouds, with bridges already solved between them.
pub fn reduced_g(
    state: &MarginalState,
    series: &SnapshotSeries,
    bridges: &[BridgeSolution],
    params: &ObjectiveParams,
) -> Result<f64> {
    check_bridges(state, series, bridges)?;
    let mut g = total_fit(state, series, params.lambda, params.sigma) + total_transport(series, bridges);
    if let Some(s) = params.confine_sigma {
        let data: Vec<WeightedPoints> = series.iter().map(|s| s.measure.clone()).collect();
        g += confine_value_and_gradient(&state.clouds, &data, s).value;
    }
    Ok(g)
}

/// One line of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub iteration: usize,
    pub fit: f64,
    pub transport: f64,
    /// `H(μ) = Σ_i ∫ log μ_i dμ_i` (minus the differential entropy), estimated
    /// by nearest neighbours; `None` when a cloud has too few particles.
    pub entropy: Option<f64>,
    pub confinement: Option<f64>,
    /// `fit + transport + confinement`.
    pub g: f64,
    /// `G + τ H`; `None` without an entropy estimate.
    pub total: Option<f64>,
    pub tau: f64,
    pub sigma: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub bridge_iterations: usize,
    pub max_marginal_violation: f64,
    pub bridges_converged: bool,
}

/// Reports every part of `F` for the current clouds. The entropy term is a
/// diagnostic estimate only.
pub fn objective_report(
    state: &MarginalState,
    series: &SnapshotSeries,
    bridges: &[BridgeSolution],
    params: &ObjectiveParams,
) -> Result<ObjectiveReport> {
    check_bridges(state, series, bridges)?;
    let fit = total_fit(state, series, params.lambda, params.sigma);
    let transport = total_transport(series, bridges);
    let confinement = params.confine_sigma.map(|s| {
        let data: Vec<WeightedPoints> = series.iter().map(|s| s.measure.clone()).collect();
        confine_value_and_gradient(&state.clouds, &data, s).value
    });
    let entropy = state
        .clouds
        .iter()
        .map(|c| kozachenko_leonenko(c, params.knn_k).map(|h| -h))
        .sum::<Option<f64>>();
    let g = fit + transport + confinement.unwrap_or(0.0);
    Ok(ObjectiveReport {
        iteration: state.iteration,
        fit,
        transport,
        entropy,
        confinement,
        g,
        total: entropy.map(|h| g + params.tau * h),
        tau: params.tau,
        sigma: params.sigma,
        eta: f64::NAN,
        epsilon: f64::NAN,
        bridge_iterations: bridges.iter().map(|b| b.iterations).sum(),
        max_marginal_violation: bridges
            .iter()
            .map(|b| b.marginal_violation)
            .fold(0.0, f64::max),
        bridges_converged: bridges.iter().all(|b| b.converged),
    })
}
