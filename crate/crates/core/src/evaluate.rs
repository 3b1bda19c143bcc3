//! Reconstruction metrics: energy distance between weighted clouds, its RMS
//! over timepoints, and branch fractions of sampled paths.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::pathspace::PathSample;
use crate::points::{dist, Points, WeightedPoints};
use crate::types::{MarginalState, SnapshotSeries};

/// `Σ_a Σ_b w_a w_b ‖a − b‖`, rows summed first.
fn mean_distance(a: &WeightedPoints, b: &WeightedPoints) -> f64 {
    par::map_range(a.len(), |i| {
        let x = a.points.row(i);
        a.weights[i]
            * b.points
                .rows()
                .zip(&b.weights)
                .map(|(y, w)| w * dist(x, y))
                .sum::<f64>()
    })
    .iter()
    .sum()
}

/// `D² = 2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖` under the empirical measures, with
/// diagonal terms included. Symmetric in its arguments bit for bit.
pub fn energy_distance_sq(alpha: &WeightedPoints, beta: &WeightedPoints) -> f64 {
    let cross = (mean_distance(alpha, beta) + mean_distance(beta, alpha)) / 2.0;
    2.0 * cross - (mean_distance(alpha, alpha) + mean_distance(beta, beta))
}

/// `D²` at each timepoint followed by `(T⁻¹ Σ D²)^{1/2}`.
fn rms(per_time: &[f64]) -> f64 {
    (per_time.iter().sum::<f64>() / per_time.len() as f64).sqrt()
}

/// Energy distances of the reconstructed clouds to snapshots of the truth,
/// one per timepoint.
pub fn per_time_distances(reconstructed: &MarginalState, truth: &SnapshotSeries) -> Result<Vec<f64>> {
    if reconstructed.timepoints() != truth.len() {
        return Err(Error::Evaluation(format!(
            "{} reconstructed timepoints but {} in the truth",
            reconstructed.timepoints(),
            truth.len()
        )));
    }
    if reconstructed.dim() != truth.dim() {
        return Err(Error::Evaluation("dimension mismatch between reconstruction and truth".into()));
    }
    Ok(reconstructed
        .clouds
        .iter()
        .zip(truth.iter())
        .map(|(c, s)| energy_distance_sq(&WeightedPoints::uniform(c.clone()), &s.measure))
        .collect())
}

pub fn rms_over_marginals(reconstructed: &MarginalState, truth: &SnapshotSeries) -> Result<f64> {
    Ok(rms(&per_time_distances(reconstructed, truth)?))
}

/// Per-time `D²` between two series observed at the same times.
pub fn series_distances(a: &SnapshotSeries, b: &SnapshotSeries) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Evaluation(format!("{} vs {} timepoints", a.len(), b.len())));
    }
    for (x, y) in a.original_times().iter().zip(b.original_times()) {
        if (x - y).abs() > 1e-9 * x.abs().max(1.0) {
            return Err(Error::Evaluation(format!("time {x} does not match {y}")));
        }
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(s, t)| energy_distance_sq(&s.measure, &t.measure))
        .collect())
}

pub fn rms_series(a: &SnapshotSeries, b: &SnapshotSeries) -> Result<f64> {
    Ok(rms(&series_distances(a, b)?))
}

/// Which paths count as ending in the branch of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchClassifier {
    /// `x[coordinate] < threshold` when `below`, else `x[coordinate] > threshold`.
    Halfspace {
        coordinate: usize,
        threshold: f64,
        below: bool,
    },
    /// Nearer to `target` than to `other`, comparing the leading
    /// `target.len()` coordinates.
    NearestCenter { target: Vec<f64>, other: Vec<f64> },
}

impl BranchClassifier {
    pub fn matches(&self, x: &[f64]) -> bool {
        match self {
            BranchClassifier::Halfspace {
                coordinate,
                threshold,
                below,
            } => {
                if *below {
                    x[*coordinate] < *threshold
                } else {
                    x[*coordinate] > *threshold
                }
            }
            BranchClassifier::NearestCenter { target, other } => {
                let k = target.len();
                crate::points::sq_dist(&x[..k], target) < crate::points::sq_dist(&x[..k], other)
            }
        }
    }
}

pub fn branch_fraction_of_points(points: &Points, classifier: &BranchClassifier) -> f64 {
    points.rows().filter(|x| classifier.matches(x)).count() as f64 / points.len() as f64
}

/// Fraction of paths whose final position satisfies the classifier.
pub fn branch_fraction(paths: &[PathSample], classifier: &BranchClassifier) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Evaluation("no paths to classify".into()));
    }
    Ok(paths.iter().filter(|p| classifier.matches(p.final_position())).count() as f64 / paths.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeScore {
    pub time: f64,
    pub energy_distance_sq: f64,
}

/// Scores of one method against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub per_time: Vec<TimeScore>,
    pub rms: f64,
}

impl MethodScore {
    pub fn new(method: &str, times: &[f64], d2: &[f64]) -> Self {
        Self {
            method: method.to_string(),
            per_time: times
                .iter()
                .zip(d2)
                .map(|(&time, &energy_distance_sq)| TimeScore {
                    time,
                    energy_distance_sq,
                })
                .collect(),
            rms: rms(d2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub methods: Vec<MethodScore>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub branch_fraction: Option<f64>,
}

impl EvalReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Long format: `method,time,energy_distance_sq`, with `time = rms` rows
    /// carrying the aggregate.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "time", "energy_distance_sq"])?;
        for m in &self.methods {
            for s in &m.per_time {
                out.write_record([m.method.clone(), s.time.to_string(), s.energy_distance_sq.to_string()])?;
            }
            out.write_record([m.method.clone(), "rms".into(), m.rms.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}
