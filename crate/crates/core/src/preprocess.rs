//! Scaling factors and PCA projection of snapshot data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{Points, WeightedPoints};
use crate::types::SnapshotSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    /// Mean over consecutive pairs of `E‖X_{t_{i+1}} − X_{t_i}‖²/2`.
    pub sigma_scale_sq: f64,
    /// Mean over timepoints of `E‖X − X′‖²/2` within a timepoint.
    pub eta_scale_sq: f64,
}

/// `E_{a⊗b} ‖X − Y‖²/2` via first and second moments.
fn half_mean_sq_dist(a: &WeightedPoints, b: &WeightedPoints) -> f64 {
    let d = a.dim();
    let moments = |m: &WeightedPoints| {
        let mut mean = vec![0.0; d];
        let mut second = 0.0;
        for (x, w) in m.points.rows().zip(&m.weights) {
            for k in 0..d {
                mean[k] += w * x[k];
            }
            second += w * x.iter().map(|v| v * v).sum::<f64>();
        }
        (mean, second)
    };
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    let cross: f64 = ma.iter().zip(&mb).map(|(x, y)| x * y).sum();
    ((sa + sb - 2.0 * cross) / 2.0).max(0.0)
}

/// Scaling factors for transport costs and fit distances. A zero
/// within-time factor falls back to the between-time one.
pub fn compute_scaling(series: &SnapshotSeries) -> Result<ScalingFactors> {
    let t = series.len();
    if t < 2 {
        return Err(Error::Config("scaling needs at least 2 timepoints".into()));
    }
    let snaps = series.snapshots();
    let sigma_scale_sq = snaps
        .windows(2)
        .map(|w| half_mean_sq_dist(&w[0].measure, &w[1].measure))
        .sum::<f64>()
        / (t - 1) as f64;
    if !(sigma_scale_sq > 0.0) {
        return Err(Error::Input(
            "all consecutive snapshots coincide at a single point; cannot auto-scale".into(),
        ));
    }
    let mut eta_scale_sq = snaps
        .iter()
        .map(|s| half_mean_sq_dist(&s.measure, &s.measure))
        .sum::<f64>()
        / t as f64;
    if !(eta_scale_sq > 0.0) {
        log::warn!("within-time spread is zero; using the between-time scale for the fit term");
        eta_scale_sq = sigma_scale_sq;
    }
    Ok(ScalingFactors {
        sigma_scale_sq,
        eta_scale_sq,
    })
}

/// Centering and a `k`-dimensional orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`, by decreasing singular value.
    pub basis: Points,
    pub singular_values: Vec<f64>,
}

impl Pca {
    pub fn project(&self, points: &Points) -> Points {
        let k = self.basis.len();
        let mut out = Points::zeros(points.len(), k);
        for (i, x) in points.rows().enumerate() {
            let o = out.row_mut(i);
            for (c, b) in self.basis.rows().enumerate() {
                o[c] = x.iter().zip(b).zip(&self.mean).map(|((xv, bv), m)| (xv - m) * bv).sum();
            }
        }
        out
    }

    /// Maps projected coordinates back to the original space.
    pub fn reconstruct(&self, projected: &Points) -> Points {
        let d = self.mean.len();
        let mut out = Points::zeros(projected.len(), d);
        for (i, z) in projected.rows().enumerate() {
            let o = out.row_mut(i);
            o.copy_from_slice(&self.mean);
            for (zc, b) in z.iter().zip(self.basis.rows()) {
                for k in 0..d {
                    o[k] += zc * b[k];
                }
            }
        }
        out
    }

    pub fn project_series(&self, series: &SnapshotSeries) -> Result<SnapshotSeries> {
        SnapshotSeries::new(
            series
                .iter()
                .map(|s| {
                    (
                        s.original_time,
                        WeightedPoints {
                            points: self.project(s.points()),
                            weights: s.weights().to_vec(),
                        },
                    )
                })
                .collect(),
        )
    }
}

/// Subtracts the mean and finds the top `k` right singular directions.
pub fn center_and_pca(points: &Points, k: usize) -> Result<Pca> {
    let (n, d) = (points.len(), points.dim());
    if k == 0 || k > d {
        return Err(Error::Config(format!("PCA dimension must be in 1..={d}, got {k}")));
    }
    if n <= k {
        return Err(Error::Config(format!("PCA to {k} dimensions needs more than {k} points, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for x in points.rows() {
        for c in 0..d {
            mean[c] += x[c] / n as f64;
        }
    }
    let mut centered = points.clone();
    let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
    centered.translate(&neg);
    let svd = DMatrix::from_row_slice(n, d, centered.as_slice()).svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Internal("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > top * 1e-12 * (n.max(d) as f64))
        .count();
    if rank < k {
        return Err(Error::Input(format!("data has rank {rank}; cannot project to {k} dimensions")));
    }
    let mut basis = Points::zeros(k, d);
    for (r, &i) in order.iter().take(k).enumerate() {
        for c in 0..d {
            basis.row_mut(r)[c] = v_t[(i, c)];
        }
    }
    Ok(Pca {
        mean,
        basis,
        singular_values: order.iter().map(|&i| svd.singular_values[i]).collect(),
    })
}

/// PCA of all snapshot points pooled.
pub fn series_pca(series: &SnapshotSeries, k: usize) -> Result<Pca> {
    let mut pooled = Points::zeros(0, series.dim());
    for s in series.iter() {
        pooled.extend(s.points());
    }
    center_and_pca(&pooled, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{fill_normal, Stream};
    use crate::points::dist;

    fn series(rows: Vec<Vec<&[f64]>>) -> SnapshotSeries {
        SnapshotSeries::from_points(
            rows.into_iter()
                .enumerate()
                .map(|(i, r)| (i as f64, Points::from_rows(&r).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dirac_pair_scale() {
        let s = series(vec![vec![&[0.0]], vec![&[1.0]]]);
        let f = compute_scaling(&s).unwrap();
        assert_eq!(f.sigma_scale_sq, 0.5);
        assert_eq!(f.eta_scale_sq, 0.5);
    }

    #[test]
    fn degenerate_scale() {
        let s = series(vec![vec![&[2.0, 1.0]], vec![&[2.0, 1.0]]]);
        assert!(matches!(compute_scaling(&s), Err(Error::Input(_))));
    }

    #[test]
    fn matches_double_loop() {
        let s = series(vec![
            vec![&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]],
            vec![&[1.0, 1.0], &[3.0, 0.0], &[-1.0, 2.0]],
            vec![&[0.0, 0.0], &[4.0, 4.0], &[1.0, -2.0]],
        ]);
        let e = |a: &Points, b: &Points| {
            let mut t = 0.0;
            for x in a.rows() {
                for y in b.rows() {
                    t += dist(x, y).powi(2) / 2.0;
                }
            }
            t / (a.len() * b.len()) as f64
        };
        let p: Vec<&Points> = s.iter().map(|x| x.points()).collect();
        let sigma = (e(p[0], p[1]) + e(p[1], p[2])) / 2.0;
        let eta = (e(p[0], p[0]) + e(p[1], p[1]) + e(p[2], p[2])) / 3.0;
        let f = compute_scaling(&s).unwrap();
        assert!((f.sigma_scale_sq - sigma).abs() < 1e-12);
        assert!((f.eta_scale_sq - eta).abs() < 1e-12);
    }

    fn random(n: usize, d: usize, key: u64) -> Points {
        let mut v = vec![0.0; n * d];
        fill_normal(4, Stream::Misc, &[key], &mut v);
        Points::new(d, v).unwrap()
    }

    fn pairwise(p: &Points) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..p.len() {
            for j in 0..i {
                out.push(dist(p.row(i), p.row(j)));
            }
        }
        out
    }

    #[test]
    fn full_rank_preserves_distances() {
        let p = random(20, 4, 1);
        let pca = center_and_pca(&p, 4).unwrap();
        for (a, b) in pairwise(&p).iter().zip(pairwise(&pca.project(&p))) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn subspace_data_is_lossless() {
        // 2-dimensional data embedded in 5 dimensions.
        let z = random(15, 2, 2);
        let mut p = Points::zeros(15, 5);
        for i in 0..15 {
            let (a, b) = (z.row(i)[0], z.row(i)[1]);
            p.row_mut(i).copy_from_slice(&[a + b, a - b, 2.0 * a, 0.0, b + 3.0]);
        }
        let pca = center_and_pca(&p, 2).unwrap();
        for (a, b) in pairwise(&p).iter().zip(pairwise(&pca.project(&p))) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(center_and_pca(&p, 3), Err(Error::Input(_))));
    }

    #[test]
    fn reconstruction_error_is_trailing_spectrum() {
        let p = random(50, 10, 3);
        let k = 4;
        let pca = center_and_pca(&p, k).unwrap();
        let back = pca.reconstruct(&pca.project(&p));
        let err: f64 = p.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        // Independent route to the spectrum: eigenvalues of the centered Gram matrix.
        let mut c = p.clone();
        c.translate(&pca.mean.iter().map(|m| -m).collect::<Vec<_>>());
        let x = DMatrix::from_row_slice(50, 10, c.as_slice());
        let mut eig: Vec<f64> = (x.transpose() * &x).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let trailing: f64 = eig[k..].iter().sum();
        assert!((err - trailing).abs() < 1e-9 * trailing.max(1.0), "{err} vs {trailing}");
    }
}
