//! Kozachenko–Leonenko nearest-neighbour estimate of differential entropy.
//!
//! Only used to report the objective; the particle dynamics never need it.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::par;
use crate::points::{sq_dist, Points};

/// `log` of the volume of the unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// Distance from every point to its `k`-th nearest other point.
pub fn kth_neighbor_distances(points: &Points, k: usize) -> Vec<f64> {
    let n = points.len();
    par::map_range(n, |i| {
        let x = points.row(i);
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| sq_dist(x, points.row(j)))
            .collect();
        let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
        kth.sqrt()
    })
}

/// `Ĥ = ψ(n) − ψ(k) + log V_d + (d/n) Σ log r_{i,k}`.
///
/// Returns `None` when there are not more than `k` points.
pub fn kozachenko_leonenko(points: &Points, k: usize) -> Option<f64> {
    let n = points.len();
    if k == 0 || n <= k {
        return None;
    }
    let d = points.dim() as f64;
    let log_r: f64 = kth_neighbor_distances(points, k)
        .iter()
        .map(|r| r.max(f64::MIN_POSITIVE).ln())
        .sum();
    Some(
        digamma(n as f64) - digamma(k as f64)
            + log_unit_ball_volume(points.dim())
            + d * log_r / n as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{fill_normal, Stream};

    #[test]
    fn unit_ball_volumes() {
        assert!((log_unit_ball_volume(1) - 2f64.ln()).abs() < 1e-12);
        assert!((log_unit_ball_volume(2) - std::f64::consts::PI.ln()).abs() < 1e-12);
        let v3 = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((log_unit_ball_volume(3) - v3.ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_entropy_within_five_percent() {
        for d in [1usize, 2, 3] {
            let m = 2000;
            let mut data = vec![0.0; m * d];
            fill_normal(11, Stream::Misc, &[d as u64], &mut data);
            let pts = Points::new(d, data).unwrap();
            let est = kozachenko_leonenko(&pts, 4).unwrap();
            let exact = d as f64 / 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
            assert!(
                ((est - exact) / exact).abs() < 0.05,
                "d={d}: estimate {est}, exact {exact}"
            );
        }
    }

    #[test]
    fn too_few_points() {
        let p = Points::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert!(kozachenko_leonenko(&p, 4).is_none());
        assert!(kozachenko_leonenko(&p, 2).is_some());
    }

    #[test]
    fn kth_distance_line() {
        let p = Points::from_rows(&[[0.0], [1.0], [3.0], [6.0]]).unwrap();
        assert_eq!(kth_neighbor_distances(&p, 1), vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(kth_neighbor_distances(&p, 2), vec![3.0, 2.0, 3.0, 5.0]);
    }
}
