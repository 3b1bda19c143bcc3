use approx::assert_relative_eq;
use mfl_core::bridge::{sinkhorn_balanced, sinkhorn_unbalanced, CostSpec, SinkhornOptions};
use mfl_core::evaluate::energy_distance_sq;
use mfl_core::io::{parse_snapshots, write_snapshots};
use mfl_core::objective::fit_value;
use mfl_core::pathspace::brownian_bridge;
use mfl_core::{Points, Rho, SnapshotSeries, WeightedPoints};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(max_n: usize, d: usize) -> impl Strategy<Value = Points> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), 1..=max_n)
        .prop_map(|rows| Points::from_rows(&rows).unwrap())
}

fn weighted(max_n: usize, d: usize) -> impl Strategy<Value = WeightedPoints> {
    points(max_n, d).prop_flat_map(|p| {
        let n = p.len();
        prop::collection::vec(0.1f64..1.0, n)
            .prop_map(move |w| WeightedPoints::normalized(p.clone(), w).unwrap())
    })
}

fn opts() -> SinkhornOptions {
    SinkhornOptions {
        tol: 1e-10,
        max_iter: 100_000,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_distance_symmetric_and_nonnegative(a in weighted(12, 3), b in weighted(12, 3)) {
        let ab = energy_distance_sq(&a, &b);
        prop_assert_eq!(ab, energy_distance_sq(&b, &a));
        prop_assert!(ab >= -1e-12);
        prop_assert!(energy_distance_sq(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn energy_distance_translation_and_scaling(
        a in weighted(10, 2), b in weighted(10, 2), shift in prop::collection::vec(-5.0f64..5.0, 2), s in 0.1f64..4.0
    ) {
        let base = energy_distance_sq(&a, &b);
        let moved = |w: &WeightedPoints, f: &dyn Fn(&mut Points)| {
            let mut p = w.points.clone();
            f(&mut p);
            WeightedPoints::normalized(p, w.weights.clone()).unwrap()
        };
        let ta = moved(&a, &|p| p.translate(&shift));
        let tb = moved(&b, &|p| p.translate(&shift));
        prop_assert!((energy_distance_sq(&ta, &tb) - base).abs() < 1e-12);
        let sa = moved(&a, &|p| p.scale(s));
        let sb = moved(&b, &|p| p.scale(s));
        prop_assert!((energy_distance_sq(&sa, &sb) - s * base).abs() < 1e-10 * (1.0 + base));
    }

    #[test]
    fn sinkhorn_marginals_and_gauge(a in weighted(10, 2), b in weighted(10, 2), tau in 0.2f64..2.0) {
        let sol = sinkhorn_balanced(&a, &b, CostSpec::default(), tau, &opts(), None).unwrap();
        prop_assert!(sol.converged);
        let plan = sol.coupling();
        for (r, p) in plan.row_marginal().iter().zip(&a.weights) {
            prop_assert!((r - p).abs() < 1e-8);
        }
        for (c, q) in plan.col_marginal().iter().zip(&b.weights) {
            prop_assert!((c - q).abs() < 1e-8);
        }
        let d = sol.duals();
        let su: f64 = d.u.iter().zip(&a.weights).map(|(u, p)| u * p).sum();
        let sv: f64 = d.v.iter().zip(&b.weights).map(|(v, q)| v * q).sum();
        prop_assert!((su - sv).abs() < 1e-9);
    }

    #[test]
    fn infinite_rho_matches_balanced(a in weighted(8, 2), b in weighted(8, 2), tau in 0.2f64..2.0) {
        let bal = sinkhorn_balanced(&a, &b, CostSpec::default(), tau, &opts(), None).unwrap();
        let unb = sinkhorn_unbalanced(&a, &b, CostSpec::default(), tau, Rho::INFINITE, &opts(), None).unwrap();
        let (x, y) = (bal.duals(), unb.duals());
        for (p, q) in x.u.iter().chain(&x.v).zip(y.u.iter().chain(&y.v)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_ignores_particle_order(cloud in points(8, 2), data in weighted(6, 2), sigma in 0.3f64..2.0) {
        let mut rows: Vec<Vec<f64>> = cloud.rows().map(|r| r.to_vec()).collect();
        rows.reverse();
        let flipped = Points::from_rows(&rows).unwrap();
        let (a, b) = (fit_value(&cloud, &data, sigma), fit_value(&flipped, &data, sigma));
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn brownian_bridge_endpoints_exact(
        xa in prop::collection::vec(-2.0f64..2.0, 3), xb in prop::collection::vec(-2.0f64..2.0, 3), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = (0..=8).map(|k| 0.2 + 0.5 * k as f64 / 8.0).collect();
        let path = brownian_bridge(&xa, &xb, 0.2, 0.7, 0.5, &grid, &mut rng).unwrap();
        prop_assert_eq!(path.row(0), &xa[..]);
        prop_assert_eq!(path.row(path.len() - 1), &xb[..]);
    }
}

#[test]
fn snapshot_csv_round_trip() {
    let rows = |v: &[[f64; 2]]| Points::from_rows(v).unwrap();
    let series = SnapshotSeries::from_points(vec![
        (0.5, rows(&[[0.1, -1.0 / 3.0], [2.5e-17, 7.0]])),
        (2.0, rows(&[[1.0, 2.0]])),
    ])
    .unwrap();
    let mut buf = Vec::new();
    write_snapshots(&series, &mut buf).unwrap();
    let back = parse_snapshots(buf.as_slice()).unwrap();
    assert_eq!(back.original_times(), series.original_times());
    for (x, y) in back.iter().zip(series.iter()) {
        assert_eq!(x.measure.points, y.measure.points);
        for (p, q) in x.measure.weights.iter().zip(&y.measure.weights) {
            assert_relative_eq!(p, q, max_relative = 1e-15);
        }
    }
}
