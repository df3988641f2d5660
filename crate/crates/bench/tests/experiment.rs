use kcfit_bench::{run_experiment, ExperimentConfig, ExperimentKind, Method};

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(kind);
    config.n_values = vec![1, 4];
    config.seeds = vec![0, 1];
    config.admm.n_random_inits = 1;
    config
}

#[test]
fn row_count_and_stability_flags() {
    let config = small_config(ExperimentKind::SmallRandom);
    let out = run_experiment(&config).unwrap();
    assert_eq!(out.rows.len(), 2 * 2 * 4);
    for row in &out.rows {
        assert_eq!(row.finite(), row.spectral_radius < 1.0, "{row:?}");
        if row.method == Method::Kalman {
            assert!(row.kalman_residual.is_some());
        }
    }
    assert_eq!(out.summary.per_n.len(), 2);
}

#[test]
fn expert_is_worse_than_optimal() {
    let config = small_config(ExperimentKind::SmallRandom);
    let out = run_experiment(&config).unwrap();
    for cell in &out.cells {
        let cost = |m| cell.rows.iter().find(|r| r.method == m).unwrap().cost.to_f64();
        assert!(cost(Method::Expert) > cost(Method::Optimal));
        assert!(cost(Method::Pf) >= cost(Method::Optimal) - 1e-9);
        assert!(cost(Method::Kalman) >= cost(Method::Optimal) - 1e-9);
    }
}

#[test]
fn reruns_are_identical_and_master_seed_matters() {
    let config = small_config(ExperimentKind::Outliers);
    let a = run_experiment(&config).unwrap().csv_bytes().unwrap();
    let b = run_experiment(&config).unwrap().csv_bytes().unwrap();
    assert_eq!(a, b);
    let mut other = config.clone();
    other.master_seed = 1;
    assert_ne!(run_experiment(&other).unwrap().csv_bytes().unwrap(), a);
}

#[test]
fn aircraft_grid_runs() {
    let mut config = ExperimentConfig::new(ExperimentKind::Aircraft);
    config.n_values = vec![3];
    config.seeds = vec![0];
    config.admm.n_random_inits = 0;
    config.certify = true;
    let out = run_experiment(&config).unwrap();
    assert_eq!(out.rows.len(), 4);
    let optimal = out.rows.iter().find(|r| r.method == Method::Optimal).unwrap();
    assert!(optimal.finite());
}

/// With enough demonstrations the certified Kalman gain should land within
/// 25% of the optimal cost. It does not: on 20 seeds at N = 20 the mean is
/// about 7.5 against an optimal 2.6.
#[test]
#[ignore = "not attained; see README"]
fn kalman_close_to_optimal_at_largest_n() {
    let mut config = ExperimentConfig::new(ExperimentKind::SmallRandom);
    config.n_values = vec![20];
    config.seeds = (0..20).collect();
    config.certify = true;
    let out = run_experiment(&config).unwrap();
    let entry = &out.summary.per_n[0];
    let kalman = entry.mean_cost.kalman.unwrap();
    let optimal = entry.mean_cost.optimal.unwrap();
    assert!(kalman <= 1.25 * optimal, "kalman {kalman} vs optimal {optimal}");
}
