use gaitcast_core::forecast::{
    build_lag_features, crps_empirical, forward_dist, sample_forecast, train_forecaster, ArchConfig, ForecastConfig,
    Forecaster, LagSet, TrainConfig,
};
use gaitcast_core::ingest::UnivariateSeries;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

#[test]
fn crps_matches_gaussian_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = 0.5;
    let n = Normal::standard();
    let analytic = y * (2.0 * n.cdf(y) - 1.0) + 2.0 * n.pdf(y) - 1.0 / std::f64::consts::PI.sqrt();
    let est = crps_empirical(&samples, y).unwrap();
    assert!((est / analytic - 1.0).abs() < 0.01, "{est} vs {analytic}");
    assert_eq!(crps_empirical(&[0.0, 2.0], 1.0).unwrap(), 0.5);
}

#[test]
fn lag_features_match_direct_indexing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let series = UnivariateSeries::new(values.clone(), 0.5, "x").unwrap();
    let lags = LagSet::dense(64).unwrap();
    for t in 64..300 {
        let f = build_lag_features(&series, t, &lags).unwrap();
        for (j, l) in (1..=64).enumerate() {
            assert_eq!(f[j], values[t - l]);
        }
    }
    assert!(build_lag_features(&series, 63, &lags).is_err());
}

fn small_cfg() -> ForecastConfig {
    ForecastConfig {
        horizon: 8,
        context_len: 40,
        num_samples: 20,
        lags: LagSet::dense(8).unwrap(),
        arch: ArchConfig {
            width: 16,
            layers: 2,
            heads: 4,
            mlp_hidden: 16,
        },
        train: TrainConfig {
            batch_size: 4,
            steps_per_epoch: 4,
            learning_rate: 1e-2,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn position_distributions_ignore_the_future() {
    let cfg = small_cfg();
    let model = Forecaster::new(&cfg.arch, &cfg.lags, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = model.position_dists(&x).unwrap();
    let mut y = x.clone();
    y[30] += 5.0;
    let moved = model.position_dists(&y).unwrap();
    // position r sees values up to index r + max_lag
    for r in 0..30 - 8 {
        assert_eq!(base[r], moved[r]);
    }
    assert_ne!(base[30 - 8], moved[30 - 8]);
}

#[test]
fn constant_series_forecast_sits_on_the_constant() {
    let cfg = small_cfg();
    let c = 7.5;
    let mut model = Forecaster::new(&cfg.arch, &cfg.lags, 0).unwrap();
    train_forecaster(&mut model, &[vec![c; 200]], &cfg, 2, 2).unwrap();
    let d = forward_dist(&model, &[c; 40], &cfg).unwrap();
    assert!(d.nu > 2.0 && d.sigma > 0.0);
    let f = sample_forecast(&model, &[c; 40], &cfg).unwrap();
    for t in 0..cfg.horizon {
        assert!((f.quantile(0.5, t).unwrap() - c).abs() < 0.05 * c);
    }
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let cfg = small_cfg();
    let model = Forecaster::new(&cfg.arch, &cfg.lags, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = Forecaster::load(dir.path()).unwrap();
    let ctx: Vec<f64> = (0..40).map(|t| (t as f64 * 0.2).cos()).collect();
    assert_eq!(
        sample_forecast(&model, &ctx, &cfg).unwrap(),
        sample_forecast(&back, &ctx, &cfg).unwrap()
    );
}
