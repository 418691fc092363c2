use gaitcast_core::gpr::{evaluate, fit, kernel_eval, Hyperparams, KernelParams};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_predict(x: &Array2<f64>, y: &Array1<f64>, q: &Array2<f64>, p: &KernelParams) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows();
    let row = |a: &Array2<f64>, i: usize| a.row(i).to_vec();
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel_eval(&row(x, i), &row(x, j), p).unwrap() + if i == j { p.noise_variance } else { 0.0 }
    });
    let kinv = k.try_inverse().expect("invertible");
    let yv = DVector::from_iterator(n, y.iter().copied());
    let (mut mean, mut var) = (Vec::new(), Vec::new());
    for r in 0..q.nrows() {
        let ks = DVector::from_fn(n, |i, _| kernel_eval(&row(q, r), &row(x, i), p).unwrap());
        mean.push(ks.dot(&(&kinv * &yv)));
        var.push(p.signal_variance + p.noise_variance - ks.dot(&(&kinv * &ks)));
    }
    (mean, var)
}

#[test]
fn matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for problem in 0..20 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=6);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-3.0..3.0));
        let q = Array2::from_shape_fn((10, d), |_| rng.random_range(-3.0..3.0));
        let p = KernelParams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), 1e-2).unwrap();
        let model = fit(x.view(), y.view(), Hyperparams::Fixed(p)).unwrap();
        let pred = model.predict(q.view()).unwrap();
        let (mean, var) = dense_predict(&x, &y, &q, &p);
        for i in 0..10 {
            assert!((pred.mean[i] - mean[i]).abs() < 1e-8, "problem {problem} mean");
            assert!((pred.variance[i] - var[i]).abs() < 1e-8, "problem {problem} var");
        }
    }
}

#[test]
fn noiseless_interpolation_and_far_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Array2<f64> = Array2::from_shape_fn((30, 2), |_| rng.random_range(-3.0..3.0));
    let y = x.rows().into_iter().map(|r| r[0].sin() + 0.5 * r[1]).collect::<Array1<f64>>();
    let p = KernelParams::new(1.5, 1.0, 1e-10).unwrap();
    let model = fit(x.view(), y.view(), Hyperparams::Fixed(p)).unwrap();
    let at_train = model.predict(x.view()).unwrap();
    let m = evaluate(y.as_slice().unwrap(), &at_train.mean).unwrap();
    assert!(m.rmse < 1e-4, "{m:?}");

    let far = Array2::from_shape_fn((3, 2), |(i, _)| 1e3 * (i + 1) as f64);
    let pred = model.predict(far.view()).unwrap();
    let prior = model.params.signal_variance + model.params.noise_variance;
    for (mu, v) in pred.mean.iter().zip(&pred.variance) {
        assert!(mu.abs() < 1e-6);
        assert!((v / prior - 1.0).abs() < 0.01);
    }
    let near_var = at_train.variance.iter().copied().fold(0.0f64, f64::max);
    assert!(near_var <= pred.variance[0]);
}

#[test]
fn rmse_dominates_mae() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(1..30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = evaluate(&a, &b).unwrap();
        assert!(m.rmse >= m.mae - 1e-12);
    }
    let m = evaluate(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
    assert_eq!(m.mae, 3.5);
    assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn optimized_fit_round_trips_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Array2<f64> = Array2::from_shape_fn((25, 3), |_| rng.random_range(-1.0..1.0));
    let y = x.rows().into_iter().map(|r| r.sum()).collect::<Array1<f64>>();
    let model = fit(x.view(), y.view(), Hyperparams::Optimize { noise_variance: 1e-6 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpr.json");
    model.save_json(&path).unwrap();
    let back = gaitcast_core::gpr::GprModel::load_json(&path).unwrap();
    assert_eq!(back.params, model.params);
    let q = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    assert_eq!(back.predict(q.view()).unwrap(), model.predict(q.view()).unwrap());
}
