use std::f64::consts::PI;

use memmo::approx::{BgmrConfig, BgmrModel, Dataset, GprHyper, GprModel};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Inputs on a jittered grid so no two points are closer than half a cell.
fn spread_inputs(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |i, j| if j == 0 { i as f64 + rng.random_range(-0.25..0.25) } else { rng.random_range(-1.0..1.0) })
}

fn hyper(noise: f64) -> GprHyper {
    GprHyper {
        length_scale: 1.0,
        signal_variance: 1.0,
        noise_variance: noise,
    }
}

fn sine_data(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let eps = Normal::new(0.0, noise).unwrap();
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..2.0 * PI));
    let y = DMatrix::from_fn(n, 1, |i, _| x[(i, 0)].sin() + eps.sample(rng));
    Dataset::plain(x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gpr_interpolates_at_tiny_noise(seed in any::<u64>(), n in 2usize..20, dim in 1usize..4, dy in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spread_inputs(n, dim, &mut rng);
        let y = DMatrix::from_fn(n, dy, |_, _| rng.random_range(-2.0..2.0));
        let data = Dataset::plain(x.clone(), y.clone()).unwrap();
        let m = GprModel::fit(&data, hyper(1e-8)).unwrap();
        for i in 0..n {
            let q: Vec<f64> = x.row(i).iter().copied().collect();
            let p = m.predict(&q).unwrap();
            for j in 0..dy {
                prop_assert!((p.y[j] - y[(i, j)]).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn gpr_is_linear_in_outputs(seed in any::<u64>(), c in -5.0..5.0f64, q in -2.0..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = spread_inputs(12, 1, &mut rng);
        let y = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-2.0..2.0));
        let plain = GprModel::fit(&Dataset::plain(x.clone(), y.clone()).unwrap(), hyper(1e-4)).unwrap();
        let scaled = GprModel::fit(&Dataset::plain(x, y * c).unwrap(), hyper(1e-4)).unwrap();
        let (a, b) = (plain.predict(&[q]).unwrap().y, scaled.predict(&[q]).unwrap().y);
        for j in 0..2 {
            prop_assert!((b[j] - c * a[j]).abs() <= 1e-10 * (1.0 + a[j].abs() * c.abs()));
        }
    }

    #[test]
    fn bgmr_responsibilities_and_best_mode_agree(seed in 0u64..8, q in -1.0..8.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = sine_data(120, 0.05, &mut rng);
        let m = BgmrModel::fit(&data, &BgmrConfig::default()).unwrap();
        let r = m.responsibilities(&[q]).unwrap();
        prop_assert!(r.iter().all(|v| *v >= 0.0));
        prop_assert!((r.sum() - 1.0).abs() <= 1e-10);
        let best = m.predict_best(&[q]).unwrap();
        let modes = m.predict_modes(&[q], m.components()).unwrap();
        prop_assert_eq!(&best, &modes[0]);
        prop_assert!(modes.windows(2).all(|w| w[0].mode_probability >= w[1].mode_probability));
        prop_assert!(modes.iter().map(|p| p.mode_probability).sum::<f64>() <= 1.0 + 1e-10);
    }
}

#[test]
fn unimodal_sine_is_recovered_by_gpr_and_bgmr() {
    let sigma = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = sine_data(200, sigma, &mut rng);
    let gpr = GprModel::fit(
        &data,
        GprHyper {
            length_scale: 1.0,
            signal_variance: 1.0,
            noise_variance: sigma * sigma,
        },
    )
    .unwrap();
    let bgmr = BgmrModel::fit(&data, &BgmrConfig::default()).unwrap();
    let queries: Vec<f64> = (0..100).map(|i| 0.1 + 6.0 * i as f64 / 99.0).collect();
    let rmse = |f: &dyn Fn(f64) -> f64| (queries.iter().map(|q| (f(*q) - q.sin()).powi(2)).sum::<f64>() / queries.len() as f64).sqrt();
    let g = rmse(&|q| gpr.predict(&[q]).unwrap().y[0]);
    let b = rmse(&|q| bgmr.predict_best(&[q]).unwrap().y[0]);
    assert!(g <= 3.0 * sigma, "gpr rmse {g}");
    assert!(b <= 3.0 * sigma, "bgmr rmse {b} with {} components", bgmr.components());
}
