mod common;

use common::*;
use fdtkit::dataio::{ChannelRole, ChannelSpec, EnsembleDataset};
use fdtkit::emulator::{train_lag_bank, BankOptions, EmulatorSpec};
use fdtkit::eval::{evaluate_bank, persistence_baseline};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// AR(1) per node and channel with coefficient `a` and unit stationary variance.
fn ar1(members: usize, months: usize, a: f64) -> EnsembleDataset {
    let channels = vec![
        ChannelSpec::new("x", ChannelRole::Input, "1"),
        ChannelSpec::new("y", ChannelRole::Output, "1"),
    ];
    let width = 12 * 2;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scale = (1.0 - a * a).sqrt();
    let mut values = Vec::with_capacity(members * months * width);
    for _ in 0..members {
        let mut z: Vec<f64> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..months {
            for v in &mut z {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = a * *v + scale * e;
            }
            values.extend(z.iter().map(|&v| v as f32));
        }
    }
    EnsembleDataset::new(0, 1, members, months, channels, values).unwrap()
}

#[test]
fn persistence_of_white_noise_is_root_two() {
    let anoms = anomalies(&ar1(6, 6000, 0.0));
    let p = persistence_baseline(&anoms, 1, &[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(p.len(), 1);
    let (rmse, corr) = p[0];
    assert!((rmse - 2f64.sqrt()).abs() < 0.02, "rmse {rmse}");
    assert!(corr.abs() < 0.02);
}

#[test]
fn persistence_of_ar1_matches_closed_form() {
    let a: f64 = 0.7;
    let anoms = anomalies(&ar1(6, 6000, a));
    for lag in [1, 3] {
        let (rmse, _) = persistence_baseline(&anoms, lag, &[0, 1, 2, 3, 4, 5]).unwrap()[0];
        let expected = (2.0 * (1.0 - a.powi(lag as i32))).sqrt();
        assert!((rmse - expected).abs() < 0.03, "lag {lag}: {rmse} vs {expected}");
    }
    let (rmse0, corr0) = persistence_baseline(&anoms, 0, &[0]).unwrap()[0];
    assert_eq!(rmse0, 0.0);
    assert!((corr0 - 1.0).abs() < 1e-12);
}

#[test]
fn linear_bank_beats_persistence_on_synthetic_data() {
    let raw = simulated(&system(0, 6), 4, 3000, 2);
    let anoms = standardized(&raw, &[0, 1, 2]);
    let opts = BankOptions {
        emulator: EmulatorSpec::Linear { ridge: 1e-3 },
        train_members: vec![0, 1, 2],
        validation_members: vec![3],
        max_train_pairs: None,
        max_validation_pairs: None,
        parallel_lags: 1,
        seed: 42,
    };
    let bank = train_lag_bank(&anoms, &[1, 2, 3, 6], &opts).unwrap();
    let report = evaluate_bank(&bank, &anoms, &[3], Some(1500), 42).unwrap();
    assert_eq!(report.lags.len(), 4);
    for lag in [1, 2, 3, 6] {
        let m = report.get(lag, "y").unwrap();
        assert!(m.rmse < m.persistence_rmse, "lag {lag}: {} vs {}", m.rmse, m.persistence_rmse);
        assert_eq!(m.temporal_corr.len(), 12);
    }
    let again = evaluate_bank(&bank, &anoms, &[3], Some(1500), 42).unwrap();
    assert_eq!(report, again);
}

#[test]
fn mismatched_standardization_is_rejected() {
    let raw = simulated(&system(0, 6), 3, 200, 2);
    let anoms = standardized(&raw, &[0, 1]);
    let opts = BankOptions {
        emulator: EmulatorSpec::Linear { ridge: 1e-3 },
        train_members: vec![0, 1],
        validation_members: vec![2],
        max_train_pairs: None,
        max_validation_pairs: None,
        parallel_lags: 1,
        seed: 42,
    };
    let bank = train_lag_bank(&anoms, &[1], &opts).unwrap();
    assert!(evaluate_bank(&bank, &raw, &[2], None, 42).is_err());
}
