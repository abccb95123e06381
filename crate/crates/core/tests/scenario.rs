mod common;

use std::collections::BTreeMap;

use common::*;
use fdtkit::emulator::{train_lag_bank, BankOptions, EmulatorSpec};
use fdtkit::scenario::{run_scenario, PerturbationScenario, RegionRef};

fn scenario(regions: &[&str], amplitude: f64) -> PerturbationScenario {
    PerturbationScenario {
        regions: regions.iter().map(|r| RegionRef::Preset(r.to_string())).collect(),
        amplitudes: BTreeMap::from([("x".to_string(), amplitude)]),
        samples: 100,
        lags: None,
        rule: fdtkit::fdt::IntegrationRule::InterpQuadratic,
        seed: 42,
    }
}

fn setup() -> (fdtkit::emulator::LagModelBank, fdtkit::dataio::AnomalyDataset) {
    let raw = simulated(&system(2, 5), 3, 300, 1);
    let anoms = standardized(&raw, &[0, 1]);
    let opts = BankOptions {
        emulator: EmulatorSpec::Linear { ridge: 1e-2 },
        train_members: vec![0, 1],
        validation_members: vec![2],
        max_train_pairs: None,
        max_validation_pairs: None,
        parallel_lags: 1,
        seed: 42,
    };
    (train_lag_bank(&anoms, &[1, 2, 3, 6, 12], &opts).unwrap(), anoms)
}

#[test]
fn disjoint_regions_superpose_under_a_linear_bank() {
    let (bank, anoms) = setup();
    let nep = run_scenario(&scenario(&["NEP"], -1.5), &bank, &anoms).unwrap();
    let sep = run_scenario(&scenario(&["SEP"], -1.5), &bank, &anoms).unwrap();
    let both = run_scenario(&scenario(&["NEP", "SEP"], -1.5), &bank, &anoms).unwrap();
    let sum: Vec<f64> = nep.total.values.iter().zip(&sep.total.values).map(|(a, b)| a + b).collect();
    assert!(rel_err(&both.total.values, &sum) < 1e-9);
    assert!(!nep.total.is_zero());
    assert_eq!(both.seed, Some(42));
    assert_eq!(both.scenario.as_ref().unwrap().regions.len(), 2);
}

#[test]
fn identical_scenarios_give_identical_results() {
    let (bank, anoms) = setup();
    let s = scenario(&["SEA"], 2.0);
    let a = run_scenario(&s, &bank, &anoms).unwrap();
    let b = run_scenario(&s, &bank, &anoms).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_amplitude_is_all_zero() {
    let (bank, anoms) = setup();
    let r = run_scenario(&scenario(&["NEP"], 0.0), &bank, &anoms).unwrap();
    assert!(r.total.is_zero());
    assert!(r.contributions.iter().all(|c| c.is_zero()));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let (bank, anoms) = setup();
    let mut s = scenario(&["NOPE"], 1.0);
    assert!(run_scenario(&s, &bank, &anoms).is_err());
    s = scenario(&["NEP"], 1.0);
    s.lags = Some(vec![4]);
    assert!(run_scenario(&s, &bank, &anoms).is_err());
    s = scenario(&["NEP"], 1.0);
    s.amplitudes.insert("y".into(), 1.0);
    assert!(run_scenario(&s, &bank, &anoms).is_err());
    s = scenario(&["NEP"], 1.0);
    s.samples = 10_000;
    assert!(run_scenario(&s, &bank, &anoms).is_err());
}
