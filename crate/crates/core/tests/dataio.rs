mod common;

use common::*;
use fdtkit::dataio::{compute_climatology, deseasonalize, AnomalyDataset};
use fdtkit::synth::simulate_from;

#[test]
fn ensemble_mean_anomaly_vanishes_per_calendar_month() {
    let sys = system(1, 3);
    let data = simulate_from(&sys, 5, 60, 50, 7, 4).unwrap();
    let anoms = deseasonalize(&data, &compute_climatology(&data)).unwrap();
    let d = anoms.data();
    let (nodes, c) = (d.nodes(), d.n_channels());
    let mut std = vec![0.0f64; c];
    for (i, &v) in d.values().iter().enumerate() {
        std[i % c] += (v as f64).powi(2);
    }
    let count = (d.values().len() / c) as f64;
    let std: Vec<f64> = std.iter().map(|s| (s / count).sqrt()).collect();
    let mut sums = vec![0.0f64; 12 * nodes * c];
    let mut counts = vec![0usize; 12];
    for m in 0..d.members() {
        for t in 0..d.months() {
            let month = d.calendar_month(t) - 1;
            counts[month] += 1;
            for (k, &v) in d.frame(m, t).iter().enumerate() {
                sums[month * nodes * c + k] += v as f64;
            }
        }
    }
    for (k, s) in sums.iter().enumerate() {
        let mean = s / counts[k / (nodes * c)] as f64;
        assert!(mean.abs() < 1e-5 * std[k % c], "slot {k}: {mean}");
    }

    let back = anoms.reconstruct().unwrap();
    for (a, b) in back.values().iter().zip(data.values()) {
        assert!((a - b).abs() <= 2.0 * b.abs().max(1.0) * f32::EPSILON);
    }
}

#[test]
fn anomaly_dataset_round_trips_through_disk() {
    let sys = system(0, 3);
    let anoms = standardized(&simulated(&sys, 3, 40, 1), &[0, 1]);
    let dir = tempfile::tempdir().unwrap();
    anoms.save(dir.path()).unwrap();
    let back = AnomalyDataset::load(dir.path()).unwrap();
    assert_eq!(back.data().values(), anoms.data().values());
    assert_eq!(back.norm_stats(), anoms.norm_stats());
}
