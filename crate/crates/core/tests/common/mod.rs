#![allow(dead_code)]

use fdtkit::dataio::{compute_climatology, deseasonalize, standardize, AnomalyDataset, EnsembleDataset};
use fdtkit::synth::{make_truth_system, simulate, LinearTruthSystem, TruthSpec};
use fdtkit::NodeField;
use nalgebra::DMatrix;

pub fn system(level: u32, seed: u64) -> LinearTruthSystem {
    make_truth_system(&TruthSpec {
        mesh_level: level,
        seed,
        ..TruthSpec::default()
    })
    .unwrap()
}

pub fn anomalies(data: &EnsembleDataset) -> AnomalyDataset {
    deseasonalize(data, &compute_climatology(data)).unwrap()
}

pub fn simulated(system: &LinearTruthSystem, members: usize, months: usize, seed: u64) -> AnomalyDataset {
    anomalies(&simulate(system, members, months, 200, seed).unwrap())
}

pub fn standardized(anoms: &AnomalyDataset, train: &[usize]) -> AnomalyDataset {
    standardize(anoms, train).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn rel_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Unit bump on the input channel `x` over a few nodes.
pub fn bump(nodes: usize, on: &[usize]) -> NodeField {
    let mut f = NodeField::zeros(vec!["x".into()], nodes);
    for &n in on {
        f.values[n] = 1.0;
    }
    f
}
