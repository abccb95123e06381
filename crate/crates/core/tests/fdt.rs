mod common;

use common::*;
use fdtkit::dataio::LagPairs;
use fdtkit::emulator::ridge_coefficients;
use fdtkit::fdt::{
    classical_operator, classical_response, estimate_covariance, IntegrationRule, ResponseEstimate, StateSeries,
    DEFAULT_EIGEN_FLOOR,
};
use fdtkit::synth::{analytic_response, simulate, LinearTruthSystem, TruthSpec};
use nalgebra::{DMatrix, DVector};

fn dense(n: usize) -> Vec<usize> {
    (0..=n).collect()
}

/// Stationary covariance by summing the series `sum A^k Q A^kT`.
fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    let mut term = q.clone();
    for _ in 0..2000 {
        term = a * term * a.transpose();
        p += &term;
        if term.norm() < 1e-14 * p.norm() {
            break;
        }
    }
    p
}

#[test]
fn white_noise_covariances() {
    let spec = TruthSpec {
        mesh_level: 0,
        seasonal_amplitude: 0.0,
        ..TruthSpec::default()
    };
    let d = 24;
    let q = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 } else if i.abs_diff(j) == 1 { 0.5 } else { 0.0 });
    let sys = LinearTruthSystem::from_matrices(&spec, DMatrix::zeros(d, d), q.clone()).unwrap();
    let anoms = anomalies(&simulate(&sys, 4, 20_000, 0, 3).unwrap());
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let c0 = estimate_covariance(&series, 0).unwrap();
    let c1 = estimate_covariance(&series, 1).unwrap();
    assert!(rel_mat(&c0.matrix, &q) < 0.03, "C(0) vs Q: {}", rel_mat(&c0.matrix, &q));
    assert!(c1.matrix.norm() / q.norm() < 0.03);
    assert!(!c0.is_undersampled());

    // no propagation: only the lag-0 term carries the forcing, which never reaches outputs
    let forcing = bump(12, &[0, 3, 7]);
    let r = classical_response(&series, &dense(5), &forcing, IntegrationRule::Sum, DEFAULT_EIGEN_FLOOR).unwrap();
    let peak = r.total.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak < 0.05, "peak {peak}");
}

#[test]
fn covariances_match_lyapunov_solution() {
    let sys = system(0, 11);
    let anoms = simulated(&sys, 8, 20_000, 5);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let c0 = estimate_covariance(&series, 0).unwrap();
    let c1 = estimate_covariance(&series, 1).unwrap();
    let exact = lyapunov(sys.propagator(), sys.noise_cov());
    assert!(rel_mat(&c0.matrix, &exact) < 0.05, "C(0): {}", rel_mat(&c0.matrix, &exact));
    let residual = &c0.matrix - sys.propagator() * &c0.matrix * sys.propagator().transpose() - sys.noise_cov();
    assert!(residual.norm() / sys.noise_cov().norm() < 0.05);
    let a_hat = &c1.matrix * c0.matrix.clone().try_inverse().unwrap();
    assert!(rel_mat(&a_hat, sys.propagator()) < 0.1, "A: {}", rel_mat(&a_hat, sys.propagator()));
}

#[test]
fn classical_response_recovers_analytic_shift() {
    let sys = system(0, 2);
    let anoms = simulated(&sys, 10, 15_000, 9);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let forcing = bump(12, &[1, 2, 5]);
    let truth = analytic_response(&sys, &forcing).unwrap();
    let est = classical_response(&series, &dense(40), &forcing, IntegrationRule::Sum, DEFAULT_EIGEN_FLOOR).unwrap();
    assert_eq!(est.total.channels, vec!["y".to_string()]);
    let err = rel_err(&est.total.values, &truth.values);
    assert!(err < 0.1, "relative error {err}");
    let cond = est.conditioning.unwrap();
    assert_eq!(cond.discarded_eigenvalues, 0);

    // the accumulated operator and the per-lag path agree
    let op = classical_operator(&series, &dense(40), DEFAULT_EIGEN_FLOOR).unwrap();
    let v = op.operator * series.embed(&forcing).unwrap();
    let via_op = series.project_outputs(&v);
    assert!(rel_err(&via_op.values, &est.total.values) < 1e-9);
}

#[test]
fn classical_response_is_linear_in_forcing() {
    let sys = system(0, 4);
    let anoms = simulated(&sys, 2, 3000, 1);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let lags = dense(10);
    let run = |f| classical_response(&series, &lags, f, IntegrationRule::Sum, DEFAULT_EIGEN_FLOOR).unwrap().total;
    let (f1, f2) = (bump(12, &[0]), bump(12, &[4, 9]));
    let mut both = f1.clone();
    for (a, b) in both.values.iter_mut().zip(&f2.values) {
        *a = 2.0 * *a - 3.0 * b;
    }
    let (r1, r2, r12) = (run(&f1), run(&f2), run(&both));
    let combined: Vec<f64> = r1.values.iter().zip(&r2.values).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
    assert!(rel_err(&r12.values, &combined) < 1e-10);
}

#[test]
fn classical_response_rejects_output_forcing_and_long_lags() {
    let sys = system(0, 4);
    let anoms = simulated(&sys, 1, 50, 1);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let mut f = fdtkit::NodeField::zeros(vec!["y".into()], 12);
    f.values[0] = 1.0;
    let err = classical_response(&series, &[0, 1], &f, IntegrationRule::Sum, DEFAULT_EIGEN_FLOOR).unwrap_err();
    assert_eq!(err.category(), "validation");
    let err = classical_response(&series, &[0, 50], &bump(12, &[0]), IntegrationRule::Sum, 1e-6).unwrap_err();
    assert_eq!(err.category(), "out_of_range");
}

/// A full-state least-squares map at lag tau is exactly C(tau) C(0)^-1 when
/// both covariances are taken over the same pairs.
#[test]
fn full_state_regression_equals_covariance_ratio() {
    let sys = system(0, 8);
    let anoms = simulated(&sys, 3, 4000, 2);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let d = series.dim();
    for lag in [1usize, 3, 7] {
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        let (mut cxx, mut cyx) = (DMatrix::<f64>::zeros(d, d), DMatrix::<f64>::zeros(d, d));
        for z in &series.members {
            for t in 0..z.ncols() - lag {
                let (x, y): (DVector<f64>, DVector<f64>) = (z.column(t).into(), z.column(t + lag).into());
                inputs.extend(x.iter());
                targets.extend(y.iter());
                cxx += &x * x.transpose();
                cyx += &y * x.transpose();
            }
        }
        let pairs = LagPairs {
            lag,
            nodes: series.nodes,
            input_channels: series.channels.clone(),
            output_channels: series.channels.clone(),
            provenance: vec![(0, 0); inputs.len() / d],
            inputs,
            targets,
        };
        let m = ridge_coefficients(&pairs, 0.0).unwrap();
        let ratio = cyx * cxx.try_inverse().unwrap();
        assert!(rel_mat(&m, &ratio) < 1e-6, "lag {lag}: {}", rel_mat(&m, &ratio));
    }
}

#[test]
fn response_estimate_round_trips() {
    let sys = system(0, 4);
    let anoms = simulated(&sys, 2, 500, 1);
    let series = StateSeries::from_anomalies(&anoms).unwrap();
    let est = classical_response(&series, &[0, 1, 2, 4, 8], &bump(12, &[3]), IntegrationRule::InterpLinear, 1e-6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    est.save(dir.path()).unwrap();
    let back = ResponseEstimate::load(dir.path()).unwrap();
    assert_eq!(back, est);
    assert_eq!(back.reintegrate().unwrap(), est.total);
}
