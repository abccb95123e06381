use nalgebra::DMatrix;

use super::{EmulatorModel, ModelShape};
use crate::dataio::{LagPairs, NormStats};
use crate::error::{ensure, Error, Result};
use crate::linalg::gemm;

/// Ridge solution `M = Y X^T (X X^T + ridge I)^{-1}` (`output_dim x input_dim`)
/// with samples as columns of `X` and `Y`, via a Cholesky solve in 64-bit.
pub fn ridge_coefficients(pairs: &LagPairs, ridge: f64) -> Result<DMatrix<f64>> {
    ensure!(!pairs.is_empty(), Validation, "cannot fit a linear emulator on zero pairs");
    ensure!(ridge >= 0.0 && ridge.is_finite(), Validation, "ridge must be finite and >= 0, got {ridge}");
    let (s, din, dout) = (pairs.len(), pairs.input_dim(), pairs.output_dim());

    // inputs/targets are `s x d` row-major: their transposes are the sample-column matrices
    let mut gram = vec![0.0; din * din];
    gemm(din, s, din, 1.0, (&pairs.inputs, 1, din), (&pairs.inputs, din, 1), 0.0, &mut gram);
    let mut cross = vec![0.0; din * dout];
    gemm(din, s, dout, 1.0, (&pairs.inputs, 1, din), (&pairs.targets, dout, 1), 0.0, &mut cross);

    let mut g = DMatrix::from_row_slice(din, din, &gram);
    g = (&g + g.transpose()) * 0.5;
    for i in 0..din {
        g[(i, i)] += ridge;
    }
    let singular = || {
        if ridge == 0.0 {
            Error::Validation(
                "normal matrix X X^T is singular (too few or collinear samples); use a ridge > 0".into(),
            )
        } else {
            Error::Numerical(format!("normal matrix is not positive definite even with ridge {ridge}"))
        }
    };
    let chol = g.cholesky().ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if ridge == 0.0 && (lo / hi).powi(2) < 1e-13 {
        return Err(singular());
    }
    // M^T = G^{-1} (X Y^T)
    let rhs = DMatrix::from_row_slice(din, dout, &cross);
    Ok(chol.solve(&rhs).transpose())
}

/// Linear-kind emulator fitted on pairs in the units described by `norm`.
pub fn fit_linear(pairs: &LagPairs, ridge: f64, norm: Option<&NormStats>) -> Result<EmulatorModel> {
    let shape = ModelShape::for_pairs(pairs, norm)?;
    let m = ridge_coefficients(pairs, ridge)?;
    let row_major: Vec<f64> = m.transpose().as_slice().to_vec();
    let mut model = EmulatorModel::linear(pairs.lag, shape, row_major, ridge)?;
    model.training.samples = pairs.len();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn planted(samples: usize, noise: f64, seed: u64) -> (LagPairs, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nodes, din, dout) = (3, 6, 3);
        let m = DMatrix::from_fn(dout, din, |_, _| StandardNormal.sample(&mut rng));
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..samples {
            let x = nalgebra::DVector::from_fn(din, |_, _| StandardNormal.sample(&mut rng));
            let y = &m * &x;
            inputs.extend(x.iter());
            targets.extend(y.iter().map(|v| v + noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)));
        }
        let pairs = LagPairs {
            lag: 1,
            nodes,
            input_channels: vec!["a".into(), "b".into()],
            output_channels: vec!["y".into()],
            inputs,
            targets,
            provenance: (0..samples).map(|t| (0, t)).collect(),
        };
        (pairs, m)
    }

    #[test]
    fn recovers_planted_coefficients() {
        let (pairs, m) = planted(200, 0.0, 1);
        let fit = ridge_coefficients(&pairs, 0.0).unwrap();
        assert!((&fit - &m).amax() < 1e-8);
        let model = fit_linear(&pairs, 0.0, None).unwrap();
        let y = model.predict(pairs.input(0)).unwrap();
        for (a, b) in y.iter().zip(pairs.target(0)) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let (pairs, _) = planted(100, 0.1, 2);
        let unregularized = ridge_coefficients(&pairs, 0.0).unwrap();
        let din = pairs.input_dim();
        let mut gram = vec![0.0; din * din];
        gemm(din, pairs.len(), din, 1.0, (&pairs.inputs, 1, din), (&pairs.inputs, din, 1), 0.0, &mut gram);
        let gram_norm = DMatrix::from_row_slice(din, din, &gram).norm();
        let mut cross = vec![0.0; din * pairs.output_dim()];
        gemm(din, pairs.len(), pairs.output_dim(), 1.0, (&pairs.inputs, 1, din), (&pairs.targets, pairs.output_dim(), 1), 0.0, &mut cross);
        let cross_norm = cross.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lambda = 1e8 * gram_norm;
        let shrunk = ridge_coefficients(&pairs, lambda).unwrap();
        assert!(shrunk.norm() <= cross_norm / lambda);
        assert!(shrunk.norm() < 1e-6 * unregularized.norm());
    }

    #[test]
    fn singular_system_without_ridge_is_rejected() {
        let (mut pairs, _) = planted(3, 0.0, 3);
        let err = ridge_coefficients(&pairs, 0.0).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("ridge > 0")), "{err}");
        assert!(ridge_coefficients(&pairs, 1e-3).is_ok());
        pairs.inputs.clear();
        pairs.targets.clear();
        pairs.provenance.clear();
        assert!(ridge_coefficients(&pairs, 1.0).is_err());
    }
}
