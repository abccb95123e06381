//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector, Schur};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Largest eigenvalue modulus, from the real Schur form. Falls back to power
/// iteration when the QR sweeps stall (repeated eigenvalues in triangular
/// blocks can do that).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    match Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => power_iteration_radius(a, 20_000, 0),
    }
}

/// Spectral-radius estimate by power iteration from a seeded random start.
/// Converges when a single real eigenvalue dominates in modulus.
pub fn power_iteration_radius(a: &DMatrix<f64>, iterations: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(a.nrows(), |_, _| StandardNormal.sample(&mut rng));
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = a * &v;
        estimate = w.norm();
        if estimate == 0.0 {
            return 0.0;
        }
        v = w / estimate;
    }
    estimate
}

/// Pseudo-inverse of a symmetric matrix through its eigendecomposition,
/// discarding eigenvalues below `floor * largest`.
pub struct SymPinv {
    pub inverse: DMatrix<f64>,
    pub smallest_retained: f64,
    pub largest: f64,
    pub discarded: usize,
}

pub fn symmetric_pinv(c: &DMatrix<f64>, floor: f64) -> Result<SymPinv> {
    let eig = c.clone().symmetric_eigen();
    let largest = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(largest > 0.0) || !largest.is_finite() {
        return Err(Error::Numerical(format!(
            "covariance has no positive eigenvalues (largest {largest}); data are degenerate"
        )));
    }
    let threshold = floor * largest;
    let n = c.nrows();
    let mut inverse = DMatrix::zeros(n, n);
    let mut smallest_retained = f64::INFINITY;
    let mut discarded = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < threshold || lambda <= 0.0 {
            discarded += 1;
            continue;
        }
        smallest_retained = smallest_retained.min(lambda);
        let v = eig.eigenvectors.column(k);
        inverse += (&v * v.transpose()) / lambda;
    }
    Ok(SymPinv {
        inverse,
        smallest_retained,
        largest,
        discarded,
    })
}

/// Strided view of a row-major or transposed operand: `(data, row stride, column stride)`.
pub(crate) type Strided<'a> = (&'a [f64], usize, usize);

/// `c = alpha * a * b + beta * c` for an `m x k` operand `a` and a `k x n`
/// operand `b`; `c` is `m x n` row-major. Single-threaded, fixed reduction
/// order.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Strided, b: Strided, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows.max(1) - 1) * rs + (cols.max(1) - 1) * cs + 1;
    assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: left operand too short");
    assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: right operand too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the assertions above keep every strided access in bounds, and
    // `c` is a unique borrow that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// `|a - b| / |b|` in the Euclidean/Frobenius sense.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Pearson correlation of two equally long vectors; `None` if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
