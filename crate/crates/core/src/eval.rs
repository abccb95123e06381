//! Skill metrics, the persistence baseline and an out-of-distribution score.
//!
//! Series are row-major `[time][node][channel]`. Node statistics are
//! unweighted: icosahedral vertices are treated as equal-area.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{lag_pairs_at, lag_slots, AnomalyDataset, LagPairs};
use crate::emulator::LagModelBank;
use crate::error::{ensure, Error, Result};
use crate::linalg::pearson;

fn check_series(pred: &[f64], truth: &[f64], nodes: usize, channels: usize) -> Result<usize> {
    ensure!(pred.len() == truth.len(), Shape, "prediction has {} values, truth {}", pred.len(), truth.len());
    ensure!(nodes >= 1 && channels >= 1, Shape, "nodes and channels must be positive");
    ensure!(
        pred.len() % (nodes * channels) == 0,
        Shape,
        "{} values are not whole frames of {nodes} nodes x {channels} channels",
        pred.len()
    );
    Ok(pred.len() / (nodes * channels))
}

/// Per-channel root mean squared error over all times and nodes.
pub fn rmse(pred: &[f64], truth: &[f64], nodes: usize, channels: usize) -> Result<Vec<f64>> {
    let times = check_series(pred, truth, nodes, channels)?;
    ensure!(times >= 1, Shape, "empty series");
    let mut sums = vec![0.0; channels];
    for (k, (p, t)) in pred.iter().zip(truth).enumerate() {
        sums[k % channels] += (p - t) * (p - t);
    }
    Ok(sums.iter().map(|s| (s / (times * nodes) as f64).sqrt()).collect())
}

/// Pearson correlation across nodes of two single-channel fields.
pub fn spatial_corr(pred: &[f64], truth: &[f64]) -> Result<f64> {
    ensure!(pred.len() == truth.len(), Shape, "fields differ in length ({} vs {})", pred.len(), truth.len());
    ensure!(pred.len() >= 2, Shape, "spatial correlation needs at least 2 nodes");
    pearson(pred, truth).ok_or_else(|| Error::Numerical("undefined correlation: a field has zero variance".into()))
}

/// Per-channel mean over time of the across-node correlation. Frames where
/// either field is spatially constant are skipped; an error if all are.
pub fn spatial_corr_series(pred: &[f64], truth: &[f64], nodes: usize, channels: usize) -> Result<Vec<f64>> {
    let times = check_series(pred, truth, nodes, channels)?;
    let frame = nodes * channels;
    let mut out = Vec::with_capacity(channels);
    let (mut a, mut b) = (Vec::with_capacity(nodes), Vec::with_capacity(nodes));
    for c in 0..channels {
        let (mut sum, mut count) = (0.0, 0usize);
        for t in 0..times {
            a.clear();
            b.clear();
            for n in 0..nodes {
                a.push(pred[t * frame + n * channels + c]);
                b.push(truth[t * frame + n * channels + c]);
            }
            if let Some(r) = pearson(&a, &b) {
                sum += r;
                count += 1;
            }
        }
        ensure!(count > 0, Numerical, "undefined correlation: channel {c} is spatially constant in every frame");
        out.push(sum / count as f64);
    }
    Ok(out)
}

/// Per `[node][channel]` correlation over time; `None` where either series is
/// constant.
pub fn temporal_corr_map(pred: &[f64], truth: &[f64], nodes: usize, channels: usize) -> Result<Vec<Option<f64>>> {
    let times = check_series(pred, truth, nodes, channels)?;
    ensure!(times >= 2, Shape, "temporal correlation needs at least 2 times");
    let frame = nodes * channels;
    let (mut a, mut b) = (Vec::with_capacity(times), Vec::with_capacity(times));
    Ok((0..frame)
        .map(|k| {
            a.clear();
            b.clear();
            for t in 0..times {
                a.push(pred[t * frame + k]);
                b.push(truth[t * frame + k]);
            }
            pearson(&a, &b)
        })
        .collect())
}

/// `(rmse, spatial correlation)` per output channel of predicting
/// `y(t + lag)` with `y(t)` within each listed member, in the dataset's units.
pub fn persistence_baseline(anoms: &AnomalyDataset, lag: usize, members: &[usize]) -> Result<Vec<(f64, f64)>> {
    let d = anoms.data();
    ensure!(lag < d.months(), OutOfRange, "lag {lag} must be below the {} available months", d.months());
    let outputs = d.output_indices();
    ensure!(!outputs.is_empty(), Validation, "dataset has no output channels");
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for &m in members {
        ensure!(m < d.members(), OutOfRange, "member {m} >= {}", d.members());
        for t in 0..d.months() - lag {
            d.gather(m, t, &outputs, &mut pred);
            d.gather(m, t + lag, &outputs, &mut truth);
        }
    }
    ensure!(!pred.is_empty(), Validation, "no persistence pairs");
    let c = outputs.len();
    let r = rmse(&pred, &truth, d.nodes(), c)?;
    let s = spatial_corr_series(&pred, &truth, d.nodes(), c)?;
    Ok(r.into_iter().zip(s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub rmse: f64,
    pub spatial_corr: f64,
    pub persistence_rmse: f64,
    pub persistence_corr: f64,
    /// Per-node temporal correlation of model and truth; `null` where undefined.
    pub temporal_corr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagMetrics {
    pub lag: usize,
    pub samples: usize,
    pub channels: Vec<ChannelMetrics>,
}

/// Metrics are in the dataset's units (standardized units when the dataset
/// is standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub members: Vec<usize>,
    pub lags: Vec<LagMetrics>,
}

impl MetricReport {
    pub fn get(&self, lag: usize, channel: &str) -> Option<&ChannelMetrics> {
        self.lags.iter().find(|l| l.lag == lag)?.channels.iter().find(|c| c.channel == channel)
    }
}

/// Model skill for every bank lag on `members`, next to persistence, using at
/// most `max_pairs` randomly chosen pairs per lag.
pub fn evaluate_bank(
    bank: &LagModelBank,
    anoms: &AnomalyDataset,
    members: &[usize],
    max_pairs: Option<usize>,
    seed: u64,
) -> Result<MetricReport> {
    ensure!(!members.is_empty(), Validation, "no evaluation members");
    let mut lags = Vec::new();
    for model in bank.models() {
        let mut slots = lag_slots(anoms, model.lag, members);
        if let Some(k) = max_pairs.filter(|&k| k < slots.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::emulator::lag_seed(seed, model.lag));
            let mut picked = index::sample(&mut rng, slots.len(), k).into_vec();
            picked.sort_unstable();
            slots = picked.into_iter().map(|i| slots[i]).collect();
        }
        ensure!(!slots.is_empty(), Validation, "no evaluation pairs at lag {}", model.lag);
        let pairs = lag_pairs_at(anoms, model.lag, &slots)?;
        lags.push(lag_metrics(model, &pairs, anoms)?);
    }
    Ok(MetricReport {
        members: members.to_vec(),
        lags,
    })
}

fn lag_metrics(model: &crate::emulator::EmulatorModel, pairs: &LagPairs, anoms: &AnomalyDataset) -> Result<LagMetrics> {
    let (nodes, c) = (pairs.nodes, pairs.output_channels.len());
    let identity = |n: &crate::dataio::ChannelNorm| n.mean == 0.0 && n.std == 1.0;
    let consistent = match anoms.norm_stats() {
        Some(stats) => model
            .shape
            .input_norm
            .iter()
            .chain(&model.shape.output_norm)
            .all(|n| stats.get(&n.name) == Some(n)),
        None => model.shape.input_norm.iter().chain(&model.shape.output_norm).all(identity),
    };
    ensure!(consistent, Validation, "bank and dataset use different standardization");
    let pred = model.forward_standardized(&pairs.inputs, pairs.len());
    let r = rmse(&pred, &pairs.targets, nodes, c)?;
    let s = spatial_corr_series(&pred, &pairs.targets, nodes, c)?;
    let maps = temporal_corr_map(&pred, &pairs.targets, nodes, c)?;
    // persistence on the same slots
    let d = anoms.data();
    let outputs = d.output_indices();
    let mut persist = Vec::with_capacity(pairs.targets.len());
    for &(m, t) in &pairs.provenance {
        d.gather(m, t, &outputs, &mut persist);
    }
    let pr = rmse(&persist, &pairs.targets, nodes, c)?;
    let ps = spatial_corr_series(&persist, &pairs.targets, nodes, c)?;
    let channels = (0..c)
        .map(|ci| ChannelMetrics {
            channel: pairs.output_channels[ci].clone(),
            rmse: r[ci],
            spatial_corr: s[ci],
            persistence_rmse: pr[ci],
            persistence_corr: ps[ci],
            temporal_corr: (0..nodes).map(|n| maps[n * c + ci]).collect(),
        })
        .collect();
    Ok(LagMetrics {
        lag: pairs.lag,
        samples: pairs.len(),
        channels,
    })
}

/// Mahalanobis distance in the top-`k` principal subspace of training
/// inputs, scaled so the median training score is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodModel {
    pub k: usize,
    pub mean: Vec<f64>,
    /// `k` unit principal directions, each of input length.
    pub components: Vec<Vec<f64>>,
    /// Variance along each direction.
    pub variances: Vec<f64>,
    /// Median raw distance of the training samples.
    pub median: f64,
    /// First two principal coordinates of (up to) the fitted samples.
    pub background: Vec<[f64; 2]>,
}

pub const DEFAULT_OOD_COMPONENTS: usize = 10;

impl OodModel {
    /// Fits on row-major `samples x dim` inputs.
    pub fn fit(samples: &[Vec<f64>], k: usize) -> Result<Self> {
        ensure!(samples.len() >= 2, Validation, "need at least 2 samples to fit the OOD model");
        ensure!(k >= 1, Validation, "k must be at least 1");
        let dim = samples[0].len();
        ensure!(samples.iter().all(|s| s.len() == dim), Shape, "samples differ in length");
        let n = samples.len();
        let mut mean = DVector::zeros(dim);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n as f64;
        // columns are centered samples
        let x = DMatrix::from_fn(dim, n, |i, j| samples[j][i] - mean[i]);
        let (values, vectors) = if dim <= n {
            let cov = (&x * x.transpose()) / n as f64;
            let e = cov.symmetric_eigen();
            (e.eigenvalues, e.eigenvectors)
        } else {
            let gram = (x.transpose() * &x) / n as f64;
            let e = gram.symmetric_eigen();
            let mut vecs = &x * &e.eigenvectors;
            for (j, mut col) in vecs.column_iter_mut().enumerate() {
                let norm = col.norm();
                if norm > 0.0 && e.eigenvalues[j] > 0.0 {
                    col /= norm;
                }
            }
            (e.eigenvalues, vecs)
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let top = values[order[0]];
        let rank = order.iter().filter(|&&i| values[i] > 1e-10 * top.max(0.0)).count();
        ensure!(
            top > 0.0 && k <= rank,
            Validation,
            "k = {k} exceeds the rank {rank} of the training inputs"
        );
        let components: Vec<Vec<f64>> = order[..k].iter().map(|&i| vectors.column(i).iter().copied().collect()).collect();
        let variances: Vec<f64> = order[..k].iter().map(|&i| values[i]).collect();
        let mut model = Self {
            k,
            mean: mean.iter().copied().collect(),
            components,
            variances,
            median: 1.0,
            background: Vec::new(),
        };
        let mut raw: Vec<f64> = samples.iter().map(|s| model.raw_distance(s)).collect();
        raw.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { raw[n / 2] } else { 0.5 * (raw[n / 2 - 1] + raw[n / 2]) };
        ensure!(median > 0.0, Numerical, "median training distance is zero");
        model.median = median;
        model.background = samples.iter().map(|s| model.project2(s)).collect();
        Ok(model)
    }

    fn coords(&self, x: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components
            .iter()
            .map(move |c| c.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>())
    }

    fn raw_distance(&self, x: &[f64]) -> f64 {
        self.coords(x).zip(&self.variances).map(|(p, v)| p * p / v).sum::<f64>().sqrt()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        ensure!(x.len() == self.mean.len(), Shape, "state has {} values, expected {}", x.len(), self.mean.len());
        ensure!(x.iter().all(|v| v.is_finite()), NonFinite, "state contains non-finite values");
        Ok(self.raw_distance(x) / self.median)
    }

    /// First two principal coordinates (zeros beyond `k`).
    pub fn project2(&self, x: &[f64]) -> [f64; 2] {
        let mut it = self.coords(x);
        [it.next().unwrap_or(0.0), it.next().unwrap_or(0.0)]
    }
}
