//! Forced-response estimation from fluctuations: the covariance operator
//! `sum_tau C(tau) C(0)^{-1}` and the emulator estimator that averages
//! perturbed-minus-unperturbed predictions over sampled states, plus the
//! lag-integration rules shared by both.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dataio::{AnomalyDataset, ChannelRole};
use crate::emulator::LagModelBank;
use crate::error::{ensure, Error, Result};
use crate::field::NodeField;
use crate::linalg::{self, gemm};
use crate::scenario::PerturbationScenario;

pub const RESPONSE_MANIFEST: &str = "response.json";
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum IntegrationRule {
    /// Literal sum; lags must be a contiguous integer range.
    Sum,
    /// Piecewise-linear interpolation onto every integer lag, then sum.
    InterpLinear,
    /// Averaged overlapping three-point quadratics onto every integer lag, then sum.
    InterpQuadratic,
}

impl FromStr for IntegrationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "interp-linear" => Ok(Self::InterpLinear),
            "interp-quadratic" => Ok(Self::InterpQuadratic),
            other => Err(Error::Validation(format!(
                "unknown integration rule {other:?} (expected sum, interp-linear or interp-quadratic)"
            ))),
        }
    }
}

impl TryFrom<String> for IntegrationRule {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<IntegrationRule> for String {
    fn from(rule: IntegrationRule) -> String {
        rule.to_string()
    }
}

impl fmt::Display for IntegrationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sum => "sum",
            Self::InterpLinear => "interp-linear",
            Self::InterpQuadratic => "interp-quadratic",
        })
    }
}

fn check_lags(lags: &[usize]) -> Result<()> {
    ensure!(!lags.is_empty(), Validation, "lag set is empty");
    ensure!(
        lags.windows(2).all(|w| w[0] < w[1]),
        Validation,
        "lags {lags:?} must be sorted ascending without duplicates"
    );
    Ok(())
}

fn lagrange(knots: &[f64; 3], x: f64) -> [f64; 3] {
    let [a, b, c] = *knots;
    [
        (x - b) * (x - c) / ((a - b) * (a - c)),
        (x - a) * (x - c) / ((b - a) * (b - c)),
        (x - a) * (x - b) / ((c - a) * (c - b)),
    ]
}

/// Weights `w` with `sum_i w_i r(lags_i)` equal to the rule's estimate of the
/// dense sum of `r` over every integer lag in `[lags[0], lags[last]]`.
pub fn integration_weights(lags: &[usize], rule: IntegrationRule) -> Result<Vec<f64>> {
    check_lags(lags)?;
    let n = lags.len();
    let mut w = vec![0.0; n];
    if rule == IntegrationRule::Sum {
        ensure!(
            lags[n - 1] - lags[0] + 1 == n,
            Validation,
            "the sum rule needs a contiguous lag range, got {lags:?}; use interp-linear or interp-quadratic"
        );
        w.fill(1.0);
        return Ok(w);
    }
    w[0] = 1.0;
    for i in 0..n - 1 {
        w[i + 1] += 1.0;
        let (lo, hi) = (lags[i], lags[i + 1]);
        for tau in lo + 1..hi {
            let x = tau as f64;
            let mut triples = Vec::with_capacity(2);
            if rule == IntegrationRule::InterpQuadratic {
                if i >= 1 {
                    triples.push(i - 1);
                }
                if i + 2 < n {
                    triples.push(i);
                }
            }
            if triples.is_empty() {
                let t = (x - lo as f64) / (hi - lo) as f64;
                w[i] += 1.0 - t;
                w[i + 1] += t;
            } else {
                let share = 1.0 / triples.len() as f64;
                for &s in &triples {
                    let knots = [lags[s] as f64, lags[s + 1] as f64, lags[s + 2] as f64];
                    for (k, l) in lagrange(&knots, x).iter().enumerate() {
                        w[s + k] += share * l;
                    }
                }
            }
        }
    }
    Ok(w)
}

/// Integrates per-lag fields (one `Vec` per lag, equal lengths) under `rule`.
pub fn integrate_lags(contributions: &[Vec<f64>], lags: &[usize], rule: IntegrationRule) -> Result<Vec<f64>> {
    ensure!(
        contributions.len() == lags.len(),
        Shape,
        "{} contribution fields for {} lags",
        contributions.len(),
        lags.len()
    );
    let weights = integration_weights(lags, rule)?;
    let len = contributions[0].len();
    ensure!(contributions.iter().all(|c| c.len() == len), Shape, "contribution fields differ in length");
    let mut total = vec![0.0; len];
    for (c, w) in contributions.iter().zip(&weights) {
        for (t, v) in total.iter_mut().zip(c) {
            *t += w * v;
        }
    }
    Ok(total)
}

/// State-channel anomalies per member as `D x T` column-major matrices in
/// physical units, re-centered on the all-sample mean. Layout of the state
/// vector is `[node][state channel]`.
pub struct StateSeries {
    pub nodes: usize,
    pub channels: Vec<String>,
    pub roles: Vec<ChannelRole>,
    pub members: Vec<DMatrix<f64>>,
}

impl StateSeries {
    pub fn from_anomalies(anoms: &AnomalyDataset) -> Result<Self> {
        let physical = anoms.invert_standardize();
        let d = physical.data();
        let idx = d.state_indices();
        ensure!(!idx.is_empty(), Validation, "dataset has no dynamic channels");
        let dim = d.nodes() * idx.len();
        let mut members = Vec::with_capacity(d.members());
        let mut mean = DVector::zeros(dim);
        let mut buf = Vec::with_capacity(dim);
        for m in 0..d.members() {
            let mut z = DMatrix::zeros(dim, d.months());
            for t in 0..d.months() {
                buf.clear();
                d.gather(m, t, &idx, &mut buf);
                z.column_mut(t).copy_from_slice(&buf);
            }
            mean += z.column_sum();
            members.push(z);
        }
        mean /= (d.members() * d.months()) as f64;
        for z in &mut members {
            for mut col in z.column_iter_mut() {
                col -= &mean;
            }
        }
        Ok(Self {
            nodes: d.nodes(),
            channels: idx.iter().map(|&i| d.channels()[i].name.clone()).collect(),
            roles: idx.iter().map(|&i| d.channels()[i].role).collect(),
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes * self.channels.len()
    }

    pub fn months(&self) -> usize {
        self.members.first().map_or(0, |z| z.ncols())
    }

    /// Pair count at `lag`.
    pub fn samples(&self, lag: usize) -> usize {
        self.members.len() * self.months().saturating_sub(lag)
    }

    fn check_lag(&self, lag: usize) -> Result<()> {
        ensure!(
            lag < self.months(),
            OutOfRange,
            "lag {lag} must be below the {} available months",
            self.months()
        );
        Ok(())
    }

    /// Embeds a field over some of the state channels (zeros elsewhere).
    pub fn embed(&self, field: &NodeField) -> Result<DVector<f64>> {
        ensure!(field.nodes == self.nodes, Shape, "field has {} nodes, state has {}", field.nodes, self.nodes);
        let c = self.channels.len();
        let mut v = DVector::zeros(self.dim());
        for (fc, name) in field.channels.iter().enumerate() {
            let sc = self
                .channels
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Validation(format!("forcing channel {name:?} is not a state channel")))?;
            for n in 0..self.nodes {
                v[n * c + sc] = field.get(n, fc);
            }
        }
        Ok(v)
    }

    /// Output-channel part of a state vector.
    pub fn project_outputs(&self, v: &DVector<f64>) -> NodeField {
        let c = self.channels.len();
        let outs: Vec<usize> = (0..c).filter(|&i| self.roles[i] == ChannelRole::Output).collect();
        let mut values = Vec::with_capacity(self.nodes * outs.len());
        for n in 0..self.nodes {
            values.extend(outs.iter().map(|&o| v[n * c + o]));
        }
        NodeField {
            channels: outs.iter().map(|&o| self.channels[o].clone()).collect(),
            nodes: self.nodes,
            values,
        }
    }

    /// `C(lag) v = (1/S) sum z_{t+lag} (z_t . v)` without forming `C(lag)`.
    fn lagged_apply(&self, lag: usize, v: &DVector<f64>) -> DVector<f64> {
        let t_len = self.months() - lag;
        let mut out = DVector::zeros(self.dim());
        for z in &self.members {
            let u = z.columns(0, t_len).tr_mul(v);
            out.gemv(1.0, &z.columns(lag, t_len), &u, 1.0);
        }
        out / self.samples(lag) as f64
    }
}

/// Sample lag covariance `C(lag) = (1/S) sum z_{t+lag} z_t^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovariance {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
    pub samples: usize,
}

impl LagCovariance {
    /// Fewer pairs than state dimensions: `C(0)` cannot be full rank.
    pub fn is_undersampled(&self) -> bool {
        self.samples < self.matrix.nrows()
    }
}

pub fn estimate_covariance(series: &StateSeries, lag: usize) -> Result<LagCovariance> {
    series.check_lag(lag)?;
    let d = series.dim();
    let t_len = series.months() - lag;
    let mut c = vec![0.0; d * d];
    for z in &series.members {
        let s = z.as_slice();
        // z is column-major: entry (i, t) sits at i + t * d
        gemm(d, t_len, d, 1.0, (&s[lag * d..], 1, d), (s, d, 1), 1.0, &mut c);
    }
    let samples = series.samples(lag);
    let mut matrix = DMatrix::from_row_slice(d, d, &c) / samples as f64;
    if lag == 0 {
        matrix = (&matrix + matrix.transpose()) * 0.5;
    }
    Ok(LagCovariance { lag, matrix, samples })
}

/// Accumulated operator `sum_tau C(tau) C(0)^{-1}` over a lag set.
#[derive(Debug, Clone)]
pub struct ClassicalFdtOperator {
    pub lags: Vec<usize>,
    pub operator: DMatrix<f64>,
    pub diagnostics: Conditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub eigen_floor: f64,
    pub largest_eigenvalue: f64,
    pub smallest_retained_eigenvalue: f64,
    pub discarded_eigenvalues: usize,
}

fn inverse_c0(series: &StateSeries, floor: f64) -> Result<(linalg::SymPinv, usize)> {
    ensure!(floor >= 0.0 && floor < 1.0, Validation, "eigenvalue floor {floor} must lie in [0, 1)");
    let c0 = estimate_covariance(series, 0)?;
    Ok((linalg::symmetric_pinv(&c0.matrix, floor)?, c0.samples))
}

pub fn classical_operator(series: &StateSeries, lags: &[usize], floor: f64) -> Result<ClassicalFdtOperator> {
    check_lags(lags)?;
    series.check_lag(*lags.last().expect("non-empty"))?;
    let (pinv, _) = inverse_c0(series, floor)?;
    let d = series.dim();
    let months = series.months();
    // sum_tau C(tau) = sum_t w_t z_t^T with w_t = sum_tau z_{t+tau} / S_tau
    let mut acc = vec![0.0; d * d];
    for z in &series.members {
        let mut w = DMatrix::<f64>::zeros(d, months);
        for &lag in lags {
            let inv_s = 1.0 / series.samples(lag) as f64;
            for t in 0..months - lag {
                w.column_mut(t).axpy(inv_s, &z.column(t + lag), 1.0);
            }
        }
        gemm(d, months, d, 1.0, (w.as_slice(), 1, d), (z.as_slice(), d, 1), 1.0, &mut acc);
    }
    let sum_c = DMatrix::from_row_slice(d, d, &acc);
    Ok(ClassicalFdtOperator {
        lags: lags.to_vec(),
        operator: sum_c * &pinv.inverse,
        diagnostics: conditioning(&pinv, floor),
    })
}

fn conditioning(p: &linalg::SymPinv, floor: f64) -> Conditioning {
    Conditioning {
        eigen_floor: floor,
        largest_eigenvalue: p.largest,
        smallest_retained_eigenvalue: p.smallest_retained,
        discarded_eigenvalues: p.discarded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMethod {
    Classical,
    Emulator,
}

/// Lag-integrated mean response over the output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEstimate {
    pub method: ResponseMethod,
    pub lags: Vec<usize>,
    pub rule: IntegrationRule,
    /// Fluctuation samples (emulator) or lag-0 pairs (classical).
    pub samples: usize,
    pub total: NodeField,
    /// One field per lag, same order as `lags`.
    pub contributions: Vec<NodeField>,
    pub conditioning: Option<Conditioning>,
    pub seed: Option<u64>,
    pub scenario: Option<PerturbationScenario>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResponseManifest {
    method: ResponseMethod,
    nodes: usize,
    channels: Vec<String>,
    lags: Vec<usize>,
    rule: IntegrationRule,
    samples: usize,
    conditioning: Option<Conditioning>,
    seed: Option<u64>,
    scenario: Option<PerturbationScenario>,
    /// Per channel: node vector of the total.
    total_files: Vec<String>,
    /// Per channel: `lags x nodes` contributions.
    contribution_files: Vec<String>,
}

impl ResponseEstimate {
    fn assemble(
        method: ResponseMethod,
        lags: Vec<usize>,
        rule: IntegrationRule,
        samples: usize,
        contributions: Vec<NodeField>,
    ) -> Result<Self> {
        let raw: Vec<Vec<f64>> = contributions.iter().map(|c| c.values.clone()).collect();
        let total = integrate_lags(&raw, &lags, rule)?;
        let first = &contributions[0];
        Ok(Self {
            method,
            total: NodeField {
                channels: first.channels.clone(),
                nodes: first.nodes,
                values: total,
            },
            lags,
            rule,
            samples,
            contributions,
            conditioning: None,
            seed: None,
            scenario: None,
        })
    }

    /// Re-integrates the stored contributions under the stored rule.
    pub fn reintegrate(&self) -> Result<NodeField> {
        let raw: Vec<Vec<f64>> = self.contributions.iter().map(|c| c.values.clone()).collect();
        Ok(NodeField {
            values: integrate_lags(&raw, &self.lags, self.rule)?,
            ..self.total.clone()
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        let mut total_files = Vec::new();
        let mut contribution_files = Vec::new();
        for (ci, name) in self.total.channels.iter().enumerate() {
            let total_name = format!("total_{name}.f64");
            binio::write_f64_file(&dir.join(&total_name), &self.total.channel(ci))?;
            let contrib_name = format!("contributions_{name}.f64");
            let stacked: Vec<f64> = self.contributions.iter().flat_map(|c| c.channel(ci)).collect();
            binio::write_f64_file(&dir.join(&contrib_name), &stacked)?;
            total_files.push(total_name);
            contribution_files.push(contrib_name);
        }
        binio::write_json(
            &dir.join(RESPONSE_MANIFEST),
            &ResponseManifest {
                method: self.method,
                nodes: self.total.nodes,
                channels: self.total.channels.clone(),
                lags: self.lags.clone(),
                rule: self.rule,
                samples: self.samples,
                conditioning: self.conditioning.clone(),
                seed: self.seed,
                scenario: self.scenario.clone(),
                total_files,
                contribution_files,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RESPONSE_MANIFEST);
        let m: ResponseManifest = binio::read_json(&path)?;
        let c = m.channels.len();
        if m.total_files.len() != c || m.contribution_files.len() != c {
            return Err(Error::format(&path, "one total and one contribution file per channel expected"));
        }
        let (n, l) = (m.nodes, m.lags.len());
        let mut total = vec![0.0; n * c];
        let mut contrib = vec![vec![0.0; n * c]; l];
        for ci in 0..c {
            let t = binio::read_f64_file(&dir.join(&m.total_files[ci]))?;
            let k = binio::read_f64_file(&dir.join(&m.contribution_files[ci]))?;
            if t.len() != n || k.len() != n * l {
                return Err(Error::format(dir.join(&m.total_files[ci]), "field length disagrees with manifest"));
            }
            for node in 0..n {
                total[node * c + ci] = t[node];
                for (li, field) in contrib.iter_mut().enumerate() {
                    field[node * c + ci] = k[li * n + node];
                }
            }
        }
        let field = |values| NodeField::new(m.channels.clone(), n, values);
        Ok(Self {
            method: m.method,
            total: field(total)?,
            contributions: contrib.into_iter().map(field).collect::<Result<_>>()?,
            lags: m.lags,
            rule: m.rule,
            samples: m.samples,
            conditioning: m.conditioning,
            seed: m.seed,
            scenario: m.scenario,
        })
    }
}

/// Covariance-operator response `sum_tau C(tau) C(0)^{-1} df` over `lags`,
/// integrated under `rule`, with `C(0)` pseudo-inverted above
/// `floor * largest eigenvalue`.
pub fn classical_response(
    series: &StateSeries,
    lags: &[usize],
    forcing: &NodeField,
    rule: IntegrationRule,
    floor: f64,
) -> Result<ResponseEstimate> {
    check_lags(lags)?;
    series.check_lag(*lags.last().expect("non-empty"))?;
    let df = series.embed(forcing)?;
    for (fc, name) in forcing.channels.iter().enumerate() {
        let sc = series.channels.iter().position(|s| s == name).expect("embedded");
        if series.roles[sc] != ChannelRole::Input && (0..forcing.nodes).any(|n| forcing.get(n, fc) != 0.0) {
            return Err(Error::Validation(format!("forcing on non-input channel {name:?}")));
        }
    }
    let (pinv, samples) = inverse_c0(series, floor)?;
    let v = &pinv.inverse * &df;
    let contributions: Vec<NodeField> = lags
        .iter()
        .map(|&lag| series.project_outputs(&series.lagged_apply(lag, &v)))
        .collect();
    let mut est = ResponseEstimate::assemble(ResponseMethod::Classical, lags.to_vec(), rule, samples, contributions)?;
    est.conditioning = Some(conditioning(&pinv, floor));
    Ok(est)
}

/// Expands a field over some input channels to the bank's full
/// `[node][input channel]` layout.
pub fn forcing_vector(bank: &LagModelBank, forcing: &NodeField) -> Result<Vec<f64>> {
    let shape = bank.shape();
    ensure!(
        forcing.nodes == shape.nodes,
        Shape,
        "forcing has {} nodes, bank expects {}",
        forcing.nodes,
        shape.nodes
    );
    let c = shape.input_channels.len();
    let mut v = vec![0.0; shape.input_dim()];
    for (fc, name) in forcing.channels.iter().enumerate() {
        let ic = shape
            .input_channels
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::Validation(format!("forcing channel {name:?} is not a bank input")))?;
        for n in 0..forcing.nodes {
            v[n * c + ic] = forcing.get(n, fc);
        }
    }
    Ok(v)
}

/// Emulator response: per lag, the mean over fluctuation states of
/// `A_lag(x + df) - A_lag(x)`, integrated under `rule` over the bank's lags
/// (or the subset in `lags`).
pub fn emulator_response(
    bank: &LagModelBank,
    lags: Option<&[usize]>,
    fluctuations: &[Vec<f64>],
    forcing: &NodeField,
    rule: IntegrationRule,
) -> Result<ResponseEstimate> {
    ensure!(!fluctuations.is_empty(), Validation, "fluctuation sample list is empty");
    let lags = match lags {
        Some(l) => l.to_vec(),
        None => bank.lags(),
    };
    check_lags(&lags)?;
    let missing: Vec<usize> = lags.iter().copied().filter(|&l| bank.get(l).is_none()).collect();
    ensure!(missing.is_empty(), Validation, "bank has no models for lags {missing:?}");
    integration_weights(&lags, rule)?;
    let shape = bank.shape();
    let din = shape.input_dim();
    ensure!(
        fluctuations.iter().all(|x| x.len() == din),
        Shape,
        "fluctuation states must have {din} values"
    );
    let df = forcing_vector(bank, forcing)?;
    ensure!(df.iter().all(|v| v.is_finite()), NonFinite, "forcing contains non-finite values");
    let n = fluctuations.len();
    let base: Vec<f64> = fluctuations.concat();
    let perturbed: Vec<f64> = base.iter().zip(df.iter().cycle()).map(|(x, f)| x + f).collect();
    let dout = shape.output_dim();
    let contributions: Vec<NodeField> = lags
        .par_iter()
        .map(|&lag| {
            let model = bank.get(lag).expect("checked");
            let y1 = model.predict_batch(&perturbed, n)?;
            let y0 = model.predict_batch(&base, n)?;
            let mut mean = vec![0.0; dout];
            for (a, b) in y1.chunks_exact(dout).zip(y0.chunks_exact(dout)) {
                for ((m, a), b) in mean.iter_mut().zip(a).zip(b) {
                    *m += a - b;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            NodeField::new(shape.output_channels.clone(), shape.nodes, mean)
        })
        .collect::<Result<_>>()?;
    ResponseEstimate::assemble(ResponseMethod::Emulator, lags, rule, n, contributions)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPARSE: [usize; 10] = [1, 2, 3, 4, 5, 6, 12, 24, 36, 48];

    fn apply(lags: &[usize], rule: IntegrationRule, r: impl Fn(f64) -> f64) -> f64 {
        let w = integration_weights(lags, rule).unwrap();
        lags.iter().zip(&w).map(|(&l, w)| w * r(l as f64)).sum()
    }

    #[test]
    fn linear_rule_integrates_constants_and_lines_exactly() {
        assert_eq!(apply(&SPARSE, IntegrationRule::InterpLinear, |_| 2.5), 48.0 * 2.5);
        assert_eq!(apply(&SPARSE, IntegrationRule::InterpLinear, |t| t), 1176.0);
    }

    #[test]
    fn quadratic_rule_tracks_geometric_decay() {
        let dense: f64 = (1..=48).map(|t| 0.9f64.powi(t)).sum();
        let est = apply(&SPARSE, IntegrationRule::InterpQuadratic, |t| 0.9f64.powf(t));
        assert!((est - dense).abs() / dense < 0.05, "{est} vs {dense}");
        // quadratics are reproduced exactly
        let q = |t: f64| 0.5 * t * t - 3.0 * t + 1.0;
        let dense_q: f64 = (1..=48).map(|t| q(t as f64)).sum();
        assert!((apply(&SPARSE, IntegrationRule::InterpQuadratic, q) - dense_q).abs() < 1e-9 * dense_q.abs());
    }

    #[test]
    fn sum_rule_requires_contiguous_lags() {
        assert_eq!(integration_weights(&[0, 1, 2], IntegrationRule::Sum).unwrap(), vec![1.0; 3]);
        assert!(integration_weights(&SPARSE, IntegrationRule::Sum).is_err());
        assert!(integration_weights(&[2, 1], IntegrationRule::InterpLinear).is_err());
        assert!(integration_weights(&[1, 1], IntegrationRule::InterpLinear).is_err());
        assert!(integration_weights(&[], IntegrationRule::InterpLinear).is_err());
        // dense lags: every rule is the plain sum
        for rule in [IntegrationRule::InterpLinear, IntegrationRule::InterpQuadratic] {
            assert_eq!(integration_weights(&[3, 4, 5, 6], rule).unwrap(), vec![1.0; 4]);
        }
        assert_eq!(integration_weights(&[7], IntegrationRule::InterpQuadratic).unwrap(), vec![1.0]);
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in [IntegrationRule::Sum, IntegrationRule::InterpLinear, IntegrationRule::InterpQuadratic] {
            assert_eq!(rule.to_string().parse::<IntegrationRule>().unwrap(), rule);
        }
        assert!("simpson".parse::<IntegrationRule>().is_err());
    }
}
