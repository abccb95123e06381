//! Ensemble containers, climatology removal, standardization, lagged pairs,
//! member splits and fluctuation sampling.
//!
//! On disk a dataset is a `dataset.json` manifest plus one raw payload per
//! member: little-endian `f32`, layout `[time][node][channel]`, no header.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{ensure, Error, Result};
use crate::grid;

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const CLIMATOLOGY_MANIFEST: &str = "climatology.json";
pub const NORM_STATS_FILE: &str = "norm_stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", try_from = "String", into = "String")]
pub enum ChannelRole {
    Input,
    Output,
    Static,
}

impl FromStr for ChannelRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(ChannelRole::Input),
            "output" => Ok(ChannelRole::Output),
            "static" => Ok(ChannelRole::Static),
            other => Err(Error::Validation(format!(
                "unknown channel role {other:?} (expected input, output or static)"
            ))),
        }
    }
}

impl TryFrom<String> for ChannelRole {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<ChannelRole> for String {
    fn from(role: ChannelRole) -> String {
        role.to_string()
    }
}

impl fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelRole::Input => "input",
            ChannelRole::Output => "output",
            ChannelRole::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub role: ChannelRole,
    #[serde(default)]
    pub units: String,
}

impl ChannelSpec {
    pub fn new(name: &str, role: ChannelRole, units: &str) -> Self {
        Self {
            name: name.to_string(),
            role,
            units: units.to_string(),
        }
    }
}

/// The radiative inputs and surface outputs used for cloud-brightening
/// emulation. `lsMask` is a static land fraction.
pub fn default_channels() -> Vec<ChannelSpec> {
    use ChannelRole::*;
    vec![
        ChannelSpec::new("cres", Input, "W m-2"),
        ChannelSpec::new("crel", Input, "W m-2"),
        ChannelSpec::new("cresSurf", Input, "W m-2"),
        ChannelSpec::new("crelSurf", Input, "W m-2"),
        ChannelSpec::new("netTOAcs", Input, "W m-2"),
        ChannelSpec::new("netSurfcs", Input, "W m-2"),
        ChannelSpec::new("lsMask", Static, "1"),
        ChannelSpec::new("ps", Output, "Pa"),
        ChannelSpec::new("tas", Output, "K"),
        ChannelSpec::new("pr", Output, "m s-1"),
    ]
}

fn validate_channels(channels: &[ChannelSpec]) -> Result<()> {
    ensure!(!channels.is_empty(), Validation, "dataset declares no channels");
    for (i, c) in channels.iter().enumerate() {
        ensure!(!c.name.is_empty(), Validation, "channel {i} has an empty name");
        ensure!(
            !channels[..i].iter().any(|o| o.name == c.name),
            Validation,
            "duplicate channel name {:?}",
            c.name
        );
    }
    Ok(())
}

pub fn indices_with_role(channels: &[ChannelSpec], role: ChannelRole) -> Vec<usize> {
    channels
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == role)
        .map(|(i, _)| i)
        .collect()
}

/// `members x months x nodes x channels` of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDataset {
    mesh_level: u32,
    start_month: u8,
    members: usize,
    months: usize,
    nodes: usize,
    channels: Vec<ChannelSpec>,
    values: Vec<f32>,
}

impl EnsembleDataset {
    pub fn new(
        mesh_level: u32,
        start_month: u8,
        members: usize,
        months: usize,
        channels: Vec<ChannelSpec>,
        values: Vec<f32>,
    ) -> Result<Self> {
        ensure!(
            mesh_level <= grid::MAX_LEVEL,
            Validation,
            "mesh level {mesh_level} exceeds {}",
            grid::MAX_LEVEL
        );
        ensure!((1..=12).contains(&start_month), Validation, "start month {start_month} not in 1..=12");
        ensure!(members >= 1 && months >= 1, Validation, "dataset needs at least one member and one month");
        validate_channels(&channels)?;
        let nodes = grid::vertex_count(mesh_level);
        let expected = members * months * nodes * channels.len();
        ensure!(
            values.len() == expected,
            Shape,
            "expected {members}x{months}x{nodes}x{} = {expected} values, got {}",
            channels.len(),
            values.len()
        );
        let ds = Self {
            mesh_level,
            start_month,
            members,
            months,
            nodes,
            channels,
            values,
        };
        if let Some(pos) = ds.values.iter().position(|v| !v.is_finite()) {
            let (m, t, n, c) = ds.unflatten(pos);
            return Err(Error::NonFinite(format!(
                "value {} at member {m}, time {t}, node {n}, channel {:?}",
                ds.values[pos], ds.channels[c].name
            )));
        }
        Ok(ds)
    }

    fn unflatten(&self, pos: usize) -> (usize, usize, usize, usize) {
        let c = self.channels.len();
        let per_time = self.nodes * c;
        let per_member = self.months * per_time;
        (
            pos / per_member,
            (pos % per_member) / per_time,
            (pos % per_time) / c,
            pos % c,
        )
    }

    pub fn mesh_level(&self) -> u32 {
        self.mesh_level
    }

    pub fn start_month(&self) -> u8 {
        self.start_month
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn months(&self) -> usize {
        self.months
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn input_indices(&self) -> Vec<usize> {
        indices_with_role(&self.channels, ChannelRole::Input)
    }

    pub fn output_indices(&self) -> Vec<usize> {
        indices_with_role(&self.channels, ChannelRole::Output)
    }

    /// Dynamic (non-static) channels: the state used for covariance estimates.
    pub fn state_indices(&self) -> Vec<usize> {
        (0..self.channels.len())
            .filter(|&i| self.channels[i].role != ChannelRole::Static)
            .collect()
    }

    /// Calendar month (1..=12) of time index `t`.
    pub fn calendar_month(&self, t: usize) -> usize {
        (self.start_month as usize - 1 + t) % 12 + 1
    }

    /// `[node][channel]` slice for one member and time.
    pub fn frame(&self, member: usize, time: usize) -> &[f32] {
        let len = self.nodes * self.channels.len();
        let start = (member * self.months + time) * len;
        &self.values[start..start + len]
    }

    pub fn member(&self, member: usize) -> &[f32] {
        let len = self.months * self.nodes * self.channels.len();
        &self.values[member * len..(member + 1) * len]
    }

    pub fn value(&self, member: usize, time: usize, node: usize, channel: usize) -> f32 {
        self.frame(member, time)[node * self.channels.len() + channel]
    }

    /// Copies the selected channels of one frame into `out` as `f64`,
    /// layout `[node][selected channel]`.
    pub fn gather(&self, member: usize, time: usize, channels: &[usize], out: &mut Vec<f64>) {
        let frame = self.frame(member, time);
        let c = self.channels.len();
        for node in 0..self.nodes {
            out.extend(channels.iter().map(|&k| frame[node * c + k] as f64));
        }
    }

    /// Dataset restricted to the given members, in the given order.
    pub fn select_members(&self, members: &[usize]) -> Result<Self> {
        ensure!(!members.is_empty(), Validation, "member selection is empty");
        let mut values = Vec::with_capacity(members.len() * self.member(0).len());
        for &m in members {
            ensure!(m < self.members, OutOfRange, "member {m} >= {}", self.members);
            values.extend_from_slice(self.member(m));
        }
        Ok(Self {
            members: members.len(),
            values,
            channels: self.channels.clone(),
            ..*self
        })
    }

    /// Writes `dataset.json` and one payload per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, None, None)
    }

    fn save_with(&self, dir: &Path, climatology: Option<String>, norm_stats: Option<String>) -> Result<()> {
        binio::ensure_dir(dir)?;
        let payload: Vec<String> = (0..self.members).map(|m| format!("member_{m:03}.f32")).collect();
        for (m, name) in payload.iter().enumerate() {
            binio::write_f32_file(&dir.join(name), self.member(m))?;
        }
        let manifest = DatasetManifest {
            mesh_level: self.mesh_level,
            start_month: self.start_month,
            months: self.months,
            members: self.members,
            channels: self.channels.clone(),
            payload,
            climatology,
            norm_stats,
        };
        binio::write_json(&dir.join(DATASET_MANIFEST), &manifest)
    }

    /// Loads and validates a dataset. `path` may be the manifest itself or
    /// the directory containing `dataset.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let (_, ds) = load_manifest_and_values(path)?;
        Ok(ds)
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_MANIFEST)
    } else {
        path.to_path_buf()
    }
}

fn load_manifest_and_values(path: &Path) -> Result<(DatasetManifest, EnsembleDataset)> {
    let mpath = manifest_path(path);
    let manifest: DatasetManifest = binio::read_json(&mpath)?;
    let dir = mpath.parent().unwrap_or(Path::new("."));
    if manifest.payload.len() != manifest.members {
        return Err(Error::Shape(format!(
            "manifest declares {} members but lists {} payload files",
            manifest.members,
            manifest.payload.len()
        )));
    }
    let nodes = grid::vertex_count(manifest.mesh_level);
    let per_member = manifest.months * nodes * manifest.channels.len();
    let mut values = Vec::with_capacity(per_member * manifest.members);
    for (m, name) in manifest.payload.iter().enumerate() {
        let data = binio::read_f32_file(&dir.join(name))?;
        if data.len() != per_member {
            let c = manifest.channels.len().max(1);
            let frame = data.len() as f64 / (manifest.months.max(1) * c) as f64;
            return Err(Error::Shape(format!(
                "payload {name} (member {m}) holds {} values ({frame} nodes per frame); mesh level {} \
                 with {} months and {} channels needs {per_member} ({nodes} nodes)",
                data.len(),
                manifest.mesh_level,
                manifest.months,
                manifest.channels.len()
            )));
        }
        values.extend(data);
    }
    let ds = EnsembleDataset::new(
        manifest.mesh_level,
        manifest.start_month,
        manifest.members,
        manifest.months,
        manifest.channels.clone(),
        values,
    )?;
    Ok((manifest, ds))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mesh_level: u32,
    pub start_month: u8,
    pub months: usize,
    pub members: usize,
    pub channels: Vec<ChannelSpec>,
    pub payload: Vec<String>,
    /// Present on anomaly datasets: manifest of the removed climatology.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub climatology: Option<String>,
    /// Present on standardized datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<String>,
}

/// Per (calendar month, node, channel) ensemble mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    mesh_level: u32,
    nodes: usize,
    channels: Vec<ChannelSpec>,
    /// `[month 0..12][node][channel]`
    values: Vec<f64>,
    covered: [bool; 12],
}

impl Climatology {
    /// Mean for calendar month `month` (1..=12).
    pub fn get(&self, month: usize, node: usize, channel: usize) -> f64 {
        let c = self.channels.len();
        self.values[((month - 1) * self.nodes + node) * c + channel]
    }

    pub fn month_slice(&self, month: usize) -> &[f64] {
        let len = self.nodes * self.channels.len();
        &self.values[(month - 1) * len..month * len]
    }

    /// Whether calendar month `month` had any data when computed.
    pub fn covers(&self, month: usize) -> bool {
        self.covered[month - 1]
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        let manifest = ClimatologyManifest {
            mesh_level: self.mesh_level,
            channels: self.channels.clone(),
            covered_months: (1..=12).filter(|&m| self.covers(m)).collect(),
            payload: "climatology.f64".into(),
        };
        binio::write_f64_file(&dir.join(&manifest.payload), &self.values)?;
        binio::write_json(&dir.join(CLIMATOLOGY_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CLIMATOLOGY_MANIFEST);
        let manifest: ClimatologyManifest = binio::read_json(&path)?;
        let values = binio::read_f64_file(&dir.join(&manifest.payload))?;
        let nodes = grid::vertex_count(manifest.mesh_level);
        if values.len() != 12 * nodes * manifest.channels.len() {
            return Err(Error::format(path, "climatology payload size does not match its manifest"));
        }
        let mut covered = [false; 12];
        for m in manifest.covered_months {
            if !(1..=12).contains(&m) {
                return Err(Error::format(path, format!("calendar month {m} out of range")));
            }
            covered[m - 1] = true;
        }
        Ok(Self {
            mesh_level: manifest.mesh_level,
            nodes,
            channels: manifest.channels,
            values,
            covered,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClimatologyManifest {
    mesh_level: u32,
    channels: Vec<ChannelSpec>,
    covered_months: Vec<usize>,
    /// Little-endian f64, layout `[calendar month][node][channel]`.
    payload: String,
}

pub fn compute_climatology(data: &EnsembleDataset) -> Climatology {
    let c = data.n_channels();
    let frame = data.nodes * c;
    let mut sums = vec![0.0f64; 12 * frame];
    let mut counts = [0usize; 12];
    for m in 0..data.members {
        for t in 0..data.months {
            let month = data.calendar_month(t) - 1;
            counts[month] += 1;
            let acc = &mut sums[month * frame..(month + 1) * frame];
            for (a, &v) in acc.iter_mut().zip(data.frame(m, t)) {
                *a += v as f64;
            }
        }
    }
    for (month, &count) in counts.iter().enumerate() {
        if count > 0 {
            for s in &mut sums[month * frame..(month + 1) * frame] {
                *s /= count as f64;
            }
        }
    }
    Climatology {
        mesh_level: data.mesh_level,
        nodes: data.nodes,
        channels: data.channels.clone(),
        values: sums,
        covered: counts.map(|n| n > 0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-channel z-score parameters. Static channels carry `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<ChannelNorm>,
    /// Members the statistics were computed over.
    pub members: Vec<usize>,
}

impl NormStats {
    pub fn get(&self, name: &str) -> Option<&ChannelNorm> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        binio::read_json(path)
    }
}

/// Anomalies relative to a climatology, optionally standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyDataset {
    data: EnsembleDataset,
    climatology: Climatology,
    norm: Option<NormStats>,
}

impl AnomalyDataset {
    pub fn data(&self) -> &EnsembleDataset {
        &self.data
    }

    pub fn climatology(&self) -> &Climatology {
        &self.climatology
    }

    /// Present when values are standardized.
    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    /// Restores the source values: undoes standardization, then adds the
    /// climatology back.
    pub fn reconstruct(&self) -> Result<EnsembleDataset> {
        let physical = self.invert_standardize();
        let d = &physical.data;
        let mut values = Vec::with_capacity(d.values.len());
        for m in 0..d.members {
            for t in 0..d.months {
                let clim = self.climatology.month_slice(d.calendar_month(t));
                values.extend(d.frame(m, t).iter().zip(clim).map(|(&a, &c)| (a as f64 + c) as f32));
            }
        }
        EnsembleDataset::new(d.mesh_level, d.start_month, d.members, d.months, d.channels.clone(), values)
    }

    /// Physical-unit anomalies (identity when not standardized).
    pub fn invert_standardize(&self) -> AnomalyDataset {
        let Some(norm) = &self.norm else {
            return self.clone();
        };
        let c = self.data.n_channels();
        let values = self
            .data
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = &norm.channels[i % c];
                (v as f64 * s.std + s.mean) as f32
            })
            .collect();
        AnomalyDataset {
            data: EnsembleDataset {
                values,
                channels: self.data.channels.clone(),
                ..self.data
            },
            climatology: self.climatology.clone(),
            norm: None,
        }
    }

    pub fn select_members(&self, members: &[usize]) -> Result<Self> {
        Ok(Self {
            data: self.data.select_members(members)?,
            climatology: self.climatology.clone(),
            norm: self.norm.clone(),
        })
    }

    /// Writes the anomaly dataset, its climatology and (if any) norm stats.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.climatology.save(&dir.join("climatology"))?;
        let norm = match &self.norm {
            Some(n) => {
                n.save(&dir.join(NORM_STATS_FILE))?;
                Some(NORM_STATS_FILE.to_string())
            }
            None => None,
        };
        self.data
            .save_with(dir, Some(format!("climatology/{CLIMATOLOGY_MANIFEST}")), norm)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, data) = load_manifest_and_values(path)?;
        let mpath = manifest_path(path);
        let dir = mpath.parent().unwrap_or(Path::new("."));
        let clim_rel = manifest
            .climatology
            .ok_or_else(|| Error::format(&mpath, "not an anomaly dataset (no climatology entry)"))?;
        let clim_path = dir.join(clim_rel);
        let climatology = Climatology::load(clim_path.parent().unwrap_or(dir))?;
        let norm = manifest.norm_stats.map(|n| NormStats::load(&dir.join(n))).transpose()?;
        if climatology.channels != data.channels || climatology.mesh_level != data.mesh_level {
            return Err(Error::format(mpath, "climatology does not match dataset channels or mesh"));
        }
        Ok(Self {
            data,
            climatology,
            norm,
        })
    }
}

/// Subtracts the climatology of the matching calendar month.
pub fn deseasonalize(data: &EnsembleDataset, clim: &Climatology) -> Result<AnomalyDataset> {
    ensure!(
        clim.mesh_level == data.mesh_level && clim.nodes == data.nodes,
        Shape,
        "climatology mesh level {} does not match dataset level {}",
        clim.mesh_level,
        data.mesh_level
    );
    ensure!(
        clim.channels == data.channels,
        Shape,
        "climatology channels do not match dataset channels"
    );
    for t in 0..data.months.min(12) {
        let month = data.calendar_month(t);
        ensure!(
            clim.covers(month),
            Validation,
            "calendar misalignment: climatology has no data for calendar month {month}"
        );
    }
    let mut values = Vec::with_capacity(data.values.len());
    for m in 0..data.members {
        for t in 0..data.months {
            let c = clim.month_slice(data.calendar_month(t));
            values.extend(data.frame(m, t).iter().zip(c).map(|(&v, &c)| (v as f64 - c) as f32));
        }
    }
    Ok(AnomalyDataset {
        data: EnsembleDataset {
            values,
            channels: data.channels.clone(),
            ..*data
        },
        climatology: clim.clone(),
        norm: None,
    })
}

/// Z-scores every dynamic channel with statistics from `training_members`.
pub fn standardize(anoms: &AnomalyDataset, training_members: &[usize]) -> Result<AnomalyDataset> {
    ensure!(!training_members.is_empty(), Validation, "training split is empty");
    ensure!(anoms.norm.is_none(), Validation, "dataset is already standardized");
    let d = &anoms.data;
    let c = d.n_channels();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut count = 0usize;
    for &m in training_members {
        ensure!(m < d.members, OutOfRange, "training member {m} >= {}", d.members);
        for (i, &v) in d.member(m).iter().enumerate() {
            sum[i % c] += v as f64;
        }
        count += d.months * d.nodes;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    for &m in training_members {
        for (i, &v) in d.member(m).iter().enumerate() {
            let dv = v as f64 - mean[i % c];
            sq[i % c] += dv * dv;
        }
    }
    let mut channels = Vec::with_capacity(c);
    for (k, spec) in d.channels.iter().enumerate() {
        if spec.role == ChannelRole::Static {
            channels.push(ChannelNorm {
                name: spec.name.clone(),
                mean: 0.0,
                std: 1.0,
            });
            continue;
        }
        let std = (sq[k] / count as f64).sqrt();
        ensure!(
            std > 0.0 && std.is_finite(),
            Validation,
            "channel {:?} has zero variance over the training split",
            spec.name
        );
        channels.push(ChannelNorm {
            name: spec.name.clone(),
            mean: mean[k],
            std,
        });
    }
    let values = d
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = &channels[i % c];
            ((v as f64 - s.mean) / s.std) as f32
        })
        .collect();
    let mut members = training_members.to_vec();
    members.sort_unstable();
    Ok(AnomalyDataset {
        data: EnsembleDataset {
            values,
            channels: d.channels.clone(),
            ..*d
        },
        climatology: anoms.climatology.clone(),
        norm: Some(NormStats { channels, members }),
    })
}

/// Inputs at `t` paired with outputs at `t + lag`, never crossing members.
#[derive(Debug, Clone, PartialEq)]
pub struct LagPairs {
    pub lag: usize,
    pub nodes: usize,
    pub input_channels: Vec<String>,
    pub output_channels: Vec<String>,
    /// `samples x nodes x inputs`, row-major.
    pub inputs: Vec<f64>,
    /// `samples x nodes x outputs`, row-major.
    pub targets: Vec<f64>,
    /// `(member, time of the input)` per sample.
    pub provenance: Vec<(usize, usize)>,
}

impl LagPairs {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.nodes * self.input_channels.len()
    }

    pub fn output_dim(&self) -> usize {
        self.nodes * self.output_channels.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let d = self.output_dim();
        &self.targets[i * d..(i + 1) * d]
    }
}

/// Lagged pairs over every member.
pub fn make_lag_pairs(anoms: &AnomalyDataset, lag: usize) -> Result<LagPairs> {
    let all: Vec<usize> = (0..anoms.data.members).collect();
    make_lag_pairs_for(anoms, lag, &all)
}

/// Lagged pairs over the listed members.
pub fn make_lag_pairs_for(anoms: &AnomalyDataset, lag: usize, members: &[usize]) -> Result<LagPairs> {
    lag_pairs_at(anoms, lag, &lag_slots(anoms, lag, members))
}

/// Every valid `(member, input time)` slot for `lag` among `members`.
pub fn lag_slots(anoms: &AnomalyDataset, lag: usize, members: &[usize]) -> Vec<(usize, usize)> {
    let per = anoms.data.months.saturating_sub(lag);
    members.iter().flat_map(|&m| (0..per).map(move |t| (m, t))).collect()
}

/// Lagged pairs at explicit `(member, input time)` slots.
pub fn lag_pairs_at(anoms: &AnomalyDataset, lag: usize, slots: &[(usize, usize)]) -> Result<LagPairs> {
    let d = &anoms.data;
    ensure!(lag < d.months, OutOfRange, "lag {lag} must be below the {} available months", d.months);
    let inputs_idx = d.input_indices();
    let outputs_idx = d.output_indices();
    ensure!(!inputs_idx.is_empty(), Validation, "dataset has no input channels");
    ensure!(!outputs_idx.is_empty(), Validation, "dataset has no output channels");
    let mut inputs = Vec::with_capacity(slots.len() * d.nodes * inputs_idx.len());
    let mut targets = Vec::with_capacity(slots.len() * d.nodes * outputs_idx.len());
    let mut provenance = Vec::with_capacity(slots.len());
    for &(m, t) in slots {
        ensure!(m < d.members, OutOfRange, "member {m} >= {}", d.members);
        ensure!(t + lag < d.months, OutOfRange, "pair at time {t} with lag {lag} runs past month {}", d.months);
        d.gather(m, t, &inputs_idx, &mut inputs);
        d.gather(m, t + lag, &outputs_idx, &mut targets);
        provenance.push((m, t));
    }
    let names = |idx: &[usize]| idx.iter().map(|&i| d.channels[i].name.clone()).collect();
    Ok(LagPairs {
        lag,
        nodes: d.nodes,
        input_channels: names(&inputs_idx),
        output_channels: names(&outputs_idx),
        inputs,
        targets,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions whole members into train/validation/test.
pub fn split(members: usize, fractions: [f64; 3], seed: u64) -> Result<MemberSplit> {
    ensure!(
        fractions.iter().all(|f| *f > 0.0 && f.is_finite()),
        Validation,
        "split fractions must be positive, got {fractions:?}"
    );
    let total: f64 = fractions.iter().sum();
    ensure!((total - 1.0).abs() < 1e-9, Validation, "split fractions sum to {total}, not 1");
    ensure!(members >= 3, Validation, "{members} members cannot be split three ways");

    let exact: Vec<f64> = fractions.iter().map(|f| f * members as f64).collect();
    // snap away floating noise such as 0.6 * 10 = 6.000000000000001
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &k in order.iter().cycle() {
        if assigned >= members {
            break;
        }
        counts[k] += 1;
        assigned += 1;
    }
    for k in 0..3 {
        if counts[k] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], usize::MAX - j)).unwrap();
            counts[donor] -= 1;
            counts[k] = 1;
        }
    }

    let mut ids: Vec<usize> = (0..members).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut take = |n: usize| {
        let mut part: Vec<usize> = ids.drain(..n).collect();
        part.sort_unstable();
        part
    };
    Ok(MemberSplit {
        train: take(counts[0]),
        validation: take(counts[1]),
        test: take(counts[2]),
    })
}

/// Draws `n` distinct `(member, time)` slots uniformly and returns their
/// input-channel states (`[node][input channel]`, physical units if the
/// dataset is).
pub fn sample_fluctuations(anoms: &AnomalyDataset, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = &anoms.data;
    let total = d.members * d.months;
    ensure!(n >= 1, Validation, "fluctuation sample count must be at least 1");
    ensure!(n <= total, Validation, "requested {n} fluctuation samples but only {total} slots exist");
    let inputs = d.input_indices();
    ensure!(!inputs.is_empty(), Validation, "dataset has no input channels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, total, n)
        .into_iter()
        .map(|slot| {
            let mut x = Vec::with_capacity(d.nodes * inputs.len());
            d.gather(slot / d.months, slot % d.months, &inputs, &mut x);
            x
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_channels() -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::new("x", ChannelRole::Input, "1"),
            ChannelSpec::new("y", ChannelRole::Output, "1"),
        ]
    }

    fn dataset(members: usize, months: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> EnsembleDataset {
        let nodes = grid::vertex_count(0);
        let mut values = Vec::new();
        for m in 0..members {
            for t in 0..months {
                for n in 0..nodes {
                    for c in 0..2 {
                        values.push(f(m, t, n, c));
                    }
                }
            }
        }
        EnsembleDataset::new(0, 1, members, months, two_channels(), values).unwrap()
    }

    #[test]
    fn save_load_round_trip_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = grid::vertex_count(1);
        let values: Vec<f32> = (0..2 * 24 * nodes * 2).map(|i| (i % 17) as f32).collect();
        let ds = EnsembleDataset::new(1, 3, 2, 24, two_channels(), values).unwrap();
        ds.save(dir.path()).unwrap();
        let back = EnsembleDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.values().len(), 2 * 24 * 42 * 2);

        // 43 nodes claimed as level 1
        let bad: Vec<f32> = vec![0.0; 24 * 43 * 2];
        binio::write_f32_file(&dir.path().join("member_000.f32"), &bad).unwrap();
        let err = EnsembleDataset::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        assert!(err.to_string().contains("43"), "{err}");
    }

    #[test]
    fn non_finite_payload_names_location() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(2, 3, |_, _, _, _| 1.0);
        ds.save(dir.path()).unwrap();
        let mut data = ds.member(1).to_vec();
        data[2 * 24 + 5] = f32::INFINITY;
        binio::write_f32_file(&dir.path().join("member_001.f32"), &data).unwrap();
        let err = EnsembleDataset::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(err.to_string().contains("member 1, time 2"), "{err}");
    }

    #[test]
    fn unknown_role_rejected() {
        let dir = tempfile::tempdir().unwrap();
        dataset(1, 2, |_, _, _, _| 0.0).save(dir.path()).unwrap();
        let p = dir.path().join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&p).unwrap().replace("\"output\"", "\"diagnostic\"");
        std::fs::write(&p, text).unwrap();
        let err = EnsembleDataset::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown channel role"), "{err}");
    }

    #[test]
    fn climatology_examples() {
        let sym = dataset(2, 12, |m, _, _, _| if m == 0 { 3.5 } else { -3.5 });
        let clim = compute_climatology(&sym);
        assert!(clim.values.iter().all(|&v| v == 0.0));

        let three = dataset(3, 1, |m, _, _, _| (m + 1) as f32);
        assert_eq!(compute_climatology(&three).get(1, 4, 1), 2.0);

        let single = dataset(1, 12, |_, t, n, c| (t * 7 + n + c) as f32);
        let anoms = deseasonalize(&single, &compute_climatology(&single)).unwrap();
        assert!(anoms.data().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn calendar_misalignment_rejected() {
        let short = dataset(1, 6, |_, _, _, _| 1.0);
        let clim = compute_climatology(&short);
        let later = EnsembleDataset::new(0, 7, 1, 6, two_channels(), short.values().to_vec()).unwrap();
        let err = deseasonalize(&later, &clim).unwrap_err();
        assert!(err.to_string().contains("calendar misalignment"), "{err}");
    }

    #[test]
    fn seasonal_cycle_is_removed() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = dataset(200, 24, |_, t, n, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (10.0 * (std::f64::consts::TAU * t as f64 / 12.0 + n as f64).sin() + z) as f32
        });
        let anoms = deseasonalize(&ds, &compute_climatology(&ds)).unwrap();
        let var: f64 = anoms.data().values().iter().map(|&v| (v as f64).powi(2)).sum::<f64>()
            / anoms.data().values().len() as f64;
        // ensemble of 200 x 2 years per month: variance (1 - 1/400) of the noise
        assert!((var - 1.0).abs() < 0.05, "anomaly variance {var}");
    }

    #[test]
    fn standardize_and_invert() {
        let ds = dataset(4, 12, |m, t, n, c| ((m * 31 + t * 7 + n * 3 + c) % 11) as f32 * (c + 1) as f32);
        let anoms = deseasonalize(&ds, &compute_climatology(&ds)).unwrap();
        let z = standardize(&anoms, &[0, 1, 2, 3]).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = z.data().values().iter().skip(c).step_by(2).map(|&v| v as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-3, "{mean} {std}");
        }
        let back = z.invert_standardize();
        for (a, b) in back.data().values().iter().zip(anoms.data().values()) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
        assert!(standardize(&anoms, &[]).is_err());
    }

    #[test]
    fn constant_channel_zero_variance() {
        let ds = dataset(2, 12, |m, t, _, c| if c == 0 { (m + t) as f32 } else { 4.0 });
        let anoms = deseasonalize(&ds, &compute_climatology(&ds)).unwrap();
        let err = standardize(&anoms, &[0, 1]).unwrap_err();
        assert!(err.to_string().contains("\"y\""), "{err}");
    }

    #[test]
    fn lag_pair_examples() {
        let ds = dataset(2, 10, |m, t, n, c| (m * 1000 + t * 10 + n + c * 100) as f32);
        let clim = Climatology {
            values: vec![0.0; 12 * 12 * 2],
            ..compute_climatology(&ds)
        };
        let anoms = deseasonalize(&ds, &clim).unwrap();
        let one = make_lag_pairs_for(&anoms, 3, &[0]).unwrap();
        assert_eq!(one.len(), 7);
        let both = make_lag_pairs(&anoms, 3).unwrap();
        assert_eq!(both.len(), 14);
        for (i, &(m, t)) in both.provenance.iter().enumerate() {
            // input x at (m, t), target y at (m, t+3), node 0
            assert_eq!(both.input(i)[0], (m * 1000 + t * 10) as f64);
            assert_eq!(both.target(i)[0], (m * 1000 + (t + 3) * 10 + 100) as f64);
        }
        let zero = make_lag_pairs(&anoms, 0).unwrap();
        assert_eq!(zero.target(5)[0] - 100.0, zero.input(5)[0]);
        assert!(make_lag_pairs(&anoms, 10).is_err());
    }

    #[test]
    fn split_examples() {
        let s = split(10, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split(10, [0.6, 0.2, 0.2], 1).unwrap());
        assert!(split(2, [0.4, 0.3, 0.3], 1).is_err());
        assert!(split(10, [0.5, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn fluctuation_sampling() {
        let ds = dataset(3, 4, |m, t, n, _| (m * 100 + t * 10 + n) as f32);
        let clim = Climatology {
            values: vec![0.0; 12 * 12 * 2],
            ..compute_climatology(&ds)
        };
        let anoms = deseasonalize(&ds, &clim).unwrap();
        let all = sample_fluctuations(&anoms, 12, 3).unwrap();
        let mut firsts: Vec<i64> = all.iter().map(|x| x[0] as i64).collect();
        firsts.sort_unstable();
        let expected: Vec<i64> = (0..3).flat_map(|m| (0..4).map(move |t| m * 100 + t * 10)).collect();
        assert_eq!(firsts, expected);
        assert_eq!(sample_fluctuations(&anoms, 5, 9).unwrap(), sample_fluctuations(&anoms, 5, 9).unwrap());
        assert!(sample_fluctuations(&anoms, 13, 3).is_err());
    }

    proptest! {
        #[test]
        fn lag_pair_count_closed_form(members in 1usize..4, months in 1usize..30, lag in 0usize..30) {
            let ds = dataset(members, months, |m, t, n, c| (m + t + n + c) as f32);
            let anoms = deseasonalize(&ds, &compute_climatology(&ds)).unwrap();
            match make_lag_pairs(&anoms, lag) {
                Ok(p) => {
                    prop_assert_eq!(p.len(), members * months.saturating_sub(lag));
                    prop_assert!(p.provenance.iter().all(|&(_, t)| t + lag < months));
                }
                Err(_) => prop_assert!(lag >= months),
            }
        }

        #[test]
        fn splits_partition_members(members in 3usize..60, a in 0.05f64..1.0, b in 0.05f64..1.0, c in 0.05f64..1.0, seed: u64) {
            let t = a + b + c;
            let s = split(members, [a / t, b / t, 1.0 - a / t - b / t], seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            prop_assert!(!s.train.is_empty() && !s.validation.is_empty() && !s.test.is_empty());
            all.sort_unstable();
            prop_assert_eq!(all, (0..members).collect::<Vec<_>>());
        }

        #[test]
        fn anomalies_have_zero_ensemble_mean(members in 1usize..5, months in 1usize..30, seed: u64) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = dataset(members, months, |_, _, _, c| 280.0 * c as f32 + rng.random_range(-5.0f32..5.0));
            let anoms = deseasonalize(&ds, &compute_climatology(&ds)).unwrap();
            let a = anoms.data();
            for month in 1..=12usize {
                let times: Vec<usize> = (0..months).filter(|&t| a.calendar_month(t) == month).collect();
                if times.is_empty() { continue; }
                for n in 0..a.nodes() {
                    for c in 0..2 {
                        let mut s = 0.0f64;
                        for m in 0..members { for &t in &times { s += a.value(m, t, n, c) as f64; } }
                        prop_assert!((s / (members * times.len()) as f64).abs() < 1e-5 * 2.9);
                    }
                }
            }
            let back = anoms.reconstruct().unwrap();
            for ((x, y), a) in back.values().iter().zip(ds.values()).zip(a.values()) {
                prop_assert!((x - y).abs() <= (y.abs() + a.abs()) * f32::EPSILON);
            }
        }
    }
}
