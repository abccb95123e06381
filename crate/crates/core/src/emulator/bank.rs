use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_linear, train, EmulatorModel, MlpConfig, ModelKind, ModelShape};
use crate::binio;
use crate::dataio::{lag_pairs_at, lag_slots, AnomalyDataset, LagPairs};
use crate::error::{ensure, Error, Result};

pub const BANK_MANIFEST: &str = "bank.json";

/// What to train for every lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmulatorSpec {
    Mlp(MlpConfig),
    Linear { ridge: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankOptions {
    pub emulator: EmulatorSpec,
    pub train_members: Vec<usize>,
    /// Required for MLP banks (best-epoch selection).
    pub validation_members: Vec<usize>,
    /// Random subset of training pairs per lag; all pairs when `None`.
    pub max_train_pairs: Option<usize>,
    pub max_validation_pairs: Option<usize>,
    /// Lags trained concurrently; 1 trains them one after another.
    pub parallel_lags: usize,
    /// Base seed; each lag uses [`lag_seed`] of it.
    pub seed: u64,
}

/// Independent per-lag seed (SplitMix64 finalizer of the pair).
pub fn lag_seed(seed: u64, lag: usize) -> u64 {
    let mut z = seed ^ (lag as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One model per lag, all with identical shapes and standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LagModelBank {
    mesh_level: u32,
    models: BTreeMap<usize, EmulatorModel>,
    options: Option<BankOptions>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankManifest {
    mesh_level: u32,
    kind: ModelKind,
    lags: Vec<usize>,
    shape: ModelShape,
    models: Vec<String>,
    options: Option<BankOptions>,
}

fn model_file(lag: usize) -> String {
    format!("lag_{lag:03}.bin")
}

impl LagModelBank {
    pub fn new(mesh_level: u32, models: Vec<EmulatorModel>) -> Result<Self> {
        ensure!(!models.is_empty(), Validation, "a model bank needs at least one model");
        let first = &models[0];
        let mut map = BTreeMap::new();
        for m in &models {
            ensure!(
                m.shape == first.shape && m.kind == first.kind,
                Shape,
                "model for lag {} does not share the bank's shape, standardization or kind",
                m.lag
            );
            ensure!(
                m.shape.nodes == crate::grid::vertex_count(mesh_level),
                Shape,
                "model has {} nodes but mesh level {mesh_level} has {}",
                m.shape.nodes,
                crate::grid::vertex_count(mesh_level)
            );
            ensure!(map.insert(m.lag, m.clone()).is_none(), Validation, "duplicate lag {} in bank", m.lag);
        }
        Ok(Self {
            mesh_level,
            models: map,
            options: None,
        })
    }

    pub fn mesh_level(&self) -> u32 {
        self.mesh_level
    }

    pub fn lags(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, lag: usize) -> Option<&EmulatorModel> {
        self.models.get(&lag)
    }

    pub fn models(&self) -> impl Iterator<Item = &EmulatorModel> {
        self.models.values()
    }

    pub fn shape(&self) -> &ModelShape {
        &self.models.values().next().expect("bank is non-empty").shape
    }

    pub fn kind(&self) -> ModelKind {
        self.models.values().next().expect("bank is non-empty").kind
    }

    pub fn options(&self) -> Option<&BankOptions> {
        self.options.as_ref()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        let mut files = Vec::new();
        for (lag, model) in &self.models {
            let name = model_file(*lag);
            model.save(&dir.join(&name))?;
            files.push(name);
        }
        binio::write_json(
            &dir.join(BANK_MANIFEST),
            &BankManifest {
                mesh_level: self.mesh_level,
                kind: self.kind(),
                lags: self.lags(),
                shape: self.shape().clone(),
                models: files,
                options: self.options.clone(),
            },
        )
    }

    /// Loads from a bank directory or its manifest path.
    pub fn load(path: &Path) -> Result<Self> {
        let (dir, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(BANK_MANIFEST))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let manifest: BankManifest = binio::read_json(&manifest_path)?;
        if manifest.lags.len() != manifest.models.len() {
            return Err(Error::format(&manifest_path, "lags and model files differ in length"));
        }
        let mut models = Vec::with_capacity(manifest.models.len());
        for (lag, file) in manifest.lags.iter().zip(&manifest.models) {
            let model = EmulatorModel::load(&dir.join(file))?;
            if model.lag != *lag || model.shape != manifest.shape {
                return Err(Error::format(dir.join(file), format!("model does not match bank entry for lag {lag}")));
            }
            models.push(model);
        }
        let mut bank = Self::new(manifest.mesh_level, models)?;
        bank.options = manifest.options;
        Ok(bank)
    }
}

fn subsample(slots: Vec<(usize, usize)>, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    match max {
        Some(k) if k < slots.len() => {
            let mut picked = index::sample(rng, slots.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| slots[i]).collect()
        }
        _ => slots,
    }
}

fn train_one(anoms: &AnomalyDataset, lag: usize, opts: &BankOptions) -> Result<EmulatorModel> {
    let seed = lag_seed(opts.seed, lag);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs_for = |members: &[usize], max: Option<usize>, rng: &mut ChaCha8Rng| -> Result<LagPairs> {
        let slots = subsample(lag_slots(anoms, lag, members), max, rng);
        ensure!(!slots.is_empty(), Validation, "no pairs available for lag {lag}");
        lag_pairs_at(anoms, lag, &slots)
    };
    let pairs = pairs_for(&opts.train_members, opts.max_train_pairs, &mut rng)?;
    match &opts.emulator {
        EmulatorSpec::Linear { ridge } => fit_linear(&pairs, *ridge, anoms.norm_stats()),
        EmulatorSpec::Mlp(config) => {
            let validation = pairs_for(&opts.validation_members, opts.max_validation_pairs, &mut rng)?;
            let shape = ModelShape::for_pairs(&pairs, anoms.norm_stats())?;
            let config = MlpConfig {
                seed,
                ..config.clone()
            };
            let model = EmulatorModel::init_mlp(lag, shape, config)?;
            train(&model, &pairs, &validation)
        }
    }
}

/// Trains one model per lag. Each lag draws its pair subsets and weights from
/// its own seed, so the result does not depend on `parallel_lags`.
pub fn train_lag_bank(anoms: &AnomalyDataset, lags: &[usize], opts: &BankOptions) -> Result<LagModelBank> {
    ensure!(!lags.is_empty(), Validation, "lag list is empty");
    let mut sorted = lags.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    ensure!(sorted.len() == lags.len(), Validation, "lag list {lags:?} contains duplicates");
    let months = anoms.data().months();
    if let Some(&bad) = sorted.iter().find(|&&l| l >= months) {
        return Err(Error::OutOfRange(format!("lag {bad} must be below the {months} available months")));
    }
    ensure!(!opts.train_members.is_empty(), Validation, "no training members");
    if matches!(opts.emulator, EmulatorSpec::Mlp(_)) {
        ensure!(!opts.validation_members.is_empty(), Validation, "mlp banks need validation members");
    }
    if let EmulatorSpec::Mlp(c) = &opts.emulator {
        c.validate()?;
    }
    let models: Vec<EmulatorModel> = if opts.parallel_lags > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel_lags)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {} worker threads: {e}", opts.parallel_lags)))?;
        pool.install(|| sorted.par_iter().map(|&lag| train_one(anoms, lag, opts)).collect::<Result<_>>())?
    } else {
        sorted.iter().map(|&lag| train_one(anoms, lag, opts)).collect::<Result<_>>()?
    };
    let mut bank = LagModelBank::new(anoms.data().mesh_level(), models)?;
    bank.options = Some(opts.clone());
    Ok(bank)
}
