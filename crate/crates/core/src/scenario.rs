//! Regional forcing boxes, forcing fields and end-to-end what-if runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dataio::{sample_fluctuations, AnomalyDataset};
use crate::emulator::LagModelBank;
use crate::error::{ensure, Error, Result};
use crate::fdt::{emulator_response, IntegrationRule, ResponseEstimate};
use crate::field::NodeField;
use crate::grid::{build_icosphere, IcoMesh};

pub const DEFAULT_SAMPLES: usize = 480;

/// Closed lat/lon box; `lon_min > lon_max` wraps across 0°.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    #[serde(default)]
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionBox {
    pub fn new(name: &str, lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let b = Self {
            name: name.to_string(),
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Problems with the box, as `(field, message)`.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (field, v) in [("lat_min", self.lat_min), ("lat_max", self.lat_max)] {
            if !(-90.0..=90.0).contains(&v) {
                out.push((field, format!("{v} is outside [-90, 90]")));
            }
        }
        if !(self.lat_min < self.lat_max) {
            out.push(("lat_max", format!("lat_max {} must exceed lat_min {}", self.lat_max, self.lat_min)));
        }
        for (field, v) in [("lon_min", self.lon_min), ("lon_max", self.lon_max)] {
            if !(0.0..360.0).contains(&v) {
                out.push((field, format!("{v} is outside [0, 360)")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::Validation(format!("region {:?} {field}: {msg}", self.name))),
        }
    }

    pub fn wraps(&self) -> bool {
        self.lon_min > self.lon_max
    }

    /// Boundary-inclusive membership; `lon` in `[0, 360)`.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let lat_ok = self.lat_min <= lat && lat <= self.lat_max;
        let lon_ok = if self.wraps() {
            lon >= self.lon_min || lon <= self.lon_max
        } else {
            self.lon_min <= lon && lon <= self.lon_max
        };
        lat_ok && lon_ok
    }
}

/// North-east Pacific, south-east Pacific and south-east Atlantic boxes.
pub fn presets() -> Vec<RegionBox> {
    vec![
        RegionBox {
            name: "NEP".into(),
            lat_min: 0.0,
            lat_max: 30.0,
            lon_min: 210.0,
            lon_max: 250.0,
        },
        RegionBox {
            name: "SEP".into(),
            lat_min: -30.0,
            lat_max: 0.0,
            lon_min: 250.0,
            lon_max: 290.0,
        },
        RegionBox {
            name: "SEA".into(),
            lat_min: -30.0,
            lat_max: 0.0,
            lon_min: 345.0,
            lon_max: 25.0,
        },
    ]
}

pub fn preset(name: &str) -> Option<RegionBox> {
    presets().into_iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// A region given by preset name or as an explicit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionRef {
    Preset(String),
    Box(RegionBox),
}

impl RegionRef {
    pub fn resolve(&self) -> Result<RegionBox> {
        match self {
            RegionRef::Preset(name) => preset(name).ok_or_else(|| {
                Error::Validation(format!("unknown region preset {name:?} (expected NEP, SEP or SEA)"))
            }),
            RegionRef::Box(b) => {
                b.validate()?;
                Ok(b.clone())
            }
        }
    }
}

pub fn region_mask(mesh: &IcoMesh, region: &RegionBox) -> Vec<bool> {
    mesh.lat().iter().zip(mesh.lon()).map(|(&lat, &lon)| region.contains(lat, lon)).collect()
}

/// Each named channel gets its amplitude on the union of the region masks
/// and zero elsewhere; channels not named stay zero.
pub fn build_forcing(
    mesh: &IcoMesh,
    regions: &[RegionBox],
    amplitudes: &BTreeMap<String, f64>,
    input_channels: &[String],
) -> Result<NodeField> {
    let c = input_channels.len();
    let mut columns = Vec::with_capacity(amplitudes.len());
    for (name, &amp) in amplitudes {
        let idx = input_channels
            .iter()
            .position(|ch| ch == name)
            .ok_or_else(|| Error::Validation(format!("unknown input channel {name:?} (inputs are {input_channels:?})")))?;
        ensure!(amp.is_finite(), NonFinite, "amplitude for {name:?} is {amp}");
        columns.push((idx, amp));
    }
    let mut field = NodeField::zeros(input_channels.to_vec(), mesh.len());
    for (node, (&lat, &lon)) in mesh.lat().iter().zip(mesh.lon()).enumerate() {
        if regions.iter().any(|r| r.contains(lat, lon)) {
            for &(idx, amp) in &columns {
                field.values[node * c + idx] = amp;
            }
        }
    }
    Ok(field)
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_rule() -> IntegrationRule {
    IntegrationRule::InterpQuadratic
}

fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}

/// A regional what-if experiment. `lags` defaults to every lag in the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationScenario {
    pub regions: Vec<RegionRef>,
    #[serde(default)]
    pub amplitudes: BTreeMap<String, f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub lags: Option<Vec<usize>>,
    #[serde(default = "default_rule")]
    pub rule: IntegrationRule,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// One offending field of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProblem {
    pub field: String,
    pub message: String,
}

impl PerturbationScenario {
    pub fn load(path: &Path) -> Result<Self> {
        binio::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_json(path, self)
    }

    /// Every schema problem, for structured error reports.
    pub fn problems(&self) -> Vec<FieldProblem> {
        let mut out = Vec::new();
        let mut push = |field: String, message: String| out.push(FieldProblem { field, message });
        if self.regions.is_empty() {
            push("regions".into(), "at least one region is required".into());
        }
        for (i, r) in self.regions.iter().enumerate() {
            match r {
                RegionRef::Preset(name) if preset(name).is_none() => push(
                    format!("regions[{i}]"),
                    format!("unknown preset {name:?} (expected NEP, SEP or SEA)"),
                ),
                RegionRef::Box(b) => {
                    for (field, msg) in b.problems() {
                        push(format!("regions[{i}].{field}"), msg);
                    }
                }
                _ => {}
            }
        }
        for (name, v) in &self.amplitudes {
            if !v.is_finite() {
                push(format!("amplitudes.{name}"), format!("{v} is not finite"));
            }
        }
        if self.samples == 0 {
            push("samples".into(), "must be at least 1".into());
        }
        if let Some(lags) = &self.lags {
            if lags.is_empty() {
                push("lags".into(), "must not be empty".into());
            } else if !lags.windows(2).all(|w| w[0] < w[1]) {
                push("lags".into(), "must be sorted ascending without duplicates".into());
            } else if let Err(e) = crate::fdt::integration_weights(lags, self.rule) {
                push("rule".into(), e.to_string());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            return Ok(());
        }
        let text: Vec<String> = problems.iter().map(|p| format!("{}: {}", p.field, p.message)).collect();
        Err(Error::Validation(format!("invalid scenario: {}", text.join("; "))))
    }

    pub fn resolve_regions(&self) -> Result<Vec<RegionBox>> {
        self.regions.iter().map(RegionRef::resolve).collect()
    }
}

/// Illustrative "brightening-like" setup: a negative shortwave cloud
/// radiative anomaly over the north-east Pacific box. Not derived from any
/// model run; the amplitude is an arbitrary example.
pub fn example_scenario() -> PerturbationScenario {
    PerturbationScenario {
        regions: vec![RegionRef::Preset("NEP".into())],
        amplitudes: BTreeMap::from([("cres".to_string(), -10.0)]),
        samples: DEFAULT_SAMPLES,
        lags: None,
        rule: IntegrationRule::InterpQuadratic,
        seed: crate::DEFAULT_SEED,
    }
}

/// Everything a scenario run feeds into the estimator.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub regions: Vec<RegionBox>,
    pub forcing: NodeField,
    /// Physical-unit input states, `[node][input channel]`.
    pub fluctuations: Vec<Vec<f64>>,
}

/// `n` input states drawn from `anoms`, returned in physical units.
pub fn physical_fluctuations(anoms: &AnomalyDataset, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut states = sample_fluctuations(anoms, n, seed)?;
    if let Some(norm) = anoms.norm_stats() {
        let d = anoms.data();
        let scales: Vec<(f64, f64)> = d
            .input_indices()
            .iter()
            .map(|&i| {
                let name = &d.channels()[i].name;
                norm.get(name)
                    .map(|s| (s.mean, s.std))
                    .ok_or_else(|| Error::Validation(format!("norm stats lack channel {name:?}")))
            })
            .collect::<Result<_>>()?;
        let c = scales.len();
        for x in &mut states {
            for (k, v) in x.iter_mut().enumerate() {
                let (mean, std) = scales[k % c];
                *v = *v * std + mean;
            }
        }
    }
    Ok(states)
}

pub fn prepare(
    scenario: &PerturbationScenario,
    mesh: &IcoMesh,
    bank: &LagModelBank,
    anoms: &AnomalyDataset,
) -> Result<PreparedScenario> {
    scenario.validate()?;
    let shape = bank.shape();
    ensure!(
        mesh.len() == shape.nodes && anoms.data().nodes() == shape.nodes,
        Shape,
        "mesh ({} nodes), dataset ({} nodes) and bank ({} nodes) disagree",
        mesh.len(),
        anoms.data().nodes(),
        shape.nodes
    );
    let inputs: Vec<String> = anoms.data().input_indices().iter().map(|&i| anoms.data().channels()[i].name.clone()).collect();
    ensure!(
        inputs == shape.input_channels,
        Shape,
        "dataset inputs {inputs:?} differ from bank inputs {:?}",
        shape.input_channels
    );
    if let Some(lags) = &scenario.lags {
        let missing: Vec<usize> = lags.iter().copied().filter(|&l| bank.get(l).is_none()).collect();
        ensure!(missing.is_empty(), Validation, "bank has no models for lags {missing:?} (bank lags {:?})", bank.lags());
    }
    let regions = scenario.resolve_regions()?;
    let forcing = build_forcing(mesh, &regions, &scenario.amplitudes, &shape.input_channels)?;
    let fluctuations = physical_fluctuations(anoms, scenario.samples, scenario.seed)?;
    Ok(PreparedScenario {
        regions,
        forcing,
        fluctuations,
    })
}

/// Perturbed-minus-unperturbed emulator response for a scenario on a prebuilt mesh.
pub fn run_scenario_on(
    scenario: &PerturbationScenario,
    mesh: &IcoMesh,
    bank: &LagModelBank,
    anoms: &AnomalyDataset,
) -> Result<ResponseEstimate> {
    let prepared = prepare(scenario, mesh, bank, anoms)?;
    let mut est = emulator_response(
        bank,
        scenario.lags.as_deref(),
        &prepared.fluctuations,
        &prepared.forcing,
        scenario.rule,
    )?;
    est.seed = Some(scenario.seed);
    est.scenario = Some(scenario.clone());
    Ok(est)
}

pub fn run_scenario(scenario: &PerturbationScenario, bank: &LagModelBank, anoms: &AnomalyDataset) -> Result<ResponseEstimate> {
    let mesh = build_icosphere(bank.mesh_level())?;
    run_scenario_on(scenario, &mesh, bank, anoms)
}
