use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const RUN_MANIFEST: &str = "run.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Everything needed to repeat a run. Wall-clock timings live in the
/// [`TIMINGS_FILE`] sidecar so that repeated runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved configuration after merging files, flags and defaults.
    pub config: Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    /// Relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub timings: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Value, seed: u64) -> Self {
        Self {
            subcommand: subcommand.into(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions: BTreeMap::from([("fdtkit".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
            timings: TIMINGS_FILE.into(),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.into(), path.display().to_string());
        self
    }

    pub fn output(mut self, name: &str, relative: &str) -> Self {
        self.outputs.insert(name.into(), relative.into());
        self
    }

    pub fn load(path: &Path) -> fdtkit::Result<Self> {
        fdtkit::binio::read_json(path)
    }
}

#[derive(Debug, Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

/// Wall-clock stopwatch for the timings sidecar.
pub struct Timings {
    start: Instant,
    last: Instant,
    stages: Vec<Stage>,
}

impl Timings {
    pub fn start() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            stages: Vec::new(),
        }
    }

    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push(Stage {
            name: name.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }

    pub fn write(&self, dir: &Path, subcommand: &str) -> fdtkit::Result<()> {
        let body = serde_json::json!({
            "subcommand": subcommand,
            "stages": self.stages,
            "total_seconds": self.start.elapsed().as_secs_f64(),
        });
        fdtkit::binio::write_json(&dir.join(TIMINGS_FILE), &body)
    }
}

/// Writes the manifest and its timings sidecar into `dir`.
pub fn finish(dir: &Path, manifest: &RunManifest, timings: &Timings) -> fdtkit::Result<()> {
    fdtkit::binio::write_json(&dir.join(RUN_MANIFEST), manifest)?;
    timings.write(dir, &manifest.subcommand)
}
