use std::path::{Path, PathBuf};

use fdtkit::binio;
use fdtkit::dataio::{compute_climatology, deseasonalize, split, standardize, AnomalyDataset, EnsembleDataset, MemberSplit};
use fdtkit::emulator::{train_lag_bank, BankOptions, EmulatorSpec, LagModelBank};
use fdtkit::eval::evaluate_bank;
use fdtkit::fdt::{classical_response, IntegrationRule, StateSeries};
use fdtkit::grid::build_icosphere;
use fdtkit::scenario::{build_forcing, run_scenario_on, PerturbationScenario};
use fdtkit::synth::{make_truth_system, simulate_from, TruthSpec};
use fdtkit::DEFAULT_SEED;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{finish, RunManifest, Timings};
use crate::merge::{self, Flags};
use crate::{
    parse_lags, CliError, EvalArgs, IcosphereArgs, PreprocessArgs, RespondArgs, ServeArgs, SynthArgs, TrainArgs,
};

pub const SPLIT_FILE: &str = "split.json";
/// Lags used by the classical estimate when neither scenario nor bank names any.
pub const DEFAULT_CLASSICAL_LAGS: &str = "0-40";

type Outcome = Result<(), CliError>;

fn read_config(path: Option<&PathBuf>) -> Result<Option<Value>, CliError> {
    path.map(|p| binio::read_json::<Value>(p).map_err(CliError::from)).transpose()
}

fn resolve<T: for<'de> Deserialize<'de>>(file: Option<Value>, flags: &Flags, what: &str) -> Result<(T, Value), CliError> {
    let (merged, warnings) = merge::merge(file, flags).map_err(CliError::validation)?;
    for w in warnings {
        eprintln!("fdtkit: warning: {w}");
    }
    let typed: T = serde_json::from_value(merged.clone()).map_err(|e| CliError::validation(format!("invalid {what}: {e}")))?;
    Ok((typed, merged))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn opt<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|x| to_value(&x))
}

pub fn icosphere(a: IcosphereArgs) -> Outcome {
    let mut timings = Timings::start();
    let mesh = build_icosphere(a.level)?;
    timings.lap("build");
    mesh.export(&a.out)?;
    timings.lap("export");
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let manifest = RunManifest::new("icosphere", json!({ "level": a.level, "vertex_count": mesh.len() }), seed)
        .output("mesh", fdtkit::grid::MESH_MANIFEST)
        .output("vertices", fdtkit::grid::VERTICES_FILE);
    finish(&a.out, &manifest, &timings)?;
    println!("mesh level {}: {} vertices -> {}", a.level, mesh.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    #[serde(default)]
    truth: TruthSpec,
    #[serde(default = "default_members")]
    members: usize,
    #[serde(default = "default_months")]
    months: usize,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
    #[serde(default = "default_start_month")]
    start_month: u8,
    /// Seeds the system (`truth.seed` is replaced by it) and, offset by one,
    /// the simulation.
    seed: u64,
}

fn default_members() -> usize {
    20
}

fn default_months() -> usize {
    1200
}

fn default_burn_in() -> usize {
    500
}

fn default_start_month() -> u8 {
    1
}

pub fn synth(a: SynthArgs) -> Outcome {
    let mut timings = Timings::start();
    let mut flags = Flags::default();
    flags.set("truth.mesh_level", "mesh-level", opt(a.mesh_level));
    flags.set("truth.spectral_radius", "spectral-radius", opt(a.spectral_radius));
    flags.set("truth.teleconnection_strength", "teleconnection-strength", opt(a.teleconnection_strength));
    flags.set("truth.seasonal_amplitude", "seasonal-amplitude", opt(a.seasonal_amplitude));
    flags.set("truth.cubic_damping", "cubic-damping", opt(a.cubic_damping));
    flags.set("members", "members", opt(a.members));
    flags.set("months", "months", opt(a.months));
    flags.set("burn_in", "burn-in", opt(a.burn_in));
    flags.set("start_month", "start-month", opt(a.start_month));
    flags.set("seed", "seed", opt(a.seed));
    let file = read_config(a.config.as_ref())?;
    let (merged, warnings) = merge::merge(file, &flags).map_err(CliError::validation)?;
    for w in warnings {
        eprintln!("fdtkit: warning: {w}");
    }
    let mut merged = merged;
    merge::default_at(&mut merged, "seed", json!(DEFAULT_SEED));
    let mut config: SynthConfig =
        serde_json::from_value(merged).map_err(|e| CliError::validation(format!("invalid synth config: {e}")))?;
    config.truth.seed = config.seed;
    let system = make_truth_system(&config.truth)?;
    timings.lap("system");
    let data = simulate_from(
        &system,
        config.members,
        config.months,
        config.burn_in,
        config.seed.wrapping_add(1),
        config.start_month,
    )?;
    timings.lap("simulate");
    system.save(&a.out.join("truth"))?;
    data.save(&a.out.join("data"))?;
    timings.lap("write");
    let mut manifest = RunManifest::new("synth", to_value(&config), config.seed)
        .output("truth", "truth")
        .output("data", "data");
    if let Some(p) = &a.config {
        manifest = manifest.input("config", p);
    }
    finish(&a.out, &manifest, &timings)?;
    println!(
        "synthetic system: D = {}, spectral radius {:.4}; {} members x {} months -> {}",
        system.dim(),
        system.spec().spectral_radius,
        config.members,
        config.months,
        a.out.display()
    );
    Ok(())
}

fn parse_fractions(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::validation(format!("--split expects three numbers, got {text:?}")))?;
    parts
        .try_into()
        .map_err(|_| CliError::validation(format!("--split expects three fractions, got {text:?}")))
}

pub fn preprocess(a: PreprocessArgs) -> Outcome {
    let mut timings = Timings::start();
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let fractions = parse_fractions(&a.split)?;
    let data = EnsembleDataset::load(&a.data)?;
    timings.lap("load");
    let members = split(data.members(), fractions, seed)?;
    let clim = compute_climatology(&data);
    let mut anoms = deseasonalize(&data, &clim)?;
    if !a.no_standardize {
        anoms = standardize(&anoms, &members.train)?;
    }
    timings.lap("anomalies");
    anoms.save(&a.out)?;
    binio::write_json(&a.out.join(SPLIT_FILE), &members)?;
    timings.lap("write");
    let config = json!({ "split": fractions, "standardize": !a.no_standardize, "members": members });
    let manifest = RunManifest::new("preprocess", config, seed)
        .input("data", &a.data)
        .output("anomalies", fdtkit::dataio::DATASET_MANIFEST)
        .output("split", SPLIT_FILE);
    finish(&a.out, &manifest, &timings)?;
    println!(
        "anomalies for {} members ({} train / {} validation / {} test) -> {}",
        data.members(),
        members.train.len(),
        members.validation.len(),
        members.test.len(),
        a.out.display()
    );
    Ok(())
}

fn data_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    }
}

fn load_split(explicit: Option<&PathBuf>, data: &Path) -> Result<Option<(MemberSplit, PathBuf)>, CliError> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => data_dir(data).join(SPLIT_FILE),
    };
    if explicit.is_none() && !path.exists() {
        return Ok(None);
    }
    Ok(Some((binio::read_json(&path)?, path)))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    lags: Vec<usize>,
    emulator: EmulatorSpec,
    #[serde(default)]
    max_train_pairs: Option<usize>,
    #[serde(default)]
    max_validation_pairs: Option<usize>,
    seed: u64,
}

const MLP_KEYS: [&str; 8] = [
    "hidden_layers",
    "hidden_width",
    "layer_norm",
    "learning_rate",
    "lr_decay_per_epoch",
    "weight_decay",
    "epochs",
    "batch_size",
];

pub fn train(a: TrainArgs) -> Outcome {
    let mut timings = Timings::start();
    let lags = a.lags.as_deref().map(parse_lags).transpose().map_err(CliError::validation)?;
    let mut flags = Flags::default();
    flags.set("lags", "lags", opt(lags));
    flags.set("emulator.kind", "kind", opt(a.kind.clone()));
    flags.set("emulator.ridge", "ridge", opt(a.ridge));
    flags.set("emulator.hidden_layers", "hidden-layers", opt(a.hidden_layers));
    flags.set("emulator.hidden_width", "hidden-width", opt(a.hidden_width));
    flags.set("emulator.layer_norm", "layer-norm", opt(a.layer_norm));
    flags.set("emulator.learning_rate", "learning-rate", opt(a.learning_rate));
    flags.set("emulator.lr_decay_per_epoch", "lr-decay", opt(a.lr_decay));
    flags.set("emulator.weight_decay", "weight-decay", opt(a.weight_decay));
    flags.set("emulator.epochs", "epochs", opt(a.epochs));
    flags.set("emulator.batch_size", "batch-size", opt(a.batch_size));
    flags.set("max_train_pairs", "max-train-pairs", opt(a.max_train_pairs));
    flags.set("max_validation_pairs", "max-validation-pairs", opt(a.max_validation_pairs));
    flags.set("seed", "seed", opt(a.seed));
    let file = read_config(a.config.as_ref())?;
    let (mut merged, warnings) = merge::merge(file, &flags).map_err(CliError::validation)?;
    for w in warnings {
        eprintln!("fdtkit: warning: {w}");
    }
    merge::default_at(&mut merged, "emulator.kind", json!("mlp"));
    merge::default_at(&mut merged, "seed", json!(DEFAULT_SEED));
    if merge::get(&merged, "lags").is_none() {
        return Err(CliError::validation("no lags given: pass --lags or set lags in the config file"));
    }
    match merge::get(&merged, "emulator.kind").and_then(Value::as_str) {
        Some("linear") => {
            if let Some(k) = MLP_KEYS.iter().find(|k| merge::get(&merged, &format!("emulator.{k}")).is_some()) {
                return Err(CliError::validation(format!("{k} applies to mlp banks only")));
            }
            merge::default_at(&mut merged, "emulator.ridge", json!(0.0));
        }
        Some("mlp") => {
            if merge::get(&merged, "emulator.ridge").is_some() {
                return Err(CliError::validation("ridge applies to linear banks only"));
            }
        }
        other => return Err(CliError::validation(format!("unknown emulator kind {other:?} (expected mlp or linear)"))),
    }
    let config: TrainConfig =
        serde_json::from_value(merged).map_err(|e| CliError::validation(format!("invalid training config: {e}")))?;
    if a.parallel_lags == 0 {
        return Err(CliError::validation("--parallel-lags must be at least 1"));
    }
    let anoms = AnomalyDataset::load(&a.data)?;
    let (members, split_path) = match load_split(a.split.as_ref(), &a.data)? {
        Some(s) => s,
        None => {
            return Err(CliError::validation(format!(
                "no member split: run preprocess or pass --split (looked for {})",
                data_dir(&a.data).join(SPLIT_FILE).display()
            )))
        }
    };
    timings.lap("load");
    let opts = BankOptions {
        emulator: config.emulator.clone(),
        train_members: members.train.clone(),
        validation_members: members.validation.clone(),
        max_train_pairs: config.max_train_pairs,
        max_validation_pairs: config.max_validation_pairs,
        parallel_lags: a.parallel_lags,
        seed: config.seed,
    };
    let bank = train_lag_bank(&anoms, &config.lags, &opts)?;
    timings.lap("train");
    bank.save(&a.out)?;
    timings.lap("write");
    let mut manifest = RunManifest::new("train", to_value(&config), config.seed)
        .input("data", &a.data)
        .input("split", &split_path)
        .output("bank", fdtkit::emulator::BANK_MANIFEST);
    if let Some(p) = &a.config {
        manifest = manifest.input("config", p);
    }
    finish(&a.out, &manifest, &timings)?;
    println!("trained {} lag models ({:?}) -> {}", bank.len(), bank.lags(), a.out.display());
    Ok(())
}

fn parse_members(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::validation(format!("--members expects a comma list of indices, got {text:?}")))
}

pub fn eval(a: EvalArgs) -> Outcome {
    let mut timings = Timings::start();
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let anoms = AnomalyDataset::load(&a.data)?;
    let bank = LagModelBank::load(&a.bank)?;
    let members = match &a.members {
        Some(text) => parse_members(text)?,
        None => match load_split(a.split.as_ref(), &a.data)? {
            Some((s, _)) => s.test,
            None => (0..anoms.data().members()).collect(),
        },
    };
    timings.lap("load");
    let report = evaluate_bank(&bank, &anoms, &members, a.max_pairs, seed)?;
    timings.lap("evaluate");
    binio::ensure_dir(&a.out)?;
    binio::write_json(&a.out.join("metrics.json"), &report)?;
    let config = json!({ "members": members, "max_pairs": a.max_pairs });
    let manifest = RunManifest::new("eval", config, seed)
        .input("data", &a.data)
        .input("bank", &a.bank)
        .output("metrics", "metrics.json");
    finish(&a.out, &manifest, &timings)?;
    for lag in &report.lags {
        for c in &lag.channels {
            println!(
                "lag {:>3} {:>6}: rmse {:.4} (persistence {:.4}), spatial corr {:.3} (persistence {:.3})",
                lag.lag, c.channel, c.rmse, c.persistence_rmse, c.spatial_corr, c.persistence_corr
            );
        }
    }
    Ok(())
}

fn parse_region(text: &str) -> Result<Value, CliError> {
    let nums: Vec<&str> = text.split(',').collect();
    if nums.len() == 1 {
        return Ok(json!(text));
    }
    let v: Vec<f64> = nums
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::validation(format!("--region expects a preset or lat_min,lat_max,lon_min,lon_max, got {text:?}")))?;
    if v.len() != 4 {
        return Err(CliError::validation(format!("--region box needs 4 numbers, got {text:?}")));
    }
    Ok(json!({ "name": text, "lat_min": v[0], "lat_max": v[1], "lon_min": v[2], "lon_max": v[3] }))
}

fn parse_amplitudes(items: &[String]) -> Result<Option<Value>, CliError> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut map = serde_json::Map::new();
    for item in items {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--amplitude expects channel=value, got {item:?}")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("--amplitude value {value:?} is not a number")))?;
        map.insert(name.trim().to_string(), json!(v));
    }
    Ok(Some(Value::Object(map)))
}

pub fn respond(a: RespondArgs) -> Outcome {
    let mut timings = Timings::start();
    let regions = if a.regions.is_empty() {
        None
    } else {
        Some(Value::Array(a.regions.iter().map(|r| parse_region(r)).collect::<Result<_, _>>()?))
    };
    let lags = a.lags.as_deref().map(parse_lags).transpose().map_err(CliError::validation)?;
    let rule = a
        .rule
        .as_deref()
        .map(|r| r.parse::<IntegrationRule>())
        .transpose()
        .map_err(CliError::from)?;
    let mut flags = Flags::default();
    flags.set("regions", "region", regions);
    flags.set("amplitudes", "amplitude", parse_amplitudes(&a.amplitudes)?);
    flags.set("samples", "samples", opt(a.samples));
    flags.set("lags", "lags", opt(lags));
    flags.set("rule", "rule", opt(rule));
    flags.set("seed", "seed", opt(a.seed));
    let file = read_config(a.scenario.as_ref())?;
    let (scenario, _) = resolve::<PerturbationScenario>(file, &flags, "scenario")?;
    if !scenario.problems().is_empty() {
        let list: Vec<String> = scenario.problems().iter().map(|p| format!("{}: {}", p.field, p.message)).collect();
        return Err(CliError::validation(format!("invalid scenario: {}", list.join("; "))));
    }
    if a.bank.is_none() && a.skip_classical {
        return Err(CliError::validation("nothing to do: no --bank and --skip-classical given"));
    }
    let anoms = AnomalyDataset::load(&a.data)?;
    let mesh = build_icosphere(anoms.data().mesh_level())?;
    let bank = a.bank.as_ref().map(|p| LagModelBank::load(p)).transpose()?;
    timings.lap("load");
    binio::ensure_dir(&a.out)?;
    let mut outputs = vec![("scenario", "scenario.json")];
    if let Some(bank) = &bank {
        let est = run_scenario_on(&scenario, &mesh, bank, &anoms)?;
        est.save(&a.out.join("emulator"))?;
        timings.lap("emulator");
        outputs.push(("emulator", "emulator"));
        print_total("emulator", &est.total);
    }
    if !a.skip_classical {
        let lags = match (&scenario.lags, &bank) {
            (Some(l), _) => l.clone(),
            (None, Some(b)) => b.lags(),
            (None, None) => parse_lags(DEFAULT_CLASSICAL_LAGS).expect("valid default"),
        };
        let inputs: Vec<String> = anoms.data().input_indices().iter().map(|&i| anoms.data().channels()[i].name.clone()).collect();
        let forcing = build_forcing(&mesh, &scenario.resolve_regions()?, &scenario.amplitudes, &inputs)?;
        let series = StateSeries::from_anomalies(&anoms)?;
        let mut est = classical_response(&series, &lags, &forcing, scenario.rule, a.eigen_floor)?;
        est.scenario = Some(scenario.clone());
        est.save(&a.out.join("classical"))?;
        timings.lap("classical");
        outputs.push(("classical", "classical"));
        print_total("classical", &est.total);
    }
    scenario.save(&a.out.join("scenario.json"))?;
    let config = json!({ "scenario": scenario, "eigen_floor": a.eigen_floor, "classical": !a.skip_classical });
    let mut manifest = RunManifest::new("respond", config, scenario.seed).input("data", &a.data);
    if let Some(p) = &a.bank {
        manifest = manifest.input("bank", p);
    }
    if let Some(p) = &a.scenario {
        manifest = manifest.input("scenario", p);
    }
    for (name, rel) in outputs {
        manifest = manifest.output(name, rel);
    }
    finish(&a.out, &manifest, &timings)?;
    Ok(())
}

fn print_total(label: &str, total: &fdtkit::NodeField) {
    for (c, name) in total.channels.iter().enumerate() {
        let v = total.channel(c);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let peak = v.iter().fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m });
        println!("{label} response {name}: mean {mean:.4}, peak {peak:.4}");
    }
}

fn named(items: &[String]) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for item in items {
        let (id, path) = match item.split_once('=') {
            Some((id, p)) => (id.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(item);
                let dir = data_dir(&p);
                let id = dir.file_name().map_or_else(|| item.clone(), |n| n.to_string_lossy().into_owned());
                (id, p)
            }
        };
        if out.iter().any(|(other, _)| *other == id) {
            return Err(CliError::validation(format!("artifact id {id:?} is used twice; name them with id=path")));
        }
        out.push((id, path));
    }
    Ok(out)
}

pub fn serve(a: ServeArgs) -> Outcome {
    let config = fdtkit_service::ServiceConfig {
        datasets: named(&a.datasets)?,
        banks: named(&a.banks)?,
        static_dir: a.static_dir.clone(),
        ood_components: None,
        seed: a.seed.unwrap_or(DEFAULT_SEED),
    };
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(CliError::validation(format!("static directory {} does not exist", dir.display())));
        }
    }
    let state = fdtkit_service::ServiceState::load(&config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("io", format!("cannot start runtime: {e}")))?;
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], a.port));
    eprintln!("fdtkit: serving on http://{addr}");
    runtime
        .block_on(fdtkit_service::serve(state, addr))
        .map_err(|e| CliError::new("io", format!("cannot serve on {addr}: {e}")))
}

