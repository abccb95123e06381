//! Synthetic "toy climate" ensembles from a stable linear stochastic system.
//!
//! The state is `z = [node][channel]` over every channel of the `TruthSpec` (all
//! input or output, no static channels), evolving as
//! `z(t+1) = A z(t) + e(t)` with `e ~ N(0, Q)`. Input channels follow a
//! convex mix of per-node damping, graph diffusion along mesh edges and a
//! random low-rank teleconnection term; output channels integrate the local
//! inputs with their own persistence. A fixed seasonal cycle is added to the
//! emitted values only, so it never enters the dynamics.
//!
//! For a constant forcing `f` added to every update the stationary mean
//! shifts by `(I - A)^-1 f`, which [`analytic_response`] returns exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dataio::{indices_with_role, ChannelRole, ChannelSpec, EnsembleDataset};
use crate::error::{ensure, Error, Result};
use crate::field::NodeField;
use crate::grid::{build_icosphere, IcoMesh};
use crate::linalg;

pub const TRUTH_MANIFEST: &str = "truth.json";

/// Construction parameters. `Default` gives the desk-scale configuration:
/// level-1 mesh with one input and one output channel (84 state variables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthSpec {
    pub mesh_level: u32,
    pub channels: Vec<ChannelSpec>,
    pub spectral_radius: f64,
    /// Weight of the low-rank teleconnection term in the input dynamics, 0..=1.
    pub teleconnection_strength: f64,
    pub seed: u64,
    /// Weight of graph diffusion relative to local damping, 0..=1.
    pub diffusion: f64,
    pub teleconnection_rank: usize,
    /// Output self-persistence relative to the input damping (before rescaling).
    pub output_persistence: f64,
    /// Local input-to-output coupling (before rescaling).
    pub coupling: f64,
    pub noise_std: f64,
    /// Neighbour correlation of the noise, in `[0, 1)`.
    pub noise_smoothing: f64,
    /// Noise variance of output channels relative to input channels.
    pub output_noise_ratio: f64,
    /// Amplitude of the sinusoidal 12-month cycle added to emitted values.
    pub seasonal_amplitude: f64,
    /// Optional `-k z^3 / (1 + k z^2)` term in the update; 0 keeps the system linear.
    pub cubic_damping: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            mesh_level: 1,
            channels: vec![
                ChannelSpec::new("x", ChannelRole::Input, "1"),
                ChannelSpec::new("y", ChannelRole::Output, "1"),
            ],
            spectral_radius: 0.8,
            teleconnection_strength: 0.2,
            seed: 7,
            diffusion: 0.6,
            teleconnection_rank: 3,
            output_persistence: 0.4,
            coupling: 1.0,
            noise_std: 1.0,
            noise_smoothing: 0.5,
            output_noise_ratio: 0.25,
            seasonal_amplitude: 5.0,
            cubic_damping: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearTruthSystem {
    spec: TruthSpec,
    mesh: IcoMesh,
    propagator: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    noise_chol: DMatrix<f64>,
}

impl PartialEq for LinearTruthSystem {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.propagator == other.propagator && self.noise_cov == other.noise_cov
    }
}

/// Symmetric-normalized mesh adjacency `D^-1/2 Adj D^-1/2`.
fn normalized_adjacency(mesh: &IcoMesh) -> DMatrix<f64> {
    let n = mesh.len();
    let adj = mesh.adjacency();
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in mesh.edges() {
        let v = 1.0 / ((adj[a].len() * adj[b].len()) as f64).sqrt();
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    w
}

pub fn make_truth_system(spec: &TruthSpec) -> Result<LinearTruthSystem> {
    let rho = spec.spectral_radius;
    ensure!(rho > 0.0 && rho < 1.0, Validation, "spectral radius {rho} must lie in (0, 1)");
    ensure!(
        (0.0..=1.0).contains(&spec.teleconnection_strength),
        Validation,
        "teleconnection strength {} must lie in [0, 1]",
        spec.teleconnection_strength
    );
    ensure!((0.0..=1.0).contains(&spec.diffusion), Validation, "diffusion must lie in [0, 1]");
    ensure!(
        (0.0..1.0).contains(&spec.noise_smoothing),
        Validation,
        "noise smoothing must lie in [0, 1)"
    );
    ensure!(
        spec.noise_std > 0.0 && spec.output_noise_ratio > 0.0,
        Validation,
        "noise scales must be positive"
    );
    ensure!(spec.teleconnection_rank >= 1, Validation, "teleconnection rank must be at least 1");
    let inputs = indices_with_role(&spec.channels, ChannelRole::Input);
    let outputs = indices_with_role(&spec.channels, ChannelRole::Output);
    ensure!(
        !inputs.is_empty() && !outputs.is_empty(),
        Validation,
        "truth system needs at least one input and one output channel"
    );
    ensure!(
        inputs.len() + outputs.len() == spec.channels.len(),
        Validation,
        "truth system channels must be input or output (no static channels)"
    );

    let mesh = build_icosphere(spec.mesh_level)?;
    let n = mesh.len();
    let c = spec.channels.len();
    let d = n * c;
    let w = normalized_adjacency(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let s = spec.teleconnection_strength;
    let diff = spec.diffusion;
    let mut a = DMatrix::zeros(d, d);
    // Outputs never feed back into inputs, so A is block triangular and its
    // eigenvalues are those of the symmetric input blocks plus the output diagonal.
    let mut current = spec.output_persistence.abs();
    for &ci in &inputs {
        let mut node_op = DMatrix::identity(n, n) * ((1.0 - diff) * (1.0 - s)) + &w * ((1.0 - s) * diff);
        if s > 0.0 {
            let u: DMatrix<f64> = DMatrix::from_fn(n, spec.teleconnection_rank, |_, _| {
                StandardNormal.sample(&mut rng)
            });
            let r = &u * u.transpose();
            let top = r.clone().symmetric_eigen().eigenvalues.max();
            node_op += r * (s / top);
        }
        let block_radius = node_op.clone().symmetric_eigen().eigenvalues.amax();
        current = current.max(block_radius);
        for i in 0..n {
            for j in 0..n {
                a[(i * c + ci, j * c + ci)] = node_op[(i, j)];
            }
        }
    }
    let per_output = spec.coupling / inputs.len() as f64;
    for &co in &outputs {
        for i in 0..n {
            a[(i * c + co, i * c + co)] = spec.output_persistence;
            for &ci in &inputs {
                a[(i * c + co, i * c + ci)] = per_output;
            }
        }
    }
    ensure!(current > 0.0, Numerical, "propagator is nilpotent; cannot rescale");
    a *= rho / current;

    let mut q = DMatrix::zeros(d, d);
    let sigma2 = spec.noise_std * spec.noise_std;
    for (ch, spec_c) in spec.channels.iter().enumerate() {
        let scale = if spec_c.role == ChannelRole::Output {
            sigma2 * spec.output_noise_ratio
        } else {
            sigma2
        };
        for i in 0..n {
            q[(i * c + ch, i * c + ch)] = scale;
        }
        for &(i, j) in mesh.edges() {
            q[(i * c + ch, j * c + ch)] = scale * spec.noise_smoothing * w[(i, j)];
            q[(j * c + ch, i * c + ch)] = scale * spec.noise_smoothing * w[(i, j)];
        }
    }
    let noise_chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("noise covariance is not positive definite".into()))?
        .l();
    Ok(LinearTruthSystem {
        spec: spec.clone(),
        mesh,
        propagator: a,
        noise_cov: q,
        noise_chol,
    })
}

impl LinearTruthSystem {
    /// Builds a system from explicit matrices (for testing special cases such
    /// as `A = 0` or `A = 0.5 I`).
    pub fn from_matrices(spec: &TruthSpec, propagator: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let mesh = build_icosphere(spec.mesh_level)?;
        let d = mesh.len() * spec.channels.len();
        ensure!(
            propagator.shape() == (d, d) && noise_cov.shape() == (d, d),
            Shape,
            "matrices must be {d}x{d}"
        );
        let rho = linalg::spectral_radius(&propagator);
        ensure!(rho < 1.0, Validation, "propagator spectral radius {rho} is not below 1");
        ensure!(
            (&noise_cov - noise_cov.transpose()).amax() <= 1e-12,
            Validation,
            "noise covariance is not symmetric"
        );
        let noise_chol = noise_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("noise covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            spec: TruthSpec {
                spectral_radius: rho,
                ..spec.clone()
            },
            mesh,
            propagator,
            noise_cov,
            noise_chol,
        })
    }

    pub fn spec(&self) -> &TruthSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &IcoMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.propagator.nrows()
    }

    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.propagator
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.spec.channels
    }

    /// Writes `truth.json` plus row-major little-endian f64 matrices.
    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        let manifest = TruthManifest {
            spec: self.spec.clone(),
            dimension: self.dim(),
            propagator_file: "propagator.f64".into(),
            noise_cov_file: "noise_cov.f64".into(),
        };
        binio::write_f64_file(&dir.join(&manifest.propagator_file), &row_major(&self.propagator))?;
        binio::write_f64_file(&dir.join(&manifest.noise_cov_file), &row_major(&self.noise_cov))?;
        binio::write_json(&dir.join(TRUTH_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(TRUTH_MANIFEST);
        let manifest: TruthManifest = binio::read_json(&path)?;
        let d = manifest.dimension;
        let read = |name: &str| -> Result<DMatrix<f64>> {
            let v = binio::read_f64_file(&dir.join(name))?;
            if v.len() != d * d {
                return Err(Error::format(dir.join(name), format!("expected {d}x{d} matrix")));
            }
            Ok(DMatrix::from_row_slice(d, d, &v))
        };
        let a = read(&manifest.propagator_file)?;
        let q = read(&manifest.noise_cov_file)?;
        let mut sys = Self::from_matrices(&manifest.spec, a, q)?;
        sys.spec = manifest.spec;
        Ok(sys)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthManifest {
    spec: TruthSpec,
    dimension: usize,
    propagator_file: String,
    noise_cov_file: String,
}

/// Seasonal offset of node `node` and channel `channel` in calendar month
/// `month` (1..=12).
fn seasonal(spec: &TruthSpec, mesh: &IcoMesh, month: usize, node: usize, channel: usize) -> f64 {
    let phase = std::f64::consts::TAU * (month - 1) as f64 / 12.0;
    spec.seasonal_amplitude * (phase + mesh.lon()[node].to_radians() + channel as f64).sin()
}

/// Simulates `members` independent trajectories of `months` steps after
/// `burn_in` discarded steps. Member `m` draws from ChaCha stream `m` of the
/// master seed, so results do not depend on scheduling.
pub fn simulate(
    system: &LinearTruthSystem,
    members: usize,
    months: usize,
    burn_in: usize,
    seed: u64,
) -> Result<EnsembleDataset> {
    simulate_from(system, members, months, burn_in, seed, 1)
}

/// [`simulate`] with an explicit calendar start month.
pub fn simulate_from(
    system: &LinearTruthSystem,
    members: usize,
    months: usize,
    burn_in: usize,
    seed: u64,
    start_month: u8,
) -> Result<EnsembleDataset> {
    ensure!(months >= 1 && members >= 1, Validation, "need at least one member and one month");
    let d = system.dim();
    let c = system.spec.channels.len();
    let trajectories: Vec<Vec<f32>> = (0..members)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut z = DVector::<f64>::zeros(d);
            let mut next = DVector::<f64>::zeros(d);
            let mut noise = DVector::<f64>::zeros(d);
            let mut out = Vec::with_capacity(months * d);
            for step in 0..burn_in + months {
                for e in noise.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                next.gemv(1.0, &system.propagator, &z, 0.0);
                next.gemv(1.0, &system.noise_chol, &noise, 1.0);
                if system.spec.cubic_damping != 0.0 {
                    for (n, &zi) in next.iter_mut().zip(z.iter()) {
                        let k = system.spec.cubic_damping;
                        *n -= k * zi * zi * zi / (1.0 + k * zi * zi);
                    }
                }
                std::mem::swap(&mut z, &mut next);
                if step >= burn_in {
                    let t = step - burn_in;
                    let month = (start_month as usize - 1 + t) % 12 + 1;
                    out.extend(z.iter().enumerate().map(|(k, &v)| {
                        (v + seasonal(&system.spec, &system.mesh, month, k / c, k % c)) as f32
                    }));
                }
            }
            out
        })
        .collect();
    EnsembleDataset::new(
        system.spec.mesh_level,
        start_month,
        members,
        months,
        system.spec.channels.clone(),
        trajectories.concat(),
    )
}

/// Embeds an input-channel field into the full state (zeros on outputs).
pub fn embed_forcing(channels: &[ChannelSpec], forcing: &NodeField) -> Result<DVector<f64>> {
    let c = channels.len();
    let mut f = DVector::zeros(forcing.nodes * c);
    for (k, name) in forcing.channels.iter().enumerate() {
        let idx = channels
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| Error::Validation(format!("forcing channel {name:?} is not part of the system")))?;
        ensure!(
            channels[idx].role == ChannelRole::Input,
            Validation,
            "forcing channel {name:?} is not an input channel"
        );
        for node in 0..forcing.nodes {
            f[node * c + idx] = forcing.get(node, k);
        }
    }
    Ok(f)
}

/// Output-channel projection of a full state vector.
pub fn project_outputs(channels: &[ChannelSpec], nodes: usize, state: &DVector<f64>) -> NodeField {
    let outputs = indices_with_role(channels, ChannelRole::Output);
    let c = channels.len();
    let mut values = Vec::with_capacity(nodes * outputs.len());
    for node in 0..nodes {
        values.extend(outputs.iter().map(|&o| state[node * c + o]));
    }
    NodeField {
        channels: outputs.iter().map(|&o| channels[o].name.clone()).collect(),
        nodes,
        values,
    }
}

/// Exact stationary mean shift `(I - A)^-1 f` on the output channels.
pub fn analytic_response(system: &LinearTruthSystem, forcing: &NodeField) -> Result<NodeField> {
    let n = system.mesh.len();
    ensure!(forcing.nodes == n, Shape, "forcing has {} nodes, system has {n}", forcing.nodes);
    let f = embed_forcing(&system.spec.channels, forcing)?;
    let d = system.dim();
    let lhs = DMatrix::identity(d, d) - &system.propagator;
    let shift = lhs
        .lu()
        .solve(&f)
        .ok_or_else(|| Error::Numerical("I - A is singular".into()))?;
    Ok(project_outputs(&system.spec.channels, n, &shift))
}
