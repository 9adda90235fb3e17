//! Configuration-driven experiments.
//!
//! A TOML file names a model and carries one optional section per stage.
//! [`run_experiment`] executes the configured stages in a fixed order, writes
//! comma-separated artifacts into the output directory, and records them in
//! `manifest.toml` together with the config hash, seed and crate version.
//! Nothing time- or host-dependent is written, so identical inputs give
//! byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fixtures;
use crate::fluid::{find_equilibrium, integrate_ode, mean_drift, weak_convergence_report};
use crate::game::{build_game, GameConfig, OpponentChains};
use crate::markov::{load_kernels, LinearKernelSpec, StateDepKernel, StochasticKernel};
use crate::numeric::{fmt17, replicate_rng};
use crate::rare::{
    estimate_escape_mc, exit_time_csv, mean_exit_time, minimize_escape_action, EscapeOptions, EscapePath,
    EscapeRegion, Geometry, SamplingMode,
};
use crate::rate::{local_rate_dual, local_rate_primal, variational_formula_check, write_path_csv, TestFunctional};
use crate::sa::{simulate_algorithm, Drift, GeneralSA};
use crate::{Error, Result};

/// Kernel given inline or as a named block of a kernel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSource {
    Rows(Vec<Vec<f64>>),
    File { file: PathBuf, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// The built-in scalar escape instance, started at its stable point.
    Scalar { epsilon: f64 },
    /// Agent 0 of the built-in 2-agent coordination game.
    TwoAgent { epsilon: f64 },
    /// `U(x, z1, z2) = offsets[z1][z2] − decay·x` with a linear kernel family.
    General {
        epsilon: f64,
        x0: Vec<f64>,
        #[serde(default)]
        z0: [usize; 2],
        offsets: Vec<Vec<Vec<f64>>>,
        #[serde(default = "one")]
        decay: f64,
        noise1: LinearKernelSpec,
        noise2: KernelSource,
    },
    /// One agent of a graph game facing exogenous opponent chains.
    Game {
        game: GameConfig,
        agent: usize,
        neighbor_chain: KernelSource,
        non_neighbor_chain: KernelSource,
        #[serde(default)]
        initial_action: usize,
        #[serde(default)]
        initial_opponents: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    pub horizon: f64,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    /// ODE step; defaults to a tenth of the smallest ε.
    pub dt: Option<f64>,
}

/// `L(x, β)` over a grid of one velocity coordinate; the other coordinates
/// of `β` are those of `Ū(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub axis: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_count: usize,
    /// Also solve the primal entropy program and report the gap.
    #[serde(default)]
    pub cross_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeConfig {
    /// Region center and start point; defaults to the stable point reached
    /// from `x0`.
    pub center: Option<Vec<f64>>,
    pub geometry: Geometry,
    pub horizon: f64,
    pub segments: usize,
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    #[serde(default = "yes")]
    pub crude: bool,
    #[serde(default = "yes")]
    pub importance: bool,
    pub block_length: f64,
    pub delta: f64,
    pub burn_in: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitTimeConfig {
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub max_steps: usize,
}

/// Random bounded functionals `Σ c tanh(a x + b)` checked against the
/// variational identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalConfig {
    pub epsilons: Vec<f64>,
    pub steps: Vec<usize>,
    pub functionals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub simulate: Option<SimulateConfig>,
    pub fluid: Option<FluidConfig>,
    pub rate: Option<RateConfig>,
    pub escape: Option<EscapeConfig>,
    pub exit_time: Option<ExitTimeConfig>,
    pub variational: Option<VariationalConfig>,
}

/// A parsed config with its source text (hashed into the manifest) and the
/// directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        Ok(Self {
            config: ExperimentConfig::from_toml(text)?,
            text: text.to_string(),
            base: base.to_path_buf(),
        })
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Fluid,
    Rate,
    EscapeOpt,
    EscapeMc,
    ExitTime,
    Variational,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Fluid,
        Stage::Rate,
        Stage::EscapeOpt,
        Stage::EscapeMc,
        Stage::ExitTime,
        Stage::Variational,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Fluid => "fluid",
            Stage::Rate => "rate",
            Stage::EscapeOpt => "escape-opt",
            Stage::EscapeMc => "escape-mc",
            Stage::ExitTime => "exit-time",
            Stage::Variational => "verify-variational",
        }
    }
}

fn check_eps(what: &str, eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Config(format!("{what}: ε list is empty")));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::Config(format!("{what}: ε = {e} is outside (0, 1)")));
    }
    Ok(())
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("{what} must be positive, got {v}")));
    }
    Ok(())
}

fn check_count(what: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config(format!("{what} must be at least 1")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config = Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, text, base })
    }

    pub fn stage_enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Simulate => self.simulate.is_some(),
            Stage::Fluid => self.fluid.is_some(),
            Stage::Rate => self.rate.is_some(),
            Stage::EscapeOpt => self.escape.is_some(),
            Stage::EscapeMc => self.escape.as_ref().is_some_and(|e| e.crude || e.importance),
            Stage::ExitTime => self.exit_time.is_some() && self.escape.is_some(),
            Stage::Variational => self.variational.is_some(),
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let model_eps = match &self.model {
            ModelConfig::Scalar { epsilon } | ModelConfig::TwoAgent { epsilon } => *epsilon,
            ModelConfig::General { epsilon, .. } => *epsilon,
            ModelConfig::Game { game, .. } => game.epsilon,
        };
        check_eps("model", &[model_eps])?;
        for src in self.kernel_sources() {
            if let KernelSource::File { file, .. } = src {
                let p = base.join(file);
                if !p.is_file() {
                    return Err(Error::Config(format!("referenced kernel file {} does not exist", p.display())));
                }
            }
        }
        if let Some(s) = &self.simulate {
            check_positive("simulate.horizon", s.horizon)?;
            check_count("simulate.replicates", s.replicates)?;
        }
        if let Some(f) = &self.fluid {
            check_positive("fluid.horizon", f.horizon)?;
            check_eps("fluid", &f.epsilons)?;
            check_count("fluid.replicates", f.replicates)?;
            if let Some(dt) = f.dt {
                check_positive("fluid.dt", dt)?;
            }
        }
        if let Some(r) = &self.rate {
            check_count("rate.beta_count", r.beta_count)?;
            if r.points.is_empty() {
                return Err(Error::Config("rate.points is empty".into()));
            }
            if !(r.beta_min <= r.beta_max) {
                return Err(Error::Config("rate.beta_min exceeds rate.beta_max".into()));
            }
        }
        if let Some(e) = &self.escape {
            check_positive("escape.horizon", e.horizon)?;
            check_positive("escape.block_length", e.block_length)?;
            check_eps("escape", &e.epsilons)?;
            check_count("escape.replicates", e.replicates)?;
            check_count("escape.segments", e.segments)?;
            if !(e.delta > 0.0 && e.delta <= 2.0) {
                return Err(Error::Config(format!("escape.delta = {} is outside (0, 2]", e.delta)));
            }
        }
        if let Some(x) = &self.exit_time {
            if self.escape.is_none() {
                return Err(Error::Config("exit_time needs the escape section for its region".into()));
            }
            check_eps("exit_time", &x.epsilons)?;
            check_count("exit_time.replicates", x.replicates)?;
            check_count("exit_time.max_steps", x.max_steps)?;
        }
        if let Some(v) = &self.variational {
            check_eps("variational", &v.epsilons)?;
            check_count("variational.functionals", v.functionals)?;
            if v.steps.is_empty() || v.steps.iter().any(|&n| n == 0 || n > 3) {
                return Err(Error::Config("variational.steps must lie in 1..=3".into()));
            }
        }
        Ok(())
    }

    fn kernel_sources(&self) -> Vec<&KernelSource> {
        match &self.model {
            ModelConfig::General { noise2, .. } => vec![noise2],
            ModelConfig::Game { neighbor_chain, non_neighbor_chain, .. } => vec![neighbor_chain, non_neighbor_chain],
            _ => vec![],
        }
    }

    pub fn build_model(&self, base: &Path) -> Result<GeneralSA> {
        match &self.model {
            ModelConfig::Scalar { epsilon } => Ok(fixtures::scalar_escape(*epsilon)?.sa),
            ModelConfig::TwoAgent { epsilon } => fixtures::two_agent_sa(*epsilon),
            ModelConfig::General { epsilon, x0, z0, offsets, decay, noise1, noise2 } => GeneralSA::new(
                Drift::affine(offsets.clone(), *decay)?,
                StateDepKernel::linear(noise1.clone())?,
                load_source(noise2, base)?,
                *epsilon,
                x0.clone(),
                (z0[0], z0[1]),
            ),
            ModelConfig::Game { game, agent, neighbor_chain, non_neighbor_chain, initial_action, initial_opponents } => {
                let spec = build_game(game.clone())?;
                let opponents = OpponentChains {
                    neighbor: load_source(neighbor_chain, base)?,
                    non_neighbor: load_source(non_neighbor_chain, base)?,
                };
                crate::embed::embed_as_general(&spec, *agent, &opponents, *initial_action, *initial_opponents)
            }
        }
    }
}

fn load_source(src: &KernelSource, base: &Path) -> Result<StochasticKernel> {
    match src {
        KernelSource::Rows(rows) => StochasticKernel::from_rows(rows.clone()),
        KernelSource::File { file, name } => {
            let path = base.join(file);
            let mut kernels = load_kernels(&path)?;
            kernels
                .remove(name)
                .ok_or_else(|| Error::Config(format!("{} has no kernel named `{name}`", path.display())))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub stages: Vec<String>,
    /// `complete`, or `partial` when a stage failed.
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub files: Vec<ManifestFile>,
}

pub const MANIFEST: &str = "manifest.toml";

/// Outcome of one invocation: what ran and what was written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

/// Shared state between stages of one invocation.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    sa: GeneralSA,
    out: PathBuf,
    written: Vec<String>,
    warnings: Vec<String>,
    escape: Option<(EscapeRegion, EscapePath)>,
}

impl Context<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn region(&self) -> Result<EscapeRegion> {
        let e = self.cfg.escape.as_ref().ok_or_else(|| Error::Config("missing [escape] section".into()))?;
        let center = match &e.center {
            Some(c) => c.clone(),
            None => find_equilibrium(&self.sa, &self.sa.x0)?.x,
        };
        if center.len() != self.sa.dim() {
            return Err(Error::Config(format!(
                "escape.center has dimension {}, model has {}",
                center.len(),
                self.sa.dim()
            )));
        }
        EscapeRegion::new(center, e.geometry.clone())
    }

    fn escape_path(&mut self) -> Result<(EscapeRegion, EscapePath)> {
        if let Some(p) = &self.escape {
            return Ok(p.clone());
        }
        let e = self.cfg.escape.clone().ok_or_else(|| Error::Config("missing [escape] section".into()))?;
        let region = self.region()?;
        let path = minimize_escape_action(
            &self.sa,
            &region,
            &region.center,
            e.horizon,
            e.segments,
            &EscapeOptions::default(),
        )?;
        self.escape = Some((region.clone(), path.clone()));
        Ok((region, path))
    }
}

fn csv_row(fields: impl IntoIterator<Item = String>) -> String {
    let mut s = fields.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn stage_simulate(ctx: &mut Context<'_>) -> Result<()> {
    let s = ctx.cfg.simulate.clone().ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    for r in 0..s.replicates {
        let seed = if s.replicates == 1 { ctx.cfg.seed } else { ctx.cfg.seed.wrapping_add(r as u64) };
        let traj = simulate_algorithm(&ctx.sa, s.horizon, seed)?;
        if let Some(w) = &traj.warning {
            ctx.warnings.push(w.clone());
        }
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let name = if s.replicates == 1 { "trajectory.csv".to_string() } else { format!("trajectory_{r}.csv") };
        ctx.write(&name, &String::from_utf8(buf).expect("CSV output is ASCII"))?;
    }
    Ok(())
}

fn stage_fluid(ctx: &mut Context<'_>) -> Result<()> {
    let f = ctx.cfg.fluid.clone().ok_or_else(|| Error::Config("missing [fluid] section".into()))?;
    let dt = f.dt.unwrap_or_else(|| f.epsilons.iter().cloned().fold(f64::INFINITY, f64::min) / 10.0);
    let ode = integrate_ode(&ctx.sa, f.horizon, dt)?;
    let d = ctx.sa.dim();
    let mut s = csv_row(std::iter::once("t".to_string()).chain((0..d).map(|i| format!("x{i}"))));
    for (t, x) in ode.grid.iter().zip(&ode.values) {
        s.push_str(&csv_row(std::iter::once(fmt17(*t)).chain(x.iter().map(|v| fmt17(*v)))));
    }
    ctx.write("ode.csv", &s)?;
    let report = weak_convergence_report(&ctx.sa, f.horizon, &f.epsilons, f.replicates, ctx.cfg.seed)?;
    if !report.decreasing {
        ctx.warnings.push("weak convergence: last median deviation is not below the first".into());
    }
    ctx.write("weak_convergence.csv", &report.to_csv())
}

fn stage_rate(ctx: &mut Context<'_>) -> Result<()> {
    let r = ctx.cfg.rate.clone().ok_or_else(|| Error::Config("missing [rate] section".into()))?;
    let d = ctx.sa.dim();
    if r.axis >= d {
        return Err(Error::Config(format!("rate.axis = {} but the model has dimension {d}", r.axis)));
    }
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.extend((0..d).map(|i| format!("beta{i}")));
    header.push("L".into());
    header.extend((0..d).map(|i| format!("alpha{i}")));
    let mut surface = csv_row(header);
    let mut cross = csv_row(["x_index", "beta", "L_dual", "L_primal", "abs_gap"].map(String::from));
    for (pi, x) in r.points.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Config(format!("rate.points[{pi}] has dimension {}, model has {d}", x.len())));
        }
        let ubar = mean_drift(&ctx.sa, x)?;
        for j in 0..r.beta_count {
            let b = if r.beta_count == 1 {
                r.beta_min
            } else {
                r.beta_min + (r.beta_max - r.beta_min) * j as f64 / (r.beta_count - 1) as f64
            };
            let mut beta = ubar.clone();
            beta[r.axis] = b;
            // β on the boundary of the attainable set has no finite
            // multiplier; it is recorded as NaN rather than aborting the grid
            let (value, alpha) = match local_rate_dual(&ctx.sa, x, &beta) {
                Ok(q) => (q.value, q.alpha.unwrap_or_else(|| vec![f64::NAN; d])),
                Err(e @ Error::NoConvergence { .. }) => {
                    ctx.warnings.push(format!("rate at x = {x:?}, beta = {b}: {e}"));
                    (f64::NAN, vec![f64::NAN; d])
                }
                Err(e) => return Err(e),
            };
            let row = x
                .iter()
                .chain(&beta)
                .chain(std::iter::once(&value))
                .chain(&alpha)
                .map(|v| fmt17(*v));
            surface.push_str(&csv_row(row));
            if r.cross_check {
                let primal = match local_rate_primal(&ctx.sa, x, &beta) {
                    Ok(p) => p.value,
                    Err(e @ Error::NoConvergence { .. }) => {
                        ctx.warnings.push(format!("primal rate at x = {x:?}, beta = {b}: {e}"));
                        f64::NAN
                    }
                    Err(e) => return Err(e),
                };
                let gap = if value.is_infinite() && primal.is_infinite() { 0.0 } else { (value - primal).abs() };
                cross.push_str(&csv_row([pi.to_string(), fmt17(b), fmt17(value), fmt17(primal), fmt17(gap)]));
            }
        }
    }
    ctx.write("rate_surface.csv", &surface)?;
    if r.cross_check {
        ctx.write("rate_crosscheck.csv", &cross)?;
    }
    Ok(())
}

fn stage_escape_opt(ctx: &mut Context<'_>) -> Result<()> {
    let (_, path) = ctx.escape_path()?;
    let mut buf = Vec::new();
    write_path_csv(&path.path, &path.segment_rates, &mut buf)?;
    ctx.write("escape_path.csv", &String::from_utf8(buf).expect("CSV output is ASCII"))?;
    let s = csv_row(["action", "hitting_time"].map(String::from))
        + &csv_row([fmt17(path.action), fmt17(path.hitting_time)]);
    ctx.write("escape_action.csv", &s)
}

fn stage_escape_mc(ctx: &mut Context<'_>) -> Result<()> {
    let e = ctx.cfg.escape.clone().ok_or_else(|| Error::Config("missing [escape] section".into()))?;
    let (region, path) = ctx.escape_path()?;
    let sa = ctx.sa.with_x0(region.center.clone())?;
    let mut summary = csv_row(["mode", "intercept", "minus_action"].map(String::from));
    let mut modes = Vec::new();
    if e.crude {
        modes.push(("crude", SamplingMode::Crude));
    }
    if e.importance {
        modes.push((
            "importance",
            SamplingMode::Importance {
                path: path.path.clone(),
                block_length: e.block_length,
                delta: e.delta,
                burn_in: e.burn_in,
            },
        ));
    }
    for (name, mode) in modes {
        let t = estimate_escape_mc(&sa, &region, e.horizon, &e.epsilons, e.replicates, ctx.cfg.seed, &mode)?;
        ctx.write(&format!("escape_{name}.csv"), &t.to_csv())?;
        let intercept = t.extrapolated.map_or(String::new(), fmt17);
        summary.push_str(&csv_row([name.to_string(), intercept, fmt17(-path.action)]));
    }
    ctx.write("escape_extrapolation.csv", &summary)
}

fn stage_exit_time(ctx: &mut Context<'_>) -> Result<()> {
    let x = ctx.cfg.exit_time.clone().ok_or_else(|| Error::Config("missing [exit_time] section".into()))?;
    let (region, path) = ctx.escape_path()?;
    let sa = ctx.sa.with_x0(region.center.clone())?;
    let rows = mean_exit_time(&sa, &region, &x.epsilons, x.replicates, ctx.cfg.seed, x.max_steps)?;
    // append the boundary action for side-by-side comparison
    let mut out = String::new();
    for (i, line) in exit_time_csv(&rows).lines().enumerate() {
        out.push_str(line);
        out.push(',');
        out.push_str(&if i == 0 { "boundary_action".to_string() } else { fmt17(path.action) });
        out.push('\n');
    }
    ctx.write("exit_time.csv", &out)
}

fn random_functional<R: Rng>(rng: &mut R, steps: usize, d: usize) -> TestFunctional {
    let coeffs = (0..=steps + 1)
        .map(|_| {
            (0..d)
                .map(|_| {
                    (
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect()
        })
        .collect();
    TestFunctional::tanh_sum(coeffs)
}

fn stage_variational(ctx: &mut Context<'_>) -> Result<()> {
    let v = ctx.cfg.variational.clone().ok_or_else(|| Error::Config("missing [variational] section".into()))?;
    let mut rng = replicate_rng(ctx.cfg.seed, 0);
    let mut s = csv_row(["functional", "eps", "N", "lhs", "rhs", "gap"].map(String::from));
    for k in 0..v.functionals {
        for &n in &v.steps {
            let f = random_functional(&mut rng, n, ctx.sa.dim());
            for &eps in &v.epsilons {
                let c = variational_formula_check(&ctx.sa, &f, eps, n)?;
                let _ = writeln!(s, "{k},{}", c.to_record());
            }
        }
    }
    ctx.write("variational.csv", &s)
}

fn run_stage(ctx: &mut Context<'_>, stage: Stage) -> Result<()> {
    match stage {
        Stage::Simulate => stage_simulate(ctx),
        Stage::Fluid => stage_fluid(ctx),
        Stage::Rate => stage_rate(ctx),
        Stage::EscapeOpt => stage_escape_opt(ctx),
        Stage::EscapeMc => stage_escape_mc(ctx),
        Stage::ExitTime => stage_exit_time(ctx),
        Stage::Variational => stage_variational(ctx),
    }
}

/// Hashes of every file under `dir` (recursively, manifest excluded),
/// keyed by `/`-separated relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("walk stays under root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if key != MANIFEST {
                    out.insert(key, sha256_hex(&fs::read(&p)?));
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Runs `stages` (all configured stages when `None`) and writes the
/// manifest. A failing stage stops the run; the manifest is still written,
/// marked partial, and the error is returned with the scenario name.
pub fn run_experiment(loaded: &LoadedConfig, output_dir: &Path, stages: Option<&[Stage]>) -> Result<RunReport> {
    let cfg = &loaded.config;
    let base = loaded.base.as_path();
    cfg.validate(base)?;
    let selected: Vec<Stage> = match stages {
        Some(s) => s.to_vec(),
        None => Stage::ALL.iter().copied().filter(|s| cfg.stage_enabled(*s)).collect(),
    };
    if selected.is_empty() {
        return Err(Error::Config("no stage is configured".into()));
    }
    fs::create_dir_all(output_dir)?;
    let sa = cfg.build_model(base).map_err(|e| e.context(format!("scenario `{}`: model", cfg.name)))?;
    let mut ctx = Context {
        cfg,
        sa,
        out: output_dir.to_path_buf(),
        written: Vec::new(),
        warnings: Vec::new(),
        escape: None,
    };
    let mut failure = None;
    for &stage in &selected {
        log::info!("scenario `{}`: stage {}", cfg.name, stage.name());
        if let Err(e) = run_stage(&mut ctx, stage) {
            failure = Some((stage, e));
            break;
        }
    }
    let files = hash_tree(output_dir)?
        .into_iter()
        .map(|(path, sha256)| ManifestFile { path, sha256 })
        .collect();
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_sha256: sha256_hex(loaded.text.as_bytes()),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        stages: selected.iter().map(|s| s.name().to_string()).collect(),
        status: if failure.is_some() { "partial" } else { "complete" }.to_string(),
        failed_stage: failure.as_ref().map(|(s, _)| s.name().to_string()),
        error: failure.as_ref().map(|(_, e)| e.to_string()),
        warnings: ctx.warnings.clone(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    fs::write(output_dir.join(MANIFEST), text)?;
    match failure {
        Some((stage, e)) => Err(e.context(format!("scenario `{}`: stage {}", cfg.name, stage.name()))),
        None => Ok(RunReport { output_dir: output_dir.to_path_buf(), manifest }),
    }
}

/// Files read by [`emit_plotdata`]; at least one must exist.
pub const PLOT_INPUTS: [&str; 5] = [
    "escape_crude.csv",
    "escape_importance.csv",
    "rate_surface.csv",
    "weak_convergence.csv",
    "exit_time.csv",
];

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(String::from)
        .collect::<Vec<_>>();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("{} has no column `{name}`", path.display())))
}

fn parse(v: &str) -> f64 {
    v.parse().unwrap_or(f64::NAN)
}

/// Writes plot-ready tables under `results/plotdata`:
///
/// - `escape_scatter.csv`: `mode,eps,eps_log_p,upper_bound_only,minus_action`
/// - `rate_surface_sorted.csv`: the rate surface sorted by `(x, β)`
/// - `convergence.csv`: weak-convergence medians
/// - `exit_time.csv`: `eps,eps_log_mean_tau,boundary_action`
///
/// Returns the files written.
pub fn emit_plotdata(results: &Path) -> Result<Vec<PathBuf>> {
    let present: Vec<&str> = PLOT_INPUTS.iter().copied().filter(|f| results.join(f).is_file()).collect();
    if present.is_empty() {
        return Err(Error::Config(format!(
            "{} contains none of the expected result files: {}",
            results.display(),
            PLOT_INPUTS.join(", ")
        )));
    }
    let out = results.join("plotdata");
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };

    let minus_action = {
        let p = results.join("escape_action.csv");
        if p.is_file() {
            let (h, rows) = read_table(&p)?;
            let c = column(&h, "action", &p)?;
            rows.first().map(|r| -parse(&r[c]))
        } else {
            None
        }
    };
    let mut scatter = String::new();
    for (mode, file) in [("crude", "escape_crude.csv"), ("importance", "escape_importance.csv")] {
        let p = results.join(file);
        if !p.is_file() {
            continue;
        }
        let (h, rows) = read_table(&p)?;
        let (ce, cl, cb) = (column(&h, "eps", &p)?, column(&h, "eps_log_p", &p)?, column(&h, "bound", &p)?);
        for r in rows {
            let _ = writeln!(
                scatter,
                "{mode},{},{},{},{}",
                r[ce],
                r[cl],
                r[cb],
                minus_action.map_or(String::new(), fmt17)
            );
        }
    }
    if !scatter.is_empty() {
        emit("escape_scatter.csv", format!("mode,eps,eps_log_p,upper_bound_only,minus_action\n{scatter}"))?;
    }

    let p = results.join("rate_surface.csv");
    if p.is_file() {
        let (h, rows) = read_table(&p)?;
        let l = column(&h, "L", &p)?;
        let mut keyed: Vec<(Vec<f64>, Vec<String>)> =
            rows.into_iter().map(|r| (r[..l].iter().map(|v| parse(v)).collect(), r)).collect();
        keyed.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut s = h.join(",") + "\n";
        for (_, r) in keyed {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        emit("rate_surface_sorted.csv", s)?;
    }

    let p = results.join("weak_convergence.csv");
    if p.is_file() {
        emit("convergence.csv", fs::read_to_string(&p)?)?;
    }

    let p = results.join("exit_time.csv");
    if p.is_file() {
        let (h, rows) = read_table(&p)?;
        let (ce, cl, ca) = (
            column(&h, "eps", &p)?,
            column(&h, "eps_log_mean_tau", &p)?,
            column(&h, "boundary_action", &p)?,
        );
        let mut s = String::from("eps,eps_log_mean_tau,boundary_action\n");
        for r in rows {
            let _ = writeln!(s, "{},{},{}", r[ce], r[cl], r[ca]);
        }
        emit("exit_time.csv", s)?;
    }
    Ok(written)
}
