//! Building environments, datasets and oracles from settings, executing one
//! scheme run and writing its run directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use oap_core::agent::{AgentConfig, Td3bcAgent};
use oap_core::data::{generate_dataset, OfflineDataset, StateStats};
use oap_core::env::{Env, GridMaze, PointMass2D};
use oap_core::nn::OutputActivation;
use oap_core::preference::OracleQ;
use oap_core::rng::derive_seed;
use oap_core::scheduler::{reference_returns, run_scheme, ReferenceReturns, RunContext, RunOutcome, Scheme, SchemeSpec};

use crate::config::{AgentSection, Settings};
use crate::formats::{self, FormatError};
use crate::CliError;

pub const DATASET_STREAM: u64 = 0xD5;
pub const ORACLE_NOISE_STREAM: u64 = 0x0C;
pub const REFERENCE_EPISODES: usize = 100;
pub const REFERENCE_SEED: u64 = 0x5EED;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn input_error(path: &Path, e: FormatError) -> CliError {
    match e {
        FormatError::Io(e) => CliError::Runtime(format!("{}: {e}", path.display())),
        other => CliError::Input(format!("{}: {other}", path.display())),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// The environment plus the raw layout text when it came from a file.
pub struct EnvSource {
    pub env: Env,
    pub layout: Option<String>,
}

pub fn build_env(settings: &Settings) -> Result<EnvSource, CliError> {
    let spec = &settings.env;
    match (spec.name.as_str(), &spec.maze_file) {
        ("gridmaze-10", None) => Ok(EnvSource { env: Env::Grid(GridMaze::gridmaze10()), layout: None }),
        ("pointmass", None) => Ok(EnvSource { env: Env::Point(PointMass2D::default()), layout: None }),
        ("gridmaze", Some(path)) => {
            let text = read_input(path)?;
            let maze = GridMaze::parse_layout(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Ok(EnvSource { env: Env::Grid(maze), layout: Some(text) })
        }
        ("gridmaze", None) => Err(CliError::Config("env gridmaze needs env.maze_file".into())),
        (name @ ("gridmaze-10" | "pointmass"), Some(_)) => {
            Err(CliError::Config(format!("env.maze_file is only valid with env gridmaze, not {name}")))
        }
        (name, _) => Err(CliError::Config(format!("unknown env {name:?} (expected gridmaze-10, gridmaze or pointmass)"))),
    }
}

pub fn build_oracle(env: &Env, gamma: f64, noise: f64, seed: u64) -> Result<OracleQ, CliError> {
    let oracle = match env {
        Env::Grid(maze) => OracleQ::exact_tabular(maze, gamma)?,
        Env::Point(p) => OracleQ::expert_rollout(*p, gamma),
    };
    if noise > 0.0 {
        Ok(oracle.with_noise(noise, derive_seed(seed, ORACLE_NOISE_STREAM))?)
    } else {
        Ok(oracle)
    }
}

pub fn references(env: &Env) -> Result<ReferenceReturns, CliError> {
    Ok(reference_returns(env, REFERENCE_EPISODES, REFERENCE_SEED)?)
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset, CliError> {
    formats::read_dataset(&read_input(path)?).map_err(|e| input_error(path, e))
}

/// A dataset and its `OAPDS v1` serialization, which is what gets hashed.
pub struct DatasetSource {
    pub dataset: OfflineDataset,
    pub text: Vec<u8>,
    /// Mean return of the source trajectories, when generated here.
    pub source_return: Option<f64>,
}

/// Loads `dataset.path`, or generates the configured tier with a seed
/// derived from the run seed.
pub fn prepare_dataset(settings: &Settings, env: &Env, seed: u64) -> Result<DatasetSource, CliError> {
    let mut source_return = None;
    let dataset = match &settings.dataset.path {
        Some(path) => {
            let ds = load_dataset(path)?;
            if ds.state_dim != env.state_dim() || ds.action_dim != env.action_dim() {
                return Err(CliError::Input(format!(
                    "{}: dataset dims {}x{} do not match env {} ({}x{})",
                    path.display(),
                    ds.state_dim,
                    ds.action_dim,
                    env.name(),
                    env.state_dim(),
                    env.action_dim()
                )));
            }
            ds
        }
        None => {
            let (ds, summary) =
                generate_dataset(env, settings.tier()?, settings.dataset.n, settings.env.gamma, derive_seed(seed, DATASET_STREAM))?;
            info!("generated {} {} transitions, source mean return {:.3}", ds.len(), settings.dataset.tier, summary.mean_return());
            source_return = Some(summary.mean_return());
            ds
        }
    };
    let mut text = Vec::new();
    formats::write_dataset(&dataset, &mut text).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(DatasetSource { dataset, text, source_return })
}

pub fn run_label(spec: &SchemeSpec, env_name: &str, seed: u64) -> String {
    match spec.variant_tag() {
        "-" => format!("{}-{env_name}-s{seed}", spec.scheme.tag()),
        v => format!("{}-{v}-{env_name}-s{seed}", spec.scheme.tag()),
    }
}

/// Settings as they apply to one run: a single seed and this run's scheme.
pub fn run_settings(settings: &Settings, spec: &SchemeSpec, seed: u64) -> Settings {
    let mut s = settings.clone();
    s.seeds = vec![seed];
    s.scheme.name = spec.scheme.tag().into();
    s.scheme.variant = spec.oap_variant.tag().into();
    s.scheme.o2o_interval = spec.o2o_interval;
    s.scheme.online_budget = spec.online_budget;
    s
}

/// Files written into a run directory, with their hashes.
#[derive(Default)]
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), entries: Vec::new() }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(&self.dir.join(rel), bytes)?;
        self.entries.push((rel.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(rel, &buf)
    }

    /// `manifest.txt`: seed, input hashes, output hashes, then the full
    /// config echo.
    pub fn finish(mut self, seed: u64, inputs: &[(&str, String)], echo: &str) -> Result<PathBuf, CliError> {
        let mut m = String::from("OAP manifest v1\n");
        m.push_str(&format!("seed {seed}\n"));
        for (name, hash) in inputs {
            m.push_str(&format!("input {name} sha256={hash}\n"));
        }
        for (name, hash) in &self.entries {
            m.push_str(&format!("output {name} sha256={hash}\n"));
        }
        m.push_str("config\n");
        m.push_str(echo);
        let path = self.dir.join("manifest.txt");
        write_file(&path, m.as_bytes())?;
        self.entries.clear();
        Ok(path)
    }
}

/// Shape and normalisation needed to rebuild an agent from its networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_action: f64,
    pub gamma: f64,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub agent: AgentSection,
}

pub const SNAPSHOT_NETS: [&str; 4] = ["actor", "actor_target", "critic1", "critic2"];

pub fn write_snapshot(agent: &Td3bcAgent, seed: u64, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let [c1, c2] = agent.critics();
    for (name, net) in SNAPSHOT_NETS.iter().zip([agent.actor(), agent.actor_target(), c1, c2]) {
        artifacts.write_with(&format!("snapshot/{name}.oapnet"), |w| formats::write_net(net, w))?;
    }
    let meta = SnapshotMeta {
        seed,
        state_dim: agent.state_dim(),
        action_dim: agent.action_dim(),
        max_action: agent.max_action(),
        gamma: agent.config().gamma,
        state_mean: agent.state_stats().mean.clone(),
        state_std: agent.state_stats().std.clone(),
        agent: AgentSection::capture(agent.config()),
    };
    let text = toml::to_string(&meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    artifacts.write("snapshot/agent.toml", text.as_bytes())
}

/// Rebuilds an agent from a snapshot directory. Target networks are reset
/// to copies of the live ones.
pub fn load_snapshot(dir: &Path) -> Result<Td3bcAgent, CliError> {
    let meta_path = dir.join("agent.toml");
    let meta: SnapshotMeta =
        toml::from_str(&read_input(&meta_path)?).map_err(|e| CliError::Input(format!("{}: {e}", meta_path.display())))?;
    let mut config = AgentConfig { gamma: meta.gamma, ..AgentConfig::default() };
    meta.agent.apply(&mut config);
    let stats = StateStats { mean: meta.state_mean, std: meta.state_std };
    let mut agent = Td3bcAgent::new(config, meta.state_dim, meta.action_dim, meta.max_action, stats, meta.seed)?;
    let net = |name: &str, output| {
        let path = dir.join(format!("{name}.oapnet"));
        formats::read_net(&read_input(&path)?, output, 0.0).map_err(|e| input_error(&path, e))
    };
    let actor = net("actor", OutputActivation::Tanh { scale: meta.max_action })?;
    let c1 = net("critic1", OutputActivation::Identity)?;
    let c2 = net("critic2", OutputActivation::Identity)?;
    agent.load_networks(actor, c1, c2)?;
    Ok(agent)
}

/// Runs one scheme for one seed and fills `dir` with its outputs.
pub struct RunJob<'a> {
    pub settings: &'a Settings,
    pub spec: SchemeSpec,
    pub seed: u64,
    pub env: &'a EnvSource,
    pub dataset: &'a DatasetSource,
    pub reference: ReferenceReturns,
}

impl RunJob<'_> {
    pub fn label(&self) -> String {
        run_label(&self.spec, &self.settings.env.name, self.seed)
    }

    pub fn execute(&self, dir: &Path) -> Result<RunOutcome, CliError> {
        let settings = run_settings(self.settings, &self.spec, self.seed);
        let env = &self.env.env;
        let oracle = match self.spec.scheme {
            Scheme::Oap => Some(build_oracle(env, settings.env.gamma, settings.oracle.noise, self.seed)?),
            _ => None,
        };
        let ctx = RunContext { env, dataset: &self.dataset.dataset, oracle: oracle.as_ref(), reference: self.reference };
        info!("run {} starting", self.label());
        let outcome = run_scheme(&self.spec, &settings.harness, ctx, self.seed)?;
        outcome.report.audit()?;
        info!("run {} final score {:.2}", self.label(), outcome.report.final_score(settings.harness.eval.final_window));

        let mut art = Artifacts::new(dir);
        let echo = settings.echo();
        art.write("config.toml", echo.as_bytes())?;
        art.write_with("metrics.csv", |w| formats::write_metrics(&outcome.report, &settings.env.name, w))?;
        if self.spec.scheme == Scheme::Oap {
            art.write_with("rounds.csv", |w| formats::write_rounds(&outcome.report, w))?;
            let ds = &self.dataset.dataset;
            art.write_with("query_log.csv", |w| formats::write_query_log(&outcome.query_log, ds.state_dim, ds.action_dim, w))?;
        }
        write_snapshot(&outcome.agent, self.seed, &mut art)?;
        if let Some(rn) = outcome.ranknet.as_ref().filter(|r| r.is_trained()) {
            art.write_with("ranknet.oapnet", |w| formats::write_net(rn.net(), w))?;
        }
        let mut inputs = vec![("config", sha256_hex(echo.as_bytes())), ("dataset", sha256_hex(&self.dataset.text))];
        if let Some(layout) = &self.env.layout {
            inputs.push(("maze", sha256_hex(layout.as_bytes())));
        }
        art.finish(self.seed, &inputs, &echo)?;
        Ok(outcome)
    }
}
