//! Argument parsing and the subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use rayon::prelude::*;

use oap_core::scheduler::{diagnostics, harmful_divergence_fraction, SchemeSpec};
use oap_core::theory::verify_all;

use crate::config::{Profile, RunConfig, Settings};
use crate::formats;
use crate::run::{self, Artifacts, RunJob};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "oap", version, about = "Offline RL with action-preference queries")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (the output file for gen-data).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset file.
    GenData {
        #[arg(long)]
        env: String,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Train one scheme and write metrics, snapshots and a manifest.
    Train {
        #[command(flatten)]
        scheme: SchemeFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        env: Option<String>,
    },
    /// Run a scheme x seed grid and aggregate final scores.
    Compare {
        /// Comma-separated `scheme[:variant]` entries, e.g. `offline,o2o,oap,oap:no-rn`.
        #[arg(long, default_value = "offline,o2o,oap")]
        schemes: String,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        noise: Option<f64>,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Check the theory statements on random tabular MDPs.
    VerifyTheory {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Export per-sample action divergence against oracle value gain.
    Diagnose {
        /// Agent snapshot directory; without it the configured scheme is trained first.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[command(flatten)]
        scheme: SchemeFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        env: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Dataset file to load instead of generating one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub tier: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Maze layout file for env `gridmaze`.
    #[arg(long)]
    pub maze: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SchemeFlags {
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    /// Offline-to-Online: interleave interactions instead of fine-tuning.
    #[arg(long)]
    pub o2o_interval: bool,
    #[arg(long)]
    pub online_budget: Option<usize>,
    /// Oracle value noise amplitude.
    #[arg(long)]
    pub noise: Option<f64>,
}

impl DataFlags {
    fn apply(&self, s: &mut Settings) {
        if let Some(p) = &self.data {
            s.dataset.path = Some(p.clone());
        }
        if let Some(t) = &self.tier {
            s.dataset.tier = t.clone();
        }
        if let Some(n) = self.n {
            s.dataset.n = n;
        }
        if let Some(g) = self.gamma {
            s.env.gamma = g;
        }
        if let Some(m) = &self.maze {
            s.env.maze_file = Some(m.clone());
        }
    }
}

impl SchemeFlags {
    fn apply(&self, s: &mut Settings) {
        if let Some(x) = &self.scheme {
            s.scheme.name = x.clone();
        }
        if let Some(v) = &self.variant {
            s.scheme.variant = v.clone();
        }
        if self.o2o_interval {
            s.scheme.o2o_interval = true;
        }
        if let Some(b) = self.online_budget {
            s.scheme.online_budget = b;
        }
        if let Some(a) = self.noise {
            s.oracle.noise = a;
        }
    }
}

impl Cli {
    /// Config file, then flags.
    pub fn settings(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let mut s = Settings::resolve(&file, self.profile)?;
        if let Some(seed) = self.seed {
            s.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            s.out = out.clone();
        }
        if let Some(w) = self.workers {
            s.workers = w;
        }
        let set_env = |s: &mut Settings, env: &Option<String>| {
            if let Some(e) = env {
                s.env.name = e.clone();
            }
        };
        match &self.command {
            Command::GenData { env, data } => {
                s.env.name = env.clone();
                data.apply(&mut s);
            }
            Command::Train { scheme, data, env } | Command::Diagnose { scheme, data, env, .. } => {
                set_env(&mut s, env);
                scheme.apply(&mut s);
                data.apply(&mut s);
            }
            Command::Compare { env, noise, data, .. } => {
                set_env(&mut s, env);
                if let Some(a) = noise {
                    s.oracle.noise = *a;
                }
                data.apply(&mut s);
            }
            Command::VerifyTheory { instances } => {
                if let Some(n) = instances {
                    s.theory.instances = *n;
                }
            }
        }
        s.validate()?;
        Ok(s)
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = cli.settings()?;
    match &cli.command {
        Command::GenData { .. } => {
            let out = cli.out.as_deref().ok_or_else(|| CliError::Usage("gen-data needs --out <file>".into()))?;
            gen_data(&settings, out)
        }
        Command::Train { .. } => train(&settings).map(|_| ()),
        Command::Compare { schemes, .. } => compare(&settings, schemes).and_then(|agg| {
            let failed: usize = agg.iter().map(|r| r.failures).sum();
            if failed > 0 {
                Err(CliError::Runtime(format!("{failed} run(s) failed; see error.txt in their run directories")))
            } else {
                Ok(())
            }
        }),
        Command::VerifyTheory { .. } => verify_theory(&settings),
        Command::Diagnose { snapshot, .. } => diagnose(&settings, snapshot.as_deref()),
    }
}

pub fn gen_data(settings: &Settings, out: &Path) -> Result<(), CliError> {
    if settings.dataset.path.is_some() {
        return Err(CliError::Usage("gen-data takes no --data".into()));
    }
    let env = run::build_env(settings)?;
    let seed = settings.seeds[0];
    let src = run::prepare_dataset(settings, &env.env, seed)?;
    run::write_file(out, &src.text)?;
    let ds = &src.dataset;
    println!(
        "wrote {}: n={} tier={} env={} seed={} source mean return {:.4}",
        out.display(),
        ds.len(),
        settings.dataset.tier,
        settings.env.name,
        seed,
        src.source_return.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Trains the configured scheme for every configured seed, one after another.
pub fn train(settings: &Settings) -> Result<Vec<oap_core::scheduler::RunOutcome>, CliError> {
    let env = run::build_env(settings)?;
    let reference = run::references(&env.env)?;
    let spec = settings.scheme_spec()?;
    let mut outcomes = Vec::new();
    for &seed in &settings.seeds {
        let dataset = run::prepare_dataset(settings, &env.env, seed)?;
        let job = RunJob { settings, spec, seed, env: &env, dataset: &dataset, reference };
        let dir = settings.out.join(job.label());
        let outcome = job.execute(&dir)?;
        let r = &outcome.report;
        println!(
            "{}: final score {:.2} (last {} evals), queries {}, env steps {}, dir {}",
            job.label(),
            r.final_score(settings.harness.eval.final_window),
            settings.harness.eval.final_window,
            r.counters.oracle_queries,
            r.counters.env_steps,
            dir.display()
        );
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Parses one `scheme[:variant]` entry of the compare list.
pub fn parse_entry(settings: &Settings, entry: &str) -> Result<SchemeSpec, CliError> {
    let mut s = settings.clone();
    let (name, variant) = entry.split_once(':').unwrap_or((entry, ""));
    s.scheme.name = name.trim().into();
    s.scheme.variant = "interval".into();
    s.scheme.o2o_interval = false;
    match (name.trim(), variant.trim()) {
        (_, "") => {}
        ("o2o", "interval") => s.scheme.o2o_interval = true,
        ("o2o", "ft") => {}
        ("oap", v) => s.scheme.variant = v.into(),
        (n, v) => return Err(CliError::Config(format!("scheme {n} has no variant {v:?}"))),
    }
    s.scheme_spec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub scheme: String,
    pub variant: String,
    pub env: String,
    pub scores: Vec<f64>,
    pub failures: usize,
}

impl AggregateRow {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Population standard deviation over seeds.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.scores.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.scores.len() as f64).sqrt()
    }
}

pub const AGGREGATE_HEADER: &str = "scheme,variant,env,runs,failures,mean_norm_score,std_norm_score";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let (m, s) = if r.scores.is_empty() { (String::new(), String::new()) } else { (formats::fmt_f64(r.mean()), formats::fmt_f64(r.std())) };
        writeln!(out, "{},{},{},{},{},{m},{s}", r.scheme, r.variant, r.env, r.scores.len(), r.failures).unwrap();
    }
    out
}

pub fn aggregate_table(rows: &[AggregateRow]) -> String {
    let mut out = format!("{:<12} {:<9} {:<12} {:>16}  runs\n", "scheme", "variant", "env", "score");
    for r in rows {
        let score = if r.scores.is_empty() { "n/a".to_string() } else { format!("{:.1} ± {:.1}", r.mean(), r.std()) };
        write!(out, "{:<12} {:<9} {:<12} {:>16}  {}", r.scheme, r.variant, r.env, score, r.scores.len()).unwrap();
        if r.failures > 0 {
            write!(out, " ({} failed)", r.failures).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Runs every `scheme x seed` pair on a pool of `settings.workers` threads,
/// each into its own directory, then aggregates final scores per scheme.
pub fn compare(settings: &Settings, schemes: &str) -> Result<Vec<AggregateRow>, CliError> {
    let specs: Vec<SchemeSpec> = schemes.split(',').filter(|e| !e.trim().is_empty()).map(|e| parse_entry(settings, e)).collect::<Result<_, _>>()?;
    if specs.is_empty() {
        return Err(CliError::Usage("--schemes is empty".into()));
    }
    let env = run::build_env(settings)?;
    let reference = run::references(&env.env)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let datasets: Vec<_> = pool.install(|| {
        settings.seeds.par_iter().map(|&seed| run::prepare_dataset(settings, &env.env, seed)).collect::<Result<Vec<_>, _>>()
    })?;
    let jobs: Vec<RunJob> = specs
        .iter()
        .flat_map(|spec| {
            settings.seeds.iter().zip(&datasets).map(|(&seed, dataset)| RunJob { settings, spec: *spec, seed, env: &env, dataset, reference })
        })
        .collect();
    let window = settings.harness.eval.final_window;
    let results: Vec<Result<f64, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let dir = settings.out.join(job.label());
                let result = job.execute(&dir).map(|o| o.report.final_score(window));
                if let Err(e) = &result {
                    warn!("run {} failed: {e}", job.label());
                    let _ = run::write_file(&dir.join("error.txt"), format!("{e}\n").as_bytes());
                }
                result
            })
            .collect()
    });
    let per_spec = settings.seeds.len();
    let rows: Vec<AggregateRow> = specs
        .iter()
        .zip(results.chunks(per_spec))
        .map(|(spec, chunk)| AggregateRow {
            scheme: spec.scheme.tag().into(),
            variant: spec.variant_tag().into(),
            env: settings.env.name.clone(),
            scores: chunk.iter().filter_map(|r| r.as_ref().ok().copied()).collect(),
            failures: chunk.iter().filter(|r| r.is_err()).count(),
        })
        .collect();
    let table = aggregate_table(&rows);
    let mut art = Artifacts::new(&settings.out);
    art.write("aggregate.csv", aggregate_csv(&rows).as_bytes())?;
    art.write("aggregate.txt", table.as_bytes())?;
    let echo = settings.echo();
    art.finish(settings.seeds[0], &[("config", run::sha256_hex(echo.as_bytes()))], &echo)?;
    print!("{table}");
    Ok(rows)
}

pub fn verify_theory(settings: &Settings) -> Result<(), CliError> {
    let seed = settings.seeds[0];
    let reports = verify_all(&settings.theory, seed)?;
    let mut art = Artifacts::new(&settings.out);
    art.write_with("theory.csv", |w| formats::write_theory(&reports, w))?;
    let echo = settings.echo();
    art.finish(seed, &[("config", run::sha256_hex(echo.as_bytes()))], &echo)?;
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.checks().into_iter().filter(|(_, ok)| !ok).map(move |(name, _)| format!("instance {} {name}", r.index)))
        .collect();
    println!("{} instances, {} failed checks, csv {}", reports.len(), failed.len(), settings.out.join("theory.csv").display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("theory checks failed: {}", failed.join(", "))))
    }
}

pub fn diagnose(settings: &Settings, snapshot: Option<&Path>) -> Result<(), CliError> {
    let env = run::build_env(settings)?;
    let seed = settings.seeds[0];
    let dataset = run::prepare_dataset(settings, &env.env, seed)?;
    let agent = match snapshot {
        Some(dir) => run::load_snapshot(dir)?,
        None => {
            let reference = run::references(&env.env)?;
            let job = RunJob { settings, spec: settings.scheme_spec()?, seed, env: &env, dataset: &dataset, reference };
            job.execute(&settings.out.join(job.label()))?.agent
        }
    };
    let oracle = run::build_oracle(&env.env, settings.env.gamma, 0.0, seed)?;
    let rows = diagnostics(&agent, &dataset.dataset, &oracle)?;
    let mut art = Artifacts::new(&settings.out);
    art.write_with("diagnostics.csv", |w| formats::write_diagnostics(&rows, w))?;
    let echo = settings.echo();
    art.finish(
        seed,
        &[("config", run::sha256_hex(echo.as_bytes())), ("dataset", run::sha256_hex(&dataset.text))],
        &echo,
    )?;
    let mut d: Vec<f64> = rows.iter().map(|r| r.divergence).collect();
    d.sort_by(f64::total_cmp);
    let improving = rows.iter().filter(|r| r.value_gain > 0.0).count();
    println!(
        "{} samples: median divergence {:.4}, max {:.4}, value gain > 0 on {}, harmful fraction {:.4}",
        rows.len(),
        d.get(d.len() / 2).copied().unwrap_or(0.0),
        d.last().copied().unwrap_or(0.0),
        improving,
        harmful_divergence_fraction(&rows)
    );
    Ok(())
}
