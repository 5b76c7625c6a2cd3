//! Training schemes: Offline, Online, Online-Mix, Offline-to-Online and the
//! periodic query loop of Offline-with-Action-Preferences (OAP).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use log::{debug, info};

use crate::agent::{AgentConfig, Batch, Td3bcAgent};
use crate::data::{sample_indices, LabelCounts, OfflineDataset, PreferredActionTable, QueryDataset, QueryRecord, Transition};
use crate::env::{Env, Episode};
use crate::error::{Error, Result};
use crate::preference::{preference_query, rank_divergence, select_query_batch, OracleQ, QueryBudget};
use crate::ranknet::{RankNet, RankNetConfig};
use crate::rng::{derive_seed, seeded, standard_normal, SeededRng};

const AGENT_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;
const RANKNET_STREAM: u64 = 3;
const EXPLORATION_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;

/// Seed of the shared rollouts behind the normalisation reference returns.
pub const REFERENCE_SEED: u64 = 0x5EED;

/// Query schedule: `n_train` agent updates with a query round every `m_inter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OapSchedule {
    pub n_train: usize,
    pub m_inter: usize,
    pub k_total: usize,
}

impl OapSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.m_inter == 0 {
            return Err(Error::Config("n_train and m_inter must be positive".into()));
        }
        if self.n_train % self.m_inter != 0 {
            return Err(Error::Config(format!("m_inter {} does not divide n_train {}", self.m_inter, self.n_train)));
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.n_train / self.m_inter
    }

    /// `K_total · M_inter / N_train`, rounded down.
    pub fn per_round_queries(&self) -> usize {
        ((self.k_total as u128 * self.m_inter as u128) / self.n_train as u128) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Offline,
    Online,
    OnlineMix,
    OfflineToOnline,
    Oap,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Offline, Scheme::Online, Scheme::OnlineMix, Scheme::OfflineToOnline, Scheme::Oap];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Offline => "offline",
            Scheme::Online => "online",
            Scheme::OnlineMix => "online-mix",
            Scheme::OfflineToOnline => "o2o",
            Scheme::Oap => "oap",
        }
    }

    /// Resources each scheme may consume:
    /// (offline data, state transitions, reward function, preference queries).
    pub fn resources(self) -> [bool; 4] {
        match self {
            Scheme::Offline => [true, false, false, false],
            Scheme::Online => [false, true, true, false],
            Scheme::OnlineMix => [true, true, true, false],
            Scheme::OfflineToOnline => [true, true, true, false],
            Scheme::Oap => [true, false, false, true],
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// How OAP spends its query budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum OapVariant {
    /// Periodic rounds with RankNet pseudo-labels.
    #[default]
    Interval,
    /// Pre-train offline, spend the whole budget in one round, then fine-tune
    /// for `m_inter` steps.
    FineTune,
    /// Every sample is oracle-labelled every round; no budget, no RankNet.
    Infinite,
    /// Budgeted oracle labels only; no pseudo-labels.
    NoRankNet,
}

impl OapVariant {
    pub const ALL: [OapVariant; 4] = [OapVariant::Interval, OapVariant::FineTune, OapVariant::Infinite, OapVariant::NoRankNet];

    pub fn tag(self) -> &'static str {
        match self {
            OapVariant::Interval => "interval",
            OapVariant::FineTune => "ft",
            OapVariant::Infinite => "inf",
            OapVariant::NoRankNet => "no-rn",
        }
    }

    fn uses_ranknet(self) -> bool {
        matches!(self, OapVariant::Interval | OapVariant::FineTune)
    }
}

impl FromStr for OapVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OapVariant::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown oap variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub oap_variant: OapVariant,
    /// Offline-to-Online only: spread interactions through training instead
    /// of pre-train then fine-tune.
    pub o2o_interval: bool,
    /// Environment steps for Online, Online-Mix and Offline-to-Online.
    pub online_budget: usize,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme, online_budget: usize) -> Self {
        Self { scheme, oap_variant: OapVariant::Interval, o2o_interval: false, online_budget }
    }

    pub fn oap(variant: OapVariant) -> Self {
        Self { scheme: Scheme::Oap, oap_variant: variant, o2o_interval: false, online_budget: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oap_variant != OapVariant::Interval && self.scheme != Scheme::Oap {
            return Err(Error::Config(format!("oap variant {} given for scheme {}", self.oap_variant.tag(), self.scheme)));
        }
        if self.o2o_interval && self.scheme != Scheme::OfflineToOnline {
            return Err(Error::Config(format!("o2o interval flag given for scheme {}", self.scheme)));
        }
        if matches!(self.scheme, Scheme::Online | Scheme::OnlineMix | Scheme::OfflineToOnline) && self.online_budget == 0 {
            return Err(Error::Config(format!("scheme {} needs a positive online budget", self.scheme)));
        }
        Ok(())
    }

    pub fn variant_tag(&self) -> &'static str {
        match self.scheme {
            Scheme::Oap => self.oap_variant.tag(),
            Scheme::OfflineToOnline if self.o2o_interval => "interval",
            Scheme::OfflineToOnline => "ft",
            _ => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub interval: usize,
    pub episodes: usize,
    /// Number of trailing evaluations averaged into the final score.
    pub final_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { interval: 1000, episodes: 10, final_window: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    /// Initial uniformly random environment steps.
    pub warmup: usize,
    /// Gaussian exploration noise as a fraction of the action bound.
    pub exploration_noise: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { warmup: 1000, exploration_noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub agent: AgentConfig,
    pub ranknet: RankNetConfig,
    pub schedule: OapSchedule,
    pub eval: EvalConfig,
    pub online: OnlineConfig,
    pub unqueried_first: bool,
}

impl HarnessConfig {
    /// Sizes from the paper's hyperparameter table.
    pub fn paper() -> Self {
        Self {
            agent: AgentConfig::default(),
            ranknet: RankNetConfig::default(),
            schedule: OapSchedule { n_train: 1_000_000, m_inter: 100_000, k_total: 100_000 },
            eval: EvalConfig::default(),
            online: OnlineConfig::default(),
            unqueried_first: true,
        }
    }

    /// Reduced sizes that run on a single CPU core in seconds per run.
    pub fn desk() -> Self {
        Self {
            agent: AgentConfig { actor_hidden: vec![64, 64], critic_hidden: vec![64, 64], batch_size: 64, ..AgentConfig::default() },
            ranknet: RankNetConfig { hidden: vec![64, 32], ..RankNetConfig::default() },
            schedule: OapSchedule { n_train: 50_000, m_inter: 5_000, k_total: 5_000 },
            ..Self::paper()
        }
    }
}

/// Mean undiscounted returns of the random policy and the expert controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceReturns {
    pub random: f64,
    pub expert: f64,
}

impl ReferenceReturns {
    pub fn normalize(&self, ret: f64) -> f64 {
        100.0 * (ret - self.random) / (self.expert - self.random)
    }
}

pub fn eval_starts(env: &Env, episodes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..episodes).map(|_| env.reset(&mut rng)).collect()
}

pub fn reference_returns(env: &Env, episodes: usize, seed: u64) -> Result<ReferenceReturns> {
    let starts = eval_starts(env, episodes, seed);
    let mut rng = seeded(derive_seed(seed, 1));
    let dist = match env {
        Env::Grid(g) => Some(g.bfs_distances()),
        Env::Point(_) => None,
    };
    let (mut random, mut expert) = (0.0, 0.0);
    for s in &starts {
        random += crate::env::rollout_return(env, s.clone(), |_| Ok(env.random_action(&mut rng)))?;
        expert += crate::env::rollout_return(env, s.clone(), |x| env.expert_action(x, dist.as_deref()))?;
    }
    let n = episodes.max(1) as f64;
    let r = ReferenceReturns { random: random / n, expert: expert / n };
    if !(r.expert > r.random) {
        return Err(Error::Domain(format!("expert return {} does not exceed random return {}", r.expert, r.random)));
    }
    Ok(r)
}

/// Mean and population standard deviation of deterministic-policy returns,
/// plus the number of environment steps spent.
pub fn evaluate(agent: &Td3bcAgent, env: &Env, starts: &[Vec<f64>]) -> Result<(f64, f64, usize)> {
    let mut returns = Vec::with_capacity(starts.len());
    let mut steps = 0;
    for s in starts {
        let mut ep = Episode::new(env, s.clone());
        let mut total = 0.0;
        while !ep.done {
            let a = agent.act(&ep.state)?;
            total += ep.step(&a)?.reward;
        }
        steps += ep.t;
        returns.push(total);
    }
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var), steps))
}

/// Resource counters. Evaluation rollouts are tracked separately and never
/// count as training-time interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub agent_updates: usize,
    pub env_steps: usize,
    pub reward_queries: usize,
    pub oracle_queries: usize,
    pub pseudo_labels: usize,
    pub offline_samples_used: usize,
    pub eval_env_steps: usize,
}

impl Counters {
    /// Which resources were actually touched, in [`Scheme::resources`] order.
    pub fn usage(&self) -> [bool; 4] {
        [self.offline_samples_used > 0, self.env_steps > 0, self.reward_queries > 0, self.oracle_queries > 0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub norm_score: f64,
    pub queries_used: usize,
    pub env_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundReport {
    pub step: usize,
    pub oracle_queries: usize,
    pub policy_preferred: usize,
    pub ranknet_cost: Option<f64>,
    pub pseudo_labels: usize,
    pub labels: LabelCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scheme: Scheme,
    pub variant: String,
    pub env: String,
    pub seed: u64,
    pub evals: Vec<EvalPoint>,
    pub counters: Counters,
    pub rounds: Vec<RoundReport>,
    /// Oracle budget limit (`None` when unlimited or unused).
    pub k_total: Option<usize>,
    pub final_labels: Option<LabelCounts>,
}

impl RunReport {
    fn new(spec: &SchemeSpec, env: &Env, seed: u64) -> Self {
        Self {
            scheme: spec.scheme,
            variant: spec.variant_tag().into(),
            env: env.name().into(),
            seed,
            evals: Vec::new(),
            counters: Counters::default(),
            rounds: Vec::new(),
            k_total: None,
            final_labels: None,
        }
    }

    /// Mean normalised score over the trailing `window` evaluations.
    pub fn final_score(&self, window: usize) -> f64 {
        trailing_mean(self.evals.iter().map(|e| e.norm_score), self.evals.len(), window)
    }

    pub fn final_return(&self, window: usize) -> f64 {
        trailing_mean(self.evals.iter().map(|e| e.return_mean), self.evals.len(), window)
    }

    /// Checks the counter pattern against the scheme's resource table.
    pub fn audit(&self) -> Result<()> {
        let allowed = self.scheme.resources();
        let used = self.counters.usage();
        let names = ["offline data", "state transitions", "reward function", "preference queries"];
        for k in 0..4 {
            if used[k] && !allowed[k] {
                return Err(Error::State(format!("scheme {} used {}", self.scheme, names[k])));
            }
            // A zero budget legitimately issues no queries.
            let optional = k == 3 && self.k_total == Some(0);
            if allowed[k] && !used[k] && !optional {
                return Err(Error::State(format!("scheme {} never used {}", self.scheme, names[k])));
            }
        }
        if let Some(k) = self.k_total {
            if self.counters.oracle_queries > k {
                return Err(Error::State(format!("{} oracle queries exceed the limit {k}", self.counters.oracle_queries)));
            }
        }
        Ok(())
    }
}

fn trailing_mean(values: impl Iterator<Item = f64>, len: usize, window: usize) -> f64 {
    let take = window.min(len);
    if take == 0 {
        return f64::NAN;
    }
    values.skip(len - take).sum::<f64>() / take as f64
}

/// Everything a run reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub env: &'a Env,
    pub dataset: &'a OfflineDataset,
    /// Required by OAP only.
    pub oracle: Option<&'a OracleQ>,
    pub reference: ReferenceReturns,
}

/// Final state of a run, for snapshots and diagnostics.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub agent: Td3bcAgent,
    pub table: Option<PreferredActionTable>,
    pub query_log: QueryDataset,
    pub ranknet: Option<RankNet>,
}

struct Trainer<'a> {
    ctx: RunContext<'a>,
    cfg: &'a HarnessConfig,
    agent: Td3bcAgent,
    sampler: SeededRng,
    starts: Vec<Vec<f64>>,
    report: RunReport,
    step: usize,
}

impl<'a> Trainer<'a> {
    fn new(spec: &SchemeSpec, cfg: &'a HarnessConfig, ctx: RunContext<'a>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let env = ctx.env;
        if ctx.dataset.state_dim != env.state_dim() || ctx.dataset.action_dim != env.action_dim() {
            return Err(Error::Config("dataset dimensions do not match the environment".into()));
        }
        let mut agent_cfg = cfg.agent.clone();
        agent_cfg.gamma = ctx.dataset.gamma;
        if matches!(spec.scheme, Scheme::Online | Scheme::OnlineMix) {
            agent_cfg.behavior_cloning = false;
        }
        // Online learns from scratch and never sees the dataset's statistics.
        let stats = if spec.scheme == Scheme::Online {
            crate::data::StateStats::identity(env.state_dim())
        } else {
            ctx.dataset.state_stats()
        };
        let agent = Td3bcAgent::new(agent_cfg, env.state_dim(), env.action_dim(), env.max_action(), stats, derive_seed(seed, AGENT_STREAM))?;
        Ok(Self {
            ctx,
            cfg,
            agent,
            sampler: seeded(derive_seed(seed, SAMPLING_STREAM)),
            starts: eval_starts(env, cfg.eval.episodes, derive_seed(seed, EVAL_STREAM)),
            report: RunReport::new(spec, env, seed),
            step: 0,
        })
    }

    fn queries_used(&self) -> usize {
        self.report.counters.oracle_queries
    }

    /// One update on a uniform minibatch of `buffer`; indices below
    /// `n_offline` are dataset samples.
    fn update(&mut self, buffer: &[Transition], n_offline: usize, table: Option<&PreferredActionTable>) -> Result<()> {
        let idx = sample_indices(buffer.len(), self.cfg.agent.batch_size, &mut self.sampler);
        self.report.counters.offline_samples_used += idx.iter().filter(|&&i| i < n_offline).count();
        let batch = Batch::gather(buffer, &idx, table)?;
        self.agent
            .train_step(&batch)
            .map_err(|e| Error::Numeric(format!("{e} (step {}, scheme {})", self.step + 1, self.report.scheme)))?;
        self.step += 1;
        self.report.counters.agent_updates += 1;
        if self.step % self.cfg.eval.interval == 0 {
            self.evaluate()?;
        }
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        let (mean, std, steps) = evaluate(&self.agent, self.ctx.env, &self.starts)?;
        self.report.counters.eval_env_steps += steps;
        let point = EvalPoint {
            step: self.step,
            return_mean: mean,
            return_std: std,
            norm_score: self.ctx.reference.normalize(mean),
            queries_used: self.queries_used(),
            env_steps: self.report.counters.env_steps,
        };
        debug!("{} step {}: return {mean:.3} score {:.2}", self.report.scheme, self.step, point.norm_score);
        self.report.evals.push(point);
        Ok(())
    }

    fn finish(mut self, table: Option<PreferredActionTable>, query_log: QueryDataset, ranknet: Option<RankNet>) -> Result<RunOutcome> {
        if self.report.evals.is_empty() {
            self.evaluate()?;
        }
        self.report.final_labels = table.as_ref().map(|t| t.counts(self.ctx.dataset));
        self.report.audit()?;
        info!(
            "{} [{}] seed {}: final score {:.2}",
            self.report.scheme,
            self.report.variant,
            self.report.seed,
            self.report.final_score(self.cfg.eval.final_window)
        );
        Ok(RunOutcome { report: self.report, agent: self.agent, table, query_log, ranknet })
    }
}

/// Environment interaction for the online phases.
struct Collector<'a> {
    env: &'a Env,
    episode: Episode<'a>,
    rng: SeededRng,
    warmup_left: usize,
    noise: f64,
}

impl<'a> Collector<'a> {
    fn new(env: &'a Env, cfg: &OnlineConfig, seed: u64, random_warmup: bool) -> Self {
        let mut rng = seeded(derive_seed(seed, EXPLORATION_STREAM));
        let start = env.reset(&mut rng);
        Self {
            env,
            episode: Episode::new(env, start),
            rng,
            warmup_left: if random_warmup { cfg.warmup } else { 0 },
            noise: cfg.exploration_noise * env.max_action(),
        }
    }

    fn collect(&mut self, agent: &Td3bcAgent, buffer: &mut Vec<Transition>, counters: &mut Counters) -> Result<()> {
        let max = self.env.max_action();
        let action = if self.warmup_left > 0 {
            self.warmup_left -= 1;
            self.env.random_action(&mut self.rng)
        } else {
            let mut a = agent.act(&self.episode.state)?;
            for v in a.iter_mut() {
                *v = (*v + self.noise * standard_normal(&mut self.rng)).clamp(-max, max);
            }
            a
        };
        let step = self.episode.step(&action)?;
        counters.env_steps += 1;
        counters.reward_queries += 1;
        buffer.push(Transition { s: step.state, a: step.action, s_next: step.next_state, r: step.reward, done: step.terminal });
        if self.episode.done {
            let start = self.env.reset(&mut self.rng);
            self.episode = Episode::new(self.env, start);
        }
        Ok(())
    }
}

/// Runs `n_steps` updates while spreading `interactions` environment steps
/// evenly across them (the first `warmup` of which act randomly).
fn interleaved(
    tr: &mut Trainer<'_>,
    collector: &mut Collector<'_>,
    buffer: &mut Vec<Transition>,
    n_offline: usize,
    n_steps: usize,
    interactions: usize,
) -> Result<()> {
    let mut collected = 0;
    // Online learning from scratch needs transitions before the first update.
    let upfront = if buffer.is_empty() { collector.warmup_left.min(interactions).max(1) } else { 0 };
    while collected < upfront {
        collector.collect(&tr.agent, buffer, &mut tr.report.counters)?;
        collected += 1;
    }
    for t in 1..=n_steps {
        let target = upfront + ((interactions - upfront) as u128 * t as u128 / n_steps as u128) as usize;
        while collected < target {
            collector.collect(&tr.agent, buffer, &mut tr.report.counters)?;
            collected += 1;
        }
        tr.update(buffer, n_offline, None)?;
    }
    Ok(())
}

/// Runs one scheme end to end.
pub fn run_scheme(spec: &SchemeSpec, cfg: &HarnessConfig, ctx: RunContext<'_>, seed: u64) -> Result<RunOutcome> {
    cfg.schedule.validate()?;
    let n_train = cfg.schedule.n_train;
    let data = &ctx.dataset.transitions;
    match spec.scheme {
        Scheme::Offline => {
            let mut tr = Trainer::new(spec, cfg, ctx, seed)?;
            for _ in 0..n_train {
                tr.update(data, data.len(), None)?;
            }
            tr.finish(None, QueryDataset::default(), None)
        }
        Scheme::Online | Scheme::OnlineMix => {
            let mut tr = Trainer::new(spec, cfg, ctx, seed)?;
            let mix = spec.scheme == Scheme::OnlineMix;
            let mut buffer = if mix { data.clone() } else { Vec::new() };
            let n_offline = buffer.len();
            let mut collector = Collector::new(ctx.env, &cfg.online, seed, !mix);
            interleaved(&mut tr, &mut collector, &mut buffer, n_offline, n_train, spec.online_budget)?;
            tr.finish(None, QueryDataset::default(), None)
        }
        Scheme::OfflineToOnline => {
            let mut tr = Trainer::new(spec, cfg, ctx, seed)?;
            let mut buffer = data.clone();
            let n_offline = buffer.len();
            let mut collector = Collector::new(ctx.env, &cfg.online, seed, false);
            if spec.o2o_interval {
                interleaved(&mut tr, &mut collector, &mut buffer, n_offline, n_train, spec.online_budget)?;
            } else {
                for _ in 0..n_train {
                    tr.update(&buffer, n_offline, None)?;
                }
                interleaved(&mut tr, &mut collector, &mut buffer, n_offline, spec.online_budget, spec.online_budget)?;
            }
            tr.finish(None, QueryDataset::default(), None)
        }
        Scheme::Oap => run_oap(spec.oap_variant, cfg, ctx, seed),
    }
}

/// The OAP loop: train with the adjusted objective, and every `m_inter`
/// steps query the most divergent samples, retrain the RankNet on all
/// queries so far and pseudo-label the remaining samples.
pub fn run_oap(variant: OapVariant, cfg: &HarnessConfig, ctx: RunContext<'_>, seed: u64) -> Result<RunOutcome> {
    let schedule = cfg.schedule;
    schedule.validate()?;
    let oracle = ctx.oracle.ok_or_else(|| Error::Config("the OAP scheme needs an oracle".into()))?;
    let spec = SchemeSpec::oap(variant);
    let mut tr = Trainer::new(&spec, cfg, ctx, seed)?;
    let ds = ctx.dataset;
    let mut table = PreferredActionTable::new(ds);
    let mut dq = QueryDataset::default();
    let mut budget = match variant {
        OapVariant::Infinite => QueryBudget::unlimited(),
        _ => QueryBudget::limited(schedule.k_total),
    };
    tr.report.k_total = budget.k_total;
    let mut ranknet = if variant.uses_ranknet() {
        let stats = ds.state_stats();
        Some(RankNet::new(cfg.ranknet.clone(), ds.state_dim, ds.action_dim, stats, derive_seed(seed, RANKNET_STREAM))?)
    } else {
        None
    };
    let data = &ds.transitions;
    match variant {
        OapVariant::FineTune => {
            for _ in 0..schedule.n_train {
                tr.update(data, data.len(), Some(&table))?;
            }
            query_round(&mut tr, oracle, &mut table, &mut budget, &mut dq, ranknet.as_mut(), schedule.k_total)?;
            for _ in 0..schedule.m_inter {
                tr.update(data, data.len(), Some(&table))?;
            }
        }
        _ => {
            let per_round = if variant == OapVariant::Infinite { ds.len() } else { schedule.per_round_queries() };
            for _ in 0..schedule.n_train {
                tr.update(data, data.len(), Some(&table))?;
                if tr.step % schedule.m_inter == 0 {
                    query_round(&mut tr, oracle, &mut table, &mut budget, &mut dq, ranknet.as_mut(), per_round)?;
                }
            }
        }
    }
    if let Some(k) = budget.k_total {
        if budget.used > k {
            return Err(Error::State(format!("budget audit failed: {} queries for limit {k}", budget.used)));
        }
    }
    tr.finish(Some(table), dq, ranknet)
}

fn query_round(
    tr: &mut Trainer<'_>,
    oracle: &OracleQ,
    table: &mut PreferredActionTable,
    budget: &mut QueryBudget,
    dq: &mut QueryDataset,
    ranknet: Option<&mut RankNet>,
    k: usize,
) -> Result<()> {
    let ds = tr.ctx.dataset;
    let n = ds.len();
    let states: Vec<f64> = ds.transitions.iter().flat_map(|t| t.s.iter().copied()).collect();
    let flat = tr.agent.act_batch(&states, n)?;
    // Queries, labels and divergences use the action as the environment
    // executes it, so the ranker cannot separate candidates by encoding alone.
    let policy: Vec<Vec<f64>> =
        flat.chunks_exact(ds.action_dim).map(|a| tr.ctx.env.canonical_action(a)).collect::<Result<_>>()?;
    let scores = rank_divergence(&policy, ds)?;
    let selected = select_query_batch(&scores, table, k, budget, tr.cfg.unqueried_first);
    let mut policy_preferred = 0;
    for &i in &selected {
        let t = &ds.transitions[i];
        let wins = preference_query(oracle, budget, &t.s, &t.a, &policy[i])?;
        tr.report.counters.oracle_queries += 1;
        policy_preferred += wins as usize;
        table.set_oracle(i, if wins { policy[i].clone() } else { t.a.clone() });
        dq.push(QueryRecord {
            index: i,
            state: t.s.clone(),
            dataset_action: t.a.clone(),
            policy_action: policy[i].clone(),
            preferred_is_policy: wins,
            step: tr.step,
        });
    }
    let mut ranknet_cost = None;
    let mut pseudo = 0;
    if let Some(rn) = ranknet {
        ranknet_cost = rn.train(dq)?;
        if rn.is_trained() {
            let rest: Vec<usize> = (0..n).filter(|&i| !table.is_queried(i)).collect();
            if !rest.is_empty() {
                let mut s = Vec::with_capacity(rest.len() * ds.state_dim);
                let mut a = Vec::with_capacity(rest.len() * ds.action_dim);
                let mut p = Vec::with_capacity(rest.len() * ds.action_dim);
                for &i in &rest {
                    s.extend_from_slice(&ds.transitions[i].s);
                    a.extend_from_slice(&ds.transitions[i].a);
                    p.extend_from_slice(&policy[i]);
                }
                let wins = rn.pseudo_query_batch(&s, &a, &p, rest.len())?;
                for (&i, w) in rest.iter().zip(wins) {
                    table.set_pseudo(i, if w { policy[i].clone() } else { ds.transitions[i].a.clone() })?;
                }
                pseudo = rest.len();
            }
        }
    }
    tr.report.counters.pseudo_labels += pseudo;
    let labels = table.counts(ds);
    info!(
        "round at step {}: {} queries ({} policy wins), ranknet cost {:?}, {} pseudo labels, {} deviating",
        tr.step,
        selected.len(),
        policy_preferred,
        ranknet_cost,
        pseudo,
        labels.deviating
    );
    tr.report.rounds.push(RoundReport { step: tr.step, oracle_queries: selected.len(), policy_preferred, ranknet_cost, pseudo_labels: pseudo, labels });
    Ok(())
}

/// Per-sample action divergence `‖π(s_i) - a_i‖` and oracle value gain
/// `Q*(s_i, π(s_i)) - Q*(s_i, a_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub index: usize,
    pub divergence: f64,
    pub value_gain: f64,
}

pub fn diagnostics(agent: &Td3bcAgent, ds: &OfflineDataset, oracle: &OracleQ) -> Result<Vec<DiagnosticRow>> {
    let states: Vec<f64> = ds.transitions.iter().flat_map(|t| t.s.iter().copied()).collect();
    let flat = agent.act_batch(&states, ds.len())?;
    ds.transitions
        .iter()
        .zip(flat.chunks_exact(ds.action_dim))
        .enumerate()
        .map(|(index, (t, pi))| {
            Ok(DiagnosticRow {
                index,
                divergence: libm::sqrt(crate::linalg::squared_distance(pi, &t.a)),
                value_gain: oracle.value(&t.s, pi)? - oracle.value(&t.s, &t.a)?,
            })
        })
        .collect()
}

/// Fraction of samples whose divergence exceeds the median while the value
/// gain is negative: large deviations in the wrong direction.
pub fn harmful_divergence_fraction(rows: &[DiagnosticRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut d: Vec<f64> = rows.iter().map(|r| r.divergence).collect();
    d.sort_by(f64::total_cmp);
    let median = if d.len() % 2 == 1 { d[d.len() / 2] } else { 0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2]) };
    rows.iter().filter(|r| r.divergence > median && r.value_gain < 0.0).count() as f64 / rows.len() as f64
}
