//! Offline dataset `D`, preferred-action table `ã`, and the query log `D_q`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::env::{Env, Episode};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, standard_normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    /// True only for absorbing transitions; horizon truncation bootstraps.
    pub done: bool,
}

/// Behaviour-policy recipes, named after the D4RL tiers they imitate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityTier {
    Random,
    Medium,
    MediumReplay,
    MediumExpert,
    Expert,
}

impl QualityTier {
    pub const ALL: [QualityTier; 5] = [
        QualityTier::Random,
        QualityTier::Medium,
        QualityTier::MediumReplay,
        QualityTier::MediumExpert,
        QualityTier::Expert,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QualityTier::Random => "random",
            QualityTier::Medium => "medium",
            QualityTier::MediumReplay => "medium-replay",
            QualityTier::MediumExpert => "medium-expert",
            QualityTier::Expert => "expert",
        }
    }
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for QualityTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QualityTier::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset tier {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub quality: Option<QualityTier>,
    pub source_seed: Option<u64>,
}

impl OfflineDataset {
    pub fn new(transitions: Vec<Transition>, state_dim: usize, action_dim: usize, gamma: f64) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::Config("dataset must contain at least one transition".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.s.len() != state_dim || t.s_next.len() != state_dim || t.a.len() != action_dim {
                return Err(Error::Config(format!("transition {i} has inconsistent dimensions")));
            }
        }
        Ok(Self { transitions, state_dim, action_dim, gamma, quality: None, source_seed: None })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    pub fn state_stats(&self) -> StateStats {
        StateStats::from_states(self.transitions.iter().map(|t| t.s.as_slice()), self.state_dim)
    }
}

/// Per-dimension mean and standard deviation of dataset states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateStats {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population statistics with a `1e-3` floor added to the deviation.
    pub fn from_states<'a, I: Iterator<Item = &'a [f64]> + Clone>(states: I, dim: usize) -> Self {
        let n = states.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for s in states.clone() {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for s in states {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| libm::sqrt(v / n) + 1e-3).collect();
        Self { mean, std }
    }

    pub fn normalize_into(&self, s: &[f64], out: &mut Vec<f64>) {
        out.extend(s.iter().zip(&self.mean).zip(&self.std).map(|((v, m), sd)| (v - m) / sd));
    }
}

/// Summary of the source trajectories behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub episode_returns: Vec<f64>,
}

impl GenerationSummary {
    pub fn mean_return(&self) -> f64 {
        if self.episode_returns.is_empty() {
            return 0.0;
        }
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }
}

/// Expert action with Gaussian noise `σ = noise·a_max` and a uniformly random
/// action with probability `random_prob`, projected onto the action set.
struct NoisyExpert {
    random_prob: f64,
    noise: f64,
}

impl NoisyExpert {
    const MEDIUM: NoisyExpert = NoisyExpert { random_prob: 0.2, noise: 0.3 };

    fn act<R: Rng + ?Sized>(&self, env: &Env, s: &[f64], dist: Option<&[Option<usize>]>, rng: &mut R) -> Result<Vec<f64>> {
        if rng.random::<f64>() < self.random_prob {
            return Ok(env.random_action(rng));
        }
        let sigma = self.noise * env.max_action();
        let mut a = env.expert_action(s, dist)?;
        for v in a.iter_mut() {
            *v = (*v + sigma * standard_normal(rng)).clamp(-env.max_action(), env.max_action());
        }
        env.canonical_action(&a)
    }
}

#[derive(Clone, Copy)]
enum Behaviour {
    Random,
    Expert,
    Noisy { random_prob: f64, noise: f64 },
    /// Random-action probability annealed from 1 to the medium level over
    /// the collection, imitating snapshots of an improving learner.
    Improving,
}

fn collect(env: &Env, behaviour: Behaviour, n: usize, seed: u64, out: &mut Vec<Transition>, returns: &mut Vec<f64>) -> Result<()> {
    let mut rng = seeded(seed);
    let dist = match env {
        Env::Grid(g) => Some(g.bfs_distances()),
        Env::Point(_) => None,
    };
    let dist = dist.as_deref();
    let target = out.len() + n;
    while out.len() < target {
        let start = env.reset(&mut rng);
        let mut ep = Episode::new(env, start);
        let mut ret = 0.0;
        while !ep.done && out.len() < target {
            let a = match behaviour {
                Behaviour::Random => env.random_action(&mut rng),
                Behaviour::Expert => env.expert_action(&ep.state, dist)?,
                Behaviour::Noisy { random_prob, noise } => NoisyExpert { random_prob, noise }.act(env, &ep.state, dist, &mut rng)?,
                Behaviour::Improving => {
                    let progress = (out.len() + n - target) as f64 / n as f64;
                    let p = 1.0 - (1.0 - NoisyExpert::MEDIUM.random_prob) * progress;
                    NoisyExpert { random_prob: p, noise: NoisyExpert::MEDIUM.noise }.act(env, &ep.state, dist, &mut rng)?
                }
            };
            let step = ep.step(&a)?;
            ret += step.reward;
            out.push(Transition { s: step.state, a: step.action, s_next: step.next_state, r: step.reward, done: step.terminal });
        }
        if ep.done || returns.is_empty() {
            returns.push(ret);
        }
    }
    Ok(())
}

/// Rolls out the tier's behaviour policy until `n_transitions` are collected.
pub fn generate_dataset(env: &Env, tier: QualityTier, n_transitions: usize, gamma: f64, seed: u64) -> Result<(OfflineDataset, GenerationSummary)> {
    if n_transitions == 0 {
        return Err(Error::Config("n_transitions must be positive".into()));
    }
    let medium = Behaviour::Noisy { random_prob: NoisyExpert::MEDIUM.random_prob, noise: NoisyExpert::MEDIUM.noise };
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut returns = Vec::new();
    match tier {
        QualityTier::Random => collect(env, Behaviour::Random, n_transitions, seed, &mut transitions, &mut returns)?,
        QualityTier::Expert => collect(env, Behaviour::Expert, n_transitions, seed, &mut transitions, &mut returns)?,
        QualityTier::Medium => collect(env, medium, n_transitions, seed, &mut transitions, &mut returns)?,
        QualityTier::MediumReplay => collect(env, Behaviour::Improving, n_transitions, seed, &mut transitions, &mut returns)?,
        QualityTier::MediumExpert => {
            let half = n_transitions / 2;
            collect(env, medium, half, derive_seed(seed, 1), &mut transitions, &mut returns)?;
            collect(env, Behaviour::Expert, n_transitions - half, derive_seed(seed, 2), &mut transitions, &mut returns)?;
        }
    }
    let mut ds = OfflineDataset::new(transitions, env.state_dim(), env.action_dim(), gamma)?;
    ds.quality = Some(tier);
    ds.source_seed = Some(seed);
    Ok((ds, GenerationSummary { episode_returns: returns }))
}

/// Uniform minibatch indices, sampled with replacement.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Init,
    Oracle,
    Pseudo,
}

impl LabelSource {
    pub fn tag(self) -> &'static str {
        match self {
            LabelSource::Init => "init",
            LabelSource::Oracle => "oracle",
            LabelSource::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelCounts {
    pub init: usize,
    pub oracle: usize,
    pub pseudo: usize,
    /// Entries whose preferred action differs from the dataset action.
    pub deviating: usize,
}

/// Per-sample preferred actions `ã_i`, initialised to the dataset actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferredActionTable {
    preferred: Vec<Vec<f64>>,
    source: Vec<LabelSource>,
}

impl PreferredActionTable {
    pub fn new(ds: &OfflineDataset) -> Self {
        Self {
            preferred: ds.transitions.iter().map(|t| t.a.clone()).collect(),
            source: vec![LabelSource::Init; ds.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.preferred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preferred.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<&[f64]> {
        self.preferred
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::State(format!("no preferred action for index {i}")))
    }

    pub fn source(&self, i: usize) -> LabelSource {
        self.source[i]
    }

    pub fn is_queried(&self, i: usize) -> bool {
        self.source[i] == LabelSource::Oracle
    }

    pub fn set_oracle(&mut self, i: usize, action: Vec<f64>) {
        self.preferred[i] = action;
        self.source[i] = LabelSource::Oracle;
    }

    /// Pseudo labels never overwrite oracle labels.
    pub fn set_pseudo(&mut self, i: usize, action: Vec<f64>) -> Result<()> {
        if self.source[i] == LabelSource::Oracle {
            return Err(Error::State(format!("index {i} already carries an oracle label")));
        }
        self.preferred[i] = action;
        self.source[i] = LabelSource::Pseudo;
        Ok(())
    }

    pub fn counts(&self, ds: &OfflineDataset) -> LabelCounts {
        let mut c = LabelCounts::default();
        for (i, src) in self.source.iter().enumerate() {
            match src {
                LabelSource::Init => c.init += 1,
                LabelSource::Oracle => c.oracle += 1,
                LabelSource::Pseudo => c.pseudo += 1,
            }
            if self.preferred[i] != ds.transitions[i].a {
                c.deviating += 1;
            }
        }
        c
    }
}

/// One oracle-labelled pair `(s_k, a_k, π^k(s_k), ã_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub index: usize,
    pub state: Vec<f64>,
    pub dataset_action: Vec<f64>,
    pub policy_action: Vec<f64>,
    pub preferred_is_policy: bool,
    /// Training step at which the query was issued.
    pub step: usize,
}

impl QueryRecord {
    pub fn preferred(&self) -> &[f64] {
        if self.preferred_is_policy { &self.policy_action } else { &self.dataset_action }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryDataset {
    pub records: Vec<QueryRecord>,
}

impl QueryDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: QueryRecord) {
        self.records.push(record);
    }
}
