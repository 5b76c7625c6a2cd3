//! Blackbox oracle `Q*`, the action-preference function, and budgeted
//! selection of which samples to query.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::{OfflineDataset, PreferredActionTable};
use crate::env::{GridMaze, Move, PointMass2D, TabularMdp};
use crate::error::{Error, Result};
use crate::linalg::squared_distance;
use crate::rng::{derive_seed, hashed_unit};

/// Dense state-action table, row-major `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Lowest-index maximiser.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.get(s, self.greedy(s))).collect()
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.greedy(s)).collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `‖T Q - Q‖∞` for the Bellman optimality operator `T`.
pub fn bellman_residual(mdp: &TabularMdp, q: &QTable) -> f64 {
    let next = QTable { n_states: mdp.n_states, n_actions: mdp.n_actions, values: mdp.backup(&q.state_values()) };
    next.sup_distance(q)
}

/// Iterates the optimality operator from `Q = 0` until successive iterates
/// differ by at most `tol`; the returned table then has residual `≤ γ·tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> QTable {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let next = QTable { n_states: mdp.n_states, n_actions: mdp.n_actions, values: mdp.backup(&q.state_values()) };
        let delta = next.sup_distance(&q);
        q = next;
        if delta <= tol {
            return q;
        }
    }
}

/// Exactly `sweeps` optimality backups from `Q = 0`.
pub fn truncated_value_iteration(mdp: &TabularMdp, sweeps: usize) -> QTable {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..sweeps {
        q.values = mdp.backup(&q.state_values());
    }
    q
}

pub const DEFAULT_VI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    ExactTabular,
    ExpertRollout,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq)]
enum OracleSource {
    Tabular { maze: GridMaze, q: QTable },
    Rollout { env: PointMass2D, horizon: usize, gamma: f64 },
}

/// Seeded bounded noise field: a fixed value in `[-amplitude, amplitude]`
/// for every state-action key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseField {
    pub amplitude: f64,
    pub seed: u64,
}

impl NoiseField {
    pub fn at(&self, key: u64) -> f64 {
        self.amplitude * hashed_unit(self.seed, key)
    }
}

/// Blackbox state-action value oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleQ {
    kind: OracleKind,
    source: OracleSource,
    noise: Option<NoiseField>,
    /// Sup-norm gap between a degraded table and the exact one.
    table_error: f64,
}

impl OracleQ {
    pub fn exact_tabular(maze: &GridMaze, gamma: f64) -> Result<Self> {
        let mdp = maze.to_tabular(gamma)?;
        let q = value_iteration(&mdp, DEFAULT_VI_TOL);
        Ok(Self { kind: OracleKind::ExactTabular, source: OracleSource::Tabular { maze: maze.clone(), q }, noise: None, table_error: 0.0 })
    }

    /// Critic of a truncated value-iteration run with `sweeps` backups.
    pub fn truncated_tabular(maze: &GridMaze, gamma: f64, sweeps: usize) -> Result<Self> {
        let mdp = maze.to_tabular(gamma)?;
        let exact = value_iteration(&mdp, DEFAULT_VI_TOL);
        let q = truncated_value_iteration(&mdp, sweeps);
        let table_error = q.sup_distance(&exact);
        Ok(Self { kind: OracleKind::Perturbed, source: OracleSource::Tabular { maze: maze.clone(), q }, noise: None, table_error })
    }

    pub fn expert_rollout(env: PointMass2D, gamma: f64) -> Self {
        Self {
            kind: OracleKind::ExpertRollout,
            source: OracleSource::Rollout { env, horizon: env.horizon, gamma },
            noise: None,
            table_error: 0.0,
        }
    }

    /// Adds seeded uniform noise of the given amplitude on top of this oracle.
    pub fn with_noise(mut self, amplitude: f64, seed: u64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::Config(format!("noise amplitude {amplitude} must be finite and non-negative")));
        }
        self.kind = OracleKind::Perturbed;
        self.noise = Some(NoiseField { amplitude, seed });
        Ok(self)
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    /// Declared bound on `|Q̂*(s,a) - Q*(s,a)|`.
    pub fn amplitude(&self) -> f64 {
        self.table_error + self.noise.map_or(0.0, |n| n.amplitude)
    }

    pub fn q_table(&self) -> Option<&QTable> {
        match &self.source {
            OracleSource::Tabular { q, .. } => Some(q),
            OracleSource::Rollout { .. } => None,
        }
    }

    fn base_value(&self, s: &[f64], a: &[f64]) -> Result<(f64, u64)> {
        match &self.source {
            OracleSource::Tabular { maze, q } => {
                let state = maze.state_index(maze.cell_from_state(s)?).expect("free cell");
                let m = Move::decode(a)?;
                Ok((q.get(state, m.index()), (state * Move::ALL.len() + m.index()) as u64))
            }
            OracleSource::Rollout { env, horizon, gamma } => {
                let s = env.check_state(s)?;
                let a = env.check_action(a)?;
                let (next, r) = env.transition(s, a);
                let value = r + gamma * env.expert_value(next, horizon.saturating_sub(1), *gamma);
                let key = [s[0], s[1], a[0], a[1]].iter().fold(0u64, |k, v| derive_seed(k, v.to_bits()));
                Ok((value, key))
            }
        }
    }

    /// `Q̂*(s, a)`.
    pub fn value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let (v, key) = self.base_value(s, a)?;
        Ok(v + self.noise.map_or(0.0, |n| n.at(key)))
    }
}

/// Running count of oracle calls against an optional hard limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryBudget {
    /// `None` means unlimited.
    pub k_total: Option<usize>,
    pub used: usize,
}

impl QueryBudget {
    pub fn limited(k_total: usize) -> Self {
        Self { k_total: Some(k_total), used: 0 }
    }

    pub fn unlimited() -> Self {
        Self { k_total: None, used: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.k_total.map_or(usize::MAX, |k| k - self.used)
    }

    pub fn consume(&mut self) -> Result<()> {
        if let Some(k_total) = self.k_total {
            if self.used >= k_total {
                return Err(Error::BudgetExhausted { used: self.used, k_total });
            }
        }
        self.used += 1;
        Ok(())
    }
}

/// Asks the oracle which of the dataset action and the policy action it
/// prefers. Returns `true` when the policy action wins; ties keep the
/// dataset action.
pub fn preference_query(
    oracle: &OracleQ,
    budget: &mut QueryBudget,
    s: &[f64],
    dataset_action: &[f64],
    policy_action: &[f64],
) -> Result<bool> {
    if budget.remaining() == 0 {
        return Err(Error::BudgetExhausted { used: budget.used, k_total: budget.k_total.unwrap_or(0) });
    }
    let q_data = oracle.value(s, dataset_action)?;
    let q_policy = oracle.value(s, policy_action)?;
    budget.consume()?;
    Ok(q_policy > q_data)
}

/// Ranking criterion `l_i = ‖π(s_i) - a_i‖²`.
pub fn rank_divergence(policy_actions: &[Vec<f64>], ds: &OfflineDataset) -> Result<Vec<f64>> {
    if policy_actions.len() != ds.len() {
        return Err(Error::Shape { expected: ds.len(), got: policy_actions.len() });
    }
    Ok(policy_actions.iter().zip(&ds.transitions).map(|(p, t)| squared_distance(p, &t.a)).collect())
}

/// Indices ordered by (unqueried first, descending score, ascending index),
/// truncated to `min(batch_size, budget remainder)`.
pub fn select_query_batch(
    scores: &[f64],
    table: &PreferredActionTable,
    batch_size: usize,
    budget: &QueryBudget,
    unqueried_first: bool,
) -> Vec<usize> {
    let take = batch_size.min(budget.remaining()).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        let queried = if unqueried_first { table.is_queried(i).cmp(&table.is_queried(j)) } else { Ordering::Equal };
        queried.then_with(|| scores[j].total_cmp(&scores[i])).then_with(|| i.cmp(&j))
    });
    order.truncate(take);
    order
}
