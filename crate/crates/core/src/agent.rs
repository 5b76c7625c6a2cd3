//! TD3+BC actor-critic with an optional per-sample behaviour-cloning target.
//!
//! The actor objective is `mean_i[-λ Q1(s_i, π(s_i)) + ‖π(s_i) - ã_i‖²]`,
//! where `ã_i` is the dataset action for plain TD3+BC and the preferred action
//! when preference labels are available.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{PreferredActionTable, StateStats, Transition};
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpNet, Mode, OutputActivation};
use crate::rng::{derive_seed, seeded, standard_normal, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Behaviour-cloning trade-off; `λ = alpha / mean|Q|` when `normalize_lambda`.
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Target-policy smoothing noise, as a fraction of the action bound.
    pub policy_noise: f64,
    /// Symmetric clip for the smoothing noise, as a fraction of the action bound.
    pub noise_clip: f64,
    pub policy_update_freq: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub normalize_states: bool,
    pub normalize_lambda: bool,
    /// When false the actor maximises `Q` alone (plain TD3).
    pub behavior_cloning: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            gamma: 0.99,
            tau: 5e-3,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_update_freq: 2,
            batch_size: 256,
            lr: 3e-4,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            normalize_states: true,
            normalize_lambda: true,
            behavior_cloning: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma >= 0.0 && self.gamma < 1.0),
            ("tau", self.tau > 0.0 && self.tau <= 1.0),
            ("alpha", self.alpha >= 0.0 && self.alpha.is_finite()),
            ("policy_noise", self.policy_noise >= 0.0),
            ("noise_clip", self.noise_clip >= 0.0),
            ("policy_update_freq", self.policy_update_freq > 0),
            ("batch_size", self.batch_size > 0),
            ("lr", self.lr > 0.0 && self.lr.is_finite()),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::Config(format!("agent.{name} out of range")));
            }
        }
        if self.actor_hidden.iter().chain(&self.critic_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// A minibatch laid out row-major, with raw (unnormalised) states.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<f64>,
    /// Behaviour-cloning targets `ã`; equal to `actions` unless relabelled.
    pub preferred: Vec<f64>,
}

impl Batch {
    /// Gathers `indices` from `transitions`. With a table, `preferred` holds
    /// each sample's current `ã_i`, otherwise the dataset action.
    pub fn gather(transitions: &[Transition], indices: &[usize], table: Option<&PreferredActionTable>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let mut b = Batch {
            size: indices.len(),
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::with_capacity(indices.len()),
            next_states: Vec::new(),
            dones: Vec::with_capacity(indices.len()),
            preferred: Vec::new(),
        };
        for &i in indices {
            let t = transitions
                .get(i)
                .ok_or_else(|| Error::State(format!("minibatch index {i} out of range")))?;
            b.states.extend_from_slice(&t.s);
            b.actions.extend_from_slice(&t.a);
            b.rewards.push(t.r);
            b.next_states.extend_from_slice(&t.s_next);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
            match table {
                Some(tab) => b.preferred.extend_from_slice(tab.get(i)?),
                None => b.preferred.extend_from_slice(&t.a),
            }
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub td_loss: f64,
    /// Present on steps that updated the actor.
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Td3bcAgent {
    config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    max_action: f64,
    stats: StateStats,
    actor: MlpNet,
    actor_target: MlpNet,
    critic1: MlpNet,
    critic2: MlpNet,
    critic1_target: MlpNet,
    critic2_target: MlpNet,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    rng: SeededRng,
    total_it: u64,
}

impl Td3bcAgent {
    /// `stats` is used only when `config.normalize_states` is set.
    pub fn new(config: AgentConfig, state_dim: usize, action_dim: usize, max_action: f64, stats: StateStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if stats.mean.len() != state_dim || stats.std.len() != state_dim {
            return Err(Error::Shape { expected: state_dim, got: stats.mean.len() });
        }
        let stats = if config.normalize_states { stats } else { StateStats::identity(state_dim) };
        let mut init = seeded(derive_seed(seed, 0));
        let actor_widths: Vec<usize> = [state_dim].iter().chain(&config.actor_hidden).chain(&[action_dim]).copied().collect();
        let critic_widths: Vec<usize> = [state_dim + action_dim].iter().chain(&config.critic_hidden).chain(&[1]).copied().collect();
        let actor = MlpNet::new(&actor_widths, OutputActivation::Tanh { scale: max_action }, 0.0, &mut init)?;
        let critic1 = MlpNet::new(&critic_widths, OutputActivation::Identity, 0.0, &mut init)?;
        let critic2 = MlpNet::new(&critic_widths, OutputActivation::Identity, 0.0, &mut init)?;
        Ok(Self {
            actor_opt: AdamState::for_net(&actor, config.lr),
            critic1_opt: AdamState::for_net(&critic1, config.lr),
            critic2_opt: AdamState::for_net(&critic2, config.lr),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            state_dim,
            action_dim,
            max_action,
            stats,
            rng: seeded(derive_seed(seed, 1)),
            total_it: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut AgentConfig {
        &mut self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn max_action(&self) -> f64 {
        self.max_action
    }

    pub fn state_stats(&self) -> &StateStats {
        &self.stats
    }

    pub fn total_iterations(&self) -> u64 {
        self.total_it
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor
    }

    pub fn actor_target(&self) -> &MlpNet {
        &self.actor_target
    }

    pub fn critics(&self) -> [&MlpNet; 2] {
        [&self.critic1, &self.critic2]
    }

    pub fn critic_targets(&self) -> [&MlpNet; 2] {
        [&self.critic1_target, &self.critic2_target]
    }

    /// Replaces the live networks (targets are reset to copies). Used to
    /// restore snapshots.
    pub fn load_networks(&mut self, actor: MlpNet, critic1: MlpNet, critic2: MlpNet) -> Result<()> {
        for (new, old) in [(&actor, &self.actor), (&critic1, &self.critic1), (&critic2, &self.critic2)] {
            if new.widths() != old.widths() {
                return Err(Error::Shape { expected: old.params().len(), got: new.params().len() });
            }
        }
        self.actor_target = actor.clone();
        self.critic1_target = critic1.clone();
        self.critic2_target = critic2.clone();
        self.actor = actor;
        self.critic1 = critic1;
        self.critic2 = critic2;
        Ok(())
    }

    fn normalize(&self, states: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(states.len());
        for s in states.chunks_exact(self.state_dim) {
            self.stats.normalize_into(s, &mut out);
        }
        out
    }

    fn concat(&self, norm_states: &[f64], actions: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(norm_states.len() + actions.len());
        for (s, a) in norm_states.chunks_exact(self.state_dim).zip(actions.chunks_exact(self.action_dim)) {
            out.extend_from_slice(s);
            out.extend_from_slice(a);
        }
        out
    }

    fn check_batch(&self, b: &Batch) -> Result<()> {
        let n = b.size;
        if n == 0 {
            return Err(Error::Config("empty minibatch".into()));
        }
        for (got, expected) in [
            (b.states.len(), n * self.state_dim),
            (b.next_states.len(), n * self.state_dim),
            (b.actions.len(), n * self.action_dim),
            (b.preferred.len(), n * self.action_dim),
            (b.rewards.len(), n),
            (b.dones.len(), n),
        ] {
            if got != expected {
                return Err(Error::Shape { expected, got });
            }
        }
        Ok(())
    }

    /// Deterministic policy action for one raw state.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.act_batch(state, 1)
    }

    pub fn act_batch(&self, states: &[f64], batch: usize) -> Result<Vec<f64>> {
        if states.len() != batch * self.state_dim {
            return Err(Error::Shape { expected: batch * self.state_dim, got: states.len() });
        }
        self.actor.predict_batch(&self.normalize(states), batch)
    }

    pub fn q1(&self, states: &[f64], actions: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.critic1.predict_batch(&self.concat(&self.normalize(states), actions), batch)
    }

    /// Clipped double-Q regression targets `r + γ(1-done) min(Q1', Q2')`.
    /// Draws the smoothing noise from the agent's stream.
    pub fn td_targets(&mut self, b: &Batch) -> Result<Vec<f64>> {
        self.check_batch(b)?;
        let next = self.normalize(&b.next_states);
        let mut a_next = self.actor_target.predict_batch(&next, b.size)?;
        let sigma = self.config.policy_noise * self.max_action;
        let clip = self.config.noise_clip * self.max_action;
        for a in a_next.iter_mut() {
            let eps = if sigma > 0.0 { (sigma * standard_normal(&mut self.rng)).clamp(-clip, clip) } else { 0.0 };
            *a = (*a + eps).clamp(-self.max_action, self.max_action);
        }
        let x = self.concat(&next, &a_next);
        let q1 = self.critic1_target.predict_batch(&x, b.size)?;
        let q2 = self.critic2_target.predict_batch(&x, b.size)?;
        Ok((0..b.size)
            .map(|i| b.rewards[i] + self.config.gamma * (1.0 - b.dones[i]) * q1[i].min(q2[i]))
            .collect())
    }

    /// One gradient step on both critics; returns the summed TD loss.
    pub fn critic_update(&mut self, b: &Batch) -> Result<f64> {
        let y = self.td_targets(b)?;
        let x = self.concat(&self.normalize(&b.states), &b.actions);
        let n = b.size as f64;
        let mut td_loss = 0.0;
        let mut dummy = seeded(0);
        for (critic, opt) in [(&mut self.critic1, &mut self.critic1_opt), (&mut self.critic2, &mut self.critic2_opt)] {
            let q = critic.forward(&x, b.size, Mode::Eval, &mut dummy)?;
            let mut grad = Vec::with_capacity(b.size);
            for (qi, yi) in q.iter().zip(&y) {
                let d = qi - yi;
                td_loss += d * d / n;
                grad.push(2.0 * d / n);
            }
            let g = critic.backward(&grad)?;
            opt.step(critic, &g.params)?;
        }
        if !td_loss.is_finite() {
            return Err(Error::Numeric(format!("critic loss {td_loss} at iteration {}", self.total_it)));
        }
        Ok(td_loss)
    }

    fn lambda(&self, q: &[f64]) -> f64 {
        if !self.config.behavior_cloning {
            return 1.0;
        }
        if self.config.normalize_lambda {
            let mean_abs = q.iter().map(|v| v.abs()).sum::<f64>() / q.len() as f64;
            self.config.alpha / mean_abs.max(1e-12)
        } else {
            self.config.alpha
        }
    }

    /// Actor loss against explicit cloning targets and its parameter gradient.
    /// λ is treated as a constant (detached).
    pub fn actor_loss_and_grad(&mut self, states: &[f64], targets: &[f64], batch: usize) -> Result<(f64, Vec<f64>)> {
        if targets.len() != batch * self.action_dim {
            return Err(Error::State(format!("expected {} preferred-action values, got {}", batch * self.action_dim, targets.len())));
        }
        let mut dummy = seeded(0);
        let s = self.normalize(states);
        let pi = self.actor.forward(&s, batch, Mode::Eval, &mut dummy)?;
        let x = self.concat(&s, &pi);
        let q = self.critic1.forward(&x, batch, Mode::Eval, &mut dummy)?;
        let lambda = self.lambda(&q);
        let n = batch as f64;
        let dq = self.critic1.backward_input(&vec![-lambda / n; batch])?;
        let width = self.state_dim + self.action_dim;
        let mut grad = Vec::with_capacity(pi.len());
        let mut loss = 0.0;
        for i in 0..batch {
            loss -= lambda * q[i] / n;
            for j in 0..self.action_dim {
                let k = i * self.action_dim + j;
                let mut g = dq[i * width + self.state_dim + j];
                if self.config.behavior_cloning {
                    let d = pi[k] - targets[k];
                    loss += d * d / n;
                    g += 2.0 * d / n;
                }
                grad.push(g);
            }
        }
        let grads = self.actor.backward(&grad)?;
        Ok((loss, grads.params))
    }

    /// Behaviour-cloning objective against the dataset actions.
    pub fn actor_loss_original(&mut self, b: &Batch) -> Result<f64> {
        self.check_batch(b)?;
        Ok(self.actor_loss_and_grad(&b.states, &b.actions, b.size)?.0)
    }

    /// Objective with the cloning term pulled toward `preferred` instead.
    pub fn actor_loss_adjusted(&mut self, b: &Batch, preferred: &[f64]) -> Result<f64> {
        self.check_batch(b)?;
        Ok(self.actor_loss_and_grad(&b.states, preferred, b.size)?.0)
    }

    pub fn actor_update(&mut self, b: &Batch) -> Result<f64> {
        self.check_batch(b)?;
        let (loss, grads) = self.actor_loss_and_grad(&b.states, &b.preferred, b.size)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("actor loss {loss} at iteration {}", self.total_it)));
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    pub fn update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target.soft_update_from(&self.actor, tau);
        self.critic1_target.soft_update_from(&self.critic1, tau);
        self.critic2_target.soft_update_from(&self.critic2, tau);
    }

    /// Critic step, then (every `policy_update_freq` iterations) an actor step
    /// toward `b.preferred` followed by soft target updates.
    pub fn train_step(&mut self, b: &Batch) -> Result<StepStats> {
        let td_loss = self.critic_update(b)?;
        self.total_it += 1;
        let mut stats = StepStats { td_loss, actor_loss: None };
        if self.total_it % self.config.policy_update_freq as u64 == 0 {
            stats.actor_loss = Some(self.actor_update(b)?);
            self.update_targets();
        }
        Ok(stats)
    }
}
