use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Finite MDP `(S, A, T, ρ⁰, R, γ)` with dense storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `T(s'|s,a)` at `[(s * n_actions + a) * n_states + s']`.
    pub transition: Vec<f64>,
    /// `R(s,a)` at `[s * n_actions + a]`.
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub gamma: f64,
    /// Non-fatal construction remarks, e.g. an unreachable goal.
    pub notes: Vec<String>,
}

const STOCHASTIC_TOL: f64 = 1e-12;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("MDP needs at least one state and one action".into()));
        }
        let n_sa = n_states * n_actions;
        if transition.len() != n_sa * n_states {
            return Err(Error::Shape { expected: n_sa * n_states, got: transition.len() });
        }
        if reward.len() != n_sa {
            return Err(Error::Shape { expected: n_sa, got: reward.len() });
        }
        if initial_dist.len() != n_states {
            return Err(Error::Shape { expected: n_states, got: initial_dist.len() });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma {gamma} outside (0, 1)")));
        }
        for (sa, row) in transition.chunks_exact(n_states).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Config(format!(
                    "transition row (s={}, a={}) is not a distribution (sum {total})",
                    sa / n_actions,
                    sa % n_actions
                )));
            }
        }
        let total: f64 = initial_dist.iter().sum();
        if initial_dist.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Config(format!("initial distribution sums to {total}")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric("non-finite reward".into()));
        }
        Ok(Self { n_states, n_actions, transition, reward, initial_dist, gamma, notes: Vec::new() })
    }

    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// `Q(s,a) = R(s,a) + γ Σ_{s'} T(s'|s,a) V(s')`, row-major `[s][a]`.
    pub fn backup(&self, v: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let ev: f64 = self.next_dist(s, a).iter().zip(v).map(|(p, vn)| p * vn).sum();
                q[s * self.n_actions + a] = self.r(s, a) + self.gamma * ev;
            }
        }
        q
    }
}
