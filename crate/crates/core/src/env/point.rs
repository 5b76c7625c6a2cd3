use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};

/// Deterministic planar point mass: `position += action`, clipped to the
/// arena `[-arena, arena]²`, with reward `-‖position' - goal‖₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass2D {
    pub arena: f64,
    pub max_action: f64,
    pub goal: [f64; 2],
    pub horizon: usize,
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self { arena: 1.0, max_action: 0.1, goal: [0.5, 0.5], horizon: 60 }
    }
}

impl PointMass2D {
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [rng.random_range(-self.arena..self.arena), rng.random_range(-self.arena..self.arena)]
    }

    pub fn check_state(&self, s: &[f64]) -> Result<[f64; 2]> {
        if s.len() != 2 {
            return Err(Error::Shape { expected: 2, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite() || v.abs() > self.arena + 1e-12) {
            return Err(Error::Domain(format!("position {s:?} outside the arena")));
        }
        Ok([s[0], s[1]])
    }

    pub fn check_action(&self, a: &[f64]) -> Result<[f64; 2]> {
        if a.len() != 2 {
            return Err(Error::Shape { expected: 2, got: a.len() });
        }
        if a.iter().any(|v| !v.is_finite() || v.abs() > self.max_action + 1e-12) {
            return Err(Error::Domain(format!("action {a:?} exceeds bound {}", self.max_action)));
        }
        Ok([a[0], a[1]])
    }

    /// Unchecked dynamics; callers validate first.
    pub fn transition(&self, s: [f64; 2], a: [f64; 2]) -> ([f64; 2], f64) {
        let next = [
            (s[0] + a[0]).clamp(-self.arena, self.arena),
            (s[1] + a[1]).clamp(-self.arena, self.arena),
        ];
        let (dx, dy) = (next[0] - self.goal[0], next[1] - self.goal[1]);
        (next, -libm::sqrt(dx * dx + dy * dy))
    }

    /// Proportional controller `clip(goal - position, ±max_action)`. It reaches
    /// the closest feasible point to the goal each step, which is optimal for
    /// this reward.
    pub fn expert_action(&self, s: [f64; 2]) -> [f64; 2] {
        [
            (self.goal[0] - s[0]).clamp(-self.max_action, self.max_action),
            (self.goal[1] - s[1]).clamp(-self.max_action, self.max_action),
        ]
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let m = self.max_action;
        [rng.random_range(-m..=m), rng.random_range(-m..=m)]
    }

    /// Discounted expert return over `steps` steps starting at `s`.
    pub fn expert_value(&self, mut s: [f64; 2], steps: usize, gamma: f64) -> f64 {
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..steps {
            let (next, r) = self.transition(s, self.expert_action(s));
            total += discount * r;
            discount *= gamma;
            s = next;
        }
        total
    }
}
