//! Desk-scale environments with privileged model access for oracles.

mod grid;
mod point;
mod tabular;

pub use grid::{Cell, GridMaze, Move, GRIDMAZE_10};
pub use point::PointMass2D;
pub use tabular::TabularMdp;

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Grid(GridMaze),
    Point(PointMass2D),
}

/// Result of one call to [`Env::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Absorbing state reached. Horizon truncation is tracked by [`Episode`].
    pub terminal: bool,
}

impl Env {
    pub fn name(&self) -> &'static str {
        match self {
            Env::Grid(_) => "gridmaze",
            Env::Point(_) => "pointmass",
        }
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn max_action(&self) -> f64 {
        match self {
            Env::Grid(_) => 1.0,
            Env::Point(p) => p.max_action,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Grid(g) => g.horizon,
            Env::Point(p) => p.horizon,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Env::Grid(g) => GridMaze::state_vector(g.start).to_vec(),
            Env::Point(p) => p.reset(rng).to_vec(),
        }
    }

    /// Deterministic transition for both environments.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<StepOutcome> {
        match self {
            Env::Grid(g) => {
                let c = g.cell_from_state(state)?;
                let m = Move::decode(action)?;
                let next = g.successor(c, m);
                Ok(StepOutcome {
                    next_state: GridMaze::state_vector(next).to_vec(),
                    reward: g.reward(c),
                    terminal: next == g.goal,
                })
            }
            Env::Point(p) => {
                let s = p.check_state(state)?;
                let a = p.check_action(action)?;
                let (next, reward) = p.transition(s, a);
                Ok(StepOutcome { next_state: next.to_vec(), reward, terminal: false })
            }
        }
    }

    pub fn expert_action(&self, state: &[f64], grid_dist: Option<&[Option<usize>]>) -> Result<Vec<f64>> {
        match self {
            Env::Grid(g) => {
                let c = g.cell_from_state(state)?;
                let owned;
                let dist = match grid_dist {
                    Some(d) => d,
                    None => {
                        owned = g.bfs_distances();
                        &owned
                    }
                };
                Ok(g.expert_move(c, dist).vector().to_vec())
            }
            Env::Point(p) => Ok(p.expert_action(p.check_state(state)?).to_vec()),
        }
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Env::Grid(_) => Move::ALL[rng.random_range(0..4)].vector().to_vec(),
            Env::Point(p) => p.random_action(rng).to_vec(),
        }
    }

    /// Projects an arbitrary action onto the environment's action set:
    /// grid actions become the decoded move's unit vector, point-mass
    /// actions are clipped to the bound.
    pub fn canonical_action(&self, action: &[f64]) -> Result<Vec<f64>> {
        match self {
            Env::Grid(_) => Ok(Move::decode(action)?.vector().to_vec()),
            Env::Point(p) => Ok(action.iter().map(|a| a.clamp(-p.max_action, p.max_action)).collect()),
        }
    }
}

/// One episode with horizon bookkeeping.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    env: &'a Env,
    pub state: Vec<f64>,
    pub t: usize,
    pub done: bool,
}

/// A step taken inside an [`Episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// `terminal` or the horizon was reached.
    pub done: bool,
}

impl<'a> Episode<'a> {
    pub fn new(env: &'a Env, start: Vec<f64>) -> Self {
        Self { env, state: start, t: 0, done: false }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EpisodeStep> {
        let out = self.env.step(&self.state, action)?;
        self.t += 1;
        self.done = out.terminal || self.t >= self.env.horizon();
        let state = core::mem::replace(&mut self.state, out.next_state.clone());
        Ok(EpisodeStep {
            state,
            action: action.to_vec(),
            next_state: out.next_state,
            reward: out.reward,
            terminal: out.terminal,
            done: self.done,
        })
    }
}

/// Undiscounted return of a deterministic policy from `start`.
pub fn rollout_return<F>(env: &Env, start: Vec<f64>, mut policy: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut ep = Episode::new(env, start);
    let mut total = 0.0;
    while !ep.done {
        let a = policy(&ep.state)?;
        total += ep.step(&a)?.reward;
    }
    Ok(total)
}
