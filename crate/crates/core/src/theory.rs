//! Exact policy evaluation, discounted visitation and the policy-improvement
//! identities for preference-revised behavior policies on finite MDPs.

use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, log};
use rand::Rng;

use crate::env::TabularMdp;
use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::preference::{value_iteration, QTable};
use crate::rng::{derive_seed, seeded};

/// Residual allowed for exact linear-solve evaluation.
pub const EVAL_TOL: f64 = 1e-9;
/// Truncated sums stop once `γ^T` falls below this.
pub const TRUNCATION_EPS: f64 = 1e-12;

/// A deterministic tabular policy: one action index per state.
pub type Policy = [usize];

fn check_policy(mdp: &TabularMdp, pi: &Policy) -> Result<()> {
    if pi.len() != mdp.n_states {
        return Err(Error::Shape { expected: mdp.n_states, got: pi.len() });
    }
    if let Some(&a) = pi.iter().find(|&&a| a >= mdp.n_actions) {
        return Err(Error::Domain(alloc::format!("action {a} out of range for {} actions", mdp.n_actions)));
    }
    Ok(())
}

/// Row-major `T_π` with `T_π[s][s'] = T(s'|s,π(s))`.
fn policy_transition(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let n = mdp.n_states;
    let mut t = Vec::with_capacity(n * n);
    for (s, &a) in pi.iter().enumerate() {
        t.extend_from_slice(mdp.next_dist(s, a));
    }
    t
}

fn policy_reward(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    pi.iter().enumerate().map(|(s, &a)| mdp.r(s, a)).collect()
}

/// Smallest `T` with `γ^T < TRUNCATION_EPS`.
pub fn truncation_horizon(gamma: f64) -> usize {
    ceil(log(TRUNCATION_EPS) / log(gamma)) as usize + 1
}

/// `V_π` from `(I - γ T_π) V = R_π`, checked against the Bellman residual.
pub fn policy_values(mdp: &TabularMdp, pi: &Policy) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    let n = mdp.n_states;
    let t = policy_transition(mdp, pi);
    let r = policy_reward(mdp, pi);
    let mut a: Vec<f64> = t.iter().map(|p| -mdp.gamma * p).collect();
    for s in 0..n {
        a[s * n + s] += 1.0;
    }
    let mut v = r.clone();
    solve_in_place(&mut a, &mut v)?;
    let residual = (0..n)
        .map(|s| {
            let ev: f64 = t[s * n..(s + 1) * n].iter().zip(&v).map(|(p, x)| p * x).sum();
            (r[s] + mdp.gamma * ev - v[s]).abs()
        })
        .fold(0.0, f64::max);
    if residual > EVAL_TOL {
        return Err(Error::Numeric(alloc::format!("policy evaluation residual {residual:e}")));
    }
    Ok(v)
}

pub fn q_from_values(mdp: &TabularMdp, v: &[f64]) -> QTable {
    QTable { n_states: mdp.n_states, n_actions: mdp.n_actions, values: mdp.backup(v) }
}

/// `Q_π` for a deterministic policy.
pub fn policy_q(mdp: &TabularMdp, pi: &Policy) -> Result<QTable> {
    Ok(q_from_values(mdp, &policy_values(mdp, pi)?))
}

/// `Q*` by value iteration polished with exact policy iteration, so the
/// result is a fixed point to linear-solve precision.
pub fn optimal_q(mdp: &TabularMdp) -> Result<QTable> {
    let mut pi = value_iteration(mdp, 1e-10).greedy_policy();
    loop {
        let q = policy_q(mdp, &pi)?;
        let mut changed = false;
        for (s, a) in pi.iter_mut().enumerate() {
            let g = q.greedy(s);
            if q.get(s, g) > q.get(s, *a) + 1e-12 {
                *a = g;
                changed = true;
            }
        }
        if !changed {
            return Ok(q);
        }
    }
}

/// `η(π) = ρ⁰ · V_π`.
pub fn exact_return(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let v = policy_values(mdp, pi)?;
    Ok(mdp.initial_dist.iter().zip(&v).map(|(p, x)| p * x).sum())
}

/// `η(π)` by propagating the state distribution for `truncation_horizon` steps.
pub fn truncated_return(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    check_policy(mdp, pi)?;
    let t = policy_transition(mdp, pi);
    let r = policy_reward(mdp, pi);
    let mut d = mdp.initial_dist.clone();
    let mut disc = 1.0;
    let mut eta = 0.0;
    for _ in 0..truncation_horizon(mdp.gamma) {
        eta += disc * d.iter().zip(&r).map(|(p, x)| p * x).sum::<f64>();
        d = propagate(&t, &d, mdp.n_states);
        disc *= mdp.gamma;
    }
    Ok(eta)
}

fn propagate(t: &[f64], d: &[f64], n: usize) -> Vec<f64> {
    let mut next = vec![0.0; n];
    for (s, &p) in d.iter().enumerate() {
        if p != 0.0 {
            for (x, &q) in next.iter_mut().zip(&t[s * n..(s + 1) * n]) {
                *x += p * q;
            }
        }
    }
    next
}

/// Unnormalized discounted visitation `ρ_π` and its maximum `ρ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    pub rho: Vec<f64>,
    pub rho_bar: f64,
}

impl Visitation {
    /// `1/(|S|(1-γ)) ≤ ρ̄ ≤ 1/(1-γ)` within `EVAL_TOL`.
    pub fn rho_bar_in_range(&self, n_states: usize, gamma: f64) -> bool {
        let (lo, hi) = rho_bar_range(n_states, gamma);
        self.rho_bar >= lo - EVAL_TOL && self.rho_bar <= hi + EVAL_TOL
    }
}

pub fn rho_bar_range(n_states: usize, gamma: f64) -> (f64, f64) {
    let hi = 1.0 / (1.0 - gamma);
    (hi / n_states as f64, hi)
}

/// Solves `ρ = ρ⁰ + γ T_πᵀ ρ` and checks `Σ ρ = 1/(1-γ)`.
pub fn visitation(mdp: &TabularMdp, pi: &Policy) -> Result<Visitation> {
    check_policy(mdp, pi)?;
    let n = mdp.n_states;
    let t = policy_transition(mdp, pi);
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        for s2 in 0..n {
            a[s2 * n + s] = -mdp.gamma * t[s * n + s2];
        }
        a[s * n + s] += 1.0;
    }
    let mut rho = mdp.initial_dist.clone();
    solve_in_place(&mut a, &mut rho)?;
    let total: f64 = rho.iter().sum();
    let expected = 1.0 / (1.0 - mdp.gamma);
    if (total - expected).abs() > EVAL_TOL {
        return Err(Error::Numeric(alloc::format!("visitation sums to {total}, expected {expected}")));
    }
    let rho_bar = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Visitation { rho, rho_bar })
}

/// `ρ_π` by direct summation of `γ^t P(s_t = s)`.
pub fn truncated_visitation(mdp: &TabularMdp, pi: &Policy) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    let t = policy_transition(mdp, pi);
    let mut d = mdp.initial_dist.clone();
    let mut rho = vec![0.0; mdp.n_states];
    let mut disc = 1.0;
    for _ in 0..truncation_horizon(mdp.gamma) {
        for (r, p) in rho.iter_mut().zip(&d) {
            *r += disc * p;
        }
        d = propagate(&t, &d, mdp.n_states);
        disc *= mdp.gamma;
    }
    Ok(rho)
}

/// `max_s |Q1(s,π(s)) - Q2(s,π(s))|`.
pub fn dtv(q1: &QTable, q2: &QTable, pi: &Policy) -> f64 {
    pi.iter().enumerate().map(|(s, &a)| (q1.get(s, a) - q2.get(s, a)).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// `η(π1) - η(π2)`.
    pub lhs: f64,
    /// `Σ_s ρ_{π1}(s)(Q_{π2}(s,π1(s)) - V_{π2}(s))`.
    pub rhs: f64,
    pub residual: f64,
}

pub fn check_lemma1(mdp: &TabularMdp, pi1: &Policy, pi2: &Policy) -> Result<Lemma1Report> {
    let lhs = exact_return(mdp, pi1)? - exact_return(mdp, pi2)?;
    let v2 = policy_values(mdp, pi2)?;
    let q2 = q_from_values(mdp, &v2);
    let rho1 = visitation(mdp, pi1)?.rho;
    let rhs = (0..mdp.n_states).map(|s| rho1[s] * (q2.get(s, pi1[s]) - v2[s])).sum();
    Ok(Lemma1Report { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Deterministic behavior policy read off a dataset of `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPolicy {
    pub policy: Vec<usize>,
    pub visited: Vec<bool>,
    /// Visited states whose samples disagree on the action.
    pub conflicts: usize,
    /// Dataset sample count per state.
    pub counts: Vec<usize>,
}

impl BehaviorPolicy {
    pub fn n_visited(&self) -> usize {
        self.visited.iter().filter(|&&v| v).count()
    }
}

/// Majority action per visited state; ties go to the higher `q` value, then
/// the lower index. Unvisited states get action 0.
pub fn behavior_policy(mdp: &TabularMdp, dataset: &[(usize, usize)], q: &QTable) -> Result<BehaviorPolicy> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut tally = vec![0usize; ns * na];
    for &(s, a) in dataset {
        if s >= ns || a >= na {
            return Err(Error::Domain(alloc::format!("dataset pair ({s}, {a}) outside the MDP")));
        }
        tally[s * na + a] += 1;
    }
    let mut policy = vec![0; ns];
    let mut visited = vec![false; ns];
    let mut counts = vec![0; ns];
    let mut conflicts = 0;
    for s in 0..ns {
        let row = &tally[s * na..(s + 1) * na];
        counts[s] = row.iter().sum();
        if counts[s] == 0 {
            continue;
        }
        visited[s] = true;
        if row.iter().filter(|&&c| c > 0).count() > 1 {
            conflicts += 1;
        }
        let mut best = 0;
        for a in 1..na {
            if row[a] > row[best] || (row[a] == row[best] && q.get(s, a) > q.get(s, best)) {
                best = a;
            }
        }
        policy[s] = best;
    }
    Ok(BehaviorPolicy { policy, visited, conflicts, counts })
}

/// `π̃_β(s) = argmax_{a ∈ {π_β(s), π(s)}} q(s,a)` on visited states, keeping
/// `π_β(s)` on ties and on states absent from the data.
pub fn revise_behavior(behavior: &BehaviorPolicy, comparison: &Policy, q: &QTable) -> Vec<usize> {
    behavior
        .policy
        .iter()
        .zip(comparison)
        .zip(&behavior.visited)
        .enumerate()
        .map(|(s, ((&b, &c), &seen))| if seen && q.get(s, c) > q.get(s, b) { c } else { b })
        .collect()
}

/// `Σ_s w(s)(q(s,π̃(s)) - q(s,π(s)))`.
fn weighted_gap(weights: &[f64], q: &QTable, revised: &Policy, base: &Policy) -> f64 {
    weights.iter().enumerate().map(|(s, w)| w * (q.get(s, revised[s]) - q.get(s, base[s]))).sum()
}

fn empirical_gap(behavior: &BehaviorPolicy, q: &QTable, revised: &Policy) -> f64 {
    let total: usize = behavior.counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let w: Vec<f64> = behavior.counts.iter().map(|&c| c as f64 / total as f64).collect();
    weighted_gap(&w, q, revised, &behavior.policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    /// `η(π̃_β) - η(π_β)`.
    pub a: f64,
    /// `Σ_s ρ_{π_β}(s)(Q*(s,π̃_β(s)) - Q*(s,π_β(s)))`.
    pub b: f64,
    /// The same gap averaged over dataset samples.
    pub b_empirical: f64,
    pub residual: f64,
    /// `max_s |ρ_{π̃_β}(s) - ρ_{π_β}(s)|`.
    pub drift: f64,
    pub revised_states: usize,
    pub revised: Vec<usize>,
}

impl Prop1Report {
    pub fn b_nonnegative(&self) -> bool {
        self.b >= 0.0
    }
}

pub fn check_prop1(mdp: &TabularMdp, dataset: &[(usize, usize)], q_star: &QTable, comparison: &Policy) -> Result<Prop1Report> {
    check_policy(mdp, comparison)?;
    let behavior = behavior_policy(mdp, dataset, q_star)?;
    let revised = revise_behavior(&behavior, comparison, q_star);
    let rho_b = visitation(mdp, &behavior.policy)?;
    let rho_r = visitation(mdp, &revised)?;
    let a = exact_return(mdp, &revised)? - exact_return(mdp, &behavior.policy)?;
    let b = weighted_gap(&rho_b.rho, q_star, &revised, &behavior.policy);
    let drift = rho_b.rho.iter().zip(&rho_r.rho).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(Prop1Report {
        a,
        b,
        b_empirical: empirical_gap(&behavior, q_star, &revised),
        residual: (a - b).abs(),
        drift,
        revised_states: revised.iter().zip(&behavior.policy).filter(|(r, b)| r != b).count(),
        revised,
    })
}

/// `Q̂* = Q* - δ` with `|δ(s,π_β(s))| ≤ min(α, α̃)` and `|δ(s,a)| ≤ α̃`
/// elsewhere, so both distance bounds hold whichever action is preferred.
pub fn perturbed_q(q_star: &QTable, behavior: &Policy, alpha: f64, alpha_tilde: f64, seed: u64) -> Result<QTable> {
    if !(alpha >= 0.0 && alpha_tilde >= 0.0) {
        return Err(Error::Config(alloc::format!("noise amplitudes must be non-negative, got {alpha}, {alpha_tilde}")));
    }
    let mut rng = seeded(seed);
    let mut hat = q_star.clone();
    for s in 0..q_star.n_states {
        for a in 0..q_star.n_actions {
            let amp = if a == behavior[s] { alpha.min(alpha_tilde) } else { alpha_tilde };
            let delta = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            hat.values[s * q_star.n_actions + a] -= delta;
        }
    }
    Ok(hat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report {
    pub alpha: f64,
    pub alpha_tilde: f64,
    /// `Σ_s ρ_{π_β}(s)(Q*(s,π̃_β(s)) - Q*(s,π_β(s)))`, with `π̃_β` built from `Q̂*`.
    pub true_gap: f64,
    /// `Σ_s ρ_{π_β}(s)(Q̂*(s,π̃_β(s)) - Q̂*(s,π_β(s)))`.
    pub estimated_gap: f64,
    pub estimated_gap_empirical: f64,
    /// `2(α̃ + α) ρ̄`.
    pub slack: f64,
    /// `Σ_s ρ_{π_β}(s)|δ(s,π̃_β(s)) - δ(s,π_β(s))|`, the exact size of the error term.
    pub delta_term: f64,
    pub rho_bar: f64,
    pub rho_bar_in_range: bool,
    /// Distinct data states, for the `1/(|S_D|(1-γ))` form of the lower bound.
    pub n_dataset_states: usize,
    pub dtv_revised: f64,
    pub dtv_behavior: f64,
    /// `η(π̃_β) - η(π_β)`.
    pub eta_gap: f64,
}

impl Prop2Report {
    /// `true_gap ≥ estimated_gap - slack`.
    pub fn bound_holds(&self) -> bool {
        self.true_gap >= self.estimated_gap - self.slack
    }

    /// `true_gap ≥ estimated_gap - delta_term`, which follows from the
    /// triangle inequality alone.
    pub fn exact_bound_holds(&self) -> bool {
        self.true_gap >= self.estimated_gap - self.delta_term - 1e-12 * (1.0 + self.delta_term)
    }

    pub fn dtv_bounds_hold(&self) -> bool {
        self.dtv_revised <= self.alpha_tilde + 1e-12 && self.dtv_behavior <= self.alpha + 1e-12
    }

    /// `η(π̃_β) - η(π_β) - (estimated_gap - slack)`; the η-level claim only
    /// holds approximately, so this is reported rather than checked.
    pub fn eta_margin(&self) -> f64 {
        self.eta_gap - (self.estimated_gap - self.slack)
    }
}

pub fn check_prop2(
    mdp: &TabularMdp,
    dataset: &[(usize, usize)],
    q_star: &QTable,
    comparison: &Policy,
    alpha: f64,
    alpha_tilde: f64,
    seed: u64,
) -> Result<Prop2Report> {
    check_policy(mdp, comparison)?;
    let behavior = behavior_policy(mdp, dataset, q_star)?;
    let q_hat = perturbed_q(q_star, &behavior.policy, alpha, alpha_tilde, seed)?;
    let revised = revise_behavior(&behavior, comparison, &q_hat);
    let vis = visitation(mdp, &behavior.policy)?;
    let delta_term = (0..mdp.n_states)
        .map(|s| {
            let d = |a: usize| q_star.get(s, a) - q_hat.get(s, a);
            vis.rho[s] * (d(revised[s]) - d(behavior.policy[s])).abs()
        })
        .sum();
    Ok(Prop2Report {
        alpha,
        alpha_tilde,
        true_gap: weighted_gap(&vis.rho, q_star, &revised, &behavior.policy),
        estimated_gap: weighted_gap(&vis.rho, &q_hat, &revised, &behavior.policy),
        estimated_gap_empirical: empirical_gap(&behavior, &q_hat, &revised),
        slack: 2.0 * (alpha + alpha_tilde) * vis.rho_bar,
        delta_term,
        rho_bar: vis.rho_bar,
        rho_bar_in_range: vis.rho_bar_in_range(mdp.n_states, mdp.gamma),
        n_dataset_states: behavior.n_visited(),
        dtv_revised: dtv(&q_hat, q_star, &revised),
        dtv_behavior: dtv(&q_hat, q_star, &behavior.policy),
        eta_gap: exact_return(mdp, &revised)? - exact_return(mdp, &behavior.policy)?,
    })
}

/// Random finite MDP: Dirichlet(1) transition rows and initial distribution,
/// rewards uniform in `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> Result<TabularMdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(dirichlet_ones(rng, n_states));
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let initial = dirichlet_ones(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward, initial, gamma)
}

fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    // Normalized Exp(1) draws; 1 - U lies in (0, 1] so the log is finite.
    let mut w: Vec<f64> = (0..n).map(|_| -log(1.0 - rng.random::<f64>())).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    // Absorb rounding so the row passes the stochasticity check.
    let drift = 1.0 - w.iter().sum::<f64>();
    w[n - 1] += drift;
    w
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Vec<usize> {
    (0..n_states).map(|_| rng.random_range(0..n_actions)).collect()
}

/// Rolls out `behavior` with `ε`-uniform action noise and records every
/// visited `(state, action)` pair.
pub fn sample_pairs<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    behavior: &Policy,
    epsilon: f64,
    episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    check_policy(mdp, behavior)?;
    let mut pairs = Vec::with_capacity(episodes * horizon);
    for _ in 0..episodes {
        let mut s = sample_index(rng, &mdp.initial_dist);
        for _ in 0..horizon {
            let a = if rng.random::<f64>() < epsilon { rng.random_range(0..mdp.n_actions) } else { behavior[s] };
            pairs.push((s, a));
            s = sample_index(rng, mdp.next_dist(s, a));
        }
    }
    Ok(pairs)
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub const GAMMAS: [f64; 3] = [0.9, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub instances: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub epsilon: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            min_states: 5,
            max_states: 30,
            min_actions: 2,
            max_actions: 5,
            alpha: 0.1,
            alpha_tilde: 0.1,
            episodes: 20,
            horizon: 30,
            epsilon: 0.3,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_states == 0 || self.min_states > self.max_states {
            return Err(Error::Config(alloc::format!("bad state range {}..={}", self.min_states, self.max_states)));
        }
        if self.min_actions == 0 || self.min_actions > self.max_actions {
            return Err(Error::Config(alloc::format!("bad action range {}..={}", self.min_actions, self.max_actions)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(alloc::format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.alpha >= 0.0 && self.alpha_tilde >= 0.0) {
            return Err(Error::Config("noise amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// One randomized problem: an MDP, its `Q*`, a dataset, and a comparison
/// policy standing in for the learned policy.
#[derive(Debug, Clone)]
pub struct TheoryInstance {
    pub index: usize,
    pub seed: u64,
    pub mdp: TabularMdp,
    pub q_star: QTable,
    pub dataset: Vec<(usize, usize)>,
    pub comparison: Vec<usize>,
    /// Second random policy for the two-policy identity.
    pub other: Vec<usize>,
}

impl TheoryInstance {
    pub fn generate(cfg: &TheoryConfig, seed: u64, index: usize) -> Result<Self> {
        let seed = derive_seed(seed, index as u64);
        let mut rng = seeded(seed);
        let ns = rng.random_range(cfg.min_states..=cfg.max_states);
        let na = rng.random_range(cfg.min_actions..=cfg.max_actions);
        let gamma = GAMMAS[rng.random_range(0..GAMMAS.len())];
        let mdp = random_mdp(&mut rng, ns, na, gamma)?;
        let q_star = optimal_q(&mdp)?;
        let generator = random_policy(&mut rng, ns, na);
        let dataset = sample_pairs(&mdp, &generator, cfg.epsilon, cfg.episodes, cfg.horizon, &mut rng)?;
        let comparison = random_policy(&mut rng, ns, na);
        let other = random_policy(&mut rng, ns, na);
        Ok(Self { index, seed, mdp, q_star, dataset, comparison, other })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub index: usize,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub conflicts: usize,
    pub lemma1: Lemma1Report,
    pub prop1: Prop1Report,
    pub prop2: Prop2Report,
    /// Largest gap between the linear-solve and truncated evaluations.
    pub eval_agreement: f64,
}

pub const LEMMA1_TOL: f64 = 1e-8;

impl InstanceReport {
    /// Named pass/fail checks, in reporting order.
    pub fn checks(&self) -> [(&'static str, bool); 6] {
        [
            ("lemma1", self.lemma1.residual < LEMMA1_TOL),
            ("prop1_b_nonneg", self.prop1.b_nonnegative()),
            ("prop2_bound", self.prop2.bound_holds()),
            ("prop2_exact_bound", self.prop2.exact_bound_holds()),
            ("prop2_dtv", self.prop2.dtv_bounds_hold()),
            ("rho_bar_range", self.prop2.rho_bar_in_range),
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }
}

pub fn verify_instance(inst: &TheoryInstance, cfg: &TheoryConfig) -> Result<InstanceReport> {
    let mdp = &inst.mdp;
    let lemma1 = check_lemma1(mdp, &inst.comparison, &inst.other)?;
    let prop1 = check_prop1(mdp, &inst.dataset, &inst.q_star, &inst.comparison)?;
    let prop2 = check_prop2(
        mdp,
        &inst.dataset,
        &inst.q_star,
        &inst.comparison,
        cfg.alpha,
        cfg.alpha_tilde,
        derive_seed(inst.seed, 1),
    )?;
    let behavior = behavior_policy(mdp, &inst.dataset, &inst.q_star)?;
    let mut eval_agreement: f64 = 0.0;
    for pi in [&inst.comparison, &behavior.policy] {
        eval_agreement = eval_agreement.max((exact_return(mdp, pi)? - truncated_return(mdp, pi)?).abs());
        let exact = visitation(mdp, pi)?.rho;
        let summed = truncated_visitation(mdp, pi)?;
        for (x, y) in exact.iter().zip(&summed) {
            eval_agreement = eval_agreement.max((x - y).abs());
        }
    }
    Ok(InstanceReport {
        index: inst.index,
        seed: inst.seed,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        gamma: mdp.gamma,
        conflicts: behavior.conflicts,
        lemma1,
        prop1,
        prop2,
        eval_agreement,
    })
}

/// Generates and verifies `cfg.instances` instances from `seed`.
pub fn verify_all(cfg: &TheoryConfig, seed: u64) -> Result<Vec<InstanceReport>> {
    cfg.validate()?;
    (0..cfg.instances).map(|i| verify_instance(&TheoryInstance::generate(cfg, seed, i)?, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GridMaze;
    use approx::assert_abs_diff_eq;

    fn single_state(rewards: &[f64], gamma: f64) -> TabularMdp {
        let na = rewards.len();
        TabularMdp::new(1, na, vec![1.0; na], rewards.to_vec(), vec![1.0], gamma).unwrap()
    }

    /// `n`-cycle `s -> s+1 mod n` under action 0, self-loop under action 1.
    fn cycle(n: usize, gamma: f64) -> TabularMdp {
        let mut t = vec![0.0; n * 2 * n];
        for s in 0..n {
            t[(s * 2) * n + (s + 1) % n] = 1.0;
            t[(s * 2 + 1) * n + s] = 1.0;
        }
        let r = (0..2 * n).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        TabularMdp::new(n, 2, t, r, vec![1.0 / n as f64; n], gamma).unwrap()
    }

    #[test]
    fn absorbing_unit_reward_returns_ten() {
        let mdp = single_state(&[1.0], 0.9);
        assert_abs_diff_eq!(exact_return(&mdp, &[0]).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn shortest_path_return_matches_closed_form() {
        let maze = GridMaze::gridmaze10();
        let gamma = 0.99;
        let mdp = maze.to_tabular(gamma).unwrap();
        let dist = maze.bfs_distances();
        let pi: Vec<usize> = maze.cells().iter().map(|&c| maze.expert_move(c, &dist).index()).collect();
        let d = dist[maze.state_index(maze.start).unwrap()].unwrap();
        let closed: f64 = -(0..d).map(|t| libm::pow(gamma, t as f64)).sum::<f64>();
        assert_abs_diff_eq!(exact_return(&mdp, &pi).unwrap(), closed, epsilon = 1e-9);
    }

    #[test]
    fn single_state_visitation_hits_upper_bound() {
        let mdp = single_state(&[0.0, 1.0], 0.95);
        let v = visitation(&mdp, &[0]).unwrap();
        assert_abs_diff_eq!(v.rho[0], 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.rho_bar, rho_bar_range(1, 0.95).1, epsilon = 1e-12);
    }

    #[test]
    fn uniform_cycle_visitation_hits_lower_bound() {
        let mdp = cycle(7, 0.9);
        let v = visitation(&mdp, &[0; 7]).unwrap();
        let lo = rho_bar_range(7, 0.9).0;
        for r in &v.rho {
            assert_abs_diff_eq!(*r, lo, epsilon = 1e-12);
        }
        assert!(v.rho_bar_in_range(7, 0.9));
    }

    #[test]
    fn truncation_horizon_is_minimal() {
        for g in GAMMAS {
            let t = truncation_horizon(g) as f64;
            assert!(libm::pow(g, t) < TRUNCATION_EPS);
            assert!(libm::pow(g, t - 2.0) >= TRUNCATION_EPS);
        }
    }

    #[test]
    fn exact_and_truncated_evaluations_agree() {
        let cfg = TheoryConfig::default();
        for i in 0..5 {
            let inst = TheoryInstance::generate(&cfg, 11, i).unwrap();
            let pi = &inst.comparison;
            let a = exact_return(&inst.mdp, pi).unwrap();
            let b = truncated_return(&inst.mdp, pi).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            let rho = visitation(&inst.mdp, pi).unwrap().rho;
            let summed = truncated_visitation(&inst.mdp, pi).unwrap();
            for (x, y) in rho.iter().zip(&summed) {
                assert_abs_diff_eq!(*x, *y, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn optimal_q_is_a_fixed_point() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 3, 0).unwrap();
        assert!(crate::preference::bellman_residual(&inst.mdp, &inst.q_star) <= EVAL_TOL);
    }

    #[test]
    fn lemma1_identical_policies_vanish() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 5, 2).unwrap();
        let r = check_lemma1(&inst.mdp, &inst.comparison, &inst.comparison).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_abs_diff_eq!(r.rhs, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn greedy_improvement_is_nonnegative() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 9, 1).unwrap();
        let q2 = policy_q(&inst.mdp, &inst.other).unwrap();
        let greedy = q2.greedy_policy();
        let r = check_lemma1(&inst.mdp, &greedy, &inst.other).unwrap();
        assert!(r.rhs >= -1e-12);
        assert!(r.lhs >= -1e-9);
    }

    #[test]
    fn majority_with_q_tie_break() {
        let mdp = single_state(&[0.0, 1.0, 0.5], 0.9);
        let q = optimal_q(&mdp).unwrap();
        let b = behavior_policy(&mdp, &[(0, 0), (0, 2), (0, 0), (0, 2)], &q).unwrap();
        assert_eq!(b.policy, vec![2]);
        assert_eq!(b.conflicts, 1);
        let b = behavior_policy(&mdp, &[(0, 0), (0, 0), (0, 1)], &q).unwrap();
        assert_eq!(b.policy, vec![0]);
    }

    #[test]
    fn revision_with_itself_is_identity() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 4, 0).unwrap();
        let b = behavior_policy(&inst.mdp, &inst.dataset, &inst.q_star).unwrap();
        assert_eq!(revise_behavior(&b, &b.policy, &inst.q_star), b.policy);
        let r = check_prop1(&inst.mdp, &inst.dataset, &inst.q_star, &b.policy).unwrap();
        assert_eq!((r.a, r.b, r.revised_states), (0.0, 0.0, 0));
    }

    #[test]
    fn revision_toward_greedy_only_where_it_wins() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 4, 3).unwrap();
        let b = behavior_policy(&inst.mdp, &inst.dataset, &inst.q_star).unwrap();
        let greedy = inst.q_star.greedy_policy();
        let revised = revise_behavior(&b, &greedy, &inst.q_star);
        for s in 0..inst.mdp.n_states {
            let wins = b.visited[s] && inst.q_star.get(s, greedy[s]) > inst.q_star.get(s, b.policy[s]);
            assert_eq!(revised[s], if wins { greedy[s] } else { b.policy[s] });
        }
    }

    #[test]
    fn single_state_prop1_is_exact() {
        let gamma = 0.9;
        let mdp = single_state(&[0.0, 1.0], gamma);
        let q = optimal_q(&mdp).unwrap();
        let r = check_prop1(&mdp, &[(0, 0)], &q, &[1]).unwrap();
        assert_abs_diff_eq!(r.a, 1.0 / (1.0 - gamma), epsilon = 1e-12);
        assert_abs_diff_eq!(r.b, 1.0 / (1.0 - gamma), epsilon = 1e-12);
        assert_eq!(r.drift, 0.0);
    }

    #[test]
    fn random_behavior_on_gridmaze_improves() {
        let maze = GridMaze::gridmaze10();
        let mdp = maze.to_tabular(0.99).unwrap();
        let q = optimal_q(&mdp).unwrap();
        let mut rng = seeded(21);
        let pi_beta = random_policy(&mut rng, mdp.n_states, mdp.n_actions);
        let data: Vec<(usize, usize)> = pi_beta.iter().copied().enumerate().collect();
        let r = check_prop1(&mdp, &data, &q, &q.greedy_policy()).unwrap();
        assert!(r.b >= 0.0);
        assert!(r.revised_states > 0);
    }

    #[test]
    fn zero_noise_reduces_to_prop1() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 6, 0).unwrap();
        let p1 = check_prop1(&inst.mdp, &inst.dataset, &inst.q_star, &inst.comparison).unwrap();
        let p2 = check_prop2(&inst.mdp, &inst.dataset, &inst.q_star, &inst.comparison, 0.0, 0.0, 1).unwrap();
        assert_eq!(p2.slack, 0.0);
        assert_eq!(p2.true_gap, p1.b);
        assert_eq!(p2.estimated_gap, p1.b);
        assert!(p2.bound_holds());
    }

    #[test]
    fn dtv_of_constant_shift() {
        let q1 = QTable { n_states: 3, n_actions: 2, values: vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6] };
        assert_eq!(dtv(&q1, &q1, &[0, 1, 0]), 0.0);
        let mut q2 = q1.clone();
        q2.values.iter_mut().for_each(|v| *v -= 0.25);
        assert_abs_diff_eq!(dtv(&q1, &q2, &[0, 1, 1]), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn perturbation_respects_amplitudes() {
        let inst = TheoryInstance::generate(&TheoryConfig::default(), 8, 0).unwrap();
        let b = behavior_policy(&inst.mdp, &inst.dataset, &inst.q_star).unwrap();
        let hat = perturbed_q(&inst.q_star, &b.policy, 0.05, 0.2, 3).unwrap();
        assert!(dtv(&hat, &inst.q_star, &b.policy) <= 0.05);
        assert!(hat.sup_distance(&inst.q_star) <= 0.2);
    }

    #[test]
    fn policy_shape_is_checked() {
        let mdp = single_state(&[0.0, 1.0], 0.9);
        assert!(matches!(exact_return(&mdp, &[0, 0]), Err(Error::Shape { .. })));
        assert!(matches!(visitation(&mdp, &[2]), Err(Error::Domain(_))));
    }
}
