//! Pairwise ranking network `f_r(s, a)` trained on oracle preferences and
//! used to pseudo-label samples the oracle never saw.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use log::info;
use rand::seq::SliceRandom;

use crate::data::{QueryDataset, StateStats};
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpNet, Mode, OutputActivation};
use crate::rng::{derive_seed, seeded, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct RankNetConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Epochs per call to [`RankNet::train`].
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
}

impl Default for RankNetConfig {
    fn default() -> Self {
        Self { hidden: vec![512, 256], dropout: 0.5, epochs: 100, minibatch: 64, lr: 1e-3 }
    }
}

/// `log(1 + e^o)` without overflow.
pub fn softplus(o: f64) -> f64 {
    o.max(0.0) + libm::log1p(libm::exp(-o.abs()))
}

pub fn sigmoid(o: f64) -> f64 {
    if o >= 0.0 {
        1.0 / (1.0 + libm::exp(-o))
    } else {
        let e = libm::exp(o);
        e / (1.0 + e)
    }
}

/// Cross-entropy between `P = σ(o)` and the target `p_bar`, i.e.
/// `softplus(o) - p_bar·o`, written so that neither branch cancels.
pub fn ranknet_cost(o: f64, p_bar: f64) -> f64 {
    (1.0 - p_bar) * softplus(o) + p_bar * softplus(-o)
}

/// `dC/do = P - p_bar`.
pub fn ranknet_cost_grad(o: f64, p_bar: f64) -> f64 {
    sigmoid(o) - p_bar
}

/// Target probability that the dataset action is preferred.
pub fn target_probability(preferred_is_policy: bool) -> f64 {
    if preferred_is_policy { 0.0 } else { 1.0 }
}

#[derive(Debug, Clone)]
pub struct RankNet {
    config: RankNetConfig,
    state_dim: usize,
    action_dim: usize,
    stats: StateStats,
    net: MlpNet,
    opt: AdamState,
    rng: SeededRng,
    rounds_trained: usize,
}

impl RankNet {
    pub fn new(config: RankNetConfig, state_dim: usize, action_dim: usize, stats: StateStats, seed: u64) -> Result<Self> {
        if config.minibatch == 0 {
            return Err(Error::Config("ranknet.minibatch must be positive".into()));
        }
        if stats.mean.len() != state_dim {
            return Err(Error::Shape { expected: state_dim, got: stats.mean.len() });
        }
        let widths: Vec<usize> = [state_dim + action_dim].iter().chain(&config.hidden).chain(&[1]).copied().collect();
        let net = MlpNet::new(&widths, OutputActivation::Identity, config.dropout, &mut seeded(derive_seed(seed, 0)))?;
        Ok(Self {
            opt: AdamState::for_net(&net, config.lr),
            net,
            config,
            state_dim,
            action_dim,
            stats,
            rng: seeded(derive_seed(seed, 1)),
            rounds_trained: 0,
        })
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn config(&self) -> &RankNetConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.rounds_trained > 0
    }

    pub fn rounds_trained(&self) -> usize {
        self.rounds_trained
    }

    fn push_input(&self, s: &[f64], a: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::Shape { expected: self.state_dim, got: s.len() });
        }
        if a.len() != self.action_dim {
            return Err(Error::Shape { expected: self.action_dim, got: a.len() });
        }
        self.stats.normalize_into(s, out);
        out.extend_from_slice(a);
        Ok(())
    }

    /// Dropout-free `f_r(s, a)`.
    pub fn score(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim);
        self.push_input(s, a, &mut x)?;
        Ok(self.net.predict(&x)?[0])
    }

    /// `o = f_r(s, a_dataset) - f_r(s, a_policy)`.
    pub fn pair_logit(&self, s: &[f64], a_dataset: &[f64], a_policy: &[f64]) -> Result<f64> {
        Ok(self.score(s, a_dataset)? - self.score(s, a_policy)?)
    }

    /// Runs the configured number of epochs of minibatch Adam over all of
    /// `dq`. Returns the mean training cost of the final epoch, or `None`
    /// when `dq` is empty (nothing is trained).
    pub fn train(&mut self, dq: &QueryDataset) -> Result<Option<f64>> {
        if dq.is_empty() {
            info!("ranknet: empty query dataset, skipping training");
            return Ok(None);
        }
        let mut inputs = Vec::with_capacity(dq.len() * 2 * (self.state_dim + self.action_dim));
        for r in &dq.records {
            self.push_input(&r.state, &r.dataset_action, &mut inputs)?;
        }
        for r in &dq.records {
            self.push_input(&r.state, &r.policy_action, &mut inputs)?;
        }
        let targets: Vec<f64> = dq.records.iter().map(|r| target_probability(r.preferred_is_policy)).collect();
        let width = self.state_dim + self.action_dim;
        let n = dq.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut last_epoch = 0.0;
        let mut x = Vec::new();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.minibatch) {
                let m = chunk.len();
                // Rows 0..m hold (s, a_dataset), rows m..2m hold (s, a_policy).
                x.clear();
                for &k in chunk {
                    x.extend_from_slice(&inputs[k * width..(k + 1) * width]);
                }
                for &k in chunk {
                    x.extend_from_slice(&inputs[(n + k) * width..(n + k + 1) * width]);
                }
                let f = self.net.forward(&x, 2 * m, Mode::Train, &mut self.rng)?;
                let mut grad = vec![0.0; 2 * m];
                for (j, &k) in chunk.iter().enumerate() {
                    let o = f[j] - f[m + j];
                    total += ranknet_cost(o, targets[k]);
                    let g = ranknet_cost_grad(o, targets[k]) / m as f64;
                    grad[j] = g;
                    grad[m + j] = -g;
                }
                let grads = self.net.backward(&grad)?;
                self.opt.step(&mut self.net, &grads.params)?;
            }
            last_epoch = total / n as f64;
        }
        if !last_epoch.is_finite() {
            return Err(Error::Numeric("ranknet training cost".to_string()));
        }
        self.rounds_trained += 1;
        Ok(Some(last_epoch))
    }

    /// RankNet preference between the two candidates; `true` means the
    /// policy action wins. Ties keep the dataset action.
    pub fn pseudo_query(&self, s: &[f64], a_dataset: &[f64], a_policy: &[f64]) -> Result<bool> {
        if !self.is_trained() {
            return Err(Error::State("pseudo query issued before the ranknet was trained".to_string()));
        }
        Ok(self.pair_logit(s, a_dataset, a_policy)? < 0.0)
    }

    /// [`pseudo_query`](RankNet::pseudo_query) over row-major batches.
    pub fn pseudo_query_batch(&self, states: &[f64], a_dataset: &[f64], a_policy: &[f64], batch: usize) -> Result<Vec<bool>> {
        if !self.is_trained() {
            return Err(Error::State("pseudo query issued before the ranknet was trained".to_string()));
        }
        if states.len() != batch * self.state_dim {
            return Err(Error::Shape { expected: batch * self.state_dim, got: states.len() });
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(2 * batch * (sd + ad));
        for actions in [a_dataset, a_policy] {
            if actions.len() != batch * ad {
                return Err(Error::Shape { expected: batch * ad, got: actions.len() });
            }
            for i in 0..batch {
                self.push_input(&states[i * sd..(i + 1) * sd], &actions[i * ad..(i + 1) * ad], &mut x)?;
            }
        }
        let f = self.net.predict_batch(&x, 2 * batch)?;
        Ok((0..batch).map(|i| f[i] - f[batch + i] < 0.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::QueryRecord;
    use proptest::prelude::*;
    use rand::Rng;

    // High-precision reference values of the closed forms.
    const LN_2: f64 = 0.693_147_180_559_945_309_417_232_121_458_176_568;
    const LN_1P_EXP_M10: f64 = 4.539_889_921_686_464_676_948_782_930_710_559_677e-5;
    const LN_1P_E: f64 = 1.313_261_687_518_222_834_048_995_494_967_855_642;

    fn small(seed: u64) -> RankNet {
        let cfg = RankNetConfig { hidden: vec![16, 8], dropout: 0.0, epochs: 50, minibatch: 16, lr: 3e-3 };
        RankNet::new(cfg, 2, 2, StateStats::identity(2), seed).unwrap()
    }

    fn record(state: Vec<f64>, dataset_action: Vec<f64>, policy_action: Vec<f64>, preferred_is_policy: bool) -> QueryRecord {
        QueryRecord { index: 0, state, dataset_action, policy_action, preferred_is_policy, step: 0 }
    }

    #[test]
    fn cost_reference_values() {
        for p in [0.0, 1.0] {
            assert!((ranknet_cost(0.0, p) - LN_2).abs() < 1e-15);
        }
        assert!((ranknet_cost(10.0, 1.0) - LN_1P_EXP_M10).abs() / LN_1P_EXP_M10 < 1e-14);
        assert!((ranknet_cost(1.0, 0.0) - LN_1P_E).abs() < 1e-15);
        // Large logits stay finite.
        assert!(ranknet_cost(1e4, 0.0).is_finite());
        assert!(ranknet_cost(-1e4, 1.0).is_finite());
    }

    #[test]
    fn cost_gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        for _ in 0..50 {
            let o: f64 = rng.random_range(-8.0..8.0);
            for p in [0.0, 1.0] {
                let h = 1e-5;
                let fd = (ranknet_cost(o + h, p) - ranknet_cost(o - h, p)) / (2.0 * h);
                let g = ranknet_cost_grad(o, p);
                assert!((fd - g).abs() / g.abs().max(1e-3) < 1e-6, "o={o} p={p}");
            }
        }
    }

    #[test]
    fn logit_of_identical_candidates_is_zero() {
        let rn = small(1);
        assert_eq!(rn.pair_logit(&[0.3, -0.2], &[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let zero = RankNet { net: MlpNet::zeros(&[4, 16, 8, 1], OutputActivation::Identity).unwrap(), ..small(1) };
        assert_eq!(zero.pair_logit(&[1.0, 2.0], &[0.1, 0.2], &[-0.3, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn logit_is_difference_of_two_forward_passes() {
        let rn = small(2);
        let (s, a, b) = ([0.2, 0.7], [0.1, -0.9], [-0.4, 0.3]);
        let fa = rn.net().predict(&[s[0], s[1], a[0], a[1]]).unwrap()[0];
        let fb = rn.net().predict(&[s[0], s[1], b[0], b[1]]).unwrap()[0];
        assert_eq!(rn.pair_logit(&s, &a, &b).unwrap(), fa - fb);
    }

    proptest! {
        #[test]
        fn logit_is_antisymmetric(seed in 0u64..50, v in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let rn = small(seed);
            let o1 = rn.pair_logit(&v[0..2], &v[2..4], &v[4..6]).unwrap();
            let o2 = rn.pair_logit(&v[0..2], &v[4..6], &v[2..4]).unwrap();
            prop_assert_eq!(o1, -o2);
        }
    }

    #[test]
    fn empty_query_dataset_is_a_noop() {
        let mut rn = small(4);
        let before = rn.net().params().to_vec();
        assert_eq!(rn.train(&QueryDataset::default()).unwrap(), None);
        assert_eq!(rn.net().params(), before.as_slice());
        assert!(!rn.is_trained());
    }

    #[test]
    fn pseudo_query_requires_training() {
        let rn = small(5);
        assert!(matches!(rn.pseudo_query(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]), Err(Error::State(_))));
    }

    #[test]
    fn single_pair_is_memorised() {
        let mut rn = small(6);
        let mut dq = QueryDataset::default();
        dq.push(record(vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0], false));
        rn.train(&dq).unwrap();
        assert!(rn.pair_logit(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0]).unwrap() > 0.0);
        assert!(!rn.pseudo_query(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0]).unwrap());
    }

    #[test]
    fn contradictory_labels_cost_at_least_ln2() {
        let mut rn = small(7);
        let mut dq = QueryDataset::default();
        dq.push(record(vec![0.1, 0.2], vec![0.3, 0.4], vec![-0.5, 0.6], false));
        dq.push(record(vec![0.1, 0.2], vec![0.3, 0.4], vec![-0.5, 0.6], true));
        let final_cost = rn.train(&dq).unwrap().unwrap();
        let o = rn.pair_logit(&[0.1, 0.2], &[0.3, 0.4], &[-0.5, 0.6]).unwrap();
        let pair_cost = 0.5 * (ranknet_cost(o, 1.0) + ranknet_cost(o, 0.0));
        // softplus(o) - o/2 is convex with its minimum ln 2 at o = 0.
        assert!(pair_cost >= LN_2 - 1e-15);
        assert!(final_cost >= LN_2 - 1e-12);
    }

    #[test]
    fn batched_pseudo_queries_match_single_calls() {
        let mut rn = small(9);
        let mut dq = QueryDataset::default();
        dq.push(record(vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0], true));
        rn.train(&dq).unwrap();
        let mut rng = seeded(10);
        let mut v = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (s, a, p) = (v(40), v(40), v(40));
        let batched = rn.pseudo_query_batch(&s, &a, &p, 20).unwrap();
        for i in 0..20 {
            let r = 2 * i..2 * i + 2;
            assert_eq!(batched[i], rn.pseudo_query(&s[r.clone()], &a[r.clone()], &p[r]).unwrap());
        }
    }

    #[test]
    fn trained_with_dropout_predicts_without_it() {
        let cfg = RankNetConfig { hidden: vec![16], dropout: 0.5, epochs: 2, minibatch: 4, lr: 1e-3 };
        let mut rn = RankNet::new(cfg, 2, 2, StateStats::identity(2), 8).unwrap();
        let mut dq = QueryDataset::default();
        dq.push(record(vec![0.1, 0.2], vec![0.3, 0.4], vec![-0.5, 0.6], true));
        rn.train(&dq).unwrap();
        let a = rn.score(&[0.1, 0.2], &[0.3, 0.4]).unwrap();
        assert_eq!(a, rn.score(&[0.1, 0.2], &[0.3, 0.4]).unwrap());
    }
}
