//! Information-theoretic diversity signals.
//!
//! The pseudo reward combines (optionally) the entropies of the intra-option
//! policies, the entropy of the policy over options and the cross-entropy
//! between pairs of option policies. The cross-entropy term alone is the
//! default: it is the part that rewards options for acting differently from
//! each other in the same state.
//!
//! [`DiversityTracker`] turns raw bonus samples into a *relative* diversity
//! signal, either by standardising against a bounded buffer or by centring
//! on a running mean over the whole run.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::gridworld::StateId;
use crate::option_model::{ActionDistribution, PolicyTables};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiversityError {
    #[error("q has zero mass at action {0} where p is positive")]
    ZeroMass(usize),
    #[error("distributions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("tau must lie in [0, 1], got {0}")]
    TauOutOfRange(f64),
    #[error("bonus spec enables no terms")]
    NoTerms,
    #[error("pair budget must be at least 1")]
    ZeroPairBudget,
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(d: &ActionDistribution) -> f64 {
    -d.probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `H(p; q) = -Σ p(a) ln q(a)`.
pub fn cross_entropy(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64, DiversityError> {
    if p.len() != q.len() {
        return Err(DiversityError::LengthMismatch(p.len(), q.len()));
    }
    let mut h = 0.0;
    for (a, (&pa, &qa)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pa > 0.0 {
            if qa <= 0.0 {
                return Err(DiversityError::ZeroMass(a));
            }
            h -= pa * qa.ln();
        }
    }
    Ok(h)
}

/// Entropy from log-probabilities. Stays exact when probabilities underflow.
pub fn entropy_from_log(log_p: &[f64]) -> f64 {
    cross_entropy_from_log(log_p, log_p)
}

/// Cross-entropy from log-probabilities of two strictly positive
/// distributions (e.g. log-softmax outputs).
pub fn cross_entropy_from_log(log_p: &[f64], log_q: &[f64]) -> f64 {
    debug_assert_eq!(log_p.len(), log_q.len());
    -log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p > 0.0 {
                p * lq
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Entropy of the ε-greedy distribution over options implied by a row of
/// option values.
pub fn option_selection_entropy(q_omega_row: &[f64], epsilon: f64) -> f64 {
    let n = q_omega_row.len();
    if n == 0 {
        return 0.0;
    }
    let explore = epsilon / n as f64;
    let greedy = 1.0 - epsilon + explore;
    let mut probs = vec![explore; n];
    probs[crate::option_model::argmax(q_omega_row)] = greedy;
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Which pseudo-reward terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BonusSpec {
    /// Entropy of every intra-option policy.
    pub option_entropies: bool,
    /// Entropy of the ε-greedy policy over options.
    pub policy_over_options_entropy: bool,
    /// Cross-entropy between option policies.
    pub divergence: bool,
    /// Most option pairs averaged in the divergence term.
    pub pair_budget: usize,
    /// Average both directions of each pair instead of sampling one.
    pub symmetric: bool,
}

impl Default for BonusSpec {
    fn default() -> Self {
        Self {
            option_entropies: false,
            policy_over_options_entropy: false,
            divergence: true,
            pair_budget: 6,
            symmetric: false,
        }
    }
}

impl BonusSpec {
    pub fn all_terms() -> Self {
        Self {
            option_entropies: true,
            policy_over_options_entropy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DiversityError> {
        if !(self.option_entropies || self.policy_over_options_entropy || self.divergence) {
            return Err(DiversityError::NoTerms);
        }
        if self.pair_budget == 0 {
            return Err(DiversityError::ZeroPairBudget);
        }
        Ok(())
    }
}

/// Pseudo reward at state `s`.
///
/// With more than `pair_budget` option pairs, a uniform subset of pairs is
/// drawn without replacement. Each pair contributes its cross-entropy in one
/// uniformly chosen direction unless `spec.symmetric` is set.
pub fn pseudo_reward<R: Rng + ?Sized>(
    tables: PolicyTables<'_>,
    s: StateId,
    spec: &BonusSpec,
    epsilon: f64,
    rng: &mut R,
) -> f64 {
    let n = tables.n_options();
    let log_policies: Vec<Vec<f64>> = (0..n).map(|o| tables.log_policy(o, s)).collect();
    let mut bonus = 0.0;

    if spec.option_entropies {
        bonus += log_policies.iter().map(|lp| entropy_from_log(lp)).sum::<f64>();
    }
    if spec.policy_over_options_entropy {
        bonus += option_selection_entropy(tables.q_omega_row(s), epsilon);
    }
    if spec.divergence {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let chosen: Vec<(usize, usize)> = if pairs.len() <= spec.pair_budget {
            pairs
        } else {
            let mut picks = index::sample(rng, pairs.len(), spec.pair_budget).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|k| pairs[k]).collect()
        };
        let total: f64 = chosen
            .iter()
            .map(|&(i, j)| {
                let (p, q) = (&log_policies[i], &log_policies[j]);
                if spec.symmetric {
                    0.5 * (cross_entropy_from_log(p, q) + cross_entropy_from_log(q, p))
                } else if rng.gen::<bool>() {
                    cross_entropy_from_log(p, q)
                } else {
                    cross_entropy_from_log(q, p)
                }
            })
            .sum();
        bonus += total / chosen.len() as f64;
    }
    bonus
}

/// Trade-off between task reward and diversity bonus.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Tau(f64);

impl Tau {
    pub const ZERO: Tau = Tau(0.0);

    pub fn new(value: f64) -> Result<Self, DiversityError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Tau(value))
        } else {
            Err(DiversityError::TauOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `(1 - τ) r + τ bonus`.
pub fn augment(reward: f64, bonus: f64, tau: Tau) -> f64 {
    if tau.0 == 0.0 {
        return reward;
    }
    (1.0 - tau.0) * reward + tau.0 * bonus
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackerMode {
    /// Standardise against the samples in a bounded buffer.
    BufferStandardize,
    /// Subtract the running mean of every sample seen this run.
    #[default]
    MovingMeanCenter,
}

/// Accumulates bonus samples and converts new ones to relative diversity.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityTracker {
    mode: TrackerMode,
    capacity: usize,
    buffer: VecDeque<f64>,
    running_sum: f64,
    running_count: u64,
}

impl DiversityTracker {
    pub fn new(mode: TrackerMode, capacity: usize) -> Self {
        assert!(capacity >= 1, "tracker capacity must be positive");
        Self {
            mode,
            capacity,
            buffer: VecDeque::with_capacity(if mode == TrackerMode::BufferStandardize {
                capacity
            } else {
                0
            }),
            running_sum: 0.0,
            running_count: 0,
        }
    }

    pub fn mode(&self) -> TrackerMode {
        self.mode
    }

    pub fn record(&mut self, bonus: f64) {
        match self.mode {
            TrackerMode::BufferStandardize => {
                if self.buffer.len() == self.capacity {
                    self.buffer.pop_front();
                }
                self.buffer.push_back(bonus);
            }
            TrackerMode::MovingMeanCenter => {
                self.running_sum += bonus;
                self.running_count += 1;
            }
        }
    }

    pub fn buffer(&self) -> &VecDeque<f64> {
        &self.buffer
    }

    pub fn len(&self) -> usize {
        match self.mode {
            TrackerMode::BufferStandardize => self.buffer.len(),
            TrackerMode::MovingMeanCenter => self.running_count as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn running_mean(&self) -> Option<f64> {
        (self.running_count > 0).then(|| self.running_sum / self.running_count as f64)
    }

    /// Buffer mean and population standard deviation.
    pub fn buffer_stats(&self) -> Option<(f64, f64)> {
        if self.buffer.is_empty() {
            return None;
        }
        let n = self.buffer.len() as f64;
        let mean = self.buffer.iter().sum::<f64>() / n;
        let var = self.buffer.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }

    /// Relative diversity of `bonus`. Returns 0 when there is no signal yet
    /// (fewer than two buffered samples, a degenerate spread, or an empty
    /// running mean).
    pub fn relative_diversity(&self, bonus: f64) -> f64 {
        match self.mode {
            TrackerMode::BufferStandardize => {
                if self.buffer.len() < 2 {
                    return 0.0;
                }
                let (mean, std) = self.buffer_stats().expect("non-empty buffer");
                if std < 1e-12 {
                    0.0
                } else {
                    (bonus - mean) / std
                }
            }
            TrackerMode::MovingMeanCenter => match self.running_mean() {
                Some(mean) => bonus - mean,
                None => 0.0,
            },
        }
    }
}
