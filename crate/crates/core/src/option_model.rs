//! Tabular option parameterisation: softmax intra-option policies, sigmoid
//! terminations, an ε-greedy policy over options and the two critics
//! `Q_Ω(s, o)` and `Q_U(s, o, a)`.

use rand::Rng;
use thiserror::Error;

use crate::gridworld::{ActionId, StateId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("need at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("need at least 2 actions, got {0}")]
    TooFewActions(usize),
    #[error("need at least 1 state")]
    NoStates,
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
}

/// How `V(s)` is derived from the option values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueMode {
    /// `V(s) = max_o Q_Ω(s, o)`.
    #[default]
    Max,
    /// Expectation of `Q_Ω(s, ·)` under the ε-greedy policy over options.
    EpsilonGreedy,
}

/// A probability vector over primitive actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    /// Wraps a probability vector; `None` unless entries are non-negative
    /// and sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Option<Self> {
        let sum: f64 = probs.iter().sum();
        let ok = !probs.is_empty()
            && probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (sum - 1.0).abs() <= 1e-9;
        ok.then_some(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of `logits / temperature`, with max-subtraction. Entries are
    /// floored at the smallest positive normal so the result stays strictly
    /// positive even when the true probability underflows.
    pub fn softmax(logits: &[f64], temperature: f64) -> Self {
        let mut probs = log_softmax(logits, temperature);
        for p in probs.iter_mut() {
            *p = p.exp().max(f64::MIN_POSITIVE);
        }
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left `acc` a hair below 1; fall back to the last
        // action with non-zero mass.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// `log softmax(logits / temperature)`, exact even when probabilities underflow.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let log_norm = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|z| z - log_norm).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Initial values for every table entry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitSpec {
    pub theta_pi: f64,
    pub theta_beta: f64,
    pub q_omega: f64,
    pub q_u: f64,
}

/// Read-only view of the policy-side tables. Diversity computations take
/// this instead of the full model so they cannot observe termination
/// parameters.
#[derive(Debug, Clone, Copy)]
pub struct PolicyTables<'a> {
    n_options: usize,
    n_actions: usize,
    temperature: f64,
    theta_pi: &'a [f64],
    q_omega: &'a [f64],
}

impl<'a> PolicyTables<'a> {
    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self, o: usize, s: StateId) -> &'a [f64] {
        let n_states = self.theta_pi.len() / (self.n_options * self.n_actions);
        let start = (o * n_states + s.0) * self.n_actions;
        &self.theta_pi[start..start + self.n_actions]
    }

    pub fn log_policy(&self, o: usize, s: StateId) -> Vec<f64> {
        log_softmax(self.logits(o, s), self.temperature)
    }

    pub fn q_omega_row(&self, s: StateId) -> &'a [f64] {
        &self.q_omega[s.0 * self.n_options..(s.0 + 1) * self.n_options]
    }
}

/// All learnable tables of one agent.
///
/// Layouts: `theta_pi[o][s][a]`, `theta_beta[o][s]`, `q_omega[s][o]`,
/// `q_u[s][o][a]`, each stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionModel {
    n_options: usize,
    n_states: usize,
    n_actions: usize,
    temperature: f64,
    theta_pi: Vec<f64>,
    theta_beta: Vec<f64>,
    q_omega: Vec<f64>,
    q_u: Vec<f64>,
}

impl OptionModel {
    pub fn new(
        n_options: usize,
        n_states: usize,
        n_actions: usize,
        temperature: f64,
    ) -> Result<Self, ModelError> {
        Self::with_init(n_options, n_states, n_actions, temperature, InitSpec::default())
    }

    pub fn with_init(
        n_options: usize,
        n_states: usize,
        n_actions: usize,
        temperature: f64,
        init: InitSpec,
    ) -> Result<Self, ModelError> {
        if n_options < 2 {
            return Err(ModelError::TooFewOptions(n_options));
        }
        if n_actions < 2 {
            return Err(ModelError::TooFewActions(n_actions));
        }
        if n_states == 0 {
            return Err(ModelError::NoStates);
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ModelError::BadTemperature(temperature));
        }
        Ok(Self {
            n_options,
            n_states,
            n_actions,
            temperature,
            theta_pi: vec![init.theta_pi; n_options * n_states * n_actions],
            theta_beta: vec![init.theta_beta; n_options * n_states],
            q_omega: vec![init.q_omega; n_states * n_options],
            q_u: vec![init.q_u; n_states * n_options * n_actions],
        })
    }

    /// Rebuilds a model from raw tables (snapshot loading).
    pub(crate) fn from_parts(
        dims: (usize, usize, usize),
        temperature: f64,
        theta_pi: Vec<f64>,
        theta_beta: Vec<f64>,
        q_omega: Vec<f64>,
        q_u: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let (n_options, n_states, n_actions) = dims;
        let mut m = Self::new(n_options, n_states, n_actions, temperature)?;
        assert_eq!(theta_pi.len(), m.theta_pi.len());
        assert_eq!(theta_beta.len(), m.theta_beta.len());
        assert_eq!(q_omega.len(), m.q_omega.len());
        assert_eq!(q_u.len(), m.q_u.len());
        m.theta_pi = theta_pi;
        m.theta_beta = theta_beta;
        m.q_omega = q_omega;
        m.q_u = q_u;
        Ok(m)
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn policy_tables(&self) -> PolicyTables<'_> {
        PolicyTables {
            n_options: self.n_options,
            n_actions: self.n_actions,
            temperature: self.temperature,
            theta_pi: &self.theta_pi,
            q_omega: &self.q_omega,
        }
    }

    fn pi_index(&self, o: usize, s: StateId) -> usize {
        debug_assert!(o < self.n_options && s.0 < self.n_states);
        (o * self.n_states + s.0) * self.n_actions
    }

    fn beta_index(&self, o: usize, s: StateId) -> usize {
        debug_assert!(o < self.n_options && s.0 < self.n_states);
        o * self.n_states + s.0
    }

    fn qu_index(&self, s: StateId, o: usize) -> usize {
        debug_assert!(o < self.n_options && s.0 < self.n_states);
        (s.0 * self.n_options + o) * self.n_actions
    }

    pub fn theta_pi(&self, o: usize, s: StateId) -> &[f64] {
        let i = self.pi_index(o, s);
        &self.theta_pi[i..i + self.n_actions]
    }

    pub fn theta_pi_mut(&mut self, o: usize, s: StateId) -> &mut [f64] {
        let i = self.pi_index(o, s);
        &mut self.theta_pi[i..i + self.n_actions]
    }

    pub fn theta_beta(&self, o: usize, s: StateId) -> f64 {
        self.theta_beta[self.beta_index(o, s)]
    }

    pub fn theta_beta_mut(&mut self, o: usize, s: StateId) -> &mut f64 {
        let i = self.beta_index(o, s);
        &mut self.theta_beta[i]
    }

    pub fn q_omega_row(&self, s: StateId) -> &[f64] {
        &self.q_omega[s.0 * self.n_options..(s.0 + 1) * self.n_options]
    }

    pub fn q_omega(&self, s: StateId, o: usize) -> f64 {
        self.q_omega[s.0 * self.n_options + o]
    }

    pub fn set_q_omega(&mut self, s: StateId, o: usize, value: f64) {
        self.q_omega[s.0 * self.n_options + o] = value;
    }

    pub fn q_u_row(&self, s: StateId, o: usize) -> &[f64] {
        let i = self.qu_index(s, o);
        &self.q_u[i..i + self.n_actions]
    }

    pub fn q_u(&self, s: StateId, o: usize, a: ActionId) -> f64 {
        self.q_u[self.qu_index(s, o) + a.0]
    }

    pub fn q_u_mut(&mut self, s: StateId, o: usize, a: ActionId) -> &mut f64 {
        let i = self.qu_index(s, o) + a.0;
        &mut self.q_u[i]
    }

    /// All termination parameters, `[o][s]` row-major.
    pub fn theta_beta_table(&self) -> &[f64] {
        &self.theta_beta
    }

    pub fn theta_pi_table(&self) -> &[f64] {
        &self.theta_pi
    }

    pub fn q_omega_table(&self) -> &[f64] {
        &self.q_omega
    }

    pub fn q_u_table(&self) -> &[f64] {
        &self.q_u
    }

    pub fn policy_dist(&self, o: usize, s: StateId) -> ActionDistribution {
        ActionDistribution::softmax(self.theta_pi(o, s), self.temperature)
    }

    pub fn log_policy(&self, o: usize, s: StateId) -> Vec<f64> {
        log_softmax(self.theta_pi(o, s), self.temperature)
    }

    pub fn termination_prob(&self, o: usize, s: StateId) -> f64 {
        sigmoid(self.theta_beta(o, s))
    }

    pub fn greedy_option(&self, s: StateId) -> usize {
        argmax(self.q_omega_row(s))
    }

    /// ε-greedy over `Q_Ω(s, ·)`; ties go to the lowest index.
    pub fn select_option<R: Rng + ?Sized>(&self, s: StateId, epsilon: f64, rng: &mut R) -> usize {
        if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..self.n_options)
        } else {
            self.greedy_option(s)
        }
    }

    /// `V(s) = max_o Q_Ω(s, o)`.
    pub fn option_value_v(&self, s: StateId) -> f64 {
        self.q_omega_row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn state_value(&self, s: StateId, mode: ValueMode, epsilon: f64) -> f64 {
        match mode {
            ValueMode::Max => self.option_value_v(s),
            ValueMode::EpsilonGreedy => {
                let row = self.q_omega_row(s);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                (1.0 - epsilon) * self.option_value_v(s) + epsilon * mean
            }
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, o: usize, s: StateId, rng: &mut R) -> ActionId {
        ActionId(self.policy_dist(o, s).sample(rng))
    }

    /// Recomputes `Q_Ω(s, o) = Σ_a π_o(a|s) Q_U(s, o, a)`.
    pub fn refresh_option_value(&mut self, s: StateId, o: usize) {
        let dist = self.policy_dist(o, s);
        let value = dist
            .probs()
            .iter()
            .zip(self.q_u_row(s, o))
            .map(|(p, q)| p * q)
            .sum();
        self.set_q_omega(s, o, value);
    }

    pub fn is_finite(&self) -> bool {
        self.theta_pi
            .iter()
            .chain(&self.theta_beta)
            .chain(&self.q_omega)
            .chain(&self.q_u)
            .all(|x| x.is_finite())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
