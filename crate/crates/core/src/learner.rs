//! Intra-option Q-learning with option-critic style updates.
//!
//! One update engine covers three algorithms:
//!
//! * **OC**: terminations descend the termination advantage
//!   `Q_Ω(s', o) - V(s')`.
//! * **DEOC**: OC with the task reward augmented by the diversity bonus.
//! * **TDEOC**: terminations ascend `β(s') · D(s')`, where `D` is the relative
//!   diversity of the option set at `s'`.
//!
//! `Q_U` is learned by one-step off-policy TD; `Q_Ω(s, o)` is kept equal to
//! `Σ_a π_o(a|s) Q_U(s, o, a)` for every entry touched.

use rand::Rng;
use thiserror::Error;

use crate::diversity::{augment, pseudo_reward, BonusSpec, DiversityTracker, Tau};
use crate::gridworld::{ActionId, Grid, StateId};
use crate::option_model::{OptionModel, ValueMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("learning rate `{0}` must be positive and finite")]
    BadRate(&'static str),
    #[error("OC does not augment the reward")]
    OcAugments,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    /// `Q_U` step size.
    pub critic: f64,
    pub intra_option: f64,
    pub termination: f64,
}

impl LearningRates {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            critic: 0.5,
            intra_option: 1e-2,
            termination: match algorithm {
                Algorithm::Tdeoc => 5e-2,
                Algorithm::Oc | Algorithm::Deoc => 1e-1,
            },
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        for (name, v) in [
            ("critic", self.critic),
            ("intra_option", self.intra_option),
            ("termination", self.termination),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LearnerError::BadRate(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Oc,
    Deoc,
    Tdeoc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Oc => "oc",
            Algorithm::Deoc => "deoc",
            Algorithm::Tdeoc => "tdeoc",
        }
    }

    pub fn uses_bonus(self) -> bool {
        !matches!(self, Algorithm::Oc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmVariant {
    pub algorithm: Algorithm,
    pub tau: Tau,
    pub bonus: BonusSpec,
    pub augment_reward: bool,
}

impl AlgorithmVariant {
    pub fn oc() -> Self {
        Self {
            algorithm: Algorithm::Oc,
            tau: Tau::ZERO,
            bonus: BonusSpec::default(),
            augment_reward: false,
        }
    }

    pub fn deoc(tau: Tau) -> Self {
        Self {
            algorithm: Algorithm::Deoc,
            tau,
            bonus: BonusSpec::default(),
            augment_reward: true,
        }
    }

    /// TDEOC without reward augmentation, as used on sparse-reward tasks.
    pub fn tdeoc() -> Self {
        Self {
            algorithm: Algorithm::Tdeoc,
            tau: Tau::ZERO,
            bonus: BonusSpec::default(),
            augment_reward: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.algorithm == Algorithm::Oc && self.augment_reward {
            return Err(LearnerError::OcAugments);
        }
        Ok(())
    }

    fn augments(&self) -> bool {
        self.augment_reward && self.algorithm.uses_bonus()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: StateId,
    pub o: usize,
    pub a: ActionId,
    pub r: f64,
    pub r_aug: f64,
    pub s_next: StateId,
    pub terminal: bool,
    /// Pseudo reward at `s_next` (0 when not computed).
    pub bonus_next: f64,
    /// Relative diversity at `s_next` (0 when not computed).
    pub d_next: f64,
}

/// One-step target for `Q_U(s, o, a)`.
pub fn q_u_target(m: &OptionModel, tr: &Transition, gamma: f64) -> f64 {
    if tr.terminal {
        return tr.r_aug;
    }
    let beta = m.termination_prob(tr.o, tr.s_next);
    let continuing = m.q_omega(tr.s_next, tr.o);
    let switching = m.option_value_v(tr.s_next);
    tr.r_aug + gamma * ((1.0 - beta) * continuing + beta * switching)
}

/// TD step on `Q_U(s, o, a)`, then refreshes `Q_Ω(s, o)`.
pub fn q_u_update(m: &mut OptionModel, tr: &Transition, gamma: f64, rates: &LearningRates) {
    let target = q_u_target(m, tr, gamma);
    let q = m.q_u_mut(tr.s, tr.o, tr.a);
    *q += rates.critic * (target - *q);
    m.refresh_option_value(tr.s, tr.o);
    debug_assert!(m.is_finite(), "non-finite critic after {tr:?}");
}

/// How the intra-option policy step is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyStep {
    /// `θ += α c (1{a} - π)`, applied directly to the logits.
    #[default]
    Logit,
    /// Exact gradient of `log π` in `θ`: the logit step divided by the temperature.
    Exact,
}

impl PolicyStep {
    pub fn name(self) -> &'static str {
        match self {
            PolicyStep::Logit => "logit",
            PolicyStep::Exact => "exact",
        }
    }
}

/// Intra-option policy update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyRule {
    pub step: PolicyStep,
    /// Use `Q_U(s, o, a) - Q_Ω(s, o)` as the critic instead of `Q_U(s, o, a)`.
    pub baseline: bool,
}

impl Default for PolicyRule {
    fn default() -> Self {
        Self {
            step: PolicyStep::Logit,
            baseline: true,
        }
    }
}

/// Likelihood-ratio step on the intra-option policy of `(o, s)` under the
/// default rule. Touches only `θ_π`.
pub fn policy_update(m: &mut OptionModel, tr: &Transition, rates: &LearningRates) {
    policy_update_with(m, tr, rates, PolicyRule::default());
}

pub fn policy_update_with(m: &mut OptionModel, tr: &Transition, rates: &LearningRates, rule: PolicyRule) {
    let mut critic = m.q_u(tr.s, tr.o, tr.a);
    if rule.baseline {
        critic -= m.q_omega(tr.s, tr.o);
    }
    if critic == 0.0 {
        return;
    }
    let probs = m.policy_dist(tr.o, tr.s).probs().to_vec();
    let scale = match rule.step {
        PolicyStep::Logit => rates.intra_option * critic,
        PolicyStep::Exact => rates.intra_option * critic / m.temperature(),
    };
    let theta = m.theta_pi_mut(tr.o, tr.s);
    for (b, (w, p)) in theta.iter_mut().zip(&probs).enumerate() {
        let indicator = if b == tr.a.0 { 1.0 } else { 0.0 };
        *w += scale * (indicator - p);
    }
    debug_assert!(m.is_finite(), "non-finite policy after {tr:?}");
}

/// `Q_Ω(s, o) - V(s)`.
pub fn advantage(m: &OptionModel, s: StateId, o: usize) -> f64 {
    m.q_omega(s, o) - m.option_value_v(s)
}

fn advantage_with(m: &OptionModel, s: StateId, o: usize, mode: ValueMode, epsilon: f64) -> f64 {
    m.q_omega(s, o) - m.state_value(s, mode, epsilon)
}

/// Option-critic termination step at `s_next` with `V = max_o Q_Ω`.
pub fn termination_update_oc(m: &mut OptionModel, tr: &Transition, rates: &LearningRates) {
    termination_update_oc_with(m, tr, rates, ValueMode::Max, 0.0);
}

pub fn termination_update_oc_with(
    m: &mut OptionModel,
    tr: &Transition,
    rates: &LearningRates,
    mode: ValueMode,
    epsilon: f64,
) {
    let adv = advantage_with(m, tr.s_next, tr.o, mode, epsilon);
    let beta = m.termination_prob(tr.o, tr.s_next);
    *m.theta_beta_mut(tr.o, tr.s_next) -= rates.termination * beta * (1.0 - beta) * adv;
    debug_assert!(m.is_finite(), "non-finite termination after {tr:?}");
}

/// Diversity-driven termination step: ascent on `β(s_next) · D(s_next)`.
pub fn termination_update_tdeoc(m: &mut OptionModel, tr: &Transition, rates: &LearningRates) {
    let beta = m.termination_prob(tr.o, tr.s_next);
    *m.theta_beta_mut(tr.o, tr.s_next) += rates.termination * beta * (1.0 - beta) * tr.d_next;
    debug_assert!(m.is_finite(), "non-finite termination after {tr:?}");
}

/// Per-episode knobs that are not algorithm hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub gamma: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    pub value_mode: ValueMode,
    pub policy_rule: PolicyRule,
    /// Apply the variant's termination update (ablation switch).
    pub update_terminations: bool,
    /// Replace every bonus sample with 0 (ablation switch).
    pub zero_bonus: bool,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: 0.05,
            max_steps: 1000,
            value_mode: ValueMode::Max,
            policy_rule: PolicyRule::default(),
            update_terminations: true,
            zero_bonus: false,
        }
    }
}

/// Everything recorded about one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: usize,
    /// Option active at each step.
    pub options: Vec<usize>,
    pub actions: Vec<ActionId>,
    pub states: Vec<StateId>,
    /// Whether the active option terminated on arrival at the next state.
    pub terminations: Vec<bool>,
    pub rewards: Vec<f64>,
    pub augmented_rewards: Vec<f64>,
    /// Goal reached, if the episode ended at one.
    pub goal: Option<StateId>,
}

impl EpisodeLog {
    pub fn option_activity(&self, n_options: usize) -> Vec<u64> {
        let mut counts = vec![0; n_options];
        for &o in &self.options {
            counts[o] += 1;
        }
        counts
    }

    pub fn termination_counts(&self, n_options: usize) -> Vec<u64> {
        let mut counts = vec![0; n_options];
        for (&o, &t) in self.options.iter().zip(&self.terminations) {
            counts[o] += u64::from(t);
        }
        counts
    }
}

/// A configured learning algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Learner {
    pub variant: AlgorithmVariant,
    pub rates: LearningRates,
    pub settings: EpisodeSettings,
}

impl Learner {
    pub fn new(variant: AlgorithmVariant, rates: LearningRates, settings: EpisodeSettings) -> Self {
        Self {
            variant,
            rates,
            settings,
        }
    }

    fn bonus<R: Rng + ?Sized>(&self, m: &OptionModel, s: StateId, rng: &mut R) -> f64 {
        if self.settings.zero_bonus {
            return 0.0;
        }
        pseudo_reward(
            m.policy_tables(),
            s,
            &self.variant.bonus,
            self.settings.epsilon,
            rng,
        )
    }

    /// Runs one episode, learning online.
    ///
    /// `rng` drives the environment and the agent's choices; `bonus_rng`
    /// only feeds pair sampling inside the pseudo reward, so ablations that
    /// change bonus computation leave trajectories untouched.
    pub fn run_episode<R: Rng + ?Sized, B: Rng + ?Sized>(
        &self,
        m: &mut OptionModel,
        grid: &Grid,
        tracker: &mut DiversityTracker,
        rng: &mut R,
        bonus_rng: &mut B,
    ) -> EpisodeLog {
        let cfg = &self.settings;
        let algorithm = self.variant.algorithm;
        let mut log = EpisodeLog::default();

        let mut s = grid.reset(rng);
        let mut o = m.select_option(s, cfg.epsilon, rng);

        for _ in 0..cfg.max_steps {
            let a = m.sample_action(o, s, rng);
            let outcome = grid.step(s, a);
            let s_next = outcome.next_state;

            let r_aug = if self.variant.augments() {
                augment(outcome.reward, self.bonus(m, s, bonus_rng), self.variant.tau)
            } else {
                outcome.reward
            };

            // Termination is sampled under the pre-update β.
            let terminated = !outcome.terminal && rng.gen::<f64>() < m.termination_prob(o, s_next);
            let next_option = if terminated {
                m.select_option(s_next, cfg.epsilon, rng)
            } else {
                o
            };

            let (bonus_next, d_next) = if algorithm == Algorithm::Tdeoc && !outcome.terminal {
                let b = self.bonus(m, s_next, bonus_rng);
                tracker.record(b);
                (b, tracker.relative_diversity(b))
            } else {
                (0.0, 0.0)
            };

            let tr = Transition {
                s,
                o,
                a,
                r: outcome.reward,
                r_aug,
                s_next,
                terminal: outcome.terminal,
                bonus_next,
                d_next,
            };
            q_u_update(m, &tr, cfg.gamma, &self.rates);
            policy_update_with(m, &tr, &self.rates, cfg.policy_rule);
            m.refresh_option_value(s, o);
            if cfg.update_terminations && !outcome.terminal {
                match algorithm {
                    Algorithm::Oc | Algorithm::Deoc => termination_update_oc_with(
                        m,
                        &tr,
                        &self.rates,
                        cfg.value_mode,
                        cfg.epsilon,
                    ),
                    Algorithm::Tdeoc => termination_update_tdeoc(m, &tr, &self.rates),
                }
            }

            log.steps += 1;
            log.options.push(o);
            log.actions.push(a);
            log.states.push(s);
            log.terminations.push(terminated);
            log.rewards.push(outcome.reward);
            log.augmented_rewards.push(r_aug);

            if outcome.terminal {
                log.goal = Some(s_next);
                break;
            }
            s = s_next;
            o = next_option;
        }
        log
    }
}
