//! Fast self-checks of the update rules and information measures.
//!
//! Every check draws its own random instances from a seeded generator and
//! compares library output against a numerical reference (central finite
//! differences, Pinsker's bound, direct summation). The update functions
//! under test are taken from an [`Updates`] table so a deliberately broken
//! rule can be fed in and caught.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diversity::{
    augment, cross_entropy, entropy, DiversityTracker, Tau, TrackerMode,
};
use crate::gridworld::{build_four_rooms, ActionId, StateId};
use crate::learner::{
    policy_update_with, q_u_target, q_u_update, termination_update_oc, termination_update_tdeoc,
    AlgorithmVariant, EpisodeSettings, Learner, LearningRates, PolicyRule, PolicyStep, Transition,
};
use crate::option_model::{log_softmax, sigmoid, ActionDistribution, OptionModel};

pub type PolicyFn = fn(&mut OptionModel, &Transition, &LearningRates, PolicyRule);
pub type TerminationFn = fn(&mut OptionModel, &Transition, &LearningRates);

/// Update rules exercised by [`run_checks`].
#[derive(Clone, Copy)]
pub struct Updates {
    pub policy: PolicyFn,
    pub termination_oc: TerminationFn,
    pub termination_tdeoc: TerminationFn,
}

impl Default for Updates {
    fn default() -> Self {
        Self {
            policy: policy_update_with,
            termination_oc: termination_update_oc,
            termination_tdeoc: termination_update_tdeoc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const MODELS: usize = 100;
const GIBBS_PAIRS: usize = 10_000;
const FD_STEP: f64 = 1e-4;
const FD_TOLERANCE: f64 = 1e-6;

fn result(name: &'static str, failure: Option<String>, ok: String) -> CheckResult {
    match failure {
        Some(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
        None => CheckResult {
            name,
            passed: true,
            detail: ok,
        },
    }
}

fn transition(s: usize, o: usize, a: usize, s_next: usize) -> Transition {
    Transition {
        s: StateId(s),
        o,
        a: ActionId(a),
        r: 0.0,
        r_aug: 0.0,
        s_next: StateId(s_next),
        terminal: false,
        bonus_next: 0.0,
        d_next: 0.0,
    }
}

fn rates(rng: &mut ChaCha8Rng) -> LearningRates {
    LearningRates {
        critic: rng.gen_range(0.05..1.0),
        intra_option: rng.gen_range(1e-3..0.5),
        termination: rng.gen_range(1e-3..0.5),
    }
}

fn random_model(rng: &mut ChaCha8Rng) -> OptionModel {
    let n_options = rng.gen_range(2..6);
    let n_states = rng.gen_range(2..6);
    let temperature = rng.gen_range(0.05..3.0);
    let mut m = OptionModel::new(n_options, n_states, 4, temperature).expect("valid dims");
    for o in 0..n_options {
        for s in 0..n_states {
            for w in m.theta_pi_mut(o, StateId(s)) {
                *w = rng.gen_range(-2.0..2.0);
            }
            *m.theta_beta_mut(o, StateId(s)) = rng.gen_range(-4.0..4.0);
        }
    }
    for s in 0..n_states {
        for o in 0..n_options {
            for a in 0..4 {
                *m.q_u_mut(StateId(s), o, ActionId(a)) = rng.gen_range(-1.0..2.0);
            }
            m.refresh_option_value(StateId(s), o);
        }
    }
    m
}

/// The policy step should move the logits along `c ∇θ log π(a)`, times the
/// temperature for the logit rule, where `c` is the critic of the rule.
fn policy_gradient(updates: &Updates, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..MODELS {
        let m = random_model(rng);
        let (o, s, a) = (rng.gen_range(0..m.n_options()), rng.gen_range(0..m.n_states()), rng.gen_range(0..4));
        let tr = transition(s, o, a, s);
        let r = rates(rng);
        let logits = m.theta_pi(o, StateId(s)).to_vec();
        let t = m.temperature();
        for rule in [
            PolicyRule { step: PolicyStep::Exact, baseline: false },
            PolicyRule { step: PolicyStep::Exact, baseline: true },
            PolicyRule { step: PolicyStep::Logit, baseline: true },
            PolicyRule { step: PolicyStep::Logit, baseline: false },
        ] {
            let critic = m.q_u(StateId(s), o, ActionId(a)) - if rule.baseline { m.q_omega(StateId(s), o) } else { 0.0 };
            let scale = r.intra_option * critic * if rule.step == PolicyStep::Logit { t } else { 1.0 };
            let mut updated = m.clone();
            (updates.policy)(&mut updated, &tr, &r, rule);
            // Step scaled to the temperature keeps truncation error uniform.
            let h = FD_STEP * t;
            let (mut diff, mut norm) = (0.0f64, 0.0f64);
            for k in 0..4 {
                let f = |delta: f64| {
                    let mut z = logits.clone();
                    z[k] += delta;
                    log_softmax(&z, t)[a]
                };
                let want = scale * (f(h) - f(-h)) / (2.0 * h);
                let step = updated.theta_pi(o, StateId(s))[k] - logits[k];
                diff += (step - want).powi(2);
                norm += want.powi(2);
            }
            // ‖∇ log π‖ ≤ √2 / t, so saturated policies are measured against
            // a floor at that scale instead of their vanishing gradient. Steps
            // are read back as differences of θ, so they are only resolved to
            // about 1e-9 |θ| at this tolerance.
            let theta_max = logits.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            let floor = (1e-3 * scale.abs() / t).max(1e-9 * theta_max);
            let err = diff.sqrt() / norm.sqrt().max(floor).max(1e-300);
            worst = worst.max(err);
            if err > FD_TOLERANCE {
                return result(
                    "policy_gradient",
                    Some(format!("model {i}, {rule:?}: relative error {err:e}")),
                    String::new(),
                );
            }
            if updated.theta_beta_table() != m.theta_beta_table() || updated.q_u_table() != m.q_u_table() {
                return result("policy_gradient", Some(format!("model {i}: policy step touched other tables")), String::new());
            }
        }
    }
    result("policy_gradient", None, format!("{MODELS} models, worst relative error {worst:.1e}"))
}

fn termination_gradient(
    name: &'static str,
    update: TerminationFn,
    rng: &mut ChaCha8Rng,
    expected_step: impl Fn(&OptionModel, &Transition, &LearningRates, f64) -> f64,
) -> CheckResult {
    let mut worst = 0.0f64;
    for i in 0..MODELS {
        let m = random_model(rng);
        let (o, s, s_next) = (rng.gen_range(0..m.n_options()), rng.gen_range(0..m.n_states()), rng.gen_range(0..m.n_states()));
        let mut tr = transition(s, o, 0, s_next);
        tr.d_next = rng.gen_range(-3.0..3.0);
        let r = rates(rng);
        let theta = m.theta_beta(o, StateId(s_next));
        let dbeta = (sigmoid(theta + 1e-5) - sigmoid(theta - 1e-5)) / 2e-5;
        let want = expected_step(&m, &tr, &r, dbeta);
        let mut updated = m.clone();
        update(&mut updated, &tr, &r);
        let step = updated.theta_beta(o, StateId(s_next)) - theta;
        let err = (step - want).abs() / want.abs().max(1e-12);
        if (step - want).abs() > 1e-15 {
            worst = worst.max(err);
        }
        if err > FD_TOLERANCE && (step - want).abs() > 1e-15 {
            return result(name, Some(format!("model {i}: step {step:e} vs {want:e}")), String::new());
        }
        if updated.theta_pi_table() != m.theta_pi_table() || updated.q_u_table() != m.q_u_table() {
            return result(name, Some(format!("model {i}: termination step touched other tables")), String::new());
        }
    }
    result(name, None, format!("{MODELS} models, worst relative error {worst:.1e}"))
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> ActionDistribution {
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    ActionDistribution::softmax(&logits, rng.gen_range(0.1..3.0))
}

fn gibbs(rng: &mut ChaCha8Rng) -> CheckResult {
    for i in 0..GIBBS_PAIRS {
        let n = rng.gen_range(2..9);
        let p = random_dist(rng, n);
        let q = random_dist(rng, n);
        let hp = entropy(&p);
        let gap = cross_entropy(&p, &q).expect("same length") - hp;
        let l1: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
        // Pinsker: KL ≥ ½ ‖p - q‖₁², so a vanishing gap forces p = q.
        if gap < 0.5 * l1 * l1 - 1e-12 {
            return result("gibbs_inequality", Some(format!("pair {i}: gap {gap:e}, l1 {l1:e}")), String::new());
        }
        let self_gap = cross_entropy(&p, &p).expect("same length") - hp;
        if self_gap.abs() > 1e-9 {
            return result("gibbs_inequality", Some(format!("pair {i}: H(p;p) - H(p) = {self_gap:e}")), String::new());
        }
    }
    result("gibbs_inequality", None, format!("{GIBBS_PAIRS} pairs"))
}

fn entropy_bounds(rng: &mut ChaCha8Rng) -> CheckResult {
    for i in 0..GIBBS_PAIRS {
        let n = rng.gen_range(1..12);
        let p = random_dist(rng, n);
        let h = entropy(&p);
        if !(h >= -1e-12 && h <= (n as f64).ln() + 1e-12) {
            return result("entropy_bounds", Some(format!("sample {i}: H = {h} for n = {n}")), String::new());
        }
    }
    let one_hot = ActionDistribution::new(vec![0.0, 1.0, 0.0]).expect("normalised");
    let uniform = ActionDistribution::uniform(5);
    if entropy(&one_hot) != 0.0 || (entropy(&uniform) - 5f64.ln()).abs() > 1e-12 {
        return result("entropy_bounds", Some("extremes off".into()), String::new());
    }
    result("entropy_bounds", None, format!("{GIBBS_PAIRS} samples"))
}

fn standardization(rng: &mut ChaCha8Rng) -> CheckResult {
    for trial in 0..50 {
        let capacity = rng.gen_range(2..200);
        let mut tracker = DiversityTracker::new(TrackerMode::BufferStandardize, capacity);
        let extra = rng.gen_range(0..300);
        let loc = rng.gen_range(-5.0..5.0);
        let spread = rng.gen_range(0.01..10.0);
        for _ in 0..capacity + extra {
            tracker.record(loc + spread * rng.gen::<f64>());
        }
        let z: Vec<f64> = tracker.buffer().iter().map(|&b| tracker.relative_diversity(b)).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        if tracker.len() != capacity || mean.abs() > 1e-9 || (sd - 1.0).abs() > 1e-9 {
            return result(
                "standardization",
                Some(format!("trial {trial}: len {}, mean {mean:e}, std {sd}", tracker.len())),
                String::new(),
            );
        }
    }
    result("standardization", None, "50 buffers".into())
}

fn fixed_point(rng: &mut ChaCha8Rng) -> CheckResult {
    for i in 0..MODELS {
        let mut m = random_model(rng);
        let s = rng.gen_range(0..m.n_states());
        let s_next = (s + 1 + rng.gen_range(0..m.n_states() - 1)) % m.n_states();
        let mut tr = transition(s, rng.gen_range(0..m.n_options()), rng.gen_range(0..4), s_next);
        tr.r_aug = rng.gen_range(-1.0..1.0);
        tr.terminal = rng.gen_bool(0.2);
        let gamma = rng.gen_range(0.0..1.0);
        let target = q_u_target(&m, &tr, gamma);
        *m.q_u_mut(tr.s, tr.o, tr.a) = target;
        m.refresh_option_value(tr.s, tr.o);
        let before = m.clone();
        q_u_update(&mut m, &tr, gamma, &rates(rng));
        if m != before {
            return result("q_update_fixed_point", Some(format!("model {i} moved at its target")), String::new());
        }
    }
    result("q_update_fixed_point", None, format!("{MODELS} models"))
}

fn tau_zero(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..GIBBS_PAIRS {
        let r: f64 = rng.gen_range(-10.0..10.0);
        let b: f64 = rng.gen_range(-10.0..10.0);
        if augment(r, b, Tau::ZERO).to_bits() != r.to_bits() {
            return result("tau_zero_identity", Some(format!("augment({r}, {b}, 0) != {r}")), String::new());
        }
    }
    result("tau_zero_identity", None, format!("{GIBBS_PAIRS} rewards"))
}

fn variant_reduction(seed: u64) -> CheckResult {
    let grid = build_four_rooms();
    let settings = EpisodeSettings {
        update_terminations: false,
        zero_bonus: true,
        max_steps: 200,
        ..Default::default()
    };
    let rates = LearningRates::for_algorithm(crate::learner::Algorithm::Tdeoc);
    let run = |variant: AlgorithmVariant| {
        let learner = Learner::new(variant, rates, settings);
        let mut m = OptionModel::new(4, grid.n_states(), 4, 1e-3).expect("valid dims");
        let mut tracker = DiversityTracker::new(TrackerMode::MovingMeanCenter, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut brng = ChaCha8Rng::seed_from_u64(seed);
        brng.set_stream(1);
        let logs: Vec<_> = (0..10)
            .map(|_| learner.run_episode(&mut m, &grid, &mut tracker, &mut rng, &mut brng))
            .collect();
        (logs, m)
    };
    let oc = run(AlgorithmVariant::oc());
    let td = run(AlgorithmVariant::tdeoc());
    let failure = (oc != td).then(|| "OC and TDEOC diverged with terminations frozen and bonus zeroed".to_string());
    result("variant_reduction", failure, "10 episodes identical".into())
}

/// Runs every check with the given update rules.
pub fn run_checks(updates: &Updates, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        policy_gradient(updates, &mut rng),
        termination_gradient("termination_gradient_oc", updates.termination_oc, &mut rng, |m, tr, r, dbeta| {
            let adv = m.q_omega(tr.s_next, tr.o)
                - m.q_omega_row(tr.s_next).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            -r.termination * dbeta * adv
        }),
        termination_gradient("termination_gradient_tdeoc", updates.termination_tdeoc, &mut rng, |_, tr, r, dbeta| {
            r.termination * dbeta * tr.d_next
        }),
        gibbs(&mut rng),
        entropy_bounds(&mut rng),
        standardization(&mut rng),
        fixed_point(&mut rng),
        tau_zero(&mut rng),
        variant_reduction(seed),
    ]
}
