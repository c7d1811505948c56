//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys may appear in any order;
//! `algorithm` decides the defaults of `termination_lr`, `tau` and
//! `augment_reward`, so those follow it whatever their position. Keys left
//! out take the four-rooms TDEOC defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::diversity::{BonusSpec, Tau, TrackerMode};
use crate::harness::{Environment, ExperimentConfig};
use crate::learner::{Algorithm, LearningRates, PolicyStep};
use crate::option_model::ValueMode;

/// Every accepted key, in the order [`to_config_text`] writes them.
pub const KEYS: &[&str] = &[
    "algorithm",
    "environment",
    "termination_lr",
    "intra_option_lr",
    "critic_lr",
    "discount",
    "max_steps",
    "options",
    "temperature",
    "epsilon",
    "tau",
    "augment_reward",
    "bonus_terms",
    "pair_budget",
    "symmetric_divergence",
    "episodes",
    "transfer_episode",
    "runs",
    "seed",
    "tracker",
    "buffer_capacity",
    "value_mode",
    "policy_step",
    "policy_baseline",
    "update_terminations",
    "zero_bonus",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{at}: expected `key = value`, got `{text}`")]
    Syntax { at: String, text: String },
    #[error("{at}: unknown key `{key}` in `{text}`")]
    UnknownKey { at: String, key: String, text: String },
    #[error("{at}: `{key}` given twice")]
    Duplicate { at: String, key: String },
    #[error("{at}: malformed value for `{key}` in `{text}` (expected {expected})")]
    Malformed {
        at: String,
        key: String,
        text: String,
        expected: &'static str,
    },
    #[error("{at}: `{key}` out of range in `{text}`: {reason}")]
    Range {
        at: String,
        key: String,
        text: String,
        reason: String,
    },
    #[error("inconsistent config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
struct Entry {
    at: String,
    text: String,
    value: String,
}

fn split_pair(raw: &str, sep: char, at: &str) -> Result<(String, String), ConfigError> {
    let syntax = || ConfigError::Syntax {
        at: at.to_string(),
        text: raw.to_string(),
    };
    let (k, v) = raw.split_once(sep).ok_or_else(syntax)?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(syntax());
    }
    Ok((k.to_string(), v.to_string()))
}

/// Parses `text`, then applies `overrides` (`key=value`) on top.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.split_once('#') {
            Some((head, _)) => head,
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("line {}", i + 1);
        let (key, value) = split_pair(line, '=', &at)?;
        check_key(&key, &at, raw)?;
        if entries.contains_key(&key) {
            return Err(ConfigError::Duplicate { at, key });
        }
        entries.insert(
            key,
            Entry {
                at,
                text: raw.trim().to_string(),
                value,
            },
        );
    }
    for raw in overrides {
        let at = format!("override `{raw}`");
        let (key, value) = split_pair(raw, '=', &at)?;
        check_key(&key, &at, raw)?;
        entries.insert(
            key,
            Entry {
                at,
                text: raw.clone(),
                value,
            },
        );
    }
    build(&entries)
}

fn check_key(key: &str, at: &str, text: &str) -> Result<(), ConfigError> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey {
            at: at.to_string(),
            key: key.to_string(),
            text: text.trim().to_string(),
        })
    }
}

struct Reader<'a> {
    entries: &'a BTreeMap<String, Entry>,
}

impl Reader<'_> {
    fn malformed(&self, key: &str, e: &Entry, expected: &'static str) -> ConfigError {
        ConfigError::Malformed {
            at: e.at.clone(),
            key: key.to_string(),
            text: e.text.clone(),
            expected,
        }
    }

    fn range(&self, key: &str, e: &Entry, reason: &str) -> ConfigError {
        ConfigError::Range {
            at: e.at.clone(),
            key: key.to_string(),
            text: e.text.clone(),
            reason: reason.to_string(),
        }
    }

    fn parsed<T>(
        &self,
        key: &str,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<(T, &Entry)>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => match parse(&e.value) {
                Some(v) => Ok(Some((v, e))),
                None => Err(self.malformed(key, e, expected)),
            },
        }
    }

    fn real(
        &self,
        key: &str,
        default: f64,
        ok: impl Fn(f64) -> bool,
        reason: &str,
    ) -> Result<f64, ConfigError> {
        match self.parsed(key, "a number", |v| v.parse::<f64>().ok().filter(|x| !x.is_nan()))? {
            None => Ok(default),
            Some((v, _)) if ok(v) => Ok(v),
            Some((_, e)) => Err(self.range(key, e, reason)),
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        match self.parsed(key, "a non-negative integer", |v| v.parse::<usize>().ok())? {
            None => Ok(default),
            Some((v, _)) if v >= min => Ok(v),
            Some((_, e)) => Err(self.range(key, e, &format!("must be at least {min}"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self
            .parsed(key, "true or false", |v| match v {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            })?
            .map_or(default, |(v, _)| v))
    }

    fn choice<T: Copy>(
        &self,
        key: &str,
        default: T,
        expected: &'static str,
        options: &[(&str, T)],
    ) -> Result<T, ConfigError> {
        Ok(self
            .parsed(key, expected, |v| {
                options.iter().find(|(name, _)| *name == v).map(|&(_, t)| t)
            })?
            .map_or(default, |(v, _)| v))
    }
}

const ALGORITHMS: &[(&str, Algorithm)] = &[
    ("oc", Algorithm::Oc),
    ("deoc", Algorithm::Deoc),
    ("tdeoc", Algorithm::Tdeoc),
];
const ENVIRONMENTS: &[(&str, Environment)] = &[
    ("four_rooms", Environment::FourRooms),
    ("tmaze", Environment::TMaze),
];
const TRACKERS: &[(&str, TrackerMode)] = &[
    ("moving_mean", TrackerMode::MovingMeanCenter),
    ("buffer", TrackerMode::BufferStandardize),
];
const VALUE_MODES: &[(&str, ValueMode)] = &[
    ("max", ValueMode::Max),
    ("epsilon_greedy", ValueMode::EpsilonGreedy),
];
const POLICY_STEPS: &[(&str, PolicyStep)] = &[("logit", PolicyStep::Logit), ("exact", PolicyStep::Exact)];

const TERM_DIVERGENCE: &str = "divergence";
const TERM_OPTION_ENTROPY: &str = "option_entropy";
const TERM_SELECTION_ENTROPY: &str = "selection_entropy";

fn parse_terms(value: &str) -> Option<(bool, bool, bool)> {
    let (mut div, mut opt, mut sel) = (false, false, false);
    for term in value.split(',').map(str::trim) {
        match term {
            TERM_DIVERGENCE => div = true,
            TERM_OPTION_ENTROPY => opt = true,
            TERM_SELECTION_ENTROPY => sel = true,
            "all" => (div, opt, sel) = (true, true, true),
            _ => return None,
        }
    }
    Some((div, opt, sel))
}

fn build(entries: &BTreeMap<String, Entry>) -> Result<ExperimentConfig, ConfigError> {
    let r = Reader { entries };
    let algorithm = r.choice("algorithm", Algorithm::Tdeoc, "oc, deoc or tdeoc", ALGORITHMS)?;
    let mut cfg = ExperimentConfig::four_rooms(algorithm);
    let defaults = cfg.clone();
    let positive = |x: f64| x > 0.0 && x.is_finite();

    cfg.environment = r.choice("environment", defaults.environment, "four_rooms or tmaze", ENVIRONMENTS)?;
    cfg.rates = LearningRates {
        termination: r.real("termination_lr", defaults.rates.termination, positive, "must be positive")?,
        intra_option: r.real("intra_option_lr", defaults.rates.intra_option, positive, "must be positive")?,
        critic: r.real("critic_lr", defaults.rates.critic, positive, "must be positive")?,
    };
    cfg.gamma = r.real("discount", defaults.gamma, |x| (0.0..1.0).contains(&x), "must lie in [0, 1)")?;
    cfg.max_steps = r.count("max_steps", defaults.max_steps, 1)?;
    cfg.n_options = r.count("options", defaults.n_options, 2)?;
    cfg.temperature = r.real("temperature", defaults.temperature, positive, "must be positive")?;
    cfg.epsilon = r.real("epsilon", defaults.epsilon, |x| (0.0..=1.0).contains(&x), "must lie in [0, 1]")?;
    let tau = r.real("tau", defaults.variant.tau.value(), |x| (0.0..=1.0).contains(&x), "must lie in [0, 1]")?;
    cfg.variant.tau = Tau::new(tau).expect("range checked");
    cfg.variant.augment_reward = r.flag("augment_reward", defaults.variant.augment_reward)?;

    let spec = defaults.variant.bonus;
    let (div, opt, sel) = r
        .parsed(
            "bonus_terms",
            "a comma-separated list of divergence, option_entropy, selection_entropy or all",
            parse_terms,
        )?
        .map_or(
            (spec.divergence, spec.option_entropies, spec.policy_over_options_entropy),
            |(v, _)| v,
        );
    cfg.variant.bonus = BonusSpec {
        divergence: div,
        option_entropies: opt,
        policy_over_options_entropy: sel,
        pair_budget: r.count("pair_budget", spec.pair_budget, 1)?,
        symmetric: r.flag("symmetric_divergence", spec.symmetric)?,
    };

    cfg.episodes_total = r.count("episodes", defaults.episodes_total, 1)?;
    cfg.transfer_episode = r.count("transfer_episode", defaults.transfer_episode, 0)?;
    cfg.n_runs = r.count("runs", defaults.n_runs, 1)?;
    cfg.base_seed = r
        .parsed("seed", "a non-negative integer", |v| v.parse::<u64>().ok())?
        .map_or(defaults.base_seed, |(v, _)| v);
    cfg.tracker_mode = r.choice("tracker", defaults.tracker_mode, "moving_mean or buffer", TRACKERS)?;
    cfg.buffer_capacity = r.count("buffer_capacity", defaults.buffer_capacity, 1)?;
    cfg.value_mode = r.choice("value_mode", defaults.value_mode, "max or epsilon_greedy", VALUE_MODES)?;
    cfg.policy_rule.step = r.choice("policy_step", defaults.policy_rule.step, "logit or exact", POLICY_STEPS)?;
    cfg.policy_rule.baseline = r.flag("policy_baseline", defaults.policy_rule.baseline)?;
    cfg.update_terminations = r.flag("update_terminations", defaults.update_terminations)?;
    cfg.zero_bonus = r.flag("zero_bonus", defaults.zero_bonus)?;

    if let Some(e) = entries.get("transfer_episode") {
        if cfg.transfer_episode >= cfg.episodes_total {
            return Err(r.range(
                "transfer_episode",
                e,
                &format!("must be below episodes ({})", cfg.episodes_total),
            ));
        }
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], value: T) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map(|(n, _)| *n).expect("every variant is named")
}

/// Writes every key explicitly; [`parse_config`] reads it back to an equal config.
pub fn to_config_text(cfg: &ExperimentConfig) -> String {
    let b = &cfg.variant.bonus;
    let mut terms = Vec::new();
    if b.divergence {
        terms.push(TERM_DIVERGENCE);
    }
    if b.option_entropies {
        terms.push(TERM_OPTION_ENTROPY);
    }
    if b.policy_over_options_entropy {
        terms.push(TERM_SELECTION_ENTROPY);
    }
    let values: Vec<String> = vec![
        name_of(ALGORITHMS, cfg.variant.algorithm).into(),
        name_of(ENVIRONMENTS, cfg.environment).into(),
        cfg.rates.termination.to_string(),
        cfg.rates.intra_option.to_string(),
        cfg.rates.critic.to_string(),
        cfg.gamma.to_string(),
        cfg.max_steps.to_string(),
        cfg.n_options.to_string(),
        cfg.temperature.to_string(),
        cfg.epsilon.to_string(),
        cfg.variant.tau.value().to_string(),
        cfg.variant.augment_reward.to_string(),
        terms.join(","),
        b.pair_budget.to_string(),
        b.symmetric.to_string(),
        cfg.episodes_total.to_string(),
        cfg.transfer_episode.to_string(),
        cfg.n_runs.to_string(),
        cfg.base_seed.to_string(),
        name_of(TRACKERS, cfg.tracker_mode).into(),
        cfg.buffer_capacity.to_string(),
        name_of(VALUE_MODES, cfg.value_mode).into(),
        name_of(POLICY_STEPS, cfg.policy_rule.step).into(),
        cfg.policy_rule.baseline.to_string(),
        cfg.update_terminations.to_string(),
        cfg.zero_bonus.to_string(),
    ];
    let mut out = String::new();
    for (key, value) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}
