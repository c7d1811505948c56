//! Multi-run experiment orchestration.
//!
//! A run trains a fresh model for `episodes_total` episodes. At
//! `transfer_episode` the environment changes (four-rooms: the goal moves to
//! a random cell of the lower-right room; T-maze: the most visited goal is
//! removed) while learning continues on the same model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::diversity::{DiversityTracker, TrackerMode};
use crate::gridworld::{build_four_rooms, build_tmaze_grid, Grid, GridError, StateId};
use crate::learner::{Algorithm, AlgorithmVariant, EpisodeSettings, Learner, LearningRates, PolicyRule};
use crate::option_model::{ModelError, OptionModel, ValueMode};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no run logs to aggregate")]
    NoLogs,
    #[error("run logs disagree on episode count ({0} vs {1})")]
    EpisodeMismatch(usize, usize),
    #[error("window [{start}, {end}) runs past the {len} logged episodes")]
    Window { start: usize, end: usize, len: usize },
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Environment {
    #[default]
    FourRooms,
    TMaze,
}

impl Environment {
    pub fn name(self) -> &'static str {
        match self {
            Environment::FourRooms => "four_rooms",
            Environment::TMaze => "tmaze",
        }
    }

    pub fn build(self) -> Grid {
        match self {
            Environment::FourRooms => build_four_rooms(),
            Environment::TMaze => build_tmaze_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: AlgorithmVariant,
    pub rates: LearningRates,
    pub gamma: f64,
    pub epsilon: f64,
    pub temperature: f64,
    pub n_options: usize,
    pub max_steps: usize,
    pub episodes_total: usize,
    pub transfer_episode: usize,
    pub n_runs: usize,
    pub base_seed: u64,
    pub environment: Environment,
    pub tracker_mode: TrackerMode,
    pub buffer_capacity: usize,
    pub value_mode: ValueMode,
    pub policy_rule: PolicyRule,
    pub update_terminations: bool,
    pub zero_bonus: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::four_rooms(Algorithm::Tdeoc)
    }
}

impl ExperimentConfig {
    /// The tabular four-rooms transfer setup for `algorithm`.
    pub fn four_rooms(algorithm: Algorithm) -> Self {
        let variant = match algorithm {
            Algorithm::Oc => AlgorithmVariant::oc(),
            Algorithm::Deoc => AlgorithmVariant::deoc(crate::diversity::Tau::new(0.2).unwrap()),
            Algorithm::Tdeoc => AlgorithmVariant::tdeoc(),
        };
        Self {
            variant,
            rates: LearningRates::for_algorithm(algorithm),
            gamma: 0.99,
            epsilon: 0.05,
            temperature: 1e-3,
            n_options: 4,
            max_steps: 1000,
            episodes_total: 2000,
            transfer_episode: 1000,
            n_runs: 50,
            base_seed: 0,
            environment: Environment::FourRooms,
            tracker_mode: TrackerMode::MovingMeanCenter,
            buffer_capacity: 1024,
            value_mode: ValueMode::Max,
            policy_rule: PolicyRule::default(),
            update_terminations: true,
            zero_bonus: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if let Err(e) = self.variant.validate() {
            return fail(e.to_string());
        }
        if let Err(e) = self.variant.bonus.validate() {
            return fail(e.to_string());
        }
        if let Err(e) = self.rates.validate() {
            return fail(e.to_string());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("discount must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.n_options < 2 {
            return fail(format!("need at least 2 options, got {}", self.n_options));
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if self.transfer_episode >= self.episodes_total {
            return fail(format!(
                "transfer_episode ({}) must be below episodes ({})",
                self.transfer_episode, self.episodes_total
            ));
        }
        if self.n_runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.buffer_capacity == 0 {
            return fail("buffer_capacity must be positive".into());
        }
        Ok(())
    }

    pub fn seed_for_run(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }

    fn learner(&self) -> Learner {
        Learner::new(
            self.variant,
            self.rates,
            EpisodeSettings {
                gamma: self.gamma,
                epsilon: self.epsilon,
                max_steps: self.max_steps,
                value_mode: self.value_mode,
                policy_rule: self.policy_rule,
                update_terminations: self.update_terminations,
                zero_bonus: self.zero_bonus,
            },
        )
    }
}

/// Per-run record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub seed: u64,
    pub steps_per_episode: Vec<usize>,
    /// `[episode][option]` steps during which the option was active.
    pub option_activity: Vec<Vec<u64>>,
    /// `[episode][option]` terminations of the option.
    pub termination_events: Vec<Vec<u64>>,
    /// Termination parameters just before the environment change, `[o][s]`.
    pub transfer_theta_beta_snapshot: Vec<f64>,
    pub final_theta_beta_snapshot: Vec<f64>,
    /// Goals in force after the environment change.
    pub post_transfer_goals: Vec<StateId>,
    pub final_model: OptionModel,
}

/// Trains one run. `run` only selects the seed.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunLog, HarnessError> {
    let seed = cfg.seed_for_run(run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bonus_rng = ChaCha8Rng::seed_from_u64(seed);
    bonus_rng.set_stream(1);

    let mut grid = cfg.environment.build();
    let mut model = OptionModel::new(cfg.n_options, grid.n_states(), 4, cfg.temperature)?;
    let mut tracker = DiversityTracker::new(cfg.tracker_mode, cfg.buffer_capacity);
    let learner = cfg.learner();

    let mut goal_visits = vec![0u64; grid.goals().len()];
    let mut log = RunLog {
        run,
        seed,
        steps_per_episode: Vec::with_capacity(cfg.episodes_total),
        option_activity: Vec::with_capacity(cfg.episodes_total),
        termination_events: Vec::with_capacity(cfg.episodes_total),
        transfer_theta_beta_snapshot: Vec::new(),
        final_theta_beta_snapshot: Vec::new(),
        post_transfer_goals: Vec::new(),
        final_model: model.clone(),
    };

    for episode in 0..cfg.episodes_total {
        if episode == cfg.transfer_episode {
            log.transfer_theta_beta_snapshot = model.theta_beta_table().to_vec();
            grid = match cfg.environment {
                Environment::FourRooms => {
                    let room = grid.lower_right_room();
                    let cells: Vec<_> = room.iter().map(|&s| grid.cell(s)).collect();
                    grid.relocate_goal(|c| cells.contains(&c), &mut rng)?
                }
                Environment::TMaze => remove_goal(&grid, &goal_visits)?,
            };
            log.post_transfer_goals = grid.goals().to_vec();
        }
        let ep = learner.run_episode(&mut model, &grid, &mut tracker, &mut rng, &mut bonus_rng);
        if episode < cfg.transfer_episode {
            if let Some(goal) = ep.goal {
                let k = grid.goals().iter().position(|&g| g == goal).expect("goal of this grid");
                goal_visits[k] += 1;
            }
        }
        log.steps_per_episode.push(ep.steps);
        log.option_activity.push(ep.option_activity(cfg.n_options));
        log.termination_events.push(ep.termination_counts(cfg.n_options));
    }

    log.final_theta_beta_snapshot = model.theta_beta_table().to_vec();
    log.final_model = model;
    Ok(log)
}

/// Threads for run-level parallelism from `OPTDIVERSE_THREADS`
/// (unset: rayon's default; `0`: sequential).
pub fn threads_from_env() -> Option<usize> {
    std::env::var("OPTDIVERSE_THREADS").ok()?.trim().parse().ok()
}

/// Runs every seed of the experiment. Output is ordered by run index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunLog>, HarnessError> {
    run_experiment_with_threads(cfg, threads_from_env())
}

pub fn run_experiment_with_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Vec<RunLog>, HarnessError> {
    cfg.validate()?;
    match threads {
        Some(0) => (0..cfg.n_runs).map(|r| run_single(cfg, r)).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
            pool.install(|| (0..cfg.n_runs).into_par_iter().map(|r| run_single(cfg, r)).collect())
        }
        None => (0..cfg.n_runs).into_par_iter().map(|r| run_single(cfg, r)).collect(),
    }
}

/// Drops the goal with the most visits; ties remove the lower index.
pub fn remove_goal(grid: &Grid, visit_counts: &[u64]) -> Result<Grid, HarnessError> {
    if grid.goals().len() < 2 {
        return Err(GridError::TooFewGoals(grid.goals().len()).into());
    }
    let mut most = 0;
    for (i, &v) in visit_counts.iter().enumerate() {
        if v > visit_counts[most] {
            most = i;
        }
    }
    Ok(grid.without_goal(most)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub std: Vec<f64>,
    pub n_runs: usize,
}

pub fn aggregate(logs: &[RunLog]) -> Result<AggregateCurve, HarnessError> {
    let first = logs.first().ok_or(HarnessError::NoLogs)?;
    let episodes = first.steps_per_episode.len();
    if let Some(bad) = logs.iter().find(|l| l.steps_per_episode.len() != episodes) {
        return Err(HarnessError::EpisodeMismatch(episodes, bad.steps_per_episode.len()));
    }
    let n = logs.len() as f64;
    let mut mean = Vec::with_capacity(episodes);
    let mut std = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let m = logs.iter().map(|l| l.steps_per_episode[e] as f64).sum::<f64>() / n;
        let var = logs
            .iter()
            .map(|l| (l.steps_per_episode[e] as f64 - m).powi(2))
            .sum::<f64>()
            / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(AggregateCurve {
        mean,
        std,
        n_runs: logs.len(),
    })
}

/// Mean of `curve.mean` over `[transfer_episode, transfer_episode + window)`.
pub fn recovery_metric(
    curve: &AggregateCurve,
    transfer_episode: usize,
    window: usize,
) -> Result<f64, HarnessError> {
    window_mean(&curve.mean, transfer_episode, window)
}

/// Mean of `values[start..start + window]`.
pub fn window_mean(values: &[f64], start: usize, window: usize) -> Result<f64, HarnessError> {
    let end = start + window;
    if window == 0 || end > values.len() {
        return Err(HarnessError::Window {
            start,
            end,
            len: values.len(),
        });
    }
    Ok(values[start..end].iter().sum::<f64>() / window as f64)
}

/// Value written at wall cells of a heatmap.
pub const WALL_SENTINEL: f64 = -1.0;

/// `[option][row][col]` termination probabilities; walls hold [`WALL_SENTINEL`].
pub fn termination_heatmap(m: &OptionModel, grid: &Grid) -> Vec<Vec<Vec<f64>>> {
    (0..m.n_options())
        .map(|o| {
            (0..grid.height())
                .map(|r| {
                    (0..grid.width())
                        .map(|c| match grid.state_at((r, c)) {
                            Some(s) => m.termination_prob(o, s),
                            None => WALL_SENTINEL,
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Element-wise mean of several heatmaps of the same shape.
pub fn mean_heatmap(maps: &[Vec<Vec<Vec<f64>>>]) -> Option<Vec<Vec<Vec<f64>>>> {
    let first = maps.first()?;
    let n = maps.len() as f64;
    let mut out = first.clone();
    for (o, plane) in out.iter_mut().enumerate() {
        for (r, row) in plane.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if *v != WALL_SENTINEL {
                    *v = maps.iter().map(|m| m[o][r][c]).sum::<f64>() / n;
                }
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::build_tmaze_grid;

    fn fake_log(steps: Vec<usize>) -> RunLog {
        RunLog {
            run: 0,
            seed: 0,
            option_activity: steps.iter().map(|&s| vec![s as u64, 0]).collect(),
            termination_events: steps.iter().map(|_| vec![0, 0]).collect(),
            steps_per_episode: steps,
            transfer_theta_beta_snapshot: vec![],
            final_theta_beta_snapshot: vec![],
            post_transfer_goals: vec![],
            final_model: OptionModel::new(2, 1, 2, 1.0).unwrap(),
        }
    }

    fn small(algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            n_runs: 3,
            episodes_total: 12,
            transfer_episode: 8,
            max_steps: 200,
            ..ExperimentConfig::four_rooms(algorithm)
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let curve = aggregate(&[fake_log(vec![10, 4]), fake_log(vec![20, 4])]).unwrap();
        assert_eq!(curve.mean, vec![15.0, 4.0]);
        assert_eq!(curve.std, vec![5.0, 0.0]);
        assert_eq!(curve.n_runs, 2);
        assert!(matches!(aggregate(&[]), Err(HarnessError::NoLogs)));
        assert!(matches!(
            aggregate(&[fake_log(vec![1]), fake_log(vec![1, 2])]),
            Err(HarnessError::EpisodeMismatch(1, 2))
        ));
    }

    #[test]
    fn aggregate_mean_of_means() {
        let logs = vec![fake_log(vec![3, 9, 12]), fake_log(vec![5, 1, 7]), fake_log(vec![8, 8, 2])];
        let curve = aggregate(&logs).unwrap();
        let grand: f64 = logs.iter().flat_map(|l| &l.steps_per_episode).sum::<usize>() as f64 / 9.0;
        assert!((curve.mean.iter().sum::<f64>() / 3.0 - grand).abs() < 1e-12);
    }

    #[test]
    fn recovery_metric_window() {
        let curve = AggregateCurve {
            mean: vec![9.0, 1.0, 2.0, 6.0, 4.0],
            std: vec![0.0; 5],
            n_runs: 1,
        };
        assert_eq!(recovery_metric(&curve, 1, 1).unwrap(), 1.0);
        let brute = (1.0 + 2.0 + 6.0) / 3.0;
        assert!((recovery_metric(&curve, 1, 3).unwrap() - brute).abs() < 1e-15);
        assert!(recovery_metric(&curve, 3, 3).is_err());
        let flat = AggregateCurve {
            mean: vec![7.5; 10],
            std: vec![0.0; 10],
            n_runs: 1,
        };
        assert_eq!(recovery_metric(&flat, 2, 5).unwrap(), 7.5);
    }

    #[test]
    fn remove_goal_rules() {
        let g = build_tmaze_grid();
        let left = g.goals()[0];
        let right = g.goals()[1];
        assert_eq!(remove_goal(&g, &[10, 3]).unwrap().goals(), &[right]);
        assert_eq!(remove_goal(&g, &[5, 5]).unwrap().goals(), &[right]);
        assert_eq!(remove_goal(&g, &[1, 4]).unwrap().goals(), &[left]);
        let single = remove_goal(&g, &[1, 0]).unwrap();
        assert!(remove_goal(&single, &[1]).is_err());
        let near = single.state_at((1, 6)).unwrap();
        let out = single.step(near, crate::gridworld::ActionId::RIGHT);
        assert!(out.terminal && out.reward == 1.0);
    }

    #[test]
    fn heatmap_of_fresh_model() {
        let grid = build_four_rooms();
        let m = OptionModel::new(2, grid.n_states(), 4, 1e-3).unwrap();
        let maps = termination_heatmap(&m, &grid);
        assert_eq!(maps.len(), 2);
        for plane in &maps {
            for (r, row) in plane.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    if grid.is_wall((r, c)) {
                        assert_eq!(v, WALL_SENTINEL);
                    } else {
                        assert_eq!(v, 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn heatmap_matches_termination_prob() {
        let grid = build_four_rooms();
        let mut m = OptionModel::new(2, grid.n_states(), 4, 1e-3).unwrap();
        let s = grid.state_at((3, 6)).unwrap();
        *m.theta_beta_mut(1, s) = 2.0;
        let maps = termination_heatmap(&m, &grid);
        assert_eq!(maps[1][3][6], m.termination_prob(1, s));
        assert!(maps[1][3][6] > 0.0 && maps[1][3][6] < 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(Algorithm::Tdeoc);
        assert!(cfg.validate().is_ok());
        cfg.transfer_episode = cfg.episodes_total;
        assert!(cfg.validate().is_err());
        let mut cfg = small(Algorithm::Oc);
        cfg.variant.augment_reward = true;
        assert!(cfg.validate().is_err());
        let mut cfg = small(Algorithm::Oc);
        cfg.gamma = 1.0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn runs_are_deterministic_and_order_independent() {
        let cfg = small(Algorithm::Tdeoc);
        let a = run_experiment_with_threads(&cfg, Some(0)).unwrap();
        let b = run_experiment_with_threads(&cfg, Some(3)).unwrap();
        assert_eq!(a, b);
        let reversed: Vec<RunLog> = (0..cfg.n_runs).rev().map(|r| run_single(&cfg, r).unwrap()).collect();
        for log in reversed {
            assert_eq!(log, a[log.run]);
        }
    }

    #[test]
    fn activity_is_conserved_and_goal_moves_into_lower_right_room() {
        for algorithm in [Algorithm::Oc, Algorithm::Deoc, Algorithm::Tdeoc] {
            let cfg = small(algorithm);
            let grid = build_four_rooms();
            let room = grid.lower_right_room();
            for log in run_experiment(&cfg).unwrap() {
                assert_eq!(log.steps_per_episode.len(), cfg.episodes_total);
                for (e, steps) in log.steps_per_episode.iter().enumerate() {
                    assert!(*steps <= cfg.max_steps);
                    assert_eq!(log.option_activity[e].iter().sum::<u64>(), *steps as u64);
                }
                assert_eq!(log.post_transfer_goals.len(), 1);
                assert!(room.contains(&log.post_transfer_goals[0]));
                assert!(log.final_model.is_finite());
            }
        }
    }

    #[test]
    fn last_episode_transfer() {
        let cfg = ExperimentConfig {
            transfer_episode: 11,
            ..small(Algorithm::Oc)
        };
        let logs = run_experiment(&cfg).unwrap();
        for log in &logs {
            assert_eq!(log.steps_per_episode.len() - cfg.transfer_episode, 1);
            assert!(!log.transfer_theta_beta_snapshot.is_empty());
        }
    }

    #[test]
    fn tmaze_removes_a_goal() {
        let cfg = ExperimentConfig {
            environment: Environment::TMaze,
            ..small(Algorithm::Tdeoc)
        };
        for log in run_experiment(&cfg).unwrap() {
            assert_eq!(log.post_transfer_goals.len(), 1);
        }
    }
}
