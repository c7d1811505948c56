//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The learning criteria (1-4) share one 50-run OC experiment and one 50-run
//! TDEOC experiment on four-rooms with default settings (ε = 0.05, base seed 0).

use std::process::ExitCode;
use std::time::Instant;

use optdiverse::diversity::{augment, cross_entropy, entropy, DiversityTracker, Tau, TrackerMode};
use optdiverse::gridworld::{build_four_rooms, ActionId, StateId};
use optdiverse::harness::{
    aggregate, recovery_metric, run_experiment, run_experiment_with_threads, window_mean, ExperimentConfig, RunLog,
};
use optdiverse::learner::{
    policy_update_with, q_u_target, q_u_update, termination_update_oc, termination_update_tdeoc, Algorithm,
    AlgorithmVariant, EpisodeSettings, Learner, LearningRates, PolicyRule, PolicyStep, Transition,
};
use optdiverse::option_model::{ActionDistribution, OptionModel};
use optdiverse::report::{activity_csv, aggregate_csv, curves_csv, heatmap_files};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUNS: usize = 50;
const RECOVERY_WINDOW: usize = 50;
const REFERENCE_GAP: f64 = 70.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// Independent references used by the oracles below.

fn ref_log_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m / t + z.iter().map(|x| ((x - m) / t).exp()).sum::<f64>().ln();
    z.iter().map(|x| x / t - lse).collect()
}

fn ref_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean with the sample standard deviation.
fn standard_error(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}

fn per_run_recovery(logs: &[RunLog], transfer: usize) -> Vec<f64> {
    logs.iter()
        .map(|l| l.steps_per_episode[transfer..transfer + RECOVERY_WINDOW].iter().sum::<usize>() as f64 / RECOVERY_WINDOW as f64)
        .collect()
}

fn least_active_share(log: &RunLog, from: usize, to: usize, n_options: usize) -> f64 {
    let mut active = vec![0u64; n_options];
    for e in from..to {
        for (o, a) in log.option_activity[e].iter().enumerate() {
            active[o] += a;
        }
    }
    let total: u64 = active.iter().sum();
    *active.iter().min().unwrap() as f64 / total as f64
}

fn criterion_1(oc: &(ExperimentConfig, Vec<RunLog>), td: &(ExperimentConfig, Vec<RunLog>)) -> Outcome {
    let t = oc.0.transfer_episode;
    let pre = |logs: &[RunLog]| window_mean(&aggregate(logs).unwrap().mean, t - 100, 100).unwrap();
    let (a, b) = (pre(&oc.1), pre(&td.1));
    outcome(
        a < 100.0 && b < 100.0,
        format!("mean steps over episodes {}..{t}: OC {a:.2}, TDEOC {b:.2} (need < 100, {RUNS} runs)", t - 100),
    )
}

fn criterion_2(oc: &(ExperimentConfig, Vec<RunLog>), td: &(ExperimentConfig, Vec<RunLog>)) -> Outcome {
    let t = oc.0.transfer_episode;
    let rec_oc = recovery_metric(&aggregate(&oc.1).unwrap(), t, RECOVERY_WINDOW).unwrap();
    let rec_td = recovery_metric(&aggregate(&td.1).unwrap(), t, RECOVERY_WINDOW).unwrap();
    let (xs_oc, xs_td) = (per_run_recovery(&oc.1, t), per_run_recovery(&td.1, t));
    assert!((mean(&xs_oc) - rec_oc).abs() < 1e-9 && (mean(&xs_td) - rec_td).abs() < 1e-9);
    let pooled = (standard_error(&xs_oc).powi(2) + standard_error(&xs_td).powi(2)).sqrt();
    let gap = rec_oc - rec_td;
    outcome(
        gap > 0.0 && gap >= 0.5 * pooled,
        format!(
            "recovery over {RECOVERY_WINDOW} episodes: OC {rec_oc:.2}, TDEOC {rec_td:.2}, gap {gap:+.2} \
             (need > 0 and >= {:.2} = 0.5 pooled SE; reference gap ~{REFERENCE_GAP})",
            0.5 * pooled
        ),
    )
}

fn criterion_3(td: &(ExperimentConfig, Vec<RunLog>)) -> Outcome {
    let grid = build_four_rooms();
    let n = grid.n_states();
    let (mut hall, mut hall_n, mut other, mut other_n) = (0.0, 0usize, 0.0, 0usize);
    for log in &td.1 {
        for o in 0..td.0.n_options {
            for s in 0..n {
                let beta = ref_sigmoid(log.transfer_theta_beta_snapshot[o * n + s]);
                if grid.hallways().contains(&StateId(s)) {
                    hall += beta;
                    hall_n += 1;
                } else {
                    other += beta;
                    other_n += 1;
                }
            }
        }
    }
    assert_eq!(grid.hallways().len(), 4);
    let (h, o) = (hall / hall_n as f64, other / other_n as f64);
    outcome(
        h > o,
        format!("TDEOC mean β after {} episodes: hallways {h:.4}, other cells {o:.4} ({} runs)", td.0.transfer_episode, td.1.len()),
    )
}

fn criterion_4(oc: &(ExperimentConfig, Vec<RunLog>), td: &(ExperimentConfig, Vec<RunLog>)) -> Outcome {
    let t = oc.0.transfer_episode;
    let share = |(cfg, logs): &(ExperimentConfig, Vec<RunLog>)| {
        mean(&logs.iter().map(|l| least_active_share(l, t - 100, t, cfg.n_options)).collect::<Vec<_>>())
    };
    let (a, b) = (share(oc), share(td));
    outcome(
        b > a,
        format!("least-active option share over episodes {}..{t}: OC {a:.4}, TDEOC {b:.4} ({RUNS} runs)", t - 100),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> OptionModel {
    let n_o = rng.gen_range(2..6);
    let n_s = rng.gen_range(2..7);
    let mut m = OptionModel::new(n_o, n_s, 4, rng.gen_range(0.05..3.0)).unwrap();
    for o in 0..n_o {
        for s in 0..n_s {
            for w in m.theta_pi_mut(o, StateId(s)) {
                *w = rng.gen_range(-2.0..2.0);
            }
            *m.theta_beta_mut(o, StateId(s)) = rng.gen_range(-4.0..4.0);
        }
    }
    for s in 0..n_s {
        for o in 0..n_o {
            for a in 0..4 {
                *m.q_u_mut(StateId(s), o, ActionId(a)) = rng.gen_range(-1.0..2.0);
            }
            m.refresh_option_value(StateId(s), o);
        }
    }
    m
}

fn transition(s: usize, o: usize, a: usize, s_next: usize, d: f64) -> Transition {
    Transition {
        s: StateId(s),
        o,
        a: ActionId(a),
        r: 0.0,
        r_aug: 0.0,
        s_next: StateId(s_next),
        terminal: false,
        bonus_next: 0.0,
        d_next: d,
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1e-12);
    let (mut worst_pi, mut worst_oc, mut worst_td) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = random_model(&mut rng);
        let rates = LearningRates {
            critic: 0.5,
            intra_option: rng.gen_range(1e-3..0.5),
            termination: rng.gen_range(1e-3..0.5),
        };
        let (o, s, a) = (rng.gen_range(0..m.n_options()), rng.gen_range(0..m.n_states()), rng.gen_range(0..4));
        let s_next = rng.gen_range(0..m.n_states());
        let tr = transition(s, o, a, s_next, rng.gen_range(-3.0..3.0));

        // Policy: exact rule against FD of log π(a|s) in θ.
        let logits = m.theta_pi(o, StateId(s)).to_vec();
        let temp = m.temperature();
        let q = m.q_u(StateId(s), o, ActionId(a));
        let mut up = m.clone();
        policy_update_with(&mut up, &tr, &rates, PolicyRule { step: PolicyStep::Exact, baseline: false });
        // Norm-wise relative error, step scaled to the temperature.
        let hp = 1e-4 * temp;
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for k in 0..4 {
            let f = |d: f64| {
                let mut z = logits.clone();
                z[k] += d;
                ref_log_softmax(&z, temp)[a]
            };
            let want = rates.intra_option * q * (f(hp) - f(-hp)) / (2.0 * hp);
            let step = up.theta_pi(o, StateId(s))[k] - logits[k];
            diff += (step - want).powi(2);
            norm += want.powi(2);
        }
        // Saturated policies have vanishing gradients; measure them against
        // 1e-3 of the natural scale |c| / t instead. Steps read back as θ
        // differences resolve only to about 1e-9 |θ|.
        let theta_max = logits.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let floor = (1e-3 * (rates.intra_option * q).abs() / temp).max(1e-9 * theta_max);
        worst_pi = worst_pi.max(diff.sqrt() / norm.sqrt().max(floor).max(1e-300));

        // Terminations: dβ/dθ by FD.
        let theta = m.theta_beta(o, StateId(s_next));
        let dbeta = (ref_sigmoid(theta + h) - ref_sigmoid(theta - h)) / (2.0 * h);
        let row = m.q_omega_row(StateId(s_next));
        let adv = row[o] - row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut up = m.clone();
        termination_update_oc(&mut up, &tr, &rates);
        let want = -rates.termination * dbeta * adv;
        let step = up.theta_beta(o, StateId(s_next)) - theta;
        if (step - want).abs() > 1e-15 {
            worst_oc = worst_oc.max(rel(step, want));
        }
        let mut up = m.clone();
        termination_update_tdeoc(&mut up, &tr, &rates);
        let want = rates.termination * dbeta * tr.d_next;
        let step = up.theta_beta(o, StateId(s_next)) - theta;
        if (step - want).abs() > 1e-15 {
            worst_td = worst_td.max(rel(step, want));
        }
    }
    let worst = worst_pi.max(worst_oc).max(worst_td);
    outcome(
        worst <= 1e-6,
        format!("100 models, worst relative error: policy {worst_pi:.1e}, OC termination {worst_oc:.1e}, TDEOC termination {worst_td:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ok = true;
    let mut min_gap = f64::INFINITY;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..9);
        let draw = |rng: &mut ChaCha8Rng| {
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            ActionDistribution::softmax(&z, rng.gen_range(0.1..3.0))
        };
        let (p, q) = (draw(&mut rng), draw(&mut rng));
        // Direct sums as the reference.
        let hp: f64 = -p.probs().iter().map(|x| x * x.ln()).sum::<f64>();
        let hpq: f64 = -p.probs().iter().zip(q.probs()).map(|(x, y)| x * y.ln()).sum::<f64>();
        let (lib_h, lib_hpq) = (entropy(&p), cross_entropy(&p, &q).unwrap());
        ok &= (lib_h - hp).abs() < 1e-9 && (lib_hpq - hpq).abs() < 1e-9;
        let l1: f64 = p.probs().iter().zip(q.probs()).map(|(x, y)| (x - y).abs()).sum();
        ok &= lib_hpq - lib_h >= 0.5 * l1 * l1 - 1e-12;
        ok &= (cross_entropy(&p, &p).unwrap() - lib_h).abs() <= 1e-9;
        ok &= lib_h >= -1e-12 && lib_h <= (n as f64).ln() + 1e-12;
        min_gap = min_gap.min(lib_hpq - lib_h);
    }
    let mut worst_std = 0.0f64;
    for _ in 0..20 {
        let cap = rng.gen_range(2..500);
        let mut tracker = DiversityTracker::new(TrackerMode::BufferStandardize, cap);
        for _ in 0..cap + rng.gen_range(0..500) {
            tracker.record(rng.gen_range(-4.0..9.0));
        }
        let z: Vec<f64> = tracker.buffer().iter().map(|&b| tracker.relative_diversity(b)).collect();
        let m = mean(&z);
        let sd = (z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        worst_std = worst_std.max(m.abs()).max((sd - 1.0).abs());
    }
    ok &= worst_std <= 1e-9;
    outcome(
        ok,
        format!("10^4 pairs, smallest H(p;q) - H(p) = {min_gap:.2e}; standardised buffers off by at most {worst_std:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fixed = true;
    for _ in 0..100 {
        let mut m = random_model(&mut rng);
        let s = rng.gen_range(0..m.n_states() - 1);
        let mut tr = transition(s, rng.gen_range(0..m.n_options()), rng.gen_range(0..4), s + 1, 0.0);
        tr.r_aug = rng.gen_range(-1.0..1.0);
        let target = q_u_target(&m, &tr, 0.99);
        *m.q_u_mut(tr.s, tr.o, tr.a) = target;
        m.refresh_option_value(tr.s, tr.o);
        let before = m.clone();
        q_u_update(&mut m, &tr, 0.99, &LearningRates::for_algorithm(Algorithm::Tdeoc));
        fixed &= m == before;
    }
    let identity = (0..10_000).all(|_| {
        let r: f64 = rng.gen_range(-5.0..5.0);
        augment(r, rng.gen_range(-5.0..5.0), Tau::ZERO).to_bits() == r.to_bits()
    });

    let grid = build_four_rooms();
    let settings = EpisodeSettings {
        update_terminations: false,
        zero_bonus: true,
        ..Default::default()
    };
    let trajectories = |variant: AlgorithmVariant| {
        let learner = Learner::new(variant, LearningRates::for_algorithm(Algorithm::Tdeoc), settings);
        let mut m = OptionModel::new(4, grid.n_states(), 4, 1e-3).unwrap();
        let mut tracker = DiversityTracker::new(TrackerMode::MovingMeanCenter, 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut brng = ChaCha8Rng::seed_from_u64(99);
        brng.set_stream(1);
        let logs: Vec<_> = (0..50)
            .map(|_| learner.run_episode(&mut m, &grid, &mut tracker, &mut rng, &mut brng))
            .collect();
        (logs, m)
    };
    let same = trajectories(AlgorithmVariant::oc()) == trajectories(AlgorithmVariant::tdeoc());
    outcome(
        fixed && identity && same,
        format!("fixed point {fixed}, τ=0 identity {identity}, OC/TDEOC trajectories identical {same}"),
    )
}

fn render(cfg: &ExperimentConfig, logs: &[RunLog]) -> Vec<(String, String)> {
    let name = cfg.variant.algorithm.name();
    let mut files = vec![
        ("curves".to_string(), curves_csv(logs, name)),
        ("aggregate".to_string(), aggregate_csv(&aggregate(logs).unwrap(), name)),
        ("activity".to_string(), activity_csv(logs)),
    ];
    files.extend(heatmap_files(logs.iter().map(|l| &l.final_model), &cfg.environment.build()));
    files
}

fn criterion_8() -> Outcome {
    let mut identical = true;
    for alg in [Algorithm::Oc, Algorithm::Deoc, Algorithm::Tdeoc] {
        let cfg = ExperimentConfig {
            n_runs: 4,
            base_seed: 123,
            episodes_total: 60,
            transfer_episode: 30,
            ..ExperimentConfig::four_rooms(alg)
        };
        let a = render(&cfg, &run_experiment_with_threads(&cfg, Some(0)).unwrap());
        let b = render(&cfg, &run_experiment_with_threads(&cfg, Some(3)).unwrap());
        let c = render(&cfg, &run_experiment_with_threads(&cfg, Some(0)).unwrap());
        identical &= a == b && a == c;
    }
    outcome(identical, "OC, DEOC and TDEOC reruns (sequential, 3 threads, sequential) give byte-identical CSVs".into())
}

fn main() -> ExitCode {
    let start = Instant::now();
    let experiment = |alg: Algorithm| {
        let cfg = ExperimentConfig {
            n_runs: RUNS,
            ..ExperimentConfig::four_rooms(alg)
        };
        let logs = run_experiment(&cfg).expect("default config is valid");
        (cfg, logs)
    };
    let oc = experiment(Algorithm::Oc);
    let td = experiment(Algorithm::Tdeoc);

    let results = [
        ("1 pre-transfer learning", criterion_1(&oc, &td)),
        ("2 transfer recovery", criterion_2(&oc, &td)),
        ("3 hallway terminations", criterion_3(&td)),
        ("4 option relevance", criterion_4(&oc, &td)),
        ("5 gradient oracles", criterion_5()),
        ("6 information-theory oracles", criterion_6()),
        ("7 fixed point and reductions", criterion_7()),
        ("8 determinism", criterion_8()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!("{} criterion {name}: {}", if r.passed { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
