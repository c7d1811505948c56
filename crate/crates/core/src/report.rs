//! CSV rendering of experiment results.
//!
//! Reals are printed in plain decimal with at least 12 significant digits;
//! lines end with `\n`.

use std::fmt::Write as _;

use crate::gridworld::Grid;
use crate::harness::{mean_heatmap, termination_heatmap, AggregateCurve, RunLog, WALL_SENTINEL};

const SIGNIFICANT: i32 = 12;

/// Fixed-point decimal with at least 12 significant digits.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", (SIGNIFICANT - 1) as usize, x);
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (SIGNIFICANT - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `episode,run,steps,variant,seed`, one row per run and episode.
pub fn curves_csv(logs: &[RunLog], variant: &str) -> String {
    let mut out = String::from("episode,run,steps,variant,seed\n");
    for log in logs {
        for (e, steps) in log.steps_per_episode.iter().enumerate() {
            let _ = writeln!(out, "{e},{},{steps},{variant},{}", log.run, log.seed);
        }
    }
    out
}

/// `episode,mean_steps,std_steps,n_runs,variant`.
pub fn aggregate_csv(curve: &AggregateCurve, variant: &str) -> String {
    let mut out = String::from("episode,mean_steps,std_steps,n_runs,variant\n");
    for (e, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
        let _ = writeln!(
            out,
            "{e},{},{},{},{variant}",
            format_real(*m),
            format_real(*s),
            curve.n_runs
        );
    }
    out
}

/// `episode,run,option,steps_active,terminations`.
pub fn activity_csv(logs: &[RunLog]) -> String {
    let mut out = String::from("episode,run,option,steps_active,terminations\n");
    for log in logs {
        for (e, (active, terms)) in log.option_activity.iter().zip(&log.termination_events).enumerate() {
            for (o, (a, t)) in active.iter().zip(terms).enumerate() {
                let _ = writeln!(out, "{e},{},{o},{a},{t}", log.run);
            }
        }
    }
    out
}

/// `row,col,beta` for one option's heatmap; walls are left out.
pub fn heatmap_csv(plane: &[Vec<f64>]) -> String {
    let mut out = String::from("row,col,beta\n");
    for (r, row) in plane.iter().enumerate() {
        for (c, &beta) in row.iter().enumerate() {
            if beta != WALL_SENTINEL {
                let _ = writeln!(out, "{r},{c},{}", format_real(beta));
            }
        }
    }
    out
}

/// One `(file name, contents)` per option: mean over runs of the final
/// termination probabilities.
pub fn heatmap_files<'a>(
    models: impl IntoIterator<Item = &'a crate::option_model::OptionModel>,
    grid: &Grid,
) -> Vec<(String, String)> {
    let maps: Vec<_> = models.into_iter().map(|m| termination_heatmap(m, grid)).collect();
    match mean_heatmap(&maps) {
        None => Vec::new(),
        Some(mean) => mean
            .iter()
            .enumerate()
            .map(|(o, plane)| (format!("heatmap_option{o}.csv"), heatmap_csv(plane)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_keep_twelve_digits() {
        assert_eq!(format_real(0.5), "0.500000000000");
        assert_eq!(format_real(123.25), "123.250000000");
        assert_eq!(format_real(0.0), "0.00000000000");
        assert_eq!(format_real(-2.0), "-2.00000000000");
        assert_eq!(format_real(1234567890123.0), "1234567890123");
        for x in [1.0 / 3.0, 0.0123456789, 987.654321, 1e-7] {
            let printed = format_real(x);
            assert!(!printed.contains('e'), "{printed}");
            let back: f64 = printed.parse().unwrap();
            assert!((back - x).abs() <= 1e-11 * x.abs(), "{printed}");
        }
    }

    #[test]
    fn heatmap_skips_walls() {
        let plane = vec![vec![WALL_SENTINEL, 0.25], vec![0.5, WALL_SENTINEL]];
        assert_eq!(
            heatmap_csv(&plane),
            "row,col,beta\n0,1,0.250000000000\n1,0,0.500000000000\n"
        );
    }
}
