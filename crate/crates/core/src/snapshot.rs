//! Plain-text model snapshots.
//!
//! ```text
//! optdiverse-model 1
//! options 4
//! states 104
//! actions 4
//! temperature 0.001
//! theta_pi <options*states*actions values>
//! theta_beta <options*states values>
//! q_omega <states*options values>
//! q_u <states*options*actions values>
//! ```
//!
//! Values are space separated in the model's row-major layout and printed
//! in shortest round-trip form, so loading reproduces the model exactly.

use std::fmt::Write as _;

use thiserror::Error;

use crate::option_model::{ModelError, OptionModel};

const MAGIC: &str = "optdiverse-model 1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a model snapshot (missing `{MAGIC}` header)")]
    Header,
    #[error("line {line}: expected `{expected}`")]
    Field { line: usize, expected: &'static str },
    #[error("line {line}: bad number `{token}`")]
    Number { line: usize, token: String },
    #[error("`{field}` holds {got} values, expected {want}")]
    Length {
        field: &'static str,
        got: usize,
        want: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn push_row(out: &mut String, name: &str, values: &[f64]) {
    out.push_str(name);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

pub fn to_text(m: &OptionModel) -> String {
    let mut out = format!(
        "{MAGIC}\noptions {}\nstates {}\nactions {}\ntemperature {:?}\n",
        m.n_options(),
        m.n_states(),
        m.n_actions(),
        m.temperature()
    );
    push_row(&mut out, "theta_pi", m.theta_pi_table());
    push_row(&mut out, "theta_beta", m.theta_beta_table());
    push_row(&mut out, "q_omega", m.q_omega_table());
    push_row(&mut out, "q_u", m.q_u_table());
    out
}

pub fn from_text(text: &str) -> Result<OptionModel, SnapshotError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(SnapshotError::Header),
    }
    let mut field = |name: &'static str| -> Result<(usize, Vec<f64>), SnapshotError> {
        let (line, text) = lines.next().ok_or(SnapshotError::Field { line: 0, expected: name })?;
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some(name) {
            return Err(SnapshotError::Field { line, expected: name });
        }
        let values = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| SnapshotError::Number {
                    line,
                    token: t.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((line, values))
    };
    let mut dim = |name: &'static str| -> Result<usize, SnapshotError> {
        let (line, v) = field(name)?;
        match v.as_slice() {
            [x] if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
            _ => Err(SnapshotError::Field { line, expected: name }),
        }
    };
    let n_options = dim("options")?;
    let n_states = dim("states")?;
    let n_actions = dim("actions")?;
    let (line, t) = field("temperature")?;
    let temperature = match t.as_slice() {
        [x] => *x,
        _ => return Err(SnapshotError::Field { line, expected: "temperature" }),
    };
    let mut table = |name: &'static str, want: usize| -> Result<Vec<f64>, SnapshotError> {
        let (_, v) = field(name)?;
        if v.len() != want {
            return Err(SnapshotError::Length {
                field: name,
                got: v.len(),
                want,
            });
        }
        Ok(v)
    };
    let theta_pi = table("theta_pi", n_options * n_states * n_actions)?;
    let theta_beta = table("theta_beta", n_options * n_states)?;
    let q_omega = table("q_omega", n_states * n_options)?;
    let q_u = table("q_u", n_states * n_options * n_actions)?;
    Ok(OptionModel::from_parts(
        (n_options, n_states, n_actions),
        temperature,
        theta_pi,
        theta_beta,
        q_omega,
        q_u,
    )?)
}
