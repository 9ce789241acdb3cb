//! CSV and state-file output.
//!
//! Numbers are written with 17 significant digits (`{:.16e}`), `.` as decimal separator and LF
//! line endings. Missing values are empty fields.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dynamics::{Trajectory, Variant};
use crate::state::StackedState;

/// Bumped whenever the trajectory header changes.
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// `iter,q_value,q_grad_norm,consensus_err,f_of_mean,mean_x_1..n,dist_to_ref` followed, with wide
/// columns, by `x_i_j` for every agent `i` and coordinate `j` and `dist_i` per agent (1-based).
pub fn trajectory_header(agents: usize, dim: usize, wide: bool) -> Vec<String> {
    let mut h: Vec<String> = ["iter", "q_value", "q_grad_norm", "consensus_err", "f_of_mean"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=dim).map(|j| format!("mean_x_{j}")));
    h.push("dist_to_ref".to_string());
    if wide {
        for i in 1..=agents {
            h.extend((1..=dim).map(|j| format!("x_{i}_{j}")));
        }
        h.extend((1..=agents).map(|i| format!("dist_{i}")));
    }
    h
}

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory<f64>, wide: bool) -> csv::Result<()> {
    let (m, n) = (traj.final_state.num_agents(), traj.final_state.dim());
    let mut w = writer(out);
    w.write_record(trajectory_header(m, n, wide))?;
    for r in &traj.records {
        let mut row = vec![
            r.iteration.to_string(),
            fmt_num(r.q_value),
            fmt_num(r.q_grad_norm),
            fmt_num(r.consensus_error),
            fmt_num(r.f_of_mean),
        ];
        row.extend(r.mean.iter().map(|&v| fmt_num(v)));
        row.push(r.mean_ref_dist.map_or(String::new(), |(d, _)| fmt_num(d)));
        if wide {
            match &r.blocks {
                Some(b) => row.extend(b.as_slice().iter().map(|&v| fmt_num(v))),
                None => row.extend(std::iter::repeat_n(String::new(), m * n)),
            }
            if r.agent_ref_dist.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), m));
            } else {
                row.extend(r.agent_ref_dist.iter().map(|&v| fmt_num(v)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_file_name(variant: Variant, seed: u64) -> String {
    format!("trajectory_{variant}_seed{seed}.csv")
}

pub fn final_state_file_name(variant: Variant, seed: u64) -> String {
    format!("final_state_{variant}_seed{seed}.csv")
}

/// One line per agent, coordinates comma-separated.
pub fn write_state(path: &Path, x: &StackedState<f64>) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for b in x.blocks() {
        let line: Vec<String> = b.iter().map(|&v| fmt_num(v)).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum StateFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Format { path: String, line: usize, reason: String },
}

/// Reads a state file written by [`write_state`]. Blank lines and `#` comments are skipped.
pub fn read_state(path: &Path) -> Result<StackedState<f64>, StateFileError> {
    let p = path.display().to_string();
    let f = File::open(path).map_err(|source| StateFileError::Io {
        path: p.clone(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| StateFileError::Io {
            path: p.clone(),
            source,
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| StateFileError::Format {
                path: p.clone(),
                line: k + 1,
                reason: e.to_string(),
            })?;
        rows.push(row);
    }
    StackedState::from_blocks(&rows).map_err(|e| StateFileError::Format {
        path: p,
        line: 0,
        reason: e.to_string(),
    })
}
