//! Trajectory CSV files: header `t,x0,...,x{n-1}` followed by any exogenous
//! constants, repeated on every row.

use std::path::Path;

use bilevel::Trajectory;
use nalgebra::DMatrix;

use crate::CliError;

pub fn write_trajectory(path: &Path, traj: &Trajectory, exogenous: &[String]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let n = traj.n_states();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend(exogenous.iter().cloned());
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    let exo: Vec<String> = exogenous
        .iter()
        .map(|name| traj.exogenous.get(name).map(|v| v.to_string()).unwrap_or_default())
        .collect();
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(t.to_string());
        row.extend((0..n).map(|i| traj.states[(i, k)].to_string()));
        row.extend(exo.iter().cloned());
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Reads one experiment. The first `n_states` columns after `t` are the
/// states; exogenous columns are found by name and must be constant. Delay
/// models take the first row as the constant history.
pub fn read_trajectory(path: &Path, n_states: usize, exogenous: &[String], delayed: bool) -> Result<Trajectory, CliError> {
    let bad = |msg: String| CliError::Usage(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("t") {
        return Err(bad("the first column must be `t`".into()));
    }
    if header.len() < 1 + n_states {
        return Err(bad(format!("expected {n_states} state columns, found {}", header.len() - 1)));
    }
    let exo_cols = exogenous
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .filter(|&c| c > n_states)
                .ok_or_else(|| bad(format!("missing exogenous column `{name}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut exo_values: Vec<Option<f64>> = vec![None; exogenous.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| -> Result<f64, CliError> {
            let s = rec.get(c).unwrap_or("").trim();
            s.parse::<f64>()
                .map_err(|_| bad(format!("row {}: cannot parse `{s}` as a number", line + 2)))
        };
        times.push(field(0)?);
        for i in 0..n_states {
            values.push(field(1 + i)?);
        }
        for (k, &c) in exo_cols.iter().enumerate() {
            let v = field(c)?;
            match exo_values[k] {
                Some(prev) if prev != v => {
                    return Err(bad(format!("exogenous `{}` changes between rows", exogenous[k])));
                }
                _ => exo_values[k] = Some(v),
            }
        }
    }
    if times.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let states = DMatrix::from_column_slice(n_states, times.len(), &values);
    let mut traj = Trajectory::new(times, states);
    if delayed {
        let first = traj.states.column(0).iter().cloned().collect();
        traj = traj.with_history(first);
    }
    for (name, v) in exogenous.iter().zip(exo_values) {
        traj = traj.with_exogenous(name, v.unwrap_or(f64::NAN));
    }
    Ok(traj)
}
