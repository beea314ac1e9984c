//! Plain-text inputs and outputs of the CLI subcommands.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::run::format_float;
use crate::error::{Error, Result};
use crate::models::TwinExperimentRecord;
use crate::samplers::ChainResult;
use crate::transport::CouplingMatrix;

/// Reads lines `x1,...,xd,weight`; blank lines and `#` comments are skipped.
/// Weights are normalised to sum to one.
pub fn parse_weighted_points(text: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |m: String| Error::Config { line: Some(i + 1), message: m };
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| fail(format!("'{}': {e}", f.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(fail("expected at least one coordinate and a weight".into()));
        }
        let (w, x) = values.split_last().expect("non-empty");
        if !(*w >= 0.0 && w.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(fail("values must be finite and weights nonnegative".into()));
        }
        if let Some(first) = points.first() {
            if first.len() != x.len() {
                return Err(fail(format!("expected {} coordinates, got {}", first.len(), x.len())));
            }
        }
        points.push(x.to_vec());
        weights.push(*w);
    }
    if points.is_empty() {
        return Err(Error::config("no points given"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::config("weights sum to zero"));
    }
    let d = points[0].len();
    let cols: Vec<DVector<f64>> = points.into_iter().map(DVector::from_vec).collect();
    let mat = DMatrix::from_columns(&cols);
    debug_assert_eq!(mat.nrows(), d);
    Ok((mat, DVector::from_iterator(weights.len(), weights.iter().map(|w| w / total))))
}

/// `step,time,truth_1..N,obs_1..K`; observation fields are empty between observations.
pub fn twin_csv(record: &TwinExperimentRecord) -> String {
    let n = record.truth.nrows();
    let k = record.observations.nrows();
    let mut cols = vec!["step".to_string(), "time".to_string()];
    cols.extend((1..=n).map(|i| format!("truth_{i}")));
    cols.extend((1..=k).map(|i| format!("obs_{i}")));
    let mut out = cols.join(",");
    out.push('\n');
    for step in 0..=record.n_steps() {
        let mut fields = vec![step.to_string(), format_float(record.times[step])];
        fields.extend(record.truth.column(step).iter().map(|v| format_float(*v)));
        match record.observation_at(step) {
            Some(y) => fields.extend(y.iter().map(|v| format_float(*v))),
            None => fields.extend(std::iter::repeat(String::new()).take(k)),
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Nonzero entries as `row,col,mass`.
pub fn coupling_csv(coupling: &CouplingMatrix) -> String {
    let mut out = String::from("row,col,mass\n");
    let t = coupling.entries();
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            if t[(i, j)] > 0.0 {
                let _ = writeln!(out, "{},{},{}", i + 1, j + 1, format_float(t[(i, j)]));
            }
        }
    }
    out
}

/// Raw chain, one state per line.
pub fn chain_csv(chain: &ChainResult) -> String {
    let d = chain.samples.nrows();
    let mut out = (1..=d).map(|k| format!("x_{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for col in chain.samples.column_iter() {
        let _ = writeln!(out, "{}", col.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_points_and_normalises() {
        let (x, w) = parse_weighted_points("# pts\n0.0, 1.0, 2\n1.0,1.0,2\n\n2.0,0.5,4\n").unwrap();
        assert_eq!(x.shape(), (2, 3));
        assert_eq!(w.as_slice(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn reports_bad_lines() {
        match parse_weighted_points("0,1\n0,x\n").unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, Some(2)),
            e => panic!("{e}"),
        }
        assert!(parse_weighted_points("0,1\n0,0,1\n").unwrap_err().is_config());
        assert!(parse_weighted_points("0,-1\n").unwrap_err().is_config());
    }
}
