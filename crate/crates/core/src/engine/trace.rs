use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Active,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Active => "active",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// One-based iteration index.
    pub k: usize,
    pub phase: Phase,
    pub x_hat: Vec<f64>,
    pub x: Vec<f64>,
    pub residual: f64,
    /// Per-agent parameter vectors after this iteration's update.
    pub theta: Vec<Vec<f64>>,
    pub d_theta: Vec<f64>,
    pub lambda_min_h: Option<f64>,
    pub flags: Vec<String>,
}

impl IterationRecord {
    pub fn theta_norms(&self) -> Vec<f64> {
        self.theta.iter().map(|t| norm(t)).collect()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖₂`, evaluated in index order.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    fn header(&self) -> Vec<String> {
        let Some(first) = self.records.first() else {
            return vec!["k".into(), "phase".into()];
        };
        let n = first.x_hat.len();
        let agents = first.theta.len();
        let mut h = vec!["k".to_string(), "phase".to_string()];
        h.extend((1..=n).map(|j| format!("x_hat_{j}")));
        h.extend((1..=n).map(|j| format!("x_{j}")));
        h.push("residual".into());
        h.extend((1..=agents).map(|i| format!("theta_norm_{i}")));
        h.extend((1..=agents).map(|i| format!("d_theta_{i}")));
        h.push("lambda_min_H".into());
        h.push("flags".into());
        for (i, t) in first.theta.iter().enumerate() {
            h.extend((1..=t.len()).map(|j| format!("theta_{}_{j}", i + 1)));
        }
        h
    }

    /// Writes the trace as CSV. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(io_err)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string(), r.phase.to_string()];
            row.extend(r.x_hat.iter().map(f64::to_string));
            row.extend(r.x.iter().map(f64::to_string));
            row.push(r.residual.to_string());
            row.extend(r.theta_norms().iter().map(f64::to_string));
            row.extend(r.d_theta.iter().map(f64::to_string));
            row.push(r.lambda_min_h.map(|v| v.to_string()).unwrap_or_default());
            row.push(r.flags.join(";"));
            row.extend(r.theta.iter().flatten().map(f64::to_string));
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }

    /// Parses a trace written by [`RunTrace::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers().map_err(io_err)?.iter().map(str::to_string).collect();
        let cols = |prefix: &str| -> Vec<usize> {
            header
                .iter()
                .enumerate()
                .filter(|(_, h)| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
                })
                .map(|(i, _)| i)
                .collect()
        };
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("trace is missing column {name}")))
        };
        let x_hat_cols = cols("x_hat_");
        let x_cols = cols("x_");
        let d_theta_cols = cols("d_theta_");
        let (k_col, phase_col, res_col) = (find("k")?, find("phase")?, find("residual")?);
        let (lam_col, flag_col) = (find("lambda_min_H")?, find("flags")?);
        let mut theta_cols: Vec<Vec<usize>> = vec![Vec::new(); d_theta_cols.len()];
        for (c, h) in header.iter().enumerate() {
            let Some(rest) = h.strip_prefix("theta_") else { continue };
            let mut parts = rest.split('_');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else { continue };
            if let (Ok(i), Ok(_)) = (a.parse::<usize>(), b.parse::<usize>()) {
                if (1..=theta_cols.len()).contains(&i) {
                    theta_cols[i - 1].push(c);
                }
            }
        }

        let mut records = Vec::new();
        for row in rd.records() {
            let row = row.map_err(io_err)?;
            let num = |c: usize| -> Result<f64> {
                row[c]
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("column {}: {e}", header[c])))
            };
            let many = |cs: &[usize]| cs.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>();
            let phase = match &row[phase_col] {
                "init" => Phase::Init,
                "active" => Phase::Active,
                other => return Err(Error::InvalidInput(format!("unknown phase {other}"))),
            };
            records.push(IterationRecord {
                k: row[k_col]
                    .parse()
                    .map_err(|e| Error::InvalidInput(format!("column k: {e}")))?,
                phase,
                x_hat: many(&x_hat_cols)?,
                x: many(&x_cols)?,
                residual: num(res_col)?,
                theta: theta_cols.iter().map(|cs| many(cs)).collect::<Result<_>>()?,
                d_theta: many(&d_theta_cols)?,
                lambda_min_h: if row[lam_col].is_empty() { None } else { Some(num(lam_col)?) },
                flags: row[flag_col]
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            });
        }
        Ok(Self { records })
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub converged: bool,
    pub iterations_used: usize,
    pub converged_at: Option<usize>,
    pub final_residual: f64,
    pub final_stationarity: f64,
    pub lambda_min_h: Option<f64>,
    pub unique_certificate: bool,
    pub final_query: Vec<f64>,
    pub replication: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize) -> IterationRecord {
        IterationRecord {
            k,
            phase: if k == 1 { Phase::Init } else { Phase::Active },
            x_hat: vec![0.1, 1.0 / 3.0],
            x: vec![0.2, -1e-300],
            residual: euclidean_distance(&[0.1, 1.0 / 3.0], &[0.2, -1e-300]),
            theta: vec![vec![1.0, 2.0], vec![std::f64::consts::PI, 4.0]],
            d_theta: vec![0.0, 1e-17],
            lambda_min_h: if k == 1 { None } else { Some(0.123456789) },
            flags: if k == 2 { vec!["a1:clipped".into(), "tikhonov".into()] } else { vec![] },
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = RunTrace {
            records: vec![record(1), record(2), record(3)],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "k,phase,x_hat_1,x_hat_2,x_1,x_2,residual,theta_norm_1,theta_norm_2,d_theta_1,d_theta_2,lambda_min_H,flags,theta_1_1"
        ));
        let back = RunTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn residual_column_matches_recomputation() {
        let r = record(2);
        assert_eq!(r.residual, euclidean_distance(&r.x_hat, &r.x));
    }
}
