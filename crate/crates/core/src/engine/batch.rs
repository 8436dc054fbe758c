use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::Game;

use super::{euclidean_distance, run_replication, RunConfig, Verdict};

/// Mean residual curve of one `(β, K_in)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub beta: f64,
    pub k_in: usize,
    /// Length `K`; runs that stopped early contribute their last residual.
    pub mean_residual: Vec<f64>,
    pub converged: usize,
    pub failed: usize,
}

/// Runs `reps` replications for every `(β, K_in)` pair. Replication `r` of
/// every cell uses the same derived seed.
pub fn sweep(
    template: &RunConfig,
    game: &Game,
    betas: &[f64],
    k_ins: &[usize],
    reps: usize,
) -> Result<Vec<SweepCell>> {
    if betas.is_empty() || k_ins.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let mut configs = Vec::new();
    for &beta in betas {
        for &k_in in k_ins {
            let cfg = RunConfig {
                beta,
                k_in,
                ..template.clone()
            };
            cfg.validate()?;
            configs.push(cfg);
        }
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..reps as u64).map(move |r| (c, r)))
        .collect();
    let k = template.k;
    let outcomes: Vec<Option<(Vec<f64>, bool)>> = jobs
        .par_iter()
        .map(|&(c, rep)| match run_replication(&configs[c], game, rep) {
            Ok((trace, verdict)) => {
                let mut curve = trace.residuals();
                let last = *curve.last().unwrap_or(&f64::NAN);
                curve.resize(k, last);
                Some((curve, verdict.converged))
            }
            Err(abort) => {
                log::warn!("sweep cell {c} replication {rep}: {abort}");
                None
            }
        })
        .collect();

    Ok(configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let runs = &outcomes[c * reps..(c + 1) * reps];
            let ok: Vec<&(Vec<f64>, bool)> = runs.iter().flatten().collect();
            let mean_residual = (0..k)
                .map(|t| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|(curve, _)| curve[t]).sum::<f64>() / ok.len() as f64
                    }
                })
                .collect();
            SweepCell {
                beta: cfg.beta,
                k_in: cfg.k_in,
                mean_residual,
                converged: ok.iter().filter(|(_, c)| *c).count(),
                failed: reps - ok.len(),
            }
        })
        .collect())
}

/// Aggregate over independent replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub reps: usize,
    pub converged: usize,
    pub failed: usize,
    pub percent_converged: f64,
    /// Minimum of `λ_min(H)` over convergent runs.
    pub min_lambda_min: Option<f64>,
    pub all_lambda_positive: bool,
    /// Whether every convergent run ended within `1e−4` of the first one.
    pub same_profile: Option<bool>,
    pub max_profile_spread: Option<f64>,
    pub max_stationarity: Option<f64>,
    /// Largest closed-loop spectral radius over convergent LQR runs.
    pub max_closed_loop_radius: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

pub const SAME_PROFILE_TOL: f64 = 1e-4;

pub fn stats(cfg: &RunConfig, game: &Game, reps: usize) -> Result<Stats> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    cfg.validate()?;
    let outcomes: Vec<Option<Verdict>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| match run_replication(cfg, game, rep) {
            Ok((_, v)) => Some(v),
            Err(abort) => {
                log::warn!("replication {rep}: {abort}");
                None
            }
        })
        .collect();
    let verdicts: Vec<Verdict> = outcomes.into_iter().flatten().collect();
    let failed = reps - verdicts.len();
    let good: Vec<&Verdict> = verdicts.iter().filter(|v| v.converged).collect();

    let min_lambda_min = good
        .iter()
        .filter_map(|v| v.lambda_min_h)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let all_lambda_positive = good.iter().all(|v| v.lambda_min_h.is_some_and(|l| l > 0.0));
    let max_profile_spread = good.first().map(|first| {
        good.iter()
            .map(|v| euclidean_distance(&v.final_query, &first.final_query))
            .fold(0.0, f64::max)
    });
    let max_stationarity = good
        .iter()
        .map(|v| v.final_stationarity)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let max_closed_loop_radius = match &game.lqr {
        Some(inst) if !good.is_empty() => {
            let mut worst = 0.0_f64;
            for v in &good {
                worst = worst.max(inst.closed_loop_radius(&v.final_query)?);
            }
            Some(worst)
        }
        _ => None,
    };
    Ok(Stats {
        reps,
        converged: good.len(),
        failed,
        percent_converged: 100.0 * good.len() as f64 / reps as f64,
        min_lambda_min,
        all_lambda_positive,
        same_profile: max_profile_spread.map(|s| s <= SAME_PROFILE_TOL),
        max_profile_spread,
        max_stationarity,
        max_closed_loop_radius,
        verdicts,
    })
}
