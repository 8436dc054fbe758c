use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::games::Game;
use crate::oracle::stationarity_residual;
use crate::profiles::{CollectiveProfile, TOL_FEAS};
use crate::query::{build_query_problem, lambda_min};
use crate::surrogate::AffineSurrogate;

use super::{euclidean_distance, RunTrace, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub consistent: bool,
    pub converged: bool,
    pub stationarity: f64,
    pub recorded_stationarity: f64,
    pub lambda_min_h: Option<f64>,
    pub recorded_lambda_min_h: Option<f64>,
    pub notes: Vec<String>,
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= 1e-14 + rel * a.abs().max(b.abs())
}

/// Recomputes the a-posteriori checks of a recorded run against live agents.
pub fn verify_trace(game: &Game, tol_conv: f64, trace: &RunTrace, verdict: &Verdict) -> Result<VerifyReport> {
    let last = trace
        .last()
        .ok_or_else(|| Error::InvalidInput("trace has no rows".into()))?;
    let p = &game.partition;
    check_dim("trace profile", p.total(), last.x_hat.len())?;
    let mut notes = Vec::new();

    for r in &trace.records {
        if r.residual != euclidean_distance(&r.x_hat, &r.x) {
            notes.push(format!("row {}: residual column does not match the stored profiles", r.k));
        }
        if game.omega.max_violation(&r.x_hat)? > TOL_FEAS {
            notes.push(format!("row {}: query outside the feasible set", r.k));
        }
    }
    if trace.len() != verdict.iterations_used {
        notes.push("trace length differs from the recorded iteration count".into());
    }
    if verdict.final_query != last.x_hat {
        notes.push("final query differs from the last trace row".into());
    }

    let profile = CollectiveProfile::new(last.x_hat.clone(), p.clone())?;
    let stationarity = stationarity_residual(&profile, &game.agents)?;
    if !close(stationarity, verdict.final_stationarity, 1e-9) {
        notes.push(format!(
            "stationarity residual {stationarity:e} differs from recorded {:e}",
            verdict.final_stationarity
        ));
    }

    let mut lam = None;
    if verdict.converged {
        if stationarity > 10.0 * tol_conv {
            notes.push(format!("converged verdict but stationarity residual is {stationarity:e}"));
        }
        let surrogates = last
            .theta
            .iter()
            .enumerate()
            .map(|(i, t)| AffineSurrogate::from_theta(p.size(i), p.complement_size(i), t))
            .collect::<Result<Vec<_>>>()?;
        let q = build_query_problem(&surrogates, p, &game.omega)?;
        let l = lambda_min(&q.h);
        lam = Some(l);
        // the recorded value belongs to the last refit, which used these θ
        match last.lambda_min_h {
            Some(rec) if close(l, rec, 1e-8) => {}
            Some(rec) => notes.push(format!("lambda_min(H) {l:e} differs from recorded {rec:e}")),
            None => notes.push("converged run without a recorded certificate".into()),
        }
        if l <= 0.0 {
            notes.push("certificate fails: lambda_min(H) is not positive".into());
        }
    }
    let consistent = notes.is_empty();
    if !verdict.converged {
        notes.push("no certificate: run did not converge".into());
    }
    Ok(VerifyReport {
        consistent,
        converged: verdict.converged,
        stationarity,
        recorded_stationarity: verdict.final_stationarity,
        lambda_min_h: lam,
        recorded_lambda_min_h: last.lambda_min_h,
        notes,
    })
}
