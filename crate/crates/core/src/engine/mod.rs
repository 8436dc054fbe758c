//! The learning loop: passive random initialization followed by active
//! refit / query / react iterations.

mod batch;
mod config;
mod trace;
mod verify;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::games::Game;
use crate::oracle::stationarity_residual;
use crate::profiles::{CollectiveProfile, TOL_FEAS};
use crate::query::{build_query_problem, min_norm_query, QueryResult};
use crate::surrogate::{batch_refit, AffineSurrogate, KalmanBank, SampleLog};

pub use batch::{stats, sweep, Stats, SweepCell};
pub use config::{k_in_from_fraction, Estimator, ExperimentConfig, RangeSpec, RunConfig, SweepSpec};
pub use trace::{euclidean_distance, IterationRecord, Phase, RunTrace, Verdict};
pub use verify::{verify_trace, VerifyReport};

/// A run stopped by an error, with everything recorded up to that point.
#[derive(Debug, Clone)]
pub struct RunAbort {
    pub error: Error,
    pub trace: RunTrace,
}

impl fmt::Display for RunAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted after {} iterations: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RunAbort {}

/// Generator for replication `rep` of master seed `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Mutable state of one run.
pub struct Learner<'a> {
    game: &'a Game,
    cfg: &'a RunConfig,
    rng: ChaCha8Rng,
    banks: Vec<KalmanBank>,
    logs: Vec<SampleLog>,
    estimates: Vec<AffineSurrogate>,
    pending: Option<(Vec<f64>, Vec<f64>)>,
    streak: usize,
    converged_at: Option<usize>,
    last_query: Option<QueryResult>,
    pub trace: RunTrace,
}

impl<'a> Learner<'a> {
    pub fn new(game: &'a Game, cfg: &'a RunConfig, rep: u64) -> Result<Self> {
        cfg.validate()?;
        check_dim("agent count", game.partition.n_agents(), game.agents.len())?;
        let p = &game.partition;
        let banks = (0..p.n_agents())
            .map(|i| KalmanBank::new(p.size(i), p.complement_size(i), cfg.alpha, cfg.beta))
            .collect::<Result<Vec<_>>>()?;
        let logs = (0..p.n_agents())
            .map(|i| SampleLog::new(p.size(i), p.complement_size(i)))
            .collect();
        let estimates = banks.iter().map(KalmanBank::surrogate).collect();
        Ok(Self {
            game,
            cfg,
            rng: replication_rng(cfg.seed, rep),
            banks,
            logs,
            estimates,
            pending: None,
            streak: 0,
            converged_at: None,
            last_query: None,
            trace: RunTrace::default(),
        })
    }

    pub fn banks(&self) -> &[KalmanBank] {
        &self.banks
    }

    pub fn logs(&self) -> &[SampleLog] {
        &self.logs
    }

    pub fn surrogates(&self) -> &[AffineSurrogate] {
        &self.estimates
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    fn sampling_range(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.game.partition.total();
        let (lo, hi) = match &self.cfg.range {
            Some((lo, hi)) if lo.len() == 1 => (vec![lo[0]; n], vec![hi[0]; n]),
            Some((lo, hi)) => (lo.clone(), hi.clone()),
            None => self.game.default_range(),
        };
        check_dim("sampling range", n, lo.len())?;
        check_dim("sampling range", n, hi.len())?;
        if self.game.lqr.is_none() && lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "unbounded feasible set: configure a finite sampling range".into(),
            ));
        }
        Ok((lo, hi))
    }

    /// Queries every agent at `x_hat`.
    fn react(&self, x_hat: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
        let p = &self.game.partition;
        let mut x = Vec::with_capacity(p.total());
        let mut flags = Vec::new();
        for (i, agent) in self.game.agents.iter().enumerate() {
            let reaction = agent.react(&p.complement(x_hat, i))?;
            check_dim("agent reaction", p.size(i), reaction.action.len())?;
            if let Some(d) = reaction.distress {
                flags.push(format!("a{}:{d}", i + 1));
            }
            x.extend(reaction.action);
        }
        Ok((x, flags))
    }

    /// Feeds the pair `(x̂, x)` to every agent's estimator and returns the
    /// per-agent parameter change.
    fn update(&mut self, k: usize, x_hat: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let p = &self.game.partition;
        let mut d_theta = Vec::with_capacity(p.n_agents());
        for i in 0..p.n_agents() {
            let before = self.estimates[i].theta();
            let others = p.complement(x_hat, i);
            let own = p.block(x, i).to_vec();
            self.logs[i].push(k, others.clone(), own.clone())?;
            self.estimates[i] = match self.cfg.estimator {
                Estimator::Kalman => {
                    self.banks[i].kf_step(&others, &own)?;
                    self.banks[i].surrogate()
                }
                Estimator::Batch => batch_refit(&self.logs[i], self.cfg.alpha)?,
            };
            d_theta.push(euclidean_distance(&before, &self.estimates[i].theta()));
        }
        Ok(d_theta)
    }

    fn thetas(&self) -> Vec<Vec<f64>> {
        self.estimates.iter().map(AffineSurrogate::theta).collect()
    }

    /// Runs the `K_in` passive iterations.
    pub fn init_phase(&mut self) -> Result<()> {
        let (lo, hi) = self.sampling_range()?;
        for k in 1..=self.cfg.k_in {
            let x_hat = self.game.initial_draw(&lo, &hi, &mut self.rng)?;
            let viol = self.game.omega.max_violation(&x_hat)?;
            if viol > TOL_FEAS {
                return Err(Error::InvariantViolation(format!(
                    "initial draw violates the feasible set by {viol:e}"
                )));
            }
            let (x, flags) = self.react(&x_hat)?;
            let d_theta = self.update(k, &x_hat, &x)?;
            self.trace.records.push(IterationRecord {
                k,
                phase: Phase::Init,
                residual: euclidean_distance(&x_hat, &x),
                x_hat,
                x,
                theta: self.thetas(),
                d_theta,
                lambda_min_h: None,
                flags,
            });
        }
        Ok(())
    }

    /// One active iteration: refit with the previous pair, synthesize the
    /// next query and collect the reactions.
    pub fn step(&mut self) -> Result<()> {
        let k = self.trace.len() + 1;
        let d_theta = match self.pending.take() {
            Some((x_hat, x)) => self.update(k - 1, &x_hat, &x)?,
            None => vec![0.0; self.game.partition.n_agents()],
        };
        let problem = build_query_problem(&self.estimates, &self.game.partition, &self.game.omega)?;
        let query = min_norm_query(&problem, self.cfg.eig_tol, self.cfg.tikhonov_eps)?;
        let x_hat = query.x_hat.values().to_vec();
        let (x, mut flags) = self.react(&x_hat)?;
        if !query.unique_certificate {
            flags.push("tikhonov".into());
        }
        let residual = euclidean_distance(&x_hat, &x);

        let moved = d_theta.iter().copied().fold(0.0, f64::max);
        if residual <= self.cfg.tol_conv && moved <= self.cfg.tol_theta {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= self.cfg.window && self.converged_at.is_none() {
            self.converged_at = Some(k);
        }
        if self.streak < self.cfg.window {
            self.converged_at = None;
        }

        self.trace.records.push(IterationRecord {
            k,
            phase: Phase::Active,
            x_hat: x_hat.clone(),
            x: x.clone(),
            residual,
            theta: self.thetas(),
            d_theta,
            lambda_min_h: Some(query.lambda_min_h),
            flags,
        });
        self.pending = Some((x_hat, x));
        self.last_query = Some(query);
        Ok(())
    }

    /// Builds the verdict and checks that convergence implies stationarity.
    pub fn finish(&self, rep: u64) -> Result<Verdict> {
        let last = self
            .trace
            .last()
            .ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
        let profile = CollectiveProfile::new(last.x_hat.clone(), self.game.partition.clone())?;
        let final_stationarity = stationarity_residual(&profile, &self.game.agents)?;
        let converged = self.converged();
        if converged && final_stationarity > 10.0 * self.cfg.tol_conv {
            return Err(Error::InvariantViolation(format!(
                "converged run has stationarity residual {final_stationarity:e}"
            )));
        }
        Ok(Verdict {
            converged,
            iterations_used: self.trace.len(),
            converged_at: self.converged_at,
            final_residual: last.residual,
            final_stationarity,
            lambda_min_h: self.last_query.as_ref().map(|q| q.lambda_min_h),
            unique_certificate: self.last_query.as_ref().is_some_and(|q| q.unique_certificate),
            final_query: last.x_hat.clone(),
            replication: rep,
        })
    }
}

/// Replication `rep` of a run.
pub fn run_replication(cfg: &RunConfig, game: &Game, rep: u64) -> Result<(RunTrace, Verdict), RunAbort> {
    let abort = |error, trace: &RunTrace| RunAbort {
        error,
        trace: trace.clone(),
    };
    let mut learner = Learner::new(game, cfg, rep).map_err(|e| abort(e, &RunTrace::default()))?;
    learner.init_phase().map_err(|e| abort(e, &learner.trace))?;
    while learner.trace.len() < cfg.k {
        learner.step().map_err(|e| abort(e, &learner.trace))?;
        if cfg.early_stop && learner.converged() {
            break;
        }
    }
    let verdict = learner.finish(rep).map_err(|e| abort(e, &learner.trace))?;
    log::debug!(
        "replication {rep}: converged={} after {} iterations",
        verdict.converged,
        verdict.iterations_used
    );
    Ok((learner.trace, verdict))
}

/// A single run with replication index 0.
pub fn run(cfg: &RunConfig, game: &Game) -> Result<(RunTrace, Verdict), RunAbort> {
    run_replication(cfg, game, 0)
}
