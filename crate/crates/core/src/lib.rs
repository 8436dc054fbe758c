//! Active learning of stationary action profiles.
//!
//! An external observer repeatedly proposes a collective profile `x̂`, records
//! how every agent reacts, fits affine surrogates of the private
//! action-reaction mappings and proposes the minimum-norm fixed point of the
//! surrogates as the next query.

pub mod agents;
pub mod engine;
pub mod error;
pub mod games;
pub mod oracle;
pub mod profiles;
pub mod query;
pub mod surrogate;

pub use agents::{AgentOracle, Distress, Reaction};
pub use engine::{
    run, stats, sweep, IterationRecord, Phase, RunConfig, RunTrace, Stats, SweepCell, Verdict,
};
pub use error::{Error, Result};
pub use games::{Game, GameKind, GameSpec};
pub use oracle::{brute_force_fixed_points, extragradient, stationarity_residual, PseudoGradientGame};
pub use profiles::{CollectiveProfile, Partition, Polytope, PolytopeSpec, TOL_FEAS, TOL_KKT};
pub use query::{build_query_problem, lambda_min, min_norm_query, qp_solve, solve_linear_fixed_point};
pub use surrogate::{batch_refit, residual_mse, AffineSurrogate, KalmanBank, SampleLog};
