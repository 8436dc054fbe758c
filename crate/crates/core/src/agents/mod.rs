//! The private side of the interaction: agents' action-reaction mappings.

mod internet;
pub mod lqr;
mod qp_gnep;
pub mod quadratic;
mod scalar_min;
mod two_by_two;

use std::fmt;

use crate::error::Result;

pub use internet::{internet_cost, internet_gnep_react, InternetAgent};
pub use lqr::{dare_solve, lqr_react, random_lqr_instance, LqrAgent, LqrInstance};
pub use qp_gnep::{qp_gnep_react, QpAgentCost, QpGnepAgent, QpGnepSpec};
pub use quadratic::{quadratic_game_cost, quadratic_game_react, QuadraticGameAgent};
pub use scalar_min::minimize_scalar;
pub use two_by_two::{no_equilibrium_cost, two_by_two_react, NoEquilibriumAgent, TwoByTwoGame};

/// Something went wrong on the agent side but a reaction was still produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distress {
    /// The agent's local feasible interval was empty given `x_{-i}`.
    EmptyInterval,
    /// No stabilizing Riccati solution existed; the reaction is a clipped
    /// last iterate.
    Unstabilizable,
    /// The reaction was clipped into the agent's box.
    Clipped,
}

impl fmt::Display for Distress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distress::EmptyInterval => "empty_interval",
            Distress::Unstabilizable => "unstabilizable",
            Distress::Clipped => "clipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub action: Vec<f64>,
    pub distress: Option<Distress>,
}

impl Reaction {
    pub fn clean(action: Vec<f64>) -> Self {
        Self {
            action,
            distress: None,
        }
    }
}

/// Opaque evaluator `x_{-i} ↦ x_i`. Implementations must be deterministic.
pub trait AgentOracle: Send + Sync {
    /// `n_i`
    fn output_dim(&self) -> usize;
    /// `n_{-i}`
    fn input_dim(&self) -> usize;
    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction>;
}
