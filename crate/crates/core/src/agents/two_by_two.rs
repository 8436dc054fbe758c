//! Two-agent scalar game without equilibria: `J_1 = −x_1² + 2x_1x_2`,
//! `J_2 = x_2 − 2x_1x_2`, `x_i ∈ [0, 1]`.

use crate::error::{check_dim, Error, Result};

use super::{AgentOracle, Reaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoByTwoGame {
    NoEquilibrium,
}

pub fn no_equilibrium_cost(index: usize, x: &[f64]) -> f64 {
    match index {
        0 => -x[0] * x[0] + 2.0 * x[0] * x[1],
        _ => x[1] - 2.0 * x[0] * x[1],
    }
}

/// Best responses of the game. Ties at `0.5` go to the smaller action.
pub fn two_by_two_react(game: TwoByTwoGame, index: usize, x_minus_i: &[f64]) -> Result<f64> {
    check_dim("two-agent opponent", 1, x_minus_i.len())?;
    let other = x_minus_i[0];
    match (game, index) {
        // concave in x_1: compare the endpoints 0 and 1 (costs 0 and 2x_2 − 1)
        (TwoByTwoGame::NoEquilibrium, 0) => Ok(if 2.0 * other - 1.0 < 0.0 { 1.0 } else { 0.0 }),
        // linear in x_2 with slope 1 − 2x_1
        (TwoByTwoGame::NoEquilibrium, 1) => Ok(if 1.0 - 2.0 * other < 0.0 { 1.0 } else { 0.0 }),
        _ => Err(Error::InvalidInput(format!("agent {index} out of range"))),
    }
}

#[derive(Debug, Clone)]
pub struct NoEquilibriumAgent {
    pub index: usize,
}

impl AgentOracle for NoEquilibriumAgent {
    fn output_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction> {
        two_by_two_react(TwoByTwoGame::NoEquilibrium, self.index, x_minus_i)
            .map(|v| Reaction::clean(vec![v]))
    }
}
