//! Nash game with `J_i = N(1 + (i−1)/2) x_i − x_i (60N − 1ᵀx)` on `[7, 100]^N`.

use crate::error::{check_dim, Error, Result};

use super::{AgentOracle, Reaction};

pub const LOWER: f64 = 7.0;
pub const UPPER: f64 = 100.0;

/// Linear cost coefficient `N(1 + (i−1)/2)` for the zero-based agent index.
fn linear_coefficient(index: usize, n_agents: usize) -> f64 {
    n_agents as f64 * (1.0 + index as f64 / 2.0)
}

/// Cost of agent `index` (zero-based) at the full profile `x`.
pub fn quadratic_game_cost(index: usize, x: &[f64]) -> f64 {
    let n = x.len();
    let total: f64 = x.iter().sum();
    linear_coefficient(index, n) * x[index] - x[index] * (60.0 * n as f64 - total)
}

/// Box-constrained minimizer of the strictly convex scalar cost:
/// `clip((60N − a_i − Σ_{j≠i} x_j)/2, 7, 100)`.
pub fn quadratic_game_react(index: usize, n_agents: usize, x_minus_i: &[f64]) -> Result<f64> {
    check_dim("quadratic game opponents", n_agents - 1, x_minus_i.len())?;
    if index >= n_agents {
        return Err(Error::InvalidInput(format!("agent {index} out of range")));
    }
    let others: f64 = x_minus_i.iter().sum();
    let n = n_agents as f64;
    let unclipped = (60.0 * n - linear_coefficient(index, n_agents) - others) / 2.0;
    Ok(unclipped.clamp(LOWER, UPPER))
}

#[derive(Debug, Clone)]
pub struct QuadraticGameAgent {
    pub index: usize,
    pub n_agents: usize,
}

impl AgentOracle for QuadraticGameAgent {
    fn output_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        self.n_agents - 1
    }

    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction> {
        quadratic_game_react(self.index, self.n_agents, x_minus_i).map(|v| Reaction::clean(vec![v]))
    }
}
