//! Generic GNEP agent with quadratic cost `J_i(x) = ½xᵀQ_i x + q_iᵀx`,
//! minimized over `x_i` subject to the shared polytope.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::profiles::{Partition, Polytope, PolytopeSpec, TOL_FEAS};
use crate::query::qp_solve;

use super::{AgentOracle, Reaction};

/// Cost data of one agent over the full profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpAgentCost {
    #[serde(rename = "Q")]
    pub q_matrix: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

/// Game data as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpGnepSpec {
    pub sizes: Vec<usize>,
    pub agents: Vec<QpAgentCost>,
    pub omega: PolytopeSpec,
}

impl QpGnepSpec {
    pub fn build(&self) -> Result<(Partition, Polytope, Vec<QpGnepAgent>)> {
        let partition = Partition::new(self.sizes.clone())?;
        let omega = Polytope::try_from(self.omega.clone())?;
        let n = partition.total();
        check_dim("qp_gnep polytope", n, omega.dim())?;
        check_dim("qp_gnep agent count", partition.n_agents(), self.agents.len())?;
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, cost)| {
                check_dim("qp_gnep Q rows", n, cost.q_matrix.len())?;
                check_dim("qp_gnep q", n, cost.q.len())?;
                for row in &cost.q_matrix {
                    check_dim("qp_gnep Q cols", n, row.len())?;
                }
                let q = DMatrix::from_fn(n, n, |r, c| cost.q_matrix[r][c]);
                QpGnepAgent::new(i, partition.clone(), omega.clone(), q, DVector::from_vec(cost.q.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((partition, omega, agents))
    }
}

#[derive(Debug, Clone)]
pub struct QpGnepAgent {
    index: usize,
    partition: Partition,
    omega: Polytope,
    q_matrix: DMatrix<f64>,
    q: DVector<f64>,
}

impl QpGnepAgent {
    pub fn new(
        index: usize,
        partition: Partition,
        omega: Polytope,
        q_matrix: DMatrix<f64>,
        q: DVector<f64>,
    ) -> Result<Self> {
        let n = partition.total();
        check_dim("qp_gnep Q", n, q_matrix.nrows())?;
        check_dim("qp_gnep Q", n, q_matrix.ncols())?;
        check_dim("qp_gnep q", n, q.len())?;
        let q_matrix = (&q_matrix + q_matrix.transpose()) * 0.5;
        let own = partition.block_range(index);
        let block = q_matrix.view((own.start, own.start), (own.len(), own.len())).into_owned();
        if block.cholesky().is_none() {
            return Err(Error::InvalidInput(format!(
                "agent {index}: own block of Q is not positive definite"
            )));
        }
        Ok(Self {
            index,
            partition,
            omega,
            q_matrix,
            q,
        })
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.q_matrix * &x)) + self.q.dot(&x)
    }

    /// `∇_{x_i} J_i(x)`.
    pub fn partial_gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let grad = &self.q_matrix * x + &self.q;
        grad.as_slice()[self.partition.block_range(self.index)].to_vec()
    }
}

/// Unique minimizer of `x_i ↦ J_i(x_i, x_{-i})` over
/// `{x_i : (x_i, x_{-i}) ∈ Ω}`.
pub fn qp_gnep_react(agent: &QpGnepAgent, x_minus_i: &[f64]) -> Result<Vec<f64>> {
    let p = &agent.partition;
    let i = agent.index;
    check_dim("qp_gnep opponents", p.complement_size(i), x_minus_i.len())?;
    let own = p.block_range(i);
    let others = p.complement_indices(i);
    let n_own = own.len();

    let h = agent.q_matrix.view((own.start, own.start), (n_own, n_own)).into_owned();
    let mut g = DVector::from_iterator(n_own, agent.q.as_slice()[own.clone()].iter().copied());
    for (r, gr) in own.clone().zip(g.iter_mut()) {
        *gr += others
            .iter()
            .zip(x_minus_i)
            .map(|(&c, v)| agent.q_matrix[(r, c)] * v)
            .sum::<f64>();
    }

    // restrict the shared rows to x_i
    let a = agent.omega.ineq_matrix();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for r in 0..a.nrows() {
        let fixed: f64 = others.iter().zip(x_minus_i).map(|(&c, v)| a[(r, c)] * v).sum();
        let residual_rhs = agent.omega.ineq_rhs()[r] - fixed;
        let coeffs: Vec<f64> = own.clone().map(|c| a[(r, c)]).collect();
        if coeffs.iter().all(|v| *v == 0.0) {
            if residual_rhs < -TOL_FEAS {
                return Err(Error::EmptyReactionSet { agent: i });
            }
            continue;
        }
        rows.push(coeffs);
        rhs.push(residual_rhs);
    }
    let local = Polytope::new(
        agent.omega.lower()[own.clone()].to_vec(),
        agent.omega.upper()[own.clone()].to_vec(),
        DMatrix::from_fn(rows.len(), n_own, |r, c| rows[r][c]),
        rhs,
    )?;
    match qp_solve(&h, &g, &local, 0.0) {
        Ok(sol) => Ok(sol.x.as_slice().to_vec()),
        Err(Error::EmptyFeasibleSet) => Err(Error::EmptyReactionSet { agent: i }),
        Err(e) => Err(e),
    }
}

impl AgentOracle for QpGnepAgent {
    fn output_dim(&self) -> usize {
        self.partition.size(self.index)
    }

    fn input_dim(&self) -> usize {
        self.partition.complement_size(self.index)
    }

    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction> {
        qp_gnep_react(self, x_minus_i).map(Reaction::clean)
    }
}
