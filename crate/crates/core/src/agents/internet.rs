//! Internet switching game: `J_i = −(x_i / 1ᵀx)(1 − 1ᵀx)` with the shared
//! constraint `1ᵀx <= 1`.

use crate::error::{check_dim, check_finite, Error, Result};

use super::{minimize_scalar, AgentOracle, Distress, Reaction};

pub fn internet_cost(index: usize, x: &[f64]) -> f64 {
    let total: f64 = x.iter().sum();
    -(x[index] / total) * (1.0 - total)
}

/// Best response given the opponents' total `s` and the agent's own bounds.
///
/// The reaction minimizes `−x(1 − x − s)/(x + s)` over `[lo, min(hi, 1 − s)]`.
/// When that interval is empty the lower bound is returned with
/// [`Distress::EmptyInterval`].
pub fn internet_gnep_react(others_total: f64, lo: f64, hi: f64) -> Result<Reaction> {
    check_finite("internet opponents", &[others_total, lo, hi])?;
    let s = others_total;
    let upper = hi.min(1.0 - s);
    if upper < lo {
        return Ok(Reaction {
            action: vec![lo],
            distress: Some(Distress::EmptyInterval),
        });
    }
    if lo + s <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "internet cost undefined: lower bound {lo} with opponents' total {s}"
        )));
    }
    // −x(1 − x − s)/(x + s) = x − 1 + s/(x + s)
    let f = |x: f64| -x * (1.0 - x - s) / (x + s);
    let df = |x: f64| 1.0 - s / (x + s).powi(2);
    let d2f = |x: f64| 2.0 * s / (x + s).powi(3);
    Ok(Reaction::clean(vec![minimize_scalar(f, df, d2f, lo, upper)]))
}

#[derive(Debug, Clone)]
pub struct InternetAgent {
    pub index: usize,
    pub n_agents: usize,
    pub lower: f64,
    pub upper: f64,
}

impl AgentOracle for InternetAgent {
    fn output_dim(&self) -> usize {
        1
    }

    fn input_dim(&self) -> usize {
        self.n_agents - 1
    }

    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction> {
        check_dim("internet opponents", self.n_agents - 1, x_minus_i.len())?;
        internet_gnep_react(x_minus_i.iter().sum(), self.lower, self.upper)
    }
}
