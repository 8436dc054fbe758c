//! Independent verification: extragradient reference equilibria, the
//! stationarity residual, and brute-force fixed-point scans.

use std::sync::Arc;

use crate::agents::AgentOracle;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::profiles::{CollectiveProfile, Partition, Polytope};

pub type GradientFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Stacked partial gradients `F(x) = (∇_{x_i} J_i(x))_i` over `Ω`.
#[derive(Clone)]
pub struct PseudoGradientGame {
    pub gradient: Arc<GradientFn>,
    pub omega: Polytope,
    pub lipschitz: Option<f64>,
}

impl std::fmt::Debug for PseudoGradientGame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudoGradientGame")
            .field("dim", &self.omega.dim())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl PseudoGradientGame {
    pub fn new<F>(gradient: F, omega: Polytope, lipschitz: Option<f64>) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            gradient: Arc::new(gradient),
            omega,
            lipschitz,
        }
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = (self.gradient)(x);
        check_dim("pseudo-gradient", x.len(), g.len())?;
        check_finite("pseudo-gradient", &g)?;
        Ok(g)
    }

    /// `‖x − Π_Ω(x − τF(x))‖`
    pub fn natural_residual(&self, x: &[f64], step: f64) -> Result<f64> {
        let f = self.eval(x)?;
        let trial: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - step * b).collect();
        let p = self.omega.project(&trial)?;
        Ok(dist(x, &p))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn gradient_step(omega: &Polytope, x: &[f64], f: &[f64], step: f64) -> Result<Vec<f64>> {
    let trial: Vec<f64> = x.iter().zip(f).map(|(a, b)| a - step * b).collect();
    omega.project(&trial)
}

/// Extragradient iteration `y = Π(x − τF(x))`, `x⁺ = Π(x − τF(y))`.
///
/// With `step = None` the step is `0.9/L` when a Lipschitz estimate is
/// available and is otherwise chosen by backtracking so that
/// `τ‖F(x) − F(y)‖ <= 0.9‖x − y‖`. Stops when the natural residual at the
/// current iterate is at most `tol`.
pub fn extragradient(
    game: &PseudoGradientGame,
    x0: &[f64],
    step: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    check_dim("extragradient start", game.omega.dim(), x0.len())?;
    let fixed = step.or(game.lipschitz.map(|l| 0.9 / l));
    let mut tau = fixed.unwrap_or(1.0);
    let mut x = game.omega.project(x0)?;
    for _ in 0..max_iter {
        let fx = game.eval(&x)?;
        let y = gradient_step(&game.omega, &x, &fx, tau)?;
        if dist(&x, &y) <= tol {
            // the residual at step τ may differ from the unit-step residual
            if game.natural_residual(&x, 1.0)? <= tol {
                return Ok(x);
            }
        }
        let mut fy = game.eval(&y)?;
        let mut y = y;
        if fixed.is_none() {
            while tau * dist(&fx, &fy) > 0.9 * dist(&x, &y) && tau > 1e-12 {
                tau *= 0.5;
                y = gradient_step(&game.omega, &x, &fx, tau)?;
                fy = game.eval(&y)?;
            }
        }
        x = gradient_step(&game.omega, &x, &fy, tau)?;
        if fixed.is_none() {
            tau *= 1.2;
        }
    }
    if game.natural_residual(&x, 1.0)? <= tol {
        return Ok(x);
    }
    Err(Error::NotConverged(max_iter))
}

/// `Σ_i ‖x_i − f_i(x_{-i})‖²`
pub fn stationarity_residual(
    profile: &CollectiveProfile,
    oracles: &[Arc<dyn AgentOracle>],
) -> Result<f64> {
    let partition = profile.partition();
    check_dim("stationarity oracles", partition.n_agents(), oracles.len())?;
    let mut total = 0.0;
    for (i, oracle) in oracles.iter().enumerate() {
        let reaction = oracle.react(&profile.complement(i))?;
        check_dim("stationarity reaction", partition.size(i), reaction.action.len())?;
        total += profile
            .block(i)
            .iter()
            .zip(&reaction.action)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

/// Grid scan of a box for approximate fixed points of the stacked mappings.
///
/// Grid points outside `omega` and points where an agent has no reaction
/// are skipped. The default acceptance threshold is `h²/2` on the
/// stationarity residual.
pub fn brute_force_fixed_points(
    oracles: &[Arc<dyn AgentOracle>],
    partition: &Partition,
    omega: &Polytope,
    resolution: f64,
    threshold: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    let n = partition.total();
    if n > 3 {
        return Err(Error::OracleScaleExceeded(n));
    }
    check_dim("brute force polytope", n, omega.dim())?;
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput("grid resolution must be positive".into()));
    }
    let (lower, upper) = (omega.lower(), omega.upper());
    if lower.iter().chain(upper).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("brute force scan needs a bounded box".into()));
    }
    let threshold = threshold.unwrap_or(resolution * resolution / 2.0);
    let counts: Vec<usize> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| ((u - l) / resolution + 1e-9).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    let mut found = Vec::new();
    let mut x = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for d in 0..n {
            x[d] = (lower[d] + (rem % counts[d]) as f64 * resolution).min(upper[d]);
            rem /= counts[d];
        }
        if !omega.contains(&x, 1e-12)? {
            continue;
        }
        let profile = CollectiveProfile::new(x.clone(), partition.clone())?;
        match stationarity_residual(&profile, oracles) {
            Ok(r) if r <= threshold => found.push(x.clone()),
            Ok(_) | Err(Error::EmptyReactionSet { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(found)
}
