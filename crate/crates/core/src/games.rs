//! Game registry: turns a `{"game": ..., "params": ...}` description into
//! agents, a partition, the feasible set and an optional pseudo-gradient.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agents::lqr::LqrInstance;
use crate::agents::{
    random_lqr_instance, AgentOracle, InternetAgent, LqrAgent, NoEquilibriumAgent, QpGnepSpec,
    QuadraticGameAgent,
};
use crate::error::{Error, Result};
use crate::oracle::PseudoGradientGame;
use crate::profiles::{Partition, Polytope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    Quadratic10,
    Internet,
    InfiniteEq,
    NoEq,
    QpGnep,
    LqrRandom,
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GameKind::Quadratic10 => "quadratic10",
            GameKind::Internet => "internet",
            GameKind::InfiniteEq => "infinite_eq",
            GameKind::NoEq => "no_eq",
            GameKind::QpGnep => "qp_gnep",
            GameKind::LqrRandom => "lqr_random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    #[serde(default = "ten")]
    pub n_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternetParams {
    #[serde(default = "ten")]
    pub n_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrParams {
    #[serde(default = "three")]
    pub n_agents: usize,
    #[serde(default)]
    pub instance_seed: u64,
    /// Half-width of the entrywise uniform perturbation of `A` used by the
    /// centralized initial design.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn ten() -> usize {
    10
}

fn three() -> usize {
    3
}

fn default_perturbation() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub game: GameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

fn params<T: DeserializeOwned>(spec: &GameSpec, fallback: &str) -> Result<T> {
    let value = spec
        .params
        .clone()
        .unwrap_or_else(|| serde_json::from_str(fallback).expect("static fallback"));
    serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("{} params: {e}", spec.game)))
}

/// A fully built game.
#[derive(Clone)]
pub struct Game {
    pub kind: GameKind,
    pub partition: Partition,
    pub omega: Polytope,
    pub agents: Vec<Arc<dyn AgentOracle>>,
    pub pseudo_gradient: Option<PseudoGradientGame>,
    pub lqr: Option<Arc<LqrInstance>>,
    pub lqr_perturbation: f64,
}

impl fmt::Debug for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Game")
            .field("kind", &self.kind)
            .field("sizes", &self.partition.sizes())
            .finish()
    }
}

impl Game {
    pub fn build(spec: &GameSpec) -> Result<Self> {
        match spec.game {
            GameKind::Quadratic10 => {
                let p: QuadraticParams = params(spec, "{}")?;
                Ok(quadratic_game(p.n_agents)?)
            }
            GameKind::Internet => {
                let p: InternetParams = params(spec, "{}")?;
                internet_game(p.n_agents)
            }
            GameKind::NoEq => {
                if spec.params.as_ref().is_some_and(|v| !v.is_null() && v != &serde_json::json!({})) {
                    return Err(Error::InvalidInput("no_eq takes no params".into()));
                }
                no_equilibrium_game()
            }
            GameKind::InfiniteEq | GameKind::QpGnep => {
                let Some(value) = spec.params.clone() else {
                    return Err(Error::InvalidInput(format!("{} requires cost data in params", spec.game)));
                };
                let data: QpGnepSpec = serde_json::from_value(value)
                    .map_err(|e| Error::InvalidInput(format!("{} params: {e}", spec.game)))?;
                let mut game = qp_game(&data)?;
                game.kind = spec.game;
                Ok(game)
            }
            GameKind::LqrRandom => {
                let p: LqrParams = params(spec, "{}")?;
                let mut rng = ChaCha8Rng::seed_from_u64(p.instance_seed);
                let inst = random_lqr_instance(&mut rng, p.n_agents)?;
                Ok(lqr_game(inst, p.perturbation))
            }
        }
    }

    /// Range `[m⁻, m⁺]` used by the random initialization when none is
    /// configured.
    pub fn default_range(&self) -> (Vec<f64>, Vec<f64>) {
        let cap = if self.kind == GameKind::Internet { 1.0 } else { f64::INFINITY };
        let upper = self.omega.upper().iter().map(|u| u.min(cap)).collect();
        (self.omega.lower().to_vec(), upper)
    }

    /// One initialization profile: a projected uniform draw, or perturbed
    /// centralized gains for LQR games.
    pub fn initial_draw(&self, lower: &[f64], upper: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if let Some(inst) = &self.lqr {
            return Ok(inst.centralized_gains(self.lqr_perturbation, rng));
        }
        let draw: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l })
            .collect();
        self.omega.project(&draw)
    }
}

pub fn quadratic_game(n_agents: usize) -> Result<Game> {
    use crate::agents::quadratic::{LOWER, UPPER};
    let partition = Partition::scalar(n_agents)?;
    let omega = Polytope::cube(n_agents, LOWER, UPPER)?;
    let agents = (0..n_agents)
        .map(|index| Arc::new(QuadraticGameAgent { index, n_agents }) as Arc<dyn AgentOracle>)
        .collect();
    let n = n_agents as f64;
    // ∂J_i/∂x_i = a_i − 60N + 1ᵀx + x_i
    let gradient = move |x: &[f64]| {
        let total: f64 = x.iter().sum();
        x.iter()
            .enumerate()
            .map(|(i, xi)| n * (1.0 + i as f64 / 2.0) - 60.0 * n + total + xi)
            .collect()
    };
    Ok(Game {
        kind: GameKind::Quadratic10,
        partition,
        pseudo_gradient: Some(PseudoGradientGame::new(gradient, omega.clone(), Some(n + 1.0))),
        omega,
        agents,
        lqr: None,
        lqr_perturbation: 0.0,
    })
}

pub fn internet_game(n_agents: usize) -> Result<Game> {
    if n_agents < 2 {
        return Err(Error::InvalidInput("internet game needs at least two agents".into()));
    }
    let partition = Partition::scalar(n_agents)?;
    let mut lower = vec![0.01; n_agents];
    let mut upper = vec![100.0; n_agents];
    lower[0] = 0.3;
    upper[0] = 0.5;
    let omega = Polytope::new(
        lower.clone(),
        upper.clone(),
        nalgebra::DMatrix::from_element(1, n_agents, 1.0),
        vec![1.0],
    )?;
    let agents = (0..n_agents)
        .map(|index| {
            Arc::new(InternetAgent {
                index,
                n_agents,
                lower: lower[index],
                upper: upper[index],
            }) as Arc<dyn AgentOracle>
        })
        .collect();
    // ∂J_i/∂x_i = −(1 − S)/S + x_i/S²
    let gradient = |x: &[f64]| {
        let s: f64 = x.iter().sum();
        x.iter().map(|xi| -(1.0 - s) / s + xi / (s * s)).collect()
    };
    Ok(Game {
        kind: GameKind::Internet,
        partition,
        pseudo_gradient: Some(PseudoGradientGame::new(gradient, omega.clone(), None)),
        omega,
        agents,
        lqr: None,
        lqr_perturbation: 0.0,
    })
}

pub fn no_equilibrium_game() -> Result<Game> {
    Ok(Game {
        kind: GameKind::NoEq,
        partition: Partition::scalar(2)?,
        omega: Polytope::cube(2, 0.0, 1.0)?,
        agents: vec![
            Arc::new(NoEquilibriumAgent { index: 0 }),
            Arc::new(NoEquilibriumAgent { index: 1 }),
        ],
        pseudo_gradient: None,
        lqr: None,
        lqr_perturbation: 0.0,
    })
}

pub fn qp_game(data: &QpGnepSpec) -> Result<Game> {
    let (partition, omega, agents) = data.build()?;
    let grads = agents.clone();
    let part = partition.clone();
    let gradient = move |x: &[f64]| {
        let mut out = vec![0.0; x.len()];
        for (i, agent) in grads.iter().enumerate() {
            out[part.block_range(i)].copy_from_slice(&agent.partial_gradient(x));
        }
        out
    };
    Ok(Game {
        kind: GameKind::QpGnep,
        pseudo_gradient: Some(PseudoGradientGame::new(gradient, omega.clone(), None)),
        partition,
        omega,
        agents: agents
            .into_iter()
            .map(|a| Arc::new(a) as Arc<dyn AgentOracle>)
            .collect(),
        lqr: None,
        lqr_perturbation: 0.0,
    })
}

pub fn lqr_game(instance: LqrInstance, perturbation: f64) -> Game {
    let instance = Arc::new(instance);
    let agents = (0..instance.n_agents())
        .map(|index| {
            Arc::new(LqrAgent {
                instance: Arc::clone(&instance),
                index,
            }) as Arc<dyn AgentOracle>
        })
        .collect();
    Game {
        kind: GameKind::LqrRandom,
        partition: instance.partition(),
        omega: instance.omega(),
        agents,
        pseudo_gradient: None,
        lqr: Some(instance),
        lqr_perturbation: perturbation,
    }
}
