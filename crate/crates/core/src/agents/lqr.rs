//! Multi-agent LQR synthesis. Each agent designs a state-feedback row `κ_i`
//! for `z⁺ = (A + Σ_j B_j κ_j) z`, treating the others' gains as part of the
//! plant.
//!
//! Sign convention: gains enter as `+B_i κ_i`, so `κ_i` is the negated
//! classical LQR gain `(R + BᵀPB)⁻¹BᵀPA`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::profiles::{Partition, Polytope};

use super::{AgentOracle, Distress, Reaction};

pub const GAIN_BOUND: f64 = 20.0;
pub const DARE_MAX_ITER: usize = 10_000;
const MAX_ATTEMPTS: usize = 1000;
const DOUBLING_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrInstance {
    pub a: DMatrix<f64>,
    pub b: Vec<DVector<f64>>,
    /// Full output matrix; agent `i` observes the rows in `outputs[i]`.
    pub c: DMatrix<f64>,
    pub outputs: Vec<Vec<usize>>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<f64>,
}

impl LqrInstance {
    pub fn n_agents(&self) -> usize {
        self.b.len()
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn partition(&self) -> Partition {
        Partition::new(vec![self.n_states(); self.n_agents()]).expect("nonempty instance")
    }

    pub fn omega(&self) -> Polytope {
        Polytope::cube(self.n_agents() * self.n_states(), -GAIN_BOUND, GAIN_BOUND)
            .expect("valid bounds")
    }

    pub fn c_agent(&self, i: usize) -> DMatrix<f64> {
        self.c.select_rows(self.outputs[i].iter())
    }

    /// `Q̄_i = C_iᵀ Q_i C_i`
    pub fn q_bar(&self, i: usize) -> DMatrix<f64> {
        let ci = self.c_agent(i);
        ci.transpose() * &self.q[i] * ci
    }

    fn b_full(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.b)
    }

    /// `A + Σ_{j∈agents} B_j κ_j` for the stacked gains of the listed agents.
    fn closed_loop_with(&self, agents: &[usize], gains: &[f64]) -> DMatrix<f64> {
        let nz = self.n_states();
        let mut a = self.a.clone();
        for (slot, &j) in agents.iter().enumerate() {
            let row = &gains[slot * nz..(slot + 1) * nz];
            for r in 0..nz {
                for c in 0..nz {
                    a[(r, c)] += self.b[j][r] * row[c];
                }
            }
        }
        a
    }

    /// `A_i(κ_{-i}) = A + Σ_{j≠i} B_j κ_j`
    pub fn plant_for(&self, i: usize, kappa_minus_i: &[f64]) -> DMatrix<f64> {
        let others: Vec<usize> = (0..self.n_agents()).filter(|&j| j != i).collect();
        self.closed_loop_with(&others, kappa_minus_i)
    }

    /// Spectral radius of `A + Σ_j B_j κ_j` for a full gain profile.
    pub fn closed_loop_radius(&self, kappa: &[f64]) -> Result<f64> {
        check_dim("lqr gain profile", self.n_agents() * self.n_states(), kappa.len())?;
        let all: Vec<usize> = (0..self.n_agents()).collect();
        Ok(spectral_radius(&self.closed_loop_with(&all, kappa)))
    }

    /// Perturbed centralized LQR gains, used to seed the sample log.
    ///
    /// The design model is `A + E` with `E` entrywise `U(−δ, δ)`, weights
    /// `CᵀC` and `I_N`. The returned stacked gains lie in the gain box.
    pub fn centralized_gains<R: Rng + ?Sized>(&self, perturbation: f64, rng: &mut R) -> Vec<f64> {
        let nz = self.n_states();
        let a = if perturbation > 0.0 {
            self.a.map(|v| v + rng.gen_range(-perturbation..=perturbation))
        } else {
            self.a.clone()
        };
        let b = self.b_full();
        let q = self.c.transpose() * &self.c;
        let r = DMatrix::identity(self.n_agents(), self.n_agents());
        let p = match dare_solve(&a, &b, &q, &r) {
            Ok(p) => p,
            Err(_) => riccati_last_iterate(&a, &b, &q, &r),
        };
        let k = feedback_gain(&a, &b, &p, &r).unwrap_or_else(|| DMatrix::zeros(self.n_agents(), nz));
        let mut out = Vec::with_capacity(self.n_agents() * nz);
        for i in 0..self.n_agents() {
            out.extend(k.row(i).iter().map(|v| clip_gain(-v)));
        }
        out
    }
}

fn clip_gain(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-GAIN_BOUND, GAIN_BOUND)
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let tol = 1e-9 * sv.max().max(f64::MIN_POSITIVE);
    sv.iter().filter(|&&s| s > tol).count()
}

fn controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    let cols: Vec<_> = blocks.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect();
    rank(&DMatrix::from_columns(&cols)) == n
}

fn observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    controllable(&a.transpose(), &c.transpose())
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let bp = b.transpose() * p;
    let s = r + &bp * b;
    let k = s.lu().solve(&(&bp * a))?;
    let next = a.transpose() * p * a - a.transpose() * p * b * k + q;
    Some((&next + next.transpose()) * 0.5)
}

fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    riccati_map(a, b, q, r, p).map_or(f64::INFINITY, |next| (next - p).norm())
}

/// Classical gain `(R + BᵀPB)⁻¹BᵀPA`.
fn feedback_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let bp = b.transpose() * p;
    (r + &bp * b).lu().solve(&(bp * a))
}

/// Stabilizing solution of `AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q̄ = P`.
///
/// Uses the structure-preserving doubling iteration followed by a short
/// fixed-point polish. The result is accepted only if the Riccati residual
/// is at most `1e−9(1 + ‖P‖_F)`, `P` is positive semidefinite and the
/// closed loop is Schur stable.
pub fn dare_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_dim("dare A", n, a.ncols())?;
    check_dim("dare B", n, b.nrows())?;
    check_dim("dare Q", n, q_bar.nrows())?;
    check_dim("dare Q", n, q_bar.ncols())?;
    check_dim("dare R", b.ncols(), r.nrows())?;
    check_dim("dare R", b.ncols(), r.ncols())?;
    check_finite("dare data", a.as_slice())?;
    check_finite("dare data", b.as_slice())?;
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("R must be positive definite".into()))?
        .inverse();

    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = (q_bar + q_bar.transpose()) * 0.5;
    let mut converged = false;
    for _ in 0..DOUBLING_STEPS {
        let w = (&eye + &gk * &hk).lu();
        let (Some(w_a), Some(w_g)) = (w.solve(&ak), w.solve(&gk)) else {
            return Err(Error::NoStabilizingSolution);
        };
        let h_next = &hk + ak.transpose() * &hk * &w_a;
        let g_next = &gk + &ak * w_g * ak.transpose();
        let a_next = &ak * w_a;
        let delta = (&h_next - &hk).norm();
        hk = (&h_next + h_next.transpose()) * 0.5;
        gk = (&g_next + g_next.transpose()) * 0.5;
        ak = a_next;
        if !hk.iter().all(|v| v.is_finite()) {
            return Err(Error::NoStabilizingSolution);
        }
        if delta <= 1e-14 * (1.0 + hk.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoStabilizingSolution);
    }

    let mut p = hk;
    for _ in 0..5 {
        match riccati_map(a, b, q_bar, r, &p) {
            Some(next) if next.iter().all(|v| v.is_finite()) => p = next,
            _ => return Err(Error::NoStabilizingSolution),
        }
    }

    let residual = riccati_residual(a, b, q_bar, r, &p);
    if residual > 1e-9 * (1.0 + p.norm()) {
        return Err(Error::NoStabilizingSolution);
    }
    let scale = 1.0 + p.norm();
    if p.clone().symmetric_eigen().eigenvalues.min() < -1e-9 * scale {
        return Err(Error::NoStabilizingSolution);
    }
    let k = feedback_gain(a, b, &p, r).ok_or(Error::NoStabilizingSolution)?;
    if spectral_radius(&(a - b * k)) >= 1.0 {
        return Err(Error::NoStabilizingSolution);
    }
    Ok(p)
}

/// Last finite value-iteration iterate started from `Q̄`.
fn riccati_last_iterate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut p = q_bar.clone();
    for _ in 0..DARE_MAX_ITER {
        match riccati_map(a, b, q_bar, r, &p) {
            Some(next) if next.iter().all(|v| v.is_finite()) && next.norm() < 1e150 => {
                let done = (&next - &p).norm() <= 1e-12 * (1.0 + next.norm());
                p = next;
                if done {
                    break;
                }
            }
            _ => break,
        }
    }
    p
}

/// Gain row of agent `i` against the others' stacked gains, clipped into
/// `[−20, 20]`.
pub fn lqr_react(inst: &LqrInstance, i: usize, kappa_minus_i: &[f64]) -> Result<Reaction> {
    let nz = inst.n_states();
    check_dim("lqr opponents", (inst.n_agents() - 1) * nz, kappa_minus_i.len())?;
    check_finite("lqr opponents", kappa_minus_i)?;
    let a_i = inst.plant_for(i, kappa_minus_i);
    let b_i = DMatrix::from_column_slice(nz, 1, inst.b[i].as_slice());
    let q_bar = inst.q_bar(i);
    let r = DMatrix::from_element(1, 1, inst.r[i]);

    let (p, mut distress) = match dare_solve(&a_i, &b_i, &q_bar, &r) {
        Ok(p) => (p, None),
        Err(Error::NoStabilizingSolution) => {
            (riccati_last_iterate(&a_i, &b_i, &q_bar, &r), Some(Distress::Unstabilizable))
        }
        Err(e) => return Err(e),
    };
    let k = feedback_gain(&a_i, &b_i, &p, &r).unwrap_or_else(|| DMatrix::zeros(1, nz));
    let raw: Vec<f64> = k.iter().map(|v| -v).collect();
    let action: Vec<f64> = raw.iter().map(|&v| clip_gain(v)).collect();
    if distress.is_none() && raw != action {
        distress = Some(Distress::Clipped);
    }
    Ok(Reaction { action, distress })
}

#[derive(Debug, Clone)]
pub struct LqrAgent {
    pub instance: Arc<LqrInstance>,
    pub index: usize,
}

impl AgentOracle for LqrAgent {
    fn output_dim(&self) -> usize {
        self.instance.n_states()
    }

    fn input_dim(&self) -> usize {
        (self.instance.n_agents() - 1) * self.instance.n_states()
    }

    fn react(&self, x_minus_i: &[f64]) -> Result<Reaction> {
        lqr_react(&self.instance, self.index, x_minus_i)
    }
}

/// Random unstable instance with controllable `(A, B_i)` and observable
/// `(A, C_i)` for every agent.
pub fn random_lqr_instance<R: Rng + ?Sized>(rng: &mut R, n_agents: usize) -> Result<LqrInstance> {
    if n_agents == 0 {
        return Err(Error::InvalidInput("at least one agent required".into()));
    }
    let n = n_agents;
    for _ in 0..MAX_ATTEMPTS {
        let nz = rng.gen_range(n..=3 * n);
        let ny = rng.gen_range(n..=2 * n).max(2);
        let a = DMatrix::from_fn(nz, nz, |_, _| rng.gen_range(-1.0..1.0));
        let rho = spectral_radius(&a);
        if rho < 1e-6 {
            continue;
        }
        let a = a * (rng.gen_range(1.05..1.3) / rho);
        let b: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(nz, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let c = DMatrix::from_fn(ny, nz, |_, _| rng.gen_range(-1.0..1.0));
        let outputs: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let k = rng.gen_range(2..=ny);
                let mut rows = rand::seq::index::sample(rng, ny, k).into_vec();
                rows.sort_unstable();
                rows
            })
            .collect();
        let q: Vec<DMatrix<f64>> = outputs
            .iter()
            .map(|rows| {
                let w = DMatrix::from_fn(rows.len(), rows.len(), |_, _| rng.gen_range(0.0..1.0));
                &w * w.transpose()
            })
            .collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
        let inst = LqrInstance {
            a,
            b,
            c,
            outputs,
            q,
            r,
        };
        let ok = (0..n).all(|i| {
            let bi = DMatrix::from_column_slice(nz, 1, inst.b[i].as_slice());
            controllable(&inst.a, &bi) && observable(&inst.a, &inst.c_agent(i))
        });
        if ok {
            return Ok(inst);
        }
    }
    Err(Error::GenerationFailed(MAX_ATTEMPTS))
}
