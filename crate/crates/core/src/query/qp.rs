//! Dense convex QP solver for `min ½ xᵀHx + gᵀx` over a [`Polytope`].
//!
//! Pure boxes go through a primal active-set method working on the free
//! variables. Polytopes with general inequality rows go through a dual
//! active-set method in the style of Goldfarb and Idnani, which needs no
//! feasible starting point and detects empty feasible sets. Both require
//! `H + ridge·I` to be positive definite.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::profiles::{Polytope, TOL_FEAS};

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol_feas: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 5_000,
            tol_feas: TOL_FEAS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub fn qp_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    omega: &Polytope,
    ridge: f64,
) -> Result<QpSolution> {
    qp_solve_with(h, g, omega, ridge, &QpOptions::default())
}

pub fn qp_solve_with(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    omega: &Polytope,
    ridge: f64,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = omega.dim();
    check_dim("qp hessian rows", n, h.nrows())?;
    check_dim("qp hessian cols", n, h.ncols())?;
    check_dim("qp linear term", n, g.len())?;
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidInput(format!("ridge must be nonnegative, got {ridge}")));
    }
    let mut hr = (h + h.transpose()) * 0.5;
    for j in 0..n {
        hr[(j, j)] += ridge;
    }
    if omega.is_box() {
        solve_box(&hr, g, omega.lower(), omega.upper(), opts)
    } else {
        solve_general(&hr, g, omega, opts)
    }
}

/// Natural residual `‖x − clip(x − ∇)‖∞` of a box-constrained QP. Zero iff
/// `x` satisfies the KKT conditions.
pub fn box_kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    x: &DVector<f64>,
) -> f64 {
    let grad = h * x + g;
    (0..x.len())
        .map(|j| {
            let stepped = (x[j] - grad[j]).clamp(lower[j], upper[j]);
            let primal = (lower[j] - x[j]).max(x[j] - upper[j]).max(0.0);
            (x[j] - stepped).abs().max(primal)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoxState {
    Free,
    AtLower,
    AtUpper,
}

fn solve_box(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = g.len();
    let chol = Cholesky::new(h.clone()).ok_or(Error::SingularHessian)?;
    let unconstrained = chol.solve(&(-g));
    let mut x = DVector::from_iterator(
        n,
        (0..n).map(|j| unconstrained[j].clamp(lower[j], upper[j])),
    );
    let mut state: Vec<BoxState> = (0..n)
        .map(|j| {
            if x[j] <= lower[j] {
                BoxState::AtLower
            } else if x[j] >= upper[j] {
                BoxState::AtUpper
            } else {
                BoxState::Free
            }
        })
        .collect();
    let scale = 1.0 + g.amax() + h.amax() * x.amax();
    let release_tol = 1e-13 * scale;
    let mut at_subspace_min = false;

    for iteration in 1..=opts.max_iter {
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == BoxState::Free).collect();
        if !at_subspace_min && !free.is_empty() {
            let step = newton_step(h, g, &x, &free)?;
            let mut t = 1.0;
            let mut blocking = None;
            for (k, &j) in free.iter().enumerate() {
                let d = step[k];
                if d > 0.0 && upper[j].is_finite() {
                    let tj = (upper[j] - x[j]) / d;
                    if tj < t {
                        t = tj;
                        blocking = Some((j, BoxState::AtUpper));
                    }
                } else if d < 0.0 && lower[j].is_finite() {
                    let tj = (lower[j] - x[j]) / d;
                    if tj < t {
                        t = tj;
                        blocking = Some((j, BoxState::AtLower));
                    }
                }
            }
            let t = t.max(0.0);
            for (k, &j) in free.iter().enumerate() {
                x[j] += t * step[k];
            }
            match blocking {
                Some((j, s)) => {
                    x[j] = if s == BoxState::AtUpper { upper[j] } else { lower[j] };
                    state[j] = s;
                }
                None => at_subspace_min = true,
            }
            continue;
        }

        // x minimizes over the free subspace: check bound multipliers
        let grad = h * &x + g;
        let mut worst = (-release_tol, None);
        for j in 0..n {
            let mult = match state[j] {
                BoxState::Free => continue,
                _ if lower[j] == upper[j] => continue,
                BoxState::AtLower => grad[j],
                BoxState::AtUpper => -grad[j],
            };
            if mult < worst.0 {
                worst = (mult, Some(j));
            }
        }
        match worst.1 {
            Some(j) => {
                state[j] = BoxState::Free;
                at_subspace_min = false;
            }
            None => {
                if !free.is_empty() {
                    // one refinement pass on the free block
                    let step = newton_step(h, g, &x, &free)?;
                    for (k, &j) in free.iter().enumerate() {
                        x[j] = (x[j] + step[k]).clamp(lower[j], upper[j]);
                    }
                }
                let kkt_residual = box_kkt_residual(h, g, lower, upper, &x);
                return Ok(QpSolution {
                    x,
                    kkt_residual,
                    iterations: iteration,
                });
            }
        }
    }
    Err(Error::MaxIterations {
        iterations: opts.max_iter,
        best: x.as_slice().to_vec(),
    })
}

fn newton_step(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    x: &DVector<f64>,
    free: &[usize],
) -> Result<DVector<f64>> {
    let grad = h * x + g;
    let h_ff = h.select_rows(free).select_columns(free);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&j| -grad[j]));
    let chol = Cholesky::new(h_ff).ok_or(Error::SingularHessian)?;
    Ok(chol.solve(&rhs))
}

/// Inequality `aᵀx <= b`.
struct Row {
    a: DVector<f64>,
    b: f64,
    norm: f64,
}

fn constraint_rows(omega: &Polytope) -> Vec<Row> {
    let n = omega.dim();
    let mut rows = Vec::new();
    let a = omega.ineq_matrix();
    for r in 0..a.nrows() {
        let ar = a.row(r).transpose();
        let norm = ar.norm();
        if norm > 0.0 {
            rows.push(Row {
                a: ar,
                b: omega.ineq_rhs()[r],
                norm,
            });
        } else if omega.ineq_rhs()[r] < 0.0 {
            // 0 <= b < 0: keep it so infeasibility is reported
            rows.push(Row {
                a: ar,
                b: omega.ineq_rhs()[r],
                norm: 1.0,
            });
        }
    }
    for j in 0..n {
        if omega.upper()[j].is_finite() {
            rows.push(Row {
                a: unit(n, j, 1.0),
                b: omega.upper()[j],
                norm: 1.0,
            });
        }
        if omega.lower()[j].is_finite() {
            rows.push(Row {
                a: unit(n, j, -1.0),
                b: -omega.lower()[j],
                norm: 1.0,
            });
        }
    }
    rows
}

fn unit(n: usize, j: usize, v: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = v;
    e
}

fn solve_general(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    omega: &Polytope,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let rows = constraint_rows(omega);
    let chol = Cholesky::new(h.clone()).ok_or(Error::SingularHessian)?;
    let h_inv = chol.inverse();
    let mut x = -(&h_inv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let viol_tol = 1e-3 * opts.tol_feas;

    loop {
        let mut candidate = None;
        let mut worst = viol_tol;
        for (k, row) in rows.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let v = (row.a.dot(&x) - row.b) / row.norm;
            if v > worst {
                worst = v;
                candidate = Some(k);
            }
        }
        let Some(p) = candidate else { break };
        let ap = &rows[p].a;
        let h_inv_ap = &h_inv * ap;
        let mut mult_p = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return Err(Error::MaxIterations {
                    iterations: opts.max_iter,
                    best: x.as_slice().to_vec(),
                });
            }
            let (z, du) = if active.is_empty() {
                (-h_inv_ap.clone(), DVector::zeros(0))
            } else {
                let normals = DMatrix::from_columns(
                    &active.iter().map(|&k| rows[k].a.clone()).collect::<Vec<_>>(),
                );
                let h_inv_n = &h_inv * &normals;
                let s = normals.transpose() * &h_inv_n;
                let rhs = normals.transpose() * &h_inv_ap;
                let du = -solve_spd(s, rhs)?;
                let z = -(&h_inv_ap + &h_inv_n * &du);
                (z, du)
            };

            let mut t_partial = f64::INFINITY;
            let mut drop = None;
            for (k, &d) in du.iter().enumerate() {
                if d < 0.0 {
                    let t = -mult[k] / d;
                    if t < t_partial {
                        t_partial = t;
                        drop = Some(k);
                    }
                }
            }
            let az = ap.dot(&z);
            let dependent = z.norm() <= 1e-12 * h_inv_ap.norm().max(f64::MIN_POSITIVE) || az >= 0.0;
            let t_full = if dependent {
                f64::INFINITY
            } else {
                ((rows[p].b - ap.dot(&x)) / az).max(0.0)
            };
            if t_partial.is_infinite() && t_full.is_infinite() {
                return Err(Error::EmptyFeasibleSet);
            }
            if t_full <= t_partial {
                x += &z * t_full;
                for (m, d) in mult.iter_mut().zip(du.iter()) {
                    *m += t_full * d;
                }
                active.push(p);
                mult.push(mult_p + t_full);
                break;
            }
            if !dependent {
                x += &z * t_partial;
            }
            for (m, d) in mult.iter_mut().zip(du.iter()) {
                *m += t_partial * d;
            }
            mult_p += t_partial;
            let k = drop.expect("finite partial step has a blocking multiplier");
            active.remove(k);
            mult.remove(k);
        }
    }

    // re-solve the equality-constrained problem on the final working set
    let (mut x, mult) = refine(h, g, &rows, &active, x, mult);
    // active bounds hold only up to rounding after the refinement
    for (j, v) in x.iter_mut().enumerate() {
        *v = v.clamp(omega.lower()[j], omega.upper()[j]);
    }
    let kkt_residual = general_kkt_residual(h, g, &rows, &active, &mult, &x);
    Ok(QpSolution {
        x,
        kkt_residual,
        iterations,
    })
}

fn solve_spd(s: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    match Cholesky::new(s.clone()) {
        Some(c) => Ok(c.solve(&rhs)),
        None => s
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalBreakdown("dependent active constraints".into())),
    }
}

fn refine(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    rows: &[Row],
    active: &[usize],
    x: DVector<f64>,
    mult: Vec<f64>,
) -> (DVector<f64>, Vec<f64>) {
    let n = g.len();
    let q = active.len();
    let mut kkt = DMatrix::<f64>::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-g));
    for (c, &k) in active.iter().enumerate() {
        kkt.view_mut((0, n + c), (n, 1)).copy_from(&rows[k].a);
        kkt.view_mut((n + c, 0), (1, n)).copy_from(&rows[k].a.transpose());
        rhs[n + c] = rows[k].b;
    }
    match kkt.lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => {
            let refined_x = sol.rows(0, n).into_owned();
            let refined_mult: Vec<f64> = (0..q).map(|c| sol[n + c]).collect();
            if refined_mult.iter().all(|&m| m >= -1e-10) {
                return (refined_x, refined_mult.iter().map(|m| m.max(0.0)).collect());
            }
            (x, mult)
        }
        _ => (x, mult),
    }
}

fn general_kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    rows: &[Row],
    active: &[usize],
    mult: &[f64],
    x: &DVector<f64>,
) -> f64 {
    let mut stationarity = h * x + g;
    let mut worst: f64 = 0.0;
    for (&k, &u) in active.iter().zip(mult) {
        stationarity += &rows[k].a * u;
        let slack = rows[k].b - rows[k].a.dot(x);
        worst = worst.max((u * slack).abs()).max(-u);
    }
    for row in rows {
        worst = worst.max(row.a.dot(x) - row.b);
    }
    worst.max(stationarity.amax())
}
