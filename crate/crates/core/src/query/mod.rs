//! Query synthesis: the constrained least-squares fixed-point program of the
//! current surrogates and the minimum-norm selection of its minimizers.

pub mod qp;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::profiles::{CollectiveProfile, Partition, Polytope, TOL_FEAS};
use crate::surrogate::AffineSurrogate;

pub use qp::{qp_solve, qp_solve_with, QpOptions, QpSolution};

/// Default eigenvalue threshold for the uniqueness certificate.
pub const EIG_TOL: f64 = 1e-9;
/// Default Tikhonov weight used when `H` is singular.
pub const TIKHONOV_EPS: f64 = 1e-8;

/// `½ yᵀHy + gᵀy + const` over `omega`, equal to
/// `Σ_i ‖y_i − ν_i y_{-i} − c_i‖²`. `H` is the exact Hessian of that sum.
#[derive(Debug, Clone)]
pub struct QueryProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub const_term: f64,
    pub omega: Polytope,
    pub partition: Partition,
}

impl QueryProblem {
    pub fn objective(&self, y: &[f64]) -> Result<f64> {
        check_dim("query objective", self.g.len(), y.len())?;
        let y = DVector::from_column_slice(y);
        Ok(0.5 * y.dot(&(&self.h * &y)) + self.g.dot(&y) + self.const_term)
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub x_hat: CollectiveProfile,
    pub objective_value: f64,
    pub lambda_min_h: f64,
    pub unique_certificate: bool,
    pub kkt_residual: f64,
}

/// The fixed-point residual operator `y ↦ My − c`, where block row `i` of `M`
/// is `[−ν_i | I]` spread over the global coordinates.
fn residual_operator(
    surrogates: &[AffineSurrogate],
    partition: &Partition,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dim("surrogate count", partition.n_agents(), surrogates.len())?;
    let n = partition.total();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut c = DVector::<f64>::zeros(n);
    for (i, s) in surrogates.iter().enumerate() {
        check_dim("surrogate output", partition.size(i), s.output_dim())?;
        check_dim("surrogate input", partition.complement_size(i), s.input_dim())?;
        let rows = partition.block_range(i);
        let others = partition.complement_indices(i);
        for (r, global_r) in rows.clone().enumerate() {
            m[(global_r, global_r)] = 1.0;
            for (k, &global_c) in others.iter().enumerate() {
                m[(global_r, global_c)] = -s.nu[(r, k)];
            }
            c[global_r] = s.c[r];
        }
    }
    Ok((m, c))
}

pub fn build_query_problem(
    surrogates: &[AffineSurrogate],
    partition: &Partition,
    omega: &Polytope,
) -> Result<QueryProblem> {
    check_dim("query polytope", partition.total(), omega.dim())?;
    let (m, c) = residual_operator(surrogates, partition)?;
    let mt = m.transpose();
    let h = &mt * &m * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let g = -(&mt * &c) * 2.0;
    Ok(QueryProblem {
        h,
        g,
        const_term: c.dot(&c),
        omega: omega.clone(),
        partition: partition.clone(),
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(h: &DMatrix<f64>) -> f64 {
    if h.is_empty() {
        return f64::NAN;
    }
    let sym = (h + h.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Minimum-norm element of the minimizer set of `q`.
///
/// When `λ_min(H) >= eig_tol` the minimizer is unique and is returned
/// directly. Otherwise the Tikhonov-regularized program (objective plus
/// `tikhonov_eps·½‖y‖²`) is solved in its place and the certificate is
/// reported as missing.
pub fn min_norm_query(q: &QueryProblem, eig_tol: f64, tikhonov_eps: f64) -> Result<QueryResult> {
    let lam = lambda_min(&q.h);
    let mut unique = lam >= eig_tol;
    let ridge = if unique { 0.0 } else { tikhonov_eps };
    let sol = match qp_solve(&q.h, &q.g, &q.omega, ridge) {
        Err(Error::SingularHessian) => {
            // Cholesky can still fail on badly scaled H.
            unique = false;
            let scale = q.h.amax().max(1.0);
            qp_solve(&q.h, &q.g, &q.omega, tikhonov_eps * scale)?
        }
        other => other?,
    };
    let x = sol.x.as_slice().to_vec();
    let objective_value = q.objective(&x)?.max(0.0);
    let viol = q.omega.max_violation(&x)?;
    if viol > TOL_FEAS {
        return Err(Error::InvariantViolation(format!(
            "query point violates the feasible set by {viol:e}"
        )));
    }
    Ok(QueryResult {
        x_hat: CollectiveProfile::new(x, q.partition.clone())?,
        objective_value,
        lambda_min_h: lam,
        unique_certificate: unique,
        kkt_residual: sol.kkt_residual,
    })
}

/// Minimum-norm solution of `My = c` ignoring constraints; `None` when the
/// system is inconsistent.
pub fn solve_linear_fixed_point(
    surrogates: &[AffineSurrogate],
    partition: &Partition,
) -> Result<Option<Vec<f64>>> {
    let (m, c) = residual_operator(surrogates, partition)?;
    let svd = m.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(1.0);
    let y = svd
        .solve(&c, tol)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    let residual = (&m * &y - &c).norm();
    if residual > 1e-8 {
        Ok(None)
    } else {
        Ok(Some(y.as_slice().to_vec()))
    }
}
