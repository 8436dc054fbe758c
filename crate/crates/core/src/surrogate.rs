//! Affine surrogates `f̂_i(x_{-i}) = ν x_{-i} + c` and their estimators.
//!
//! The online estimator is a bank of linear Kalman filters, one per output
//! component, sharing the regressor `φ = [x_{-i}; 1]`. With `β = 0` it is
//! plain recursive least squares started from `θ = 0, P = αI`, and so agrees
//! with the ridge solution computed by [`batch_refit`].

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

/// Affine map `x_{-i} ↦ ν x_{-i} + c` with `ν ∈ R^{n_i × n_{-i}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSurrogate {
    pub nu: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl AffineSurrogate {
    pub fn new(nu: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        check_dim("surrogate offsets", nu.nrows(), c.len())?;
        check_finite("surrogate coefficients", nu.as_slice())?;
        check_finite("surrogate offsets", c.as_slice())?;
        Ok(Self { nu, c })
    }

    pub fn zeros(n_own: usize, n_others: usize) -> Self {
        Self {
            nu: DMatrix::zeros(n_own, n_others),
            c: DVector::zeros(n_own),
        }
    }

    /// Builds the surrogate from the stacked row parameters `θ_j = [ν_j; c_j]`.
    pub fn from_theta(n_own: usize, n_others: usize, theta: &[f64]) -> Result<Self> {
        check_dim("surrogate parameter vector", n_own * (n_others + 1), theta.len())?;
        let width = n_others + 1;
        let nu = DMatrix::from_fn(n_own, n_others, |r, k| theta[r * width + k]);
        let c = DVector::from_fn(n_own, |r, _| theta[r * width + n_others]);
        Self::new(nu, c)
    }

    pub fn output_dim(&self) -> usize {
        self.nu.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.nu.ncols()
    }

    /// `θ_i`, the row-wise vectorization of `Λ_i = [ν | c]`.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim() * (self.input_dim() + 1));
        for r in 0..self.output_dim() {
            out.extend(self.nu.row(r).iter());
            out.push(self.c[r]);
        }
        out
    }

    pub fn predict(&self, x_minus_i: &[f64]) -> Result<Vec<f64>> {
        check_dim("surrogate input", self.input_dim(), x_minus_i.len())?;
        let x = DVector::from_column_slice(x_minus_i);
        Ok((&self.nu * x + &self.c).as_slice().to_vec())
    }
}

fn regressor(x_minus_i: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x_minus_i.len() + 1,
        x_minus_i.iter().copied().chain(std::iter::once(1.0)),
    )
}

#[derive(Debug, Clone, PartialEq)]
struct FilterRow {
    theta: DVector<f64>,
    cov: DMatrix<f64>,
}

/// One Kalman filter per output component of an agent's surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBank {
    rows: Vec<FilterRow>,
    n_others: usize,
    alpha: f64,
    beta: f64,
}

impl KalmanBank {
    /// `θ = 0`, `P = αI` for every output component.
    pub fn new(n_own: usize, n_others: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be nonnegative, got {beta}")));
        }
        let p = n_others + 1;
        let row = FilterRow {
            theta: DVector::zeros(p),
            cov: DMatrix::identity(p, p) * alpha,
        };
        Ok(Self {
            rows: vec![row; n_own],
            n_others,
            alpha,
            beta,
        })
    }

    /// Starts the filter from the parameters of an existing surrogate.
    pub fn with_surrogate(surrogate: &AffineSurrogate, alpha: f64, beta: f64) -> Result<Self> {
        let mut bank = Self::new(surrogate.output_dim(), surrogate.input_dim(), alpha, beta)?;
        let width = bank.n_others + 1;
        let theta = surrogate.theta();
        for (r, row) in bank.rows.iter_mut().enumerate() {
            row.theta.copy_from_slice(&theta[r * width..(r + 1) * width]);
        }
        Ok(bank)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn input_dim(&self) -> usize {
        self.n_others
    }

    pub fn theta(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.theta.iter().copied()).collect()
    }

    pub fn covariance(&self, component: usize) -> &DMatrix<f64> {
        &self.rows[component].cov
    }

    pub fn surrogate(&self) -> AffineSurrogate {
        AffineSurrogate::from_theta(self.output_dim(), self.n_others, &self.theta())
            .expect("bank dimensions are consistent")
    }

    /// One filter update with the pair `(x̂_{-i}, x_i)`.
    ///
    /// For each component: `a = Pφ`, `P' = P − aaᵀ/(1 + φᵀa)`,
    /// `θ ← θ + P'φ (x_ij − φᵀθ)`, `P ← P' + βI`.
    pub fn kf_step(&mut self, x_minus_i: &[f64], reaction: &[f64]) -> Result<()> {
        check_dim("kalman regressor", self.n_others, x_minus_i.len())?;
        check_dim("kalman reaction", self.rows.len(), reaction.len())?;
        check_finite("kalman regressor", x_minus_i)?;
        check_finite("kalman reaction", reaction)?;
        let phi = regressor(x_minus_i);
        let p = phi.len();
        let mut updated = self.rows.clone();
        for (row, &target) in updated.iter_mut().zip(reaction) {
            let a = &row.cov * &phi;
            let denom = 1.0 + phi.dot(&a);
            let mut half = &row.cov - (&a * a.transpose()) / denom;
            let innovation = target - phi.dot(&row.theta);
            row.theta += &half * &phi * innovation;
            for j in 0..p {
                half[(j, j)] += self.beta;
            }
            row.cov = (&half + half.transpose()) * 0.5;
            if !row.theta.iter().chain(row.cov.iter()).all(|v| v.is_finite()) {
                return Err(Error::NumericalBreakdown("kalman update produced non-finite state".into()));
            }
            if Cholesky::new(row.cov.clone()).is_none() {
                return Err(Error::NumericalBreakdown(
                    "kalman covariance lost positive definiteness".into(),
                ));
            }
        }
        self.rows = updated;
        Ok(())
    }
}

/// A single recorded query/reaction pair for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub query: Vec<f64>,
    pub reaction: Vec<f64>,
}

/// Append-only log of one agent's samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleLog {
    n_others: usize,
    n_own: usize,
    samples: Vec<Sample>,
}

impl SampleLog {
    pub fn new(n_own: usize, n_others: usize) -> Self {
        Self {
            n_others,
            n_own,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, query: Vec<f64>, reaction: Vec<f64>) -> Result<()> {
        check_dim("sample query", self.n_others, query.len())?;
        check_dim("sample reaction", self.n_own, reaction.len())?;
        self.samples.push(Sample {
            iteration,
            query,
            reaction,
        });
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.n_others
    }

    pub fn output_dim(&self) -> usize {
        self.n_own
    }
}

/// Minimizer of `Σ_t (x_ij^t − φ_tᵀθ)² + ‖θ‖²/α` for every component `j`.
pub fn batch_refit(log: &SampleLog, alpha: f64) -> Result<AffineSurrogate> {
    if log.is_empty() {
        return Err(Error::InvalidInput("batch refit needs at least one sample".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    let k = log.len();
    let p = log.input_dim() + 1;
    // augmented least squares [Φ; I/√α] θ = [y; 0], solved by QR
    let reg = 1.0 / alpha.sqrt();
    let mut design = DMatrix::<f64>::zeros(k + p, p);
    for (t, s) in log.samples().iter().enumerate() {
        for (col, v) in s.query.iter().chain(std::iter::once(&1.0)).enumerate() {
            design[(t, col)] = *v;
        }
    }
    for j in 0..p {
        design[(k + j, j)] = reg;
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let mut theta = Vec::with_capacity(log.output_dim() * p);
    for comp in 0..log.output_dim() {
        let mut rhs = DVector::<f64>::zeros(k + p);
        for (t, s) in log.samples().iter().enumerate() {
            rhs[t] = s.reaction[comp];
        }
        let qtb = q.transpose() * &rhs;
        let sol = r
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::NumericalBreakdown("singular ridge system".into()))?;
        theta.extend(sol.iter());
    }
    AffineSurrogate::from_theta(log.output_dim(), log.input_dim(), &theta)
}

/// `(1/k) Σ_t ‖x_i^t − f̂_i(x̂_{-i}^t)‖²`.
pub fn residual_mse(surrogate: &AffineSurrogate, log: &SampleLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::InvalidInput("residual of an empty log".into()));
    }
    let mut total = 0.0;
    for s in log.samples() {
        let pred = surrogate.predict(&s.query)?;
        check_dim("sample reaction", pred.len(), s.reaction.len())?;
        total += pred
            .iter()
            .zip(&s.reaction)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total / log.len() as f64)
}
