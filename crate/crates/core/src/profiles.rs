//! Partitioned decision profiles and the feasible polytope.
//!
//! A collective profile `x` stacks the decision blocks `x_1, ..., x_N` of all
//! agents. The feasible set is a box intersected with a finite number of
//! linear inequalities `A x <= b`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::query::qp;

/// Default additive feasibility tolerance.
pub const TOL_FEAS: f64 = 1e-8;
/// Default KKT residual tolerance.
pub const TOL_KKT: f64 = 1e-8;

/// Block sizes `n_1..n_N` of a collective profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl Partition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidInput("partition needs at least one agent".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("partition block sizes must be >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    /// `N` scalar agents.
    pub fn scalar(n_agents: usize) -> Result<Self> {
        Self::new(vec![1; n_agents])
    }

    pub fn n_agents(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    /// `n_{-i}`.
    pub fn complement_size(&self, i: usize) -> usize {
        self.total() - self.sizes[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn block_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Global indices making up `x_{-i}`, in increasing order.
    pub fn complement_indices(&self, i: usize) -> Vec<usize> {
        let r = self.block_range(i);
        (0..self.total()).filter(|k| !r.contains(k)).collect()
    }

    /// Extracts `x_i` from a stacked vector.
    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[self.block_range(i)]
    }

    /// Extracts `x_{-i}` from a stacked vector.
    pub fn complement(&self, x: &[f64], i: usize) -> Vec<f64> {
        let r = self.block_range(i);
        x[..r.start].iter().chain(&x[r.end..]).copied().collect()
    }

    /// Reassembles `(x_i, x_{-i})` into a stacked vector.
    pub fn compose(&self, i: usize, own: &[f64], others: &[f64]) -> Result<Vec<f64>> {
        check_dim("partition block", self.size(i), own.len())?;
        check_dim("partition complement", self.complement_size(i), others.len())?;
        let r = self.block_range(i);
        let mut x = Vec::with_capacity(self.total());
        x.extend_from_slice(&others[..r.start]);
        x.extend_from_slice(own);
        x.extend_from_slice(&others[r.start..]);
        Ok(x)
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Partition::new(sizes)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.sizes
    }
}

/// A stacked decision vector together with its partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveProfile {
    values: Vec<f64>,
    partition: Partition,
}

impl CollectiveProfile {
    pub fn new(values: Vec<f64>, partition: Partition) -> Result<Self> {
        check_dim("collective profile", partition.total(), values.len())?;
        Ok(Self { values, partition })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn block(&self, i: usize) -> &[f64] {
        self.partition.block(&self.values, i)
    }

    pub fn complement(&self, i: usize) -> Vec<f64> {
        self.partition.complement(&self.values, i)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Box bounds intersected with `A x <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    lower: Vec<f64>,
    upper: Vec<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: Vec<f64>,
}

impl Polytope {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_rhs: Vec<f64>,
    ) -> Result<Self> {
        let n = lower.len();
        check_dim("polytope upper bounds", n, upper.len())?;
        check_dim("polytope inequality columns", n, ineq_matrix.ncols())?;
        check_dim("polytope inequality rows", ineq_matrix.nrows(), ineq_rhs.len())?;
        if lower.iter().chain(&upper).any(|v| v.is_nan())
            || ineq_matrix.iter().chain(&ineq_rhs).any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("polytope data must not contain NaN".into()));
        }
        if let Some(j) = (0..n).find(|&j| lower[j] > upper[j]) {
            return Err(Error::InvalidInput(format!(
                "lower bound exceeds upper bound at coordinate {j}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            ineq_matrix,
            ineq_rhs,
        })
    }

    pub fn from_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        Self::new(lower, upper, DMatrix::zeros(0, n), Vec::new())
    }

    /// The hypercube `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::from_box(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn ineq_matrix(&self) -> &DMatrix<f64> {
        &self.ineq_matrix
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    pub fn is_box(&self) -> bool {
        self.ineq_rhs.is_empty()
    }

    /// Clips `x` into the box part only.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    /// Largest constraint violation of `x` (zero when feasible).
    pub fn max_violation(&self, x: &[f64]) -> Result<f64> {
        check_dim("polytope membership", self.dim(), x.len())?;
        let mut worst: f64 = 0.0;
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        let xv = DVector::from_column_slice(x);
        let ax = &self.ineq_matrix * xv;
        for (a, b) in ax.iter().zip(&self.ineq_rhs) {
            worst = worst.max(a - b);
        }
        Ok(worst)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.max_violation(x)? <= tol)
    }

    /// Euclidean projection onto the polytope.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("polytope projection", self.dim(), x.len())?;
        if self.is_box() {
            return Ok(self.clip(x));
        }
        let n = self.dim();
        let h = DMatrix::identity(n, n) * 2.0;
        let g = DVector::from_iterator(n, x.iter().map(|v| -2.0 * v));
        let sol = qp::qp_solve(&h, &g, self, 0.0)?;
        Ok(sol.x.as_slice().to_vec())
    }
}

/// JSON form of a polytope: `{"lower", "upper", "A", "b"}`. Unbounded box
/// entries are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeSpec {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl TryFrom<PolytopeSpec> for Polytope {
    type Error = Error;

    fn try_from(spec: PolytopeSpec) -> Result<Self> {
        let n = spec.lower.len();
        let lower = spec
            .lower
            .iter()
            .map(|v| v.unwrap_or(f64::NEG_INFINITY))
            .collect();
        let upper = spec.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        for row in &spec.a {
            check_dim("polytope row", n, row.len())?;
        }
        let a = DMatrix::from_fn(spec.a.len(), n, |r, c| spec.a[r][c]);
        Polytope::new(lower, upper, a, spec.b)
    }
}

impl From<&Polytope> for PolytopeSpec {
    fn from(p: &Polytope) -> Self {
        let finite = |v: &f64| if v.is_finite() { Some(*v) } else { None };
        PolytopeSpec {
            lower: p.lower.iter().map(finite).collect(),
            upper: p.upper.iter().map(finite).collect(),
            a: (0..p.ineq_matrix.nrows())
                .map(|r| p.ineq_matrix.row(r).iter().copied().collect())
                .collect(),
            b: p.ineq_rhs.clone(),
        }
    }
}

impl Serialize for Polytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeSpec::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = PolytopeSpec::deserialize(d)?;
        Polytope::try_from(spec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square_with_halfspace() -> Polytope {
        Polytope::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn contains_examples() {
        let unit = Polytope::cube(2, 0.0, 1.0).unwrap();
        assert!(unit.contains(&[0.5, 0.5], 0.0).unwrap());
        assert!(unit.contains(&[1.0 + 1e-12, 0.0], 1e-9).unwrap());
        let big = Polytope::cube(10, 7.0, 100.0).unwrap();
        assert!(!big.contains(&[6.0; 10], TOL_FEAS).unwrap());
        assert!(matches!(
            unit.contains(&[0.5], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn project_box_examples() {
        let unit = Polytope::cube(2, 0.0, 1.0).unwrap();
        assert_eq!(unit.project(&[0.5, 0.2]).unwrap(), vec![0.5, 0.2]);
        assert_eq!(unit.project(&[2.0, -3.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn project_onto_halfspace_matches_grid_search() {
        let poly = unit_square_with_halfspace();
        let y = poly.project(&[1.0, 1.0]).unwrap();
        // dense grid brute force over the feasible set
        let h = 1e-3;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for a in 0..=1000 {
            for b in 0..=1000 {
                let p = [a as f64 * h, b as f64 * h];
                if p[0] + p[1] <= 1.0 + 1e-12 {
                    let d = (p[0] - 1.0).powi(2) + (p[1] - 1.0).powi(2);
                    if d < best.0 {
                        best = (d, p);
                    }
                }
            }
        }
        assert!((best.1[0] - 0.5).abs() <= h && (best.1[1] - 0.5).abs() <= h);
        assert!((y[0] - 0.5).abs() < 1e-10 && (y[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn empty_polytope_projection_fails() {
        let poly = Polytope::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![-1.0],
        )
        .unwrap();
        assert!(matches!(poly.project(&[0.3, 0.3]), Err(Error::EmptyFeasibleSet)));
    }

    #[test]
    fn json_round_trip_with_unbounded_entries() {
        let json = r#"{"lower":[0.0,null],"upper":[1.0,null],"A":[[1.0,1.0]],"b":[1.0]}"#;
        let p: Polytope = serde_json::from_str(json).unwrap();
        assert_eq!(p.upper()[1], f64::INFINITY);
        assert_eq!(serde_json::to_string(&p).unwrap(), json);
        let bad = r#"{"lower":[0.0],"upper":[1.0],"extra":1}"#;
        assert!(serde_json::from_str::<Polytope>(bad).is_err());
    }

    #[test]
    fn partition_rejects_empty_blocks() {
        assert!(Partition::new(vec![]).is_err());
        assert!(Partition::new(vec![1, 0]).is_err());
        let p = Partition::new(vec![3, 2, 2]).unwrap();
        assert_eq!(p.total(), 7);
        assert_eq!(p.complement_indices(1), vec![0, 1, 2, 5, 6]);
    }

    proptest! {
        #[test]
        fn block_round_trip(sizes in prop::collection::vec(1usize..4, 1..5), seed in any::<u64>()) {
            let p = Partition::new(sizes).unwrap();
            let x: Vec<f64> = (0..p.total()).map(|k| (k as f64 + 1.0) * (seed % 97) as f64).collect();
            for i in 0..p.n_agents() {
                let own = p.block(&x, i).to_vec();
                let others = p.complement(&x, i);
                prop_assert_eq!(own.len() + others.len(), x.len());
                prop_assert_eq!(p.compose(i, &own, &others).unwrap(), x.clone());
            }
        }

        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in prop::collection::vec(-3.0f64..3.0, 2),
            b in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            let poly = unit_square_with_halfspace();
            let pa = poly.project(&a).unwrap();
            let pb = poly.project(&b).unwrap();
            prop_assert!(poly.contains(&pa, TOL_FEAS).unwrap());
            let ppa = poly.project(&pa).unwrap();
            for (u, v) in pa.iter().zip(&ppa) {
                prop_assert!((u - v).abs() <= 1e-10);
            }
            let d_proj = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            prop_assert!(d_proj <= d + 1e-12);
        }
    }
}
