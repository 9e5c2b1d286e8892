//! ALR-scale measurement-error covariance: estimation from replicates,
//! the working model, and aggregation along the tree.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TarcoError};
use crate::linalg::{max_asymmetry, symmetrize};
use crate::tree::AggregationMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Known,
    Estimated,
    WorkingModel,
}

/// `Σ_U` over the `p−1` non-reference ALR coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCov {
    sigma: DMatrix<f64>,
    reference: usize,
    tau: Option<f64>,
    provenance: Provenance,
}

impl ErrorCov {
    pub fn new(mut sigma: DMatrix<f64>, reference: usize, provenance: Provenance) -> Result<Self> {
        if !sigma.is_square() {
            return Err(dim_err(
                "ErrorCov",
                "square matrix",
                format!("{}x{}", sigma.nrows(), sigma.ncols()),
            ));
        }
        if reference > sigma.nrows() {
            return Err(TarcoError::Validation(format!(
                "reference {} out of range for {} parts",
                reference + 1,
                sigma.nrows() + 1
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(TarcoError::Validation(
                "error covariance has non-finite entries".into(),
            ));
        }
        let scale = sigma.amax().max(1.0);
        if max_asymmetry(&sigma) > 1e-12 * scale {
            return Err(TarcoError::Validation(
                "error covariance is not symmetric".into(),
            ));
        }
        symmetrize(&mut sigma);
        Ok(Self {
            sigma,
            reference,
            tau: None,
            provenance,
        })
    }

    pub fn zeros(p: usize, reference: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(p - 1, p - 1), reference, Provenance::Known)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Number of compositional parts `p`.
    pub fn n_parts(&self) -> usize {
        self.sigma.nrows() + 1
    }

    /// Zero-padding injection `P` (`p×(p−1)`) that skips the reference.
    pub fn padding(&self) -> DMatrix<f64> {
        let p = self.n_parts();
        let mut pad = DMatrix::zeros(p, p - 1);
        for c in 0..p - 1 {
            let r = if c < self.reference { c } else { c + 1 };
            pad[(r, c)] = 1.0;
        }
        pad
    }

    /// `P Σ_U Pᵀ`, the `p×p` covariance with a zero row/column at the reference.
    pub fn padded(&self) -> DMatrix<f64> {
        let pad = self.padding();
        let mut out = &pad * &self.sigma * pad.transpose();
        symmetrize(&mut out);
        out
    }
}

/// Per-sample groups of replicate ALR vectors (reference coordinate dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    groups: Vec<DMatrix<f64>>,
    reference: usize,
}

impl ReplicateSet {
    /// Each group is a `t_i × (p−1)` matrix.
    pub fn new(groups: Vec<DMatrix<f64>>, reference: usize) -> Result<Self> {
        let dim = groups.first().map(|g| g.ncols()).unwrap_or(0);
        for (i, g) in groups.iter().enumerate() {
            if g.ncols() != dim {
                return Err(dim_err("replicate group width", dim, g.ncols()));
            }
            if g.nrows() < 2 {
                return Err(TarcoError::Validation(format!(
                    "replicate group {} has {} measurement(s); at least 2 are needed",
                    i + 1,
                    g.nrows()
                )));
            }
        }
        Ok(Self { groups, reference })
    }

    pub fn groups(&self) -> &[DMatrix<f64>] {
        &self.groups
    }

    pub fn reference(&self) -> usize {
        self.reference
    }
}

/// Pooled within-group covariance
/// `Σ_i Σ_t (Z_it − Z̄_i)(Z_it − Z̄_i)ᵀ / Σ_i (t_i − 1)`.
pub fn estimate_sigma_u(replicates: &ReplicateSet) -> Result<ErrorCov> {
    let groups = replicates.groups();
    if groups.is_empty() {
        return Err(TarcoError::Validation("no replicate groups".into()));
    }
    let dim = groups[0].ncols();
    let dof: usize = groups.iter().map(|g| g.nrows() - 1).sum();
    if dof == 0 {
        return Err(TarcoError::Validation(
            "replicate degrees of freedom are zero".into(),
        ));
    }
    let max_dof = groups.iter().map(|g| g.nrows() - 1).max().unwrap_or(0);
    if max_dof as f64 > 5.0 * dof as f64 / groups.len() as f64 {
        log::warn!(
            "replicate counts are highly unbalanced (max t_i-1 = {max_dof}, mean {:.2})",
            dof as f64 / groups.len() as f64
        );
    }
    let mut acc = DMatrix::zeros(dim, dim);
    for g in groups {
        let mean: DVector<f64> = g.row_mean().transpose();
        let mut dev = g.clone();
        for mut row in dev.row_iter_mut() {
            row -= mean.transpose();
        }
        acc += dev.tr_mul(&dev);
    }
    acc /= dof as f64;
    symmetrize(&mut acc);
    ErrorCov::new(acc, replicates.reference(), Provenance::Estimated)
}

/// `τ²(I + 11ᵀ)`: the ALR image of i.i.d. log-scale errors with variance `τ²`.
pub fn working_sigma_u(p: usize, tau: f64, reference: usize) -> Result<ErrorCov> {
    if p < 2 {
        return Err(TarcoError::Validation(
            "working covariance needs p >= 2".into(),
        ));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(TarcoError::Validation(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    let t2 = tau * tau;
    let sigma = DMatrix::from_fn(p - 1, p - 1, |i, j| if i == j { 2.0 * t2 } else { t2 });
    let mut out = ErrorCov::new(sigma, reference, Provenance::WorkingModel)?;
    out.tau = Some(tau);
    Ok(out)
}

/// `Σ_{U,A} = Aᵀ P Σ_U Pᵀ A` (`T×T`).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedErrorCov {
    matrix: DMatrix<f64>,
}

impl AggregatedErrorCov {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn zeros(t: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(t, t),
        }
    }

    /// Wraps an already aggregated (or unaggregated, for flat designs)
    /// symmetric covariance.
    pub fn from_matrix(mut matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(dim_err(
                "AggregatedErrorCov",
                "square matrix",
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        if max_asymmetry(&matrix) > 1e-12 * matrix.amax().max(1.0) {
            return Err(TarcoError::Validation(
                "aggregated error covariance is not symmetric".into(),
            ));
        }
        symmetrize(&mut matrix);
        Ok(Self { matrix })
    }
}

pub fn aggregate_sigma(sigma: &ErrorCov, agg: &AggregationMatrix) -> Result<AggregatedErrorCov> {
    if sigma.n_parts() != agg.n_leaves() {
        return Err(dim_err("aggregate_sigma", agg.n_leaves(), sigma.n_parts()));
    }
    let a = agg.matrix();
    let mut matrix = a.transpose() * sigma.padded() * a;
    symmetrize(&mut matrix);
    Ok(AggregatedErrorCov { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TaxTree;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_replicates() {
        let set = ReplicateSet::new(vec![dmatrix![1.0; 3.0]], 1).unwrap();
        let s = estimate_sigma_u(&set).unwrap();
        assert_eq!(s.matrix(), &dmatrix![2.0]);
        assert_eq!(s.provenance(), Provenance::Estimated);
    }

    #[test]
    fn identical_replicates_give_zero() {
        let g = dmatrix![1.0, 2.0; 1.0, 2.0; 1.0, 2.0];
        let set = ReplicateSet::new(vec![g.clone(), g], 2).unwrap();
        assert_eq!(
            estimate_sigma_u(&set).unwrap().matrix(),
            &DMatrix::zeros(2, 2)
        );
    }

    #[test]
    fn single_replicate_rejected() {
        assert!(ReplicateSet::new(vec![dmatrix![1.0, 2.0]], 2).is_err());
        assert!(estimate_sigma_u(&ReplicateSet::new(vec![], 0).unwrap()).is_err());
    }

    #[test]
    fn working_model_examples() {
        assert_eq!(
            working_sigma_u(3, 1.0, 2).unwrap().matrix(),
            &dmatrix![2.0, 1.0; 1.0, 2.0]
        );
        assert_eq!(working_sigma_u(2, 2.0, 1).unwrap().matrix(), &dmatrix![8.0]);
        assert_eq!(
            working_sigma_u(4, 0.0, 3).unwrap().matrix(),
            &DMatrix::zeros(3, 3)
        );
        assert!(working_sigma_u(1, 1.0, 0).is_err());
    }

    #[test]
    fn padding_skips_reference() {
        let s = ErrorCov::new(dmatrix![1.0, 0.5; 0.5, 2.0], 1, Provenance::Known).unwrap();
        assert_eq!(
            s.padded(),
            dmatrix![1.0, 0.0, 0.5; 0.0, 0.0, 0.0; 0.5, 0.0, 2.0]
        );
        let last = ErrorCov::new(dmatrix![1.0, 0.5; 0.5, 2.0], 2, Provenance::Known).unwrap();
        assert_eq!(last.padding(), dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0]);
    }

    #[test]
    fn fig1_aggregated_entries() {
        let tree = TaxTree::parse_newick("((a,b)n4,c);").unwrap();
        let agg = tree.aggregation();
        let s = working_sigma_u(3, 1.0, 2).unwrap();
        let m = aggregate_sigma(&s, &agg).unwrap();
        let m = m.matrix();
        assert_eq!(m[(3, 3)], 6.0);
        assert_eq!(m[(0, 3)], 3.0);
        assert_eq!(m[(2, 2)], 0.0);
        let z = aggregate_sigma(&ErrorCov::zeros(3, 2).unwrap(), &agg).unwrap();
        assert_eq!(z.matrix(), &DMatrix::zeros(4, 4));
    }

    #[test]
    fn disjoint_nodes_scale_with_leaf_counts() {
        // blocks of 2 and 3 leaves, reference in a third block
        let tree = TaxTree::parse_newick("((a,b)k,(c,d,e)l,(f,g)m);").unwrap();
        let agg = tree.aggregation();
        let s = working_sigma_u(7, 1.0, 6).unwrap();
        let m = aggregate_sigma(&s, &agg).unwrap();
        let (k, l) = (tree.node_index("k").unwrap(), tree.node_index("l").unwrap());
        assert_eq!(m.matrix()[(k, l)], 6.0);
        let s = working_sigma_u(7, 0.7, 6).unwrap();
        let m = aggregate_sigma(&s, &agg).unwrap();
        assert!((m.matrix()[(k, l)] / 6.0 - 0.49).abs() < 1e-15);
    }

    #[test]
    fn aggregation_is_linear() {
        let tree = TaxTree::parse_newick("(((a,b),c),(d,e));").unwrap();
        let agg = tree.aggregation();
        let s1 = working_sigma_u(5, 1.3, 4).unwrap();
        let s2 = ErrorCov::new(
            DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 + i as f64 } else { 0.2 }),
            4,
            Provenance::Known,
        )
        .unwrap();
        let combo =
            ErrorCov::new(s1.matrix() * 0.7 + s2.matrix() * 2.5, 4, Provenance::Known).unwrap();
        let lhs = aggregate_sigma(&combo, &agg).unwrap();
        let rhs = aggregate_sigma(&s1, &agg).unwrap().matrix() * 0.7
            + aggregate_sigma(&s2, &agg).unwrap().matrix() * 2.5;
        assert!((lhs.matrix() - rhs).amax() < 1e-12);
    }

    #[test]
    fn aggregated_is_psd() {
        let tree = TaxTree::parse_newick("(((a,b),c),(d,e),f);").unwrap();
        let s = working_sigma_u(6, 1.0, 5).unwrap();
        let m = aggregate_sigma(&s, &tree.aggregation()).unwrap();
        assert!(crate::linalg::min_eigenvalue(m.matrix()) > -1e-10);
    }
}
