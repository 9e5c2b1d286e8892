//! Count tables, compositions and additive log-ratio coordinates.

use nalgebra::DMatrix;

use crate::error::{dim_err, Result, TarcoError};

pub const DEFAULT_PSEUDOCOUNT: f64 = 0.1;

/// Nonnegative pre-compositional counts, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: DMatrix<f64>,
    sample_ids: Vec<String>,
    taxa: Vec<String>,
}

impl CountMatrix {
    pub fn new(values: DMatrix<f64>, sample_ids: Vec<String>, taxa: Vec<String>) -> Result<Self> {
        if sample_ids.len() != values.nrows() {
            return Err(dim_err(
                "CountMatrix rows",
                values.nrows(),
                sample_ids.len(),
            ));
        }
        if taxa.len() != values.ncols() {
            return Err(dim_err("CountMatrix columns", values.ncols(), taxa.len()));
        }
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(TarcoError::Domain {
                        row: i + 1,
                        col: j + 1,
                        message: format!("count {v} is not a finite nonnegative number"),
                    });
                }
            }
        }
        Ok(Self {
            values,
            sample_ids,
            taxa,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    /// Reorders columns to `order`; the label sets must coincide.
    pub fn align_taxa<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.taxa.len() {
            return Err(TarcoError::Validation(format!(
                "count table has {} taxa but the tree has {} leaves",
                self.taxa.len(),
                order.len()
            )));
        }
        let mut cols = Vec::with_capacity(order.len());
        for label in order {
            let label = label.as_ref();
            let j = self.taxa.iter().position(|t| t == label).ok_or_else(|| {
                TarcoError::Validation(format!("tree leaf '{label}' missing from count table"))
            })?;
            cols.push(j);
        }
        let values = DMatrix::from_fn(self.values.nrows(), cols.len(), |i, k| {
            self.values[(i, cols[k])]
        });
        Ok(Self {
            values,
            sample_ids: self.sample_ids.clone(),
            taxa: order.iter().map(|s| s.as_ref().to_string()).collect(),
        })
    }
}

/// Rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    values: DMatrix<f64>,
    sample_ids: Vec<String>,
    taxa: Vec<String>,
}

impl CompositionMatrix {
    /// Wraps rows that already sum to one (within 1e-10).
    pub fn new(values: DMatrix<f64>, sample_ids: Vec<String>, taxa: Vec<String>) -> Result<Self> {
        for (i, row) in values.row_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > 1e-10 || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(TarcoError::Validation(format!(
                    "row {} is not on the simplex (sum {s})",
                    i + 1
                )));
            }
        }
        if sample_ids.len() != values.nrows() || taxa.len() != values.ncols() {
            return Err(dim_err(
                "CompositionMatrix labels",
                format!("{}x{}", values.nrows(), values.ncols()),
                format!("{}x{}", sample_ids.len(), taxa.len()),
            ));
        }
        Ok(Self {
            values,
            sample_ids,
            taxa,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }
}

/// ALR coordinates with the reference column stored as exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioMatrix {
    values: DMatrix<f64>,
    reference: usize,
}

impl LogRatioMatrix {
    pub fn new(values: DMatrix<f64>, reference: usize) -> Result<Self> {
        if reference >= values.ncols() {
            return Err(TarcoError::Validation(format!(
                "reference {} out of range for {} parts",
                reference + 1,
                values.ncols()
            )));
        }
        for (i, row) in values.row_iter().enumerate() {
            if row[reference] != 0.0 {
                return Err(TarcoError::Domain {
                    row: i + 1,
                    col: reference + 1,
                    message: "reference column must be zero".into(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(TarcoError::Domain {
                    row: i + 1,
                    col: j + 1,
                    message: "non-finite log-ratio".into(),
                });
            }
        }
        Ok(Self { values, reference })
    }

    /// Builds from the `n×(p−1)` matrix of non-reference coordinates.
    pub fn from_reduced(reduced: &DMatrix<f64>, reference: usize) -> Result<Self> {
        let p = reduced.ncols() + 1;
        if reference >= p {
            return Err(dim_err(
                "LogRatioMatrix::from_reduced",
                format!("reference < {p}"),
                reference,
            ));
        }
        let values = DMatrix::from_fn(reduced.nrows(), p, |i, j| match j.cmp(&reference) {
            std::cmp::Ordering::Less => reduced[(i, j)],
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => reduced[(i, j - 1)],
        });
        Self::new(values, reference)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// The `n×(p−1)` block with the reference column removed.
    pub fn reduced(&self) -> DMatrix<f64> {
        self.values.clone().remove_column(self.reference)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: crate::linalg::select_rows(&self.values, rows),
            reference: self.reference,
        }
    }
}

/// Replaces zero counts by `c`; nonzero entries are untouched.
pub fn apply_pseudocount(counts: &CountMatrix, c: f64) -> Result<CountMatrix> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(TarcoError::Validation(format!(
            "pseudocount must be positive, got {c}"
        )));
    }
    let values = counts.values.map(|v| if v == 0.0 { c } else { v });
    Ok(CountMatrix {
        values,
        sample_ids: counts.sample_ids.clone(),
        taxa: counts.taxa.clone(),
    })
}

/// Divides each row by its total.
pub fn close_composition(counts: &CountMatrix) -> Result<CompositionMatrix> {
    let mut values = counts.values.clone();
    for (i, mut row) in values.row_iter_mut().enumerate() {
        let s = row.sum();
        if s <= 0.0 {
            return Err(TarcoError::Validation(format!(
                "sample {} has zero total; apply a pseudocount first",
                i + 1
            )));
        }
        row /= s;
    }
    Ok(CompositionMatrix {
        values,
        sample_ids: counts.sample_ids.clone(),
        taxa: counts.taxa.clone(),
    })
}

/// `Z_ij = log X_ij − log X_i,ref`.
pub fn alr_transform(x: &CompositionMatrix, reference: usize) -> Result<LogRatioMatrix> {
    let (n, p) = x.values.shape();
    if reference >= p {
        return Err(TarcoError::Validation(format!(
            "reference {} out of range for {p} parts",
            reference + 1
        )));
    }
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            if x.values[(i, j)] <= 0.0 {
                return Err(TarcoError::Domain {
                    row: i + 1,
                    col: j + 1,
                    message: "composition entry must be positive for a log-ratio".into(),
                });
            }
        }
        let log_ref = x.values[(i, reference)].ln();
        for j in 0..p {
            if j != reference {
                z[(i, j)] = x.values[(i, j)].ln() - log_ref;
            }
        }
    }
    LogRatioMatrix::new(z, reference)
}

/// Row-wise softmax; the row maximum is subtracted before exponentiation.
pub fn alr_inverse(z: &LogRatioMatrix) -> CompositionMatrix {
    let mut values = z.values.clone();
    for mut row in values.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    let (n, p) = values.shape();
    CompositionMatrix {
        values,
        sample_ids: (1..=n).map(|i| format!("s{i}")).collect(),
        taxa: (1..=p).map(|j| format!("t{j}")).collect(),
    }
}

/// Column with the largest mean relative abundance; ties go to the lowest index.
pub fn select_reference(x: &CompositionMatrix) -> usize {
    let means = x.values.row_mean();
    let mut best = 0;
    for j in 1..means.len() {
        if means[j] > means[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn counts(m: DMatrix<f64>) -> CountMatrix {
        let (n, p) = m.shape();
        CountMatrix::new(
            m,
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..p).map(|j| format!("t{j}")).collect(),
        )
        .unwrap()
    }

    fn comp(m: DMatrix<f64>) -> CompositionMatrix {
        close_composition(&counts(m)).unwrap()
    }

    #[test]
    fn pseudocount_only_touches_zeros() {
        let c = apply_pseudocount(&counts(dmatrix![0.0, 5.0; 0.0, 0.0]), 0.1).unwrap();
        assert_eq!(c.values(), &dmatrix![0.1, 5.0; 0.1, 0.1]);
        let closed = close_composition(&c).unwrap();
        assert!((closed.values()[(1, 0)] - 0.5).abs() < 1e-15);
        assert!(apply_pseudocount(&c, 0.0).is_err());
        assert!(apply_pseudocount(&c, -1.0).is_err());
    }

    #[test]
    fn closure_examples() {
        assert_eq!(
            comp(dmatrix![1.0, 1.0, 2.0]).values(),
            &dmatrix![0.25, 0.25, 0.5]
        );
        assert_eq!(
            comp(dmatrix![0.25, 0.25, 0.5]).values(),
            &dmatrix![0.25, 0.25, 0.5]
        );
        let third = comp(dmatrix![0.1, 0.1, 0.1]);
        assert!(third.values().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(close_composition(&counts(dmatrix![0.0, 0.0])).is_err());
    }

    #[test]
    fn negative_count_rejected() {
        let err = CountMatrix::new(
            dmatrix![1.0, -2.0],
            vec!["a".into()],
            vec!["x".into(), "y".into()],
        );
        assert!(matches!(
            err,
            Err(TarcoError::Domain { row: 1, col: 2, .. })
        ));
    }

    #[test]
    fn alr_examples() {
        let z = alr_transform(&comp(dmatrix![0.5, 0.25, 0.25]), 2).unwrap();
        assert!((z.values()[(0, 0)] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(z.values()[(0, 1)], 0.0);
        assert_eq!(z.values()[(0, 2)], 0.0);
        let u = alr_transform(&comp(dmatrix![1.0, 1.0, 1.0, 1.0]), 1).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        let x = alr_inverse(&z);
        assert!((x.values() - dmatrix![0.5, 0.25, 0.25]).amax() < 1e-15);
        let bad = CompositionMatrix::new(
            dmatrix![0.0, 1.0],
            vec!["a".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        assert!(matches!(
            alr_transform(&bad, 1),
            Err(TarcoError::Domain { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn inverse_survives_huge_ratios() {
        let z = LogRatioMatrix::new(dmatrix![800.0, 0.0, -800.0], 1).unwrap();
        let x = alr_inverse(&z);
        assert!(x.values().iter().all(|v| v.is_finite()));
        assert!((x.values()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_selection() {
        let x = CompositionMatrix::new(
            dmatrix![0.1, 0.6, 0.3; 0.1, 0.6, 0.3],
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        assert_eq!(select_reference(&x), 1);
        assert_eq!(select_reference(&comp(dmatrix![1.0, 1.0])), 0);
        // column means of the closed table: (0.1238, 0.7429, 0.1333)
        let x = comp(dmatrix![1.0, 8.0, 1.0; 2.0, 6.0, 2.0; 1.0, 5.0, 1.0]);
        assert_eq!(select_reference(&x), 1);
    }

    #[test]
    fn reduced_roundtrip() {
        let z = LogRatioMatrix::new(dmatrix![1.0, 0.0, 2.0; 3.0, 0.0, 4.0], 1).unwrap();
        let back = LogRatioMatrix::from_reduced(&z.reduced(), 1).unwrap();
        assert_eq!(back, z);
        assert!(LogRatioMatrix::new(dmatrix![1.0, 2.0], 0).is_err());
    }

    #[test]
    fn align_reorders_columns() {
        let c = CountMatrix::new(
            dmatrix![1.0, 2.0, 3.0],
            vec!["s".into()],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let r = c.align_taxa(&["c", "a", "b"]).unwrap();
        assert_eq!(r.values(), &dmatrix![3.0, 1.0, 2.0]);
        assert!(c.align_taxa(&["c", "a", "d"]).is_err());
    }

    proptest! {
        #[test]
        fn alr_roundtrip(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..10.0, 5), 1..6), r in 0usize..5) {
            let n = rows.len();
            let m = DMatrix::from_fn(n, 5, |i, j| rows[i][j]);
            let x = comp(m);
            let z = alr_transform(&x, r).unwrap();
            let back = alr_inverse(&z);
            prop_assert!((back.values() - x.values()).amax() < 1e-10);
            for row in back.values().row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn closure_idempotent(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 4), 1..5)) {
            let n = rows.len();
            let m = DMatrix::from_fn(n, 4, |i, j| rows[i][j] + if j == 0 { 0.5 } else { 0.0 });
            let once = comp(m);
            let c2 = CountMatrix::new(once.values().clone(), once.sample_ids().to_vec(), once.taxa().to_vec()).unwrap();
            let twice = close_composition(&c2).unwrap();
            prop_assert!((twice.values() - once.values()).amax() < 1e-15);
        }
    }
}
