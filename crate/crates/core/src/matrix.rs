//! Data matrices, row-centering and SVD-based principal components.
//!
//! Rows are variables (e.g. genes) and columns are observations. All
//! decompositions are thin: for an `m x n` matrix only `min(m, n)` singular
//! triplets are ever formed.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use crate::error::{Error, Result};

/// Relative tolerance below which a row mean counts as zero.
const CENTERED_TOL: f64 = 1e-12;

/// An `m x n` matrix of observed variables with identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        let (m, n) = values.shape();
        if m < 2 || n < 3 {
            return Err(Error::InvalidData(format!(
                "need at least 2 rows and 3 columns, got {m} x {n}"
            )));
        }
        if row_ids.len() != m || col_ids.len() != n {
            return Err(Error::InvalidData(format!(
                "{} row ids and {} column ids for a {m} x {n} matrix",
                row_ids.len(),
                col_ids.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (idx % m, idx / m);
            return Err(Error::InvalidData(format!(
                "non-finite value at row '{}', column '{}'",
                row_ids[i], col_ids[j]
            )));
        }
        check_unique(&row_ids, "row")?;
        check_unique(&col_ids, "column")?;
        Ok(DataMatrix {
            values,
            row_ids,
            col_ids,
        })
    }

    /// Builds a matrix with generated identifiers `row1.., col1..`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let row_ids = (1..=values.nrows()).map(|i| format!("row{i}")).collect();
        let col_ids = (1..=values.ncols()).map(|j| format!("col{j}")).collect();
        Self::new(values, row_ids, col_ids)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidData("ragged rows".into()));
        }
        Self::from_values(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Replaces the numeric values, keeping identifiers.
    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> DataMatrix {
        debug_assert_eq!(values.shape(), self.values.shape());
        DataMatrix {
            values,
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
        }
    }

    /// True when every row mean is zero up to rounding.
    pub fn is_row_centered(&self) -> bool {
        let n = self.ncols() as f64;
        self.values.row_iter().all(|row| {
            let scale = row.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
            (row.sum() / n).abs() <= CENTERED_TOL * scale
        })
    }

    /// Identifiers of rows whose entries are all identical.
    pub fn degenerate_rows(&self) -> Vec<String> {
        self.values
            .row_iter()
            .zip(&self.row_ids)
            .filter(|(row, _)| row.iter().all(|v| *v == row[0]))
            .map(|(_, id)| id.clone())
            .collect()
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidData(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

/// Subtracts each row's mean from that row.
pub fn row_center(mat: &DataMatrix) -> Result<DataMatrix> {
    if mat.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite entries".into()));
    }
    let mut values = mat.values.clone();
    center_rows_in_place(&mut values);
    Ok(mat.with_values(values))
}

pub(crate) fn center_rows_in_place(values: &mut DMatrix<f64>) {
    let n = values.ncols() as f64;
    for mut row in values.row_iter_mut() {
        let mean = row.sum() / n;
        row.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Thin singular value decomposition of a row-centered matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaDecomposition {
    /// `m x k` left singular vectors (loadings), `k = min(m, n)`.
    pub u: DMatrix<f64>,
    /// Singular values, nonincreasing.
    pub d: DVector<f64>,
    /// `k x n` right singular vectors as rows.
    pub vt: DMatrix<f64>,
    /// Number of retained components.
    pub r: usize,
    /// Fraction of total variance carried by each component.
    pub pct_variance: Vec<f64>,
    /// Whether the input had to be centered before decomposition.
    pub centered_internally: bool,
}

impl PcaDecomposition {
    /// The same decomposition with a different number of retained components.
    pub fn with_rank(mut self, r: usize) -> Result<Self> {
        let k = self.d.len();
        if r == 0 || r > k {
            return Err(Error::InvalidRank { r, max: k });
        }
        self.r = r;
        Ok(self)
    }

    /// Loadings of the retained components (`m x r`).
    pub fn loadings(&self) -> DMatrix<f64> {
        self.u.columns(0, self.r).into_owned()
    }
}

/// Largest valid number of retained components for an `m x n` matrix.
pub fn max_rank(m: usize, n: usize) -> usize {
    m.min(n.saturating_sub(1))
}

/// Computes the thin SVD of `mat` (centering rows first if needed).
///
/// Right singular vectors are oriented so that each one's entry of largest
/// magnitude is positive (lowest index wins ties); the matching left
/// singular vector is flipped with it.
pub fn compute_pca(mat: &DataMatrix, r: usize) -> Result<PcaDecomposition> {
    let (m, n) = (mat.nrows(), mat.ncols());
    let max = max_rank(m, n);
    if r == 0 || r > max {
        return Err(Error::InvalidRank { r, max });
    }
    let degenerate = mat.degenerate_rows();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateRows(degenerate));
    }

    let centered_internally = !mat.is_row_centered();
    let mut y = mat.values.clone();
    if centered_internally {
        center_rows_in_place(&mut y);
    }

    let svd = nalgebra::linalg::SVD::try_new(y, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::DecompositionFailure("SVD did not converge".into()))?;
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::DecompositionFailure("SVD vectors missing".into())),
    };
    let d = svd.singular_values;
    let k = d.len();

    // Descending order; stable on ties so the result is reproducible.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut u_sorted = DMatrix::zeros(m, k);
    let mut vt_sorted = DMatrix::zeros(k, n);
    let mut d_sorted = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        vt_sorted.set_row(dst, &vt.row(src));
        d_sorted[dst] = d[src].max(0.0);
    }
    for flip in orient_rows(&mut vt_sorted) {
        u_sorted.column_mut(flip).neg_mut();
    }

    let total: f64 = d_sorted.iter().map(|x| x * x).sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidData("matrix has no variance after centering".into()));
    }
    let pct_variance = d_sorted.iter().map(|x| x * x / total).collect();

    Ok(PcaDecomposition {
        u: u_sorted,
        d: d_sorted,
        vt: vt_sorted,
        r,
        pct_variance,
        centered_internally,
    })
}

/// First `dec.r` right singular vectors as an `r x n` matrix.
pub fn top_pcs(dec: &PcaDecomposition) -> DMatrix<f64> {
    dec.vt.rows(0, dec.r).into_owned()
}

/// `(1-based component index, fraction of variance)` for every component.
pub fn scree_data(dec: &PcaDecomposition) -> Vec<(usize, f64)> {
    dec.pct_variance
        .iter()
        .enumerate()
        .map(|(k, &p)| (k + 1, p))
        .collect()
}

/// Flips rows so the entry of largest magnitude is positive. Returns the
/// indices of flipped rows.
pub(crate) fn orient_rows(vt: &mut DMatrix<f64>) -> Vec<usize> {
    let mut flipped = Vec::new();
    for i in 0..vt.nrows() {
        let mut best = 0;
        for j in 1..vt.ncols() {
            if vt[(i, j)].abs() > vt[(i, best)].abs() {
                best = j;
            }
        }
        if vt[(i, best)] < 0.0 {
            vt.row_mut(i).neg_mut();
            flipped.push(i);
        }
    }
    flipped
}

/// `YᵀY` for a data matrix stored with variables as columns (`n x m`).
pub(crate) fn gram_of_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

/// Top `r` right singular vectors of `Y` from the eigen-decomposition of its
/// Gram matrix `YᵀY`, oriented like [`compute_pca`].
///
/// The eigenvectors of `YᵀY` are exactly the right singular vectors of `Y`;
/// working on the `n x n` Gram matrix lets resampling loops update it in
/// `O(s n²)` instead of re-decomposing the full `m x n` matrix.
pub(crate) fn top_right_vectors_from_gram(gram: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    debug_assert!(r <= n);
    let eig = SymmetricEigen::try_new(gram.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::DecompositionFailure("eigen-decomposition did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::DecompositionFailure("non-finite eigenvalues".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vt = DMatrix::zeros(r, n);
    for (dst, &src) in order.iter().take(r).enumerate() {
        vt.set_row(dst, &eig.eigenvectors.column(src).transpose());
    }
    orient_rows(&mut vt);
    Ok(vt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_single_row() {
        let m = DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 7.0]]).unwrap();
        let c = row_center(&m).unwrap();
        assert_eq!(c.values().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert!(c.is_row_centered());
    }

    #[test]
    fn rejects_small_or_bad_input() {
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, f64::NAN, 3.0], vec![1.0, 2.0, 3.0]]).is_err());
        let dup = DataMatrix::new(
            DMatrix::from_element(2, 3, 1.0),
            vec!["a".into(), "a".into()],
            vec!["x".into(), "y".into(), "z".into()],
        );
        assert!(matches!(dup, Err(Error::InvalidData(_))));
    }

    #[test]
    fn constant_rows_are_reported() {
        let m = DataMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0, 0.0],
            vec![0.1, 0.1, 0.1, 0.1],
            vec![5.0, 1.0, 3.0, 2.0],
        ])
        .unwrap();
        match compute_pca(&m, 1) {
            Err(Error::DegenerateRows(ids)) => assert_eq!(ids, vec!["row2".to_string()]),
            other => panic!("expected DegenerateRows, got {other:?}"),
        }
    }

    #[test]
    fn all_rows_constant_is_invalid() {
        let m = DataMatrix::from_values(DMatrix::from_element(4, 5, 2.5)).unwrap();
        assert!(matches!(compute_pca(&m, 1), Err(Error::DegenerateRows(_))));
    }

    #[test]
    fn rank_bounds() {
        let m = DataMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0, 0.0],
            vec![0.5, 0.1, 0.9, 0.3],
            vec![5.0, 1.0, 3.0, 2.0],
        ])
        .unwrap();
        assert!(matches!(compute_pca(&m, 0), Err(Error::InvalidRank { .. })));
        assert!(matches!(compute_pca(&m, 4), Err(Error::InvalidRank { max: 3, .. })));
        assert!(compute_pca(&m, 3).is_ok());
    }

    #[test]
    fn orientation_makes_largest_entry_positive() {
        let mut vt = DMatrix::from_row_slice(2, 3, &[0.1, -0.9, 0.2, 0.5, -0.5, 0.1]);
        let flipped = orient_rows(&mut vt);
        assert_eq!(flipped, vec![0]);
        assert!(vt[(0, 1)] > 0.0);
        // tie between |0.5| and |-0.5| goes to the lower index, already positive
        assert_eq!(vt[(1, 0)], 0.5);
    }

    #[test]
    fn scree_of_rank_one() {
        let l = [1.0, -1.0, 2.0, -2.0, 0.0];
        let b = [1.0, 2.0, -3.0];
        let m = DataMatrix::from_values(DMatrix::from_fn(3, 5, |i, j| b[i] * l[j])).unwrap();
        let dec = compute_pca(&m, 1).unwrap();
        let scree = scree_data(&dec);
        assert_eq!(scree[0].0, 1);
        assert!((scree[0].1 - 1.0).abs() < 1e-12);
        assert!(scree[1..].iter().all(|(_, p)| *p < 1e-20));
    }
}
