//! Per-variable regressions on a basis of principal components and F-tests of
//! linear hypotheses on the coefficients.
//!
//! A variable `y` (length `n`) is modelled as `y = γ·W + e`, where `W` is an
//! `r x n` basis (usually the top right singular vectors, optionally rotated).
//! Rows are assumed centered, so there is no intercept. The null hypothesis
//! is `γ C = a` for an `r x q` matrix `C`; testing a subset of components is
//! the special case where `C` picks the tested coordinates and `a = 0`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-8;
/// Residual sums of squares below this fraction of `‖y‖²` count as zero.
const PERFECT_FIT_REL: f64 = 1e-20;
/// Relative size of the smallest `R` diagonal entry below which a basis is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// The null space tested for each variable's coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// All `r` coefficients are zero.
    FullNull,
    /// The listed coefficients (1-based) are zero; the rest are adjustment
    /// components present under both hypotheses.
    SubsetNull { tested: Vec<usize> },
    /// `γ C = a` with `C` an `r x q` matrix of full column rank.
    LinearConstraint {
        c_matrix: Vec<Vec<f64>>,
        a_vector: Vec<f64>,
    },
}

/// Number of components, optional rotation and the hypothesis to test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub r: usize,
    /// Row-major `r x r` rotation applied to the basis before testing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<Vec<f64>>>,
    pub constraint: Constraint,
}

impl HypothesisSpec {
    /// Tests all `r` components jointly.
    pub fn full(r: usize) -> Self {
        HypothesisSpec {
            r,
            rotation: None,
            constraint: Constraint::FullNull,
        }
    }

    /// Tests the given 1-based components, adjusting for the others.
    pub fn subset(r: usize, tested: Vec<usize>) -> Self {
        HypothesisSpec {
            r,
            rotation: None,
            constraint: Constraint::SubsetNull { tested },
        }
    }

    pub fn with_rotation(mut self, rotation: &DMatrix<f64>) -> Self {
        self.rotation = Some(
            rotation
                .row_iter()
                .map(|row| row.iter().copied().collect())
                .collect(),
        );
        self
    }

    pub fn rotation_matrix(&self) -> Option<DMatrix<f64>> {
        self.rotation.as_ref().map(|rows| {
            let k = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            DMatrix::from_fn(k, c, |i, j| rows[i][j])
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidHypothesis("r must be positive".into()));
        }
        if let Some(rows) = &self.rotation {
            if rows.len() != self.r || rows.iter().any(|row| row.len() != self.r) {
                return Err(Error::InvalidRotation(format!(
                    "rotation must be {0} x {0}",
                    self.r
                )));
            }
            validate_rotation(&self.rotation_matrix().unwrap())?;
        }
        let (c, _) = self.constraint_matrices()?;
        let q = c.ncols();
        if q == 0 || q > self.r {
            return Err(Error::InvalidHypothesis(format!(
                "constraint has {q} columns for r = {}",
                self.r
            )));
        }
        let sv = c.clone().singular_values();
        let max = sv.max();
        if sv.min() <= RANK_TOL * max.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidHypothesis(
                "constraint matrix does not have full column rank".into(),
            ));
        }
        Ok(())
    }

    /// `(C, a)` such that the null hypothesis is `γ C = a`.
    pub fn constraint_matrices(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let r = self.r;
        match &self.constraint {
            Constraint::FullNull => Ok((DMatrix::identity(r, r), DVector::zeros(r))),
            Constraint::SubsetNull { tested } => {
                let tested = checked_indices(tested, r)?;
                let mut c = DMatrix::zeros(r, tested.len());
                for (col, &k) in tested.iter().enumerate() {
                    c[(k, col)] = 1.0;
                }
                Ok((c, DVector::zeros(tested.len())))
            }
            Constraint::LinearConstraint { c_matrix, a_vector } => {
                if c_matrix.len() != r {
                    return Err(Error::InvalidHypothesis(format!(
                        "constraint matrix has {} rows, expected {r}",
                        c_matrix.len()
                    )));
                }
                let q = a_vector.len();
                if c_matrix.iter().any(|row| row.len() != q) {
                    return Err(Error::InvalidHypothesis(
                        "constraint matrix columns must match the length of a".into(),
                    ));
                }
                Ok((
                    DMatrix::from_fn(r, q, |i, j| c_matrix[i][j]),
                    DVector::from_column_slice(a_vector),
                ))
            }
        }
    }

    /// Number of constraints `q` (numerator degrees of freedom).
    pub fn df_num(&self) -> usize {
        match &self.constraint {
            Constraint::FullNull => self.r,
            Constraint::SubsetNull { tested } => tested.len(),
            Constraint::LinearConstraint { a_vector, .. } => a_vector.len(),
        }
    }
}

/// Converts 1-based component indices to 0-based, rejecting duplicates.
fn checked_indices(tested: &[usize], r: usize) -> Result<Vec<usize>> {
    if tested.is_empty() {
        return Err(Error::InvalidHypothesis("no components tested".into()));
    }
    let mut out = Vec::with_capacity(tested.len());
    for &k in tested {
        if k == 0 || k > r {
            return Err(Error::InvalidHypothesis(format!(
                "component {k} outside 1..={r}"
            )));
        }
        if out.contains(&(k - 1)) {
            return Err(Error::InvalidHypothesis(format!("component {k} repeated")));
        }
        out.push(k - 1);
    }
    Ok(out)
}

/// Outcome of a nested-model F-test for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FStatResult {
    pub f_value: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub rss_constrained: f64,
    pub rss_unconstrained: f64,
}

/// Checks that `rotation` is orthonormal with determinant one.
pub fn validate_rotation(rotation: &DMatrix<f64>) -> Result<()> {
    let (k, c) = rotation.shape();
    if k != c || k == 0 {
        return Err(Error::InvalidRotation(format!("{k} x {c} is not square")));
    }
    if rotation.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let gram = rotation.transpose() * rotation;
    let err = (gram - DMatrix::<f64>::identity(k, k)).amax();
    if err > ORTHO_TOL {
        return Err(Error::InvalidRotation(format!(
            "RᵀR deviates from identity by {err:.3e}"
        )));
    }
    let det = rotation.determinant();
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidRotation(format!("determinant is {det}")));
    }
    Ok(())
}

/// Returns `R · basis` after validating `R`.
pub fn apply_rotation(basis: &DMatrix<f64>, rotation: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    validate_rotation(rotation)?;
    if rotation.ncols() != basis.nrows() {
        return Err(Error::InvalidRotation(format!(
            "{} x {} rotation cannot act on {} basis rows",
            rotation.nrows(),
            rotation.ncols(),
            basis.nrows()
        )));
    }
    Ok(rotation * basis)
}

/// Least-squares coefficients `γ̂` minimising `‖y − γ·basis‖²`.
pub fn fit_coefficients(y: &DVector<f64>, basis: &DMatrix<f64>) -> Result<DVector<f64>> {
    let design = Design::new(basis)?;
    check_len(y.len(), basis.ncols())?;
    let z = design.q.tr_mul(y);
    design
        .r
        .solve_upper_triangular(&z)
        .ok_or(Error::SingularBasis)
}

/// F-statistic comparing the unconstrained fit of `y` on `basis` with the fit
/// under the hypothesis in `spec`. The basis is rotated first when `spec`
/// carries a rotation.
pub fn f_statistic(y: &DVector<f64>, basis: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<FStatResult> {
    let model = LinearModel::new(basis, spec)?;
    check_len(y.len(), basis.ncols())?;
    model.test(y.as_slice())
}

fn check_len(len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::InvalidData(format!(
            "variable has {len} observations, basis has {n}"
        )));
    }
    Ok(())
}

/// Thin QR factorisation of the design `Wᵀ` (`n x r`).
#[derive(Debug, Clone)]
struct Design {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Design {
    fn new(basis: &DMatrix<f64>) -> Result<Self> {
        let (k, n) = basis.shape();
        if k == 0 || n <= k {
            return Err(Error::InvalidData(format!(
                "basis of {k} rows needs more than {k} observations, has {n}"
            )));
        }
        let qr = basis.transpose().qr();
        let (q, r) = qr.unpack();
        let diag = r.diagonal().abs();
        if diag.min() <= RANK_TOL * diag.max() || !diag.min().is_normal() {
            return Err(Error::SingularBasis);
        }
        Ok(Design { q, r })
    }
}

/// A basis and hypothesis prepared once so many variables can be tested
/// against them cheaply.
#[derive(Debug, Clone)]
pub struct LinearModel {
    q: DMatrix<f64>,
    /// Transposed orthonormal factor of `K = R⁻ᵀ C`, stored `q x r`.
    k_qt: DMatrix<f64>,
    /// Upper-triangular factor of `K`; `None` when `a = 0`.
    k_r: Option<DMatrix<f64>>,
    k_t: DMatrix<f64>,
    a: DVector<f64>,
    full_null: bool,
    n: usize,
    df_num: usize,
    df_den: usize,
}

impl LinearModel {
    /// Prepares `basis` (`r x n`, unrotated) for the tests described by `spec`.
    pub fn new(basis: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<Self> {
        spec.validate()?;
        if basis.nrows() != spec.r {
            return Err(Error::InvalidHypothesis(format!(
                "hypothesis has r = {}, basis has {} rows",
                spec.r,
                basis.nrows()
            )));
        }
        let rotated;
        let basis = match spec.rotation_matrix() {
            Some(rot) => {
                rotated = apply_rotation(basis, &rot)?;
                &rotated
            }
            None => basis,
        };
        Self::from_rotated(basis, spec)
    }

    /// Like [`LinearModel::new`] but `basis` has already been rotated.
    pub(crate) fn from_rotated(basis: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<Self> {
        let design = Design::new(basis)?;
        let (c, a) = spec.constraint_matrices()?;
        let n = basis.ncols();
        let r = basis.nrows();
        // K = R⁻ᵀ C, so that Cᵀγ̂ = Kᵀ Qᵀ y and Cᵀ(XᵀX)⁻¹C = KᵀK.
        let k = design
            .r
            .transpose()
            .solve_lower_triangular(&c)
            .ok_or(Error::SingularBasis)?;
        let (k_q, k_r) = k.clone().qr().unpack();
        let kd = k_r.diagonal().abs();
        if kd.min() <= RANK_TOL * kd.max() {
            return Err(Error::InvalidHypothesis(
                "constraint matrix does not have full column rank".into(),
            ));
        }
        let zero_a = a.iter().all(|v| *v == 0.0);
        Ok(LinearModel {
            q: design.q,
            k_qt: k_q.transpose(),
            k_r: (!zero_a).then_some(k_r),
            k_t: k.transpose(),
            a,
            full_null: matches!(spec.constraint, Constraint::FullNull),
            n,
            df_num: spec.df_num(),
            df_den: n - r,
        })
    }

    pub fn df_num(&self) -> usize {
        self.df_num
    }

    pub fn df_den(&self) -> usize {
        self.df_den
    }

    pub fn nobs(&self) -> usize {
        self.n
    }

    /// Full test result for one variable.
    pub fn test(&self, y: &[f64]) -> Result<FStatResult> {
        debug_assert_eq!(y.len(), self.n);
        let y = DVectorView::from_slice(y, self.n);
        let z = self.q.tr_mul(&y);
        let fitted = &self.q * &z;
        let rss1: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let yy = y.norm_squared();
        let extra = if self.full_null {
            (yy - rss1).max(0.0)
        } else {
            self.extra_ss(&z)?
        };
        let rss0 = if self.full_null { yy } else { rss1 + extra };
        if rss1 <= PERFECT_FIT_REL * yy || yy == 0.0 {
            return Err(Error::PerfectFit);
        }
        let f_value = (extra / self.df_num as f64) / (rss1 / self.df_den as f64);
        Ok(FStatResult {
            f_value,
            df_num: self.df_num,
            df_den: self.df_den,
            rss_constrained: rss0,
            rss_unconstrained: rss1,
        })
    }

    /// F value for one variable, with a perfect fit mapped to `+∞`.
    pub fn f_value(&self, y: &[f64]) -> Result<f64> {
        match self.test(y) {
            Ok(res) => Ok(res.f_value),
            Err(Error::PerfectFit) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Increase in RSS from imposing `γ C = a`, given `z = Qᵀ y`.
    fn extra_ss(&self, z: &DVector<f64>) -> Result<f64> {
        match &self.k_r {
            // a = 0: the increase is the squared projection of z onto span(K).
            None => Ok((&self.k_qt * z).norm_squared()),
            Some(k_r) => {
                let d = &self.k_t * z - &self.a;
                let w = k_r
                    .transpose()
                    .solve_lower_triangular(&d)
                    .ok_or(Error::SingularBasis)?;
                Ok(w.norm_squared())
            }
        }
    }
}

/// Upper-tail probability of an F distribution; `+∞` maps to 0.
pub fn f_distribution_sf(f: f64, df_num: usize, df_den: usize) -> f64 {
    if f == f64::INFINITY {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    let dist = FisherSnedecor::new(df_num as f64, df_den as f64)
        .expect("degrees of freedom are positive");
    dist.sf(f).clamp(0.0, 1.0)
}
