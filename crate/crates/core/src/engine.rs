//! The jackstraw: empirical null distributions for association statistics
//! between variables and principal components estimated from those same
//! variables.
//!
//! Each iteration replaces `s` randomly chosen rows by independently permuted
//! copies, recomputes the top `r` right singular vectors of the perturbed
//! matrix, and records the F-statistics of the `s` synthetic rows. Pooled over
//! `B` iterations these `s·B` statistics form the null distribution against
//! which the observed F-statistics are ranked.
//!
//! Only `s` rows change per iteration, so the `n x n` Gram matrix `YᵀY` is
//! updated in `O(s n²)` and its eigenvectors give the right singular vectors
//! without touching the other `m − s` rows.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linear_model::{f_distribution_sf, HypothesisSpec, LinearModel};
use crate::matrix::{
    center_rows_in_place, gram_of_columns, max_rank, top_right_vectors_from_gram, DataMatrix,
};
use crate::rng::{self, Domain};

/// How synthetic null rows are generated from the selected rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMode {
    /// Permute every entry of the row independently of other rows.
    #[default]
    FullPermute,
    /// Keep the fit on the adjustment components and permute the residual.
    ResidualPermute,
    /// Keep the fit on the adjustment components and resample the residual
    /// with replacement.
    ResidualBootstrap,
}

impl std::str::FromStr for NullMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-permute" | "full_permute" => Ok(NullMode::FullPermute),
            "residual-permute" | "residual_permute" => Ok(NullMode::ResidualPermute),
            "residual-bootstrap" | "residual_bootstrap" => Ok(NullMode::ResidualBootstrap),
            other => Err(Error::InvalidConfig(format!("unknown null mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackstrawConfig {
    /// Synthetic null rows per iteration.
    pub s: usize,
    /// Number of iterations.
    pub b: usize,
    pub seed: u64,
    #[serde(default)]
    pub null_mode: NullMode,
    pub spec: HypothesisSpec,
    /// Report `(count + 1) / (s·B + 1)` instead of `count / (s·B)`.
    #[serde(default)]
    pub pseudocount: bool,
}

impl JackstrawConfig {
    pub fn new(s: usize, b: usize, seed: u64, spec: HypothesisSpec) -> Self {
        JackstrawConfig {
            s,
            b,
            seed,
            null_mode: NullMode::FullPermute,
            spec,
            pseudocount: false,
        }
    }

    /// `s = ⌈0.1·m⌉` and the smallest `B` with `s·B ≥ max(10·m, 10⁴)`.
    pub fn with_defaults(m: usize, seed: u64, spec: HypothesisSpec) -> Self {
        let s = default_s(m);
        let b = default_b(m, s);
        Self::new(s, b, seed, spec)
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        self.spec.validate()?;
        let max = max_rank(m, n);
        if self.spec.r > max {
            return Err(Error::InvalidRank {
                r: self.spec.r,
                max,
            });
        }
        if self.s == 0 || self.s > m / 2 {
            return Err(Error::InvalidConfig(format!(
                "s = {} must lie in 1..={} for {m} rows",
                self.s,
                m / 2
            )));
        }
        if self.b == 0 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        let pool = self.s * self.b;
        if pool < 100 {
            return Err(Error::InvalidConfig(format!(
                "s·B = {pool} null statistics; at least 100 are required"
            )));
        }
        if pool < 10 * m {
            log::warn!("s·B = {pool} is below 10·m = {}; p-values will be coarse", 10 * m);
        }
        if self.null_mode != NullMode::FullPermute && adjustment_dim(&self.spec)? == 0 {
            return Err(Error::InvalidMode(format!(
                "{:?} needs adjustment components, but the hypothesis tests all of them",
                self.null_mode
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// SHA-256 (hex) of the JSON encoding of `value`.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serialises");
    hex::encode(Sha256::digest(&json))
}

pub fn default_s(m: usize) -> usize {
    (m as f64 * 0.10).ceil().max(1.0) as usize
}

pub fn default_b(m: usize, s: usize) -> usize {
    let target = (10 * m).max(10_000);
    target.div_ceil(s.max(1))
}

/// SHA-256 over the shape, identifiers and value bits of a matrix.
pub fn input_digest(mat: &DataMatrix) -> String {
    let mut h = Sha256::new();
    h.update((mat.nrows() as u64).to_le_bytes());
    h.update((mat.ncols() as u64).to_le_bytes());
    for id in mat.row_ids().iter().chain(mat.col_ids()) {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            h.update(mat.values()[(i, j)].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullPoolSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// `(probability, quantile)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

impl NullPoolSummary {
    const PROBS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

    fn from_sorted(sorted: &[f64]) -> Self {
        let quantiles = Self::PROBS
            .iter()
            .map(|&p| (p, quantile_sorted(sorted, p)))
            .collect();
        NullPoolSummary {
            count: sorted.len(),
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
            quantiles,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    if lo == hi || a == b || b.is_infinite() {
        return if h - lo as f64 > 0.0 { b } else { a };
    }
    a + (h - lo as f64) * (b - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Jackstraw,
    DeleteS,
    ConventionalF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: TestMethod,
    pub config: Option<JackstrawConfig>,
    pub spec: HypothesisSpec,
    pub input_digest: String,
    pub config_digest: String,
    pub centered_internally: bool,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackstrawResult {
    /// Observed F-statistic per row; `+∞` marks a perfect fit.
    pub observed_f: Vec<f64>,
    pub p_values: Vec<f64>,
    pub null_pool: Option<NullPoolSummary>,
    /// Set for the delete-s variant, which is known not to give valid
    /// p-values and exists for comparison only.
    pub negative_control: bool,
    pub provenance: Provenance,
    /// Pooled null statistics in iteration order (`s·B` values).
    #[serde(skip)]
    pub null_stats: Vec<f64>,
}

/// `#{null ≥ f}` by binary search on an ascending pool.
pub fn count_at_least(sorted_pool: &[f64], f: f64) -> usize {
    sorted_pool.len() - sorted_pool.partition_point(|&x| x < f)
}

/// Empirical p-values of `observed` against an (unsorted) null pool.
pub fn empirical_p_values(observed: &[f64], null_pool: &[f64], pseudocount: bool) -> Vec<f64> {
    let mut sorted = null_pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    observed
        .iter()
        .map(|&f| {
            let c = count_at_least(&sorted, f) as f64;
            if pseudocount {
                (c + 1.0) / (total + 1.0)
            } else {
                c / total
            }
        })
        .collect()
}

/// Centered data stored with one variable per column (`n x m`), plus its Gram
/// matrix.
struct Prepared {
    x: DMatrix<f64>,
    gram: DMatrix<f64>,
    centered_internally: bool,
}

impl Prepared {
    fn new(mat: &DataMatrix) -> Result<Self> {
        let degenerate = mat.degenerate_rows();
        if !degenerate.is_empty() {
            return Err(Error::DegenerateRows(degenerate));
        }
        let centered_internally = !mat.is_row_centered();
        let mut y = mat.values().clone();
        if centered_internally {
            center_rows_in_place(&mut y);
        }
        let x = y.transpose();
        let gram = gram_of_columns(&x);
        Ok(Prepared {
            x,
            gram,
            centered_internally,
        })
    }

    fn m(&self) -> usize {
        self.x.ncols()
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn column(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[i * n..(i + 1) * n]
    }
}

/// Top-`r` basis from a Gram matrix, rotated per `spec`.
fn basis_from_gram(gram: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<DMatrix<f64>> {
    let vt = top_right_vectors_from_gram(gram, spec.r)?;
    Ok(match spec.rotation_matrix() {
        Some(rot) => rot * vt,
        None => vt,
    })
}

fn model_from_gram(gram: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<(DMatrix<f64>, LinearModel)> {
    let basis = basis_from_gram(gram, spec)?;
    let model = LinearModel::from_rotated(&basis, spec).map_err(|e| match e {
        Error::SingularBasis => Error::DecompositionFailure("degenerate principal components".into()),
        other => other,
    })?;
    Ok((basis, model))
}

/// Dimension of the adjustment subspace `{γ : γ C = 0}`.
fn adjustment_dim(spec: &HypothesisSpec) -> Result<usize> {
    let (c, _) = spec.constraint_matrices()?;
    Ok(spec.r - c.ncols())
}

/// Orthonormal basis (`n x k`, as columns) of the components that are
/// adjusted for rather than tested: the span of `γ·W` over `γ C = 0`.
pub fn adjustment_basis(basis: &DMatrix<f64>, spec: &HypothesisSpec) -> Result<Option<DMatrix<f64>>> {
    let (c, _) = spec.constraint_matrices()?;
    let (r, q) = c.shape();
    if q >= r {
        return Ok(None);
    }
    // Left singular vectors of C beyond the first q span the null space of Cᵀ.
    let full = c.clone().resize_horizontally(r, 0.0);
    let svd = full.svd(true, false);
    let u = svd.u.expect("U requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let null_dirs = DMatrix::from_fn(r, r - q, |i, j| u[(i, order[q + j])]);
    let span = basis.transpose() * null_dirs;
    let (qm, _) = span.qr().unpack();
    Ok(Some(qm))
}

/// Writes a synthetic null version of `y` into `out`.
fn synthesize_row(
    y: &[f64],
    mode: NullMode,
    adjustment: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) -> Result<()> {
    let n = y.len();
    match mode {
        NullMode::FullPermute => {
            out.copy_from_slice(y);
            out.shuffle(rng);
        }
        NullMode::ResidualPermute | NullMode::ResidualBootstrap => {
            let adj = adjustment.ok_or_else(|| {
                Error::InvalidMode(format!("{mode:?} requires adjustment components"))
            })?;
            let yv = DVector::from_column_slice(y);
            let fit = adj * adj.tr_mul(&yv);
            let resid = &yv - &fit;
            let mut shuffled = DVector::zeros(n);
            if mode == NullMode::ResidualPermute {
                shuffled.copy_from(&resid);
                shuffled.as_mut_slice().shuffle(rng);
            } else {
                for v in shuffled.iter_mut() {
                    *v = resid[rng.random_range(0..n)];
                }
                let mean = shuffled.mean();
                shuffled.add_scalar_mut(-mean);
            }
            // Resampled residuals are projected off the adjustment subspace so
            // the retained fit is exactly that of the original row.
            let leak = adj * adj.tr_mul(&shuffled);
            for (k, o) in out.iter_mut().enumerate() {
                *o = fit[k] + shuffled[k] - leak[k];
            }
        }
    }
    Ok(())
}

/// Replaces `row_indices` (0-based) of `mat` with synthetic null rows.
///
/// `adjustment` is an orthonormal `n x k` basis of the adjustment subspace
/// (see [`adjustment_basis`]); it is required for the residual modes.
pub fn synthesize_null_rows(
    mat: &DataMatrix,
    row_indices: &[usize],
    mode: NullMode,
    adjustment: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<DataMatrix> {
    let (m, n) = (mat.nrows(), mat.ncols());
    let mut seen = vec![false; m];
    for &i in row_indices {
        if i >= m {
            return Err(Error::InvalidIndex { index: i, rows: m });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidConfig(format!("row {i} selected twice")));
        }
    }
    if mode != NullMode::FullPermute && adjustment.is_none() {
        return Err(Error::InvalidMode(format!(
            "{mode:?} requires adjustment components"
        )));
    }
    let mut values = mat.values().clone();
    let mut row = vec![0.0; n];
    let mut out = vec![0.0; n];
    for &i in row_indices {
        row.iter_mut()
            .zip(mat.values().row(i).iter())
            .for_each(|(d, s)| *d = *s);
        synthesize_row(&row, mode, adjustment, rng, &mut out)?;
        for (j, v) in out.iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    Ok(mat.with_values(values))
}

/// Options for periodically saving the null pool so a run can be resumed.
#[derive(Debug, Clone)]
pub struct CheckpointOptions {
    pub path: PathBuf,
    /// Iterations between snapshots.
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub input_digest: String,
    pub config_digest: String,
    pub iterations_completed: usize,
    /// `None` encodes a perfect fit (`+∞`).
    pub null_stats: Vec<Option<f64>>,
}

impl Checkpoint {
    const FORMAT_VERSION: u32 = 1;

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn stats(&self) -> Vec<f64> {
        self.null_stats
            .iter()
            .map(|v| v.unwrap_or(f64::INFINITY))
            .collect()
    }
}

/// Runs the jackstraw on `mat` (rows centered internally if needed).
pub fn run_jackstraw(mat: &DataMatrix, config: &JackstrawConfig) -> Result<JackstrawResult> {
    run_jackstraw_checkpointed(mat, config, None)
}

/// [`run_jackstraw`] with optional resumable snapshots of the null pool.
pub fn run_jackstraw_checkpointed(
    mat: &DataMatrix,
    config: &JackstrawConfig,
    checkpoint: Option<&CheckpointOptions>,
) -> Result<JackstrawResult> {
    let prep = Prepared::new(mat)?;
    let (m, n) = (prep.m(), prep.n());
    config.validate(m, n)?;
    let spec = &config.spec;

    let (basis, model) = model_from_gram(&prep.gram, spec)?;
    let observed_f = (0..m)
        .into_par_iter()
        .map(|i| model.f_value(prep.column(i)))
        .collect::<Result<Vec<_>>>()?;
    let adjustment = match config.null_mode {
        NullMode::FullPermute => None,
        _ => adjustment_basis(&basis, spec)?,
    };

    let digest_in = input_digest(mat);
    let digest_cfg = config.digest();

    let mut start = 0;
    let mut null_stats: Vec<f64> = Vec::with_capacity(config.s * config.b);
    if let Some(opts) = checkpoint {
        if opts.path.exists() {
            let snap = Checkpoint::load(&opts.path)?;
            if snap.input_digest != digest_in || snap.config_digest != digest_cfg {
                return Err(Error::RefuseResume(format!(
                    "{} was written for a different input or configuration",
                    opts.path.display()
                )));
            }
            if snap.iterations_completed > config.b
                || snap.null_stats.len() != snap.iterations_completed * config.s
            {
                return Err(Error::RefuseResume(format!(
                    "{} is inconsistent with the configuration",
                    opts.path.display()
                )));
            }
            start = snap.iterations_completed;
            null_stats = snap.stats();
            log::info!("resuming from iteration {start}");
        }
    }

    let chunk = checkpoint.map_or(config.b, |o| o.every.max(1));
    while start < config.b {
        let end = (start + chunk).min(config.b);
        let batch = (start..end)
            .into_par_iter()
            .map(|b| null_iteration(&prep, config, adjustment.as_ref(), b))
            .collect::<Result<Vec<_>>>()?;
        null_stats.extend(batch.into_iter().flatten());
        start = end;
        if let Some(opts) = checkpoint {
            Checkpoint {
                format_version: Checkpoint::FORMAT_VERSION,
                input_digest: digest_in.clone(),
                config_digest: digest_cfg.clone(),
                iterations_completed: start,
                null_stats: null_stats
                    .iter()
                    .map(|&v| v.is_finite().then_some(v))
                    .collect(),
            }
            .save(&opts.path)?;
        }
    }

    let mut sorted = null_stats.clone();
    sorted.sort_by(f64::total_cmp);
    let p_values = empirical_p_values(&observed_f, &null_stats, config.pseudocount);

    Ok(JackstrawResult {
        observed_f,
        p_values,
        null_pool: Some(NullPoolSummary::from_sorted(&sorted)),
        negative_control: false,
        provenance: Provenance {
            method: TestMethod::Jackstraw,
            config: Some(config.clone()),
            spec: spec.clone(),
            input_digest: digest_in,
            config_digest: digest_cfg,
            centered_internally: prep.centered_internally,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        null_stats,
    })
}

/// One resampling iteration: `s` null F-statistics. A failed decomposition
/// is retried once with a fresh selection before giving up.
fn null_iteration(
    prep: &Prepared,
    config: &JackstrawConfig,
    adjustment: Option<&DMatrix<f64>>,
    b: usize,
) -> Result<Vec<f64>> {
    let mut rng = rng::stream(config.seed, Domain::Iteration, b as u64);
    match null_attempt(prep, config, adjustment, &mut rng) {
        Err(Error::DecompositionFailure(first)) => {
            log::warn!("iteration {b}: {first}; retrying with a new permutation");
            null_attempt(prep, config, adjustment, &mut rng).map_err(|e| match e {
                Error::DecompositionFailure(second) => Error::DecompositionFailure(format!(
                    "iteration {b} failed twice: {first}; {second}"
                )),
                other => other,
            })
        }
        other => other,
    }
}

fn null_attempt(
    prep: &Prepared,
    config: &JackstrawConfig,
    adjustment: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = prep.n();
    let rows = index::sample(rng, prep.m(), config.s);
    let mut synthetic = DMatrix::zeros(n, config.s);
    let mut gram = prep.gram.clone();
    for (k, i) in rows.iter().enumerate() {
        let y = prep.column(i);
        let out = &mut synthetic.as_mut_slice()[k * n..(k + 1) * n];
        synthesize_row(y, config.null_mode, adjustment, rng, out)?;
        for a in 0..n {
            for c in 0..n {
                gram[(a, c)] += out[a] * out[c] - y[a] * y[c];
            }
        }
    }
    let (_, model) = model_from_gram(&gram, &config.spec)?;
    (0..config.s)
        .map(|k| model.f_value(&synthetic.as_slice()[k * n..(k + 1) * n]))
        .collect()
}

/// Denominator degrees of freedom of the F reference distribution for
/// row-centered data: centering uses one degree of freedom in addition to
/// the `r` fitted coefficients.
pub fn reference_df_den(n: usize, r: usize) -> usize {
    n - r - 1
}

/// p-values from the F reference distribution against the top `r`
/// components of the data themselves (over-fits; for comparison).
pub fn run_conventional_f(mat: &DataMatrix, spec: &HypothesisSpec) -> Result<JackstrawResult> {
    let prep = Prepared::new(mat)?;
    let (m, n) = (prep.m(), prep.n());
    spec.validate()?;
    let max = max_rank(m, n);
    if spec.r > max {
        return Err(Error::InvalidRank { r: spec.r, max });
    }
    let (_, model) = model_from_gram(&prep.gram, spec)?;
    let observed_f = (0..m)
        .into_par_iter()
        .map(|i| model.f_value(prep.column(i)))
        .collect::<Result<Vec<_>>>()?;
    let df_den = reference_df_den(n, spec.r);
    let p_values = observed_f
        .iter()
        .map(|&f| parametric_p(f, model.df_num(), model.df_den(), df_den))
        .collect();
    Ok(JackstrawResult {
        observed_f,
        p_values,
        null_pool: None,
        negative_control: false,
        provenance: Provenance {
            method: TestMethod::ConventionalF,
            config: None,
            spec: spec.clone(),
            input_digest: input_digest(mat),
            config_digest: hex::encode(Sha256::digest(serde_json::to_vec(spec)?)),
            centered_internally: prep.centered_internally,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        null_stats: Vec::new(),
    })
}

/// Rescales an F value computed with `model_df_den` to `ref_df_den` and
/// returns its upper-tail probability.
fn parametric_p(f: f64, df_num: usize, model_df_den: usize, ref_df_den: usize) -> f64 {
    let f = f * ref_df_den as f64 / model_df_den as f64;
    f_distribution_sf(f, df_num, ref_df_den)
}

/// The delete-s variant: rows are split into disjoint blocks of `s`; each
/// block is tested against the top components of the remaining rows, with
/// p-values from the F reference distribution.
///
/// This procedure does not produce valid joint null p-values and is kept as
/// a negative control; the result is flagged accordingly.
pub fn run_delete_s(mat: &DataMatrix, config: &JackstrawConfig) -> Result<JackstrawResult> {
    let prep = Prepared::new(mat)?;
    let (m, n) = (prep.m(), prep.n());
    config.spec.validate()?;
    if config.s == 0 || config.s >= m {
        return Err(Error::InvalidConfig(format!(
            "s = {} must lie in 1..{m}",
            config.s
        )));
    }
    let max = max_rank(m - config.s, n);
    if config.spec.r > max {
        return Err(Error::InvalidRank {
            r: config.spec.r,
            max,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::stream(config.seed, Domain::Partition, 0));
    let blocks: Vec<&[usize]> = order.chunks(config.s).collect();
    let df_den = reference_df_den(n, config.spec.r);

    let per_block = blocks
        .par_iter()
        .map(|block| {
            let mut gram = prep.gram.clone();
            for &i in block.iter() {
                let y = prep.column(i);
                for a in 0..n {
                    for c in 0..n {
                        gram[(a, c)] -= y[a] * y[c];
                    }
                }
            }
            let (_, model) = model_from_gram(&gram, &config.spec)?;
            block
                .iter()
                .map(|&i| {
                    let f = model.f_value(prep.column(i))?;
                    Ok((i, f, parametric_p(f, model.df_num(), model.df_den(), df_den)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut observed_f = vec![0.0; m];
    let mut p_values = vec![1.0; m];
    for (i, f, p) in per_block.into_iter().flatten() {
        observed_f[i] = f;
        p_values[i] = p;
    }
    Ok(JackstrawResult {
        observed_f,
        p_values,
        null_pool: None,
        negative_control: true,
        provenance: Provenance {
            method: TestMethod::DeleteS,
            config: Some(config.clone()),
            spec: config.spec.clone(),
            input_digest: input_digest(mat),
            config_digest: config.digest(),
            centered_internally: prep.centered_internally,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        null_stats: Vec::new(),
    })
}

/// Number of delete-s blocks for `m` rows.
pub fn delete_s_blocks(m: usize, s: usize) -> usize {
    m.div_ceil(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn noise(m: usize, n: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = rand_distr::StandardNormal;
        DataMatrix::from_values(DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(dist))).unwrap()
    }

    #[test]
    fn defaults() {
        assert_eq!(default_s(1000), 100);
        assert_eq!(default_b(1000, 100), 100);
        assert_eq!(default_s(5000), 500);
        assert_eq!(default_b(5000, 500), 100);
        assert_eq!(default_b(200, 20), 500);
    }

    #[test]
    fn config_guards() {
        let spec = HypothesisSpec::full(1);
        assert!(JackstrawConfig::new(0, 200, 1, spec.clone()).validate(100, 10).is_err());
        assert!(JackstrawConfig::new(51, 200, 1, spec.clone()).validate(100, 10).is_err());
        assert!(JackstrawConfig::new(10, 9, 1, spec.clone()).validate(100, 10).is_err());
        assert!(JackstrawConfig::new(10, 10, 1, spec.clone()).validate(100, 10).is_ok());
        let mut residual = JackstrawConfig::new(10, 10, 1, spec);
        residual.null_mode = NullMode::ResidualPermute;
        assert!(matches!(residual.validate(100, 10), Err(Error::InvalidMode(_))));
        residual.spec = HypothesisSpec::subset(2, vec![1]);
        assert!(residual.validate(100, 10).is_ok());
    }

    #[test]
    fn counting_boundaries() {
        let pool = [0.5, 1.0, 2.0, 2.0, f64::INFINITY];
        let p = empirical_p_values(&[10.0, 2.0, 0.0, f64::INFINITY], &pool, false);
        assert_eq!(p, vec![0.2, 0.6, 1.0, 0.2]);
        let p = empirical_p_values(&[100.0], &[1.0, 2.0], false);
        assert_eq!(p, vec![0.0]);
        let p = empirical_p_values(&[100.0], &[1.0, 2.0], true);
        assert_eq!(p, vec![1.0 / 3.0]);
    }

    #[test]
    fn quantiles_of_sorted_pool() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        assert!((quantile_sorted(&s, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[1.0, f64::INFINITY], 0.75), f64::INFINITY);
    }

    #[test]
    fn full_permute_touches_only_selected_rows() {
        let mat = noise(8, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = synthesize_null_rows(&mat, &[1, 5], NullMode::FullPermute, None, &mut rng).unwrap();
        for i in 0..8 {
            let a: Vec<f64> = mat.values().row(i).iter().copied().collect();
            let b: Vec<f64> = out.values().row(i).iter().copied().collect();
            if i == 1 || i == 5 {
                let mut sa = a.clone();
                let mut sb = b.clone();
                sa.sort_by(f64::total_cmp);
                sb.sort_by(f64::total_cmp);
                assert_eq!(sa, sb);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn constant_row_permutes_to_itself() {
        let mat = DataMatrix::from_rows(&[vec![2.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = synthesize_null_rows(&mat, &[0], NullMode::FullPermute, None, &mut rng).unwrap();
        assert_eq!(out, mat);
    }

    #[test]
    fn synthesis_errors() {
        let mat = noise(4, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            synthesize_null_rows(&mat, &[4], NullMode::FullPermute, None, &mut rng),
            Err(Error::InvalidIndex { index: 4, rows: 4 })
        ));
        assert!(matches!(
            synthesize_null_rows(&mat, &[0], NullMode::ResidualPermute, None, &mut rng),
            Err(Error::InvalidMode(_))
        ));
    }

    #[test]
    fn adjustment_basis_for_subset() {
        let vt = DMatrix::from_row_slice(2, 4, &[0.5, 0.5, -0.5, -0.5, 0.5, -0.5, 0.5, -0.5]);
        let adj = adjustment_basis(&vt, &HypothesisSpec::subset(2, vec![1])).unwrap().unwrap();
        assert_eq!(adj.shape(), (4, 1));
        let dot: f64 = adj.column(0).dot(&vt.row(1).transpose());
        assert!((dot.abs() - 1.0).abs() < 1e-12);
        assert!(adjustment_basis(&vt, &HypothesisSpec::full(2)).unwrap().is_none());
    }

    #[test]
    fn small_run_is_well_formed() {
        let mat = noise(60, 8, 5);
        let cfg = JackstrawConfig::new(5, 30, 11, HypothesisSpec::full(1));
        let res = run_jackstraw(&mat, &cfg).unwrap();
        assert_eq!(res.null_stats.len(), 150);
        assert_eq!(res.null_pool.as_ref().unwrap().count, 150);
        assert!(res.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(!res.negative_control);
    }

    #[test]
    fn delete_s_partitions_rows() {
        let mat = noise(103, 8, 2);
        let cfg = JackstrawConfig::new(10, 1, 3, HypothesisSpec::full(1));
        let res = run_delete_s(&mat, &cfg).unwrap();
        assert_eq!(delete_s_blocks(103, 10), 11);
        assert!(res.negative_control);
        assert_eq!(res.p_values.len(), 103);
        assert!(res.observed_f.iter().all(|f| *f > 0.0));
    }
}
