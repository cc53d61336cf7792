//! Simulation from the latent variable model `Y = B·L + E` and evaluation of
//! testing methods by the joint null criterion: in every simulated study the
//! p-values of the truly null rows should be jointly Uniform(0,1).
//!
//! For each study a KS test compares the null p-values with Uniform(0,1);
//! a second ("double") KS test then checks the collection of per-study KS
//! p-values for a pile-up near zero.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_conventional_f, run_delete_s, run_jackstraw, JackstrawConfig};
use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::linear_model::HypothesisSpec;
use crate::matrix::DataMatrix;
use crate::rng::{self, Domain};
use crate::significance::{self, double_ks, ks_uniform, KsResult, KsSide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentShape {
    /// `(+1,…,+1,−1,…,−1)/√n`: a mean shift between two halves.
    Dichotomous,
    /// One period of `sin(2πj/n)`, scaled to unit norm.
    Sinusoidal,
    /// Two orthogonal square waves (`r = 2`).
    TwoFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDist {
    /// Non-null coefficients are all 1.
    Bernoulli,
    /// Non-null coefficients are drawn from Uniform(0,1).
    Uniform01,
}

/// Numbers of rows tied to `L₁`, to `L₂`, and to both (a subset of each).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoFactorCounts {
    pub l1: usize,
    pub l2: usize,
    pub both: usize,
}

impl TwoFactorCounts {
    /// 100 / 60 / 40 per thousand rows.
    pub fn scaled(m: usize) -> Self {
        let scale = |k: f64| (k * m as f64 / 1000.0).round() as usize;
        TwoFactorCounts {
            l1: scale(100.0),
            l2: scale(60.0),
            both: scale(40.0),
        }
    }

    /// Rows associated with at least one factor.
    pub fn distinct(&self) -> usize {
        self.l1 + self.l2 - self.both
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub l_shape: LatentShape,
    pub b_dist: EffectDist,
    pub m: usize,
    pub n: usize,
    /// Fraction of null rows (single-factor shapes).
    pub pi0: f64,
    pub noise_sd: f64,
    pub studies: usize,
    pub seed: u64,
    /// Row counts for [`LatentShape::TwoFactor`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_factor: Option<TwoFactorCounts>,
}

/// Studies per scenario used unless asked otherwise.
pub const DEFAULT_STUDIES: usize = 100;

impl ScenarioConfig {
    /// Scenario `id` in `1..=16` of the full factorial grid
    /// shape × effect distribution × m × π₀, with π₀ varying fastest.
    /// Scenario 1 is dichotomous, Uniform(0,1) effects, m = 1000, π₀ = 0.95.
    pub fn grid(id: usize) -> Result<Self> {
        if !(1..=16).contains(&id) {
            return Err(Error::InvalidConfig(format!("scenario {id} outside 1..=16")));
        }
        let k = id - 1;
        let l_shape = [LatentShape::Dichotomous, LatentShape::Sinusoidal][k / 8];
        let b_dist = [EffectDist::Uniform01, EffectDist::Bernoulli][(k / 4) % 2];
        let m = [1000, 5000][(k / 2) % 2];
        let pi0 = [0.95, 0.75][k % 2];
        Ok(ScenarioConfig {
            l_shape,
            b_dist,
            m,
            n: 20,
            pi0,
            noise_sd: 1.0,
            studies: DEFAULT_STUDIES,
            seed: id as u64,
            two_factor: None,
        })
    }

    pub fn all_grid() -> Vec<Self> {
        (1..=16).map(|id| Self::grid(id).expect("valid id")).collect()
    }

    /// Two latent factors, testing the first while adjusting for the second.
    pub fn two_factor(m: usize) -> Self {
        ScenarioConfig {
            l_shape: LatentShape::TwoFactor,
            b_dist: EffectDist::Uniform01,
            m,
            n: 20,
            pi0: 1.0 - TwoFactorCounts::scaled(m).l1 as f64 / m as f64,
            noise_sd: 1.0,
            studies: DEFAULT_STUDIES,
            seed: 17,
            two_factor: Some(TwoFactorCounts::scaled(m)),
        }
    }

    /// `"1"`..`"16"` or `"2pc"`.
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "2pc" | "two-pc" | "two_factor" => Ok(Self::two_factor(1000)),
            other => other
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("unknown scenario '{other}'")))
                .and_then(Self::grid),
        }
    }

    pub fn rank(&self) -> usize {
        match self.l_shape {
            LatentShape::TwoFactor => 2,
            _ => 1,
        }
    }

    fn counts(&self) -> TwoFactorCounts {
        self.two_factor.unwrap_or_else(|| TwoFactorCounts::scaled(self.m))
    }

    /// Number of rows with every coefficient zero.
    pub fn null_count(&self) -> usize {
        match self.l_shape {
            LatentShape::TwoFactor => self.m - self.counts().distinct(),
            _ => (self.pi0 * self.m as f64).round() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidConfig("n must be at least 4".into()));
        }
        if self.studies == 0 {
            return Err(Error::InvalidConfig("at least one study is required".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig("noise_sd must be finite and nonnegative".into()));
        }
        match self.l_shape {
            LatentShape::TwoFactor => {
                let c = self.counts();
                if c.both > c.l1 || c.both > c.l2 || c.distinct() >= self.m || c.l1 == 0 {
                    return Err(Error::InvalidConfig(format!("inconsistent two-factor counts {c:?}")));
                }
            }
            _ => {
                if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
                    return Err(Error::InvalidConfig("pi0 must lie in (0, 1)".into()));
                }
                if self.m as f64 * (1.0 - self.pi0) < 1.0 || self.null_count() >= self.m {
                    return Err(Error::InvalidConfig("no non-null rows".into()));
                }
            }
        }
        if self.m < 2 * self.rank() + 2 {
            return Err(Error::InvalidConfig("too few rows".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{:?}/m={}/n={}/pi0={}",
            self.l_shape, self.b_dist, self.m, self.n, self.pi0
        )
    }
}

/// `r x n` latent basis with unit-norm rows.
///
/// For odd `n` the square waves split at `⌊n/2⌋` (and quarters at
/// `⌊4j/n⌋`), so rows keep unit norm but lose exact centering/orthogonality.
pub fn make_latent_basis(shape: LatentShape, n: usize) -> DMatrix<f64> {
    let scale = 1.0 / (n as f64).sqrt();
    let half = |j: usize| if 2 * j < n { scale } else { -scale };
    match shape {
        LatentShape::Dichotomous => DMatrix::from_fn(1, n, |_, j| half(j)),
        LatentShape::Sinusoidal => {
            let raw = DMatrix::from_fn(1, n, |_, j| {
                (2.0 * std::f64::consts::PI * j as f64 / n as f64).sin()
            });
            let norm = raw.norm();
            raw / norm
        }
        LatentShape::TwoFactor => DMatrix::from_fn(2, n, |i, j| {
            if i == 0 {
                half(j)
            } else if (4 * j / n).is_multiple_of(2) {
                scale
            } else {
                -scale
            }
        }),
    }
}

/// One simulated data set with its ground truth.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub y: DataMatrix,
    /// `true` where every coefficient of the row is zero.
    pub true_null_mask: Vec<bool>,
    pub l_true: DMatrix<f64>,
    /// `m x r` coefficients.
    pub b_true: DMatrix<f64>,
}

impl StudyData {
    /// Rows whose coefficients on the listed (1-based) factors are all zero.
    pub fn null_mask_for(&self, tested: &[usize]) -> Vec<bool> {
        (0..self.b_true.nrows())
            .map(|i| tested.iter().all(|&k| self.b_true[(i, k - 1)] == 0.0))
            .collect()
    }
}

fn draw_effect(dist: EffectDist, rng: &mut impl Rng) -> f64 {
    match dist {
        EffectDist::Bernoulli => 1.0,
        EffectDist::Uniform01 => loop {
            let b: f64 = rng.random();
            if b > 0.0 {
                break b;
            }
        },
    }
}

/// Simulates study `study_index` of `cfg`. Non-null rows come first.
pub fn generate_study(cfg: &ScenarioConfig, study_index: usize) -> Result<StudyData> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, Domain::Study, study_index as u64);
    let l = make_latent_basis(cfg.l_shape, cfg.n);
    let r = l.nrows();
    let mut b = DMatrix::zeros(cfg.m, r);
    match cfg.l_shape {
        LatentShape::TwoFactor => {
            let c = cfg.counts();
            let l1_only = c.l1 - c.both;
            for i in 0..c.distinct() {
                if i < c.l1 {
                    b[(i, 0)] = draw_effect(cfg.b_dist, &mut rng);
                }
                if i >= l1_only {
                    b[(i, 1)] = draw_effect(cfg.b_dist, &mut rng);
                }
            }
        }
        _ => {
            for i in 0..cfg.m - cfg.null_count() {
                b[(i, 0)] = draw_effect(cfg.b_dist, &mut rng);
            }
        }
    }
    let signal = &b * &l;
    let y = DMatrix::from_fn(cfg.m, cfg.n, |i, j| {
        let e: f64 = rng.sample(StandardNormal);
        signal[(i, j)] + cfg.noise_sd * e
    });
    let row_ids = (1..=cfg.m).map(|i| format!("v{i}")).collect();
    let col_ids = (1..=cfg.n).map(|j| format!("o{j}")).collect();
    let true_null_mask = (0..cfg.m).map(|i| b.row(i).iter().all(|v| *v == 0.0)).collect();
    Ok(StudyData {
        y: DataMatrix::new(y, row_ids, col_ids)?,
        true_null_mask,
        l_true: l,
        b_true: b,
    })
}

/// A procedure producing one p-value per row of a study.
pub trait PValueMethod: Sync {
    fn label(&self) -> String;
    fn p_values(&self, study: &StudyData, spec: &HypothesisSpec, seed: u64) -> Result<Vec<f64>>;
}

/// The methods compared in the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// F reference distribution against the data's own components.
    ConventionalF,
    Jackstraw { s: usize, b: usize },
    /// Negative control.
    DeleteS { s: usize },
}

impl PValueMethod for Method {
    fn label(&self) -> String {
        match self {
            Method::ConventionalF => "conventional_f".into(),
            Method::Jackstraw { s, b } => format!("jackstraw_s{s}_b{b}"),
            Method::DeleteS { s } => format!("delete_s{s}"),
        }
    }

    fn p_values(&self, study: &StudyData, spec: &HypothesisSpec, seed: u64) -> Result<Vec<f64>> {
        let res = match *self {
            Method::ConventionalF => run_conventional_f(&study.y, spec)?,
            Method::Jackstraw { s, b } => {
                run_jackstraw(&study.y, &JackstrawConfig::new(s, b, seed, spec.clone()))?
            }
            Method::DeleteS { s } => {
                run_delete_s(&study.y, &JackstrawConfig::new(s, 1, seed, spec.clone()))?
            }
        };
        Ok(res.p_values)
    }
}

/// Calibration of one method's null p-values in one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study: usize,
    pub null_count: usize,
    pub ks_one_sided: f64,
    pub ks_two_sided: f64,
    pub d_plus: f64,
    pub d: f64,
    /// Fraction of null p-values at or below 0.05.
    pub null_ecdf_005: f64,
    /// π̂₀ from all rows' p-values.
    pub pi0_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedStudy {
    pub study: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub studies: Vec<StudySummary>,
    /// Studies where the method failed; excluded from the double KS tests.
    pub failed: Vec<FailedStudy>,
    /// One-sided KS of the per-study one-sided KS p-values.
    pub double_ks: Option<KsResult>,
    /// One-sided KS of the per-study two-sided KS p-values.
    pub double_ks_two_sided: Option<KsResult>,
    pub mean_d_plus: f64,
    pub mean_null_ecdf_005: f64,
    pub mean_pi0_hat: f64,
}

impl MethodReport {
    pub fn ks_one_sided(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.ks_one_sided).collect()
    }

    pub fn ks_two_sided(&self) -> Vec<f64> {
        self.studies.iter().map(|s| s.ks_two_sided).collect()
    }

    /// `(uniform quantile, sorted one-sided KS p-value)` pairs for QQ plots.
    pub fn qq_points(&self) -> Vec<(f64, f64)> {
        let mut ps = self.ks_one_sided();
        ps.sort_by(f64::total_cmp);
        let k = ps.len() as f64;
        ps.into_iter()
            .enumerate()
            .map(|(i, p)| ((i as f64 + 0.5) / k, p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario_id: String,
    pub scenario: ScenarioConfig,
    pub spec: HypothesisSpec,
    pub methods: Vec<MethodReport>,
}

impl EvaluationReport {
    pub fn method(&self, label: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.label == label)
    }
}

/// Hypothesis tested for a scenario: all of the single factor, or the first
/// of two factors adjusting for the second.
pub fn scenario_hypothesis(cfg: &ScenarioConfig) -> HypothesisSpec {
    match cfg.l_shape {
        LatentShape::TwoFactor => HypothesisSpec::subset(2, vec![1]),
        _ => HypothesisSpec::full(1),
    }
}

/// Runs every method on every study of `cfg` and scores the null p-values.
pub fn run_joint_null_evaluation(
    scenario_id: &str,
    cfg: &ScenarioConfig,
    methods: &[&dyn PValueMethod],
) -> Result<EvaluationReport> {
    evaluate(scenario_id, cfg, &scenario_hypothesis(cfg), methods)
}

/// The two-factor scenario: nulls are rows not associated with `L₁`.
pub fn run_two_pc_evaluation(cfg: &ScenarioConfig, methods: &[&dyn PValueMethod]) -> Result<EvaluationReport> {
    if cfg.l_shape != LatentShape::TwoFactor {
        return Err(Error::InvalidConfig("two-PC evaluation needs the two-factor shape".into()));
    }
    evaluate("2pc", cfg, &HypothesisSpec::subset(2, vec![1]), methods)
}

fn evaluate(
    scenario_id: &str,
    cfg: &ScenarioConfig,
    spec: &HypothesisSpec,
    methods: &[&dyn PValueMethod],
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods to evaluate".into()));
    }
    let tested = match &spec.constraint {
        crate::linear_model::Constraint::SubsetNull { tested } => tested.clone(),
        _ => (1..=spec.r).collect(),
    };

    // outcome[study][method]
    let outcomes: Vec<Vec<std::result::Result<StudySummary, String>>> = (0..cfg.studies)
        .into_par_iter()
        .map(|k| -> Result<Vec<_>> {
            let study = generate_study(cfg, k)?;
            let mask = study.null_mask_for(&tested);
            let seed = rng::derive_seed(cfg.seed, Domain::Method, k as u64);
            Ok(methods
                .iter()
                .map(|method| {
                    method
                        .p_values(&study, spec, seed)
                        .and_then(|p| summarise(k, &p, &mask))
                        .map_err(|e| e.to_string())
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let reports = methods
        .iter()
        .enumerate()
        .map(|(j, method)| {
            let mut studies = Vec::new();
            let mut failed = Vec::new();
            for (k, row) in outcomes.iter().enumerate() {
                match &row[j] {
                    Ok(s) => studies.push(s.clone()),
                    Err(e) => {
                        log::warn!("{} failed on study {k}: {e}", method.label());
                        failed.push(FailedStudy {
                            study: k,
                            error: e.clone(),
                        });
                    }
                }
            }
            aggregate(method.label(), studies, failed)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvaluationReport {
        scenario_id: scenario_id.to_string(),
        scenario: cfg.clone(),
        spec: spec.clone(),
        methods: reports,
    })
}

fn summarise(study: usize, p_values: &[f64], null_mask: &[bool]) -> Result<StudySummary> {
    if p_values.len() != null_mask.len() {
        return Err(Error::InvalidData(format!(
            "method returned {} p-values for {} rows",
            p_values.len(),
            null_mask.len()
        )));
    }
    let nulls: Vec<f64> = p_values
        .iter()
        .zip(null_mask)
        .filter(|(_, &is_null)| is_null)
        .map(|(&p, _)| p)
        .collect();
    let one = ks_uniform(&nulls, KsSide::OneSidedAntiConservative)?;
    let two = ks_uniform(&nulls, KsSide::TwoSided)?;
    let below = nulls.iter().filter(|&&p| p <= 0.05).count();
    Ok(StudySummary {
        study,
        null_count: nulls.len(),
        ks_one_sided: one.p_value,
        ks_two_sided: two.p_value,
        d_plus: one.statistic,
        d: two.statistic,
        null_ecdf_005: below as f64 / nulls.len() as f64,
        pi0_hat: significance::estimate_pi0(p_values, &significance::default_lambda_grid())?,
    })
}

fn aggregate(label: String, studies: Vec<StudySummary>, failed: Vec<FailedStudy>) -> Result<MethodReport> {
    let mean = |f: fn(&StudySummary) -> f64| {
        if studies.is_empty() {
            f64::NAN
        } else {
            studies.iter().map(f).sum::<f64>() / studies.len() as f64
        }
    };
    let one: Vec<f64> = studies.iter().map(|s| s.ks_one_sided).collect();
    let two: Vec<f64> = studies.iter().map(|s| s.ks_two_sided).collect();
    Ok(MethodReport {
        double_ks: if one.is_empty() { None } else { Some(double_ks(&one)?) },
        double_ks_two_sided: if two.is_empty() { None } else { Some(double_ks(&two)?) },
        mean_d_plus: mean(|s| s.d_plus),
        mean_null_ecdf_005: mean(|s| s.null_ecdf_005),
        mean_pi0_hat: mean(|s| s.pi0_hat),
        label,
        studies,
        failed,
    })
}

/// Writes `report.json`, `ks_<method>.tsv` and `qq_<method>.tsv` into `dir`.
/// Returns the paths written.
pub fn write_report(dir: &Path, report: &EvaluationReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n")?;
    written.push(json);
    for m in &report.methods {
        let ks = dir.join(format!("ks_{}.tsv", m.label));
        let mut out = std::io::BufWriter::new(fs::File::create(&ks)?);
        writeln!(out, "study\tnull_count\tks_one_sided\tks_two_sided\td_plus\td")?;
        for s in &m.studies {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.study,
                s.null_count,
                format_f64(s.ks_one_sided),
                format_f64(s.ks_two_sided),
                format_f64(s.d_plus),
                format_f64(s.d)
            )?;
        }
        out.flush()?;
        written.push(ks);

        let qq = dir.join(format!("qq_{}.tsv", m.label));
        let mut out = std::io::BufWriter::new(fs::File::create(&qq)?);
        writeln!(out, "uniform_quantile\tks_one_sided")?;
        for (u, p) in m.qq_points() {
            writeln!(out, "{}\t{}", format_f64(u), format_f64(p))?;
        }
        out.flush()?;
        written.push(qq);
    }
    Ok(written)
}
