//! Statistical significance of associations between variables and the
//! principal components estimated from them.
//!
//! The [`engine`] module implements the jackstraw: a small number of rows are
//! replaced by permuted "synthetic null" rows, components are recomputed, and
//! the association statistics of the synthetic rows form an empirical null
//! distribution that accounts for the over-fitting inherent in testing
//! variables against components built from those variables.
//!
//! ```no_run
//! use jackstraw_core::{compute_pca, run_jackstraw, io, HypothesisSpec, JackstrawConfig};
//!
//! let mat = io::read_matrix("expression.tsv".as_ref())?;
//! let config = JackstrawConfig::with_defaults(mat.nrows(), 1, HypothesisSpec::full(2));
//! let result = run_jackstraw(&mat, &config)?;
//! println!("{} p-values", result.p_values.len());
//! # Ok::<(), jackstraw_core::Error>(())
//! ```

pub mod engine;
pub mod error;
pub mod io;
pub mod linear_model;
pub mod matrix;
pub mod rng;
pub mod significance;
pub mod sim;

pub use engine::{
    run_conventional_f, run_delete_s, run_jackstraw, run_jackstraw_checkpointed,
    synthesize_null_rows, CheckpointOptions, JackstrawConfig, JackstrawResult, NullMode,
    TestMethod,
};
pub use error::{Error, Result};
pub use linear_model::{
    apply_rotation, f_statistic, fit_coefficients, Constraint, FStatResult, HypothesisSpec,
    LinearModel,
};
pub use matrix::{compute_pca, row_center, scree_data, top_pcs, DataMatrix, PcaDecomposition};
pub use significance::{
    bh_fdr, double_ks, estimate_pi0, ks_uniform, q_values, rank_sum_enrichment, FdrResult,
    KsResult, KsSide,
};
pub use sim::{
    generate_study, run_joint_null_evaluation, run_two_pc_evaluation, EvaluationReport, Method,
    PValueMethod, ScenarioConfig,
};

/// Re-exported so callers can build matrices without a direct dependency.
pub use nalgebra::{DMatrix, DVector};
