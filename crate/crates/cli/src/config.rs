//! Run configuration, read from a JSON file and overridden by flags.

use std::path::{Path, PathBuf};

use jackstraw_core::NullMode;
use serde::{Deserialize, Serialize};

use crate::error::{with_path, CliError, CliResult};

/// Every setting a command may use. Unset fields fall back to the
/// command's defaults. The output directory and thread count are not
/// echoed into outputs, so results do not depend on them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub input_path: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub null_mode: Option<NullMode>,
    /// 1-based components to test; the rest of the top `r` are adjusted for.
    pub tested_pcs: Option<Vec<usize>>,
    pub rotation_path: Option<PathBuf>,
    pub fdr_threshold: Option<f64>,
    pub pseudocount: Option<bool>,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub checkpoint_every: Option<usize>,
    pub scenario: Option<String>,
    pub all_16: Option<bool>,
    pub two_pc: Option<bool>,
    pub studies: Option<usize>,
    pub study_index: Option<usize>,
    /// Methods to evaluate: `conventional`, `jackstraw`, `delete-s`.
    pub methods: Option<Vec<String>>,
    /// Block sizes for the delete-s method in `evaluate`.
    pub delete_s_sizes: Option<Vec<usize>>,
    pub scores_path: Option<PathBuf>,
    pub members_path: Option<PathBuf>,
    pub permutations: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $over:ident, $($field:ident),* $(,)?) => {
        RunConfig { $($field: $over.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = with_path(path, std::fs::read_to_string(path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay!(
            base, over, command, input_path, output_dir, r, s, b, seed, null_mode, tested_pcs,
            rotation_path, fdr_threshold, pseudocount, threads, checkpoint_path,
            checkpoint_every, scenario, all_16, two_pc, studies, study_index, methods,
            delete_s_sizes, scores_path, members_path, permutations,
        )
    }

    pub fn fdr(&self) -> CliResult<f64> {
        let t = self.fdr_threshold.unwrap_or(0.05);
        if t > 0.0 && t < 1.0 {
            Ok(t)
        } else {
            Err(CliError::Config(format!("fdr_threshold {t} must lie in (0, 1)")))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

pub(crate) fn require<'a, T>(value: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing required setting '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            r: Some(2),
            s: Some(10),
            seed: Some(5),
            ..Default::default()
        };
        let flags = RunConfig {
            s: Some(20),
            ..Default::default()
        };
        let merged = file.merge(flags);
        assert_eq!((merged.r, merged.s, merged.seed), (Some(2), Some(20), Some(5)));
    }

    #[test]
    fn echo_omits_location_and_threads() {
        let cfg = RunConfig {
            output_dir: Some("out".into()),
            threads: Some(8),
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("output_dir") && !json.contains("threads"));
        let back: RunConfig = serde_json::from_str(r#"{"threads": 3, "null_mode": "residual_permute"}"#).unwrap();
        assert_eq!(back.threads, Some(3));
        assert_eq!(back.null_mode, Some(NullMode::ResidualPermute));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn fdr_range() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.fdr().unwrap(), 0.05);
        cfg.fdr_threshold = Some(1.0);
        assert!(cfg.fdr().is_err());
    }
}
