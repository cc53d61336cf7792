//! Fixtures shared by the benchmarks in `benches/`.

use jackstraw_core::{generate_study, DataMatrix, ScenarioConfig};

/// First study of grid scenario `id`, optionally truncated to `m` rows.
pub fn scenario_matrix(id: usize, m: Option<usize>) -> DataMatrix {
    let mut cfg = ScenarioConfig::grid(id).expect("grid scenario");
    if let Some(m) = m {
        cfg.m = m;
    }
    generate_study(&cfg, 0).expect("study").y
}
