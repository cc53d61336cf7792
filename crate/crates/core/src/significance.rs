//! Goodness-of-fit tests against Uniform(0,1), false discovery rates and the
//! rank-sum enrichment test.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Largest sample size for which one-sided KS p-values are computed exactly.
pub const EXACT_ONE_SIDED_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsSide {
    /// `D = sup |F̂(x) − x|`.
    TwoSided,
    /// `D⁺ = sup (F̂(x) − x)`; large when p-values pile up near zero.
    OneSidedAntiConservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub side: KsSide,
    pub sample_size: usize,
}

fn check_unit_interval(sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::InvalidSample("empty sample".into()));
    }
    if let Some(bad) = sample.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidSample(format!("{bad} is outside [0, 1]")));
    }
    Ok(())
}

/// `(D⁺, D⁻)` of a sample against the Uniform(0,1) CDF.
pub fn ks_deviations(sample: &[f64]) -> (f64, f64) {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d_plus = 0.0_f64;
    let mut d_minus = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        d_plus = d_plus.max((i + 1) as f64 / n - x);
        d_minus = d_minus.max(x - i as f64 / n);
    }
    (d_plus, d_minus)
}

/// Kolmogorov-Smirnov test of `sample` against Uniform(0,1).
///
/// The two-sided p-value uses the asymptotic Kolmogorov distribution of
/// `√n·D`. The one-sided p-value is `exp(−2nD⁺²)` for `n > 20` and the exact
/// Birnbaum–Tingey tail otherwise.
pub fn ks_uniform(sample: &[f64], side: KsSide) -> Result<KsResult> {
    check_unit_interval(sample)?;
    let n = sample.len();
    let (d_plus, d_minus) = ks_deviations(sample);
    let (statistic, p_value) = match side {
        KsSide::TwoSided => {
            let d = d_plus.max(d_minus);
            (d, kolmogorov_sf((n as f64).sqrt() * d))
        }
        KsSide::OneSidedAntiConservative => {
            let p = if n <= EXACT_ONE_SIDED_MAX_N {
                one_sided_exact_sf(n, d_plus)
            } else {
                (-2.0 * n as f64 * d_plus * d_plus).exp()
            };
            (d_plus, p)
        }
    };
    Ok(KsResult {
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        side,
        sample_size: n,
    })
}

/// One-sided KS test applied to a collection of per-study KS p-values.
pub fn double_ks(ks_pvalues: &[f64]) -> Result<KsResult> {
    ks_uniform(ks_pvalues, KsSide::OneSidedAntiConservative)
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=50 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            cdf += term;
            if term < 1e-300 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Exact `P(D⁺ ≥ d)` for a sample of size `n` (Birnbaum–Tingey).
fn one_sided_exact_sf(n: usize, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    if d >= 1.0 {
        return 0.0;
    }
    let nf = n as f64;
    let jmax = (nf * (1.0 - d)).floor() as usize;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=jmax.min(n) {
        if j > 0 {
            binom *= (n - j + 1) as f64 / j as f64;
        }
        let jf = j as f64;
        let a = (1.0 - d - jf / nf).max(0.0);
        sum += binom * a.powi((n - j) as i32) * (d + jf / nf).powi(j as i32 - 1);
    }
    (d * sum).clamp(0.0, 1.0)
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn bh_fdr(p_values: &[f64]) -> Result<Vec<f64>> {
    if p_values.is_empty() {
        return Ok(Vec::new());
    }
    check_unit_interval(p_values)?;
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let candidate = p_values[i] * m as f64 / (rank0 + 1) as f64;
        running = running.min(candidate);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

/// `λ ∈ {0.05, 0.10, …, 0.95}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Storey's estimate of the proportion of true nulls, averaged over `lambda_grid`
/// and clipped to `[1/m, 1]`.
pub fn estimate_pi0(p_values: &[f64], lambda_grid: &[f64]) -> Result<f64> {
    check_unit_interval(p_values)?;
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidConfig("lambda grid must lie in (0, 1)".into()));
    }
    let m = p_values.len() as f64;
    let mean = lambda_grid
        .iter()
        .map(|&lambda| {
            let above = p_values.iter().filter(|&&p| p > lambda).count() as f64;
            above / (m * (1.0 - lambda))
        })
        .sum::<f64>()
        / lambda_grid.len() as f64;
    Ok(mean.clamp(1.0 / m, 1.0))
}

/// q-values: `π̂₀` times the Benjamini–Hochberg adjustment.
pub fn q_values(p_values: &[f64], pi0_hat: f64) -> Result<Vec<f64>> {
    if !(pi0_hat > 0.0 && pi0_hat <= 1.0) {
        return Err(Error::InvalidConfig(format!("pi0 {pi0_hat} outside (0, 1]")));
    }
    Ok(bh_fdr(p_values)?
        .into_iter()
        .map(|q| (q * pi0_hat).min(1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub q_values: Vec<f64>,
    pub pi0_hat: f64,
    pub lambda_grid: Vec<f64>,
}

/// π̂₀ over the default grid, then q-values.
pub fn fdr(p_values: &[f64]) -> Result<FdrResult> {
    let lambda_grid = default_lambda_grid();
    let pi0_hat = estimate_pi0(p_values, &lambda_grid)?;
    Ok(FdrResult {
        q_values: q_values(p_values, pi0_hat)?,
        pi0_hat,
        lambda_grid,
    })
}

/// Midranks (1-based) of `values`, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResult {
    /// Sum of member midranks in the pooled sample.
    pub rank_sum: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// One-sided Wilcoxon rank-sum test that members score higher than
/// non-members, with a permutation p-value `(#{T* ≥ T} + 1) / (B + 1)`.
pub fn rank_sum_enrichment(
    member_stats: &[f64],
    nonmember_stats: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<EnrichmentResult> {
    if member_stats.is_empty() || nonmember_stats.is_empty() {
        return Err(Error::InvalidSample("both groups must be nonempty".into()));
    }
    if permutations < 100 {
        return Err(Error::InvalidConfig("at least 100 permutations required".into()));
    }
    let pooled: Vec<f64> = member_stats.iter().chain(nonmember_stats).copied().collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidSample("NaN score".into()));
    }
    let ranks = midranks(&pooled);
    let k = member_stats.len();
    let observed: f64 = ranks[..k].iter().sum();
    if pooled.iter().all(|v| *v == pooled[0]) {
        return Ok(EnrichmentResult {
            rank_sum: observed,
            p_value: 1.0,
            permutations,
        });
    }
    let exceed = (0..permutations)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = rng::stream(seed, Domain::Permutation, b as u64);
            let sum: f64 = index::sample(&mut rng, ranks.len(), k)
                .iter()
                .map(|i| ranks[i])
                .sum();
            sum >= observed
        })
        .count();
    Ok(EnrichmentResult {
        rank_sum: observed,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_is_near_perfect() {
        let n = 200;
        let sample: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let two = ks_uniform(&sample, KsSide::TwoSided).unwrap();
        assert!(two.statistic <= 0.5 / n as f64 + 1e-15);
        assert!(two.p_value > 0.999);
        let one = ks_uniform(&sample, KsSide::OneSidedAntiConservative).unwrap();
        assert!(one.p_value > 0.99);
    }

    #[test]
    fn piled_at_zero_is_extreme() {
        let sample = vec![0.001; 100];
        let res = ks_uniform(&sample, KsSide::OneSidedAntiConservative).unwrap();
        assert!((res.statistic - 0.999).abs() < 1e-12);
        assert!(res.p_value < 1e-80);
    }

    #[test]
    fn all_ones_gives_zero_statistic() {
        let res = double_ks(&[1.0; 30]).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ks_uniform(&[0.5, 1.2], KsSide::TwoSided).is_err());
        assert!(ks_uniform(&[], KsSide::TwoSided).is_err());
        assert!(ks_uniform(&[f64::NAN], KsSide::TwoSided).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both expansions are valid everywhere; compare near the switch point
        for &lambda in &[0.9, 1.0, 1.1, 1.17, 1.19, 1.3] {
            let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
            let theta: f64 = (1..=50)
                .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
                .sum::<f64>()
                * (2.0 * std::f64::consts::PI).sqrt()
                / lambda;
            let alt: f64 = 2.0
                * (1..=100)
                    .map(|k| {
                        let t = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
                        if k % 2 == 1 { t } else { -t }
                    })
                    .sum::<f64>();
            assert!((1.0 - theta - alt).abs() < 1e-12, "λ = {lambda}");
            assert!((kolmogorov_sf(lambda) - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn one_sided_exact_small_cases() {
        // n = 1: P(D⁺ ≥ d) = P(1 − U ≥ d) = 1 − d
        for &d in &[0.1, 0.5, 0.9] {
            assert!((one_sided_exact_sf(1, d) - (1.0 - d)).abs() < 1e-14);
        }
    }

    #[test]
    fn bh_examples() {
        let adj = bh_fdr(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        for a in adj {
            assert!((a - 0.04).abs() < 1e-15);
        }
        assert_eq!(bh_fdr(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(bh_fdr(&[0.05]).unwrap(), vec![0.05]);
        // input order is preserved
        let adj = bh_fdr(&[0.04, 0.01]).unwrap();
        assert!((adj[0] - 0.04).abs() < 1e-15 && (adj[1] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn q_value_examples() {
        let q = q_values(&[0.02, 0.04], 0.5).unwrap();
        assert!((q[0] - 0.02).abs() < 1e-15 && (q[1] - 0.02).abs() < 1e-15);
        let p = [0.3, 0.001, 0.5, 0.02];
        assert_eq!(q_values(&p, 1.0).unwrap(), bh_fdr(&p).unwrap());
        assert!(q_values(&p, 0.0).is_err());
    }

    #[test]
    fn pi0_boundaries() {
        let zeros = vec![0.0; 50];
        let pi0 = estimate_pi0(&zeros, &default_lambda_grid()).unwrap();
        assert!((pi0 - 1.0 / 50.0).abs() < 1e-15);
        assert!(estimate_pi0(&[], &default_lambda_grid()).is_err());
        let ones = vec![1.0; 10];
        assert_eq!(estimate_pi0(&ones, &default_lambda_grid()).unwrap(), 1.0);
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn enrichment_degenerate_and_errors() {
        let r = rank_sum_enrichment(&[1.0, 1.0], &[1.0, 1.0, 1.0], 100, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(rank_sum_enrichment(&[], &[1.0], 100, 1).is_err());
        assert!(rank_sum_enrichment(&[1.0], &[2.0], 99, 1).is_err());
    }
}
