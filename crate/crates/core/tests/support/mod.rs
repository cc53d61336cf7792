//! Reference computations shared by the oracle tests and the acceptance
//! suite. Each check panics on a structural mismatch and returns the worst
//! numerical discrepancy it saw.
#![allow(dead_code)]

use jackstraw_core::engine::{count_at_least, empirical_p_values};
use jackstraw_core::significance::ks_deviations;
use jackstraw_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Fitted values of least squares under `γ C = a`, solving the KKT system
/// directly.
pub fn constrained_fit(y: &DVector<f64>, w: &DMatrix<f64>, c: &DMatrix<f64>, a: &DVector<f64>) -> DVector<f64> {
    let r = w.nrows();
    let q = c.ncols();
    let mut kkt = DMatrix::zeros(r + q, r + q);
    kkt.view_mut((0, 0), (r, r)).copy_from(&(w * w.transpose()));
    kkt.view_mut((0, r), (r, q)).copy_from(c);
    kkt.view_mut((r, 0), (q, r)).copy_from(&c.transpose());
    let mut rhs = DVector::zeros(r + q);
    rhs.rows_mut(0, r).copy_from(&(w * y));
    rhs.rows_mut(r, q).copy_from(a);
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
    w.transpose() * sol.rows(0, r)
}

pub fn unconstrained_fit(y: &DVector<f64>, w: &DMatrix<f64>) -> DVector<f64> {
    let gram = w * w.transpose();
    w.transpose() * gram.lu().solve(&(w * y)).unwrap()
}

/// Worst relative error of `f_statistic` against the KKT fit over random
/// full, subset and general linear hypotheses with n <= 30, r <= 4.
pub fn f_statistic_oracle(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let r = rng.random_range(1..=4);
        let n = rng.random_range(r + 2..=30);
        let raw = gaussian(r, n, &mut rng);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (spec, c, a) = match trial % 3 {
            0 => (HypothesisSpec::full(r), DMatrix::identity(r, r), DVector::zeros(r)),
            1 => {
                let k = rng.random_range(1..=r);
                let mut idx: Vec<usize> = (1..=r).collect();
                idx.shuffle(&mut rng);
                idx.truncate(k);
                let mut c = DMatrix::zeros(r, k);
                for (col, &t) in idx.iter().enumerate() {
                    c[(t - 1, col)] = 1.0;
                }
                (HypothesisSpec::subset(r, idx), c, DVector::zeros(k))
            }
            _ => {
                let q = rng.random_range(1..=r);
                let c = gaussian(r, q, &mut rng);
                let a = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
                let spec = HypothesisSpec {
                    r,
                    rotation: None,
                    constraint: Constraint::LinearConstraint {
                        c_matrix: (0..r).map(|i| c.row(i).iter().copied().collect()).collect(),
                        a_vector: a.iter().copied().collect(),
                    },
                };
                (spec, c, a)
            }
        };
        let res = f_statistic(&y, &raw, &spec).unwrap();
        let fit1 = unconstrained_fit(&y, &raw);
        let fit0 = constrained_fit(&y, &raw, &c, &a);
        let rss1 = (&y - &fit1).norm_squared();
        // Nested fits: RSS₀ − RSS₁ = ‖ŷ₁ − ŷ₀‖², without cancellation.
        let delta = (&fit1 - &fit0).norm_squared();
        let q = c.ncols() as f64;
        let oracle = (delta / q) / (rss1 / (n - r) as f64);
        let rel = (res.f_value - oracle).abs() / oracle.abs().max(1e-300);
        worst = worst.max(rel);
        assert_eq!(res.df_den, n - r);
        assert_eq!(res.df_num, c.ncols());
        assert!((res.rss_unconstrained - rss1).abs() <= 1e-9 * rss1.max(1.0));
    }
    worst

}

/// `(D⁺, D⁻)` by evaluating the empirical CDF at every sample point
/// and just below it, counting directly.
pub fn ecdf_deviations(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mut dp: f64 = 0.0;
    let mut dm: f64 = 0.0;
    for &x in sample {
        let at = sample.iter().filter(|&&v| v <= x).count() as f64 / n;
        let below = sample.iter().filter(|&&v| v < x).count() as f64 / n;
        dp = dp.max(at - x);
        dm = dm.max(x - below);
    }
    (dp, dm)
}

/// Worst absolute error of the KS deviations against the ECDF scan over
/// samples of size 1..=20, with ties.
pub fn ks_oracle(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.random_range(1..=20);
        let mut sample: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if n > 3 {
            // Exercise ties.
            sample[1] = sample[0];
            sample[3] = (sample[3] * 4.0).round() / 4.0;
        }
        let (dp, dm) = ks_deviations(&sample);
        let (op, om) = ecdf_deviations(&sample);
        worst = worst.max((dp - op).abs()).max((dm - om).abs());
        let two = ks_uniform(&sample, KsSide::TwoSided).unwrap();
        worst = worst.max((two.statistic - op.max(om)).abs());
    }

    worst
}

/// Number of counts or p-values differing from a naive scan over `pools`
/// random null pools with ties and infinities.
pub fn counting_oracle(pools: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..pools {
        let len = rng.random_range(100..2000);
        let mut pool: Vec<f64> = (0..len)
            .map(|_| (rng.random::<f64>() * 50.0).round() / 10.0)
            .collect();
        if rng.random_bool(0.5) {
            pool[0] = f64::INFINITY;
        }
        let mut observed: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 60.0).round() / 10.0).collect();
        observed.push(f64::INFINITY);
        observed.push(pool[1]);
        let mut sorted = pool.clone();
        sorted.sort_by(f64::total_cmp);
        for pseudo in [false, true] {
            let p = empirical_p_values(&observed, &pool, pseudo);
            for (f, p) in observed.iter().zip(&p) {
                let naive = pool.iter().filter(|&&z| z >= *f).count();
                mismatches += usize::from(count_at_least(&sorted, *f) != naive);
                let expect = if pseudo {
                    (naive + 1) as f64 / (len + 1) as f64
                } else {
                    naive as f64 / len as f64
                };
                mismatches += usize::from(*p != expect);
            }
        }
    }

    mismatches
}
