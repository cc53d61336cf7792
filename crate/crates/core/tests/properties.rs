use jackstraw_core::engine::{adjustment_basis, empirical_p_values};
use jackstraw_core::io::{parse_matrix, write_matrix_to, Delimiter};
use jackstraw_core::significance::{default_lambda_grid, midranks};
use jackstraw_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix_strategy(
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(m, n)| {
        prop::collection::vec(-10.0f64..10.0, m * n)
            .prop_map(move |v| DMatrix::from_row_slice(m, n, &v))
    })
}

fn orthonormal_rows(r: usize, n: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, r, |_, _| rng.random::<f64>() - 0.5);
    g.qr().q().transpose()
}

fn rotation(r: usize, seed: u64) -> DMatrix<f64> {
    let mut q = orthonormal_rows(r, r, seed);
    if q.determinant() < 0.0 {
        q.row_mut(0).neg_mut();
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_is_oriented_and_orthonormal(values in matrix_strategy(4..=12, 4..=9)) {
        let mat = DataMatrix::from_values(values).unwrap();
        let r = jackstraw_core::matrix::max_rank(mat.nrows(), mat.ncols()).min(3);
        let dec = compute_pca(&mat, r).unwrap();
        let vt = top_pcs(&dec);
        let gram = &vt * vt.transpose();
        prop_assert!((gram - DMatrix::identity(r, r)).norm() < 1e-9);
        for k in 0..r {
            let row = vt.row(k);
            let (idx, _) = row.iter().enumerate().fold((0, 0.0f64), |best, (j, v)| {
                if v.abs() > best.1 + 1e-12 { (j, v.abs()) } else { best }
            });
            prop_assert!(row[idx] > 0.0);
        }
        for w in dec.d.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let total: f64 = scree_data(&dec).iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_statistic_invariants(
        y in prop::collection::vec(-5.0f64..5.0, 12),
        scale in prop::sample::select(vec![-3.0, 0.5, 7.0, 1e3]),
        seed in any::<u64>(),
    ) {
        let n = 12;
        let y = DVector::from_vec(y);
        let basis = orthonormal_rows(3, n, seed);
        let full = f_statistic(&y, &basis, &HypothesisSpec::full(3)).unwrap();
        prop_assert!(full.rss_constrained >= full.rss_unconstrained);
        prop_assert!(full.f_value >= 0.0);

        // Scale equivariance.
        let scaled = f_statistic(&(&y * scale), &basis, &HypothesisSpec::full(3)).unwrap();
        prop_assert!((scaled.f_value - full.f_value).abs() <= 1e-9 * full.f_value.max(1.0));

        // Rotation invariance of the full null.
        let rot = rotation(3, seed ^ 1);
        let spec = HypothesisSpec::full(3).with_rotation(&rot);
        let rotated = f_statistic(&y, &basis, &spec).unwrap();
        prop_assert!((rotated.f_value - full.f_value).abs() <= 1e-9 * full.f_value.max(1.0));

        // Monotone RSS: adding components never increases the residual.
        let mut prev = f64::INFINITY;
        for r in 1..=3 {
            let res = f_statistic(&y, &basis.rows(0, r).into_owned(), &HypothesisSpec::full(r)).unwrap();
            prop_assert!(res.rss_unconstrained <= prev + 1e-12);
            prev = res.rss_unconstrained;
        }

        // Identity linear constraint reproduces the full null.
        let eye = HypothesisSpec {
            r: 3,
            rotation: None,
            constraint: Constraint::LinearConstraint {
                c_matrix: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                a_vector: vec![0.0; 3],
            },
        };
        let lin = f_statistic(&y, &basis, &eye).unwrap();
        prop_assert!((lin.f_value - full.f_value).abs() <= 1e-10 * full.f_value.max(1.0));
    }

    #[test]
    fn residual_is_orthogonal_to_basis(
        y in prop::collection::vec(-5.0f64..5.0, 15),
        seed in any::<u64>(),
    ) {
        let basis = orthonormal_rows(4, 15, seed) * 3.0;
        let y = DVector::from_vec(y);
        let gamma = fit_coefficients(&y, &basis).unwrap();
        let resid = &y - basis.transpose() * gamma;
        prop_assert!((&basis * resid).amax() < 1e-8);
    }

    #[test]
    fn synthetic_rows_only_change_selected(
        values in matrix_strategy(6..=15, 4..=8),
        seed in any::<u64>(),
        mode in prop::sample::select(vec![NullMode::FullPermute, NullMode::ResidualPermute, NullMode::ResidualBootstrap]),
    ) {
        let mat = row_center(&DataMatrix::from_values(values).unwrap()).unwrap();
        let (m, n) = (mat.nrows(), mat.ncols());
        let spec = HypothesisSpec::subset(2, vec![1]);
        let vt = top_pcs(&compute_pca(&mat, 2).unwrap());
        let adj = adjustment_basis(&vt, &spec).unwrap();
        let rows: Vec<usize> = (0..m).step_by(2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = synthesize_null_rows(&mat, &rows, mode, adj.as_ref(), &mut rng).unwrap();
        for i in 0..m {
            if !rows.contains(&i) {
                prop_assert_eq!(out.values().row(i), mat.values().row(i));
            }
        }
        let adj = adj.unwrap();
        for &i in &rows {
            let before: Vec<f64> = mat.values().row(i).iter().copied().collect();
            let after: Vec<f64> = out.values().row(i).iter().copied().collect();
            match mode {
                NullMode::FullPermute => {
                    let mut a = before.clone();
                    let mut b = after.clone();
                    a.sort_by(f64::total_cmp);
                    b.sort_by(f64::total_cmp);
                    prop_assert_eq!(a, b);
                }
                _ => {
                    // The component along the adjustment subspace is kept.
                    let pb = adj.tr_mul(&DVector::from_vec(before));
                    let pa = adj.tr_mul(&DVector::from_vec(after.clone()));
                    prop_assert!((pb - pa).amax() < 1e-9);
                }
            }
            let mean: f64 = after.iter().sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn empirical_p_values_are_valid(
        observed in prop::collection::vec(0.0f64..20.0, 1..50),
        pool in prop::collection::vec(0.0f64..20.0, 100..300),
    ) {
        let p = empirical_p_values(&observed, &pool, false);
        let pc = empirical_p_values(&observed, &pool, true);
        for ((f, a), b) in observed.iter().zip(&p).zip(&pc) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!(*b > 0.0 && *b <= 1.0);
            // Larger statistics never get larger p-values.
            for (g, c) in observed.iter().zip(&p) {
                if g > f {
                    prop_assert!(c <= a);
                }
            }
        }
    }

    #[test]
    fn fdr_invariants(p in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        let bh = bh_fdr(&p).unwrap();
        let pi0 = estimate_pi0(&p, &default_lambda_grid()).unwrap();
        prop_assert!(pi0 >= 1.0 / p.len() as f64 - 1e-15 && pi0 <= 1.0);
        let q = q_values(&p, pi0).unwrap();
        for i in 0..p.len() {
            prop_assert!(bh[i] >= p[i] - 1e-15 && bh[i] <= 1.0);
            prop_assert!(q[i] <= bh[i] + 1e-15);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(bh[i] <= bh[j]);
                }
            }
        }
    }

    #[test]
    fn ks_p_values_in_range(sample in prop::collection::vec(0.0f64..=1.0, 1..100)) {
        for side in [KsSide::TwoSided, KsSide::OneSidedAntiConservative] {
            let res = ks_uniform(&sample, side).unwrap();
            prop_assert!((0.0..=1.0).contains(&res.p_value));
            prop_assert!((0.0..=1.0).contains(&res.statistic));
        }
    }

    #[test]
    fn midranks_sum(values in prop::collection::vec(prop::sample::select(vec![0.0, 1.0, 1.5, 2.0, 9.0]), 1..40)) {
        let ranks = midranks(&values);
        let n = values.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn written_matrices_read_back_exactly(values in matrix_strategy(2..=6, 3..=6)) {
        let mat = DataMatrix::from_values(values.map(|v| v * 1e-3 + 1.0 / 3.0)).unwrap();
        for delim in [Delimiter::Tab, Delimiter::Comma] {
            let mut buf = Vec::new();
            write_matrix_to(&mut buf, delim, "id", mat.row_ids(), mat.col_ids(), mat.values()).unwrap();
            let back = parse_matrix(std::str::from_utf8(&buf).unwrap(), delim).unwrap();
            prop_assert_eq!(&back, &mat);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn jackstraw_is_deterministic_across_pools(seed in any::<u64>(), threads in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let values = DMatrix::from_fn(40, 7, |_, _| rng.random::<f64>());
        let mat = DataMatrix::from_values(values).unwrap();
        let cfg = JackstrawConfig::new(4, 30, seed, HypothesisSpec::full(1));
        let run = |t: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap()
                .install(|| run_jackstraw(&mat, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(threads);
        prop_assert_eq!(a.null_stats.len(), 120);
        prop_assert_eq!(
            a.null_stats.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.null_stats.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(a, b);
    }
}
