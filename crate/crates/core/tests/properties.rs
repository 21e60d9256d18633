use proptest::prelude::*;

use logrange_gp::diagnostics::{acf, kpss_level, rolling_stats, KpssConfig};
use logrange_gp::gaussian::{cholesky_with_jitter, log_likelihood};
use logrange_gp::kernels::{build_cov_matrix, cov};
use logrange_gp::weight_expr::{parse_expr, BinOp, Expr, Func};
use logrange_gp::{KernelModel, TimeGrid, Trajectory};

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..400).prop_map(|k| Expr::Num(k as f64 / 4.0)),
        Just(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow)
        ];
        let func = prop_oneof![
            Just(Func::Exp),
            Just(Func::Log),
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Sqrt),
            Just(Func::Abs)
        ];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, l, r)| Expr::Binary(o, Box::new(l), Box::new(r))),
            (func, inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
        ]
    })
}

fn model() -> impl Strategy<Value = KernelModel> {
    prop_oneof![
        (0.1f64..3.0, 0.001f64..5.0).prop_map(|(sigma, beta)| KernelModel::WeightedLogExp { sigma, beta }),
        (0.1f64..3.0).prop_map(|alpha| KernelModel::WeightedLogConst { alpha }),
        (-0.9f64..4.0).prop_map(|alpha| KernelModel::WeightedLogPoly { alpha, sigma: 1.0 }),
        (0.1f64..3.0, 0.01f64..5.0).prop_map(|(sigma, beta)| KernelModel::IntegratedOu { sigma, beta }),
        (0.1f64..3.0, 0.05f64..0.95).prop_map(|(sigma, hurst)| KernelModel::Fbm { sigma, hurst }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parser_never_panics(text in "\\PC{0,40}") {
        let _ = parse_expr(&text);
    }

    #[test]
    fn printed_expressions_parse_back(e in expr()) {
        let printed = e.to_string();
        prop_assert_eq!(parse_expr(&printed).unwrap(), e, "{}", printed);
    }

    #[test]
    fn kernels_are_symmetric_and_bounded(m in model(), s in 0.01f64..20.0, t in 0.01f64..20.0) {
        let kst = cov(&m, s, t).unwrap();
        let kts = cov(&m, t, s).unwrap();
        prop_assert!((kst - kts).abs() <= 1e-12 * kst.abs().max(1e-300));
        let bound = (cov(&m, s, s).unwrap() * cov(&m, t, t).unwrap()).sqrt();
        prop_assert!(kst.abs() <= bound * (1.0 + 1e-9), "{} > {}", kst, bound);
    }

    #[test]
    fn log_likelihood_ignores_ordering(seed in 0u64..1000, n in 2usize..8) {
        let m = KernelModel::WeightedLogExp { sigma: 1.0, beta: 0.2 };
        let times: Vec<f64> = (1..=n).map(|i| i as f64 * 0.7).collect();
        let x: Vec<f64> = (0..n).map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.3)).sin()).collect();
        let k = build_cov_matrix(&m, &TimeGrid::new(times.clone()).unwrap()).unwrap();
        let l = log_likelihood(&cholesky_with_jitter(&k).unwrap(), &x).unwrap();
        // reverse the order of observations by permuting the matrix
        let perm: Vec<usize> = (0..n).rev().collect();
        let kp = nalgebra::DMatrix::from_fn(n, n, |i, j| k[(perm[i], perm[j])]);
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let lp = log_likelihood(&cholesky_with_jitter(&kp).unwrap(), &xp).unwrap();
        prop_assert!((l - lp).abs() < 1e-9 * l.abs().max(1.0));
    }

    #[test]
    fn acf_ignores_shifts(x in prop::collection::vec(-10.0f64..10.0, 10..60), c in -1e3f64..1e3) {
        let base = acf(&x, 5);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let moved = acf(&shifted, 5).unwrap();
        for (a, b) in base.values.iter().zip(&moved.values) {
            prop_assert!((a - b).abs() < 1e-6);
            prop_assert!(a.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn kpss_is_affine_invariant(x in prop::collection::vec(-10.0f64..10.0, 20..80), a in 0.1f64..10.0, b in -100.0f64..100.0, flip in any::<bool>()) {
        let cfg = KpssConfig::default();
        let k = kpss_level(&x, &cfg);
        prop_assume!(k.is_ok());
        let a = if flip { -a } else { a };
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ky = kpss_level(&y, &cfg).unwrap();
        prop_assert!((k.unwrap().statistic - ky.statistic).abs() < 1e-8 * ky.statistic.max(1.0));
    }

    #[test]
    fn rolling_variance_non_negative(x in prop::collection::vec(-1e3f64..1e3, 1..50), w in 1usize..10) {
        prop_assume!(w <= x.len());
        let r = rolling_stats(&x, w).unwrap();
        prop_assert_eq!(r.means.len(), x.len() - w + 1);
        prop_assert!(r.variances.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn split_then_concat_is_identity(n in 2usize..100, frac in 0.05f64..0.95) {
        let grid = TimeGrid::uniform(n as f64, n).unwrap();
        let values: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let t = Trajectory::new(grid, values, "x").unwrap();
        if let Ok((a, b)) = t.split(frac) {
            prop_assert_eq!(a.concat(&b).unwrap(), t);
        }
    }
}
