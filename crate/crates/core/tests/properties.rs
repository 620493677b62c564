use mlme::functionals::{
    born_probabilities, frequency_self_information, normalized_log_likelihood, objective,
    relative_entropy, t_operator, von_neumann_entropy,
};
use mlme::linalg::{matrix_log_on_support, spectral_decompose, trace_distance, CMatrix, Complex64};
use mlme::pom::{
    build_operator_basis, decompose_state, default_homodyne_settings, gram_analysis, homodyne_pom,
    pauli_pom, trine_pom, HomodyneMode, QuadratureSetting,
};
use mlme::reconstruct::{
    extremal_residual, ml_reconstruct, mlme_reconstruct, mlme_reconstruct_with, IterationConfig,
    RunOptions,
};
use mlme::simulate::{random_density, sample_counts};
use mlme::{CountData, DensityMatrix, HermitianOperator};
use proptest::prelude::*;

fn hermitian_from(seed: u64, dim: usize) -> HermitianOperator {
    // splitmix-style deterministic entries in [-1, 1]
    let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut next = move || {
        s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    };
    let m = CMatrix::from_fn(dim, dim, |_, _| Complex64::new(next(), next()));
    HermitianOperator::from_matrix_hermitized(&m + m.adjoint())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectral_round_trip(seed in any::<u64>(), dim in 1usize..7) {
        let h = hermitian_from(seed, dim);
        let spec = spectral_decompose(&h);
        let back = spec.reconstruct();
        prop_assert!((&back - &h).frobenius_norm() <= 1e-10 * h.frobenius_norm().max(1.0));
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trace_distance_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), dim in 2usize..6) {
        let (r, s, t) = (random_density(dim, a).unwrap(), random_density(dim, b).unwrap(), random_density(dim, c).unwrap());
        let rs = trace_distance(&r, &s).unwrap();
        prop_assert!((rs - trace_distance(&s, &r).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&rs));
        prop_assert!(rs <= trace_distance(&r, &t).unwrap() + trace_distance(&t, &s).unwrap() + 1e-12);
        prop_assert!(trace_distance(&r, &r).unwrap() < 1e-12);
    }

    #[test]
    fn log_commutes_with_state(seed in any::<u64>(), dim in 2usize..6) {
        let rho = random_density(dim, seed).unwrap();
        let log = matrix_log_on_support(&rho, 1e-12);
        let a = rho.operator().matrix() * log.matrix();
        let b = log.matrix() * rho.operator().matrix();
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn gibbs_inequality_and_identity(state in any::<u64>(), data in any::<u64>(), n in 1u64..500) {
        let pom = pauli_pom();
        let rho = random_density(2, state).unwrap();
        let f = sample_counts(&random_density(2, data).unwrap(), &pom, n, data).unwrap();
        let p = born_probabilities(&rho, &pom).unwrap();
        let d = relative_entropy(&f, &p);
        prop_assert!(d >= -1e-12);
        let lhs = d + normalized_log_likelihood(&f, &p);
        prop_assert!((lhs - frequency_self_information(&f)).abs() < 1e-12);
    }

    #[test]
    fn rank_ignores_outcome_order(seed in any::<u64>()) {
        let pom = homodyne_pom(&default_homodyne_settings(), 3, HomodyneMode::ScaledComplement).unwrap();
        let mut order: Vec<usize> = (0..pom.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted = pom.permuted(&order).unwrap();
        prop_assert_eq!(gram_analysis(&pom, None).informational_rank, gram_analysis(&permuted, None).informational_rank);
    }

    #[test]
    fn gradient_matches_directional_derivative(state in any::<u64>(), dir in any::<u64>(), li in 0usize..3) {
        let lambda = [0.0, 0.1, 1.0][li];
        let pom = pauli_pom();
        let rho = random_density(2, state).unwrap();
        let f = CountData::from_counts(vec![3, 1, 2, 2, 1, 4]).unwrap();
        let traceless = {
            let h = hermitian_from(dir, 2);
            &h - &HermitianOperator::identity(2).scale(h.trace() / 2.0)
        };
        let t = t_operator(&rho, &f, &pom, lambda).unwrap();
        let analytic = t.trace_product(&traceless);
        let h = 1e-6 * rho.operator().min_eigenvalue() / traceless.frobenius_norm().max(1e-300);
        let at = |s: f64| {
            let op = rho.operator() + &traceless.scale(s);
            objective(lambda, &DensityMatrix::new(op).unwrap(), &f, &pom).unwrap()
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "{numeric} vs {analytic}");
    }

    #[test]
    fn probability_equal_states_share_measurement_part(seed in any::<u64>(), t in -0.2f64..0.2) {
        let pom = trine_pom();
        let basis = build_operator_basis(&pom, &gram_analysis(&pom, None)).unwrap();
        let rho = DensityMatrix::from_bloch([0.3 * (seed % 3) as f64 / 3.0, 0.0, 0.2]).unwrap();
        let shifted = DensityMatrix::new(rho.operator() + &basis.complement[0].scale(t)).unwrap();
        let a = born_probabilities(&rho, &pom).unwrap();
        let b = born_probabilities(&shifted, &pom).unwrap();
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() < 1e-12));
        let da = decompose_state(&rho, &basis).unwrap();
        let db = decompose_state(&shifted, &basis).unwrap();
        prop_assert!((&da.ml_part - &db.ml_part).frobenius_norm() < 1e-8);
    }
}

#[test]
fn rank_grows_with_settings() {
    let all = default_homodyne_settings();
    for dim in [3, 5] {
        let mut last = 0;
        for k in 1..=all.len() {
            let pom = homodyne_pom(&all[..k], dim, HomodyneMode::ScaledComplement).unwrap();
            let rank = gram_analysis(&pom, None).informational_rank;
            assert!(rank >= last, "dim {dim}: {rank} < {last} with {k} settings");
            last = rank;
        }
        let extra = QuadratureSetting {
            theta: 0.3,
            xs: vec![-1.5, 0.5, 1.7],
        };
        let mut more = all.clone();
        more.push(extra);
        let pom = homodyne_pom(&more, dim, HomodyneMode::ScaledComplement).unwrap();
        assert!(gram_analysis(&pom, None).informational_rank >= last);
    }
}

#[test]
fn larger_lambda_raises_entropy_and_lowers_likelihood() {
    let pom = homodyne_pom(
        &default_homodyne_settings(),
        4,
        HomodyneMode::ScaledComplement,
    )
    .unwrap();
    for seed in 0..3 {
        let truth = random_density(4, seed).unwrap();
        let f = sample_counts(&truth, &pom, 2000, seed + 100).unwrap();
        let runs: Vec<_> = [1e-3, 1e-2, 0.1, 1.0]
            .iter()
            .map(|&l| {
                let mut cfg = IterationConfig::default().with_lambda(l);
                cfg.max_iters = 1_000_000;
                mlme_reconstruct(&f, &pom, &cfg).unwrap()
            })
            .collect();
        for w in runs.windows(2) {
            assert!(w[0].converged && w[1].converged);
            let p0 = born_probabilities(&w[0].estimator, &pom).unwrap();
            let p1 = born_probabilities(&w[1].estimator, &pom).unwrap();
            assert!(
                von_neumann_entropy(&w[0].estimator) <= von_neumann_entropy(&w[1].estimator) + 1e-9
            );
            assert!(
                normalized_log_likelihood(&f, &p0) >= normalized_log_likelihood(&f, &p1) - 1e-9
            );
        }
    }
}

#[test]
fn estimator_is_independent_of_the_start() {
    let pom = homodyne_pom(
        &default_homodyne_settings(),
        3,
        HomodyneMode::ScaledComplement,
    )
    .unwrap();
    let truth = random_density(3, 5).unwrap();
    let f = sample_counts(&truth, &pom, 5000, 6).unwrap();
    let mut cfg = IterationConfig::default().with_lambda(1e-3);
    cfg.max_iters = 1_000_000;
    cfg.residual_tol = 1e-9;
    let run = |seed: u64| {
        let opts = RunOptions {
            start: Some(random_density(3, seed).unwrap()),
            ..Default::default()
        };
        let r = mlme_reconstruct_with(&f, &pom, &cfg, opts).unwrap();
        assert!(
            r.converged,
            "{:?} {} {:e}",
            r.termination, r.iterations, r.residual
        );
        r.estimator
    };
    let a = run(100);
    let b = run(200);
    assert!(trace_distance(&a, &b).unwrap() < 1e-5);
}

#[test]
fn mlme_measurement_part_matches_any_ml_estimator() {
    let pom = trine_pom();
    let basis = build_operator_basis(&pom, &gram_analysis(&pom, None)).unwrap();
    let f = CountData::from_frequencies(vec![0.5, 0.3, 0.2], 10).unwrap();
    let mlme = mlme_reconstruct(&f, &pom, &IterationConfig::default().with_lambda(1e-7)).unwrap();
    assert!(mlme.converged);
    let reference = decompose_state(&mlme.estimator, &basis).unwrap().ml_part;
    for seed in [1, 2, 3] {
        let start = random_density(2, seed).unwrap();
        let ml = mlme_reconstruct_with(
            &f,
            &pom,
            &IterationConfig::default().with_lambda(0.0),
            RunOptions {
                start: Some(start),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(ml.converged);
        let part = decompose_state(&ml.estimator, &basis).unwrap().ml_part;
        assert!((&part - &reference).frobenius_norm() < 1e-6);
    }
    let ml = ml_reconstruct(&f, &pom, &IterationConfig::default()).unwrap();
    assert!(extremal_residual(&ml.estimator, &f, &pom, 0.0).unwrap() <= 1e-8);
}
