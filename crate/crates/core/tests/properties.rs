use ndarray::Array2;
use proptest::prelude::*;
use wrongline::bounds::{corollary_bound, exact_gaussian_flip_prob, gamma_exponent, CorollaryInputs};
use wrongline::diagnostics::{alignment_gamma, check_conditions, nuisance_stats, rho_c_from_margins};
use wrongline::estimators::mc_flip_prob;
use wrongline::trainers::fit_min_l2;
use wrongline::{make_angled_shift, make_paper_shift, sample_dataset, sample_shift, LinearModel, ProblemSpec, ShiftFamily, ShiftSpec};

fn spec(total_dim: usize, signal_dim: usize) -> ProblemSpec {
    ProblemSpec {
        total_dim,
        signal_dim,
        ..ProblemSpec::default()
    }
}

/// Weights with a fraction of exact zeros, so supports vary.
fn weights(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => -2.0..2.0f64], dim)
}

fn nonzero_nuisance(w: &[f64], signal_dim: usize) -> bool {
    w[signal_dim..].iter().any(|v| *v != 0.0)
}

/// Orthonormal basis of the row space by modified Gram-Schmidt.
fn row_basis(x: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in x.outer_iter() {
        let mut v = row.to_vec();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= d * qi);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    basis
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifts_never_touch_signal_coordinates(
        w in weights(24),
        signal_dim in 1usize..4,
        angle in 0.0..=90.0f64,
        seed in any::<u64>(),
    ) {
        prop_assume!(nonzero_nuisance(&w, signal_dim));
        let s = spec(24, signal_dim);
        let model = LinearModel::from_weights(w);
        let paper = make_paper_shift(&model, 0.25, 0.01, &s).unwrap();
        let mut shifts = vec![paper];
        if let Ok(angled) = make_angled_shift(&model, angle, 1.0, 0.01, &s, seed) {
            shifts.push(angled);
        }
        for shift in &shifts {
            prop_assert!(shift.mean[..signal_dim].iter().all(|v| *v == 0.0));
            let delta = sample_shift(shift, seed).unwrap();
            prop_assert!(delta[..signal_dim].iter().all(|v| *v == 0.0));
            prop_assert!(delta[signal_dim..].iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn sensitivity_lies_between_min_and_max(w in weights(30)) {
        let st = nuisance_stats(&LinearModel::from_weights(w.clone()), 1..30);
        if st.size == 0 {
            prop_assert_eq!(st.mean_sensitivity, 0.0);
        } else {
            prop_assert!(st.tau <= st.mean_sensitivity && st.mean_sensitivity <= st.big_m);
            prop_assert_eq!(st.size, w[1..].iter().filter(|v| **v != 0.0).count());
        }
    }

    #[test]
    fn alignment_is_bounded_by_largest_shift_entry(
        w in weights(20),
        mean in prop::collection::vec(-3.0..3.0f64, 20),
    ) {
        prop_assume!(nonzero_nuisance(&w, 1));
        let model = LinearModel::from_weights(w);
        let mut m = mean;
        m[0] = 0.0;
        let big = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let shift = ShiftSpec { mean: m, sigma: 0.1, family: ShiftFamily::Gaussian, signal_support: vec![0] };
        let g = alignment_gamma(&model, &shift, 1..20).unwrap();
        prop_assert!(g.abs() <= big * (1.0 + 1e-12));
    }

    #[test]
    fn low_margin_mass_grows_with_threshold(
        ms in prop::collection::vec(-5.0..5.0f64, 1..200),
        c_lo in 0.0..=1.0f64,
        c_hi in 0.0..=1.0f64,
        tau in 0.01..2.0f64,
        gamma in 0.01..2.0f64,
        k in 1usize..50,
    ) {
        let (lo, hi) = if c_lo <= c_hi { (c_lo, c_hi) } else { (c_hi, c_lo) };
        let r_lo = rho_c_from_margins(&ms, lo, tau, gamma, -gamma, k);
        let r_hi = rho_c_from_margins(&ms, hi, tau, gamma, -gamma, k);
        prop_assert!(r_lo <= r_hi);
        prop_assert!((0.0..=1.0).contains(&r_hi));
    }

    #[test]
    fn conditions_are_invariant_to_weight_scale(
        w in weights(16),
        scale in 0.01..100.0f64,
        seed in any::<u64>(),
    ) {
        prop_assume!(nonzero_nuisance(&w, 1));
        let s = spec(16, 1);
        let base = LinearModel::from_weights(w.clone());
        let scaled = LinearModel::from_weights(w.iter().map(|v| v * scale).collect());
        let shift = make_paper_shift(&base, 0.25, 1e-3, &s).unwrap();
        let sample = sample_dataset(&s.with_noise_rate(0.0), 200, seed).unwrap();
        let a = check_conditions(&base, &shift, &sample, &s).unwrap();
        let b = check_conditions(&scaled, &shift, &sample, &s).unwrap();
        // Skip the measure-zero ties where rounding decides the comparison.
        let ta = a.vulnerability_threshold();
        prop_assume!((a.c_max - ta).abs() > 1e-9 * ta.abs().max(1.0));
        prop_assert_eq!(a.conditions_ok, b.conditions_ok);
        prop_assert!((a.gamma - b.gamma).abs() <= 1e-12 * a.gamma.abs().max(1.0));
    }

    #[test]
    fn exponent_is_monotone(
        tau in 0.01..1.0f64,
        gamma in 0.01..1.0f64,
        k in 1usize..100,
        frac in 0.0..1.0f64,
        sigma in 0.01..1.0f64,
        m_over_tau in 1.0..10.0f64,
    ) {
        let big_m = tau * m_over_tau;
        let c = frac * tau * gamma * k as f64;
        let g = gamma_exponent(tau, gamma, k, c, sigma, big_m).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!(gamma_exponent(tau, gamma, k, c * 0.5, sigma, big_m).unwrap() >= g);
        prop_assert!(gamma_exponent(tau, gamma, k, c, sigma * 1.5, big_m).unwrap() <= g);
        prop_assert!(gamma_exponent(tau, gamma * 1.5, k, c, sigma, big_m).unwrap() >= g);
        prop_assert!(gamma_exponent(tau, gamma, k + 1, c, sigma, big_m).unwrap() >= g);
        prop_assert!(gamma_exponent(tau, gamma, k, tau * gamma * k as f64 * 1.01 + 1e-9, sigma, big_m).is_err());
    }

    #[test]
    fn corollary_stays_within_low_margin_mass(
        rho in 0.0..=1.0f64,
        cp in 0.0..=1.0f64,
        gp in -2.0..2.0f64,
        gn in -2.0..2.0f64,
        tau in 0.001..1.0f64,
        k in 1usize..300,
        sigma in 0.001..1.0f64,
        m_over_tau in 1.0..10.0f64,
        c in 0.0..=1.0f64,
    ) {
        let v = corollary_bound(&CorollaryInputs {
            rho, weights: (cp, 1.0 - cp), gammas: (gp, gn), tau, k_eff: k, sigma, big_m: tau * m_over_tau, c,
        }).unwrap();
        prop_assert!((0.0..=rho).contains(&v));
    }

    #[test]
    fn min_norm_solution_is_orthogonal_to_the_null_space(
        n in 2usize..12,
        extra in 1usize..20,
        seed in any::<u64>(),
    ) {
        let s = spec(n + extra + 1, 1);
        let data = sample_dataset(&s, n, seed).unwrap();
        let model = fit_min_l2(data.features.view(), &data.labels_f64()).unwrap();
        let basis = row_basis(&data.features);
        let wn = model.weights.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut rng = wrongline::rng::stream(seed, wrongline::rng::Purpose::Panel);
        for _ in 0..20 {
            let mut z: Vec<f64> = (0..s.total_dim).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            for q in &basis {
                let d: f64 = q.iter().zip(&z).map(|(a, b)| a * b).sum();
                z.iter_mut().zip(q).for_each(|(zi, qi)| *zi -= d * qi);
            }
            let zn = z.iter().map(|a| a * a).sum::<f64>().sqrt();
            let dot: f64 = model.weights.iter().zip(&z).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() <= 1e-8 * wn * zn.max(1e-300), "dot {dot}");
        }
    }

    #[test]
    fn sampling_is_a_deterministic_prefix(seed in any::<u64>(), n in 1usize..600) {
        let s = spec(12, 2);
        let big = sample_dataset(&s, 600, seed).unwrap();
        let small = sample_dataset(&s, n, seed).unwrap();
        prop_assert_eq!(&small.features, &big.features.slice(ndarray::s![..n, ..]).to_owned());
        prop_assert_eq!(&small.labels[..], &big.labels[..n]);
        prop_assert_eq!(small, sample_dataset(&s, n, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn monte_carlo_flip_rate_matches_the_exact_value(
        w in prop::collection::vec(0.05..1.0f64, 8),
        signs in prop::collection::vec(any::<bool>(), 8),
        target in 0.05..0.95f64,
        sigma in 0.05..0.5f64,
        seed in any::<u64>(),
    ) {
        let s = spec(8, 1);
        let w: Vec<f64> = w.iter().zip(&signs).map(|(v, p)| if *p { *v } else { -v }).collect();
        let model = LinearModel::from_weights(w.clone());
        let shift = make_paper_shift(&model, 0.25, sigma * sigma, &s).unwrap();
        // Place x so the exact probability equals `target`:
        // margin = -<w,nu> - sigma ||w_free|| Phi^{-1}(target), through the signal coordinate.
        let free: f64 = w[1..].iter().map(|a| a * a).sum::<f64>().sqrt();
        let drift: f64 = w.iter().zip(&shift.mean).map(|(a, b)| a * b).sum();
        let z = inverse_normal_cdf(target);
        let m = -drift - sigma * free * z;
        prop_assume!(m >= 0.0);
        let mut x = vec![0.0; 8];
        x[0] = m / w[0];
        let exact = exact_gaussian_flip_prob(&model, &x, &shift).unwrap();
        prop_assert!((exact - target).abs() < 1e-6, "exact {exact} target {target}");
        let mc = mc_flip_prob(&model, &x, &shift, 20_000, seed).unwrap();
        prop_assert!((mc.value - exact).abs() <= 5.0 * mc.std_error.max(1e-3), "mc {} exact {exact}", mc.value);
    }
}

/// Bisection on a Simpson-rule normal CDF, independent of the library's
/// `erfc`-based one.
fn inverse_normal_cdf(p: f64) -> f64 {
    fn cdf(z: f64) -> f64 {
        let n = 4000;
        let (a, b) = (-12.0, z);
        let h = (b - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
