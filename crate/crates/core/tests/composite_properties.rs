use mnl_core::composite::{
    beta_matrices, energy_relaxation, gibbs_parameters, integrate_moments, second_moment_rhs, stationary_moments,
    CompositeError, OscillatorPair, SecondMoments4, MOMENT_LABELS, MOMENT_PAIRS,
};
use mnl_core::sde::{psd_factor, simulate_ensemble, trajectory_rng, EnsembleConfig, InitialCondition};
use nalgebra::{DMatrix, Matrix4};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn pair_strategy() -> impl Strategy<Value = OscillatorPair> {
    (0.5..2.0f64, 0.5..2.0f64, 0.0..1.0f64).prop_map(|(m, k, kappa)| OscillatorPair::new(m, k, kappa).unwrap())
}

/// Energy `E` and `M` as a fraction of the admissible bound `2E/ω0`.
fn state_strategy() -> impl Strategy<Value = (f64, f64)> {
    (0.1..3.0f64, -0.99..0.99f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn energy_and_angular_momentum_are_conserved(pair in pair_strategy(), v in prop::array::uniform10(-2.0..2.0f64)) {
        let s = SecondMoments4 { values: v };
        let ds = second_moment_rhs(&pair, &s);
        let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs())) * (1.0 + pair.kappa + pair.k + 1.0 / pair.m);
        prop_assert!((pair.e1(&ds) + pair.e2(&ds)).abs() < 1e-12 * scale);
        prop_assert!(ds.angular_momentum().abs() < 1e-12 * scale);
    }

    #[test]
    fn stationary_moments_are_a_fixed_point(pair in pair_strategy(), (e, frac) in state_strategy()) {
        let m = frac * 2.0 * e / pair.omega0();
        let s = stationary_moments(e, m, &pair).unwrap();
        let ds = second_moment_rhs(&pair, &s);
        let scale = s.values.iter().fold(0.0f64, |a, b| a.max(b.abs())) * (1.0 + pair.kappa + pair.k + 1.0 / pair.m);
        prop_assert!(ds.values.iter().all(|d| d.abs() < 1e-12 * scale), "{:?}", ds);
        prop_assert!((pair.e1(&s) - e).abs() < 1e-12 * e && (pair.e2(&s) - e).abs() < 1e-12 * e);
        prop_assert!((s.angular_momentum() - m).abs() < 1e-12 * e.max(m.abs()));
        prop_assert!(s.is_psd(0.0));
    }

    #[test]
    fn closed_form_beta_inverts_moments(pair in pair_strategy(), (e, frac) in state_strategy()) {
        let m = frac * 2.0 * e / pair.omega0();
        let (inv, beta) = beta_matrices(e, m, &pair).unwrap();
        let err = (beta * inv - Matrix4::identity()).amax();
        prop_assert!(err < 1e-9 / (1.0 - frac * frac), "{}", err);
    }

    #[test]
    fn gibbs_exponent_is_the_gaussian_quadratic_form(pair in pair_strategy(), (e, frac) in state_strategy(), y in prop::array::uniform4(-2.0..2.0f64)) {
        let m = frac * 2.0 * e / pair.omega0();
        let (_, beta) = beta_matrices(e, m, &pair).unwrap();
        let g = gibbs_parameters(e, m, &pair).unwrap();
        let v = nalgebra::Vector4::from(y);
        let quad = 0.5 * (v.transpose() * beta * v)[0];
        let got = g.exponent(&pair, &y);
        prop_assert!((got - quad).abs() < 1e-9 * quad.abs().max(1.0) / (1.0 - frac * frac), "{} vs {}", got, quad);
    }

    #[test]
    fn inadmissible_states_are_rejected(pair in pair_strategy(), e in 0.1..3.0f64, over in 1.0..3.0f64) {
        let m = over * 2.0 * e / pair.omega0();
        prop_assert!(matches!(stationary_moments(e, m, &pair), Err(CompositeError::Inadmissible { .. })), "{}", m);
        prop_assert!(gibbs_parameters(e, -m, &pair).is_err());
    }
}

#[test]
fn moment_equations_reproduce_energy_relaxation() {
    let pair = OscillatorPair::new(1.0, 1.0, 0.1).unwrap();
    let x0 = pair.point_with_energies(1.5, 0.5);
    let times = EnsembleConfig::uniform_times(10.0, 10);
    for (t, s) in times.iter().zip(integrate_moments(&pair, &SecondMoments4::from_point(&x0), &times)) {
        let (e1, e2) = energy_relaxation(1.5, 0.5, 0.1, *t);
        assert!((pair.e1(&s) - e1).abs() < 1e-10 && (pair.e2(&s) - e2).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn moment_equations_match_ensemble() {
    let pair = OscillatorPair::new(1.0, 1.0, 0.1).unwrap();
    #[rustfmt::skip]
    let cov = DMatrix::from_row_slice(4, 4, &[
        1.2, 0.1, 0.2, 0.0,
        0.1, 0.6, 0.0, -0.1,
        0.2, 0.0, 0.4, 0.1,
        0.0, -0.1, 0.1, 0.9,
    ]);
    let mean = vec![0.5, -0.3, 0.0, 0.4];
    let mut raw = cov.clone();
    for i in 0..4 {
        for k in 0..4 {
            raw[(i, k)] += mean[i] * mean[k];
        }
    }
    let s0 = SecondMoments4::from_matrix(&Matrix4::from_fn(|i, k| raw[(i, k)]));
    let times = EnsembleConfig::uniform_times(10.0, 10)[1..].to_vec();
    let want = integrate_moments(&pair, &s0, &times);
    let cfg = EnsembleConfig::new(4000, 5e-3, 10.0, 77, times.clone());
    let report = simulate_ensemble(&pair.sde_system(), &InitialCondition::Gaussian { mean, cov }, &cfg).unwrap();
    for (snap, w) in report.snapshots.iter().zip(&want) {
        for (n, &(i, k)) in MOMENT_PAIRS.iter().enumerate() {
            let z = (snap.second_moment[i][k] - w.values[n]) / snap.second_moment_stderr[i][k];
            assert!(z.abs() <= 3.0, "t = {}, {}: {} vs {} (z = {z:.2})", snap.t, MOMENT_LABELS[n], snap.second_moment[i][k], w.values[n]);
        }
    }
}

#[test]
fn sampling_the_gibbs_state_recovers_energy_and_angular_momentum() {
    let pair = OscillatorPair::new(1.0, 2.0, 0.1).unwrap();
    let (e, m) = (1.0, 0.8);
    let (inv, _) = beta_matrices(e, m, &pair).unwrap();
    let f = psd_factor(&DMatrix::from_fn(4, 4, |i, k| inv[(i, k)])).unwrap();
    let n = 100_000;
    let mut rng = trajectory_rng(4, 0);
    let mut acc = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        let z: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..4).map(|i| (0..4).map(|k| f[(i, k)] * z[k]).sum()).collect();
        acc[0].push(y[1] * y[1] / (2.0 * pair.m) + 0.5 * pair.k * y[0] * y[0]);
        acc[1].push(y[3] * y[3] / (2.0 * pair.m) + 0.5 * pair.k * y[2] * y[2]);
        acc[2].push(y[0] * y[3] - y[2] * y[1]);
    }
    for (values, want) in acc.iter().zip([e, e, m]) {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "{mean} vs {want} +- {se}");
    }
}
