//! Cross-checks between independent solvers of the same dynamics.

use std::f64::consts::FRAC_PI_4;

use qca_core::classical::{build_markov, build_mpa, mpa_profile, stationary_distribution};
use qca_core::correlations::{ppt_moments_dense, Bipartition};
use qca_core::linalg::{trace_distance, C64};
use qca_core::model::{lindblad_generator, SweepChannels};
use qca_core::tensor::half_system_ppt_moments;
use qca_core::{evolve_mpo_to_ness, evolve_to_ness, DensityMatrixState, ModelParams, MpoState, TruncationPolicy};

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn classical_solvers_agree() {
    for n in [3, 4] {
        for &(alpha, beta) in &[(0.2, 0.8), (0.8, 0.2), (0.5, 0.5)] {
            let params = ModelParams::new(n, alpha, beta, 0.75, 0.0).unwrap();
            let (state, report) =
                evolve_to_ness(DensityMatrixState::init(n, "empty").unwrap(), &params, 1e-12, 100_000)
                    .unwrap();
            assert!(report.converged);
            let markov = build_markov(&params).unwrap();
            let stat = stationary_distribution(&markov, 1e-14).unwrap();
            assert!(stat.unique);
            assert!(max_dev(&state.diagonal(), &stat.probabilities) < 1e-9);

            let mpa = build_mpa(alpha, beta, 0.75, 20).unwrap();
            let profile = mpa_profile(&mpa, n).unwrap();
            assert!(max_dev(&profile, &markov.occupations(&stat.probabilities)) < 1e-9);
            assert!(max_dev(&profile, &state.density_profile()) < 1e-9);
        }
    }
}

#[test]
fn classical_point_keeps_state_diagonal() {
    let params = ModelParams::new(4, 0.3, 0.6, 0.75, 0.0).unwrap();
    let channels = SweepChannels::new(&params).unwrap();
    let mut state = DensityMatrixState::init(4, "•∘•∘").unwrap();
    for _ in 0..20 {
        state.sweep(&channels).unwrap();
        assert!(state.max_coherence() < 1e-15);
    }
}

#[test]
fn mpo_and_exact_agree_on_small_chain() {
    for omega in [0.0, FRAC_PI_4] {
        let params = ModelParams::new(4, 0.3, 0.7, 0.75, omega).unwrap();
        let (d, _) =
            evolve_to_ness(DensityMatrixState::init(4, "empty").unwrap(), &params, 1e-12, 100_000).unwrap();
        let m = MpoState::from_product(4, "empty", TruncationPolicy::default()).unwrap();
        let (m, report) = evolve_mpo_to_ness(m, &params, 1e-12, 100_000).unwrap();
        assert!(report.converged);
        assert!(max_dev(&m.density_profile(), &d.density_profile()) < 1e-6);
        let rdm_m = m.two_site_rdm(1, 2).unwrap();
        let rdm_d = d.reduced_density_matrix(&[1, 2]).unwrap();
        assert!(trace_distance(&rdm_m, &rdm_d) < 1e-6);
        let want = ppt_moments_dense(&d.to_matrix(), &Bipartition::half(4).unwrap()).unwrap();
        let got = half_system_ppt_moments(&m).unwrap();
        assert!((want.p2 - got.p2).abs() < 1e-8 && (want.p3 - got.p3).abs() < 1e-8);
    }
}

#[test]
fn mpo_classical_point_matches_markov() {
    let params = ModelParams::new(6, 0.4, 0.6, 0.75, 0.0).unwrap();
    let m = MpoState::from_product(6, "empty", TruncationPolicy::default()).unwrap();
    let (m, _) = evolve_mpo_to_ness(m, &params, 1e-12, 100_000).unwrap();
    let markov = build_markov(&params).unwrap();
    let stat = stationary_distribution(&markov, 1e-14).unwrap();
    assert!(max_dev(&m.density_profile(), &markov.occupations(&stat.probabilities)) < 1e-7);
}

#[test]
fn sweep_approaches_lindblad_flow() {
    // a generic mixed starting state
    let warm = ModelParams::new(3, 0.4, 0.3, 0.6, 0.7).unwrap();
    let mut rho = DensityMatrixState::init(3, "•∘•").unwrap();
    for _ in 0..3 {
        rho.sweep_with(&warm).unwrap();
    }
    let generator = lindblad_generator(1.0, 1.0, 1.0, 3).unwrap();
    let error = |dt: f64| {
        let params = ModelParams::new(3, dt, dt, dt, 0.0).unwrap();
        let mut s = rho.clone();
        s.sweep_with(&params).unwrap();
        let flow: Vec<C64> = generator.propagate(rho.data(), dt);
        s.data()
            .iter()
            .zip(&flow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    };
    let ratio = error(1e-3) / error(5e-4);
    assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
}

#[test]
fn lindblad_stationary_state_is_fixed_point() {
    let generator = lindblad_generator(1.0, 0.5, 1.0, 3).unwrap();
    let ness = generator.stationary_state().unwrap();
    let drift = generator.apply(&ness);
    assert!(drift.iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn dense_round_trip_through_mpo() {
    let params = ModelParams::new(5, 0.35, 0.55, 0.75, 0.9).unwrap();
    let mut d = DensityMatrixState::init(5, "∘•∘•∘").unwrap();
    for _ in 0..6 {
        d.sweep_with(&params).unwrap();
    }
    let m = MpoState::from_dense(&d, TruncationPolicy::new(64, 0.0).unwrap()).unwrap();
    let back = m.to_dense().unwrap();
    assert!(max_dev(&d.density_profile(), &back.density_profile()) < 1e-13);
    let a = d.reduced_density_matrix(&[1, 3]).unwrap();
    let b = back.reduced_density_matrix(&[1, 3]).unwrap();
    assert!(trace_distance(&a, &b) < 1e-13);
    let (rdm, quality) = m.two_site_rdm_checked(1, 3).unwrap();
    assert!(trace_distance(&a, &rdm) < 1e-13);
    assert!(quality.hermiticity_defect < 1e-13);
}
