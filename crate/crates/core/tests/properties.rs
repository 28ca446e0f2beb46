use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qca_core::correlations::{
    l1_coherence, lqu, negativity, ppt_moments_dense, Bipartition, MeasuredQubit,
};
use qca_core::linalg::{kron, CMatrix, C64};
use qca_core::model::{bulk_channel, left_boundary_channel, right_boundary_channel, SweepChannels};
use qca_core::{DensityMatrixState, ModelParams, MpoState, TruncationPolicy};

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// `G G† / tr` for a random square `G` of rank `rank`.
fn random_density(seed: u64, d: usize, rank: usize) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMatrix::from_fn(d, rank, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho.map(|z| z / tr)
}

fn random_unitary(seed: u64, d: usize) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_matrix(&mut rng, d).qr().q()
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channels_are_complete(tau in unit(), omega in -3.2..3.2f64, rate in unit()) {
        prop_assert!(bulk_channel(tau, omega).unwrap().completeness_defect() < 1e-12);
        prop_assert!(left_boundary_channel(rate).unwrap().completeness_defect() < 1e-12);
        prop_assert!(right_boundary_channel(rate).unwrap().completeness_defect() < 1e-12);
    }

    #[test]
    fn sweeps_keep_a_valid_state(
        alpha in unit(), beta in unit(), tau in unit(), omega in -1.6..1.6f64, seed in any::<u64>(),
    ) {
        let rho = random_density(seed, 8, 3);
        let mut state = DensityMatrixState::from_matrix(&rho).unwrap();
        let params = ModelParams::new(3, alpha, beta, tau, omega).unwrap();
        let channels = SweepChannels::new(&params).unwrap();
        for _ in 0..4 {
            state.sweep(&channels).unwrap();
        }
        prop_assert!((state.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(state.hermiticity_defect() < 1e-12);
        prop_assert!(state.min_eigenvalue().unwrap() > -1e-12);
    }

    #[test]
    fn classical_dynamics_stays_diagonal(
        alpha in unit(), beta in unit(), tau in unit(), seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let rho = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            16,
            weights.iter().map(|w| C64::new(w / total, 0.0)),
        ));
        let mut state = DensityMatrixState::from_matrix(&rho).unwrap();
        let params = ModelParams::new(4, alpha, beta, tau, 0.0).unwrap();
        for _ in 0..3 {
            state.sweep_with(&params).unwrap();
        }
        prop_assert!(state.max_coherence() < 1e-15);
    }

    #[test]
    fn negativity_ignores_local_unitaries(seed in any::<u64>(), rank in 1usize..4) {
        let rho = random_density(seed, 4, rank);
        let u = kron(&random_unitary(seed ^ 1, 2), &random_unitary(seed ^ 2, 2));
        let rotated = &u * &rho * u.adjoint();
        let bip = Bipartition::new(2, &[0]).unwrap();
        let a = negativity(&rho, &bip).unwrap();
        let b = negativity(&rotated, &bip).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn ppt_ratio_above_one_implies_entanglement(seed in any::<u64>(), rank in 1usize..5) {
        let rho = random_density(seed, 8, rank);
        let bip = Bipartition::new(3, &[0]).unwrap();
        let m = ppt_moments_dense(&rho, &bip).unwrap();
        if m.ratio() > 1.0 + 1e-12 {
            prop_assert!(negativity(&rho, &bip).unwrap() > 0.0);
        }
    }

    #[test]
    fn lqu_is_bounded(seed in any::<u64>(), rank in 1usize..5) {
        let rho = random_density(seed, 4, rank);
        for q in [MeasuredQubit::First, MeasuredQubit::Second] {
            let v = lqu(&rho, q).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "lqu {}", v);
        }
    }

    #[test]
    fn coherence_survives_qubit_relabelling(seed in any::<u64>()) {
        let rho = random_density(seed, 4, 2);
        // swap the two qubits: basis order 00, 10, 01, 11
        let perm = [0usize, 2, 1, 3];
        let swapped = CMatrix::from_fn(4, 4, |r, c| rho[(perm[r], perm[c])]);
        prop_assert!((l1_coherence(&rho) - l1_coherence(&swapped)).abs() < 1e-12);
    }

    #[test]
    fn mpo_round_trip(seed in any::<u64>(), rank in 1usize..6) {
        let rho = random_density(seed, 16, rank);
        let d = DensityMatrixState::from_matrix(&rho).unwrap();
        let m = MpoState::from_dense(&d, TruncationPolicy::new(64, 0.0).unwrap()).unwrap();
        let back = m.to_dense().unwrap();
        let err = d.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-13);
        let bip = Bipartition::half(4).unwrap();
        let want = ppt_moments_dense(&rho, &bip).unwrap();
        let got = m.ppt_moments(2, 3).unwrap();
        prop_assert!((want.p2 - got.p2).abs() < 1e-12);
        prop_assert!((want.p3 - got.p3).abs() < 1e-12);
    }

    #[test]
    fn mpo_sweep_matches_dense_sweep(
        alpha in unit(), beta in unit(), tau in unit(), omega in -1.6..1.6f64, seed in any::<u64>(),
    ) {
        let rho = random_density(seed, 16, 2);
        let mut d = DensityMatrixState::from_matrix(&rho).unwrap();
        let mut m = MpoState::from_dense(&d, TruncationPolicy::new(64, 0.0).unwrap()).unwrap();
        let params = ModelParams::new(4, alpha, beta, tau, omega).unwrap();
        d.sweep_with(&params).unwrap();
        m.sweep_with(&params).unwrap();
        let back = m.to_dense().unwrap();
        let err = d.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }
}
