use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqread::hilbert::{
    annihilation_operator, apply_loss_channel, coherent_state, displacement_operator,
    number_operator, parity_expectation, FockOperator, ReadoutState, StateData,
};
use seqread::{C64, Error};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_pure(rng: &mut ChaCha8Rng, dim: usize) -> ReadoutState {
    let mut v = DVector::<C64>::zeros(dim);
    for n in 0..dim {
        v[n] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
    }
    let norm = v.norm();
    ReadoutState::from_pure(v / c(norm, 0.0)).unwrap()
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> ReadoutState {
    let mut a = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            a[(i, j)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
    }
    let mut rho = &a * a.adjoint();
    let tr: C64 = (0..dim).map(|n| rho[(n, n)]).sum();
    rho /= tr;
    // Hermitize round-off so the validating constructor accepts it.
    let rho = (&rho + rho.adjoint()).scale(0.5);
    ReadoutState::from_density(rho).unwrap()
}

#[test]
fn annihilation_matrix_elements() {
    let a2 = annihilation_operator(2).unwrap();
    assert_eq!(a2.entries()[(0, 0)], c(0.0, 0.0));
    assert_eq!(a2.entries()[(0, 1)], c(1.0, 0.0));
    assert_eq!(a2.entries()[(1, 0)], c(0.0, 0.0));
    assert_eq!(a2.entries()[(1, 1)], c(0.0, 0.0));

    let a4 = annihilation_operator(4).unwrap();
    assert!((a4.entries()[(2, 3)] - c(3.0f64.sqrt(), 0.0)).norm() < 1e-15);
}

#[test]
fn annihilation_rejects_small_dim() {
    assert!(matches!(
        annihilation_operator(1),
        Err(Error::InvalidDimension { dim: 1 })
    ));
    assert!(matches!(
        annihilation_operator(0),
        Err(Error::InvalidDimension { dim: 0 })
    ));
}

#[test]
fn commutator_acts_as_identity_below_truncation() {
    let dim = 12;
    let a = annihilation_operator(dim).unwrap();
    let adag = a.adjoint();
    let comm = a.compose(&adag).unwrap().entries() - adag.compose(&a).unwrap().entries();
    // [a, a†] = 1 holds on |0⟩..|dim-2⟩; the top state is clipped by the
    // truncation.
    for n in 0..dim - 1 {
        for m in 0..dim {
            let expect = if m == n { 1.0 } else { 0.0 };
            assert!((comm[(m, n)] - c(expect, 0.0)).norm() < 1e-14);
        }
    }
}

#[test]
fn coherent_vacuum_limit() {
    let state = coherent_state(c(0.0, 0.0), 10).unwrap();
    let pops = state.fock_populations();
    assert!((pops[0] - 1.0).abs() < 1e-15);
    assert!(pops[1..].iter().all(|p| *p < 1e-30));
    assert!(state.branch().is_none());
}

#[test]
fn coherent_mean_photon_number() {
    let state = coherent_state(c(5.8, 0.0), 150).unwrap();
    assert!((state.mean_photon_number() - 33.64).abs() < 1e-6);
}

#[test]
fn coherent_is_annihilation_eigenstate() {
    let state = coherent_state(c(2.1, 0.0), 30).unwrap();
    let a = annihilation_operator(30).unwrap();
    let mean = state.expectation(&a).unwrap();
    assert!((mean - c(2.1, 0.0)).norm() < 1e-9);
}

#[test]
fn coherent_truncation_guard() {
    assert!(matches!(
        coherent_state(c(8.0, 0.0), 150),
        Err(Error::TruncationOverflow { .. })
    ));
    // |alpha|^2 = 49 <= dim/3 is allowed.
    assert!(coherent_state(c(7.0, 0.0), 150).is_ok());
}

#[test]
fn displacement_generates_coherent_state() {
    for (alpha, dim) in [(c(1.3, -0.4), 40), (c(5.8, 0.0), 150)] {
        let d = displacement_operator(alpha, dim).unwrap();
        let vac = ReadoutState::vacuum(dim).unwrap();
        let displaced = d.apply(vac.amplitudes().unwrap()).unwrap();
        let target = coherent_state(alpha, dim).unwrap();
        let diff = (&displaced - target.amplitudes().unwrap()).norm();
        assert!(diff < 1e-8, "|D(a)|0> - |a>| = {diff:.3e}");
    }
}

#[test]
fn displacement_of_zero_is_identity() {
    let d = displacement_operator(c(0.0, 0.0), 20).unwrap();
    let defect = (d.entries() - DMatrix::<C64>::identity(20, 20))
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.norm()));
    assert!(defect < 1e-12);
}

#[test]
fn displacement_inverse_product() {
    let dim = 60;
    for alpha in [c(0.5, 0.0), c(0.0, 1.7), c(-2.0, 2.0), c(3.0, 0.0)] {
        let d = displacement_operator(alpha, dim).unwrap();
        let dinv = displacement_operator(-alpha, dim).unwrap();
        let prod = d.compose(&dinv).unwrap();
        let defect = (prod.entries() - DMatrix::<C64>::identity(dim, dim))
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm()));
        assert!(defect < 1e-8, "alpha={alpha}, defect={defect:.3e}");
    }
}

#[test]
fn displacement_unitarity() {
    let dim = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        // |alpha|^2 < dim/4 region.
        let r = (rng.gen::<f64>() * (dim as f64 / 4.0 - 0.1)).sqrt();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let alpha = C64::from_polar(r, phi);
        let d = displacement_operator(alpha, dim).unwrap();
        assert!(d.unitarity_defect() < 1e-6, "alpha={alpha}");
    }
}

#[test]
fn parity_basic_values() {
    assert!((parity_expectation(&ReadoutState::vacuum(10).unwrap()) - 1.0).abs() < 1e-15);
    assert!((parity_expectation(&ReadoutState::fock(1, 10).unwrap()) + 1.0).abs() < 1e-15);
}

#[test]
fn parity_of_coherent_matches_closed_form() {
    for alpha in [c(1.0, 0.0), c(0.7, -1.1)] {
        let state = coherent_state(alpha, 80).unwrap();
        let brute = parity_expectation(&state);
        let closed = (-2.0 * alpha.norm_sqr()).exp();
        assert!((brute - closed).abs() < 1e-12, "alpha={alpha}");
    }
}

#[test]
fn parity_bounded_for_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let dim = 2 + (i % 19);
        let state = if i % 2 == 0 {
            random_pure(&mut rng, dim)
        } else {
            random_density(&mut rng, dim)
        };
        let p = parity_expectation(&state);
        assert!((-1.0..=1.0).contains(&p));
    }
}

#[test]
fn loss_with_unit_efficiency_is_identity() {
    let state = coherent_state(c(1.5, 0.5), 40).unwrap();
    let out = apply_loss_channel(&state, 1.0).unwrap();
    assert!(out.is_pure());
    let diff = (out.amplitudes().unwrap() - state.amplitudes().unwrap()).norm();
    assert!(diff == 0.0);
}

#[test]
fn loss_maps_coherent_to_attenuated_coherent() {
    let state = coherent_state(c(2.0, 0.0), 60).unwrap();
    let out = apply_loss_channel(&state, 0.36).unwrap();
    let target = coherent_state(c(2.0 * 0.6, 0.0), 60).unwrap();
    let fidelity = target.state_overlap(&out).unwrap();
    assert!(fidelity > 1.0 - 1e-8, "fidelity = {fidelity}");
}

#[test]
fn loss_on_single_photon_splits_population() {
    let state = ReadoutState::fock(1, 20).unwrap();
    let out = apply_loss_channel(&state, 0.5).unwrap();
    let pops = out.fock_populations();
    assert!((pops[0] - 0.5).abs() < 1e-12);
    assert!((pops[1] - 0.5).abs() < 1e-12);
    assert!(pops[2..].iter().all(|p| p.abs() < 1e-12));
}

#[test]
fn loss_rejects_bad_efficiency() {
    let state = ReadoutState::vacuum(10).unwrap();
    for eta in [0.0, -0.2, 1.0001, f64::NAN] {
        assert!(matches!(
            apply_loss_channel(&state, eta),
            Err(Error::InvalidEfficiency(_))
        ));
    }
}

#[test]
fn loss_preserves_trace_hermiticity_positivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let dim = 2 + (i % 19);
        let state = if i % 3 == 0 {
            random_density(&mut rng, dim)
        } else {
            random_pure(&mut rng, dim)
        };
        let eta = 0.02 + 0.97 * rng.gen::<f64>();
        let out = apply_loss_channel(&state, eta).unwrap();
        assert!((out.trace() - 1.0).abs() < 1e-9, "trace run {i}");
        match out.data() {
            StateData::Mixed(m) => {
                let herm = (m - m.adjoint())
                    .iter()
                    .fold(0.0f64, |acc, z| acc.max(z.norm()));
                assert!(herm < 1e-9, "hermiticity run {i}");
                let eig = nalgebra::SymmetricEigen::new(m.clone());
                let min = eig.eigenvalues.iter().cloned().reduce(f64::min).unwrap();
                assert!(min > -1e-9, "positivity run {i}: {min:.3e}");
            }
            StateData::Pure(_) => panic!("loss with eta < 1 must produce a mixed state"),
        }
        assert_eq!(out.branch(), state.branch());
    }
}

#[test]
fn density_constructor_validates() {
    // Bad trace.
    let m = DMatrix::<C64>::identity(4, 4);
    assert!(ReadoutState::from_density(m).is_err());
    // Non-Hermitian.
    let mut m = DMatrix::<C64>::zeros(3, 3);
    m[(0, 0)] = c(1.0, 0.0);
    m[(0, 1)] = c(0.3, 0.0);
    assert!(ReadoutState::from_density(m).is_err());
    // Negative eigenvalue: diag(1.5, -0.5).
    let mut m = DMatrix::<C64>::zeros(2, 2);
    m[(0, 0)] = c(1.5, 0.0);
    m[(1, 1)] = c(-0.5, 0.0);
    assert!(ReadoutState::from_density(m).is_err());
}

#[test]
fn number_expectation_matches_population_sum() {
    let state = coherent_state(c(1.9, -0.3), 50).unwrap();
    let n_op = number_operator(50).unwrap();
    let via_op = state.expectation(&n_op).unwrap();
    assert!((via_op.re - state.mean_photon_number()).abs() < 1e-12);
    assert!(via_op.im.abs() < 1e-14);
}

#[test]
fn operators_flagged_hermitian() {
    let n = number_operator(30).unwrap();
    assert!(n.is_hermitian(1e-12));
    let a = annihilation_operator(30).unwrap();
    assert!(!a.is_hermitian(1e-12));
    let d = displacement_operator(c(1.0, 1.0), 30).unwrap();
    let defect = FockOperator::new(d.entries().clone()).unwrap().unitarity_defect();
    assert!(defect < 1e-6);
}
