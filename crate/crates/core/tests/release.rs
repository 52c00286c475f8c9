use num_complex::Complex64 as C64;
use seqread::dynamics::DeviceParams;
use seqread::hilbert::{coherent_state, Branch};
use seqread::release::{
    buffer_output_envelope, classical_release, conversion_rate, fit_effective_release_params,
    pump_envelope, remaining_fraction, ModeTrajectory, PumpPulse, OVER_CRITICAL_RATIO,
};
use seqread::Error;

const TAU: f64 = std::f64::consts::TAU;

fn operating_pulse() -> PumpPulse {
    PumpPulse::new(TAU * 7.2e6, 28e-9).unwrap()
}

#[test]
fn pulse_construction_and_validation() {
    let p = operating_pulse();
    assert_eq!(p.window, 8.0 * p.sigma);
    assert_eq!(p.t0, 4.0 * p.sigma);
    assert_eq!(p.start(), 0.0);
    assert!((p.end() - 224e-9).abs() < 1e-18);

    assert!(PumpPulse::new(-1.0, 1e-9).is_err());
    assert!(PumpPulse::new(1.0, 0.0).is_err());
    assert!(PumpPulse::with_window(1.0, 10e-9, 39e-9, 0.0).is_err());
    assert!(PumpPulse::with_window(1.0, 10e-9, 40e-9, 0.0).is_ok());
}

#[test]
fn envelope_peak_wings_and_window() {
    let p = operating_pulse();
    assert_eq!(pump_envelope(p.t0, &p), p.g_max);
    // sech value one sigma from the center: 1/cosh(sqrt(pi/2)).
    let expected = p.g_max / (std::f64::consts::PI / 2.0).sqrt().cosh();
    assert!((pump_envelope(p.t0 + p.sigma, &p) - expected).abs() < 1e-9 * p.g_max);
    assert!((pump_envelope(p.t0 - p.sigma, &p) - expected).abs() < 1e-9 * p.g_max);
    assert_eq!(pump_envelope(p.start() - 1e-12, &p), 0.0);
    assert_eq!(pump_envelope(p.end() + 1e-12, &p), 0.0);
    assert!(pump_envelope(p.start(), &p) > 0.0);
}

#[test]
fn over_critical_flag_tracks_the_ratio() {
    let kappa_b = TAU * 21e6;
    assert!(!operating_pulse().over_critical(kappa_b));
    // 4g/kappa_b = 1.619 just beyond the validated regime.
    let hot = PumpPulse::new(TAU * 8.5e6, 28e-9).unwrap();
    assert!(4.0 * hot.g_max / kappa_b > OVER_CRITICAL_RATIO);
    assert!(hot.over_critical(kappa_b));
}

#[test]
fn operating_point_energy_budget() {
    let params = DeviceParams::default();
    let traj = classical_release(C64::new(1.0, 0.0), &operating_pulse(), &params).unwrap();
    let budget = traj.budget.unwrap();
    // Frozen outputs of this two-mode model at g_max = 2pi*7.2 MHz,
    // sigma = 28 ns; an adaptive RK integration at rtol 1e-11 and a
    // fixed-step RK4 run at n = 320000 agree with these to eight digits.
    assert!((budget.remaining_fraction() - 0.0216924).abs() < 2e-6, "rem {}", budget.remaining_fraction());
    assert!((budget.released_fraction() - 0.823340).abs() < 2e-5, "rel {}", budget.released_fraction());
    assert!((budget.internal_loss_fraction() - 0.154949).abs() < 2e-5);
    assert!(budget.final_b / budget.initial < 1e-4);
    assert!(budget.residual() < 1e-6, "residual {}", budget.residual());
}

#[test]
fn faster_flush_with_longer_pulses() {
    let params = DeviceParams::default();
    let g = TAU * 7.2e6;
    let sigmas = [5e-9, 15e-9, 28e-9, 60e-9, 100e-9];
    let expected = [0.750139, 0.217326, 0.021692, 0.000078, 0.000003];
    let mut previous = f64::INFINITY;
    for (sigma, want) in sigmas.iter().zip(expected) {
        let rem = remaining_fraction(&PumpPulse::new(g, *sigma).unwrap(), &params).unwrap();
        assert!((rem - want).abs() < 1e-4, "sigma {sigma}: {rem} vs {want}");
        assert!(rem < previous, "monotone flush violated at sigma {sigma}");
        previous = rem;
    }
}

#[test]
fn release_is_linear_in_the_initial_phase() {
    let params = DeviceParams::default();
    let pulse = operating_pulse();
    let base = classical_release(C64::new(1.0, 0.0), &pulse, &params).unwrap();
    let phase = C64::from_polar(1.0, 1.234);
    let rotated = classical_release(phase, &pulse, &params).unwrap();
    let budget = base.budget.unwrap();
    let budget_rot = rotated.budget.unwrap();
    assert!((budget.remaining_fraction() - budget_rot.remaining_fraction()).abs() < 1e-12);
    for (b0, b1) in base.b_amp.iter().zip(&rotated.b_amp) {
        assert!((b0 * phase - b1).norm() < 1e-10);
    }
}

#[test]
fn trajectory_sampling_matches_device_clock() {
    let params = DeviceParams::default();
    let pulse = operating_pulse();
    let traj = classical_release(C64::new(1.0, 0.0), &pulse, &params).unwrap();
    let dt = 1.0 / params.sample_rate;
    assert_eq!(traj.times[0], pulse.start());
    assert!((traj.times[traj.times.len() - 1] - pulse.end()).abs() < 1e-15);
    for w in traj.times.windows(2) {
        assert!(w[1] - w[0] <= dt + 1e-15);
        assert!(w[1] > w[0]);
    }
    assert_eq!(traj.times.len(), traj.r_amp.len());
    assert_eq!(traj.times.len(), traj.b_amp.len());
    // r starts at the initial amplitude, b from vacuum.
    assert!((traj.r_amp[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
    assert!(traj.b_amp[0].norm() < 1e-12);
}

#[test]
fn output_envelope_carries_the_released_energy() {
    let params = DeviceParams::default();
    let traj = classical_release(C64::new(1.0, 0.0), &operating_pulse(), &params).unwrap();
    let budget = traj.budget.unwrap();
    let env = buffer_output_envelope(&traj, &params).unwrap();
    assert_eq!(env.len(), traj.times.len());
    assert_eq!(env.t_start(), traj.times[0]);
    // Trapezoid integral of the line power recovers the budget entry.
    let dt = 1.0 / params.sample_rate;
    let p: Vec<f64> = env.samples().iter().map(|s| s.norm_sqr()).collect();
    let mut energy = 0.0;
    for w in p.windows(2) {
        energy += 0.5 * (w[0] + w[1]) * dt;
    }
    assert!(
        (energy - budget.released).abs() < 2e-3 * budget.released,
        "{energy} vs {}",
        budget.released
    );
}

#[test]
fn conversion_rate_limits() {
    let kappa_b = TAU * 21e6;
    assert_eq!(conversion_rate(0.0, kappa_b), 0.0);
    // At critical coupling 4g = kappa_b the discriminant vanishes.
    let crit = conversion_rate(kappa_b / 4.0, kappa_b);
    assert!((crit - kappa_b / 2.0).abs() < 1e-9 * kappa_b);
    // Far below critical the rate is the adiabatic 4g^2/kappa_b.
    let g = 0.025 * kappa_b;
    let weak = conversion_rate(g, kappa_b);
    let adiabatic = 4.0 * g * g / kappa_b;
    assert!((weak - adiabatic).abs() / adiabatic < 5e-3);
    // Above critical the real part saturates at kappa_b/2.
    assert!((conversion_rate(kappa_b, kappa_b) - kappa_b / 2.0).abs() < 1e-9 * kappa_b);
}

#[test]
fn effective_parameter_fit_recovers_the_generator() {
    let params = DeviceParams::default();
    let g_true = TAU * 6.0e6;
    let kb_true = TAU * 18e6;
    let mut gen = params.clone();
    gen.kappa_b = kb_true;
    let sigmas = [10e-9, 20e-9, 30e-9, 45e-9];
    let measured: Vec<f64> = sigmas
        .iter()
        .map(|s| remaining_fraction(&PumpPulse::new(g_true, *s).unwrap(), &gen).unwrap())
        .collect();
    let (g_fit, kb_fit) =
        fit_effective_release_params(&sigmas, &measured, TAU * 7.2e6, TAU * 21e6, &params).unwrap();
    assert!((g_fit - g_true).abs() / g_true < 1e-2, "g {}", g_fit / TAU);
    assert!((kb_fit - kb_true).abs() / kb_true < 1e-2, "kb {}", kb_fit / TAU);
}

#[test]
fn trajectory_from_parts_validates_shapes() {
    let t = vec![0.0, 1e-9, 2e-9];
    let a = vec![C64::new(1.0, 0.0); 3];
    assert!(ModeTrajectory::from_parts(t.clone(), a.clone(), a.clone()).unwrap().budget.is_none());
    let short = vec![C64::new(1.0, 0.0); 2];
    assert!(matches!(
        ModeTrajectory::from_parts(t.clone(), short.clone(), a.clone()),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(matches!(
        ModeTrajectory::from_parts(t.clone(), a.clone(), short),
        Err(Error::LengthMismatch { .. })
    ));
    let bad_t = vec![0.0, 2e-9, 2e-9];
    assert!(ModeTrajectory::from_parts(bad_t, a.clone(), a).is_err());
}

#[test]
fn state_map_is_the_matching_loss_channel() {
    // A released coherent state keeps a coherent remnant at the scaled
    // amplitude; branch labels survive the map.
    let state = coherent_state(C64::new(2.0, 0.5), 60)
        .unwrap()
        .with_branch(Branch::Excited);
    let eta_rel = 0.8234;
    let out = seqread::release::release_state_map(&state, eta_rel).unwrap();
    assert_eq!(out.branch(), Some(Branch::Excited));
    let expect = coherent_state(C64::new(2.0, 0.5) * eta_rel.sqrt(), 60).unwrap();
    assert!((out.state_overlap(&expect).unwrap() - 1.0).abs() < 1e-8);
}
