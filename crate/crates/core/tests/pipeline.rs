use std::fs;
use std::path::PathBuf;

use seqread::io;
use seqread::pipeline::{
    parse_config, run_calibration, run_readout, run_release_study, run_selfcheck, run_wigner,
    serialize_config, support_dimension, sweep_overlap, ExperimentConfig, MeasurementPath, WignerJob,
    WignerMethod,
};
use seqread::tomography::PhaseSpaceGrid;
use seqread::C64;

const TAU: f64 = std::f64::consts::TAU;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("seqread-pipeline-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn default_config_is_valid_and_round_trips() {
    let config = ExperimentConfig::default();
    config.validate().unwrap();
    assert_eq!(config.truncation, 150);
    assert_eq!(config.measurement_path, MeasurementPath::Direct);
    let parsed = parse_config(&serialize_config(&config)).unwrap();
    assert_eq!(parsed, config);

    let mut other = config.clone();
    other.measurement_path = MeasurementPath::Trace;
    other.alpha0 = C64::new(2.1, -0.7);
    other.t_int = 260e-9;
    other.n_runs = 123;
    other.seed = 99;
    other.output_dir = PathBuf::from("elsewhere/run1");
    other.device.eta = 0.37;
    other.pulse.sigma = 31e-9;
    other.pulse.window = 300e-9;
    let parsed = parse_config(&serialize_config(&other)).unwrap();
    assert_eq!(parsed, other);
}

#[test]
fn partial_config_text_keeps_defaults() {
    let text = "run.alpha0_re = 2.5\nrun.t_int_s = 5e-8\nrun.n_runs = 10\n";
    let config = parse_config(text).unwrap();
    assert_eq!(config.alpha0, C64::new(2.5, 0.0));
    assert_eq!(config.t_int, 5e-8);
    assert_eq!(config.n_runs, 10);
    let default = ExperimentConfig::default();
    assert_eq!(config.device, default.device);
    assert_eq!(config.seed, default.seed);
}

#[test]
fn config_rejects_malformed_text() {
    for text in [
        "run.unknown = 1\n",
        "run.n_runs = 10\nrun.n_runs = 20\n",
        "run.n_runs = ten\n",
        "device.eta 0.5\n",
        "run.n_runs = 0\n",
        "run.measurement_path = carrier\n",
    ] {
        let err = parse_config(text).unwrap_err();
        assert!(err.is_config_error(), "text {text:?} gave {err}");
    }
}

#[test]
fn truncation_must_cover_probe() {
    assert_eq!(support_dimension(C64::new(0.0, 0.0)), 12);
    assert_eq!(support_dimension(C64::new(5.8, 0.0)), 101);
    let mut config = ExperimentConfig::default();
    config.alpha0 = C64::new(7.0, 0.0);
    config.truncation = 80;
    let err = config.validate().unwrap_err();
    assert!(err.is_config_error());
}

/// With preparation imperfections off, negligible decay and strongly
/// separated clouds, every run classifies correctly.
#[test]
fn perfect_preparation_large_probe_classifies_exactly() {
    let mut config = ExperimentConfig::default();
    config.alpha0 = C64::new(6.0, 0.0);
    config.truncation = 110;
    config.n_runs = 500;
    config.device.eta = 0.8;
    config.device.thermal_excitation = 0.0;
    config.device.pi_pulse_fidelity = 1.0;
    config.device.t1 = 1.0;
    config.device.t2 = 1.5;
    config.output_dir = temp_dir("perfect");
    let artifacts = run_readout(&config).unwrap();
    assert_eq!(artifacts.report.fidelity, 1.0);
    assert_eq!(artifacts.report.error_g, 0.0);
    assert_eq!(artifacts.report.error_e, 0.0);
    assert_eq!(artifacts.prep_error_e, 0.0);
    assert_eq!(artifacts.thermal_error_g, 0.0);
    let _ = fs::remove_dir_all(&config.output_dir);
}

#[test]
fn readout_is_deterministic_and_emits_round_trip_files() {
    let mut config = ExperimentConfig::default();
    config.alpha0 = C64::new(1.5, 0.0);
    config.t_int = 40e-9;
    config.n_runs = 150;
    config.truncation = 24;
    config.seed = 11;
    config.output_dir = temp_dir("det-a");
    let first = run_readout(&config).unwrap();
    let mut again = config.clone();
    again.output_dir = temp_dir("det-b");
    let second = run_readout(&again).unwrap();

    assert_eq!(first.samples_g, second.samples_g);
    assert_eq!(first.samples_e, second.samples_e);
    for name in ["report.txt", "histogram_g.csv", "histogram_e.csv"] {
        let a = fs::read(config.output_dir.join(name)).unwrap();
        let b = fs::read(again.output_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let report_text = fs::read_to_string(config.output_dir.join("report.txt")).unwrap();
    let (report, extras) = io::report_from_text(&report_text).unwrap();
    assert_eq!(report.fidelity, first.report.fidelity);
    // The report counts classified runs over both prepared ensembles.
    assert_eq!(report.n_runs, 2 * config.n_runs);
    let budget: Vec<&str> = extras.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(budget, ["decay_error_e", "prep_error_e", "thermal_error_g"]);

    let hist_text = fs::read_to_string(config.output_dir.join("histogram_g.csv")).unwrap();
    let hist = io::histogram_from_csv(&hist_text).unwrap();
    assert_eq!(hist.density(), first.hist_g.density());
    assert_eq!(hist.x_edges(), first.hist_g.x_edges());

    let _ = fs::remove_dir_all(&config.output_dir);
    let _ = fs::remove_dir_all(&again.output_dir);
}

/// The synthesized-trace path must agree with itself bit for bit and
/// produce a valid report with both clouds centered where the direct
/// path puts them.
#[test]
fn trace_path_is_deterministic_and_centered() {
    let mut config = ExperimentConfig::default();
    config.measurement_path = MeasurementPath::Trace;
    config.alpha0 = C64::new(1.5, 0.0);
    config.t_int = 0.0;
    config.n_runs = 400;
    config.truncation = 24;
    config.seed = 21;
    config.device.thermal_excitation = 0.0;
    config.device.pi_pulse_fidelity = 1.0;
    config.output_dir = temp_dir("trace-a");
    let first = run_readout(&config).unwrap();
    let mut again = config.clone();
    again.output_dir = temp_dir("trace-b");
    let second = run_readout(&again).unwrap();
    assert_eq!(first.samples_g, second.samples_g);
    assert_eq!(first.samples_e, second.samples_e);

    // At t_int = 0 the normalization pins the g cloud at alpha0 and the
    // calibrated noise gives variance 1/(2η) per quadrature.
    let n = first.samples_g.len() as f64;
    let mean: C64 = first.samples_g.iter().sum::<C64>() / n;
    assert!(
        (mean - config.alpha0).norm() < 0.8,
        "g cloud mean {mean} far from {}",
        config.alpha0
    );
    let var: f64 = first
        .samples_g
        .iter()
        .map(|b| (b - mean).norm_sqr())
        .sum::<f64>()
        / n;
    let target = 1.0 / config.device.eta;
    assert!(
        (var - target).abs() < 0.25 * target,
        "total variance {var:.3} vs target {target:.3}"
    );
    let _ = fs::remove_dir_all(&config.output_dir);
    let _ = fs::remove_dir_all(&again.output_dir);
}

/// Zero interaction time leaves the branches indistinguishable, so the
/// overlap stays near 1; a long interaction separates them.
#[test]
fn sweep_overlap_resolves_interaction_time() {
    let mut config = ExperimentConfig::default();
    config.n_runs = 20_000;
    config.truncation = 60;
    config.seed = 5;
    config.device.thermal_excitation = 0.0;
    config.device.pi_pulse_fidelity = 1.0;
    config.device.t1 = 1.0;
    config.device.t2 = 1.5;
    config.output_dir = temp_dir("sweep");
    let sweep = sweep_overlap(&config, &[4.0], &[0.0, 100e-9]).unwrap();
    assert_eq!(sweep.overlap.len(), 2);
    let at_zero = sweep.overlap[0];
    let at_full = sweep.overlap[1];
    assert!(at_zero > 0.85, "overlap at t_int = 0 is {at_zero:.3}");
    assert!(
        at_zero > at_full + 0.2,
        "expected separation: overlap {at_zero:.3} at 0 vs {at_full:.3} at 100 ns"
    );

    let text = fs::read_to_string(config.output_dir.join("sweep_overlap.csv")).unwrap();
    let (alpha0, t_int, overlap) = io::sweep_from_csv(&text).unwrap();
    assert_eq!(alpha0, sweep.alpha0);
    assert_eq!(t_int, sweep.t_int);
    assert_eq!(overlap, sweep.overlap);
    let _ = fs::remove_dir_all(&config.output_dir);
}

#[test]
fn release_study_matches_known_points() {
    let mut config = ExperimentConfig::default();
    config.output_dir = temp_dir("release-a");
    let sigmas = [5e-9, 15e-9, 28e-9, 60e-9];
    let study = run_release_study(&config, &sigmas, &[TAU * 7.2e6]).unwrap();
    for (value, expect) in study.remaining.iter().zip([0.750139, 0.217326, 0.021692, 0.000078]) {
        assert!(
            (value - expect).abs() < 2e-6,
            "remaining fraction {value:.6} vs {expect:.6}"
        );
    }
    for pair in study.remaining.windows(2) {
        assert!(pair[0] > pair[1], "longer pulses must empty the mode further");
    }

    // Without pumping the mode only sees internal loss; make it negligible
    // and the whole column stays at 1.
    let mut lossless = config.clone();
    lossless.device.kappa_r = 1.0;
    lossless.output_dir = temp_dir("release-b");
    let idle = run_release_study(&lossless, &[28e-9], &[0.0, TAU * 7.2e6]).unwrap();
    assert!((idle.remaining[0] - 1.0).abs() < 1e-5, "idle mode kept {}", idle.remaining[0]);
    assert!(idle.remaining[1] < 0.1);

    let text = fs::read_to_string(config.output_dir.join("release_study.csv")).unwrap();
    let (sigma, g_max, remaining) = io::release_table_from_csv(&text).unwrap();
    assert_eq!(sigma, study.sigma);
    assert_eq!(g_max, study.g_max);
    assert_eq!(remaining, study.remaining);
    let _ = fs::remove_dir_all(&config.output_dir);
    let _ = fs::remove_dir_all(&lossless.output_dir);
}

/// Before any interaction the probe is still the coherent state, so both
/// branch maps are the same Gaussian sitting at alpha0.
#[test]
fn wigner_zero_interaction_is_gaussian_at_probe() {
    let mut config = ExperimentConfig::default();
    config.alpha0 = C64::new(1.5, 0.0);
    config.t_int = 0.0;
    config.truncation = 48;
    config.output_dir = temp_dir("wigner");
    let xs: Vec<f64> = (0..41).map(|i| -0.5 + 0.1 * i as f64).collect();
    let ys: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
    let grid = PhaseSpaceGrid::from_axes(xs, ys).unwrap();
    let [map_g, map_e] = run_wigner(&config, &grid, &WignerJob::default()).unwrap();

    let two_over_pi = 2.0 / std::f64::consts::PI;
    for map in [&map_g, &map_e] {
        assert!((map.max_value() - two_over_pi).abs() < 1e-6);
        assert!((map.peak_point() - config.alpha0).norm() < 1e-9);
        assert!(map.min_value() > -1e-10, "coherent state has no negativity");
    }

    let text = fs::read_to_string(config.output_dir.join("wigner_e.csv")).unwrap();
    let parsed = io::wigner_from_csv(&text).unwrap();
    assert_eq!(parsed, map_e);
    let _ = fs::remove_dir_all(&config.output_dir);
}

#[test]
fn wigner_protocol_method_tracks_exact_map() {
    let mut config = ExperimentConfig::default();
    config.alpha0 = C64::new(0.9, 0.0);
    config.t_int = 0.0;
    // Truncation must also hold the displaced states of the parity
    // protocol, probe plus the far grid corner.
    config.truncation = 60;
    config.output_dir = temp_dir("wigner-protocol");
    let grid = PhaseSpaceGrid::centered(1.8, 7).unwrap();
    let job = WignerJob {
        method: WignerMethod::Protocol {
            n_shots: 400,
            exact: true,
        },
        rotation: 0.0,
    };
    let [_, map_e] = run_wigner(&config, &grid, &job).unwrap();
    let direct = run_wigner(&config, &grid, &WignerJob::default()).unwrap();
    let worst = map_e
        .values()
        .iter()
        .zip(direct[1].values().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 5e-3, "protocol deviates from direct map by {worst:.2e}");
    let _ = fs::remove_dir_all(&config.output_dir);
}

#[test]
fn calibration_recovers_device_parameters() {
    let mut config = ExperimentConfig::default();
    config.output_dir = temp_dir("calibration");
    let summary = run_calibration(&config).unwrap();
    let d = &config.device;
    assert!((summary.nbar_fit - summary.nbar_true).abs() < 0.02 * summary.nbar_true);
    assert!((summary.kappa_r_fit - d.kappa_r).abs() < 0.02 * d.kappa_r);
    assert!((summary.chi_fit - d.chi).abs() < 0.01 * d.chi);
    assert!((summary.kerr_g_fit - d.kerr_g).abs() < 0.01 * d.kerr_g);
    assert!((summary.kerr_e_fit - d.kerr_e).abs() < 0.01 * d.kerr_e);
    assert!((summary.pi_pulse_survival - 0.995).abs() < 1e-3);
    assert!((summary.thermal_p_e - d.thermal_excitation).abs() < 1e-9);
    assert!((summary.thermal_temperature_k - 0.044).abs() < 2e-3);

    let text = fs::read_to_string(config.output_dir.join("calibration.txt")).unwrap();
    let pairs = io::parse_key_values(&text).unwrap();
    let lookup = |key: &str| -> f64 {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .unwrap_or_else(|| panic!("missing {key}"))
            .1
            .parse()
            .unwrap()
    };
    assert_eq!(lookup("nbar_fit"), summary.nbar_fit);
    assert_eq!(lookup("thermal_temperature_k"), summary.thermal_temperature_k);
    let _ = fs::remove_dir_all(&config.output_dir);
}

#[test]
fn selfcheck_reports_all_green() {
    let checks = run_selfcheck();
    assert_eq!(checks.len(), 5);
    for check in &checks {
        assert!(check.passed, "{} failed: {}", check.name, check.detail);
    }
}

/// Smoke test of the full paper-point error budget at reduced statistics;
/// the acceptance suite repeats this at 10⁵ runs.
#[test]
fn error_budget_smoke() {
    let mut config = ExperimentConfig::default();
    config.n_runs = 1200;
    config.seed = 13;
    config.output_dir = temp_dir("budget");
    let artifacts = run_readout(&config).unwrap();
    let report = &artifacts.report;
    assert!(report.fidelity > 0.93 && report.fidelity < 1.0, "fidelity {}", report.fidelity);
    assert!(report.error_e > report.error_g, "e errors dominate the budget");
    assert!(
        artifacts.prep_error_e > 0.003 && artifacts.prep_error_e < 0.03,
        "prep error {}",
        artifacts.prep_error_e
    );
    assert!(
        artifacts.decay_error_e > 0.004 && artifacts.decay_error_e < 0.035,
        "decay error {}",
        artifacts.decay_error_e
    );
    assert!(artifacts.thermal_error_g < 0.025);
    let _ = fs::remove_dir_all(&config.output_dir);
}
