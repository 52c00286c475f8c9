//! Configuration-driven experiment runs: the seeded readout Monte Carlo
//! with preparation and decay imperfections, overlap sweeps, release
//! studies, Wigner map generation and a calibration pass, each emitting
//! its CSV artifacts into the configured output directory.
//!
//! Every operation is a deterministic function of (config, seed). Runs,
//! sweep cells and shot streams draw from independent RNG streams derived
//! with [`crate::seeding`], so results do not depend on thread scheduling.
//! Stream indices: run i of the g ensemble uses 2i, of the e ensemble
//! 2i+1; sweep cells, Wigner shots and calibration noise use disjoint
//! blocks above 2³².

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::calibration::{
    fit_dispersive_and_kerr, fit_photon_calibration, pulse_fidelity_decay, simulated_detuning_series,
    solve_thermal_populations, synthesize_decay_curve, DecayCurve,
};
use crate::discrimination::{
    error_rates, histogram2d, uniform_edges, AmplitudeHistogram, DecisionRegion, ReadoutReport,
    DEFAULT_HISTOGRAM_BINS,
};
use crate::dynamics::{evolve_interaction, evolve_piecewise, level_energies, mean_field, DeviceParams};
use crate::hilbert::{coherent_state, Branch, ReadoutState, DEFAULT_DIM};
use crate::io;
use crate::ode::{self, OdeOptions};
use crate::release::{buffer_output_envelope, classical_release, remaining_fraction, PumpPulse};
use crate::seeding::{stream_rng, stream_seed};
use crate::signal::{
    branch_detuning, build_weight_function, calibrated_noise_std, demodulate, normalize_lambda,
    synthesize_trace, ComplexEnvelope, HusimiSampler, WeightFunction,
};
use crate::tomography::{
    rotate_phase_space, wigner_direct, wigner_protocol_sim, PhaseSpaceGrid, ProtocolOptions, WignerMap,
};
use crate::{C64, Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Number of quantization bins for the qubit decay time inside a run.
const DECAY_BINS: usize = 32;
/// Husimi grid resolution for the rare decayed-run samplers; the detection
/// kick of √((1−η)/2η) dwarfs the coarser cell quantization.
const DECAY_SAMPLER_CELLS: usize = 257;

const SWEEP_STREAM_BASE: u64 = 1 << 32;
const WIGNER_STREAM_BASE: u64 = 2 << 32;
const CALIBRATION_STREAM_BASE: u64 = 3 << 32;

/// How a run turns the released field into a measured amplitude β.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementPath {
    /// Sample β from the Husimi law of the stored state through the total
    /// efficiency η (the exact heterodyne outcome distribution).
    Direct,
    /// Synthesize the digitized voltage record of the released mean field,
    /// add calibrated white noise and demodulate with the weight function.
    /// A linear (mean-field) model of the chain; cross-validated against
    /// the direct path on coherent inputs.
    Trace,
}

impl MeasurementPath {
    pub fn label(self) -> &'static str {
        match self {
            MeasurementPath::Direct => "direct",
            MeasurementPath::Trace => "trace",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(MeasurementPath::Direct),
            "trace" => Ok(MeasurementPath::Trace),
            other => Err(Error::Config(format!(
                "unknown measurement path {other:?}, expected direct or trace"
            ))),
        }
    }
}

/// Complete description of one simulated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub device: DeviceParams,
    pub pulse: PumpPulse,
    /// Probe amplitude loaded into the readout mode.
    pub alpha0: C64,
    /// Qubit-cavity interaction time before the release (s).
    pub t_int: f64,
    /// Monte-Carlo runs per prepared ensemble.
    pub n_runs: usize,
    pub seed: u64,
    /// Fock truncation budget; must cover the probe support.
    pub truncation: usize,
    pub measurement_path: MeasurementPath,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            device: DeviceParams::default(),
            pulse: PumpPulse::new(TAU * 7.2e6, 28e-9).expect("default pump pulse is valid"),
            alpha0: C64::new(5.8, 0.0),
            t_int: 100e-9,
            n_runs: 100_000,
            seed: 7,
            truncation: DEFAULT_DIM,
            measurement_path: MeasurementPath::Direct,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Fock dimension that holds a coherent state of this amplitude: a
/// 6-standard-deviation photon-number margin, and never less than the
/// 3n̄ floor demanded by the state builders.
pub fn support_dimension(alpha: C64) -> usize {
    let nbar = alpha.norm_sqr();
    let margin = nbar + 6.0 * alpha.norm() + 12.0;
    margin.max(3.0 * nbar).ceil() as usize
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.pulse.validate()?;
        if !(self.alpha0.re.is_finite() && self.alpha0.im.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be finite, got {}", self.alpha0)));
        }
        if !(self.t_int >= 0.0 && self.t_int.is_finite()) {
            return Err(Error::InvalidTime(self.t_int));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.truncation < 2 {
            return Err(Error::InvalidDimension { dim: self.truncation });
        }
        let needed = support_dimension(self.alpha0);
        if needed > self.truncation {
            return Err(Error::Config(format!(
                "truncation {} cannot hold the probe: |alpha0| = {:.3} needs at least {}",
                self.truncation,
                self.alpha0.norm(),
                needed
            )));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Time from the start of the interaction to the peak of the release
    /// pulse. The sech release has emitted half its energy by then, so
    /// later qubit decays leave the majority of the record with the full
    /// dispersive imprint; this is the window inside which decays are
    /// sampled and scored.
    pub fn measurement_window(&self) -> f64 {
        self.t_int + self.pulse.t0
    }
}

// --- config text format -------------------------------------------------

fn config_pairs(config: &ExperimentConfig) -> Vec<(String, String)> {
    let d = &config.device;
    let p = &config.pulse;
    let pair = |k: &str, v: String| (k.to_string(), v);
    vec![
        pair("device.chi_rad_per_s", d.chi.to_string()),
        pair("device.kerr_g_rad_per_s", d.kerr_g.to_string()),
        pair("device.kerr_e_rad_per_s", d.kerr_e.to_string()),
        pair("device.kappa_r_rad_per_s", d.kappa_r.to_string()),
        pair("device.kappa_b_rad_per_s", d.kappa_b.to_string()),
        pair("device.t1_s", d.t1.to_string()),
        pair("device.t2_s", d.t2.to_string()),
        pair("device.eta", d.eta.to_string()),
        pair("device.if_freq_hz", d.if_freq.to_string()),
        pair("device.sample_rate_hz", d.sample_rate.to_string()),
        pair("device.thermal_excitation", d.thermal_excitation.to_string()),
        pair("device.pi_pulse_fidelity", d.pi_pulse_fidelity.to_string()),
        pair("device.omega_q_rad_per_s", d.omega_q.to_string()),
        pair("device.omega_r_rad_per_s", d.omega_r.to_string()),
        pair("device.omega_b_rad_per_s", d.omega_b.to_string()),
        pair("pulse.g_max_rad_per_s", p.g_max.to_string()),
        pair("pulse.sigma_s", p.sigma.to_string()),
        pair("pulse.window_s", p.window.to_string()),
        pair("pulse.t0_s", p.t0.to_string()),
        pair("run.alpha0_re", config.alpha0.re.to_string()),
        pair("run.alpha0_im", config.alpha0.im.to_string()),
        pair("run.t_int_s", config.t_int.to_string()),
        pair("run.n_runs", config.n_runs.to_string()),
        pair("run.seed", config.seed.to_string()),
        pair("run.truncation", config.truncation.to_string()),
        pair("run.measurement_path", config.measurement_path.label().to_string()),
        pair("run.output_dir", config.output_dir.to_string_lossy().into_owned()),
    ]
}

/// Renders a config as flat `key = value` text, SI values with the unit
/// in the key name.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    io::key_values_to_text(&config_pairs(config))
}

fn config_f64(value: &str, key: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: bad number {value:?}")))
}

fn config_u64(value: &str, key: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("{key}: bad integer {value:?}")))
}

/// Parses the flat key-value config format. Unset keys keep their default
/// values; unknown or duplicate keys are configuration errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (key, value) in io::parse_key_values(text)? {
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("duplicate config key {key:?}")));
        }
        let k = key.as_str();
        let v = value.as_str();
        match k {
            "device.chi_rad_per_s" => config.device.chi = config_f64(v, k)?,
            "device.kerr_g_rad_per_s" => config.device.kerr_g = config_f64(v, k)?,
            "device.kerr_e_rad_per_s" => config.device.kerr_e = config_f64(v, k)?,
            "device.kappa_r_rad_per_s" => config.device.kappa_r = config_f64(v, k)?,
            "device.kappa_b_rad_per_s" => config.device.kappa_b = config_f64(v, k)?,
            "device.t1_s" => config.device.t1 = config_f64(v, k)?,
            "device.t2_s" => config.device.t2 = config_f64(v, k)?,
            "device.eta" => config.device.eta = config_f64(v, k)?,
            "device.if_freq_hz" => config.device.if_freq = config_f64(v, k)?,
            "device.sample_rate_hz" => config.device.sample_rate = config_f64(v, k)?,
            "device.thermal_excitation" => config.device.thermal_excitation = config_f64(v, k)?,
            "device.pi_pulse_fidelity" => config.device.pi_pulse_fidelity = config_f64(v, k)?,
            "device.omega_q_rad_per_s" => config.device.omega_q = config_f64(v, k)?,
            "device.omega_r_rad_per_s" => config.device.omega_r = config_f64(v, k)?,
            "device.omega_b_rad_per_s" => config.device.omega_b = config_f64(v, k)?,
            "pulse.g_max_rad_per_s" => config.pulse.g_max = config_f64(v, k)?,
            "pulse.sigma_s" => config.pulse.sigma = config_f64(v, k)?,
            "pulse.window_s" => config.pulse.window = config_f64(v, k)?,
            "pulse.t0_s" => config.pulse.t0 = config_f64(v, k)?,
            "run.alpha0_re" => config.alpha0.re = config_f64(v, k)?,
            "run.alpha0_im" => config.alpha0.im = config_f64(v, k)?,
            "run.t_int_s" => config.t_int = config_f64(v, k)?,
            "run.n_runs" => config.n_runs = config_u64(v, k)? as usize,
            "run.seed" => config.seed = config_u64(v, k)?,
            "run.truncation" => config.truncation = config_u64(v, k)? as usize,
            "run.measurement_path" => config.measurement_path = MeasurementPath::from_label(v)?,
            "run.output_dir" => config.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }
    config.validate()?;
    Ok(config)
}

/// Sizes the global worker pool; 0 keeps the automatic default, and a
/// pool that is already running is left unchanged.
pub fn configure_thread_pool(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

// --- interaction evolution with cavity decay ----------------------------

/// Lindblad propagation of the dispersive + Kerr interaction with the
/// √κ_r·r̂ collapse operator, in the interaction picture: the fast χ·n and
/// Kerr phases are removed analytically, leaving only the κ_r relaxation
/// and the slow residual phase 2K(m−n)·t on the refill term, so the
/// adaptive integrator takes steps set by κ_r instead of χ·n.
fn damped_interaction(
    state: &ReadoutState,
    branch: Branch,
    t_int: f64,
    params: &DeviceParams,
) -> Result<ReadoutState> {
    if !(t_int >= 0.0 && t_int.is_finite()) {
        return Err(Error::InvalidTime(t_int));
    }
    if t_int == 0.0 {
        return Ok(state.clone().with_branch(branch));
    }
    let dim = state.dim();
    let kappa = params.kappa_r;
    let kerr = match branch {
        Branch::Ground => params.kerr_g,
        Branch::Excited => params.kerr_e,
    };
    let rho0 = state.density();
    let y0 = DVector::from_iterator(dim * dim, rho0.iter().cloned());

    // dρ̃[m,n] = κ·√((m+1)(n+1))·e^{i·2K(m−n)t}·ρ̃[m+1,n+1] − κ(m+n)/2·ρ̃[m,n]
    let rhs = move |t: f64, y: &DVector<C64>| {
        let mut dy = DVector::<C64>::zeros(dim * dim);
        for n in 0..dim {
            for m in 0..dim {
                // column-major flattening: (m, n) -> n*dim + m
                let idx = n * dim + m;
                let mut v = y[idx] * C64::new(-0.5 * kappa * (m + n) as f64, 0.0);
                if m + 1 < dim && n + 1 < dim {
                    let gain = (((m + 1) * (n + 1)) as f64).sqrt();
                    let phase = 2.0 * kerr * (m as f64 - n as f64) * t;
                    v += y[(n + 1) * dim + (m + 1)] * C64::from_polar(kappa * gain, phase);
                }
                dy[idx] = v;
            }
        }
        dy
    };

    let opts = OdeOptions {
        rtol: 1e-10,
        atol: 1e-12,
        max_steps: 4_000_000,
    };
    let yt = ode::integrate(&rhs, 0.0, t_int, y0, &opts)?;
    let energies = level_energies(branch, params, dim);
    let mut rho = DMatrix::from_iterator(dim, dim, yt.iter().cloned());
    for n in 0..dim {
        for m in 0..dim {
            rho[(m, n)] *= C64::from_polar(1.0, -(energies[m] - energies[n]) * t_int);
        }
    }
    Ok(ReadoutState::from_density_unchecked(rho, Some(branch)))
}

// --- per-run measurement engine -----------------------------------------

#[derive(Debug, Clone, Copy)]
struct RunDraw {
    beta: C64,
    /// Qubit branch the run actually started in after preparation errors.
    started: Branch,
    /// True when the qubit decayed inside the measurement window.
    decayed: bool,
}

enum PathEngine {
    Direct {
        sampler_g: HusimiSampler,
        sampler_e: HusimiSampler,
        decay_samplers: Mutex<HashMap<usize, Arc<HusimiSampler>>>,
    },
    Trace {
        weight: WeightFunction,
        noise_std: f64,
        env_g: ComplexEnvelope,
        env_e: ComplexEnvelope,
        env_base: ComplexEnvelope,
        detuning_g: f64,
        detuning_e: f64,
        decay_envelopes: Mutex<HashMap<usize, Arc<ComplexEnvelope>>>,
    },
}

struct RunEngine {
    params: DeviceParams,
    alpha0: C64,
    t_int: f64,
    /// Decay-sensitive measurement window (interaction + release rise).
    t_meas: f64,
    dim: usize,
    /// Amplitude transmission √λ of the κ_r loss over the interaction.
    loss_root: f64,
    /// Per-quadrature noise added to decayed-run amplitudes: the loss
    /// vacuum (1−λ)/2 plus the detection kick (1−η)/(2η). Heterodyne on a
    /// loss-channel output equals heterodyne on the pure input with the
    /// sample scaled by √λ and this Gaussian added, so the rare decayed
    /// states never need a mixed-state sampler.
    decay_extra_std: f64,
    /// Noise-free amplitude each clean branch releases; the midpoint
    /// between them is the boundary the error budget counts against.
    reference_g: C64,
    reference_e: C64,
    path: PathEngine,
}

impl RunEngine {
    fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let params = config.device.clone();
        let dim = support_dimension(config.alpha0);
        let prepared = coherent_state(config.alpha0, dim)?;
        let evolved_g = damped_interaction(&prepared, Branch::Ground, config.t_int, &params)?;
        let evolved_e = damped_interaction(&prepared, Branch::Excited, config.t_int, &params)?;

        let (path, reference_g, reference_e) = match config.measurement_path {
            MeasurementPath::Direct => (
                PathEngine::Direct {
                    sampler_g: HusimiSampler::new(&evolved_g, params.eta)?,
                    sampler_e: HusimiSampler::new(&evolved_e, params.eta)?,
                    decay_samplers: Mutex::new(HashMap::new()),
                },
                mean_field(&evolved_g),
                mean_field(&evolved_e),
            ),
            MeasurementPath::Trace => {
                let base_traj = classical_release(C64::new(1.0, 0.0), &config.pulse, &params)?;
                let env_base = buffer_output_envelope(&base_traj, &params)?;
                let env_g = env_base.scaled(mean_field(&evolved_g));
                let env_e = env_base.scaled(mean_field(&evolved_e));
                let detuning_g = branch_detuning(Branch::Ground, &params);
                let detuning_e = branch_detuning(Branch::Excited, &params);
                // Noiseless synthesis never touches the RNG.
                let mut quiet = stream_rng(config.seed, u64::MAX);
                let avg_g = synthesize_trace(&env_g, &params, detuning_g, 0.0, &mut quiet)?;
                let avg_e = synthesize_trace(&env_e, &params, detuning_e, 0.0, &mut quiet)?;
                let raw = build_weight_function(&avg_g, &avg_e)?;
                if raw.is_degenerate() {
                    return Err(Error::DegenerateNormalization(
                        "branch-averaged traces coincide, the weight function carries no signal".into(),
                    ));
                }
                let reference =
                    synthesize_trace(&env_base.scaled(config.alpha0), &params, detuning_g, 0.0, &mut quiet)?;
                let weight = normalize_lambda(&raw, &[reference], config.alpha0)?;
                let noise_std = calibrated_noise_std(&weight, 1.0 / (2.0 * params.eta))?;
                let reference_g = demodulate(&avg_g, &weight)?;
                let reference_e = demodulate(&avg_e, &weight)?;
                (
                    PathEngine::Trace {
                        weight,
                        noise_std,
                        env_g,
                        env_e,
                        env_base,
                        detuning_g,
                        detuning_e,
                        decay_envelopes: Mutex::new(HashMap::new()),
                    },
                    reference_g,
                    reference_e,
                )
            }
        };

        let transmission = (-config.device.kappa_r * config.t_int).exp();
        let eta = config.device.eta;
        Ok(RunEngine {
            params,
            alpha0: config.alpha0,
            t_int: config.t_int,
            t_meas: config.measurement_window(),
            dim,
            loss_root: transmission.sqrt(),
            decay_extra_std: ((1.0 - transmission) / 2.0 + (1.0 - eta) / (2.0 * eta)).sqrt(),
            reference_g,
            reference_e,
            path,
        })
    }

    /// Pre-loss cavity state of a run whose qubit decayed in quantization
    /// bin `bin`: piecewise phase evolution, e for the effective time and
    /// g for the rest. The κ_r loss of the interaction is applied
    /// analytically at sampling time.
    fn decayed_state(&self, bin: usize) -> Result<ReadoutState> {
        let fraction = (bin as f64 + 0.5) / DECAY_BINS as f64;
        let t_e = self.t_int * fraction;
        let prepared = coherent_state(self.alpha0, self.dim)?;
        evolve_piecewise(
            &prepared,
            &[(Branch::Excited, t_e), (Branch::Ground, self.t_int - t_e)],
            &self.params,
        )
    }

    fn sample_beta(&self, started: Branch, decay_bin: Option<usize>, rng: &mut ChaCha8Rng) -> Result<C64> {
        match &self.path {
            PathEngine::Direct {
                sampler_g,
                sampler_e,
                decay_samplers,
            } => {
                match (started, decay_bin) {
                    (Branch::Ground, _) => Ok(sampler_g.sample(rng)),
                    (Branch::Excited, None) => Ok(sampler_e.sample(rng)),
                    (Branch::Excited, Some(bin)) => {
                        let cached = decay_samplers.lock().expect("sampler cache lock").get(&bin).cloned();
                        let sampler = match cached {
                            Some(s) => s,
                            None => {
                                let state = self.decayed_state(bin)?;
                                // Efficiency 1 here: loss vacuum and the
                                // detection kick are added below in one
                                // combined Gaussian.
                                let built = Arc::new(HusimiSampler::with_grid(
                                    &state,
                                    1.0,
                                    DECAY_SAMPLER_CELLS,
                                )?);
                                let mut cache = decay_samplers.lock().expect("sampler cache lock");
                                cache.entry(bin).or_insert(built).clone()
                            }
                        };
                        let mu = sampler.sample(rng);
                        let normal = Normal::new(0.0, self.decay_extra_std)
                            .expect("decay noise width is finite");
                        let kick = C64::new(normal.sample(rng), normal.sample(rng));
                        Ok(mu * self.loss_root + kick)
                    }
                }
            }
            PathEngine::Trace {
                weight,
                noise_std,
                env_g,
                env_e,
                env_base,
                detuning_g,
                detuning_e,
                decay_envelopes,
            } => {
                let envelope: Arc<ComplexEnvelope>;
                // Decayed runs release mostly with the qubit in g, so they
                // carry the ground-branch carrier.
                let (env, detuning) = match (started, decay_bin) {
                    (Branch::Ground, _) => (env_g, *detuning_g),
                    (Branch::Excited, None) => (env_e, *detuning_e),
                    (Branch::Excited, Some(bin)) => {
                        let cached = decay_envelopes.lock().expect("envelope cache lock").get(&bin).cloned();
                        envelope = match cached {
                            Some(e) => e,
                            None => {
                                let state = self.decayed_state(bin)?;
                                // Loss scales ⟨r̂⟩ by √λ.
                                let built =
                                    Arc::new(env_base.scaled(mean_field(&state) * self.loss_root));
                                let mut cache = decay_envelopes.lock().expect("envelope cache lock");
                                cache.entry(bin).or_insert(built).clone()
                            }
                        };
                        (envelope.as_ref(), *detuning_g)
                    }
                };
                let trace = synthesize_trace(env, &self.params, detuning, *noise_std, rng)?;
                demodulate(&trace, weight)
            }
        }
    }

    /// One full run: preparation imperfections, decay sampling, and the
    /// measured amplitude. The RNG draw order is fixed, so each run is a
    /// pure function of its stream.
    fn draw_run(&self, prepared: Branch, rng: &mut ChaCha8Rng) -> Result<RunDraw> {
        let thermal = rng.gen::<f64>() < self.params.thermal_excitation;
        let started = match prepared {
            Branch::Ground => {
                if thermal {
                    Branch::Excited
                } else {
                    Branch::Ground
                }
            }
            Branch::Excited => {
                let flipped = rng.gen::<f64>() < self.params.pi_pulse_fidelity;
                // The π pulse exchanges the thermal occupations; a failed
                // pulse leaves them in place.
                if thermal != flipped {
                    Branch::Excited
                } else {
                    Branch::Ground
                }
            }
        };

        let mut decay_bin = None;
        let mut decayed = false;
        if started == Branch::Excited {
            let u: f64 = rng.gen();
            let tau = -self.params.t1 * (1.0 - u).ln();
            if tau < self.t_meas {
                decayed = true;
                // The matched filter accumulates the dispersive imprint
                // roughly uniformly over the window, so a decay at τ
                // freezes the informative rotation at the fraction
                // τ/t_meas of its full value.
                let fraction = tau / self.t_meas;
                decay_bin = Some(((fraction * DECAY_BINS as f64) as usize).min(DECAY_BINS - 1));
            }
        }

        let beta = self.sample_beta(started, decay_bin, rng)?;
        Ok(RunDraw {
            beta,
            started,
            decayed,
        })
    }
}

// --- readout Monte Carlo ------------------------------------------------

/// Outputs of one readout characterization: the summary report, both
/// outcome histograms, the raw amplitudes, and the error-budget lines.
#[derive(Debug, Clone)]
pub struct ReadoutArtifacts {
    pub report: ReadoutReport,
    pub hist_g: AmplitudeHistogram,
    pub hist_e: AmplitudeHistogram,
    pub samples_g: Vec<C64>,
    pub samples_e: Vec<C64>,
    /// Fraction of e-prepared runs that decayed inside the measurement
    /// window and released an amplitude on the g side of the midpoint
    /// between the two clean branch responses. Counted against the clean
    /// midpoint rather than the fitted decision boundary, so the other
    /// error channels cannot shift what is booked as a lifetime loss.
    pub decay_error_e: f64,
    /// Fraction of e-prepared runs that started in g (thermal occupation
    /// and π-pulse errors combined).
    pub prep_error_e: f64,
    /// Fraction of g-prepared runs that started in e (thermal occupation).
    pub thermal_error_g: f64,
}

/// Histogram edges sized to the probe plus an 8-standard-deviation
/// detection-noise margin, so coverage loss is negligible at any η.
fn readout_edges(config: &ExperimentConfig) -> Vec<f64> {
    let sigma = (1.0 / (2.0 * config.device.eta)).sqrt();
    let half = (config.alpha0.norm() + 8.0 * sigma).ceil();
    uniform_edges(-half, half, DEFAULT_HISTOGRAM_BINS)
}

fn readout_monte_carlo(config: &ExperimentConfig) -> Result<ReadoutArtifacts> {
    let engine = RunEngine::build(config)?;
    let n = config.n_runs;
    let seed = config.seed;

    let run_ensemble = |prepared: Branch, offset: u64| -> Result<Vec<RunDraw>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, 2 * i as u64 + offset);
                engine.draw_run(prepared, &mut rng)
            })
            .collect()
    };
    let draws_g = run_ensemble(Branch::Ground, 0)?;
    let draws_e = run_ensemble(Branch::Excited, 1)?;

    let samples_g: Vec<C64> = draws_g.iter().map(|d| d.beta).collect();
    let samples_e: Vec<C64> = draws_e.iter().map(|d| d.beta).collect();
    let edges = readout_edges(config);
    let hist_g = histogram2d(&samples_g, &edges, &edges)?;
    let hist_e = histogram2d(&samples_e, &edges, &edges)?;
    let region = DecisionRegion::build(&hist_g, &hist_e)?;
    let report = error_rates(&samples_g, &samples_e, &region)?;

    let nf = n as f64;
    let decay_error_e = draws_e
        .iter()
        .filter(|d| {
            d.decayed
                && (d.beta - engine.reference_g).norm_sqr() <= (d.beta - engine.reference_e).norm_sqr()
        })
        .count() as f64
        / nf;
    let prep_error_e = draws_e.iter().filter(|d| d.started == Branch::Ground).count() as f64 / nf;
    let thermal_error_g = draws_g.iter().filter(|d| d.started == Branch::Excited).count() as f64 / nf;

    Ok(ReadoutArtifacts {
        report,
        hist_g,
        hist_e,
        samples_g,
        samples_e,
        decay_error_e,
        prep_error_e,
        thermal_error_g,
    })
}

/// Runs the two prepared ensembles through preparation, interaction,
/// release and measurement, classifies every amplitude by the
/// maximum-density rule, and writes `histogram_g.csv`, `histogram_e.csv`
/// and `report.txt` into the output directory.
pub fn run_readout(config: &ExperimentConfig) -> Result<ReadoutArtifacts> {
    let artifacts = readout_monte_carlo(config)?;
    let dir = &config.output_dir;
    io::write_text(&dir.join("histogram_g.csv"), &io::histogram_to_csv(&artifacts.hist_g)?)?;
    io::write_text(&dir.join("histogram_e.csv"), &io::histogram_to_csv(&artifacts.hist_e)?)?;
    let extras = vec![
        ("decay_error_e".to_string(), artifacts.decay_error_e),
        ("prep_error_e".to_string(), artifacts.prep_error_e),
        ("thermal_error_g".to_string(), artifacts.thermal_error_g),
    ];
    io::write_text(&dir.join("report.txt"), &io::report_to_text(&artifacts.report, &extras)?)?;
    Ok(artifacts)
}

// --- parameter sweeps ---------------------------------------------------

/// Outcome-overlap matrix over probe amplitude and interaction time,
/// row-major with t_int varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSweep {
    pub alpha0: Vec<f64>,
    pub t_int: Vec<f64>,
    pub overlap: Vec<f64>,
}

/// Runs the readout Monte Carlo on every (α₀, t_int) cell with an
/// independent derived seed and writes `sweep_overlap.csv`. The probe
/// keeps the phase of the configured alpha0.
pub fn sweep_overlap(
    config: &ExperimentConfig,
    alpha0_list: &[f64],
    t_int_list: &[f64],
) -> Result<OverlapSweep> {
    if alpha0_list.is_empty() {
        return Err(Error::EmptySamples("sweep alpha0 list"));
    }
    if t_int_list.is_empty() {
        return Err(Error::EmptySamples("sweep t_int list"));
    }
    for &a in alpha0_list {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("sweep alpha0 {a} must be non-negative and finite")));
        }
    }
    let phase = if config.alpha0 == C64::new(0.0, 0.0) {
        0.0
    } else {
        config.alpha0.arg()
    };
    // The truncation budget must hold the largest swept probe, not the
    // base config's.
    let mut worst = config.clone();
    let a_max = alpha0_list.iter().cloned().fold(0.0f64, f64::max);
    worst.alpha0 = C64::from_polar(a_max, phase);
    worst.validate()?;
    let cells: Vec<(usize, f64, f64)> = alpha0_list
        .iter()
        .enumerate()
        .flat_map(|(ia, &a)| {
            t_int_list
                .iter()
                .enumerate()
                .map(move |(it, &t)| (ia * t_int_list.len() + it, a, t))
        })
        .collect();
    let overlap: Vec<f64> = cells
        .par_iter()
        .map(|&(idx, a, t)| {
            let mut cell = config.clone();
            cell.alpha0 = C64::from_polar(a, phase);
            cell.t_int = t;
            cell.seed = stream_seed(config.seed, SWEEP_STREAM_BASE + idx as u64);
            readout_monte_carlo(&cell).map(|art| art.report.overlap)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sweep = OverlapSweep {
        alpha0: alpha0_list.to_vec(),
        t_int: t_int_list.to_vec(),
        overlap,
    };
    io::write_text(
        &config.output_dir.join("sweep_overlap.csv"),
        &io::sweep_to_csv(&sweep.alpha0, &sweep.t_int, &sweep.overlap)?,
    )?;
    Ok(sweep)
}

/// Remaining-energy table over pump spread and peak coupling, row-major
/// with g_max varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseStudy {
    pub sigma: Vec<f64>,
    pub g_max: Vec<f64>,
    pub remaining: Vec<f64>,
}

/// Integrates the release for every (σ, g_max) cell and writes
/// `release_study.csv`. Each cell uses a fresh default-window pulse; with
/// internal loss disabled the g_max = 0 column is exactly 1.
pub fn run_release_study(
    config: &ExperimentConfig,
    sigma_list: &[f64],
    gmax_list: &[f64],
) -> Result<ReleaseStudy> {
    config.validate()?;
    if sigma_list.is_empty() {
        return Err(Error::EmptySamples("release sigma list"));
    }
    if gmax_list.is_empty() {
        return Err(Error::EmptySamples("release g_max list"));
    }
    let cells: Vec<(f64, f64)> = sigma_list
        .iter()
        .flat_map(|&s| gmax_list.iter().map(move |&g| (s, g)))
        .collect();
    let remaining: Vec<f64> = cells
        .par_iter()
        .map(|&(sigma, g_max)| {
            let pulse = PumpPulse::new(g_max, sigma)?;
            remaining_fraction(&pulse, &config.device)
        })
        .collect::<Result<Vec<f64>>>()?;
    let study = ReleaseStudy {
        sigma: sigma_list.to_vec(),
        g_max: gmax_list.to_vec(),
        remaining,
    };
    io::write_text(
        &config.output_dir.join("release_study.csv"),
        &io::release_table_to_csv(&study.sigma, &study.g_max, &study.remaining)?,
    )?;
    Ok(study)
}

// --- Wigner map generation ----------------------------------------------

/// How the Wigner maps are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WignerMethod {
    /// Exact displaced-parity evaluation of the evolved state.
    Direct,
    /// Shot-sampled Ramsey parity protocol; `exact` skips the shot noise
    /// and returns the protocol expectation values.
    Protocol { n_shots: usize, exact: bool },
}

/// One Wigner generation request: the method plus a frame rotation
/// applied to both emitted maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerJob {
    pub method: WignerMethod,
    pub rotation: f64,
}

impl Default for WignerJob {
    fn default() -> Self {
        WignerJob {
            method: WignerMethod::Direct,
            rotation: 0.0,
        }
    }
}

/// Produces the g- and e-branch maps of the interacted probe on `grid`
/// and writes `wigner_g.csv` and `wigner_e.csv`.
pub fn run_wigner(
    config: &ExperimentConfig,
    grid: &PhaseSpaceGrid,
    job: &WignerJob,
) -> Result<[WignerMap; 2]> {
    config.validate()?;
    if !job.rotation.is_finite() {
        return Err(Error::InvalidParams(format!(
            "wigner rotation {} must be finite",
            job.rotation
        )));
    }
    let dim = config.truncation;
    let mut maps = Vec::with_capacity(2);
    for (index, branch) in [Branch::Ground, Branch::Excited].into_iter().enumerate() {
        let map = match job.method {
            WignerMethod::Direct => {
                let prepared = coherent_state(config.alpha0, dim)?;
                let evolved = evolve_interaction(&prepared, branch, config.t_int, &config.device, false)?;
                wigner_direct(&evolved, grid)?
            }
            WignerMethod::Protocol { n_shots, exact } => {
                let options = ProtocolOptions {
                    dim,
                    exact_expectation: exact,
                    ..ProtocolOptions::default()
                };
                let mut rng = stream_rng(config.seed, WIGNER_STREAM_BASE + index as u64);
                let raw = wigner_protocol_sim(
                    config.alpha0,
                    branch,
                    config.t_int,
                    &config.device,
                    grid,
                    n_shots,
                    &options,
                    &mut rng,
                )?;
                // The excited-qubit run reads out inverted parity; undo
                // the known sign so both emitted maps are reconstructed
                // Wigner functions.
                if branch == Branch::Excited {
                    let flipped: Vec<f64> = raw.values().iter().map(|v| -v).collect();
                    WignerMap::from_values(raw.grid().clone(), flipped, raw.rotation_applied())?
                } else {
                    raw
                }
            }
        };
        let map = if job.rotation == 0.0 {
            map
        } else {
            rotate_phase_space(&map, job.rotation)?
        };
        maps.push(map);
    }
    let [map_g, map_e]: [WignerMap; 2] = maps.try_into().expect("two branches were produced");
    io::write_text(&config.output_dir.join("wigner_g.csv"), &io::wigner_to_csv(&map_g)?)?;
    io::write_text(&config.output_dir.join("wigner_e.csv"), &io::wigner_to_csv(&map_e)?)?;
    Ok([map_g, map_e])
}

// --- calibration pass ---------------------------------------------------

/// Results of the synthetic calibration pass: every fitted quantity next
/// to the configured truth it should recover.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSummary {
    pub nbar_true: f64,
    pub nbar_fit: f64,
    pub kappa_r_fit: f64,
    pub chi_fit: f64,
    pub kerr_g_fit: f64,
    pub kerr_e_fit: f64,
    pub pi_pulse_survival: f64,
    pub thermal_p_g: f64,
    pub thermal_p_e: f64,
    pub thermal_p_f: f64,
    pub thermal_temperature_k: f64,
}

/// Reference complex responses of the three transmon levels used by the
/// synthetic thermal-population demonstration.
pub const THERMAL_APEXES: [C64; 3] = [
    C64::new(1.0, 0.0),
    C64::new(-0.2, 1.3),
    C64::new(-1.1, -0.8),
];

/// Sequence-averaged responses of the six permutation pulse sequences for
/// given level populations (g, e, f).
pub fn permuted_responses(apexes: &[C64; 3], populations: [f64; 3]) -> [C64; 6] {
    let mut out = [C64::new(0.0, 0.0); 6];
    for (k, order) in crate::calibration::PERMUTATIONS.iter().enumerate() {
        out[k] = apexes[order[0]] * populations[0]
            + apexes[order[1]] * populations[1]
            + apexes[order[2]] * populations[2];
    }
    out
}

/// Runs the calibration chain on synthetic data generated from the
/// configured device: photon-number decay fit at 1% multiplicative noise,
/// dispersive and Kerr fit from simulated detunings, π-pulse survival, and
/// the thermal-population solver. Writes `calibration.txt`.
pub fn run_calibration(config: &ExperimentConfig) -> Result<CalibrationSummary> {
    config.validate()?;
    let d = &config.device;
    let nbar_true = config.alpha0.norm_sqr();
    if nbar_true <= 0.0 {
        return Err(Error::Config("calibration needs a nonzero probe amplitude".into()));
    }

    let times: Vec<f64> = (0..30).map(|k| 0.2e-6 + k as f64 * (3.8e-6 / 29.0)).collect();
    let clean = synthesize_decay_curve(nbar_true, d.kappa_r, crate::calibration::DEFAULT_P1_SCALE, &times)?;
    let mut rng = stream_rng(config.seed, CALIBRATION_STREAM_BASE);
    let mut noisy = |values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let kick: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                (v * (1.0 + 0.01 * kick)).clamp(0.0, 1.0)
            })
            .collect()
    };
    let p0 = noisy(clean.p0());
    let p1 = noisy(clean.p1());
    let curve = DecayCurve::new(times, p0, p1)?;
    let photon = fit_photon_calibration(&curve, crate::calibration::DEFAULT_P1_SCALE)?;

    let nbars: Vec<f64> = (2..=16).map(|k| k as f64).collect();
    let series = simulated_detuning_series(&nbars, d, 2e-9)?;
    let dispersive = fit_dispersive_and_kerr(&series)?;

    let pi_pulse_survival = pulse_fidelity_decay(1, 35e-9, d.t1, d.t2)?;

    let populations = [1.0 - d.thermal_excitation, d.thermal_excitation, 0.0];
    let responses = permuted_responses(&THERMAL_APEXES, populations);
    let thermal = solve_thermal_populations(&responses, &THERMAL_APEXES, d.omega_q)?;

    let summary = CalibrationSummary {
        nbar_true,
        nbar_fit: photon.nbar,
        kappa_r_fit: photon.kappa_r,
        chi_fit: dispersive.chi,
        kerr_g_fit: dispersive.kerr_g,
        kerr_e_fit: dispersive.kerr_e,
        pi_pulse_survival,
        thermal_p_g: thermal.p_g,
        thermal_p_e: thermal.p_e,
        thermal_p_f: thermal.p_f,
        thermal_temperature_k: thermal.temperature,
    };
    let pairs: Vec<(String, String)> = vec![
        ("nbar_true".into(), summary.nbar_true.to_string()),
        ("nbar_fit".into(), summary.nbar_fit.to_string()),
        ("kappa_r_true_rad_per_s".into(), d.kappa_r.to_string()),
        ("kappa_r_fit_rad_per_s".into(), summary.kappa_r_fit.to_string()),
        ("chi_true_rad_per_s".into(), d.chi.to_string()),
        ("chi_fit_rad_per_s".into(), summary.chi_fit.to_string()),
        ("kerr_g_true_rad_per_s".into(), d.kerr_g.to_string()),
        ("kerr_g_fit_rad_per_s".into(), summary.kerr_g_fit.to_string()),
        ("kerr_e_true_rad_per_s".into(), d.kerr_e.to_string()),
        ("kerr_e_fit_rad_per_s".into(), summary.kerr_e_fit.to_string()),
        ("pi_pulse_survival".into(), summary.pi_pulse_survival.to_string()),
        ("thermal_p_g".into(), summary.thermal_p_g.to_string()),
        ("thermal_p_e".into(), summary.thermal_p_e.to_string()),
        ("thermal_p_f".into(), summary.thermal_p_f.to_string()),
        ("thermal_temperature_k".into(), summary.thermal_temperature_k.to_string()),
    ];
    io::write_text(
        &config.output_dir.join("calibration.txt"),
        &io::key_values_to_text(&pairs),
    )?;
    Ok(summary)
}

// --- selfcheck ----------------------------------------------------------

/// One invariant verified by the selfcheck suite.
#[derive(Debug, Clone)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<(bool, String)>) -> SelfCheck {
    match result {
        Ok((passed, detail)) => SelfCheck {
            name,
            passed,
            detail,
        },
        Err(e) => SelfCheck {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The interaction-picture fast path must agree with the plain
    /// Lindblad integration of the full generator.
    #[test]
    fn interaction_picture_matches_direct_lindblad() {
        let params = DeviceParams::default();
        let prepared = coherent_state(C64::new(1.2, 0.4), 22).unwrap();
        for branch in [Branch::Ground, Branch::Excited] {
            let fast = damped_interaction(&prepared, branch, 140e-9, &params).unwrap();
            let slow = evolve_interaction(&prepared, branch, 140e-9, &params, true).unwrap();
            let mut worst = 0.0f64;
            for (a, b) in fast.density().iter().zip(slow.density().iter()) {
                worst = worst.max((a - b).norm());
            }
            assert!(worst < 1e-8, "max density deviation {worst:.2e}");
        }
    }

    #[test]
    fn zero_interaction_fast_path_is_identity() {
        let params = DeviceParams::default();
        let prepared = coherent_state(C64::new(0.9, -0.3), 16).unwrap();
        let out = damped_interaction(&prepared, Branch::Excited, 0.0, &params).unwrap();
        assert_eq!(out.branch(), Some(Branch::Excited));
        for (a, b) in out.density().iter().zip(prepared.density().iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}

/// Fast invariant suite behind the `selfcheck` command: vacuum Wigner
/// normalization, lossless energy conservation, the conversion-rate
/// identity, config round-trip, and Monte-Carlo determinism.
pub fn run_selfcheck() -> Vec<SelfCheck> {
    let mut checks = Vec::new();

    checks.push(check("vacuum wigner origin", (|| {
        let state = ReadoutState::vacuum(32)?;
        let grid = PhaseSpaceGrid::from_axes(vec![-0.5, 0.0, 0.5], vec![-0.5, 0.0, 0.5])?;
        let map = wigner_direct(&state, &grid)?;
        let w0 = map.at(1, 1);
        let target = 2.0 / std::f64::consts::PI;
        Ok(((w0 - target).abs() <= 1e-6, format!("W(0) = {w0:.8}, want {target:.8}")))
    })()));

    checks.push(check("lossless release conserves energy", (|| {
        let mut params = DeviceParams::default();
        params.kappa_r = 0.0;
        params.kappa_b = 0.0;
        let pulse = PumpPulse::new(TAU * 7.2e6, 28e-9)?;
        let traj = classical_release(C64::new(1.0, 0.0), &pulse, &params)?;
        let budget = traj.budget.expect("integrator attaches a budget");
        let residual = budget.residual();
        Ok((residual <= 1e-9, format!("relative residual {residual:.3e}")))
    })()));

    checks.push(check("conversion rate saturates at critical coupling", (|| {
        let kappa_b = TAU * 21e6;
        let at_critical = crate::release::conversion_rate(kappa_b / 4.0, kappa_b);
        Ok((at_critical == kappa_b / 2.0, format!("γʳ = {at_critical:.6e}, want {:.6e}", kappa_b / 2.0)))
    })()));

    checks.push(check("config round-trip", (|| {
        let config = ExperimentConfig::default();
        let parsed = parse_config(&serialize_config(&config))?;
        Ok((parsed == config, "parse(serialize(default)) == default".into()))
    })()));

    checks.push(check("readout determinism", (|| {
        let mut config = ExperimentConfig::default();
        config.alpha0 = C64::new(1.5, 0.0);
        config.t_int = 40e-9;
        config.n_runs = 64;
        config.truncation = 32;
        config.seed = 3;
        let a = readout_monte_carlo(&config)?;
        let b = readout_monte_carlo(&config)?;
        let same = a.samples_g == b.samples_g && a.samples_e == b.samples_e;
        Ok((same, format!("{} amplitudes per ensemble", config.n_runs)))
    })()));

    checks
}
