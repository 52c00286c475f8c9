//! On-demand release of the readout mode into the buffer and output line.
//!
//! During release a pumped three-wave process couples the long-lived
//! readout mode r to the lossy buffer mode b with a time-dependent
//! beam-splitter rate g(t). The classical amplitudes obey
//!
//!   ṙ = −i g*(t) b − (κ_r/2) r
//!   ḃ = −i g(t) r − (κ_b/2) b
//!
//! with a sech pump envelope g(t) = g_max / cosh(√(π/2)(t−t0)/σ) truncated
//! to a square window (default width 8σ). The steady-state conversion rate
//! of the readout mode into the line is
//!
//!   γʳ = (κ_b/2)·Re[1 − √(1 − 16 g²/κ_b²)]
//!
//! which saturates at κ_b/2 above the critical coupling 4g = κ_b.
//! Solutions of this model are only validated against measurements up to
//! 4·g_max/κ_b ≈ 1.6; [`PumpPulse::over_critical`] flags operating points
//! beyond that.

use nalgebra::DVector;

use crate::dynamics::DeviceParams;
use crate::fit::{levenberg_marquardt, FitOptions};
use crate::hilbert::{apply_loss_channel, ReadoutState};
use crate::ode::{self, OdeOptions};
use crate::signal::ComplexEnvelope;
use crate::{C64, Error, Result};

/// Regime boundary above which the two-mode model stops matching
/// measurements.
pub const OVER_CRITICAL_RATIO: f64 = 1.6;

/// Sech release pulse: coupling amplitude, spread, and square window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpPulse {
    /// Peak coupling rate (rad/s).
    pub g_max: f64,
    /// Temporal spread σ of the sech envelope (s).
    pub sigma: f64,
    /// Total support of the square truncation window (s).
    pub window: f64,
    /// Center of the envelope (s).
    pub t0: f64,
}

impl PumpPulse {
    /// Pulse with the default 8σ window, centered at 4σ so the support
    /// starts at t = 0.
    pub fn new(g_max: f64, sigma: f64) -> Result<Self> {
        let pulse = PumpPulse {
            g_max,
            sigma,
            window: 8.0 * sigma,
            t0: 4.0 * sigma,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn with_window(g_max: f64, sigma: f64, window: f64, t0: f64) -> Result<Self> {
        let pulse = PumpPulse {
            g_max,
            sigma,
            window,
            t0,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_max >= 0.0 && self.g_max.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "pump g_max must be non-negative, got {}",
                self.g_max
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "pump sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.window >= 4.0 * self.sigma && self.window.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "pump window {} shorter than 4*sigma = {}",
                self.window,
                4.0 * self.sigma
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidParams(format!("pump center must be finite, got {}", self.t0)));
        }
        Ok(())
    }

    pub fn start(&self) -> f64 {
        self.t0 - self.window / 2.0
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.window / 2.0
    }

    /// True when 4·g_max/κ_b exceeds the validated-model boundary.
    pub fn over_critical(&self, kappa_b: f64) -> bool {
        4.0 * self.g_max / kappa_b > OVER_CRITICAL_RATIO
    }
}

/// Coupling envelope g(t): sech profile inside the window, zero outside.
pub fn pump_envelope(t: f64, pulse: &PumpPulse) -> f64 {
    if t < pulse.start() || t > pulse.end() {
        return 0.0;
    }
    let x = (std::f64::consts::PI / 2.0).sqrt() * (t - pulse.t0) / pulse.sigma;
    pulse.g_max / x.cosh()
}

/// Energy bookkeeping accumulated alongside a release trajectory.
/// All entries are absolute squared amplitudes in units of |r0|² = initial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBudget {
    pub initial: f64,
    /// ∫ κ_b |b|² dt: energy emitted into the output line.
    pub released: f64,
    /// ∫ κ_r |r|² dt: energy lost internally in the readout mode.
    pub internal_loss: f64,
    pub final_r: f64,
    pub final_b: f64,
}

impl EnergyBudget {
    /// Relative violation of initial = released + internal + final energies.
    pub fn residual(&self) -> f64 {
        let sum = self.released + self.internal_loss + self.final_r + self.final_b;
        (sum - self.initial).abs() / self.initial.max(f64::MIN_POSITIVE)
    }

    pub fn remaining_fraction(&self) -> f64 {
        if self.initial <= 0.0 {
            return 0.0;
        }
        self.final_r / self.initial
    }

    pub fn released_fraction(&self) -> f64 {
        if self.initial <= 0.0 {
            return 0.0;
        }
        self.released / self.initial
    }

    pub fn internal_loss_fraction(&self) -> f64 {
        if self.initial <= 0.0 {
            return 0.0;
        }
        self.internal_loss / self.initial
    }
}

/// Sampled two-mode trajectory of a release.
#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    /// Strictly increasing sample times (s).
    pub times: Vec<f64>,
    pub r_amp: Vec<C64>,
    pub b_amp: Vec<C64>,
    /// Present when produced by the integrator; trajectories parsed from
    /// CSV carry no budget.
    pub budget: Option<EnergyBudget>,
}

impl ModeTrajectory {
    pub fn from_parts(times: Vec<f64>, r_amp: Vec<C64>, b_amp: Vec<C64>) -> Result<Self> {
        if times.len() != r_amp.len() {
            return Err(Error::LengthMismatch {
                context: "trajectory times vs r amplitudes",
                left: times.len(),
                right: r_amp.len(),
            });
        }
        if times.len() != b_amp.len() {
            return Err(Error::LengthMismatch {
                context: "trajectory times vs b amplitudes",
                left: times.len(),
                right: b_amp.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("trajectory times not strictly increasing".into()));
        }
        Ok(ModeTrajectory {
            times,
            r_amp,
            b_amp,
            budget: None,
        })
    }
}

/// Integrates the two-mode release equations across the pump window,
/// sampling the trajectory at the device sample rate and accumulating the
/// energy budget with the same adaptive integrator (relative tolerance
/// 1e-10).
pub fn classical_release(r0: C64, pulse: &PumpPulse, params: &DeviceParams) -> Result<ModeTrajectory> {
    pulse.validate()?;
    if !(r0.re.is_finite() && r0.im.is_finite()) {
        return Err(Error::InvalidParams("release initial amplitude must be finite".into()));
    }
    let kappa_r = params.kappa_r;
    let kappa_b = params.kappa_b;
    let pulse = *pulse;
    // State: [r, b, acc_r, acc_b] with the accumulators integrating
    // κ|amplitude|² as real values.
    let rhs = move |t: f64, y: &DVector<C64>| {
        let g = pump_envelope(t, &pulse);
        let r = y[0];
        let b = y[1];
        DVector::from_vec(vec![
            b * C64::new(0.0, -g) + r * C64::new(-kappa_r / 2.0, 0.0),
            r * C64::new(0.0, -g) + b * C64::new(-kappa_b / 2.0, 0.0),
            C64::new(kappa_r * r.norm_sqr(), 0.0),
            C64::new(kappa_b * b.norm_sqr(), 0.0),
        ])
    };

    let t_start = pulse.start();
    let t_end = pulse.end();
    let dt = 1.0 / params.sample_rate;
    let n_samples = ((pulse.window / dt).ceil() as usize).max(2);
    let mut times = Vec::with_capacity(n_samples + 1);
    for k in 0..=n_samples {
        times.push((t_start + k as f64 * dt).min(t_end));
    }
    // The ceil above can make the second-to-last point collide with t_end.
    times.dedup_by(|a, b| *a <= *b + f64::EPSILON * t_end.abs().max(1e-12));

    let y0 = DVector::from_vec(vec![r0, C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let opts = OdeOptions {
        rtol: 1e-10,
        atol: 1e-14,
        max_steps: 2_000_000,
    };
    let mut sampled_t = Vec::with_capacity(times.len());
    let mut r_amp = Vec::with_capacity(times.len());
    let mut b_amp = Vec::with_capacity(times.len());
    let y_end = ode::integrate_observed(&rhs, t_start, &times, y0, &opts, |t, y| {
        sampled_t.push(t);
        r_amp.push(y[0]);
        b_amp.push(y[1]);
    })?;

    let budget = EnergyBudget {
        initial: r0.norm_sqr(),
        released: y_end[3].re,
        internal_loss: y_end[2].re,
        final_r: y_end[0].norm_sqr(),
        final_b: y_end[1].norm_sqr(),
    };
    Ok(ModeTrajectory {
        times: sampled_t,
        r_amp,
        b_amp,
        budget: Some(budget),
    })
}

/// Fraction of readout energy left after the pulse, |r(T)|²/|r0|².
pub fn remaining_fraction(pulse: &PumpPulse, params: &DeviceParams) -> Result<f64> {
    let traj = classical_release(C64::new(1.0, 0.0), pulse, params)?;
    let budget = traj.budget.expect("integrator always attaches a budget");
    Ok(budget.remaining_fraction().clamp(0.0, 1.0))
}

/// Steady-state conversion rate γʳ of the readout mode into the line.
pub fn conversion_rate(g: f64, kappa_b: f64) -> f64 {
    let disc = C64::new(1.0 - 16.0 * g * g / (kappa_b * kappa_b), 0.0);
    kappa_b / 2.0 * (1.0 - disc.sqrt().re)
}

/// Output-line amplitude √κ_b·b(t) as a complex baseband envelope.
pub fn buffer_output_envelope(traj: &ModeTrajectory, params: &DeviceParams) -> Result<ComplexEnvelope> {
    if traj.times.is_empty() {
        return Err(Error::EmptySamples("release trajectory"));
    }
    let root = params.kappa_b.sqrt();
    let samples: Vec<C64> = traj.b_amp.iter().map(|b| b * root).collect();
    ComplexEnvelope::new(params.sample_rate, traj.times[0], samples)
}

/// Quantum action of the release on the stored state: a pure-loss channel
/// of transmissivity `release_efficiency`. The beam-splitter interaction is
/// passive-linear, so the reduced map on the readout mode is exactly this
/// channel; the transmissivity comes from the classical energy bookkeeping
/// (released fraction of the initial energy).
pub fn release_state_map(state: &ReadoutState, release_efficiency: f64) -> Result<ReadoutState> {
    apply_loss_channel(state, release_efficiency)
}

/// Least-squares fit of effective (g_max, κ_b) to a measured
/// remaining-fraction curve over σ, used where the bare model stops
/// matching over-critical data.
pub fn fit_effective_release_params(
    sigma_list: &[f64],
    measured_fractions: &[f64],
    g_max_init: f64,
    kappa_b_init: f64,
    params: &DeviceParams,
) -> Result<(f64, f64)> {
    if sigma_list.len() != measured_fractions.len() {
        return Err(Error::LengthMismatch {
            context: "release fit sigma vs fraction",
            left: sigma_list.len(),
            right: measured_fractions.len(),
        });
    }
    if sigma_list.len() < 2 {
        return Err(Error::RankDeficient("need at least two release points".into()));
    }
    let base = params.clone();
    let sigmas = sigma_list.to_vec();
    let measured = measured_fractions.to_vec();
    let residuals = move |p: &[f64]| -> Result<Vec<f64>> {
        let (g_max, kappa_b) = (p[0], p[1]);
        if g_max < 0.0 || kappa_b <= 0.0 {
            return Err(Error::InvalidParams("release fit stepped outside the physical domain".into()));
        }
        let mut eff = base.clone();
        eff.kappa_b = kappa_b;
        let mut out = Vec::with_capacity(sigmas.len());
        for (sigma, m) in sigmas.iter().zip(measured.iter()) {
            let pulse = PumpPulse::new(g_max, *sigma)?;
            out.push(remaining_fraction(&pulse, &eff)? - m);
        }
        Ok(out)
    };
    let fit = levenberg_marquardt(residuals, &[g_max_init, kappa_b_init], &FitOptions::default())?;
    Ok((fit.params[0], fit.params[1]))
}
