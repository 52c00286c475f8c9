//! Device calibration procedures: photon-number and cavity-decay fits from
//! qubit excitation curves, dispersive shift and Kerr rates from resonator
//! detuning series, π-pulse fidelity decay, and thermal populations from
//! the three-level reference measurement.

use crate::dynamics::{self, DeviceParams};
use crate::fit::{self, FitOptions};
use crate::hilbert::{coherent_state, Branch};
use crate::{C64, Error, Result};

/// Reduced Planck constant (J·s).
const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
const K_B: f64 = 1.380_649e-23;

/// Scale applied to the single-photon excitation probability to account for
/// the selective pulse's imperfect visibility.
pub const DEFAULT_P1_SCALE: f64 = 0.95;

/// Qubit excitation probabilities conditioned on the cavity holding zero or
/// one photon, recorded against the wait time after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    times: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, p0: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        if times.len() != p0.len() || times.len() != p1.len() {
            return Err(Error::LengthMismatch {
                context: "decay curve columns",
                left: times.len(),
                right: p0.len().max(p1.len()),
            });
        }
        if times.is_empty() {
            return Err(Error::EmptySamples("decay curve has no points"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidTime(
                *times.iter().find(|t| !t.is_finite() || **t < 0.0).unwrap(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("decay curve times must increase".into()));
        }
        for p in p0.iter().chain(p1.iter()) {
            if !p.is_finite() || !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidParams(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(DecayCurve { times, p0, p1 })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Probabilities of exciting the qubit with pulses selective on the cavity
/// holding 0 or 1 photons, after the loaded field decayed for `t`.
///
/// The surviving mean photon number is n̄·e^{−κ_r·t} and the field stays
/// Poissonian, so p0 = e^{−n̄(t)} and p1 = scale·n̄(t)·e^{−n̄(t)}. With
/// `p1_scale` = 1 the ratio p1/p0 equals n̄(t) identically.
pub fn fock_decay_model(
    nbar: f64,
    kappa_r: f64,
    t: f64,
    p1_scale: f64,
) -> Result<(f64, f64)> {
    if !nbar.is_finite() || nbar < 0.0 {
        return Err(Error::InvalidParams(format!("nbar {nbar} must be >= 0")));
    }
    if !kappa_r.is_finite() || kappa_r <= 0.0 {
        return Err(Error::InvalidParams(format!("kappa_r {kappa_r} must be > 0")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidTime(t));
    }
    if !p1_scale.is_finite() || !(p1_scale > 0.0 && p1_scale <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "p1 scale {p1_scale} must lie in (0, 1]"
        )));
    }
    let surviving = nbar * (-kappa_r * t).exp();
    let p0 = (-surviving).exp();
    Ok((p0, p1_scale * surviving * p0))
}

/// Noiseless model curve over the given times.
pub fn synthesize_decay_curve(
    nbar: f64,
    kappa_r: f64,
    p1_scale: f64,
    times: &[f64],
) -> Result<DecayCurve> {
    let mut p0 = Vec::with_capacity(times.len());
    let mut p1 = Vec::with_capacity(times.len());
    for &t in times {
        let (a, b) = fock_decay_model(nbar, kappa_r, t, p1_scale)?;
        p0.push(a);
        p1.push(b);
    }
    DecayCurve::new(times.to_vec(), p0, p1)
}

/// Photon-number calibration extracted from a decay curve.
#[derive(Debug, Clone)]
pub struct PhotonCalibration {
    pub nbar: f64,
    pub kappa_r: f64,
    /// 2×2 covariance of (nbar, kappa_r), row-major.
    pub covariance: [[f64; 2]; 2],
}

/// Least-squares fit of `fock_decay_model` against both curve columns.
pub fn fit_photon_calibration(curve: &DecayCurve, p1_scale: f64) -> Result<PhotonCalibration> {
    if curve.len() < 5 {
        return Err(Error::InvalidParams(format!(
            "photon calibration needs at least 5 time points, got {}",
            curve.len()
        )));
    }
    // p0(0) pins nbar; the p1/p0 ratio at the first and last points pins the
    // decay rate for the starting guess
    let nbar0 = (-curve.p0[0].max(1e-12).ln()).max(1e-3);
    let span = curve.times[curve.len() - 1] - curve.times[0];
    let ratio = |i: usize| (curve.p1[i] / curve.p0[i].max(1e-12) / p1_scale).max(1e-9);
    let kappa0 = {
        let decay = (ratio(0) / ratio(curve.len() - 1)).ln() / span;
        if decay.is_finite() && decay > 0.0 {
            decay
        } else {
            1.0 / span
        }
    };
    let result = fit::levenberg_marquardt(
        |p: &[f64]| {
            let (nbar, kappa) = (p[0], p[1]);
            if !(nbar >= 0.0) || !(kappa > 0.0) {
                return Err(Error::NumericDivergence("trial step left the domain".into()));
            }
            let mut r = Vec::with_capacity(2 * curve.len());
            for i in 0..curve.len() {
                let (p0, p1) = fock_decay_model(nbar, kappa, curve.times[i], p1_scale)?;
                r.push(p0 - curve.p0[i]);
                r.push(p1 - curve.p1[i]);
            }
            Ok(r)
        },
        &[nbar0, kappa0],
        &FitOptions::default(),
    )?;
    Ok(PhotonCalibration {
        nbar: result.params[0],
        kappa_r: result.params[1],
        covariance: [
            [result.covariance[(0, 0)], result.covariance[(0, 1)]],
            [result.covariance[(1, 0)], result.covariance[(1, 1)]],
        ],
    })
}

/// Measured average resonator detuning against loaded photon number, one
/// column per qubit branch.
///
/// Detunings are the effective resonator frequency minus the bare one, so
/// the coherent amplitude rotates as e^{−iδω·t}: the dispersive pull makes
/// both columns increasingly negative, the excited one offset by −χ.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningSeries {
    nbar: Vec<f64>,
    detuning_g: Vec<f64>,
    detuning_e: Vec<f64>,
}

impl DetuningSeries {
    pub fn new(nbar: Vec<f64>, detuning_g: Vec<f64>, detuning_e: Vec<f64>) -> Result<Self> {
        if nbar.len() != detuning_g.len() || nbar.len() != detuning_e.len() {
            return Err(Error::LengthMismatch {
                context: "detuning series columns",
                left: nbar.len(),
                right: detuning_g.len().max(detuning_e.len()),
            });
        }
        if nbar.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return Err(Error::InvalidParams("nbar must be finite and >= 0".into()));
        }
        if nbar.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("nbar must increase".into()));
        }
        if detuning_g
            .iter()
            .chain(detuning_e.iter())
            .any(|d| !d.is_finite())
        {
            return Err(Error::InvalidParams("detunings must be finite".into()));
        }
        Ok(DetuningSeries {
            nbar,
            detuning_g,
            detuning_e,
        })
    }

    pub fn nbar(&self) -> &[f64] {
        &self.nbar
    }

    pub fn detuning_g(&self) -> &[f64] {
        &self.detuning_g
    }

    pub fn detuning_e(&self) -> &[f64] {
        &self.detuning_e
    }

    pub fn len(&self) -> usize {
        self.nbar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbar.is_empty()
    }

    /// Sub-series with nbar at most `nbar_max`, for restricting the linear
    /// fit to the regime where higher-order terms stay negligible.
    pub fn restrict_to_nbar(&self, nbar_max: f64) -> Result<DetuningSeries> {
        let keep = self.nbar.iter().take_while(|n| **n <= nbar_max).count();
        DetuningSeries::new(
            self.nbar[..keep].to_vec(),
            self.detuning_g[..keep].to_vec(),
            self.detuning_e[..keep].to_vec(),
        )
    }
}

/// Dispersive and Kerr rates from linear fits of a detuning series.
#[derive(Debug, Clone)]
pub struct DispersiveKerrFit {
    pub chi: f64,
    pub kerr_g: f64,
    pub kerr_e: f64,
}

/// Linear fits δω_b(n̄) = intercept_b + slope_b·n̄ per branch; then
/// χ = intercept_g − intercept_e and K_b = −slope_b/2.
pub fn fit_dispersive_and_kerr(series: &DetuningSeries) -> Result<DispersiveKerrFit> {
    if series.len() < 3 {
        return Err(Error::InvalidParams(format!(
            "dispersive fit needs at least 3 photon numbers, got {}",
            series.len()
        )));
    }
    let (slope_g, intercept_g) = fit::linear_least_squares(&series.nbar, &series.detuning_g)?;
    let (slope_e, intercept_e) = fit::linear_least_squares(&series.nbar, &series.detuning_e)?;
    Ok(DispersiveKerrFit {
        chi: intercept_g - intercept_e,
        kerr_g: -slope_g / 2.0,
        kerr_e: -slope_e / 2.0,
    })
}

/// Measures the average resonator detuning by evolving a coherent state for
/// `probe_dt` under each branch and differencing the mean-field phase.
pub fn simulated_detuning_series(
    nbars: &[f64],
    params: &DeviceParams,
    probe_dt: f64,
) -> Result<DetuningSeries> {
    if !probe_dt.is_finite() || probe_dt <= 0.0 {
        return Err(Error::InvalidTime(probe_dt));
    }
    let mut detuning_g = Vec::with_capacity(nbars.len());
    let mut detuning_e = Vec::with_capacity(nbars.len());
    for &nbar in nbars {
        if !nbar.is_finite() || nbar < 0.0 {
            return Err(Error::InvalidParams(format!("nbar {nbar} must be >= 0")));
        }
        let dim = (nbar + 7.0 * nbar.sqrt() + 12.0).ceil() as usize;
        let state = coherent_state(C64::new(nbar.sqrt(), 0.0), dim)?;
        for (branch, out) in [
            (Branch::Ground, &mut detuning_g),
            (Branch::Excited, &mut detuning_e),
        ] {
            let evolved = dynamics::evolve_interaction(&state, branch, probe_dt, params, false)?;
            let phase = dynamics::mean_field(&evolved).arg();
            // the amplitude rotates as e^{−iδω·t}
            out.push(-phase / probe_dt);
        }
    }
    DetuningSeries::new(nbars.to_vec(), detuning_g, detuning_e)
}

/// Survival probability of the prepared state after a train of π pulses,
/// exp(−N·Δt·(T₁⁻¹ + T₂⁻¹)/2).
pub fn pulse_fidelity_decay(n_pulses: u32, dt: f64, t1: f64, t2: f64) -> Result<f64> {
    if n_pulses == 0 || n_pulses % 2 == 0 {
        return Err(Error::InvalidProtocol(format!(
            "pulse train must use a positive odd count, got {n_pulses}"
        )));
    }
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::InvalidTime(dt));
    }
    if !(t1 > 0.0) || !(t2 > 0.0) || !t1.is_finite() || !t2.is_finite() {
        return Err(Error::InvalidParams(format!(
            "lifetimes t1 = {t1}, t2 = {t2} must be positive"
        )));
    }
    Ok((-(n_pulses as f64) * dt * (1.0 / t1 + 1.0 / t2) / 2.0).exp())
}

/// Transmon level populations solved from the reference measurement.
#[derive(Debug, Clone)]
pub struct ThermalPopulations {
    pub p_g: f64,
    pub p_e: f64,
    pub p_f: f64,
    /// Two-level Boltzmann temperature (K) from p_e/p_g at the qubit
    /// frequency; 0 when p_e vanishes.
    pub temperature: f64,
}

/// Slot orders of the six permutation sequences: response_k = Σ apex[slot] ·
/// p(label[slot]).
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    // 'gef','gfe','egf','efg','fge','feg' as positions of (g, e, f)
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [2, 0, 1],
    [1, 2, 0],
    [2, 1, 0],
];

/// Populations of the transmon's lowest three levels from six averaged
/// complex responses, one per permutation pulse sequence.
///
/// Each response is the population-weighted sum of the three pure-level
/// reference responses (the apexes) with populations permuted by the pulse
/// sequence. Substituting p_f = 1 − p_g − p_e leaves a linear system in
/// (p_g, p_e) solved in the least-squares sense; the result is clamped to
/// the probability simplex.
pub fn solve_thermal_populations(
    responses: &[C64; 6],
    apexes: &[C64; 3],
    omega_q: f64,
) -> Result<ThermalPopulations> {
    if !(omega_q > 0.0) || !omega_q.is_finite() {
        return Err(Error::InvalidParams(format!(
            "qubit frequency {omega_q} must be positive"
        )));
    }
    if responses.iter().chain(apexes.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::InvalidParams("non-finite response or apex".into()));
    }
    let scale = (apexes[1] - apexes[0]).norm().max((apexes[2] - apexes[0]).norm());
    let area = {
        let u = apexes[1] - apexes[0];
        let v = apexes[2] - apexes[0];
        (u.re * v.im - u.im * v.re).abs()
    };
    if area <= 1e-12 * scale * scale || scale == 0.0 {
        return Err(Error::DegenerateGeometry(
            "pure-level references are collinear".into(),
        ));
    }

    // rows: response − apex_f_slot = (apex_g_slot − apex_f_slot)·p_g +
    // (apex_e_slot − apex_f_slot)·p_e, split into re/im
    let mut ata = [[0.0f64; 2]; 2];
    let mut atb = [0.0f64; 2];
    for (k, order) in PERMUTATIONS.iter().enumerate() {
        let a_g = apexes[order[0]];
        let a_e = apexes[order[1]];
        let a_f = apexes[order[2]];
        let col_g = a_g - a_f;
        let col_e = a_e - a_f;
        let rhs = responses[k] - a_f;
        for (x, y, b) in [
            (col_g.re, col_e.re, rhs.re),
            (col_g.im, col_e.im, rhs.im),
        ] {
            ata[0][0] += x * x;
            ata[0][1] += x * y;
            ata[1][0] += y * x;
            ata[1][1] += y * y;
            atb[0] += x * b;
            atb[1] += y * b;
        }
    }
    let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    if det.abs() <= 1e-14 * (ata[0][0] * ata[1][1]).abs().max(1.0) {
        return Err(Error::DegenerateGeometry(
            "normal equations of the population solve are singular".into(),
        ));
    }
    let p_g = (atb[0] * ata[1][1] - atb[1] * ata[0][1]) / det;
    let p_e = (ata[0][0] * atb[1] - ata[1][0] * atb[0]) / det;
    let p_f = 1.0 - p_g - p_e;

    let mut clamped = [p_g.max(0.0), p_e.max(0.0), p_f.max(0.0)];
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "population solve collapsed to the empty simplex".into(),
        ));
    }
    for p in &mut clamped {
        *p /= total;
    }
    let [p_g, p_e, p_f] = clamped;
    let temperature = if p_e <= 0.0 {
        0.0
    } else {
        HBAR * omega_q / (K_B * (p_g / p_e).ln())
    };
    Ok(ThermalPopulations {
        p_g,
        p_e,
        p_f,
        temperature,
    })
}
