//! Conditional evolution of the readout mode during the interaction time
//! under the dispersive + self-Kerr Hamiltonian, with optional cavity decay.
//!
//! In the frame rotating at the bare cavity frequency the Hamiltonian is
//! diagonal in the Fock basis:
//!
//!   H/ħ = −χ n̂ |e⟩⟨e| − K_g n̂(n̂−1) |g⟩⟨g| − K_e n̂(n̂−1) |e⟩⟨e|
//!
//! so unitary evolution reduces to a phase per Fock level. The qubit enters
//! as a classical branch label (the Hamiltonian is block-diagonal in the
//! qubit basis); superposition inputs are handled by callers evolving both
//! branches. Cavity decay, when requested, is integrated as a Lindblad
//! equation with collapse operator √κ_r·r̂.

use nalgebra::{DMatrix, DVector};

use crate::hilbert::{Branch, FockOperator, ReadoutState, StateData};
use crate::ode::{self, OdeOptions};
use crate::{C64, Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Physical constants of the simulated device.
///
/// All angular frequencies and rates are in rad/s, times in seconds.
/// `omega_q`, `omega_r`, `omega_b` are carried for reporting and the
/// thermal-population temperature conversion; the interaction-frame
/// dynamics never uses them.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams {
    /// Dispersive shift χ (rad/s).
    pub chi: f64,
    /// Self-Kerr rate of the cavity with the qubit in g (rad/s).
    pub kerr_g: f64,
    /// Self-Kerr rate of the cavity with the qubit in e (rad/s).
    pub kerr_e: f64,
    /// Cavity (readout mode) energy decay rate (1/s).
    pub kappa_r: f64,
    /// Buffer mode energy decay rate into the output line (1/s).
    pub kappa_b: f64,
    /// Qubit lifetime (s).
    pub t1: f64,
    /// Qubit coherence time (s).
    pub t2: f64,
    /// Total release + detection efficiency in (0, 1].
    pub eta: f64,
    /// Intermediate frequency of the digitized voltage (Hz).
    pub if_freq: f64,
    /// Digitizer sample rate (samples/s).
    pub sample_rate: f64,
    /// Equilibrium qubit excited-state population in [0, 1).
    pub thermal_excitation: f64,
    /// Fidelity of the preparation π pulse in (0, 1].
    pub pi_pulse_fidelity: f64,
    /// Qubit frequency (rad/s).
    pub omega_q: f64,
    /// Readout mode frequency (rad/s).
    pub omega_r: f64,
    /// Buffer mode frequency (rad/s).
    pub omega_b: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            chi: TAU * 2.05e6,
            kerr_g: TAU * 8.4e3,
            kerr_e: TAU * 37e3,
            kappa_r: TAU * 250e3,
            kappa_b: TAU * 21e6,
            t1: 6.1e-6,
            t2: 9.2e-6,
            eta: 0.11,
            if_freq: 50e6,
            sample_rate: 1e9,
            thermal_excitation: 0.008,
            pi_pulse_fidelity: 0.995,
            omega_q: TAU * 4.45e9,
            omega_r: TAU * 3.73e9,
            omega_b: TAU * 10.22e9,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa_r", self.kappa_r),
            ("kappa_b", self.kappa_b),
            ("t1", self.t1),
            ("t2", self.t2),
            ("if_freq", self.if_freq),
            ("sample_rate", self.sample_rate),
            ("omega_q", self.omega_q),
            ("omega_r", self.omega_r),
            ("omega_b", self.omega_b),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("chi", self.chi), ("kerr_g", self.kerr_g), ("kerr_e", self.kerr_e)] {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParams(format!("eta must lie in (0,1], got {}", self.eta)));
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::InvalidParams(format!(
                "t2 = {} exceeds 2*t1 = {}",
                self.t2,
                2.0 * self.t1
            )));
        }
        if !(0.0..1.0).contains(&self.thermal_excitation) {
            return Err(Error::InvalidParams(format!(
                "thermal_excitation must lie in [0,1), got {}",
                self.thermal_excitation
            )));
        }
        if !(self.pi_pulse_fidelity > 0.0 && self.pi_pulse_fidelity <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "pi_pulse_fidelity must lie in (0,1], got {}",
                self.pi_pulse_fidelity
            )));
        }
        Ok(())
    }
}

/// Energy of Fock level n (rad/s) for the given qubit branch:
/// g → −K_g·n(n−1); e → −χ·n − K_e·n(n−1).
pub fn level_energies(branch: Branch, params: &DeviceParams, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|n| {
            let n = n as f64;
            match branch {
                Branch::Ground => -params.kerr_g * n * (n - 1.0),
                Branch::Excited => -params.chi * n - params.kerr_e * n * (n - 1.0),
            }
        })
        .collect()
}

/// Diagonal interaction Hamiltonian for one qubit branch (rad/s).
pub fn interaction_hamiltonian(branch: Branch, params: &DeviceParams, dim: usize) -> Result<FockOperator> {
    FockOperator::from_real_diagonal(&level_energies(branch, params, dim))
}

/// Propagates a state for `t_int` under the branch Hamiltonian.
///
/// Without decay this applies the exact phases e^{−i·E_n·t_int}. With decay
/// it integrates the Lindblad equation with collapse operator √κ_r·r̂ and
/// returns a mixed state.
pub fn evolve_interaction(
    state: &ReadoutState,
    branch: Branch,
    t_int: f64,
    params: &DeviceParams,
    include_decay: bool,
) -> Result<ReadoutState> {
    if !(t_int >= 0.0 && t_int.is_finite()) {
        return Err(Error::InvalidTime(t_int));
    }
    if include_decay {
        lindblad_evolve(state, branch, t_int, params)
    } else {
        Ok(apply_phases(state, &level_energies(branch, params, state.dim()), t_int, branch))
    }
}

/// Piecewise-branch unitary evolution, used for runs where the qubit jumps
/// between branches mid-interaction. Segments are (branch, duration); the
/// output carries the branch of the final segment.
pub fn evolve_piecewise(
    state: &ReadoutState,
    segments: &[(Branch, f64)],
    params: &DeviceParams,
) -> Result<ReadoutState> {
    let dim = state.dim();
    let mut total = vec![0.0f64; dim];
    let mut last_branch = state.branch();
    for &(branch, dt) in segments {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTime(dt));
        }
        let e = level_energies(branch, params, dim);
        for n in 0..dim {
            total[n] += e[n] * dt;
        }
        last_branch = Some(branch);
    }
    let mut out = apply_accumulated_phases(state, &total);
    out = match last_branch {
        Some(b) => out.with_branch(b),
        None => out,
    };
    Ok(out)
}

fn apply_phases(state: &ReadoutState, energies: &[f64], t: f64, branch: Branch) -> ReadoutState {
    let phases: Vec<f64> = energies.iter().map(|e| e * t).collect();
    apply_accumulated_phases(state, &phases).with_branch(branch)
}

/// Applies e^{−i·φ_n} per level, where φ_n is an accumulated phase in rad.
fn apply_accumulated_phases(state: &ReadoutState, phases: &[f64]) -> ReadoutState {
    let dim = state.dim();
    match state.data() {
        StateData::Pure(v) => {
            let mut out = v.clone();
            for n in 0..dim {
                out[n] *= C64::from_polar(1.0, -phases[n]);
            }
            // Norm is untouched by pure phases; constructor tolerance 1e-9
            // is safe here.
            ReadoutState::from_pure(out).expect("phase evolution preserves the norm")
        }
        StateData::Mixed(m) => {
            let mut out = m.clone();
            for i in 0..dim {
                for j in 0..dim {
                    out[(i, j)] *= C64::from_polar(1.0, -(phases[i] - phases[j]));
                }
            }
            ReadoutState::from_density_unchecked(out, state.branch())
        }
    }
}

fn lindblad_evolve(
    state: &ReadoutState,
    branch: Branch,
    t_int: f64,
    params: &DeviceParams,
) -> Result<ReadoutState> {
    if t_int == 0.0 {
        return Ok(state.clone().with_branch(branch));
    }
    let dim = state.dim();
    let energies = level_energies(branch, params, dim);
    let kappa = params.kappa_r;
    let rho0 = state.density();
    let y0 = DVector::from_iterator(dim * dim, rho0.iter().cloned());

    // Elementwise Lindblad RHS for a diagonal Hamiltonian:
    //   dρ[m,n] = −i(E_m−E_n)ρ[m,n]
    //             + κ(√((m+1)(n+1))·ρ[m+1,n+1] − (m+n)/2·ρ[m,n]).
    let rhs = move |_t: f64, y: &DVector<C64>| {
        let mut dy = DVector::<C64>::zeros(dim * dim);
        for n in 0..dim {
            for m in 0..dim {
                // Column-major flattening: (m, n) -> n*dim + m.
                let idx = n * dim + m;
                let mut v = y[idx] * C64::new(0.0, -(energies[m] - energies[n]));
                v += y[idx] * C64::new(-0.5 * kappa * (m + n) as f64, 0.0);
                if m + 1 < dim && n + 1 < dim {
                    let gain = (((m + 1) * (n + 1)) as f64).sqrt();
                    v += y[(n + 1) * dim + (m + 1)] * C64::new(kappa * gain, 0.0);
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
    let rho = DMatrix::from_iterator(dim, dim, yt.iter().cloned());
    Ok(ReadoutState::from_density_unchecked(rho, Some(branch)))
}

/// ⟨r̂⟩ of a state.
pub fn mean_field(state: &ReadoutState) -> C64 {
    let dim = state.dim();
    match state.data() {
        StateData::Pure(v) => (0..dim - 1)
            .map(|n| v[n].conj() * v[n + 1] * ((n + 1) as f64).sqrt())
            .sum(),
        StateData::Mixed(m) => (1..dim).map(|n| m[(n, n - 1)] * (n as f64).sqrt()).sum(),
    }
}
