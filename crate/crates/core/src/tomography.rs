//! Wigner maps of the readout mode, computed directly from the state and by
//! simulating the two-pulse Ramsey parity protocol.
//!
//! The direct map evaluates W(α) = (2/π)·Tr[D(−α) ρ D(α) Π]. The protocol
//! simulation mirrors the hardware sequence instead: displace the cavity,
//! split the qubit with a π/2 pulse, let the joint system evolve freely for
//! π/χ, close the Ramsey interferometer with a second π/2 pulse at phase
//! +π/2 or −π/2, and read the qubit out. Subtracting the two interleaved
//! phase settings cancels the readout offset and leaves the parity signal.
//!
//! Displacements are applied in a padded Fock space sized from the grid
//! radius and the state support, so parity sums stay accurate at grid
//! points whose displaced image would overflow the state's own truncation.
//! Neither decay nor dephasing acts during the tomography sequence itself.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::dynamics::{self, DeviceParams};
use crate::hilbert::{coherent_state, Branch, ReadoutState, StateData};
use crate::seeding;
use crate::{C64, Error, Result};

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PI: f64 = std::f64::consts::PI;

/// Weights below this are dropped when a mixed state is split into pure
/// components for displaced-parity evaluation; the bias on any map value is
/// bounded by the dropped trace.
const COMPONENT_WEIGHT_CUTOFF: f64 = 1e-6;

/// Fock tail mass ignored when sizing the padded evaluation space.
const SUPPORT_TAIL_MASS: f64 = 1e-10;

/// Rectangular grid of phase-space points α = x + iy at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PhaseSpaceGrid {
    /// Grid from explicit axis centers; both must be uniform and increasing.
    pub fn from_axes(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_axis("x axis", &xs)?;
        check_axis("y axis", &ys)?;
        Ok(PhaseSpaceGrid { xs, ys })
    }

    /// Square grid of `cells` × `cells` cell centers covering
    /// [−half_width, half_width]².
    pub fn centered(half_width: f64, cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidParams(format!(
                "grid half-width {half_width} must be positive and finite"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidParams(format!(
                "grid needs at least 2 cells per axis, got {cells}"
            )));
        }
        let step = 2.0 * half_width / cells as f64;
        let axis: Vec<f64> = (0..cells)
            .map(|i| -half_width + (i as f64 + 0.5) * step)
            .collect();
        PhaseSpaceGrid::from_axes(axis.clone(), axis)
    }

    /// 80 × 80 cells over α ∈ [−8, 8]², the displayed tomography range.
    pub fn default_grid() -> Self {
        PhaseSpaceGrid::centered(8.0, 80).expect("static grid parameters are valid")
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Point at flat index `ix * ys.len() + iy`.
    pub fn point(&self, index: usize) -> C64 {
        let ny = self.ys.len();
        C64::new(self.xs[index / ny], self.ys[index % ny])
    }

    /// Largest |α| over the grid.
    pub fn max_radius(&self) -> f64 {
        let xm = self.xs[0].abs().max(self.xs[self.xs.len() - 1].abs());
        let ym = self.ys[0].abs().max(self.ys[self.ys.len() - 1].abs());
        xm.hypot(ym)
    }
}

fn check_axis(label: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::InvalidParams(format!(
            "{label}: need at least 2 grid centers, got {}",
            axis.len()
        )));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("{label}: non-finite center")));
    }
    let step = axis[1] - axis[0];
    if !(step > 0.0) {
        return Err(Error::InvalidParams(format!("{label}: centers must increase")));
    }
    for w in axis.windows(2) {
        let d = w[1] - w[0];
        if (d - step).abs() > 1e-9 * step.max(1.0) {
            return Err(Error::InvalidParams(format!("{label}: spacing is not uniform")));
        }
    }
    Ok(())
}

/// Wigner values on a rectangular grid, row-major in x then y.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerMap {
    grid: PhaseSpaceGrid,
    values: Vec<f64>,
    rotation_applied: f64,
}

impl WignerMap {
    /// Assembles a map and checks the pointwise bound |W| ≤ 2/π.
    pub fn from_values(grid: PhaseSpaceGrid, values: Vec<f64>, rotation_applied: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                context: "wigner values vs grid points",
                left: values.len(),
                right: grid.len(),
            });
        }
        if !rotation_applied.is_finite() {
            return Err(Error::InvalidParams(format!(
                "rotation_applied {rotation_applied} must be finite"
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || v.abs() > FRAC_2_PI + 1e-6 {
                return Err(Error::InvalidState(format!(
                    "wigner value {v} at flat index {i} violates |W| <= 2/pi"
                )));
            }
        }
        Ok(WignerMap {
            grid,
            values,
            rotation_applied,
        })
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Net numerical rotation accumulated by `rotate_phase_space` (rad).
    pub fn rotation_applied(&self) -> f64 {
        self.rotation_applied
    }

    /// Value at axis indices (ix, iy).
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.grid.ys.len() + iy]
    }

    /// Grid points paired with values, in storage order.
    pub fn points(&self) -> impl Iterator<Item = (C64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.grid.point(i), v))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Riemann sum Σ W·Δx·Δy; ≈ 1 when the grid holds the state's mass.
    pub fn riemann_mass(&self) -> f64 {
        let dx = self.grid.xs[1] - self.grid.xs[0];
        let dy = self.grid.ys[1] - self.grid.ys[0];
        self.values.iter().sum::<f64>() * dx * dy
    }

    /// Grid point of the largest value.
    pub fn peak_point(&self) -> C64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("map is never empty");
        self.grid.point(i)
    }
}

/// Displacement engine over a fixed Fock dimension.
///
/// With P = diag(iⁿ), the Hermitian generator M = i(a†−a) of
/// D(re^{iθ}) = e^{iθn̂} e^{−irM} e^{−iθn̂} turns into the real symmetric
/// tridiagonal P†MP with off-diagonals √(n+1), so one real eigendecomposition
/// serves every displacement and each application costs O(dim²).
struct Displacer {
    eigenvalues: DVector<f64>,
    /// Orthogonal eigenvector matrix of the real tridiagonal form.
    q: DMatrix<f64>,
}

impl Displacer {
    fn new(dim: usize) -> Self {
        let mut t = DMatrix::<f64>::zeros(dim, dim);
        for n in 0..dim - 1 {
            let s = ((n + 1) as f64).sqrt();
            t[(n + 1, n)] = s;
            t[(n, n + 1)] = s;
        }
        let eig = SymmetricEigen::new(t);
        Displacer {
            eigenvalues: eig.eigenvalues,
            q: eig.eigenvectors,
        }
    }

    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Returns D(α)·v for a vector in this engine's dimension.
    fn displace(&self, alpha: C64, v: &DVector<C64>) -> DVector<C64> {
        let dim = self.dim();
        let r = alpha.norm();
        if r == 0.0 {
            return v.clone();
        }
        // the diagonal phase e^{−i n (θ+π/2)} folds P† into the frame change
        let theta = alpha.arg() + PI / 2.0;
        let mut re = DVector::<f64>::zeros(dim);
        let mut im = DVector::<f64>::zeros(dim);
        for n in 0..dim {
            let ph = C64::from_polar(1.0, -theta * n as f64) * v[n];
            re[n] = ph.re;
            im[n] = ph.im;
        }
        let mut yr = self.q.tr_mul(&re);
        let mut yi = self.q.tr_mul(&im);
        for k in 0..dim {
            let rot = C64::from_polar(1.0, -r * self.eigenvalues[k]);
            let y = rot * C64::new(yr[k], yi[k]);
            yr[k] = y.re;
            yi[k] = y.im;
        }
        let ur = &self.q * yr;
        let ui = &self.q * yi;
        let mut out = DVector::<C64>::zeros(dim);
        for n in 0..dim {
            out[n] = C64::from_polar(1.0, theta * n as f64) * C64::new(ur[n], ui[n]);
        }
        out
    }
}

/// Smallest Fock cutoff holding all but `SUPPORT_TAIL_MASS` of the state.
fn support_dim(state: &ReadoutState) -> usize {
    let pops: Vec<f64> = match state.data() {
        StateData::Pure(v) => v.iter().map(|c| c.norm_sqr()).collect(),
        StateData::Mixed(m) => (0..state.dim()).map(|n| m[(n, n)].re).collect(),
    };
    let mut tail = 0.0;
    for n in (0..pops.len()).rev() {
        tail += pops[n];
        if tail > SUPPORT_TAIL_MASS {
            return n + 2;
        }
    }
    2
}

/// Evaluation dimension that keeps displaced states inside the truncation:
/// radius = grid radius + state radius, padded for the Poisson tail and
/// rounded up so repeated calls can share one eigendecomposition.
fn padded_dim(state: &ReadoutState, grid: &PhaseSpaceGrid) -> usize {
    let radius = grid.max_radius() + (support_dim(state) as f64).sqrt();
    let dim = (radius * radius + 6.0 * radius + 12.0).ceil() as usize;
    dim.max(state.dim()).div_ceil(32) * 32
}

fn engine_for(dim: usize) -> Arc<Displacer> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Displacer>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(engine) = cache.lock().expect("engine cache lock").get(&dim) {
        return engine.clone();
    }
    let engine = Arc::new(Displacer::new(dim));
    cache
        .lock()
        .expect("engine cache lock")
        .entry(dim)
        .or_insert(engine)
        .clone()
}

/// Grid must stay within the state's own truncation budget.
fn check_grid_bound(state: &ReadoutState, grid: &PhaseSpaceGrid) -> Result<()> {
    let needed = grid.max_radius().powi(2);
    let allowed = state.dim() as f64;
    if needed > allowed {
        return Err(Error::TruncationOverflow { needed, allowed });
    }
    Ok(())
}

fn embedded_components(state: &ReadoutState, dim: usize) -> Vec<(f64, DVector<C64>)> {
    state
        .pure_components(COMPONENT_WEIGHT_CUTOFF)
        .into_iter()
        .map(|(w, v)| {
            let mut padded = DVector::<C64>::zeros(dim);
            padded.rows_mut(0, v.len()).copy_from(&v);
            (w, padded)
        })
        .collect()
}

/// W(α) = (2/π)·Tr[D(−α) ρ D(α) Π] over the grid.
///
/// Mixed states are decomposed into pure components; weights below 1e-6 are
/// dropped, biasing each value by at most the dropped trace. Values are
/// clamped to ±2/π to absorb last-digit rounding of the parity sum.
pub fn wigner_direct(state: &ReadoutState, grid: &PhaseSpaceGrid) -> Result<WignerMap> {
    check_grid_bound(state, grid)?;
    let dim = padded_dim(state, grid);
    let engine = engine_for(dim);
    let components = embedded_components(state, dim);
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let alpha = grid.point(i);
            let mut w = 0.0;
            for (weight, v) in &components {
                let moved = engine.displace(-alpha, v);
                let mut parity = 0.0;
                for n in 0..dim {
                    let p = moved[n].norm_sqr();
                    parity += if n % 2 == 0 { p } else { -p };
                }
                w += weight * parity;
            }
            (FRAC_2_PI * w).clamp(-FRAC_2_PI, FRAC_2_PI)
        })
        .collect();
    WignerMap::from_values(grid.clone(), values, 0.0)
}

/// Knobs of the simulated parity protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    /// Fock truncation of the simulated cavity state.
    pub dim: usize,
    /// Skip shot sampling and return exact outcome expectations.
    pub exact_expectation: bool,
    /// Extra free evolution (s) of the cavity before the displacement lands,
    /// standing in for the finite displacement-pulse duration.
    pub displacement_delay: f64,
    /// Probability that the qubit readout reports the true outcome.
    pub readout_fidelity: f64,
    /// Phase error of the displacement drive: the realized displacement is
    /// α·e^{iφ}, which rotates the whole map; `rotate_phase_space` by the
    /// same angle undoes it.
    pub phase_offset: f64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            dim: 150,
            exact_expectation: false,
            displacement_delay: 0.0,
            readout_fidelity: 1.0,
            phase_offset: 0.0,
        }
    }
}

impl ProtocolOptions {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension { dim: self.dim });
        }
        if !self.displacement_delay.is_finite() || self.displacement_delay < 0.0 {
            return Err(Error::InvalidTime(self.displacement_delay));
        }
        if !(self.readout_fidelity > 0.5 && self.readout_fidelity <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "readout fidelity {} must lie in (0.5, 1]",
                self.readout_fidelity
            )));
        }
        if !self.phase_offset.is_finite() {
            return Err(Error::InvalidParams(format!(
                "phase offset {} must be finite",
                self.phase_offset
            )));
        }
        Ok(())
    }
}

/// Simulates the Ramsey parity measurement over the grid.
///
/// The cavity starts coherent at `initial_amplitude` and evolves under the
/// qubit `branch` for `t_int` plus the displacement delay. Per grid point
/// the sequence is: displace by −α·e^{iφ}, split the qubit with a π/2
/// pulse, evolve jointly for π/χ, close with the second π/2 pulse at phase
/// +π/2 (half the shots) or −π/2 (the rest), and read the qubit with the
/// configured fidelity. The setting difference estimates the parity and
/// W = (2/π)·(P₊ − P₋); a qubit prepared in e flips the sign of the
/// interference term, so that map comes out negated.
///
/// Shots use one deterministic RNG stream per grid point, so the map is
/// reproducible under any parallel schedule.
pub fn wigner_protocol_sim(
    initial_amplitude: C64,
    branch: Branch,
    t_int: f64,
    params: &DeviceParams,
    grid: &PhaseSpaceGrid,
    n_shots: usize,
    options: &ProtocolOptions,
    rng: &mut (impl Rng + ?Sized),
) -> Result<WignerMap> {
    params.validate()?;
    options.validate()?;
    if n_shots < 100 {
        return Err(Error::InvalidProtocol(format!(
            "n_shots = {n_shots} is below the minimum of 100"
        )));
    }
    if !t_int.is_finite() || t_int < 0.0 {
        return Err(Error::InvalidTime(t_int));
    }
    let prepared = coherent_state(initial_amplitude, options.dim)?;
    let mut state = dynamics::evolve_interaction(&prepared, branch, t_int, params, false)?;
    if options.displacement_delay > 0.0 {
        // the cavity keeps evolving under the branch Hamiltonian while the
        // displacement pulse is on its way
        state = dynamics::evolve_interaction(
            &state,
            branch,
            options.displacement_delay,
            params,
            false,
        )?;
    }
    check_grid_bound(&state, grid)?;

    let dim = padded_dim(&state, grid);
    let engine = engine_for(dim);
    let components = embedded_components(&state, dim);

    // e^{i(E_g(n)−E_e(n))·π/χ} per Fock level; the common Kerr term cancels
    // and the dispersive part contributes (−1)ⁿ.
    let delay = PI / params.chi;
    let e_g = dynamics::level_energies(Branch::Ground, params, dim);
    let e_e = dynamics::level_energies(Branch::Excited, params, dim);
    let ramsey: Vec<C64> = (0..dim)
        .map(|n| C64::from_polar(1.0, (e_g[n] - e_e[n]) * delay))
        .collect();
    let kick = C64::from_polar(1.0, options.phase_offset);
    // qubit in e enters the Ramsey interferometer with the opposite sign on
    // the g†e coherence
    let sign = match branch {
        Branch::Ground => 1.0,
        Branch::Excited => -1.0,
    };
    let fidelity = options.readout_fidelity;
    let exact = options.exact_expectation;
    let shots_plus = n_shots / 2;
    let shots_minus = n_shots - shots_plus;
    let master_seed = rng.next_u64();

    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let alpha = grid.point(i);
            // interference term Re Z with Z = Σ wₖ ⟨ψₖ|U_g†U_e|ψₖ⟩ over the
            // displaced (and delay-evolved) components
            let mut z = C64::new(0.0, 0.0);
            for (weight, v) in &components {
                let moved = engine.displace(-(alpha * kick), v);
                for n in 0..dim {
                    z += *weight * ramsey[n] * moved[n].norm_sqr();
                }
            }
            let signal = sign * z.re;
            // second-pulse settings ±π/2: in-phase and anti-phase closings
            let p_plus = 0.5 * (1.0 + signal);
            let p_minus = 0.5 * (1.0 - signal);
            let estimate = if exact {
                (2.0 * fidelity - 1.0) * (p_plus - p_minus)
            } else {
                let mut point_rng = seeding::stream_rng(master_seed, i as u64);
                let observed = |p: f64, shots: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                    let reported = (1.0 - fidelity) + p.clamp(0.0, 1.0) * (2.0 * fidelity - 1.0);
                    let draw = Binomial::new(shots as u64, reported)
                        .expect("probability is clamped to [0, 1]")
                        .sample(rng);
                    draw as f64 / shots as f64
                };
                observed(p_plus, shots_plus, &mut point_rng)
                    - observed(p_minus, shots_minus, &mut point_rng)
            };
            (FRAC_2_PI * estimate).clamp(-FRAC_2_PI, FRAC_2_PI)
        })
        .collect();
    WignerMap::from_values(grid.clone(), values, 0.0)
}

/// Rotates the map by `angle`: the output value at α is the input value
/// bilinearly interpolated at α·e^{−iθ}, zero outside the grid.
pub fn rotate_phase_space(map: &WignerMap, angle: f64) -> Result<WignerMap> {
    if !angle.is_finite() {
        return Err(Error::InvalidParams(format!("rotation angle {angle} must be finite")));
    }
    let grid = map.grid();
    let rot = C64::from_polar(1.0, -angle);
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let source = grid.point(i) * rot;
            sample_bilinear(map, source)
        })
        .collect();
    WignerMap::from_values(grid.clone(), values, map.rotation_applied + angle)
}

/// Bilinear interpolation on the cell-center grid; zero beyond the centers.
fn sample_bilinear(map: &WignerMap, at: C64) -> f64 {
    let grid = map.grid();
    let fx = fractional_index(&grid.xs, at.re);
    let fy = fractional_index(&grid.ys, at.im);
    let (ix, tx) = split_index(fx);
    let (iy, ty) = split_index(fy);
    let fetch = |ix: isize, iy: isize| -> f64 {
        if ix < 0 || iy < 0 || ix >= grid.xs.len() as isize || iy >= grid.ys.len() as isize {
            0.0
        } else {
            map.at(ix as usize, iy as usize)
        }
    };
    fetch(ix, iy) * (1.0 - tx) * (1.0 - ty)
        + fetch(ix + 1, iy) * tx * (1.0 - ty)
        + fetch(ix, iy + 1) * (1.0 - tx) * ty
        + fetch(ix + 1, iy + 1) * tx * ty
}

fn fractional_index(axis: &[f64], value: f64) -> f64 {
    (value - axis[0]) / (axis[1] - axis[0])
}

/// Floor plus fraction, with the fraction snapped to {0, 1} within 1e-12 so
/// that a zero-angle rotation reproduces the map bit for bit.
fn split_index(f: f64) -> (isize, f64) {
    let floor = f.floor();
    let mut t = f - floor;
    let mut i = floor as isize;
    if t < 1e-12 {
        t = 0.0;
    } else if t > 1.0 - 1e-12 {
        t = 0.0;
        i += 1;
    }
    (i, t)
}
