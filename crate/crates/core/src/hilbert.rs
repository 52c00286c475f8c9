//! Truncated Fock-space linear algebra: operators, states, channels, and
//! quasiprobability evaluation used by every other module.
//!
//! Everything lives in a finite Fock basis {|0⟩, …, |dim−1⟩}. The default
//! truncation used elsewhere in the crate is dim = 150, which keeps the
//! coherent-state tail mass below 1e-10 for |α|² ≤ dim/3; constructors that
//! take an amplitude enforce that bound instead of silently aliasing.

use nalgebra::{DMatrix, DVector};

use crate::{C64, Error, Result};

/// Default Fock-space truncation.
pub const DEFAULT_DIM: usize = 150;

/// Qubit branch label attached to states once a conditional evolution has
/// been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Ground,
    Excited,
}

impl Branch {
    /// Single-letter label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            Branch::Ground => "g",
            Branch::Excited => "e",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "g" => Ok(Branch::Ground),
            "e" => Ok(Branch::Excited),
            other => Err(Error::InvalidState(format!("unknown branch label {other:?}"))),
        }
    }
}

/// Dense operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dim: usize,
    entries: DMatrix<C64>,
}

impl FockOperator {
    /// Wraps a square matrix as an operator. The truncation must be at
    /// least 2 so that ladder operators are non-trivial.
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        let dim = entries.nrows();
        if dim < 2 || entries.ncols() != dim {
            return Err(Error::InvalidDimension { dim });
        }
        Ok(FockOperator { dim, entries })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(FockOperator {
            dim,
            entries: DMatrix::identity(dim, dim),
        })
    }

    /// Diagonal operator from real eigenvalues.
    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        check_dim(diag.len())?;
        let dim = diag.len();
        let mut entries = DMatrix::zeros(dim, dim);
        for (n, &v) in diag.iter().enumerate() {
            entries[(n, n)] = C64::new(v, 0.0);
        }
        Ok(FockOperator { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn adjoint(&self) -> FockOperator {
        FockOperator {
            dim: self.dim,
            entries: self.entries.adjoint(),
        }
    }

    /// Matrix product `self * rhs`.
    pub fn compose(&self, rhs: &FockOperator) -> Result<FockOperator> {
        if self.dim != rhs.dim {
            return Err(Error::LengthMismatch {
                context: "operator product dimensions",
                left: self.dim,
                right: rhs.dim,
            });
        }
        Ok(FockOperator {
            dim: self.dim,
            entries: &self.entries * &rhs.entries,
        })
    }

    pub fn apply(&self, vector: &DVector<C64>) -> Result<DVector<C64>> {
        if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                context: "operator applied to vector",
                left: self.dim,
                right: vector.len(),
            });
        }
        Ok(&self.entries * vector)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let adj = self.entries.adjoint();
        (&self.entries - adj).iter().all(|z| z.norm() <= tol)
    }

    /// Largest absolute deviation of `self† self` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.entries.adjoint() * &self.entries;
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                worst = worst.max((prod[(i, j)] - target).norm());
            }
        }
        worst
    }
}

/// State of the readout mode: either a pure Fock-basis vector or a density
/// matrix, plus an optional qubit branch label set by conditional evolution.
#[derive(Debug, Clone)]
pub struct ReadoutState {
    dim: usize,
    data: StateData,
    branch: Option<Branch>,
}

#[derive(Debug, Clone)]
pub enum StateData {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

impl ReadoutState {
    /// Pure state from a Fock-basis amplitude vector; the norm must be 1
    /// within 1e-9 and is then sharpened to exactly 1.
    pub fn from_pure(vector: DVector<C64>) -> Result<Self> {
        check_dim(vector.len())?;
        let norm = vector.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "pure state norm {norm} deviates from 1 beyond 1e-9"
            )));
        }
        let dim = vector.len();
        Ok(ReadoutState {
            dim,
            data: StateData::Pure(vector / C64::new(norm, 0.0)),
            branch: None,
        })
    }

    /// Mixed state from a density matrix; validates trace, Hermiticity and
    /// positivity (eigenvalues ≥ −1e-9).
    pub fn from_density(matrix: DMatrix<C64>) -> Result<Self> {
        check_dim(matrix.nrows())?;
        let dim = matrix.nrows();
        if matrix.ncols() != dim {
            return Err(Error::InvalidState("density matrix not square".into()));
        }
        let tr: C64 = (0..dim).map(|n| matrix[(n, n)]).sum();
        if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "density matrix trace {tr} deviates from 1 beyond 1e-9"
            )));
        }
        let herm_defect = (&matrix - matrix.adjoint())
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.norm()));
        if herm_defect > 1e-9 {
            return Err(Error::InvalidState(format!(
                "density matrix Hermiticity defect {herm_defect:.3e}"
            )));
        }
        let eigen = nalgebra::SymmetricEigen::new(matrix.clone());
        if let Some(min) = eigen
            .eigenvalues
            .iter()
            .cloned()
            .reduce(f64::min)
        {
            if min < -1e-9 {
                return Err(Error::InvalidState(format!(
                    "density matrix has eigenvalue {min:.3e} below -1e-9"
                )));
            }
        }
        Ok(ReadoutState {
            dim,
            data: StateData::Mixed(matrix),
            branch: None,
        })
    }

    /// Internal constructor for matrices that are positive by construction
    /// (channel outputs, eigen-reassembled matrices). Skips the O(dim³)
    /// positivity check but still hermitizes round-off.
    pub(crate) fn from_density_unchecked(matrix: DMatrix<C64>, branch: Option<Branch>) -> Self {
        let dim = matrix.nrows();
        let herm = (&matrix + matrix.adjoint()).scale(0.5);
        ReadoutState {
            dim,
            data: StateData::Mixed(herm),
            branch,
        }
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        ReadoutState::fock(0, dim)
    }

    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::InvalidState(format!(
                "Fock index {n} outside truncation {dim}"
            )));
        }
        let mut v = DVector::zeros(dim);
        v[n] = C64::new(1.0, 0.0);
        Ok(ReadoutState {
            dim,
            data: StateData::Pure(v),
            branch: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn branch(&self) -> Option<Branch> {
        self.branch
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = Some(branch);
        self
    }

    /// Amplitude vector of a pure state.
    pub fn amplitudes(&self) -> Option<&DVector<C64>> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Mixed(_) => None,
        }
    }

    /// Density matrix, materialized as |ψ⟩⟨ψ| for pure states.
    pub fn density(&self) -> DMatrix<C64> {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Mixed(m) => m.clone(),
        }
    }

    /// Decomposition into weighted pure components: the state itself for
    /// pure states, the eigenpairs with weight above `weight_cutoff` for
    /// mixed ones. Dropping small eigenvalues bounds any linear
    /// functional's error by the discarded mass.
    pub fn pure_components(&self, weight_cutoff: f64) -> Vec<(f64, DVector<C64>)> {
        match &self.data {
            StateData::Pure(v) => vec![(1.0, v.clone())],
            StateData::Mixed(m) => {
                let eig = nalgebra::SymmetricEigen::new(m.clone());
                let mut out = Vec::new();
                for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
                    if lambda > weight_cutoff {
                        out.push((lambda, eig.eigenvectors.column(k).into_owned()));
                    }
                }
                out
            }
        }
    }

    /// Fock populations pₙ.
    pub fn fock_populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            StateData::Mixed(m) => (0..self.dim).map(|n| m[(n, n)].re).collect(),
        }
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.fock_populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// ⟨ψ|A|ψ⟩ or Tr(ρA).
    pub fn expectation(&self, op: &FockOperator) -> Result<C64> {
        if op.dim() != self.dim {
            return Err(Error::LengthMismatch {
                context: "expectation operator dimension",
                left: op.dim(),
                right: self.dim,
            });
        }
        match &self.data {
            StateData::Pure(v) => Ok((v.adjoint() * op.apply(v)?)[(0, 0)]),
            StateData::Mixed(m) => {
                let prod = m * op.entries();
                Ok((0..self.dim).map(|n| prod[(n, n)]).sum())
            }
        }
    }

    /// Tr(ρ₁ρ₂); equals the fidelity when at least one side is pure.
    pub fn state_overlap(&self, other: &ReadoutState) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::LengthMismatch {
                context: "state overlap dimensions",
                left: self.dim,
                right: other.dim,
            });
        }
        let val = match (&self.data, &other.data) {
            (StateData::Pure(a), StateData::Pure(b)) => (a.adjoint() * b)[(0, 0)].norm_sqr(),
            (StateData::Pure(v), StateData::Mixed(m)) | (StateData::Mixed(m), StateData::Pure(v)) => {
                (v.adjoint() * m * v)[(0, 0)].re
            }
            (StateData::Mixed(a), StateData::Mixed(b)) => {
                let prod = a * b;
                (0..self.dim).map(|n| prod[(n, n)].re).sum()
            }
        };
        Ok(val)
    }

    /// Trace (1 for pure states by construction).
    pub fn trace(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared(),
            StateData::Mixed(m) => (0..self.dim).map(|n| m[(n, n)].re).sum(),
        }
    }

    /// Full structural validation, used by self-checks and tests.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            StateData::Pure(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidState(format!("pure norm {norm}")));
                }
            }
            StateData::Mixed(m) => {
                ReadoutState::from_density(m.clone())?;
            }
        }
        Ok(())
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim });
    }
    Ok(())
}

fn check_truncation(alpha: C64, dim: usize) -> Result<()> {
    check_dim(dim)?;
    let needed = alpha.norm_sqr();
    let allowed = dim as f64 / 3.0;
    if needed > allowed {
        return Err(Error::TruncationOverflow { needed, allowed });
    }
    Ok(())
}

/// P[K ≥ k0] for K ~ Binomial(n, p), evaluated in log space.
fn binomial_tail(n: usize, p: f64, k0: usize) -> f64 {
    if k0 > n {
        return 0.0;
    }
    let mut ln_fact = vec![0.0f64; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (k0..=n)
        .map(|k| {
            (ln_fact[n] - ln_fact[k] - ln_fact[n - k] + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .sum()
}

/// Ladder operator a with ⟨n−1|a|n⟩ = √n.
pub fn annihilation_operator(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let mut entries = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        entries[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(FockOperator { dim, entries })
}

/// Number operator r̂†r̂ (diagonal n).
pub fn number_operator(dim: usize) -> Result<FockOperator> {
    let diag: Vec<f64> = (0..dim).map(|n| n as f64).collect();
    FockOperator::from_real_diagonal(&diag)
}

/// Coherent state |α⟩ in the truncated basis, renormalized after
/// truncation.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<ReadoutState> {
    check_truncation(alpha, dim)?;
    let mut v = DVector::zeros(dim);
    // c_0 = e^{-|α|²/2}, c_n = c_{n-1}·α/√n: stable iterative form.
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    v[0] = c;
    for n in 1..dim {
        c *= alpha / C64::new((n as f64).sqrt(), 0.0);
        v[n] = c;
    }
    let norm = v.norm();
    if norm <= 0.0 {
        return Err(Error::DegenerateNormalization(
            "coherent amplitude underflowed to zero".into(),
        ));
    }
    v /= C64::new(norm, 0.0);
    Ok(ReadoutState {
        dim,
        data: StateData::Pure(v),
        branch: None,
    })
}

/// Displacement operator D(α) = exp(α r̂† − α* r̂) via scaling-and-squaring
/// matrix exponential.
pub fn displacement_operator(alpha: C64, dim: usize) -> Result<FockOperator> {
    check_truncation(alpha, dim)?;
    let a = annihilation_operator(dim)?;
    let adag = a.adjoint();
    let generator = adag.entries() * alpha - a.entries() * alpha.conj();
    Ok(FockOperator {
        dim,
        entries: generator.exp(),
    })
}

/// ⟨(−1)^n̂⟩ = Σₙ (−1)ⁿ pₙ, clamped to [−1, 1] against round-off.
pub fn parity_expectation(state: &ReadoutState) -> f64 {
    let val: f64 = state
        .fock_populations()
        .iter()
        .enumerate()
        .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
        .sum();
    val.clamp(-1.0, 1.0)
}

/// Pure-loss channel of transmissivity `eta` in Kraus form.
///
/// The Kraus rank is ⌈4·dim·(1−eta)⌉ capped at dim, which keeps the
/// truncated trace deficit below 1e-9 for the state classes used here.
/// `eta = 1` returns the input unchanged (purity preserved).
pub fn apply_loss_channel(state: &ReadoutState, eta: f64) -> Result<ReadoutState> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidEfficiency(eta));
    }
    if eta == 1.0 {
        return Ok(state.clone());
    }
    let dim = state.dim();
    let mut n_kraus = ((4.0 * dim as f64 * (1.0 - eta)).ceil() as usize).clamp(1, dim);
    // The rank formula above is tuned for large dim; extend it until the
    // worst-case trace deficit (the binomial tail of losing >= n_kraus of
    // dim-1 photons) is negligible, so trace preservation holds for every
    // state, not just low-lying ones.
    while n_kraus < dim && binomial_tail(dim - 1, 1.0 - eta, n_kraus) > 1e-12 {
        n_kraus += 1;
    }

    // ln n! table for the binomial amplitudes.
    let mut ln_fact = vec![0.0f64; dim + 1];
    for n in 1..=dim {
        ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
    }
    let ln_eta = eta.ln();
    let ln_loss = (1.0 - eta).ln();
    // f(n, k) = sqrt(C(n,k) eta^{n-k} (1-eta)^k), the amplitude for losing
    // k photons out of n.
    let f = |n: usize, k: usize| -> f64 {
        let ln_binom = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
        (0.5 * (ln_binom + (n - k) as f64 * ln_eta + k as f64 * ln_loss)).exp()
    };

    let out = match state.data() {
        StateData::Pure(psi) => {
            // ρ' = Σ_k (K_k ψ)(K_k ψ)† with K_k a single lower band.
            let mut rho = DMatrix::<C64>::zeros(dim, dim);
            let mut phi = DVector::<C64>::zeros(dim);
            for k in 0..n_kraus {
                for m in 0..dim {
                    phi[m] = if m + k < dim {
                        psi[m + k] * f(m + k, k)
                    } else {
                        C64::new(0.0, 0.0)
                    };
                }
                rho += &phi * phi.adjoint();
            }
            rho
        }
        StateData::Mixed(rho_in) => {
            // (K_k ρ K_k†)[a,b] = f(a+k,k) f(b+k,k) ρ[a+k, b+k].
            let mut rho = DMatrix::<C64>::zeros(dim, dim);
            for k in 0..n_kraus {
                for a in 0..dim - k {
                    let fa = f(a + k, k);
                    for b in 0..dim - k {
                        rho[(a, b)] += rho_in[(a + k, b + k)] * (fa * f(b + k, k));
                    }
                }
            }
            rho
        }
    };
    Ok(ReadoutState::from_density_unchecked(out, state.branch()))
}
