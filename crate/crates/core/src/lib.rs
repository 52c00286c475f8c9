//! Simulator and analysis toolchain for sequential dispersive readout of a
//! superconducting qubit.
//!
//! The simulated experiment loads a readout cavity with a coherent probe,
//! lets it interact with the qubit under a dispersive + self-Kerr
//! Hamiltonian for a time `t_int`, releases the cavity field into an output
//! line with a pumped beam-splitter coupling, demodulates the recorded
//! voltage into a complex amplitude β, and discriminates the qubit state
//! from the 2-D β histograms. The crate also provides the calibration
//! procedures that pin down the device parameters (photon number, χ and
//! Kerr rates, π-pulse fidelity, thermal populations) and direct plus
//! protocol-level Wigner tomography of the cavity state.
//!
//! Module map:
//! * [`hilbert`]: truncated Fock-space states, operators, loss channels.
//! * [`dynamics`]: conditional evolution during the interaction time.
//! * [`release`]: pumped release of the cavity into the output line.
//! * [`signal`]: voltage synthesis, weight functions, demodulation,
//!   measured-amplitude sampling.
//! * [`discrimination`]: β histograms, overlap, decision region, fidelity.
//! * [`tomography`]: Wigner maps, direct and protocol-simulated.
//! * [`calibration`]: photon-number, dispersive/Kerr, pulse and thermal fits.
//! * [`pipeline`]: seeded end-to-end experiment runs and parameter sweeps.
//! * [`io`]: CSV and report emitters/parsers with deterministic formatting.

pub mod calibration;
pub mod discrimination;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hilbert;
pub mod io;
pub mod ode;
pub mod pipeline;
pub mod release;
pub mod seeding;
pub mod signal;
pub mod tomography;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
