//! Histogramming of measured amplitudes, the outcome-overlap metric, the
//! maximum-density decision region, and error-rate and QNDness estimates.
//!
//! The two prepared ensembles yield densities P_g(β) and P_e(β) over the
//! β plane. Their distinguishability is the cosine overlap
//! Σ P_g·P_e / √(Σ P_g²·Σ P_e²), the assignment rule is the region
//! Z_g = {β : P_g(β) ≥ P_e(β)}, and the fidelity is
//! F = 1 − (E_g + E_e)/2 for the two misassignment rates.

use rayon::prelude::*;

use crate::hilbert::Branch;
use crate::{C64, Error, Result};

/// Default histogram extent (β units) covering the measured clouds for
/// probe amplitudes up to ≈ 8.5.
pub const DEFAULT_HISTOGRAM_HALF_EXTENT: f64 = 12.0;
pub const DEFAULT_HISTOGRAM_BINS: usize = 200;

/// Normalized 2-D outcome density over a rectangular bin grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeHistogram {
    x_edges: Vec<f64>,
    y_edges: Vec<f64>,
    /// Flat row-major density values, index ix·ny + iy.
    density: Vec<f64>,
    n_samples: usize,
}

/// `count + 1` evenly spaced edges spanning [lo, hi].
pub fn uniform_edges(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / count as f64;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

/// The default 200×200 grid over [−12, 12]².
pub fn default_edges() -> (Vec<f64>, Vec<f64>) {
    let e = uniform_edges(
        -DEFAULT_HISTOGRAM_HALF_EXTENT,
        DEFAULT_HISTOGRAM_HALF_EXTENT,
        DEFAULT_HISTOGRAM_BINS,
    );
    (e.clone(), e)
}

fn check_edges(edges: &[f64], axis: &str) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::BinningMismatch(format!("{axis} axis needs at least one bin")));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::BinningMismatch(format!("{axis} edges not strictly increasing")));
    }
    Ok(())
}

/// Bin index of `v` along `edges` for in-range values, else None.
fn edge_bin(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if v < edges[0] || v > edges[n] {
        return None;
    }
    // partition_point gives the first edge above v; the final edge folds
    // into the last bin.
    let k = edges.partition_point(|&e| e <= v);
    Some(k.saturating_sub(1).min(n - 1))
}

/// Nearest bin index with out-of-range values clamped to the border bins.
fn edge_bin_clamped(edges: &[f64], v: f64) -> usize {
    edge_bin(edges, v).unwrap_or(if v < edges[0] { 0 } else { edges.len() - 2 })
}

impl AmplitudeHistogram {
    /// Wraps an externally produced density, enforcing normalization.
    pub fn from_density(
        x_edges: Vec<f64>,
        y_edges: Vec<f64>,
        density: Vec<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        check_edges(&x_edges, "x")?;
        check_edges(&y_edges, "y")?;
        let nx = x_edges.len() - 1;
        let ny = y_edges.len() - 1;
        if density.len() != nx * ny {
            return Err(Error::LengthMismatch {
                context: "histogram density vs grid",
                left: density.len(),
                right: nx * ny,
            });
        }
        if density.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParams("histogram density must be non-negative".into()));
        }
        let hist = AmplitudeHistogram {
            x_edges,
            y_edges,
            density,
            n_samples,
        };
        let mass = hist.total_mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateNormalization(format!(
                "histogram mass {mass} is not 1"
            )));
        }
        Ok(hist)
    }

    pub fn x_edges(&self) -> &[f64] {
        &self.x_edges
    }

    pub fn y_edges(&self) -> &[f64] {
        &self.y_edges
    }

    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[ix * self.ny() + iy]
    }

    pub fn bin_area(&self, ix: usize, iy: usize) -> f64 {
        (self.x_edges[ix + 1] - self.x_edges[ix]) * (self.y_edges[iy + 1] - self.y_edges[iy])
    }

    pub fn x_centers(&self) -> Vec<f64> {
        self.x_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn y_centers(&self) -> Vec<f64> {
        self.y_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total_mass(&self) -> f64 {
        let ny = self.ny();
        self.density
            .iter()
            .enumerate()
            .map(|(idx, d)| d * self.bin_area(idx / ny, idx % ny))
            .sum()
    }

    pub fn same_binning(&self, other: &AmplitudeHistogram) -> bool {
        self.x_edges == other.x_edges && self.y_edges == other.y_edges
    }
}

/// Histograms β samples into a normalized density. At least 99.9% of the
/// samples must land inside the grid; the stragglers are dropped.
pub fn histogram2d(samples: &[C64], x_edges: &[f64], y_edges: &[f64]) -> Result<AmplitudeHistogram> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("histogram input"));
    }
    check_edges(x_edges, "x")?;
    check_edges(y_edges, "y")?;
    let nx = x_edges.len() - 1;
    let ny = y_edges.len() - 1;

    let counts = samples
        .par_chunks(8192)
        .map(|chunk| {
            let mut local = vec![0u64; nx * ny];
            for beta in chunk {
                if let (Some(ix), Some(iy)) = (edge_bin(x_edges, beta.re), edge_bin(y_edges, beta.im))
                {
                    local[ix * ny + iy] += 1;
                }
            }
            local
        })
        .reduce(
            || vec![0u64; nx * ny],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let kept: u64 = counts.iter().sum();
    let coverage = kept as f64 / samples.len() as f64;
    if coverage < 0.999 {
        return Err(Error::CoverageDeficit {
            fraction: coverage,
            allowed: 0.999,
        });
    }
    let mut density = vec![0.0; nx * ny];
    for ix in 0..nx {
        let dx = x_edges[ix + 1] - x_edges[ix];
        for iy in 0..ny {
            let dy = y_edges[iy + 1] - y_edges[iy];
            density[ix * ny + iy] = counts[ix * ny + iy] as f64 / (kept as f64 * dx * dy);
        }
    }
    AmplitudeHistogram::from_density(x_edges.to_vec(), y_edges.to_vec(), density, kept as usize)
}

/// Cosine overlap ⟨P_g, P_e⟩ = Σ pg·pe / (√Σ pg²·√Σ pe²) over bins.
pub fn overlap(pg: &AmplitudeHistogram, pe: &AmplitudeHistogram) -> Result<f64> {
    if !pg.same_binning(pe) {
        return Err(Error::BinningMismatch("overlap needs identical binning".into()));
    }
    let mut num = 0.0;
    let mut ng = 0.0;
    let mut ne = 0.0;
    for (a, b) in pg.density().iter().zip(pe.density()) {
        num += a * b;
        ng += a * a;
        ne += b * b;
    }
    if ng == 0.0 || ne == 0.0 {
        return Err(Error::DegenerateNormalization("overlap of an empty density".into()));
    }
    Ok((num / (ng.sqrt() * ne.sqrt())).clamp(0.0, 1.0))
}

/// Total-variation distance ½·Σ |p − q|·area between two densities on the
/// same binning. Zero for identical histograms, one for disjoint supports.
pub fn total_variation(p: &AmplitudeHistogram, q: &AmplitudeHistogram) -> Result<f64> {
    if !p.same_binning(q) {
        return Err(Error::BinningMismatch("total variation needs identical binning".into()));
    }
    let ny = p.ny();
    let sum: f64 = p
        .density()
        .iter()
        .zip(q.density())
        .enumerate()
        .map(|(idx, (a, b))| (a - b).abs() * p.bin_area(idx / ny, idx % ny))
        .sum();
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// Assignment region Z_g = {β : P_g(β) ≥ P_e(β)} with its binning.
/// Ties, including bins where both densities vanish, go to g: in the
/// continuum they have measure zero, and the discretized rule must be
/// deterministic.
#[derive(Debug, Clone)]
pub struct DecisionRegion {
    x_edges: Vec<f64>,
    y_edges: Vec<f64>,
    mask: Vec<bool>,
    overlap: f64,
}

impl DecisionRegion {
    pub fn build(pg: &AmplitudeHistogram, pe: &AmplitudeHistogram) -> Result<Self> {
        let overlap = overlap(pg, pe)?;
        let mask = pg
            .density()
            .iter()
            .zip(pe.density())
            .map(|(g, e)| g >= e)
            .collect();
        Ok(DecisionRegion {
            x_edges: pg.x_edges().to_vec(),
            y_edges: pg.y_edges().to_vec(),
            mask,
            overlap,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Overlap of the densities the region was built from.
    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn same_binning(&self, hist: &AmplitudeHistogram) -> bool {
        self.x_edges == hist.x_edges() && self.y_edges == hist.y_edges()
    }

    /// Branch assignment of one measured amplitude; out-of-grid samples
    /// classify by the nearest bin.
    pub fn classify(&self, beta: C64) -> Branch {
        let ix = edge_bin_clamped(&self.x_edges, beta.re);
        let iy = edge_bin_clamped(&self.y_edges, beta.im);
        if self.mask[ix * (self.y_edges.len() - 1) + iy] {
            Branch::Ground
        } else {
            Branch::Excited
        }
    }
}

/// Summary metrics of one readout characterization run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutReport {
    pub overlap: f64,
    pub error_g: f64,
    pub error_e: f64,
    pub fidelity: f64,
    pub qndness: Option<f64>,
    pub n_runs: usize,
}

impl ReadoutReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("overlap", self.overlap),
            ("error_g", self.error_g),
            ("error_e", self.error_e),
            ("fidelity", self.fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("report {name} = {v} outside [0, 1]")));
            }
        }
        if let Some(q) = self.qndness {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidParams(format!("report qndness = {q} outside [0, 1]")));
            }
        }
        let f = 1.0 - (self.error_g + self.error_e) / 2.0;
        if (self.fidelity - f).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "fidelity {} inconsistent with error rates (expect {f})",
                self.fidelity
            )));
        }
        Ok(())
    }
}

/// Misassignment rates of prepared ensembles against a decision region:
/// E_g counts g-prepared samples outside Z_g, E_e counts e-prepared
/// samples inside it.
pub fn error_rates(
    samples_g: &[C64],
    samples_e: &[C64],
    region: &DecisionRegion,
) -> Result<ReadoutReport> {
    if samples_g.is_empty() {
        return Err(Error::EmptySamples("g-prepared samples"));
    }
    if samples_e.is_empty() {
        return Err(Error::EmptySamples("e-prepared samples"));
    }
    let wrong_g = samples_g
        .par_iter()
        .filter(|&&b| region.classify(b) != Branch::Ground)
        .count();
    let wrong_e = samples_e
        .par_iter()
        .filter(|&&b| region.classify(b) != Branch::Excited)
        .count();
    let error_g = wrong_g as f64 / samples_g.len() as f64;
    let error_e = wrong_e as f64 / samples_e.len() as f64;
    let report = ReadoutReport {
        overlap: region.overlap(),
        error_g,
        error_e,
        fidelity: 1.0 - (error_g + error_e) / 2.0,
        qndness: None,
        n_runs: samples_g.len() + samples_e.len(),
    };
    report.validate()?;
    Ok(report)
}

/// One repeated-readout record: two successive assigned outcomes and the
/// prepared branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QndPair {
    pub first: Branch,
    pub second: Branch,
    pub prepared: Branch,
}

/// Probability that two successive readouts agree, heralded on the first
/// outcome matching the preparation.
pub fn qnd_probability(pairs: &[QndPair]) -> Result<f64> {
    let mut heralded = 0usize;
    let mut same = 0usize;
    for p in pairs {
        if p.first == p.prepared {
            heralded += 1;
            if p.second == p.first {
                same += 1;
            }
        }
    }
    if heralded == 0 {
        return Err(Error::NoHeraldedPairs);
    }
    Ok(same as f64 / heralded as f64)
}
