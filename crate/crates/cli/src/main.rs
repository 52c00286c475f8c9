//! Command line front end: runs the readout pipeline from a key-value
//! config file and writes CSV (and optionally PNG) artifacts.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad file,
//! unknown key, invalid value), 3 for numeric failures during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use seqread::discrimination::AmplitudeHistogram;
use seqread::pipeline::{self, ExperimentConfig, WignerJob, WignerMethod};
use seqread::tomography::{PhaseSpaceGrid, WignerMap};

const TAU: f64 = std::f64::consts::TAU;

#[derive(Parser)]
#[command(name = "seqread", version, about = "Sequential dispersive readout simulator")]
struct Cli {
    /// Key-value experiment config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overrides run.output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed, overrides run.seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 0 or omitted keeps the automatic pool size.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Artifact formats to emit.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    /// CSV artifacts only.
    Csv,
    /// CSV artifacts plus best-effort PNG renderings.
    #[value(name = "csv+png")]
    CsvPng,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo readout of both prepared ensembles.
    Readout,
    /// Outcome-overlap matrix over probe amplitude and interaction time.
    Sweep(SweepArgs),
    /// Remaining-energy table over pump spread and peak coupling.
    Release(ReleaseArgs),
    /// Wigner maps of both interacted branches.
    Wigner(WignerArgs),
    /// Synthetic calibration chain with fitted-parameter summary.
    Calibrate,
    /// Fast internal consistency checks.
    Selfcheck,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated probe amplitudes.
    #[arg(long, value_name = "LIST", default_value = "2.1,4.0,5.8")]
    alpha0: String,
    /// Comma-separated interaction times in ns.
    #[arg(long, value_name = "LIST", default_value = "0,50,100,150,200")]
    t_int_ns: String,
}

#[derive(Args)]
struct ReleaseArgs {
    /// Comma-separated pump spreads σ in ns.
    #[arg(long, value_name = "LIST", default_value = "5,10,15,20,28,40,60,80,100")]
    sigma_ns: String,
    /// Comma-separated peak couplings g_max/2π in MHz.
    #[arg(long, value_name = "LIST", default_value = "0,1.8,3.6,5.4,7.2,9.0")]
    gmax_mhz: String,
}

#[derive(Args)]
struct WignerArgs {
    /// Half-width of the square phase-space grid.
    #[arg(long, default_value_t = 8.0)]
    grid_half: f64,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 80)]
    grid_cells: usize,
    /// Frame rotation applied to both maps (rad).
    #[arg(long, default_value_t = 0.0)]
    rotation: f64,
    /// Use the shot-sampled parity protocol instead of direct evaluation.
    #[arg(long)]
    protocol: bool,
    /// Shots per grid point for the protocol.
    #[arg(long, default_value_t = 2000)]
    shots: usize,
    /// Protocol expectation values without shot noise.
    #[arg(long)]
    exact: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<seqread::Error>() {
        Some(e) if e.is_config_error() => 2,
        Some(_) => 3,
        None => {
            if err.downcast_ref::<std::io::Error>().is_some() {
                2
            } else {
                3
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = seqread::io::read_text(path)?;
            pipeline::parse_config(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    pipeline::configure_thread_pool(cli.threads.unwrap_or(0))?;
    config.validate()?;
    let png = cli.format == OutputFormat::CsvPng;

    match &cli.command {
        Command::Readout => {
            let artifacts = pipeline::run_readout(&config)?;
            let r = &artifacts.report;
            println!("runs      = {}", r.n_runs);
            println!("overlap   = {:.4}", r.overlap);
            println!("error_g   = {:.4}", r.error_g);
            println!("error_e   = {:.4}", r.error_e);
            println!("fidelity  = {:.4}", r.fidelity);
            if png {
                emit_histogram_png(&artifacts.hist_g, &config.output_dir.join("histogram_g.png"));
                emit_histogram_png(&artifacts.hist_e, &config.output_dir.join("histogram_e.png"));
            }
            println!("wrote {}", config.output_dir.join("report.txt").display());
        }
        Command::Sweep(args) => {
            let alpha0 = parse_list(&args.alpha0, "alpha0", 1.0)?;
            let t_int = parse_list(&args.t_int_ns, "t-int-ns", 1e-9)?;
            let sweep = pipeline::sweep_overlap(&config, &alpha0, &t_int)?;
            let min = sweep.overlap.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("{} x {} cells, min overlap = {min:.4}", alpha0.len(), t_int.len());
            println!("wrote {}", config.output_dir.join("sweep_overlap.csv").display());
        }
        Command::Release(args) => {
            let sigma = parse_list(&args.sigma_ns, "sigma-ns", 1e-9)?;
            let gmax = parse_list(&args.gmax_mhz, "gmax-mhz", TAU * 1e6)?;
            let study = pipeline::run_release_study(&config, &sigma, &gmax)?;
            let min = study.remaining.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("{} x {} cells, min remaining = {min:.6}", sigma.len(), gmax.len());
            println!("wrote {}", config.output_dir.join("release_study.csv").display());
        }
        Command::Wigner(args) => {
            let grid = PhaseSpaceGrid::centered(args.grid_half, args.grid_cells)?;
            let job = WignerJob {
                method: if args.protocol {
                    WignerMethod::Protocol {
                        n_shots: args.shots,
                        exact: args.exact,
                    }
                } else {
                    WignerMethod::Direct
                },
                rotation: args.rotation,
            };
            let [map_g, map_e] = pipeline::run_wigner(&config, &grid, &job)?;
            println!("g branch: min W = {:.4}, max W = {:.4}", map_g.min_value(), map_g.max_value());
            println!("e branch: min W = {:.4}, max W = {:.4}", map_e.min_value(), map_e.max_value());
            if png {
                emit_wigner_png(&map_g, &config.output_dir.join("wigner_g.png"));
                emit_wigner_png(&map_e, &config.output_dir.join("wigner_e.png"));
            }
            println!("wrote {}", config.output_dir.join("wigner_e.csv").display());
        }
        Command::Calibrate => {
            let summary = pipeline::run_calibration(&config)?;
            println!("nbar      = {:.3} (true {:.3})", summary.nbar_fit, summary.nbar_true);
            println!("kappa_r   = 2pi x {:.1} kHz", summary.kappa_r_fit / TAU / 1e3);
            println!("chi       = 2pi x {:.3} MHz", summary.chi_fit / TAU / 1e6);
            println!("kerr_g    = 2pi x {:.2} kHz", summary.kerr_g_fit / TAU / 1e3);
            println!("kerr_e    = 2pi x {:.2} kHz", summary.kerr_e_fit / TAU / 1e3);
            println!("pi pulse  = {:.4}", summary.pi_pulse_survival);
            println!("qubit T   = {:.1} mK", summary.thermal_temperature_k * 1e3);
            println!("wrote {}", config.output_dir.join("calibration.txt").display());
        }
        Command::Selfcheck => {
            let checks = pipeline::run_selfcheck();
            let mut failed = 0;
            for check in &checks {
                let status = if check.passed { "ok  " } else { "FAIL" };
                println!("{status} {} ({})", check.name, check.detail);
                if !check.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                anyhow::bail!("{failed} of {} selfchecks failed", checks.len());
            }
        }
    }
    Ok(())
}

/// Parses a comma-separated number list, scaling each entry into SI.
fn parse_list(text: &str, flag: &str, scale: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| seqread::Error::Config(format!("--{flag}: bad number {part:?}")))?;
        out.push(v * scale);
    }
    Ok(out)
}

/// Grayscale density rendering, dark bins carry the mass. Best effort:
/// failures only warn.
fn emit_histogram_png(hist: &AmplitudeHistogram, path: &std::path::Path) {
    let nx = hist.x_edges().len() - 1;
    let ny = hist.y_edges().len() - 1;
    let peak = hist.density().iter().cloned().fold(0.0f64, f64::max);
    let mut img = image::GrayImage::new(nx as u32, ny as u32);
    for (ix, iy, px) in img.enumerate_pixels_mut().map(|(x, y, p)| (x as usize, y as usize, p)) {
        // image rows run top down, the y axis runs bottom up
        let density = hist.density()[ix * ny + (ny - 1 - iy)];
        let level = if peak > 0.0 { density / peak } else { 0.0 };
        *px = image::Luma([(255.0 * (1.0 - level)) as u8]);
    }
    if let Err(e) = img.save(path) {
        eprintln!("warning: could not write {}: {e}", path.display());
    }
}

/// Diverging blue-white-red rendering, symmetric about W = 0.
fn emit_wigner_png(map: &WignerMap, path: &std::path::Path) {
    let nx = map.grid().xs().len();
    let ny = map.grid().ys().len();
    let limit = map.max_value().abs().max(map.min_value().abs()).max(1e-12);
    let mut img = image::RgbImage::new(nx as u32, ny as u32);
    for (ix, iy, px) in img.enumerate_pixels_mut().map(|(x, y, p)| (x as usize, y as usize, p)) {
        let w = map.at(ix, ny - 1 - iy) / limit;
        let (r, g, b) = if w >= 0.0 {
            (255.0, 255.0 * (1.0 - w), 255.0 * (1.0 - w))
        } else {
            (255.0 * (1.0 + w), 255.0 * (1.0 + w), 255.0)
        };
        *px = image::Rgb([r as u8, g as u8, b as u8]);
    }
    if let Err(e) = img.save(path) {
        eprintln!("warning: could not write {}: {e}", path.display());
    }
}
