//! Sweep execution and persistent outputs.
//!
//! For every sweep point the input distribution is built (optimized or
//! baseline), analytic metrics are evaluated where defined, and the Monte
//! Carlo estimator is run with a point-derived seed. Points execute
//! concurrently; all files are written afterwards by a single writer, so a
//! rerun with the same config and seed is byte-identical.

use crate::channel::{load_channel_file, synthesize_channel};
use crate::config::{ChannelSource, ConfigError, ExperimentConfig, Scheme};
use dfrc_core::grid::{epsilon_samples, OfdmConfig};
use dfrc_core::metrics::{
    aubop, op_bessel_approx, simulate_op, ubop, CommChannel, ExperimentResult, GaussianInput,
    MetricsError, SimSpec, SymbolSource,
};
use dfrc_core::opt::{
    baseline_allocation, optimize_decoupled, optimize_gaussian, optimize_psk, OptError,
};
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("point {power_dbw} dBW: {source}")]
    Optimizer {
        power_dbw: f64,
        #[source]
        source: OptError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One executed sweep point: the simulation row, whichever analytics the
/// scheme defines, and the distribution that produced it.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub result: ExperimentResult,
    pub ubop: Option<f64>,
    pub op_bessel: Option<f64>,
    pub aubop: Option<f64>,
    pub converged: bool,
    pub allocation: GaussianInput,
}

#[derive(Debug)]
pub struct RunSummary {
    pub points: Vec<PointOutcome>,
    pub all_converged: bool,
    pub out_dir: PathBuf,
}

/// Per-point master seed, derived from the experiment seed and point index.
fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn build_channel(cfg: &ExperimentConfig, ofdm: &OfdmConfig) -> Result<CommChannel, RunError> {
    let noise_density = cfg.comm_noise_density();
    Ok(match &cfg.channel {
        ChannelSource::Taps(taps) => synthesize_channel(*taps, cfg.channel_seed, ofdm, noise_density),
        ChannelSource::File(path) => load_channel_file(path, ofdm, noise_density)?,
    })
}

fn run_point(
    cfg: &ExperimentConfig,
    ofdm: &OfdmConfig,
    channel: &CommChannel,
    index: usize,
    power_dbw: f64,
) -> Result<PointOutcome, RunError> {
    let p_max = 10f64.powf(power_dbw / 10.0);
    let sigma2 = ofdm.effective_sigma2();
    let eps = epsilon_samples(cfg.eps_samples);
    let wrap = |source: OptError| RunError::Optimizer { power_dbw, source };

    let (source, converged, alloc, ub, bes, aub) = match cfg.scheme {
        Scheme::Psk => {
            let sol = optimize_psk(ofdm, p_max, sigma2, &eps, &cfg.optimizer).map_err(wrap)?;
            let ub = ubop(&sol.grid, ofdm, sigma2, &eps)?;
            let bes = op_bessel_approx(&sol.grid, ofdm, sigma2, &eps)?;
            let alloc = GaussianInput::deterministic(&sol.grid);
            (
                SymbolSource::Psk {
                    grid: sol.grid,
                    order: cfg.psk_order,
                },
                sol.converged,
                alloc,
                Some(ub),
                Some(bes),
                None,
            )
        }
        Scheme::Baseline(kind) => {
            let grid = baseline_allocation(kind, ofdm, p_max, cfg.optimizer.kaiser_beta);
            let ub = ubop(&grid, ofdm, sigma2, &eps)?;
            let bes = op_bessel_approx(&grid, ofdm, sigma2, &eps)?;
            let alloc = GaussianInput::deterministic(&grid);
            (
                SymbolSource::Psk {
                    grid,
                    order: cfg.psk_order,
                },
                true,
                alloc,
                Some(ub),
                Some(bes),
                None,
            )
        }
        Scheme::GaussianOpt | Scheme::GaussianDecouple => {
            let sol = if cfg.scheme == Scheme::GaussianOpt {
                optimize_gaussian(
                    ofdm,
                    p_max,
                    sigma2,
                    channel,
                    cfg.rate_constraint_bps_hz,
                    &eps,
                    &cfg.optimizer,
                )
            } else {
                optimize_decoupled(
                    ofdm,
                    p_max,
                    sigma2,
                    channel,
                    cfg.rate_constraint_bps_hz,
                    &eps,
                    &cfg.optimizer,
                )
            }
            .map_err(wrap)?;
            let aub = aubop(&sol.input, ofdm, sigma2, &eps)?;
            (
                SymbolSource::Gaussian(sol.input.clone()),
                sol.converged,
                sol.input,
                None,
                None,
                Some(aub),
            )
        }
    };

    let spec = SimSpec {
        power_dbw,
        trials: cfg.trials,
        master_seed: point_seed(cfg.seed, index),
        forced_eps: None,
    };
    let result = simulate_op(ofdm, &source, &spec)?;
    Ok(PointOutcome {
        result,
        ubop: ub,
        op_bessel: bes,
        aubop: aub,
        converged,
        allocation: alloc,
    })
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

fn write_outputs(cfg: &ExperimentConfig, points: &[PointOutcome]) -> Result<(), RunError> {
    let io_err = |path: PathBuf| move |source: std::io::Error| RunError::Io { path, source };
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(cfg.out_dir.clone()))?;

    let curve_path = cfg.out_dir.join("op_curve.csv");
    let mut curve = String::new();
    curve.push_str(ExperimentResult::CSV_HEADER);
    curve.push_str(",ubop,op_bessel,aubop\n");
    for p in points {
        curve.push_str(&format!(
            "{},{},{},{}\n",
            p.result.csv_row(),
            optional(p.ubop),
            optional(p.op_bessel),
            optional(p.aubop)
        ));
    }
    std::fs::write(&curve_path, curve).map_err(io_err(curve_path.clone()))?;

    // The final sweep point's distribution, one row per grid cell.
    let alloc_path = cfg.out_dir.join("allocation.csv");
    let last = &points[points.len() - 1].allocation;
    let mut alloc = String::from("k,m,pbar_R,pbar_I,sigma_R,sigma_I\n");
    for m in 0..last.symbols() {
        for k in 0..last.subcarriers() {
            alloc.push_str(&format!(
                "{k},{m},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                last.pbar()[last.index(0, k, m)],
                last.pbar()[last.index(1, k, m)],
                last.sigma()[last.index(0, k, m)],
                last.sigma()[last.index(1, k, m)],
            ));
        }
    }
    std::fs::write(&alloc_path, alloc).map_err(io_err(alloc_path.clone()))?;

    let manifest_path = cfg.out_dir.join("manifest");
    let mut manifest = std::fs::File::create(&manifest_path)
        .map_err(io_err(manifest_path.clone()))?;
    writeln!(manifest, "scenario = {}", cfg.scenario)
        .and_then(|_| writeln!(manifest, "config_sha256 = {}", cfg.config_sha256))
        .and_then(|_| writeln!(manifest, "seed = {}", cfg.seed))
        .and_then(|_| writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION")))
        .map_err(io_err(manifest_path.clone()))?;
    Ok(())
}

/// Execute every sweep point and persist `op_curve.csv`, `allocation.csv`
/// and the run `manifest` under the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let ofdm = cfg.ofdm()?;
    // The channel realization is shared across the sweep.
    let channel = if cfg.scheme.needs_channel() {
        build_channel(cfg, &ofdm)?
    } else {
        CommChannel::flat(
            ofdm.subcarriers,
            10f64.powf(-ofdm.comm_loss_db / 10.0),
            cfg.comm_noise_density(),
        )
    };

    let points: Vec<PointOutcome> = cfg
        .power_dbw_list
        .par_iter()
        .enumerate()
        .map(|(index, &power_dbw)| run_point(cfg, &ofdm, &channel, index, power_dbw))
        .collect::<Result<_, _>>()?;

    write_outputs(cfg, &points)?;
    let all_converged = points.iter().all(|p| p.converged);
    Ok(RunSummary {
        points,
        all_converged,
        out_dir: cfg.out_dir.clone(),
    })
}
