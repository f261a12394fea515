//! Command-line surface. Every subcommand is a thin wrapper over the library API.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{self, AutotuneRequest, BenchError, BenchReport, MeasurementPlan, Mode, Source};
use crate::cost_model::{self, CostError, ParamsError};
use crate::device_model::{self, DeviceProfile, KernelResources, OccupancyError, ProfileError, SensitivityError};
use crate::interp::InterpError;
use crate::pnm::{self, PnmError};
use crate::tiling::{self, TileDims, TilingError};
use crate::CostParams;

#[derive(Debug, Parser)]
#[command(name = "tilelab", version, about = "Block-tiling lab: tiled bilinear resize, occupancy, cost model, benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resize a P5/P6 image with the tiled executor.
    Resize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        tile: TileDims,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output: PathBuf,
        /// Validate the tile and grid against this device first.
        #[arg(long)]
        device: Option<String>,
    },
    /// Per-SM residency and occupancy of one block shape.
    Occupancy {
        #[arg(long)]
        device: String,
        #[arg(long)]
        tile: TileDims,
        #[arg(long, default_value_t = 10)]
        regs_per_thread: u32,
    },
    /// Cost-model breakdown for one tile and output size.
    Predict {
        #[arg(long)]
        device: String,
        #[arg(long)]
        tile: TileDims,
        #[arg(long)]
        out_width: usize,
        #[arg(long)]
        out_height: usize,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Sweep candidate tiles by model, measurement, or both.
    Autotune {
        #[arg(long)]
        device: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "scale", value_delimiter = ',', required = true)]
        scales: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<TileDims>>,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Measure and model a list of tiles over a list of scales.
    Bench {
        #[arg(long)]
        device: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        scales: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        tiles: Vec<TileDims>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Total efficiency loss for a per-SM loss spread over N SMs.
    Sensitivity {
        #[arg(long)]
        loss: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        sms: Vec<u32>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 100)]
    runs_per_group: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long)]
    workers: Option<usize>,
}

impl PlanArgs {
    fn plan(&self) -> MeasurementPlan {
        MeasurementPlan {
            groups: self.groups,
            runs_per_group: self.runs_per_group,
            warmup_runs: self.warmup,
            workers: self.workers.unwrap_or_else(tiling::default_workers),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Image(#[from] PnmError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Distinct non-zero exit status per error family; 2 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Profile(_) | CliError::Params(_) => 3,
            CliError::Image(_) => 4,
            CliError::Occupancy(_) | CliError::Cost(_) => 5,
            CliError::Tiling(_) => 6,
            CliError::Bench(_) => 7,
            CliError::Sensitivity(_) => 8,
            CliError::Io(_) => 9,
        }
    }
}

impl From<InterpError> for CliError {
    fn from(e: InterpError) -> Self {
        CliError::Tiling(TilingError::Interp(e))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Loads a profile from a path, falling back to a shipped profile named by the file stem.
pub fn resolve_device(spec: &str) -> Result<DeviceProfile, ProfileError> {
    let path = Path::new(spec);
    if path.exists() {
        return DeviceProfile::load(path);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    match DeviceProfile::builtin(stem) {
        Some(p) => Ok(p),
        None => DeviceProfile::load(path),
    }
}

fn load_params(path: Option<&Path>) -> Result<CostParams, ParamsError> {
    path.map_or_else(|| Ok(CostParams::default()), CostParams::load)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Resize { input, scale, tile, workers, output, device } => {
            let src = pnm::read_image(&input)?;
            let workers = workers.unwrap_or_else(tiling::default_workers);
            let img = match device {
                Some(d) => tiling::resize_tiled_on(&resolve_device(&d)?, &src, scale, tile, workers)?,
                None => tiling::resize_tiled(&src, scale, tile, workers)?,
            };
            pnm::write_image(&img, &output)?;
            writeln!(out, "wrote {}x{} image to {}", img.width(), img.height(), output.display())?;
        }
        Command::Occupancy { device, tile, regs_per_thread } => {
            let dev = resolve_device(&device)?;
            let violations = tiling::validate_tile(&dev, tile);
            let r = device_model::occupancy(&dev, &KernelResources::new(regs_per_thread, tile.threads()))?;
            writeln!(out, "device {}", dev.name)?;
            writeln!(out, "tile {tile} ({} threads)", tile.threads())?;
            writeln!(out, "resident_blocks {}", r.resident_blocks)?;
            writeln!(out, "active_warps {}", r.active_warps)?;
            writeln!(out, "active_threads {}", r.active_threads)?;
            writeln!(out, "occupancy {:.4} ({}/{})", r.occupancy_f64(), r.active_warps, dev.max_warps_per_sm)?;
            writeln!(out, "limiting_factor {}", r.limiting_factor)?;
            for v in violations {
                writeln!(out, "warning {v}")?;
            }
        }
        Command::Predict { device, tile, out_width, out_height, params } => {
            let dev = resolve_device(&device)?;
            let p = load_params(params.as_deref())?;
            let b = cost_model::predict(&dev, tile, out_width, out_height, &p)?;
            writeln!(out, "device {}", dev.name)?;
            writeln!(out, "tile {tile}")?;
            writeln!(out, "threads_per_block {}", b.threads_per_block)?;
            writeln!(out, "warps_per_block {}", b.warps_per_block)?;
            writeln!(out, "segments_per_warp {}", b.segments_per_warp)?;
            writeln!(out, "resident_blocks {}", b.resident_blocks)?;
            writeln!(out, "total_blocks {}", b.total_blocks)?;
            writeln!(out, "rounds {}", b.rounds)?;
            writeln!(out, "compute_cycles {}", b.compute_cycles)?;
            writeln!(out, "memory_cycles {}", b.memory_cycles)?;
            writeln!(out, "hiding_factor {}", b.hiding_factor)?;
            writeln!(out, "predicted_time {}", b.predicted_time)?;
        }
        Command::Autotune { device, input, scales, candidates, mode, report, params, plan } => {
            let dev = resolve_device(&device)?;
            let img = pnm::read_image(&input)?;
            let req = AutotuneRequest {
                device: &dev,
                source: Source::Image(&img),
                scales,
                candidates: candidates.unwrap_or_else(bench::default_candidates),
                params: load_params(params.as_deref())?,
                mode,
                plan: plan.plan(),
            };
            let rep = bench::autotune(&req)?;
            print_summary(&rep, out)?;
            if let Some(path) = report {
                write_report(&rep, &path)?;
            }
        }
        Command::Bench { device, input, scales, tiles, report, params, plan } => {
            let dev = resolve_device(&device)?;
            let img = pnm::read_image(&input)?;
            let req = AutotuneRequest {
                device: &dev,
                source: Source::Image(&img),
                scales,
                candidates: tiles,
                params: load_params(params.as_deref())?,
                mode: Mode::Both,
                plan: plan.plan(),
            };
            let rep = bench::autotune(&req)?;
            print_summary(&rep, out)?;
            if let Some(path) = report {
                write_report(&rep, &path)?;
            }
        }
        Command::Sensitivity { loss, sms } => {
            for n in sms {
                let v = device_model::sensitivity(loss, n)?;
                writeln!(out, "{n}\t{v}")?;
            }
        }
    }
    Ok(())
}

fn print_summary(rep: &BenchReport, out: &mut dyn Write) -> Result<(), CliError> {
    writeln!(out, "# device: {}", rep.device_name)?;
    if rep.plan.is_some() {
        writeln!(out, "# {}", bench::TIMING_NOTE)?;
    }
    writeln!(out, "scale\ttile\tpredicted_time\tgrand_mean_s\toracle_match")?;
    for r in &rep.rows {
        let mean = r.timing.as_ref().map(|t| format!("{:.6e}", t.grand_mean)).unwrap_or_else(|| "-".into());
        let ok = r.oracle_match.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.scale, r.tile, r.cost.predicted_time, mean, ok)?;
    }
    for rej in &rep.rejects {
        writeln!(out, "rejected scale {} tile {}: {:?}", rej.scale, rej.tile, rej.reason)?;
    }
    let show = |t: Option<TileDims>| t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
    for s in &rep.summaries {
        let argmin: Vec<String> = s.modeled_argmin.iter().map(ToString::to_string).collect();
        writeln!(
            out,
            "scale {}: best_modeled {} (argmin {}) best_measured {} agreement {}",
            s.scale,
            show(s.best_modeled),
            if argmin.is_empty() { "-".into() } else { argmin.join(",") },
            show(s.best_measured),
            s.top1_agreement.map(|a| a.to_string()).unwrap_or_else(|| "-".into()),
        )?;
    }
    Ok(())
}

/// `.json` paths get the JSON document, anything else the CSV table.
fn write_report(rep: &BenchReport, path: &Path) -> Result<(), CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        std::fs::write(path, rep.to_json().map_err(CliError::Bench)?)?;
    } else {
        let file = std::fs::File::create(path)?;
        rep.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}
