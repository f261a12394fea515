//! Timing protocol, tile-sweep autotuning and report output.
//!
//! Measured numbers are host-CPU wall-clock times of the tiled executor. They
//! are not GPU times; the harness exists to compare the measured ranking of
//! tiles against the cost model's ranking under a fixed protocol.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::cost_model::{predict, rank_order, CostBreakdown, CostError, CostParams};
use crate::device_model::DeviceProfile;
use crate::image::ImageBuffer;
use crate::interp::{output_dims, resize_scalar, InterpError};
use crate::tiling::{default_workers, grid_for_image, resize_tiled, validate_launch, LaunchViolation, TileDims, TilingError};

pub const TIMING_NOTE: &str =
    "measured times are host-CPU wall clock of the tiled executor, not GPU times";

/// Candidate tiles swept when none are given.
pub fn default_candidates() -> Vec<TileDims> {
    [(8, 8), (16, 8), (8, 16), (32, 4), (4, 32), (16, 16), (32, 8), (8, 32), (32, 16), (16, 32)]
        .into_iter()
        .map(|(w, h)| TileDims::new(w, h).expect("non-zero"))
        .collect()
}

/// Scales swept by default.
pub const DEFAULT_SCALES: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MeasurementPlan {
    pub groups: usize,
    pub runs_per_group: usize,
    pub warmup_runs: usize,
    pub workers: usize,
}

impl Default for MeasurementPlan {
    fn default() -> Self {
        Self {
            groups: 10,
            runs_per_group: 100,
            warmup_runs: 3,
            workers: default_workers(),
        }
    }
}

impl MeasurementPlan {
    pub fn total_runs(&self) -> usize {
        self.groups * self.runs_per_group
    }
}

/// Durations are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub group_means: Vec<f64>,
    pub grand_mean: f64,
    pub min_run: f64,
    pub max_run: f64,
    pub offset_max: f64,
    pub offset_min: f64,
}

impl TimingStats {
    /// Statistics over runs grouped as executed. Groups must be non-empty.
    pub fn from_groups(groups: &[Vec<f64>]) -> Self {
        assert!(!groups.is_empty() && groups.iter().all(|g| !g.is_empty()));
        let group_means: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        let all = groups.iter().flatten().copied();
        let (min_run, max_run) = all.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let count = groups.iter().map(Vec::len).sum::<usize>() as f64;
        // the mean of all runs can drift an ulp outside [min, max] when all runs are equal
        let grand_mean = (all.sum::<f64>() / count).clamp(min_run, max_run);
        TimingStats {
            group_means,
            grand_mean,
            min_run,
            max_run,
            offset_max: max_run - grand_mean,
            offset_min: grand_mean - min_run,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("measurement plan needs at least one group, one run per group and one worker")]
    InvalidPlan,
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("no valid candidate tile at scale {scale}")]
    NoValidCandidate { scale: f64 },
    #[error("no candidate tiles given")]
    NoCandidates,
    #[error("measure and both modes need a source image")]
    MissingImage,
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

/// Timings and the output image of the final timed run.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub stats: TimingStats,
    pub output: ImageBuffer,
}

/// Runs the protocol: unrecorded warmups, then `groups` sequential groups of timed runs.
pub fn measure(
    src: &ImageBuffer,
    scale: f64,
    tile: TileDims,
    plan: &MeasurementPlan,
) -> Result<Measurement, BenchError> {
    if plan.groups == 0 || plan.runs_per_group == 0 || plan.workers == 0 {
        return Err(BenchError::InvalidPlan);
    }
    for _ in 0..plan.warmup_runs {
        std::hint::black_box(resize_tiled(src, scale, tile, plan.workers)?);
    }
    let mut groups = Vec::with_capacity(plan.groups);
    let mut last = None;
    for _ in 0..plan.groups {
        let mut runs = Vec::with_capacity(plan.runs_per_group);
        for _ in 0..plan.runs_per_group {
            let start = Instant::now();
            let out = std::hint::black_box(resize_tiled(src, scale, tile, plan.workers)?);
            runs.push(start.elapsed().as_secs_f64());
            last = Some(out);
        }
        groups.push(runs);
    }
    Ok(Measurement {
        stats: TimingStats::from_groups(&groups),
        output: last.expect("at least one timed run"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Model,
    Measure,
    Both,
}

impl Mode {
    fn measures(self) -> bool {
        matches!(self, Mode::Measure | Mode::Both)
    }

    fn models(self) -> bool {
        matches!(self, Mode::Model | Mode::Both)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(Mode::Model),
            "measure" => Ok(Mode::Measure),
            "both" => Ok(Mode::Both),
            other => Err(format!("unknown mode `{other}` (model, measure, both)")),
        }
    }
}

/// What the sweep runs on: an actual image, or just its dimensions for model-only sweeps.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Image(&'a ImageBuffer),
    Dims { width: usize, height: usize },
}

impl Source<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Source::Image(img) => (img.width(), img.height()),
            Source::Dims { width, height } => (*width, *height),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AutotuneRequest<'a> {
    pub device: &'a DeviceProfile,
    pub source: Source<'a>,
    pub scales: Vec<f64>,
    pub candidates: Vec<TileDims>,
    pub params: CostParams,
    pub mode: Mode,
    pub plan: MeasurementPlan,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub device_name: String,
    pub tile: TileDims,
    pub scale: f64,
    pub out_width: usize,
    pub out_height: usize,
    pub timing: Option<TimingStats>,
    /// Whether the retained output of the timed runs equals the scalar resize.
    pub oracle_match: Option<bool>,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, Serialize)]
pub enum RejectReason {
    Launch(Vec<LaunchViolation>),
    Model(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct Reject {
    pub scale: f64,
    pub tile: TileDims,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub best_measured: Option<TileDims>,
    pub best_modeled: Option<TileDims>,
    /// Every tile tied at the minimum predicted time.
    pub modeled_argmin: Vec<TileDims>,
    pub top1_agreement: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub note: &'static str,
    pub device_name: String,
    pub mode: Mode,
    pub plan: Option<MeasurementPlan>,
    pub rows: Vec<ReportRow>,
    pub rejects: Vec<Reject>,
    pub summaries: Vec<ScaleSummary>,
}

/// Evaluates every (scale, candidate) pair by model, measurement, or both.
pub fn autotune(req: &AutotuneRequest<'_>) -> Result<BenchReport, BenchError> {
    if req.candidates.is_empty() {
        return Err(BenchError::NoCandidates);
    }
    let image = match (req.mode.measures(), req.source) {
        (true, Source::Dims { .. }) => return Err(BenchError::MissingImage),
        (_, Source::Image(img)) => Some(img),
        (false, Source::Dims { .. }) => None,
    };
    let (src_w, src_h) = req.source.dims();
    let dev = req.device;
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut summaries = Vec::new();

    for &scale in &req.scales {
        let (out_w, out_h) = output_dims(src_w, src_h, scale)?;
        let oracle = match image {
            Some(img) if req.mode.measures() => Some(resize_scalar(img, scale)?),
            _ => None,
        };
        let first_row = rows.len();
        for &tile in &req.candidates {
            let violations = validate_launch(dev, &grid_for_image(tile, out_w, out_h));
            if !violations.is_empty() {
                rejects.push(Reject { scale, tile, reason: RejectReason::Launch(violations) });
                continue;
            }
            let cost = match predict(dev, tile, out_w, out_h, &req.params) {
                Ok(c) => c,
                Err(e) => {
                    rejects.push(Reject { scale, tile, reason: reject_reason(e) });
                    continue;
                }
            };
            let (timing, oracle_match) = match (image, &oracle) {
                (Some(img), Some(want)) => {
                    let m = measure(img, scale, tile, &req.plan)?;
                    (Some(m.stats), Some(&m.output == want))
                }
                _ => (None, None),
            };
            rows.push(ReportRow {
                device_name: dev.name.clone(),
                tile,
                scale,
                out_width: out_w,
                out_height: out_h,
                timing,
                oracle_match,
                cost,
            });
        }
        let scale_rows = &rows[first_row..];
        if scale_rows.is_empty() {
            return Err(BenchError::NoValidCandidate { scale });
        }
        summaries.push(summarize(scale, scale_rows, req.mode));
    }

    Ok(BenchReport {
        note: TIMING_NOTE,
        device_name: dev.name.clone(),
        mode: req.mode,
        plan: req.mode.measures().then_some(req.plan),
        rows,
        rejects,
        summaries,
    })
}

fn reject_reason(e: CostError) -> RejectReason {
    match e {
        CostError::InvalidTile { violations, .. } => RejectReason::Launch(violations),
        other => RejectReason::Model(other.to_string()),
    }
}

fn summarize(scale: f64, rows: &[ReportRow], mode: Mode) -> ScaleSummary {
    let mut modeled: Vec<(TileDims, CostBreakdown)> = rows.iter().map(|r| (r.tile, r.cost)).collect();
    modeled.sort_by(rank_order);
    let (best_modeled, modeled_argmin) = if mode.models() {
        let best = modeled[0].1.predicted_time;
        let argmin = modeled
            .iter()
            .take_while(|(_, c)| c.predicted_time == best)
            .map(|(t, _)| *t)
            .collect();
        (Some(modeled[0].0), argmin)
    } else {
        (None, Vec::new())
    };
    let best_measured = rows
        .iter()
        .filter_map(|r| r.timing.as_ref().map(|t| (r.tile, t.grand_mean)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| b.0.bw().cmp(&a.0.bw()))
                .then_with(|| a.0.bh().cmp(&b.0.bh()))
        })
        .map(|(t, _)| t);
    let top1_agreement = match (best_measured, best_modeled) {
        (Some(m), Some(p)) => Some(m == p),
        _ => None,
    };
    ScaleSummary { scale, best_measured, best_modeled, modeled_argmin, top1_agreement }
}

/// Column order of the CSV report.
pub const CSV_COLUMNS: [&str; 27] = [
    "device", "tile", "bw", "bh", "scale", "out_width", "out_height", "measured_on",
    "groups", "runs_per_group", "grand_mean_s", "min_run_s", "max_run_s", "offset_max_s",
    "offset_min_s", "group_means_s", "oracle_match", "threads_per_block", "warps_per_block",
    "segments_per_warp", "resident_blocks", "total_blocks", "rounds", "compute_cycles",
    "memory_cycles", "hiding_factor", "predicted_time",
];

impl BenchReport {
    /// One row per (device, tile, scale); timing columns are empty for unmeasured rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            let t = r.timing.as_ref();
            let opt = |f: fn(&TimingStats) -> f64| t.map(|t| f(t).to_string()).unwrap_or_default();
            let plan = self.plan.as_ref().filter(|_| t.is_some());
            let c = &r.cost;
            w.write_record([
                r.device_name.clone(),
                r.tile.to_string(),
                r.tile.bw().to_string(),
                r.tile.bh().to_string(),
                r.scale.to_string(),
                r.out_width.to_string(),
                r.out_height.to_string(),
                if t.is_some() { "host-cpu".into() } else { String::new() },
                plan.map(|p| p.groups.to_string()).unwrap_or_default(),
                plan.map(|p| p.runs_per_group.to_string()).unwrap_or_default(),
                opt(|t| t.grand_mean),
                opt(|t| t.min_run),
                opt(|t| t.max_run),
                opt(|t| t.offset_max),
                opt(|t| t.offset_min),
                t.map(|t| t.group_means.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
                    .unwrap_or_default(),
                r.oracle_match.map(|m| m.to_string()).unwrap_or_default(),
                c.threads_per_block.to_string(),
                c.warps_per_block.to_string(),
                c.segments_per_warp.to_string(),
                c.resident_blocks.to_string(),
                c.total_blocks.to_string(),
                c.rounds.to_string(),
                c.compute_cycles.to_string(),
                c.memory_cycles.to_string(),
                c.hiding_factor.to_string(),
                c.predicted_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(w: u32, h: u32) -> TileDims {
        TileDims::new(w, h).unwrap()
    }

    fn quick_plan() -> MeasurementPlan {
        MeasurementPlan { groups: 2, runs_per_group: 3, warmup_runs: 1, workers: 2 }
    }

    fn gradient(w: usize, h: usize) -> ImageBuffer {
        let s = (0..w * h).map(|i| ((i % w) * 7 + (i / w) * 3) as u8).collect();
        ImageBuffer::new(w, h, 1, s).unwrap()
    }

    #[test]
    fn stats_from_known_groups() {
        let s = TimingStats::from_groups(&[vec![1.0, 3.0], vec![2.0, 6.0]]);
        assert_eq!(s.group_means, vec![2.0, 4.0]);
        assert_eq!(s.grand_mean, 3.0);
        assert_eq!((s.min_run, s.max_run), (1.0, 6.0));
        assert_eq!((s.offset_max, s.offset_min), (3.0, 2.0));

        let single = TimingStats::from_groups(&[vec![0.1]]);
        assert_eq!(single.grand_mean, single.min_run);
        assert_eq!(single.grand_mean, single.max_run);

        let flat = TimingStats::from_groups(&[vec![0.1; 7], vec![0.1; 7]]);
        assert!(flat.min_run <= flat.grand_mean && flat.grand_mean <= flat.max_run);
    }

    #[test]
    fn default_plan_totals_a_thousand() {
        let p = MeasurementPlan::default();
        assert_eq!((p.groups, p.runs_per_group, p.warmup_runs), (10, 100, 3));
        assert_eq!(p.total_runs(), 1000);
    }

    #[test]
    fn measure_single_sample() {
        let img = gradient(9, 7);
        let plan = MeasurementPlan { groups: 1, runs_per_group: 1, warmup_runs: 0, workers: 1 };
        let m = measure(&img, 2.0, t(8, 8), &plan).unwrap();
        assert_eq!(m.stats.group_means.len(), 1);
        assert_eq!(m.stats.grand_mean, m.stats.min_run);
        assert_eq!(m.stats.grand_mean, m.stats.max_run);
        assert_eq!(m.output, resize_scalar(&img, 2.0).unwrap());
        let bad = MeasurementPlan { groups: 0, ..plan };
        assert!(matches!(measure(&img, 2.0, t(8, 8), &bad), Err(BenchError::InvalidPlan)));
    }

    #[test]
    fn model_mode_without_image() {
        let dev = DeviceProfile::gtx260();
        let req = AutotuneRequest {
            device: &dev,
            source: Source::Dims { width: 800, height: 800 },
            scales: vec![6.0],
            candidates: default_candidates(),
            params: CostParams::default(),
            mode: Mode::Model,
            plan: quick_plan(),
        };
        let report = autotune(&req).unwrap();
        assert_eq!(report.rows.len(), 10);
        assert!(report.rows.iter().all(|r| r.timing.is_none()));
        let s = &report.summaries[0];
        assert_eq!(s.best_modeled, Some(t(32, 4)));
        assert!(s.modeled_argmin.contains(&t(32, 4)));
        assert_eq!(s.top1_agreement, None);

        // deterministic across invocations
        let again = autotune(&req).unwrap();
        assert_eq!(again.summaries[0].modeled_argmin, s.modeled_argmin);

        let single = AutotuneRequest { candidates: vec![t(32, 4)], ..req.clone() };
        assert_eq!(autotune(&single).unwrap().summaries[0].best_modeled, Some(t(32, 4)));

        let measured = AutotuneRequest { mode: Mode::Measure, ..req.clone() };
        assert!(matches!(autotune(&measured), Err(BenchError::MissingImage)));
        let empty = AutotuneRequest { candidates: vec![], ..req };
        assert!(matches!(autotune(&empty), Err(BenchError::NoCandidates)));
    }

    #[test]
    fn rejects_are_listed_not_dropped() {
        let dev = DeviceProfile::gtx260();
        let req = AutotuneRequest {
            device: &dev,
            source: Source::Dims { width: 64, height: 64 },
            scales: vec![1.0, 2.0],
            candidates: vec![t(32, 17), t(8, 8)],
            params: CostParams::default(),
            mode: Mode::Model,
            plan: quick_plan(),
        };
        let report = autotune(&req).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rejects.len(), 2);
        assert!(matches!(report.rejects[0].reason, RejectReason::Launch(_)));

        let none = AutotuneRequest { candidates: vec![t(32, 17)], ..req };
        assert!(matches!(autotune(&none), Err(BenchError::NoValidCandidate { .. })));
    }

    #[test]
    fn both_mode_reports_and_writes() {
        let dev = DeviceProfile::gf8800gts();
        let img = gradient(16, 16);
        let req = AutotuneRequest {
            device: &dev,
            source: Source::Image(&img),
            scales: vec![2.0],
            candidates: vec![t(8, 8), t(32, 4), t(4, 32)],
            params: CostParams::default(),
            mode: Mode::Both,
            plan: quick_plan(),
        };
        let report = autotune(&req).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            let s = r.timing.as_ref().unwrap();
            assert_eq!(s.group_means.len(), 2);
            assert!(s.min_run <= s.grand_mean && s.grand_mean <= s.max_run);
            assert!(s.offset_max >= 0.0 && s.offset_min >= 0.0);
            assert_eq!(r.oracle_match, Some(true));
        }
        let summary = &report.summaries[0];
        assert!(summary.best_measured.is_some() && summary.best_modeled.is_some());
        assert!(summary.top1_agreement.is_some());

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 3);
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 3);
        assert_eq!(json["note"], TIMING_NOTE);
    }
}
