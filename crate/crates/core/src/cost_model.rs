//! Analytic relative-time model for a (device, tile, output size) triple.
//!
//! The model combines three effects: residency per SM (how many blocks run at
//! once), row segments per warp (each extra image row a warp touches costs one
//! more memory transaction), and latency hiding by resident warps. Units are
//! abstract cycles; only ratios and orderings carry meaning.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::{occupancy, DeviceProfile, KernelResources, OccupancyError};
use crate::scalar::Real;
use crate::tiling::{grid_for_image, validate_launch, LaunchViolation, TileDims};

/// Model constants. Every field is optional in a params document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>", serialize = "T: Real + Serialize"))]
pub struct CostParams<T = f64> {
    /// Cycles per warp-instruction issue.
    pub c_issue: T,
    /// Cycles of per-thread access bookkeeping.
    pub c_access: T,
    /// Cycles per memory transaction (one per row segment).
    pub c_trans: T,
    pub regs_per_thread: u32,
    /// Resident warps needed to fully hide memory latency.
    pub w_hide: T,
    /// Fixed cycles per resident block per round; 0 disables it.
    pub c_block: T,
}

impl<T: Real> Default for CostParams<T> {
    fn default() -> Self {
        Self {
            c_issue: T::one(),
            c_access: T::one(),
            c_trans: T::from_f64_lossy(32.0),
            regs_per_thread: 10,
            w_hide: T::from_f64_lossy(24.0),
            c_block: T::zero(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("cost params document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading cost params {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cost parameter `{0}` must be strictly positive")]
    NonPositive(&'static str),
}

impl<T: Real + for<'de> Deserialize<'de>> CostParams<T> {
    pub fn from_json_str(text: &str) -> Result<Self, ParamsError> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }
}

impl<T: Real> CostParams<T> {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let positive = [
            ("c_issue", self.c_issue),
            ("c_access", self.c_access),
            ("c_trans", self.c_trans),
            ("w_hide", self.w_hide),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(ParamsError::NonPositive(name));
            }
        }
        if self.regs_per_thread == 0 {
            return Err(ParamsError::NonPositive("regs_per_thread"));
        }
        if !(self.c_block >= T::zero() && self.c_block.is_finite()) {
            return Err(ParamsError::NonPositive("c_block"));
        }
        Ok(())
    }
}

/// Every intermediate of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown<T = f64> {
    pub threads_per_block: u32,
    pub warps_per_block: u32,
    pub segments_per_warp: u32,
    pub resident_blocks: u32,
    pub total_blocks: u64,
    pub rounds: u64,
    pub compute_cycles: T,
    pub memory_cycles: T,
    pub hiding_factor: T,
    pub predicted_time: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("tile {tile} is invalid for the device: {violations:?}")]
    InvalidTile {
        tile: TileDims,
        violations: Vec<LaunchViolation>,
    },
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error("no valid candidate tile ({} rejected)", rejected.len())]
    NoValidCandidate { rejected: Vec<(TileDims, CostError)> },
    #[error("spread needs at least two valid candidates, got {0}")]
    TooFewCandidates(usize),
}

/// Row segments a warp touches: one per image row it spans.
pub fn segments_per_warp(tile: TileDims, warp_size: u32) -> u32 {
    warp_size.div_ceil(tile.bw().min(warp_size))
}

pub fn predict<T: Real>(
    dev: &DeviceProfile,
    tile: TileDims,
    out_width: usize,
    out_height: usize,
    p: &CostParams<T>,
) -> Result<CostBreakdown<T>, CostError> {
    let cfg = grid_for_image(tile, out_width, out_height);
    let violations = validate_launch(dev, &cfg);
    if !violations.is_empty() {
        return Err(CostError::InvalidTile { tile, violations });
    }
    let threads = tile.threads();
    let warps_per_block = threads.div_ceil(dev.warp_size);
    let seg = segments_per_warp(tile, dev.warp_size);
    let resident = occupancy(dev, &KernelResources::new(p.regs_per_thread, threads))?.resident_blocks;

    let total_blocks = cfg.total_blocks() as u64;
    let concurrent = u64::from(dev.num_sm) * u64::from(resident);
    let rounds = total_blocks.div_ceil(concurrent);

    let t = |v: u64| T::from_u64(v).expect("count fits the scalar type");
    let resident_warps = u64::from(resident) * u64::from(warps_per_block);
    let issue_slots = (resident_warps * u64::from(dev.warp_size)).div_ceil(u64::from(dev.cores_per_sm()));
    let compute_cycles = t(issue_slots) * p.c_issue + t(resident.into()) * p.c_block;

    let hiding_factor = (t(resident_warps) / p.w_hide).min(T::one());
    let per_block = t(u64::from(warps_per_block) * u64::from(seg)) * p.c_trans + t(threads.into()) * p.c_access;
    let memory_cycles = t(resident.into()) * per_block / hiding_factor;

    Ok(CostBreakdown {
        threads_per_block: threads,
        warps_per_block,
        segments_per_warp: seg,
        resident_blocks: resident,
        total_blocks,
        rounds,
        compute_cycles,
        memory_cycles,
        hiding_factor,
        predicted_time: t(rounds) * (compute_cycles + memory_cycles),
    })
}

/// Candidates ordered best first, plus the ones the device rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking<T = f64> {
    pub ranked: Vec<(TileDims, CostBreakdown<T>)>,
    pub rejected: Vec<(TileDims, CostError)>,
}

impl<T: Real> Ranking<T> {
    pub fn best(&self) -> TileDims {
        self.ranked[0].0
    }

    /// All tiles sharing the minimum predicted time, in rank order.
    pub fn argmin(&self) -> Vec<TileDims> {
        let best = self.ranked[0].1.predicted_time;
        self.ranked
            .iter()
            .take_while(|(_, b)| b.predicted_time == best)
            .map(|(tile, _)| *tile)
            .collect()
    }
}

/// Ascending predicted time; ties go to wider, then shorter, tiles.
pub fn rank_order<T: Real>(a: &(TileDims, CostBreakdown<T>), b: &(TileDims, CostBreakdown<T>)) -> Ordering {
    a.1.predicted_time
        .partial_cmp(&b.1.predicted_time)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.0.bw().cmp(&a.0.bw()))
        .then_with(|| a.0.bh().cmp(&b.0.bh()))
}

pub fn rank_tilings<T: Real>(
    dev: &DeviceProfile,
    candidates: &[TileDims],
    out_width: usize,
    out_height: usize,
    p: &CostParams<T>,
) -> Result<Ranking<T>, CostError> {
    let mut ranked = Vec::new();
    let mut rejected = Vec::new();
    for &tile in candidates {
        match predict(dev, tile, out_width, out_height, p) {
            Ok(b) => ranked.push((tile, b)),
            Err(e) => rejected.push((tile, e)),
        }
    }
    if ranked.is_empty() {
        return Err(CostError::NoValidCandidate { rejected });
    }
    ranked.sort_by(rank_order);
    Ok(Ranking { ranked, rejected })
}

/// Ratio of worst to best predicted time over the valid candidates.
pub fn spread<T: Real>(
    dev: &DeviceProfile,
    candidates: &[TileDims],
    out_width: usize,
    out_height: usize,
    p: &CostParams<T>,
) -> Result<T, CostError> {
    let ranking = rank_tilings(dev, candidates, out_width, out_height, p)?;
    if ranking.ranked.len() < 2 {
        return Err(CostError::TooFewCandidates(ranking.ranked.len()));
    }
    let min = ranking.ranked.first().unwrap().1.predicted_time;
    let max = ranking.ranked.last().unwrap().1.predicted_time;
    Ok(max / min)
}
