//! Block-level tiling of the output image and the parallel tiled executor.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::DeviceProfile;
use crate::image::ImageBuffer;
use crate::interp::{self, InterpError};
use crate::scalar::Real;

/// Block dimensions in threads: `bw` along x (columns), `bh` along y (rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileDims {
    bw: u32,
    bh: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TileParseError {
    #[error("tile dimensions must be positive, got {0}x{1}")]
    Zero(u32, u32),
    #[error("expected a tile of the form WxH, got `{0}`")]
    Syntax(String),
}

impl TileDims {
    pub fn new(bw: u32, bh: u32) -> Result<Self, TileParseError> {
        if bw == 0 || bh == 0 {
            return Err(TileParseError::Zero(bw, bh));
        }
        Ok(Self { bw, bh })
    }

    pub fn bw(&self) -> u32 {
        self.bw
    }

    pub fn bh(&self) -> u32 {
        self.bh
    }

    pub fn threads(&self) -> u32 {
        self.bw * self.bh
    }
}

impl fmt::Display for TileDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.bw, self.bh)
    }
}

impl FromStr for TileDims {
    type Err = TileParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || TileParseError::Syntax(s.to_string());
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(syntax)?;
        let w: u32 = w.parse().map_err(|_| syntax())?;
        let h: u32 = h.parse().map_err(|_| syntax())?;
        TileDims::new(w, h)
    }
}

/// The grid of blocks that covers an output image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LaunchConfig {
    pub tile: TileDims,
    pub grid_x: usize,
    pub grid_y: usize,
    pub out_width: usize,
    pub out_height: usize,
}

impl LaunchConfig {
    pub fn total_blocks(&self) -> usize {
        self.grid_x * self.grid_y
    }
}

/// Ceiling-division grid covering `out_width x out_height`.
pub fn grid_for_image(tile: TileDims, out_width: usize, out_height: usize) -> LaunchConfig {
    LaunchConfig {
        tile,
        grid_x: out_width.div_ceil(tile.bw as usize),
        grid_y: out_height.div_ceil(tile.bh as usize),
        out_width,
        out_height,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("thread ({t_x}, {t_y}) lies outside a {tile} block")]
pub struct ThreadIdOutOfBlock {
    pub t_x: u32,
    pub t_y: u32,
    pub tile: TileDims,
}

/// Output pixel computed by thread `(t_x, t_y)` of block `(b_x, b_y)`.
pub fn map_thread_to_pixel(
    b_x: usize,
    b_y: usize,
    t_x: u32,
    t_y: u32,
    tile: TileDims,
) -> Result<(usize, usize), ThreadIdOutOfBlock> {
    if t_x >= tile.bw || t_y >= tile.bh {
        return Err(ThreadIdOutOfBlock { t_x, t_y, tile });
    }
    Ok((
        b_x * tile.bw as usize + t_x as usize,
        b_y * tile.bh as usize + t_y as usize,
    ))
}

/// Inverse of [`map_thread_to_pixel`]: `((b_x, b_y), (t_x, t_y))` for a pixel.
pub fn pixel_to_thread(p_x: usize, p_y: usize, tile: TileDims) -> ((usize, usize), (u32, u32)) {
    let (bw, bh) = (tile.bw as usize, tile.bh as usize);
    ((p_x / bw, p_y / bh), ((p_x % bw) as u32, (p_y % bh) as u32))
}

/// Thread slots whose pixel falls outside the output image.
pub fn count_inactive_threads(cfg: &LaunchConfig) -> usize {
    cfg.grid_x * cfg.grid_y * cfg.tile.threads() as usize - cfg.out_width * cfg.out_height
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// One launch limit a configuration breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
pub enum LaunchViolation {
    #[error("block dimension {axis:?} = {value} exceeds {limit}")]
    BlockDimExceeded { axis: Axis, value: u64, limit: u32 },
    #[error("block has {threads} threads, more than the limit of {limit}")]
    BlockThreadsExceeded { threads: u32, limit: u32 },
    #[error("grid dimension {axis:?} = {value} exceeds {limit}")]
    GridDimExceeded { axis: Axis, value: u64, limit: u32 },
}

/// Every device limit `cfg` violates; empty when the launch is valid.
pub fn validate_launch(dev: &DeviceProfile, cfg: &LaunchConfig) -> Vec<LaunchViolation> {
    let mut violations = validate_tile(dev, cfg.tile);
    for (axis, value, limit) in [
        (Axis::X, cfg.grid_x, dev.max_grid_dim.x),
        (Axis::Y, cfg.grid_y, dev.max_grid_dim.y),
    ] {
        if value as u64 > u64::from(limit) {
            violations.push(LaunchViolation::GridDimExceeded {
                axis,
                value: value as u64,
                limit,
            });
        }
    }
    violations
}

/// Block-shape checks only (dimension limits and threads per block).
pub fn validate_tile(dev: &DeviceProfile, tile: TileDims) -> Vec<LaunchViolation> {
    let mut violations = Vec::new();
    for (axis, value, limit) in [
        (Axis::X, tile.bw, dev.max_block_dim.x),
        (Axis::Y, tile.bh, dev.max_block_dim.y),
    ] {
        if value > limit {
            violations.push(LaunchViolation::BlockDimExceeded {
                axis,
                value: value.into(),
                limit,
            });
        }
    }
    if tile.threads() > dev.max_threads_per_block {
        violations.push(LaunchViolation::BlockThreadsExceeded {
            threads: tile.threads(),
            limit: dev.max_threads_per_block,
        });
    }
    violations
}

/// Visits the in-bounds slots of block `(b_x, b_y)` in row-major thread order
/// (`t_y` outer, `t_x` inner), passing the thread id and its pixel.
pub fn visit_block(
    cfg: &LaunchConfig,
    b_x: usize,
    b_y: usize,
    mut f: impl FnMut((u32, u32), (usize, usize)),
) {
    let tile = cfg.tile;
    for t_y in 0..tile.bh {
        let p_y = b_y * tile.bh as usize + t_y as usize;
        if p_y >= cfg.out_height {
            break;
        }
        for t_x in 0..tile.bw {
            let p_x = b_x * tile.bw as usize + t_x as usize;
            if p_x >= cfg.out_width {
                break;
            }
            f((t_x, t_y), (p_x, p_y));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TilingError {
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("tile is invalid for the device: {}", join_violations(.0))]
    InvalidTile(Vec<LaunchViolation>),
    #[error("worker count must be at least 1")]
    NoWorkers,
}

fn join_violations(v: &[LaunchViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Host parallelism, falling back to 1.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Tiled resize: every thread slot of every block computes one output pixel.
///
/// Blocks are handed to `workers` threads through a shared counter; each block
/// produces a disjoint region that is stitched into the output afterwards, so
/// the result never depends on scheduling and equals [`interp::resize_scalar`].
pub fn resize_tiled<T: Real>(
    src: &ImageBuffer,
    scale: T,
    tile: TileDims,
    workers: usize,
) -> Result<ImageBuffer, TilingError> {
    if workers == 0 {
        return Err(TilingError::NoWorkers);
    }
    let (out_w, out_h) = interp::output_dims(src.width(), src.height(), scale)?;
    let cfg = grid_for_image(tile, out_w, out_h);
    let ch = src.channels();
    let total = cfg.total_blocks();
    let next = AtomicUsize::new(0);

    let run_worker = || {
        let mut done: Vec<(usize, Vec<u8>)> = Vec::new();
        loop {
            let idx = next.fetch_add(1, Ordering::Relaxed);
            if idx >= total {
                break;
            }
            let (b_x, b_y) = (idx % cfg.grid_x, idx / cfg.grid_x);
            let mut region = Vec::with_capacity(tile.threads() as usize * ch);
            let mut px = [0u8; 3];
            visit_block(&cfg, b_x, b_y, |_, (x, y)| {
                interp::interpolate_into(src, x, y, scale, &mut px[..ch]);
                region.extend_from_slice(&px[..ch]);
            });
            done.push((idx, region));
        }
        done
    };

    let threads = workers.min(total.max(1));
    let finished: Vec<Vec<(usize, Vec<u8>)>> = if threads == 1 {
        vec![run_worker()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(run_worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tile worker panicked"))
                .collect()
        })
    };

    let mut samples = vec![0u8; out_w * out_h * ch];
    let (bw, bh) = (tile.bw as usize, tile.bh as usize);
    for (idx, region) in finished.into_iter().flatten() {
        let (b_x, b_y) = (idx % cfg.grid_x, idx / cfg.grid_x);
        let (x0, y0) = (b_x * bw, b_y * bh);
        let row_len = (x0 + bw).min(out_w) - x0;
        for (r, row) in region.chunks_exact(row_len * ch).enumerate() {
            let at = ((y0 + r) * out_w + x0) * ch;
            samples[at..at + row.len()].copy_from_slice(row);
        }
    }
    Ok(ImageBuffer::new(out_w, out_h, ch, samples).expect("output dimensions are consistent"))
}

/// [`resize_tiled`] after checking the tile and grid against `dev`.
pub fn resize_tiled_on<T: Real>(
    dev: &DeviceProfile,
    src: &ImageBuffer,
    scale: T,
    tile: TileDims,
    workers: usize,
) -> Result<ImageBuffer, TilingError> {
    let (out_w, out_h) = interp::output_dims(src.width(), src.height(), scale)?;
    let violations = validate_launch(dev, &grid_for_image(tile, out_w, out_h));
    if !violations.is_empty() {
        return Err(TilingError::InvalidTile(violations));
    }
    resize_tiled(src, scale, tile, workers)
}
