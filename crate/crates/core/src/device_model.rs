//! Device capability profiles, per-SM occupancy and the core-count sensitivity figure.

use std::fmt;
use std::path::Path;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::OccupancyRatio;

/// JSON documents for the two shipped devices.
pub const GTX260_JSON: &str = include_str!("../profiles/gtx260.json");
pub const GF8800GTS_JSON: &str = include_str!("../profiles/gf8800gts.json");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("profile document must be a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` must be a positive integer, got {value}")]
    NonPositiveValue { field: &'static str, value: String },
    #[error("total_sp {total_sp} is not divisible by num_sm {num_sm}")]
    InconsistentTotals { total_sp: u32, num_sm: u32 },
    #[error("reading profile {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDimLimits {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDimLimits {
    pub x: u32,
    pub y: u32,
}

/// Per-SM capability limits of one device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub name: String,
    pub regs_per_sm: u32,
    pub max_warps_per_sm: u32,
    pub max_threads_per_sm: u32,
    pub total_sp: u32,
    pub num_sm: u32,
    pub warp_size: u32,
    pub max_threads_per_block: u32,
    pub max_block_dim: BlockDimLimits,
    pub max_grid_dim: GridDimLimits,
    pub max_blocks_per_sm: u32,
    pub global_memory_bytes: u64,
}

impl DeviceProfile {
    pub fn gtx260() -> Self {
        Self::from_json_str(GTX260_JSON).expect("shipped gtx260 profile is valid")
    }

    pub fn gf8800gts() -> Self {
        Self::from_json_str(GF8800GTS_JSON).expect("shipped gf8800gts profile is valid")
    }

    /// Looks up a shipped profile by short name (`gtx260`, `gf8800gts`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "gtx260" => Some(Self::gtx260()),
            "gf8800gts" => Some(Self::gf8800gts()),
            _ => None,
        }
    }

    pub fn cores_per_sm(&self) -> u32 {
        self.total_sp / self.num_sm
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ProfileError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json(&value)
    }

    /// Builds a validated profile from a flat key/value document.
    pub fn from_json(doc: &Value) -> Result<Self, ProfileError> {
        let map = doc.as_object().ok_or(ProfileError::NotAnObject)?;
        let name = match map.get("name") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => return Err(ProfileError::MissingField("name")),
        };
        let block = positive_array(map, "max_block_dim", 3)?;
        let grid = positive_array(map, "max_grid_dim", 2)?;
        let profile = DeviceProfile {
            name,
            regs_per_sm: positive_u32(map, "regs_per_sm")?,
            max_warps_per_sm: positive_u32(map, "max_warps_per_sm")?,
            max_threads_per_sm: positive_u32(map, "max_threads_per_sm")?,
            total_sp: positive_u32(map, "total_sp")?,
            num_sm: positive_u32(map, "num_sm")?,
            warp_size: positive_u32(map, "warp_size")?,
            max_threads_per_block: positive_u32(map, "max_threads_per_block")?,
            max_block_dim: BlockDimLimits {
                x: block[0],
                y: block[1],
                z: block[2],
            },
            max_grid_dim: GridDimLimits {
                x: grid[0],
                y: grid[1],
            },
            max_blocks_per_sm: positive_u32(map, "max_blocks_per_sm")?,
            global_memory_bytes: positive_u64(map, "global_memory_bytes")?,
        };
        profile.validate()?;
        if map.contains_key("cores_per_sm")
            && positive_u32(map, "cores_per_sm")? != profile.cores_per_sm()
        {
            return Err(ProfileError::InconsistentTotals {
                total_sp: profile.total_sp,
                num_sm: profile.num_sm,
            });
        }
        Ok(profile)
    }

    /// Checks the invariants a hand-built profile must satisfy.
    pub fn validate(&self) -> Result<(), ProfileError> {
        let counts: [(&'static str, u64); 14] = [
            ("regs_per_sm", self.regs_per_sm.into()),
            ("max_warps_per_sm", self.max_warps_per_sm.into()),
            ("max_threads_per_sm", self.max_threads_per_sm.into()),
            ("total_sp", self.total_sp.into()),
            ("num_sm", self.num_sm.into()),
            ("warp_size", self.warp_size.into()),
            ("max_threads_per_block", self.max_threads_per_block.into()),
            ("max_block_dim", self.max_block_dim.x.into()),
            ("max_block_dim", self.max_block_dim.y.into()),
            ("max_block_dim", self.max_block_dim.z.into()),
            ("max_grid_dim", self.max_grid_dim.x.into()),
            ("max_grid_dim", self.max_grid_dim.y.into()),
            ("max_blocks_per_sm", self.max_blocks_per_sm.into()),
            ("global_memory_bytes", self.global_memory_bytes),
        ];
        if let Some((field, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ProfileError::NonPositiveValue {
                field,
                value: "0".into(),
            });
        }
        if !self.total_sp.is_multiple_of(self.num_sm) {
            return Err(ProfileError::InconsistentTotals {
                total_sp: self.total_sp,
                num_sm: self.num_sm,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "name": self.name,
            "regs_per_sm": self.regs_per_sm,
            "max_warps_per_sm": self.max_warps_per_sm,
            "max_threads_per_sm": self.max_threads_per_sm,
            "total_sp": self.total_sp,
            "num_sm": self.num_sm,
            "warp_size": self.warp_size,
            "max_threads_per_block": self.max_threads_per_block,
            "max_block_dim": [self.max_block_dim.x, self.max_block_dim.y, self.max_block_dim.z],
            "max_grid_dim": [self.max_grid_dim.x, self.max_grid_dim.y],
            "max_blocks_per_sm": self.max_blocks_per_sm,
            "global_memory_bytes": self.global_memory_bytes,
        })
    }
}

fn positive_u64_value(field: &'static str, v: &Value) -> Result<u64, ProfileError> {
    match v.as_u64() {
        Some(n) if n > 0 => Ok(n),
        _ => Err(ProfileError::NonPositiveValue {
            field,
            value: v.to_string(),
        }),
    }
}

fn positive_u64(map: &Map<String, Value>, field: &'static str) -> Result<u64, ProfileError> {
    let v = map.get(field).ok_or(ProfileError::MissingField(field))?;
    positive_u64_value(field, v)
}

fn positive_u32(map: &Map<String, Value>, field: &'static str) -> Result<u32, ProfileError> {
    let n = positive_u64(map, field)?;
    u32::try_from(n).map_err(|_| ProfileError::NonPositiveValue {
        field,
        value: n.to_string(),
    })
}

fn positive_array(
    map: &Map<String, Value>,
    field: &'static str,
    len: usize,
) -> Result<Vec<u32>, ProfileError> {
    let v = map.get(field).ok_or(ProfileError::MissingField(field))?;
    let items = v
        .as_array()
        .filter(|a| a.len() == len)
        .ok_or_else(|| ProfileError::NonPositiveValue {
            field,
            value: v.to_string(),
        })?;
    items
        .iter()
        .map(|item| {
            let n = positive_u64_value(field, item)?;
            u32::try_from(n).map_err(|_| ProfileError::NonPositiveValue {
                field,
                value: n.to_string(),
            })
        })
        .collect()
}

/// Per-thread register use and block size of one kernel launch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelResources {
    pub regs_per_thread: u32,
    pub threads_per_block: u32,
}

impl KernelResources {
    pub fn new(regs_per_thread: u32, threads_per_block: u32) -> Self {
        Self {
            regs_per_thread,
            threads_per_block,
        }
    }
}

/// The per-SM limit that binds the residency minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LimitingFactor {
    BlockSizeInvalid,
    ThreadsPerSM,
    WarpsPerSM,
    RegistersPerSM,
    BlocksPerSM,
}

impl fmt::Display for LimitingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LimitingFactor::BlockSizeInvalid => "BlockSizeInvalid",
            LimitingFactor::ThreadsPerSM => "ThreadsPerSM",
            LimitingFactor::WarpsPerSM => "WarpsPerSM",
            LimitingFactor::RegistersPerSM => "RegistersPerSM",
            LimitingFactor::BlocksPerSM => "BlocksPerSM",
        };
        f.write_str(s)
    }
}

/// Each per-SM bound on resident blocks, evaluated on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidencyLimits {
    pub by_blocks: u32,
    pub by_threads: u32,
    pub by_warps: u32,
    pub by_registers: u32,
}

impl ResidencyLimits {
    /// Minimum with the fixed tie-break order blocks, threads, warps, registers.
    pub fn binding(&self) -> (u32, LimitingFactor) {
        [
            (self.by_blocks, LimitingFactor::BlocksPerSM),
            (self.by_threads, LimitingFactor::ThreadsPerSM),
            (self.by_warps, LimitingFactor::WarpsPerSM),
            (self.by_registers, LimitingFactor::RegistersPerSM),
        ]
        .into_iter()
        .fold((u32::MAX, LimitingFactor::BlocksPerSM), |best, cand| {
            if cand.0 < best.0 {
                cand
            } else {
                best
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyReport {
    pub threads_per_block: u32,
    pub warps_per_block: u32,
    pub resident_blocks: u32,
    pub active_warps: u32,
    pub active_threads: u32,
    pub occupancy_ratio: OccupancyRatio,
    pub limiting_factor: LimitingFactor,
    pub limits: ResidencyLimits,
}

impl OccupancyReport {
    pub fn occupancy_f64(&self) -> f64 {
        *self.occupancy_ratio.numer() as f64 / *self.occupancy_ratio.denom() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OccupancyError {
    #[error("kernel resources must be positive (regs_per_thread={regs_per_thread}, threads_per_block={threads_per_block})")]
    InvalidResources {
        regs_per_thread: u32,
        threads_per_block: u32,
    },
    #[error("block of {threads} threads exceeds the device limit of {limit}")]
    BlockTooLarge { threads: u32, limit: u32 },
    #[error("no block of {threads} threads fits on one SM (bound by {limiting_factor})")]
    ZeroResidency {
        threads: u32,
        limiting_factor: LimitingFactor,
    },
}

impl OccupancyError {
    pub fn limiting_factor(&self) -> LimitingFactor {
        match self {
            OccupancyError::InvalidResources { .. } | OccupancyError::BlockTooLarge { .. } => {
                LimitingFactor::BlockSizeInvalid
            }
            OccupancyError::ZeroResidency {
                limiting_factor, ..
            } => *limiting_factor,
        }
    }
}

/// Per-candidate residency limits for a block of `threads_per_block` threads.
pub fn residency_limits(dev: &DeviceProfile, k: &KernelResources) -> ResidencyLimits {
    let t = k.threads_per_block;
    let warps_per_block = t.div_ceil(dev.warp_size);
    let regs_per_block = u64::from(k.regs_per_thread) * u64::from(t);
    ResidencyLimits {
        by_blocks: dev.max_blocks_per_sm,
        by_threads: dev.max_threads_per_sm / t,
        by_warps: dev.max_warps_per_sm / warps_per_block,
        by_registers: (u64::from(dev.regs_per_sm) / regs_per_block) as u32,
    }
}

/// How many blocks of the kernel fit on one SM, and what limits that number.
pub fn occupancy(dev: &DeviceProfile, k: &KernelResources) -> Result<OccupancyReport, OccupancyError> {
    let t = k.threads_per_block;
    if t == 0 || k.regs_per_thread == 0 {
        return Err(OccupancyError::InvalidResources {
            regs_per_thread: k.regs_per_thread,
            threads_per_block: t,
        });
    }
    if t > dev.max_threads_per_block {
        return Err(OccupancyError::BlockTooLarge {
            threads: t,
            limit: dev.max_threads_per_block,
        });
    }
    let limits = residency_limits(dev, k);
    let (resident_blocks, limiting_factor) = limits.binding();
    if resident_blocks == 0 {
        return Err(OccupancyError::ZeroResidency {
            threads: t,
            limiting_factor,
        });
    }
    let warps_per_block = t.div_ceil(dev.warp_size);
    let active_warps = resident_blocks * warps_per_block;
    Ok(OccupancyReport {
        threads_per_block: t,
        warps_per_block,
        resident_blocks,
        active_warps,
        active_threads: resident_blocks * t,
        occupancy_ratio: OccupancyRatio::new(active_warps, dev.max_warps_per_sm),
        limiting_factor,
        limits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SensitivityError {
    #[error("per-SM loss must lie in [0, 1]")]
    LossOutOfRange,
    #[error("SM count must be at least 1")]
    NoSms,
}

/// Total efficiency loss when each SM loses `loss_per_sm`, spread over `num_sm` SMs.
///
/// Generic so that exact rationals (`Ratio<i64>`) reproduce 1/4 and 1/40 exactly.
pub fn sensitivity<T>(loss_per_sm: T, num_sm: u32) -> Result<T, SensitivityError>
where
    T: Num + FromPrimitive + PartialOrd + Copy,
{
    if num_sm == 0 {
        return Err(SensitivityError::NoSms);
    }
    if !(loss_per_sm >= T::zero() && loss_per_sm <= T::one()) {
        return Err(SensitivityError::LossOutOfRange);
    }
    let n = T::from_u32(num_sm).ok_or(SensitivityError::NoSms)?;
    Ok(loss_per_sm / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn k(regs: u32, t: u32) -> KernelResources {
        KernelResources::new(regs, t)
    }

    #[test]
    fn shipped_profiles_match_table() {
        let g = DeviceProfile::gtx260();
        assert_eq!(
            (g.regs_per_sm, g.max_warps_per_sm, g.max_threads_per_sm, g.total_sp, g.num_sm),
            (16384, 32, 1024, 192, 24)
        );
        assert_eq!(g.global_memory_bytes, 1 << 30);
        assert_eq!(g.cores_per_sm(), 8);
        let f = DeviceProfile::gf8800gts();
        assert_eq!(
            (f.regs_per_sm, f.max_warps_per_sm, f.max_threads_per_sm, f.total_sp, f.num_sm),
            (8192, 24, 768, 96, 12)
        );
        assert_eq!(f.global_memory_bytes, 320 << 20);
        assert_eq!(f.cores_per_sm(), 8);
        for p in [&g, &f] {
            assert_eq!(p.warp_size, 32);
            assert_eq!(p.max_block_dim, BlockDimLimits { x: 512, y: 512, z: 62 });
            assert_eq!(p.max_blocks_per_sm, 8);
        }
    }

    #[test]
    fn load_errors() {
        let mut doc = DeviceProfile::gtx260().to_json();
        doc["num_sm"] = 0.into();
        assert!(matches!(
            DeviceProfile::from_json(&doc),
            Err(ProfileError::NonPositiveValue { field: "num_sm", .. })
        ));

        let mut doc = DeviceProfile::gtx260().to_json();
        doc.as_object_mut().unwrap().remove("regs_per_sm");
        assert!(matches!(
            DeviceProfile::from_json(&doc),
            Err(ProfileError::MissingField("regs_per_sm"))
        ));

        let mut doc = DeviceProfile::gtx260().to_json();
        doc["total_sp"] = 190.into();
        assert!(matches!(
            DeviceProfile::from_json(&doc),
            Err(ProfileError::InconsistentTotals { total_sp: 190, num_sm: 24 })
        ));

        let mut doc = DeviceProfile::gtx260().to_json();
        doc["warp_size"] = (-32).into();
        assert!(matches!(
            DeviceProfile::from_json(&doc),
            Err(ProfileError::NonPositiveValue { .. })
        ));

        let mut doc = DeviceProfile::gtx260().to_json();
        doc["max_block_dim"] = serde_json::json!([512, 512]);
        assert!(DeviceProfile::from_json(&doc).is_err());

        let mut doc = DeviceProfile::gtx260().to_json();
        doc["cores_per_sm"] = 16.into();
        assert!(matches!(
            DeviceProfile::from_json(&doc),
            Err(ProfileError::InconsistentTotals { .. })
        ));
    }

    #[test]
    fn json_roundtrip() {
        let g = DeviceProfile::gtx260();
        assert_eq!(DeviceProfile::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn occupancy_examples() {
        let g = DeviceProfile::gtx260();
        let f = DeviceProfile::gf8800gts();

        let r = occupancy(&g, &k(10, 512)).unwrap();
        assert_eq!((r.resident_blocks, r.active_warps), (2, 32));
        assert_eq!(r.occupancy_ratio, Ratio::from_integer(1));
        assert_eq!(r.active_threads, 1024);

        let r = occupancy(&f, &k(10, 512)).unwrap();
        assert_eq!((r.resident_blocks, r.active_warps), (1, 16));
        assert_eq!(r.occupancy_ratio, Ratio::new(16, 24));
        assert_eq!(r.limiting_factor, LimitingFactor::ThreadsPerSM);

        let r = occupancy(&f, &k(10, 128)).unwrap();
        assert_eq!(
            r.limits,
            ResidencyLimits { by_blocks: 8, by_threads: 6, by_warps: 6, by_registers: 6 }
        );
        assert_eq!((r.resident_blocks, r.active_warps), (6, 24));
        assert_eq!(r.occupancy_ratio, Ratio::from_integer(1));

        let e = occupancy(&g, &k(33, 512)).unwrap_err();
        assert_eq!(
            e,
            OccupancyError::ZeroResidency { threads: 512, limiting_factor: LimitingFactor::RegistersPerSM }
        );
    }

    #[test]
    fn occupancy_rejects_oversized_block() {
        let e = occupancy(&DeviceProfile::gtx260(), &k(10, 544)).unwrap_err();
        assert_eq!(e, OccupancyError::BlockTooLarge { threads: 544, limit: 512 });
        assert_eq!(e.limiting_factor(), LimitingFactor::BlockSizeInvalid);
        assert!(occupancy(&DeviceProfile::gtx260(), &k(10, 0)).is_err());
    }

    #[test]
    fn tie_break_prefers_block_cap() {
        // 64 threads on gtx260: by_blocks = 8, by_threads = 16, by_warps = 16
        let r = occupancy(&DeviceProfile::gtx260(), &k(10, 64)).unwrap();
        assert_eq!(r.limiting_factor, LimitingFactor::BlocksPerSM);
        assert_eq!(r.resident_blocks, 8);
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(sensitivity(0.5_f64, 2).unwrap(), 0.25);
        assert_eq!(sensitivity(0.5_f64, 20).unwrap(), 0.025);
        assert_eq!(sensitivity(0.0_f64, 7).unwrap(), 0.0);
        let half = Ratio::new(1_i64, 2);
        assert_eq!(sensitivity(half, 2).unwrap(), Ratio::new(1, 4));
        assert_eq!(sensitivity(half, 20).unwrap(), Ratio::new(1, 40));
        assert_eq!(sensitivity(1.5_f64, 2), Err(SensitivityError::LossOutOfRange));
        assert_eq!(sensitivity(f64::NAN, 2), Err(SensitivityError::LossOutOfRange));
        assert_eq!(sensitivity(0.5_f64, 0), Err(SensitivityError::NoSms));
    }

    fn arb_device() -> impl Strategy<Value = DeviceProfile> {
        (prop_oneof![Just(DeviceProfile::gtx260()), Just(DeviceProfile::gf8800gts())], 1u32..16)
            .prop_map(|(mut d, blocks)| {
                d.max_blocks_per_sm = blocks;
                d
            })
    }

    proptest! {
        #[test]
        fn occupancy_invariants(dev in arb_device(), t in 1u32..=512, regs in 1u32..64) {
            match occupancy(&dev, &k(regs, t)) {
                Ok(r) => {
                    prop_assert!(r.occupancy_ratio <= Ratio::from_integer(1));
                    prop_assert_eq!(r.active_threads, r.resident_blocks * t);
                    prop_assert!(r.active_warps <= dev.max_warps_per_sm);
                    prop_assert_eq!(
                        r.occupancy_ratio == Ratio::from_integer(1),
                        r.active_warps == dev.max_warps_per_sm
                    );
                    let l = r.limits;
                    for bound in [l.by_blocks, l.by_threads, l.by_warps, l.by_registers] {
                        prop_assert!(bound >= r.resident_blocks);
                    }
                    prop_assert!(r.resident_blocks <= dev.max_threads_per_sm / t);
                }
                Err(OccupancyError::ZeroResidency { .. }) => {
                    prop_assert_eq!(residency_limits(&dev, &k(regs, t)).binding().0, 0);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn more_registers_never_more_blocks(dev in arb_device(), t in 1u32..=512, regs in 1u32..63) {
            let a = residency_limits(&dev, &k(regs, t)).binding().0;
            let b = residency_limits(&dev, &k(regs + 1, t)).binding().0;
            prop_assert!(b <= a);
        }

        #[test]
        fn sensitivity_monotone_and_linear(loss in 0.01f64..=1.0, n in 1u32..1000) {
            let here = sensitivity(loss, n).unwrap();
            prop_assert!(sensitivity(loss, n + 1).unwrap() < here);
            let half = sensitivity(loss / 2.0, n).unwrap();
            prop_assert!((here - 2.0 * half).abs() <= 1e-15);
        }
    }
}
