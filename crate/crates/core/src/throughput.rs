//! Single-workload throughput model.
//!
//! Throughput sits on one of up to three plateaus chosen by where the file
//! lands in the memory hierarchy, and grows with request size as a power law.
//! Reads only ever see the first two plateaus.
//!
//! The default parameters are synthetic placeholders; real measurements can be
//! supplied through the scenario configuration.

use serde::{Deserialize, Serialize};

use crate::model::{Operation, ServerProfile, WorkloadSpec, KIB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThroughputParams {
    /// MB/s when the file fits in the LLC.
    pub level1_base: f64,
    /// MB/s when the file spills the LLC but fits the file and disk caches.
    pub level2_base: f64,
    /// MB/s for writes that exceed the file and disk caches.
    pub level3_base: f64,
    pub rs_exponent: f64,
    /// Request size in bytes at which the base levels apply.
    pub rs_reference: u64,
}

impl Default for ThroughputParams {
    fn default() -> Self {
        Self {
            level1_base: 900.0,
            level2_base: 320.0,
            level3_base: 60.0,
            rs_exponent: 0.35,
            rs_reference: 64 * KIB,
        }
    }
}

impl ThroughputParams {
    pub fn check(&self) -> Result<(), String> {
        if !(self.level1_base > self.level2_base
            && self.level2_base > self.level3_base
            && self.level3_base > 0.0)
        {
            return Err("throughput levels must satisfy level1 > level2 > level3 > 0".into());
        }
        if !(self.rs_exponent > 0.0 && self.rs_exponent <= 1.0) {
            return Err("rs_exponent must lie in (0, 1]".into());
        }
        if self.rs_reference == 0 {
            return Err("rs_reference must be positive".into());
        }
        Ok(())
    }

    pub fn level_base(&self, level: ThroughputLevel) -> f64 {
        match level {
            ThroughputLevel::CacheFit => self.level1_base,
            ThroughputLevel::BufferFit => self.level2_base,
            ThroughputLevel::DiskBound => self.level3_base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThroughputLevel {
    CacheFit,
    BufferFit,
    DiskBound,
}

pub fn throughput_level(spec: &WorkloadSpec, profile: &ServerProfile) -> ThroughputLevel {
    if spec.file_size <= profile.llc_size {
        ThroughputLevel::CacheFit
    } else if spec.file_size <= profile.buffer_capacity() || spec.operation == Operation::Read {
        ThroughputLevel::BufferFit
    } else {
        ThroughputLevel::DiskBound
    }
}

/// Solo throughput in MB/s.
pub fn single_throughput(spec: &WorkloadSpec, profile: &ServerProfile) -> f64 {
    let params = &profile.throughput;
    let level = throughput_level(spec, profile);
    let scale = (spec.request_size as f64 / params.rs_reference as f64).powf(params.rs_exponent);
    params.level_base(level) * scale
}
