//! Last-level cache competition arithmetic.
//!
//! Every co-running workload competes for the LLC with its request buffer; a
//! workload whose file also fits in the cache competes with the file too. When
//! the combined competing data reaches the cache size, throughput drops sharply
//! (the throughput degradation point, TDP).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ServerProfile, WorkloadId, WorkloadSpec};

/// Workloads whose files fit in the LLC, and the total competing bytes of a group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompetingSet {
    pub members: Vec<WorkloadId>,
    pub total_competing_bytes: u64,
}

pub fn competing_set(workloads: &[WorkloadSpec], profile: &ServerProfile) -> CompetingSet {
    CompetingSet {
        members: workloads
            .iter()
            .filter(|w| w.file_size <= profile.llc_size)
            .map(|w| w.id.clone())
            .collect(),
        total_competing_bytes: competing_data(workloads, profile),
    }
}

pub fn competing_data(workloads: &[WorkloadSpec], profile: &ServerProfile) -> u64 {
    workloads
        .iter()
        .map(|w| w.competing_bytes(profile.llc_size))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TdpRule {
    /// Every workload's file counts, regardless of whether it fits the cache.
    AllFiles,
    /// Only files that fit the cache count.
    #[default]
    CompetingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TdpPrediction {
    pub reached: bool,
    /// Cache size minus competing data; negative once the point is passed.
    pub margin_bytes: i64,
}

pub fn predict_tdp(workloads: &[WorkloadSpec], profile: &ServerProfile) -> TdpPrediction {
    predict_tdp_with(workloads, profile, TdpRule::CompetingSet)
}

pub fn predict_tdp_with(
    workloads: &[WorkloadSpec],
    profile: &ServerProfile,
    rule: TdpRule,
) -> TdpPrediction {
    let competing = match rule {
        TdpRule::CompetingSet => competing_data(workloads, profile),
        TdpRule::AllFiles => workloads.iter().map(|w| w.request_size + w.file_size).sum(),
    };
    TdpPrediction {
        reached: competing >= profile.llc_size,
        margin_bytes: profile.llc_size as i64 - competing as i64,
    }
}

/// Competing data stays within α × CacheSize (equality admitted).
pub fn criterion_two(workloads: &[WorkloadSpec], profile: &ServerProfile) -> bool {
    competing_data(workloads, profile) as f64 <= profile.cache_capacity()
}

/// Competing data as a fraction of α × CacheSize. May exceed 1 for states the
/// allocator would never commit.
pub fn cache_in_use(workloads: &[WorkloadSpec], profile: &ServerProfile) -> f64 {
    competing_data(workloads, profile) as f64 / profile.cache_capacity()
}

/// α from an observed degradation point: observed bytes over cache size.
pub fn calibrate_alpha(observed_tdp: f64, profile: &ServerProfile) -> Result<f64> {
    if !(observed_tdp > 0.0 && observed_tdp.is_finite()) {
        return Err(Error::NonPositiveObservation(observed_tdp));
    }
    Ok(observed_tdp / profile.llc_size as f64)
}
