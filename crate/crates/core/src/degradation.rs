//! Mutual throughput degradation between co-resident workloads.
//!
//! A workload's total degradation is the sum of the pairwise degradations every
//! co-runner inflicts on it. Degradation relates consolidation overhead O to the
//! solo running time AR through D = O / (AR + O), so D < 0.5 exactly when the
//! overhead stays below the solo running time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DegradationTable, GridPoint, WorkloadId, WorkloadSpec};

/// Workloads are only consolidated while every total degradation stays below this.
pub const SATURATION: f64 = 0.5;

/// Raw sums at or above 1 are reported as this value and flagged.
pub const CLAMP_CEILING: f64 = 0.999;

pub fn pairwise_degradation(
    table: &DegradationTable,
    from: &WorkloadSpec,
    on: &WorkloadSpec,
) -> Result<f64> {
    Ok(table.lookup(from.require_grid_point()?, on.require_grid_point()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadDegradation {
    pub workload: WorkloadId,
    pub contributions: Vec<(WorkloadId, f64)>,
    pub raw_total: f64,
    pub total: f64,
    pub clamped: bool,
}

pub(crate) fn clamp_total(raw: f64) -> (f64, bool) {
    if raw >= 1.0 {
        (CLAMP_CEILING, true)
    } else {
        (raw, false)
    }
}

pub fn total_degradation(
    table: &DegradationTable,
    on: &WorkloadSpec,
    co_resident: &[WorkloadSpec],
) -> Result<WorkloadDegradation> {
    if co_resident.iter().any(|w| w.id == on.id) {
        return Err(Error::SelfDegradation(on.id.clone()));
    }
    let contributions = co_resident
        .iter()
        .map(|from| Ok((from.id.clone(), pairwise_degradation(table, from, on)?)))
        .collect::<Result<Vec<_>>>()?;
    let raw_total: f64 = contributions.iter().map(|(_, d)| d).sum();
    let (total, clamped) = clamp_total(raw_total);
    Ok(WorkloadDegradation {
        workload: on.id.clone(),
        contributions,
        raw_total,
        total,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradationReport {
    pub per_workload: Vec<WorkloadDegradation>,
    pub max_degradation: f64,
}

impl DegradationReport {
    pub fn any_clamped(&self) -> bool {
        self.per_workload.iter().any(|d| d.clamped)
    }
}

/// Total degradation of every member of a co-located group.
pub fn group_degradation(
    table: &DegradationTable,
    group: &[WorkloadSpec],
) -> Result<DegradationReport> {
    let mut per_workload = Vec::with_capacity(group.len());
    for (j, on) in group.iter().enumerate() {
        if group[..j].iter().any(|w| w.id == on.id) {
            return Err(Error::DuplicateWorkload(on.id.clone()));
        }
        let others: Vec<WorkloadSpec> = group
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, w)| w.clone())
            .collect();
        per_workload.push(total_degradation(table, on, &others)?);
    }
    let max_degradation = per_workload.iter().map(|d| d.total).fold(0.0, f64::max);
    Ok(DegradationReport {
        per_workload,
        max_degradation,
    })
}

/// Largest clamped total degradation among workloads at the given grid points,
/// and whether any raw sum needed clamping.
pub(crate) fn max_degradation_on_points(
    table: &DegradationTable,
    points: &[GridPoint],
) -> (f64, bool) {
    let mut max = 0.0_f64;
    let mut any_clamped = false;
    for (j, &on) in points.iter().enumerate() {
        let raw: f64 = points
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &from)| table.lookup(from, on))
            .sum();
        let (total, clamped) = clamp_total(raw);
        max = max.max(total);
        any_clamped |= clamped;
    }
    (max, any_clamped)
}

pub fn degradation_from_overhead(overhead: f64, base_runtime: f64) -> Result<f64> {
    if !(base_runtime > 0.0 && base_runtime.is_finite()) {
        return Err(Error::NonPositiveRuntime(base_runtime));
    }
    if overhead.is_nan() || overhead < 0.0 {
        return Err(Error::NegativeOverhead(overhead));
    }
    Ok(overhead / (base_runtime + overhead))
}

pub fn overhead_from_degradation(degradation: f64, base_runtime: f64) -> Result<f64> {
    if !(base_runtime > 0.0 && base_runtime.is_finite()) {
        return Err(Error::NonPositiveRuntime(base_runtime));
    }
    if !(0.0..1.0).contains(&degradation) {
        return Err(Error::DegradationOutOfRange(degradation));
    }
    Ok(base_runtime * degradation / (1.0 - degradation))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOne {
    pub pass: bool,
    pub report: DegradationReport,
}

/// Passes when every member of the group, the newcomer included, stays strictly
/// below the saturation point. A clamped sum always fails.
pub fn criterion_one(table: &DegradationTable, group: &[WorkloadSpec]) -> Result<CriterionOne> {
    let report = group_degradation(table, group)?;
    let pass = report
        .per_workload
        .iter()
        .all(|d| !d.clamped && d.total < SATURATION);
    Ok(CriterionOne { pass, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MakespanComparison {
    pub consolidated: f64,
    pub sequential: f64,
    pub consolidate_better: bool,
}

/// Compares running a group together against running it back to back.
///
/// Each member is `(base_runtime, total_degradation)`.
pub fn makespan_compare(group: &[(f64, f64)]) -> Result<MakespanComparison> {
    let mut consolidated = 0.0_f64;
    let mut sequential = 0.0;
    for &(base_runtime, degradation) in group {
        let overhead = overhead_from_degradation(degradation, base_runtime)?;
        consolidated = consolidated.max(base_runtime + overhead);
        sequential += base_runtime;
    }
    Ok(MakespanComparison {
        consolidated,
        sequential,
        consolidate_better: consolidated < sequential,
    })
}
