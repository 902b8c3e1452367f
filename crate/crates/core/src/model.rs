//! Shared domain vocabulary: workloads, servers, the profiling grid, degradation
//! tables and placement state.
//!
//! All sizes are exact byte counts with binary units (1KB = 1024 bytes).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::throughput::ThroughputParams;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
pub const GIB: u64 = 1024 * MIB;

/// Number of request sizes on the profiling grid (1KB, 2KB, ..., 512KB).
pub const RS_GRID_LEN: usize = 10;
/// Number of file sizes on the profiling grid (1KB, 2KB, ..., 4GB).
pub const FS_GRID_LEN: usize = 23;
/// Distinct (rs, fs) workload configurations on the grid.
pub const GRID_POINTS: usize = RS_GRID_LEN * FS_GRID_LEN;
/// Ordered pairs of grid points, i.e. entries of a full degradation table.
pub const TABLE_ENTRIES: usize = GRID_POINTS * GRID_POINTS;

pub fn rs_grid() -> [u64; RS_GRID_LEN] {
    std::array::from_fn(|k| KIB << k)
}

pub fn fs_grid() -> [u64; FS_GRID_LEN] {
    std::array::from_fn(|k| KIB << k)
}

/// Parses sizes such as `4096`, `32KB`, `1M`, `64MiB` or `2GB` (binary units).
pub fn parse_size(text: &str) -> Result<u64> {
    let trimmed = text.trim();
    let split = trimmed
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(trimmed.len());
    let (digits, unit) = trimmed.split_at(split);
    let value: u64 = digits
        .parse()
        .map_err(|_| Error::InvalidSize(text.to_owned()))?;
    let scale = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "K" | "KB" | "KIB" => KIB,
        "M" | "MB" | "MIB" => MIB,
        "G" | "GB" | "GIB" => GIB,
        _ => return Err(Error::InvalidSize(text.to_owned())),
    };
    value
        .checked_mul(scale)
        .ok_or_else(|| Error::InvalidSize(text.to_owned()))
}

/// Renders a byte count with the largest binary unit that divides it exactly.
pub fn format_size(bytes: u64) -> String {
    if bytes != 0 && bytes.is_multiple_of(GIB) {
        format!("{}GB", bytes / GIB)
    } else if bytes != 0 && bytes.is_multiple_of(MIB) {
        format!("{}MB", bytes / MIB)
    } else if bytes != 0 && bytes.is_multiple_of(KIB) {
        format!("{}KB", bytes / KIB)
    } else {
        format!("{bytes}B")
    }
}

/// A byte count that deserializes from either an integer or a unit string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Size(pub u64);

impl Serialize for Size {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for Size {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bytes(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Bytes(b) => Ok(Size(b)),
            Raw::Text(t) => parse_size(&t).map(Size).map_err(serde::de::Error::custom),
        }
    }
}

impl FromStr for Size {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_size(s).map(Size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadId(pub String);

impl WorkloadId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for WorkloadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WorkloadId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub String);

impl ServerId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Read,
    Write,
}

/// A position on the (request size, file size) profiling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridPoint {
    rs_index: u8,
    fs_index: u8,
}

impl GridPoint {
    pub fn new(rs_index: usize, fs_index: usize) -> Option<Self> {
        (rs_index < RS_GRID_LEN && fs_index < FS_GRID_LEN).then_some(Self {
            rs_index: rs_index as u8,
            fs_index: fs_index as u8,
        })
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < GRID_POINTS, "grid index {index} out of range");
        Self {
            rs_index: (index / FS_GRID_LEN) as u8,
            fs_index: (index % FS_GRID_LEN) as u8,
        }
    }

    /// Exact grid membership.
    pub fn from_sizes(request_size: u64, file_size: u64) -> Option<Self> {
        let rs = exact_grid_index(request_size, RS_GRID_LEN)?;
        let fs = exact_grid_index(file_size, FS_GRID_LEN)?;
        Self::new(rs, fs)
    }

    /// Nearest grid point in log space, clamped to the grid ends.
    pub fn snapped(request_size: u64, file_size: u64) -> Self {
        Self {
            rs_index: nearest_grid_index(request_size, RS_GRID_LEN) as u8,
            fs_index: nearest_grid_index(file_size, FS_GRID_LEN) as u8,
        }
    }

    pub fn index(self) -> usize {
        self.rs_index as usize * FS_GRID_LEN + self.fs_index as usize
    }

    pub fn rs_index(self) -> usize {
        self.rs_index as usize
    }

    pub fn fs_index(self) -> usize {
        self.fs_index as usize
    }

    pub fn request_size(self) -> u64 {
        KIB << self.rs_index
    }

    pub fn file_size(self) -> u64 {
        KIB << self.fs_index
    }

    pub fn all() -> impl Iterator<Item = GridPoint> {
        (0..GRID_POINTS).map(GridPoint::from_index)
    }
}

fn exact_grid_index(bytes: u64, len: usize) -> Option<usize> {
    if bytes < KIB || !bytes.is_power_of_two() {
        return None;
    }
    let k = (bytes.trailing_zeros() - KIB.trailing_zeros()) as usize;
    (k < len).then_some(k)
}

// Grid values are powers of two, so the log-space midpoint between neighbours
// is irrational and an integer input can never tie.
fn nearest_grid_index(bytes: u64, len: usize) -> usize {
    let octaves = (bytes.max(1) as f64 / KIB as f64).log2();
    octaves.round().clamp(0.0, (len - 1) as f64) as usize
}

/// One data-intensive workload, characterised by request size and file size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub id: WorkloadId,
    pub request_size: u64,
    pub file_size: u64,
    pub operation: Operation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_runtime: Option<f64>,
}

impl WorkloadSpec {
    pub fn new(
        id: impl Into<WorkloadId>,
        request_size: u64,
        file_size: u64,
        operation: Operation,
    ) -> Result<Self> {
        let spec = Self {
            id: id.into(),
            request_size,
            file_size,
            operation,
            base_runtime: None,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn write(id: impl Into<WorkloadId>, request_size: u64, file_size: u64) -> Result<Self> {
        Self::new(id, request_size, file_size, Operation::Write)
    }

    pub fn read(id: impl Into<WorkloadId>, request_size: u64, file_size: u64) -> Result<Self> {
        Self::new(id, request_size, file_size, Operation::Read)
    }

    pub fn with_base_runtime(mut self, seconds: f64) -> Result<Self> {
        self.base_runtime = Some(seconds);
        self.check()?;
        Ok(self)
    }

    /// Checks the size and runtime invariants; grid membership is not required.
    pub fn check(&self) -> Result<()> {
        if self.request_size == 0 || self.file_size == 0 {
            return Err(Error::NonPositiveSize {
                id: self.id.clone(),
                request_size: self.request_size,
                file_size: self.file_size,
            });
        }
        if self.request_size > self.file_size {
            return Err(Error::RequestLargerThanFile {
                id: self.id.clone(),
                request_size: self.request_size,
                file_size: self.file_size,
            });
        }
        if let Some(runtime) = self.base_runtime {
            if !(runtime > 0.0 && runtime.is_finite()) {
                return Err(Error::NonPositiveRuntime(runtime));
            }
        }
        Ok(())
    }

    pub fn grid_point(&self) -> Option<GridPoint> {
        GridPoint::from_sizes(self.request_size, self.file_size)
    }

    pub(crate) fn require_grid_point(&self) -> Result<GridPoint> {
        self.grid_point().ok_or_else(|| Error::OffGridValue {
            id: self.id.clone(),
            request_size: self.request_size,
            file_size: self.file_size,
        })
    }

    /// Bytes this workload brings into LLC competition: its request size, plus
    /// its file size when the file fits in the cache.
    pub fn competing_bytes(&self, llc_size: u64) -> u64 {
        if self.file_size <= llc_size {
            self.request_size + self.file_size
        } else {
            self.request_size
        }
    }
}

/// Hardware description of one physical server plus its over-commit threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    pub id: ServerId,
    pub llc_size: u64,
    pub memory: u64,
    pub system_file_cache: u64,
    pub disk_cache: u64,
    /// LLC over-commit threshold (α), at least 1.
    pub alpha: f64,
    #[serde(default)]
    pub throughput: ThroughputParams,
}

/// Over-commit threshold calibrated from an observed 7.76MB degradation point
/// against a 6MB cache.
pub const DEFAULT_ALPHA: f64 = 1.3;

impl ServerProfile {
    /// Core i7 @ 2.00 GHz: 6MB LLC, 8GB memory, 980MB file cache, 12MB disk cache.
    pub fn m1(id: impl Into<String>) -> Self {
        Self {
            id: ServerId::new(id),
            llc_size: 6 * MIB,
            memory: 8 * GIB,
            system_file_cache: 980 * MIB,
            disk_cache: 12 * MIB,
            alpha: DEFAULT_ALPHA,
            throughput: ThroughputParams::default(),
        }
    }

    /// Core 2 Duo @ 3.00 GHz: 6MB LLC, 3GB memory, 455MB file cache, 8MB disk cache.
    pub fn m2(id: impl Into<String>) -> Self {
        Self {
            id: ServerId::new(id),
            llc_size: 6 * MIB,
            memory: 3 * GIB,
            system_file_cache: 455 * MIB,
            disk_cache: 8 * MIB,
            alpha: DEFAULT_ALPHA,
            throughput: ThroughputParams::default(),
        }
    }

    pub fn preset(name: &str, id: impl Into<String>) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "M1" => Some(Self::m1(id)),
            "M2" => Some(Self::m2(id)),
            _ => None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn check(&self) -> Result<()> {
        let invalid = |reason: &str| {
            Err(Error::InvalidProfile {
                server: self.id.clone(),
                reason: reason.to_owned(),
            })
        };
        if self.llc_size == 0 || self.system_file_cache == 0 || self.disk_cache == 0 {
            return invalid("cache sizes must be positive");
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return invalid("alpha must be a finite value of at least 1");
        }
        self.throughput
            .check()
            .map_err(|reason| Error::InvalidProfile {
                server: self.id.clone(),
                reason,
            })
    }

    /// Size beyond which writes fall through to the disk itself.
    pub fn buffer_capacity(&self) -> u64 {
        self.system_file_cache + self.disk_cache
    }

    /// α × CacheSize in bytes.
    pub fn cache_capacity(&self) -> f64 {
        self.alpha * self.llc_size as f64
    }
}

/// Validates a workload against a server and resolves it onto the profiling grid.
///
/// With `snap` the sizes move to the nearest grid point in log space; without it
/// the sizes must already be grid values.
pub fn validate(spec: &WorkloadSpec, profile: &ServerProfile, snap: bool) -> Result<WorkloadSpec> {
    profile.check()?;
    spec.check()?;
    let point = if snap {
        GridPoint::snapped(spec.request_size, spec.file_size)
    } else {
        spec.require_grid_point()?
    };
    Ok(WorkloadSpec {
        request_size: point.request_size(),
        file_size: point.file_size(),
        ..spec.clone()
    })
}

/// Pairwise degradation lookup D(i, j) over every ordered pair of grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationTable {
    llc_size: u64,
    entries: Vec<f64>,
}

impl DegradationTable {
    /// Entries are indexed `from.index() * GRID_POINTS + on.index()`.
    pub fn new(llc_size: u64, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != TABLE_ENTRIES {
            return Err(Error::MalformedTable(format!(
                "expected {TABLE_ENTRIES} entries, found {}",
                entries.len()
            )));
        }
        if let Some((k, d)) = entries
            .iter()
            .enumerate()
            .find(|(_, d)| !(**d >= 0.0 && **d < 1.0))
        {
            return Err(Error::MalformedTable(format!(
                "entry {k} = {d} outside [0, 1)"
            )));
        }
        if let Some((lo, hi)) = first_monotonicity_violation(&entries) {
            return Err(Error::MalformedTable(format!(
                "entries not monotone along the grid: entry {hi} < entry {lo}"
            )));
        }
        Ok(Self { llc_size, entries })
    }

    /// Every pair degrades every other pair by the same amount.
    pub fn uniform(llc_size: u64, value: f64) -> Result<Self> {
        Self::new(llc_size, vec![value; TABLE_ENTRIES])
    }

    pub fn llc_size(&self) -> u64 {
        self.llc_size
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Degradation caused by a workload at `from` on a workload at `on`.
    pub fn lookup(&self, from: GridPoint, on: GridPoint) -> f64 {
        self.entries[from.index() * GRID_POINTS + on.index()]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Strides of the four table axes (rs_i, fs_i, rs_j, fs_j) with their lengths.
pub(crate) const TABLE_AXES: [(usize, usize); 4] = [
    (FS_GRID_LEN * GRID_POINTS, RS_GRID_LEN),
    (GRID_POINTS, FS_GRID_LEN),
    (FS_GRID_LEN, RS_GRID_LEN),
    (1, FS_GRID_LEN),
];

fn first_monotonicity_violation(entries: &[f64]) -> Option<(usize, usize)> {
    for (stride, len) in TABLE_AXES {
        for k in 0..entries.len() {
            let coord = (k / stride) % len;
            if coord + 1 < len && entries[k + stride] < entries[k] {
                return Some((k, k + stride));
            }
        }
    }
    None
}

/// A physical server together with the degradation table profiled on it.
#[derive(Debug, Clone)]
pub struct Server {
    pub profile: ServerProfile,
    pub table: Arc<DegradationTable>,
}

impl Server {
    pub fn new(profile: ServerProfile, table: Arc<DegradationTable>) -> Self {
        Self { profile, table }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            profile: self.profile.clone().with_alpha(alpha),
            table: Arc::clone(&self.table),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Resident(usize),
    Queued(usize),
}

/// Per-server resident sets plus the FIFO queue of workloads awaiting placement.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlacementState {
    residents: Vec<Vec<WorkloadSpec>>,
    queue: VecDeque<WorkloadSpec>,
}

impl PlacementState {
    pub fn new(servers: usize) -> Self {
        Self {
            residents: vec![Vec::new(); servers],
            queue: VecDeque::new(),
        }
    }

    pub fn server_count(&self) -> usize {
        self.residents.len()
    }

    pub fn residents(&self, server: usize) -> &[WorkloadSpec] {
        &self.residents[server]
    }

    pub fn all_residents(&self) -> &[Vec<WorkloadSpec>] {
        &self.residents
    }

    pub fn queue(&self) -> &VecDeque<WorkloadSpec> {
        &self.queue
    }

    pub fn locate(&self, id: &WorkloadId) -> Option<Location> {
        for (server, resident) in self.residents.iter().enumerate() {
            if resident.iter().any(|w| &w.id == id) {
                return Some(Location::Resident(server));
            }
        }
        self.queue
            .iter()
            .position(|w| &w.id == id)
            .map(Location::Queued)
    }

    pub fn contains(&self, id: &WorkloadId) -> bool {
        self.locate(id).is_some()
    }

    /// Adds a resident without any feasibility check.
    pub fn place(&mut self, server: usize, workload: WorkloadSpec) -> Result<()> {
        if self.contains(&workload.id) {
            return Err(Error::DuplicateWorkload(workload.id));
        }
        self.residents[server].push(workload);
        Ok(())
    }

    pub fn enqueue(&mut self, workload: WorkloadSpec) -> Result<()> {
        if self.contains(&workload.id) {
            return Err(Error::DuplicateWorkload(workload.id));
        }
        self.queue.push_back(workload);
        Ok(())
    }

    /// Removes a resident workload, returning it and the server it ran on.
    pub fn remove_resident(&mut self, id: &WorkloadId) -> Option<(usize, WorkloadSpec)> {
        for (server, resident) in self.residents.iter_mut().enumerate() {
            if let Some(pos) = resident.iter().position(|w| &w.id == id) {
                return Some((server, resident.remove(pos)));
            }
        }
        None
    }

    pub(crate) fn remove_queued(&mut self, position: usize) -> Option<WorkloadSpec> {
        self.queue.remove(position)
    }

    pub(crate) fn push_resident(&mut self, server: usize, workload: WorkloadSpec) {
        self.residents[server].push(workload);
    }

    pub fn resident_ids(&self) -> Vec<Vec<WorkloadId>> {
        self.residents
            .iter()
            .map(|r| r.iter().map(|w| w.id.clone()).collect())
            .collect()
    }

    pub fn queued_ids(&self) -> Vec<WorkloadId> {
        self.queue.iter().map(|w| w.id.clone()).collect()
    }
}
