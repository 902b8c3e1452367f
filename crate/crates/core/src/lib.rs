//! Cache-contention aware consolidation of data-intensive workloads.
//!
//! Workloads are described by request size and file size. Co-located workloads
//! compete for the last-level cache and degrade one another; the engine predicts
//! both effects, enforces the two consolidation bounds, and places arriving
//! workloads on servers with a greedy two-dimensional bin-packing rule checked
//! against an exhaustive search.

pub mod allocator;
pub mod contention;
pub mod degradation;
pub mod error;
pub mod model;
pub mod scenario;
pub mod synth;
pub mod throughput;

pub use allocator::{
    brute_force_allocate, greedy_allocate, release, server_loads, AllocationDecision,
    BruteForceOutcome, ObjectiveValue, Outcome, SelectionRule, ServerLoads,
};
pub use error::{Error, Result};
pub use model::{
    validate, DegradationTable, GridPoint, Operation, PlacementState, Server, ServerId,
    ServerProfile, WorkloadId, WorkloadSpec,
};
pub use scenario::{compare_with_oracle, run_scenario, RunReport, Scenario, ScenarioConfig};
pub use synth::{generate_table, load_table, save_table, GeneratorParams};
pub use throughput::{single_throughput, throughput_level, ThroughputLevel, ThroughputParams};
