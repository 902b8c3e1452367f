//! Scenario replay: initial server loads plus named arrival sequences, run
//! through the greedy allocator or the exhaustive oracle.
//!
//! Scenarios are JSON documents:
//!
//! ```json
//! {
//!   "servers": [
//!     { "id": "Server1", "preset": "M1", "initial": [["32KB", "64KB"], ["4KB", "16KB"]] }
//!   ],
//!   "sequences": { "1": [["16KB", "64KB"], { "rs": "8KB", "fs": "64MB", "id": "late" }, { "release": "late" }] },
//!   "alpha_sweep": [1.0, 1.3, 1.5],
//!   "options": { "snap": true, "exhaustive_limit": 12, "seed": 0 }
//! }
//! ```
//!
//! Workloads given as bare `(rs, fs)` pairs are writes with a one-second solo
//! running time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    self, apply_assignment, brute_force_allocate, greedy_allocate, objective, AllocationDecision,
    Outcome, SelectionRule, ServerLoads, DEFAULT_EXHAUSTIVE_LIMIT,
};
use crate::error::{Error, Result};
use crate::model::{
    format_size, validate, DegradationTable, GridPoint, Operation, PlacementState, Server,
    ServerId, ServerProfile, Size, WorkloadId, WorkloadSpec, DEFAULT_ALPHA, FS_GRID_LEN,
    RS_GRID_LEN,
};
use crate::synth::{generate_table, load_table, GeneratorParams};
use crate::throughput::{single_throughput, ThroughputParams};

pub const DEFAULT_BASE_RUNTIME: f64 = 1.0;

/// Denominator floor for the relative greedy-vs-oracle gap.
pub const GAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadEntry {
    Pair(Size, Size),
    Detailed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        rs: Size,
        fs: Size,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        operation: Option<Operation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_runtime: Option<f64>,
    },
    Release {
        release: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llc_size: Option<Size>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<Size>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_file_cache: Option<Size>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disk_cache: Option<Size>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Degradation table file; generated from the scenario seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub initial: Vec<WorkloadEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    pub snap: bool,
    pub exhaustive_limit: usize,
    /// Seeds every generated table; the generator section's own seed is ignored.
    pub seed: u64,
    pub selection: SelectionRule,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            snap: true,
            exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
            seed: 0,
            selection: SelectionRule::GlobalSum,
        }
    }
}

impl<'de> Deserialize<'de> for SelectionRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-sum" => Ok(SelectionRule::GlobalSum),
            "own-average" => Ok(SelectionRule::OwnAverage),
            other => Err(Error::InvalidConfig(format!(
                "unknown selection rule {other:?} (expected global-sum or own-average)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub servers: Vec<ServerConfig>,
    #[serde(default)]
    pub sequences: BTreeMap<String, Vec<WorkloadEntry>>,
    #[serde(default)]
    pub alpha_sweep: Vec<f64>,
    #[serde(default)]
    pub options: ScenarioOptions,
    #[serde(default)]
    pub generator: GeneratorParams,
    /// Applied to every server when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputParams>,
    /// Directory that relative table paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&fs::read_to_string(path)?)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }
}

/// Two M1 and two M2 servers with three resident workloads each, and three
/// five-arrival sequences, swept over α ∈ {1.0, 1.3, 1.5}.
pub fn four_server_example() -> ScenarioConfig {
    ScenarioConfig::from_json(include_str!("../data/four_servers.json"))
        .expect("bundled scenario parses")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Arrive(WorkloadSpec),
    Release(WorkloadId),
}

/// A scenario with servers built, tables attached and workloads on the grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub servers: Vec<Server>,
    pub initial: PlacementState,
    pub sequences: BTreeMap<String, Vec<Event>>,
    pub alpha_sweep: Vec<f64>,
    pub exhaustive_limit: usize,
    pub selection: SelectionRule,
    /// Notes about inputs that were adjusted, such as snapped sizes.
    pub warnings: Vec<String>,
}

fn build_profile(
    cfg: &ServerConfig,
    throughput: Option<&ThroughputParams>,
) -> Result<ServerProfile> {
    let mut profile = match &cfg.preset {
        Some(name) => ServerProfile::preset(name, cfg.id.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {name:?}")))?,
        None => {
            let need = |v: Option<Size>, field: &str| {
                v.map(|s| s.0).ok_or_else(|| {
                    Error::InvalidConfig(format!("server {} needs a preset or {field}", cfg.id))
                })
            };
            ServerProfile {
                id: ServerId::new(cfg.id.as_str()),
                llc_size: need(cfg.llc_size, "llc_size")?,
                memory: cfg.memory.map_or(0, |s| s.0),
                system_file_cache: need(cfg.system_file_cache, "system_file_cache")?,
                disk_cache: need(cfg.disk_cache, "disk_cache")?,
                alpha: DEFAULT_ALPHA,
                throughput: ThroughputParams::default(),
            }
        }
    };
    if let Some(v) = cfg.llc_size {
        profile.llc_size = v.0;
    }
    if let Some(v) = cfg.memory {
        profile.memory = v.0;
    }
    if let Some(v) = cfg.system_file_cache {
        profile.system_file_cache = v.0;
    }
    if let Some(v) = cfg.disk_cache {
        profile.disk_cache = v.0;
    }
    if let Some(alpha) = cfg.alpha {
        profile.alpha = alpha;
    }
    if let Some(params) = throughput {
        profile.throughput = params.clone();
    }
    profile.check()?;
    Ok(profile)
}

struct WorkloadResolver<'a> {
    snap: bool,
    profile: &'a ServerProfile,
    seen: HashSet<WorkloadId>,
    warnings: Vec<String>,
}

impl WorkloadResolver<'_> {
    fn resolve(&mut self, entry: &WorkloadEntry, default_id: String) -> Result<Event> {
        let (id, rs, fs, operation, base_runtime) = match entry {
            WorkloadEntry::Release { release } => {
                return Ok(Event::Release(WorkloadId::new(release.as_str())))
            }
            WorkloadEntry::Pair(rs, fs) => (None, *rs, *fs, None, None),
            WorkloadEntry::Detailed {
                id,
                rs,
                fs,
                operation,
                base_runtime,
            } => (id.clone(), *rs, *fs, *operation, *base_runtime),
        };
        let id = WorkloadId::new(id.unwrap_or(default_id));
        let spec = WorkloadSpec::new(
            id.clone(),
            rs.0,
            fs.0,
            operation.unwrap_or(Operation::Write),
        )?
        .with_base_runtime(base_runtime.unwrap_or(DEFAULT_BASE_RUNTIME))?;
        let resolved = validate(&spec, self.profile, self.snap)?;
        if resolved.request_size != spec.request_size || resolved.file_size != spec.file_size {
            self.warnings.push(format!(
                "workload {id}: ({}, {}) is off the profiling grid, snapped to ({}, {})",
                format_size(spec.request_size),
                format_size(spec.file_size),
                format_size(resolved.request_size),
                format_size(resolved.file_size),
            ));
        }
        if !self.seen.insert(id.clone()) {
            return Err(Error::DuplicateWorkload(id));
        }
        Ok(Event::Arrive(resolved))
    }
}

impl Scenario {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        if config.servers.is_empty() {
            return Err(Error::InvalidConfig("scenario has no servers".into()));
        }
        let generator = config.generator.clone().with_seed(config.options.seed);
        let mut generated: HashMap<u64, Arc<DegradationTable>> = HashMap::new();
        let mut servers = Vec::with_capacity(config.servers.len());
        for cfg in &config.servers {
            let profile = build_profile(cfg, config.throughput.as_ref())?;
            let table = match &cfg.table {
                Some(path) => {
                    let path = match &config.base_dir {
                        Some(dir) if path.is_relative() => dir.join(path),
                        _ => path.clone(),
                    };
                    let table = load_table(&path)?;
                    if table.llc_size() != profile.llc_size {
                        return Err(Error::GridMismatch(format!(
                            "{} was profiled with a {}-byte LLC but server {} has {} bytes",
                            path.display(),
                            table.llc_size(),
                            profile.id,
                            profile.llc_size
                        )));
                    }
                    Arc::new(table)
                }
                None => match generated.get(&profile.llc_size) {
                    Some(table) => Arc::clone(table),
                    None => {
                        let table = Arc::new(generate_table(&profile, &generator)?);
                        generated.insert(profile.llc_size, Arc::clone(&table));
                        table
                    }
                },
            };
            servers.push(Server::new(profile, table));
        }

        let mut initial = PlacementState::new(servers.len());
        let mut warnings = Vec::new();
        let mut initial_ids = HashSet::new();
        for (i, cfg) in config.servers.iter().enumerate() {
            let mut resolver = WorkloadResolver {
                snap: config.options.snap,
                profile: &servers[i].profile,
                seen: std::mem::take(&mut initial_ids),
                warnings: Vec::new(),
            };
            for (k, entry) in cfg.initial.iter().enumerate() {
                match resolver.resolve(entry, format!("{}/init{k}", cfg.id))? {
                    Event::Arrive(w) => initial.place(i, w)?,
                    Event::Release(_) => {
                        return Err(Error::InvalidConfig(format!(
                            "server {}: initial loads cannot contain releases",
                            cfg.id
                        )))
                    }
                }
            }
            initial_ids = resolver.seen;
            warnings.extend(resolver.warnings);
        }

        let mut sequences = BTreeMap::new();
        for (name, entries) in &config.sequences {
            let mut resolver = WorkloadResolver {
                snap: config.options.snap,
                profile: &servers[0].profile,
                seen: initial_ids.clone(),
                warnings: Vec::new(),
            };
            let events = entries
                .iter()
                .enumerate()
                .map(|(k, e)| resolver.resolve(e, format!("seq{name}/{k}")))
                .collect::<Result<Vec<_>>>()?;
            warnings.extend(resolver.warnings);
            sequences.insert(name.clone(), events);
        }

        Ok(Self {
            servers,
            initial,
            sequences,
            alpha_sweep: config.alpha_sweep.clone(),
            exhaustive_limit: config.options.exhaustive_limit,
            selection: config.options.selection,
            warnings,
        })
    }

    pub fn servers_with_alpha(&self, alpha: f64) -> Result<Vec<Server>> {
        let servers: Vec<Server> = self.servers.iter().map(|s| s.with_alpha(alpha)).collect();
        for s in &servers {
            s.profile.check()?;
        }
        Ok(servers)
    }

    pub fn sequence(&self, name: &str) -> Result<&[Event]> {
        self.sequences
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSequence(name.to_owned()))
    }

    /// Rejects initial loads that already break either bin bound under `alpha`.
    pub fn check_initial(&self, alpha: f64) -> Result<()> {
        let servers = self.servers_with_alpha(alpha)?;
        for (i, server) in servers.iter().enumerate() {
            let loads = allocator::server_loads(server, self.initial.residents(i))?;
            if !loads.is_feasible() {
                return Err(Error::InconsistentInitialState {
                    server: server.profile.id.clone(),
                    reason: format!(
                        "alpha {alpha}: cache in use {:.3}, max degradation {:.3}",
                        loads.cache_in_use, loads.max_degradation
                    ),
                });
            }
        }
        Ok(())
    }

    /// Alphas to sweep: the configured list, or the default over-commit threshold.
    pub fn sweep_alphas(&self) -> Vec<f64> {
        if self.alpha_sweep.is_empty() {
            vec![DEFAULT_ALPHA]
        } else {
            self.alpha_sweep.clone()
        }
    }
}

fn arrivals_only(events: &[Event]) -> Option<Vec<WorkloadSpec>> {
    events
        .iter()
        .map(|e| match e {
            Event::Arrive(w) => Some(w.clone()),
            Event::Release(_) => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceOutcome {
    Placed,
    Queued,
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub step: usize,
    /// Position of the triggering event in the sequence; absent for placements
    /// made while retrying the queue after a release.
    pub event: Option<usize>,
    pub workload: WorkloadId,
    pub request_size: u64,
    pub file_size: u64,
    pub outcome: TraceOutcome,
    pub server: Option<ServerId>,
    /// Modelled solo throughput on the chosen server, MB/s.
    pub solo_throughput: Option<f64>,
    pub loads: Vec<ServerLoads>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerSummary {
    pub id: ServerId,
    pub residents: Vec<WorkloadId>,
    pub loads: ServerLoads,
    pub min_relative_throughput: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Greedy,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub sequence: String,
    pub alpha: f64,
    pub allocator: AllocatorKind,
    pub trace: Vec<TraceEntry>,
    pub servers: Vec<ServerSummary>,
    pub queued: Vec<WorkloadId>,
    pub queued_count: usize,
    /// Mean over servers of the worst resident's relative throughput.
    pub average_min_throughput: f64,
    pub objective: f64,
    /// Exhaustive optimum, when the sequence is within the search limit.
    pub oracle_objective: Option<f64>,
}

struct TraceBuilder<'a> {
    servers: &'a [Server],
    entries: Vec<TraceEntry>,
}

impl TraceBuilder<'_> {
    fn decision(
        &mut self,
        event: Option<usize>,
        workload: &WorkloadSpec,
        decision: AllocationDecision,
    ) {
        let (outcome, server, solo) = match decision.outcome {
            Outcome::Placed { server } => {
                let s = &self.servers[server];
                (
                    TraceOutcome::Placed,
                    Some(s.profile.id.clone()),
                    Some(single_throughput(workload, &s.profile)),
                )
            }
            Outcome::Queued => (TraceOutcome::Queued, None, None),
        };
        self.push(event, workload, outcome, server, solo, decision.snapshot);
    }

    fn push(
        &mut self,
        event: Option<usize>,
        workload: &WorkloadSpec,
        outcome: TraceOutcome,
        server: Option<ServerId>,
        solo_throughput: Option<f64>,
        loads: Vec<ServerLoads>,
    ) {
        self.entries.push(TraceEntry {
            step: self.entries.len(),
            event,
            workload: workload.id.clone(),
            request_size: workload.request_size,
            file_size: workload.file_size,
            outcome,
            server,
            solo_throughput,
            loads,
        });
    }
}

fn summarize(
    name: &str,
    alpha: f64,
    allocator: AllocatorKind,
    servers: &[Server],
    state: &PlacementState,
    trace: Vec<TraceEntry>,
) -> Result<RunReport> {
    let loads = allocator::snapshot(servers, state)?;
    let summaries: Vec<ServerSummary> = servers
        .iter()
        .zip(&loads)
        .enumerate()
        .map(|(i, (s, l))| ServerSummary {
            id: s.profile.id.clone(),
            residents: state.residents(i).iter().map(|w| w.id.clone()).collect(),
            loads: *l,
            min_relative_throughput: l.min_relative_throughput(),
        })
        .collect();
    let average_min_throughput = summaries
        .iter()
        .map(|s| s.min_relative_throughput)
        .sum::<f64>()
        / summaries.len() as f64;
    let queued = state.queued_ids();
    Ok(RunReport {
        sequence: name.to_owned(),
        alpha,
        allocator,
        trace,
        servers: summaries,
        queued_count: queued.len(),
        queued,
        average_min_throughput,
        objective: objective(servers, state)?.total,
        oracle_objective: None,
    })
}

/// Runs events through the greedy allocator, returning the report and final state.
pub fn run_events(
    scenario: &Scenario,
    name: &str,
    events: &[Event],
    alpha: f64,
) -> Result<(RunReport, PlacementState)> {
    scenario.check_initial(alpha)?;
    let servers = scenario.servers_with_alpha(alpha)?;
    let mut state = scenario.initial.clone();
    let mut trace = TraceBuilder {
        servers: &servers,
        entries: Vec::new(),
    };
    for (k, event) in events.iter().enumerate() {
        match event {
            Event::Arrive(w) => {
                let decision = greedy_allocate(w, &servers, &mut state, scenario.selection)?;
                trace.decision(Some(k), w, decision);
            }
            Event::Release(id) => {
                let (server, workload) = match state.locate(id) {
                    Some(crate::model::Location::Resident(s)) => {
                        let w = state
                            .residents(s)
                            .iter()
                            .find(|w| &w.id == id)
                            .cloned()
                            .expect("located resident");
                        (s, w)
                    }
                    _ => return Err(Error::UnknownWorkload(id.clone())),
                };
                let retries = allocator::release(id, &servers, &mut state, scenario.selection)?;
                let after_release = allocator::snapshot(&servers, &state)?;
                trace.push(
                    Some(k),
                    &workload,
                    TraceOutcome::Released,
                    Some(servers[server].profile.id.clone()),
                    None,
                    after_release,
                );
                for decision in retries {
                    let w = state
                        .all_residents()
                        .iter()
                        .flatten()
                        .find(|w| w.id == decision.workload)
                        .cloned()
                        .expect("retried workload is resident");
                    trace.decision(None, &w, decision);
                }
            }
        }
    }
    let entries = trace.entries;
    let report = summarize(
        name,
        alpha,
        AllocatorKind::Greedy,
        &servers,
        &state,
        entries,
    )?;
    Ok((report, state))
}

/// Feeds the named sequence through the greedy allocator with every server's α
/// overridden by `alpha`.
pub fn run_scenario(scenario: &Scenario, sequence: &str, alpha: f64) -> Result<RunReport> {
    let events = scenario.sequence(sequence)?;
    let (mut report, _) = run_events(scenario, sequence, events, alpha)?;
    if let Some(arrivals) = arrivals_only(events) {
        if arrivals.len() <= scenario.exhaustive_limit {
            let servers = scenario.servers_with_alpha(alpha)?;
            let oracle = brute_force_allocate(
                &arrivals,
                &servers,
                &scenario.initial,
                scenario.exhaustive_limit,
            )?;
            report.oracle_objective = Some(oracle.objective.total);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub greedy: RunReport,
    pub oracle: RunReport,
    /// (greedy objective − oracle objective) / max(oracle objective, ε).
    pub gap: f64,
}

pub fn compare_with_oracle(scenario: &Scenario, sequence: &str, alpha: f64) -> Result<Comparison> {
    let events = scenario.sequence(sequence)?;
    let arrivals = arrivals_only(events).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "sequence {sequence:?} contains releases; the oracle only handles arrivals"
        ))
    })?;
    if arrivals.len() > scenario.exhaustive_limit {
        return Err(Error::SearchSpaceTooLarge {
            arrivals: arrivals.len(),
            limit: scenario.exhaustive_limit,
        });
    }
    let (mut greedy, _) = run_events(scenario, sequence, events, alpha)?;
    let servers = scenario.servers_with_alpha(alpha)?;
    let best = brute_force_allocate(
        &arrivals,
        &servers,
        &scenario.initial,
        scenario.exhaustive_limit,
    )?;
    let mut state = scenario.initial.clone();
    let decisions = apply_assignment(&arrivals, &best.assignment, &servers, &mut state)?;
    let mut trace = TraceBuilder {
        servers: &servers,
        entries: Vec::new(),
    };
    for (k, (w, d)) in arrivals.iter().zip(decisions).enumerate() {
        trace.decision(Some(k), w, d);
    }
    let entries = trace.entries;
    let mut oracle = summarize(
        sequence,
        alpha,
        AllocatorKind::Oracle,
        &servers,
        &state,
        entries,
    )?;
    oracle.oracle_objective = Some(best.objective.total);
    greedy.oracle_objective = Some(best.objective.total);
    let gap = (greedy.objective - oracle.objective) / oracle.objective.max(GAP_EPSILON);
    Ok(Comparison {
        greedy,
        oracle,
        gap,
    })
}

/// Rebuilds the final placement from a report's trace alone.
pub fn replay(scenario: &Scenario, report: &RunReport) -> Result<PlacementState> {
    let index: HashMap<&ServerId, usize> = scenario
        .servers
        .iter()
        .enumerate()
        .map(|(i, s)| (&s.profile.id, i))
        .collect();
    let mut pending: HashMap<&WorkloadId, WorkloadSpec> = HashMap::new();
    if let Some(events) = scenario.sequences.get(&report.sequence) {
        for e in events {
            if let Event::Arrive(w) = e {
                pending.insert(&w.id, w.clone());
            }
        }
    }
    let mut state = scenario.initial.clone();
    for entry in &report.trace {
        let server = |entry: &TraceEntry| -> Result<usize> {
            entry
                .server
                .as_ref()
                .and_then(|id| index.get(id).copied())
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("trace step {} names no known server", entry.step))
                })
        };
        match entry.outcome {
            TraceOutcome::Released => {
                state
                    .remove_resident(&entry.workload)
                    .ok_or_else(|| Error::UnknownWorkload(entry.workload.clone()))?;
            }
            TraceOutcome::Queued => {
                let w = pending
                    .get(&entry.workload)
                    .cloned()
                    .ok_or_else(|| Error::UnknownWorkload(entry.workload.clone()))?;
                state.enqueue(w)?;
            }
            TraceOutcome::Placed => {
                let w = match state.locate(&entry.workload) {
                    Some(crate::model::Location::Queued(pos)) => {
                        state.remove_queued(pos).expect("located queue entry")
                    }
                    Some(_) => return Err(Error::DuplicateWorkload(entry.workload.clone())),
                    None => pending
                        .get(&entry.workload)
                        .cloned()
                        .ok_or_else(|| Error::UnknownWorkload(entry.workload.clone()))?,
                };
                state.place(server(entry)?, w)?;
            }
        }
    }
    Ok(state)
}

/// One row per trace entry, with every server's loads after the step.
pub fn write_decisions_csv<W: Write>(reports: &[RunReport], writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let Some(first) = reports.first() else {
        out.flush()?;
        return Ok(());
    };
    let mut header: Vec<String> = [
        "sequence",
        "alpha",
        "allocator",
        "step",
        "event",
        "workload",
        "rs",
        "fs",
        "outcome",
        "server",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for s in &first.servers {
        header.push(format!("{}_cache_in_use", s.id));
        header.push(format!("{}_max_degradation", s.id));
    }
    out.write_record(&header)?;
    for report in reports {
        let allocator = match report.allocator {
            AllocatorKind::Greedy => "greedy",
            AllocatorKind::Oracle => "oracle",
        };
        for e in &report.trace {
            let outcome = match e.outcome {
                TraceOutcome::Placed => "placed",
                TraceOutcome::Queued => "queued",
                TraceOutcome::Released => "released",
            };
            let mut row = vec![
                report.sequence.clone(),
                report.alpha.to_string(),
                allocator.to_owned(),
                e.step.to_string(),
                e.event.map(|k| k.to_string()).unwrap_or_default(),
                e.workload.to_string(),
                e.request_size.to_string(),
                e.file_size.to_string(),
                outcome.to_owned(),
                e.server
                    .as_ref()
                    .map(ToString::to_string)
                    .unwrap_or_default(),
            ];
            for l in &e.loads {
                row.push(l.cache_in_use.to_string());
                row.push(l.max_degradation.to_string());
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per (sequence, α) run.
pub fn write_summary_csv<W: Write>(reports: &[RunReport], writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    out.write_record([
        "sequence",
        "alpha",
        "average_min_throughput",
        "objective",
        "oracle_objective",
        "queued",
    ])?;
    for r in reports {
        out.write_record([
            r.sequence.clone(),
            r.alpha.to_string(),
            r.average_min_throughput.to_string(),
            r.objective.to_string(),
            r.oracle_objective
                .map(|o| o.to_string())
                .unwrap_or_default(),
            r.queued_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Bounds for [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomScenarioLimits {
    pub min_servers: usize,
    pub max_servers: usize,
    pub max_initial_per_server: usize,
    pub max_arrivals: usize,
}

impl Default for RandomScenarioLimits {
    fn default() -> Self {
        Self {
            min_servers: 2,
            max_servers: 4,
            max_initial_per_server: 3,
            max_arrivals: 8,
        }
    }
}

pub const RANDOM_SEQUENCE: &str = "random";

/// Any grid point with rs ≤ fs, uniformly.
pub fn random_grid_workload(rng: &mut impl Rng, id: impl Into<WorkloadId>) -> WorkloadSpec {
    let rs = rng.gen_range(0..RS_GRID_LEN);
    let fs = rng.gen_range(rs..FS_GRID_LEN);
    let p = GridPoint::new(rs, fs).expect("indices within grid");
    WorkloadSpec::write(id, p.request_size(), p.file_size())
        .and_then(|w| w.with_base_runtime(DEFAULT_BASE_RUNTIME))
        .expect("grid workloads are valid")
}

/// A seeded random instance: M1/M2 servers sharing `table`, feasible initial
/// loads, α drawn from {1.0, 1.3, 1.5}, and one arrival sequence named
/// [`RANDOM_SEQUENCE`].
pub fn random_scenario(
    seed: u64,
    limits: RandomScenarioLimits,
    table: Arc<DegradationTable>,
) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = *[1.0, 1.3, 1.5].choose(&mut rng).expect("non-empty");
    let count = rng.gen_range(limits.min_servers..=limits.max_servers);
    let servers: Vec<Server> = (0..count)
        .map(|i| {
            let id = format!("S{i}");
            let profile = if rng.gen_bool(0.5) {
                ServerProfile::m1(id)
            } else {
                ServerProfile::m2(id)
            };
            Server::new(profile.with_alpha(alpha), Arc::clone(&table))
        })
        .collect();
    let mut initial = PlacementState::new(count);
    for (i, server) in servers.iter().enumerate() {
        let wanted = rng.gen_range(0..=limits.max_initial_per_server);
        for k in 0..wanted {
            let w = random_grid_workload(&mut rng, format!("S{i}/init{k}").as_str());
            let mut trial = initial.residents(i).to_vec();
            trial.push(w.clone());
            let loads = allocator::server_loads(server, &trial).expect("grid workloads");
            if loads.is_feasible() {
                initial.place(i, w).expect("fresh id");
            }
        }
    }
    let arrivals = rng.gen_range(1..=limits.max_arrivals);
    let events = (0..arrivals)
        .map(|k| Event::Arrive(random_grid_workload(&mut rng, format!("a{k}").as_str())))
        .collect();
    Scenario {
        servers,
        initial,
        sequences: BTreeMap::from([(RANDOM_SEQUENCE.to_owned(), events)]),
        alpha_sweep: vec![alpha],
        exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
        selection: SelectionRule::GlobalSum,
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KIB, MIB};

    fn example() -> Scenario {
        Scenario::from_config(&four_server_example()).unwrap()
    }

    #[test]
    fn bundled_scenario_resolves() {
        let s = example();
        assert_eq!(s.servers.len(), 4);
        assert_eq!(s.sequences.len(), 3);
        assert_eq!(s.alpha_sweep, vec![1.0, 1.3, 1.5]);
        for i in 0..4 {
            assert_eq!(s.initial.residents(i).len(), 3);
        }
        let first = &s.initial.residents(0)[0];
        assert_eq!((first.request_size, first.file_size), (32 * KIB, 64 * KIB));
        assert_eq!(first.operation, Operation::Write);
        assert_eq!(first.base_runtime, Some(1.0));
    }

    #[test]
    fn off_grid_sequence_entry_is_snapped_with_warning() {
        let s = example();
        let Event::Arrive(w) = &s.sequence("3").unwrap()[1] else {
            panic!("arrival expected")
        };
        assert_eq!((w.request_size, w.file_size), (8 * KIB, 4 * MIB));
        assert_eq!(s.warnings.len(), 1, "{:?}", s.warnings);
        assert!(s.warnings[0].contains("3MB"));
    }

    #[test]
    fn snapping_disabled_rejects_off_grid() {
        let mut config = four_server_example();
        config.options.snap = false;
        assert!(matches!(
            Scenario::from_config(&config),
            Err(Error::OffGridValue { .. })
        ));
    }

    #[test]
    fn unknown_sequence() {
        assert!(matches!(
            run_scenario(&example(), "nope", 1.3),
            Err(Error::UnknownSequence(_))
        ));
    }

    #[test]
    fn empty_sequence_reports_initial_state() {
        let mut config = four_server_example();
        config.sequences.insert("empty".into(), Vec::new());
        let s = Scenario::from_config(&config).unwrap();
        let r = run_scenario(&s, "empty", 1.3).unwrap();
        assert!(r.trace.is_empty());
        let servers = s.servers_with_alpha(1.3).unwrap();
        assert_eq!(r.objective, objective(&servers, &s.initial).unwrap().total);
        assert_eq!(r.oracle_objective, Some(r.objective));
    }

    #[test]
    fn sequence_one_traces_every_arrival() {
        let s = example();
        let r = run_scenario(&s, "1", 1.3).unwrap();
        assert_eq!(r.trace.len(), 5);
        assert!(r.trace.iter().all(|e| e.loads.len() == 4));
        assert!((0.0..=1.0).contains(&r.average_min_throughput));
        assert_eq!(replay(&s, &r).unwrap().resident_ids(), {
            r.servers
                .iter()
                .map(|x| x.residents.clone())
                .collect::<Vec<_>>()
        });
    }

    #[test]
    fn infeasible_initial_state_rejected() {
        let config = ScenarioConfig::from_json(
            r#"{
                "servers": [{ "id": "tiny", "preset": "M1", "llc_size": "64KB",
                              "initial": [["32KB", "32KB"], ["32KB", "32KB"]] }],
                "sequences": { "1": [] },
                "generator": { "baseline_coefficient": 0.0, "cache_penalty": 0.0, "noise_amplitude": 0.0 }
            }"#,
        )
        .unwrap();
        let s = Scenario::from_config(&config).unwrap();
        assert!(matches!(
            run_scenario(&s, "1", 1.0),
            Err(Error::InconsistentInitialState { .. })
        ));
        assert!(run_scenario(&s, "1", 2.0).is_ok());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let config = ScenarioConfig::from_json(
            r#"{
                "servers": [{ "id": "a", "preset": "M2", "initial": [{ "id": "x", "rs": 1024, "fs": 1024 }] }],
                "sequences": { "1": [{ "id": "x", "rs": 1024, "fs": 2048 }] }
            }"#,
        )
        .unwrap();
        assert!(matches!(
            Scenario::from_config(&config),
            Err(Error::DuplicateWorkload(_))
        ));
    }

    #[test]
    fn releases_retry_the_queue() {
        let config = ScenarioConfig::from_json(
            r#"{
                "servers": [{ "id": "a", "preset": "M1", "llc_size": "1MB", "alpha": 1.0 }],
                "sequences": { "1": [
                    { "id": "x", "rs": "256KB", "fs": "512KB" },
                    { "id": "y", "rs": "512KB", "fs": "512KB" },
                    { "release": "x" }
                ] },
                "generator": { "baseline_coefficient": 0.0, "cache_penalty": 0.0, "noise_amplitude": 0.0 }
            }"#,
        )
        .unwrap();
        let s = Scenario::from_config(&config).unwrap();
        let r = run_scenario(&s, "1", 1.0).unwrap();
        let outcomes: Vec<_> = r
            .trace
            .iter()
            .map(|e| (e.workload.0.as_str(), e.outcome))
            .collect();
        assert_eq!(
            outcomes,
            vec![
                ("x", TraceOutcome::Placed),
                ("y", TraceOutcome::Queued),
                ("x", TraceOutcome::Released),
                ("y", TraceOutcome::Placed),
            ]
        );
        assert_eq!(r.trace[3].event, None);
        assert_eq!(r.oracle_objective, None);
        let final_state = replay(&s, &r).unwrap();
        assert_eq!(
            final_state.resident_ids(),
            vec![vec![WorkloadId::from("y")]]
        );
        assert!(matches!(
            compare_with_oracle(&s, "1", 1.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn summary_csv_has_one_row_per_run() {
        let s = example();
        let reports: Vec<_> = ["1", "2"]
            .iter()
            .map(|q| run_scenario(&s, q, 1.3).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_summary_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("sequence,alpha,average_min_throughput"));
    }

    #[test]
    fn decisions_csv_columns() {
        let s = example();
        let r = run_scenario(&s, "1", 1.3).unwrap();
        let mut buf = Vec::new();
        write_decisions_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.ends_with("Server4_cache_in_use,Server4_max_degradation"));
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn random_scenarios_are_deterministic_and_feasible() {
        let table = Arc::new(DegradationTable::uniform(6 * MIB, 0.1).unwrap());
        let a = random_scenario(3, RandomScenarioLimits::default(), Arc::clone(&table));
        let b = random_scenario(3, RandomScenarioLimits::default(), table);
        assert_eq!(a.initial, b.initial);
        assert_eq!(a.sequences, b.sequences);
        a.check_initial(a.alpha_sweep[0]).unwrap();
    }
}
