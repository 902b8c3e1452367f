//! Placement of arriving workloads onto servers modelled as two-dimensional bins.
//!
//! One bin dimension is the share of α × CacheSize taken by competing data, the
//! other is the largest total degradation among the residents. A placement is
//! feasible while competing data stays within α × CacheSize and every resident
//! stays strictly below 50% degradation.
//!
//! [`greedy_allocate`] places one workload at a time on the feasible server that
//! keeps the sum of per-server average loads smallest. [`brute_force_allocate`]
//! enumerates every assignment of a whole sequence and serves as the reference
//! optimum for small instances.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::degradation::{max_degradation_on_points, SATURATION};
use crate::error::{Error, Result};
use crate::model::{GridPoint, PlacementState, Server, WorkloadId, WorkloadSpec};

pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 12;

/// Load of one server along both bin dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServerLoads {
    pub cache_in_use: f64,
    pub max_degradation: f64,
    pub avg_load: f64,
    pub clamped: bool,
    #[serde(skip)]
    within_cache: bool,
}

impl ServerLoads {
    pub const EMPTY: ServerLoads = ServerLoads {
        cache_in_use: 0.0,
        max_degradation: 0.0,
        avg_load: 0.0,
        clamped: false,
        within_cache: true,
    };

    /// Loads given directly as fractions, e.g. measured utilisation.
    pub fn from_fractions(cache_in_use: f64, max_degradation: f64) -> Self {
        Self {
            cache_in_use,
            max_degradation,
            avg_load: (cache_in_use + max_degradation) / 2.0,
            clamped: false,
            within_cache: cache_in_use <= 1.0,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.within_cache && !self.clamped && self.max_degradation < SATURATION
    }

    /// Relative throughput of the worst-off resident.
    pub fn min_relative_throughput(&self) -> f64 {
        1.0 - self.max_degradation
    }
}

fn loads_from_points(server: &Server, points: &[GridPoint], competing: u64) -> ServerLoads {
    let capacity = server.profile.cache_capacity();
    let cache_in_use = competing as f64 / capacity;
    let (max_degradation, clamped) = max_degradation_on_points(&server.table, points);
    ServerLoads {
        cache_in_use,
        max_degradation,
        avg_load: (cache_in_use + max_degradation) / 2.0,
        clamped,
        within_cache: competing as f64 <= capacity,
    }
}

fn grid_points(workloads: &[WorkloadSpec]) -> Result<Vec<GridPoint>> {
    workloads.iter().map(|w| w.require_grid_point()).collect()
}

fn competing(workloads: &[WorkloadSpec], server: &Server) -> u64 {
    workloads
        .iter()
        .map(|w| w.competing_bytes(server.profile.llc_size))
        .sum()
}

/// Cache share, worst resident degradation and their mean for one server.
pub fn server_loads(server: &Server, resident: &[WorkloadSpec]) -> Result<ServerLoads> {
    let points = grid_points(resident)?;
    Ok(loads_from_points(
        server,
        &points,
        competing(resident, server),
    ))
}

fn loads_with(
    server: &Server,
    resident: &[WorkloadSpec],
    extra: &WorkloadSpec,
) -> Result<ServerLoads> {
    let mut points = grid_points(resident)?;
    points.push(extra.require_grid_point()?);
    let bytes = competing(resident, server) + extra.competing_bytes(server.profile.llc_size);
    Ok(loads_from_points(server, &points, bytes))
}

fn all_loads(servers: &[Server], state: &PlacementState) -> Result<Vec<ServerLoads>> {
    servers
        .iter()
        .enumerate()
        .map(|(i, s)| server_loads(s, state.residents(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub total: f64,
}

/// Sum over all servers of the average load.
pub fn objective(servers: &[Server], state: &PlacementState) -> Result<ObjectiveValue> {
    Ok(ObjectiveValue {
        total: all_loads(servers, state)?.iter().map(|l| l.avg_load).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Minimise the sum of all servers' average loads after allocation.
    #[default]
    GlobalSum,
    /// Pick the server whose own post-allocation average is smallest.
    OwnAverage,
}

/// A server's loads before and after hypothetically receiving the workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub before: ServerLoads,
    pub after: ServerLoads,
}

/// Index of the chosen server among feasible candidates; ties go to the lowest index.
pub fn choose_server(candidates: &[Candidate], rule: SelectionRule) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.after.is_feasible() {
            continue;
        }
        let score = match rule {
            // the other servers' loads are unchanged, so the marginal increase
            // orders candidates exactly like the global sum
            SelectionRule::GlobalSum => c.after.avg_load - c.before.avg_load,
            SelectionRule::OwnAverage => c.after.avg_load,
        };
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
}

/// Sum of average loads over all servers if candidate `chosen` takes the workload.
pub fn global_objective(candidates: &[Candidate], chosen: usize) -> f64 {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == chosen {
                c.after.avg_load
            } else {
                c.before.avg_load
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Placed { server: usize },
    Queued,
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Outcome::Placed { .. } => serializer.serialize_str("placed"),
            Outcome::Queued => serializer.serialize_str("queued"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationDecision {
    pub workload: WorkloadId,
    pub outcome: Outcome,
    /// Loads of every server after the decision was committed.
    pub snapshot: Vec<ServerLoads>,
}

fn candidates_for(
    workload: &WorkloadSpec,
    servers: &[Server],
    state: &PlacementState,
) -> Result<(Vec<ServerLoads>, Vec<Candidate>)> {
    assert_eq!(
        servers.len(),
        state.server_count(),
        "server list and state disagree"
    );
    let before = all_loads(servers, state)?;
    let candidates = servers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Candidate {
                before: before[i],
                after: loads_with(s, state.residents(i), workload)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((before, candidates))
}

/// Servers that could take the workload without breaking either bound.
pub fn feasible_servers(
    workload: &WorkloadSpec,
    servers: &[Server],
    state: &PlacementState,
) -> Result<Vec<usize>> {
    let (_, candidates) = candidates_for(workload, servers, state)?;
    Ok(candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.after.is_feasible())
        .map(|(i, _)| i)
        .collect())
}

/// Places on the best feasible server without touching the queue.
fn try_place(
    workload: &WorkloadSpec,
    servers: &[Server],
    state: &mut PlacementState,
    rule: SelectionRule,
) -> Result<Option<(usize, Vec<ServerLoads>)>> {
    let (mut snapshot, candidates) = candidates_for(workload, servers, state)?;
    Ok(choose_server(&candidates, rule).map(|i| {
        state.push_resident(i, workload.clone());
        snapshot[i] = candidates[i].after;
        (i, snapshot)
    }))
}

/// Places an arriving workload, or queues it when no server can take it.
pub fn greedy_allocate(
    workload: &WorkloadSpec,
    servers: &[Server],
    state: &mut PlacementState,
    rule: SelectionRule,
) -> Result<AllocationDecision> {
    if state.contains(&workload.id) {
        return Err(Error::DuplicateWorkload(workload.id.clone()));
    }
    match try_place(workload, servers, state, rule)? {
        Some((server, snapshot)) => Ok(AllocationDecision {
            workload: workload.id.clone(),
            outcome: Outcome::Placed { server },
            snapshot,
        }),
        None => {
            state.enqueue(workload.clone())?;
            Ok(AllocationDecision {
                workload: workload.id.clone(),
                outcome: Outcome::Queued,
                snapshot: all_loads(servers, state)?,
            })
        }
    }
}

/// Removes a finished workload and retries the queue in FIFO order, pass after
/// pass, until a full pass places nothing. Returns the placements made.
pub fn release(
    id: &WorkloadId,
    servers: &[Server],
    state: &mut PlacementState,
    rule: SelectionRule,
) -> Result<Vec<AllocationDecision>> {
    if state.remove_resident(id).is_none() {
        return Err(Error::UnknownWorkload(id.clone()));
    }
    let mut decisions = Vec::new();
    loop {
        let mut placed_any = false;
        let mut position = 0;
        while position < state.queue().len() {
            let workload = state.queue()[position].clone();
            match try_place(&workload, servers, state, rule)? {
                Some((server, snapshot)) => {
                    state.remove_queued(position);
                    decisions.push(AllocationDecision {
                        workload: workload.id,
                        outcome: Outcome::Placed { server },
                        snapshot,
                    });
                    placed_any = true;
                }
                None => position += 1,
            }
        }
        if !placed_any {
            return Ok(decisions);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceOutcome {
    /// Server index per arrival, `None` when the arrival stays queued.
    pub assignment: Vec<Option<usize>>,
    pub queued: usize,
    pub objective: ObjectiveValue,
}

#[derive(Debug, Clone)]
struct Best {
    queued: usize,
    objective: f64,
    choices: Vec<usize>,
}

impl Best {
    fn cmp(&self, other: &Best) -> Ordering {
        self.queued
            .cmp(&other.queued)
            .then(self.objective.total_cmp(&other.objective))
            .then_with(|| self.choices.cmp(&other.choices))
    }
}

struct Search<'a> {
    servers: &'a [Server],
    arrivals: &'a [(GridPoint, Vec<u64>)],
    residents: Vec<Vec<GridPoint>>,
    competing: Vec<u64>,
    loads: Vec<ServerLoads>,
    choices: Vec<usize>,
    best: Option<Best>,
}

impl Search<'_> {
    fn queue_choice(&self) -> usize {
        self.servers.len()
    }

    /// Visits assignment vectors in lexicographic order (servers first, queue
    /// last) and keeps the first strictly better one, pruning infeasible
    /// prefixes and prefixes that already queue more than the incumbent.
    fn descend(&mut self, queued: usize) {
        if let Some(best) = &self.best {
            if queued > best.queued {
                return;
            }
        }
        let depth = self.choices.len();
        if depth == self.arrivals.len() {
            let objective: f64 = self.loads.iter().map(|l| l.avg_load).sum();
            let candidate = Best {
                queued,
                objective,
                choices: self.choices.clone(),
            };
            if self
                .best
                .as_ref()
                .is_none_or(|b| candidate.cmp(b) == Ordering::Less)
            {
                self.best = Some(candidate);
            }
            return;
        }
        for choice in 0..=self.queue_choice() {
            self.step(choice, queued);
        }
    }

    fn step(&mut self, choice: usize, queued: usize) {
        let depth = self.choices.len();
        if choice == self.queue_choice() {
            self.choices.push(choice);
            self.descend(queued + 1);
            self.choices.pop();
            return;
        }
        let (point, bytes) = &self.arrivals[depth];
        self.residents[choice].push(*point);
        let competing = self.competing[choice] + bytes[choice];
        let loads = loads_from_points(&self.servers[choice], &self.residents[choice], competing);
        if loads.is_feasible() {
            let saved_loads = self.loads[choice];
            let saved_competing = self.competing[choice];
            self.loads[choice] = loads;
            self.competing[choice] = competing;
            self.choices.push(choice);
            self.descend(queued);
            self.choices.pop();
            self.loads[choice] = saved_loads;
            self.competing[choice] = saved_competing;
        }
        self.residents[choice].pop();
    }
}

/// Exhaustive search over every assignment of `sequence` to a server or the queue.
///
/// Among assignments whose committed states all stay feasible, returns one with
/// the fewest queued arrivals, then the smallest objective, then the
/// lexicographically smallest assignment vector (queue ordered after servers).
pub fn brute_force_allocate(
    sequence: &[WorkloadSpec],
    servers: &[Server],
    initial: &PlacementState,
    limit: usize,
) -> Result<BruteForceOutcome> {
    if sequence.len() > limit {
        return Err(Error::SearchSpaceTooLarge {
            arrivals: sequence.len(),
            limit,
        });
    }
    assert_eq!(
        servers.len(),
        initial.server_count(),
        "server list and state disagree"
    );
    for (k, w) in sequence.iter().enumerate() {
        if initial.contains(&w.id) || sequence[..k].iter().any(|o| o.id == w.id) {
            return Err(Error::DuplicateWorkload(w.id.clone()));
        }
    }
    let arrivals = sequence
        .iter()
        .map(|w| {
            let bytes = servers
                .iter()
                .map(|s| w.competing_bytes(s.profile.llc_size))
                .collect();
            Ok((w.require_grid_point()?, bytes))
        })
        .collect::<Result<Vec<_>>>()?;
    let residents = (0..servers.len())
        .map(|i| grid_points(initial.residents(i)))
        .collect::<Result<Vec<_>>>()?;
    let competing_now: Vec<u64> = servers
        .iter()
        .enumerate()
        .map(|(i, s)| competing(initial.residents(i), s))
        .collect();
    let loads = all_loads(servers, initial)?;

    let new_search = || Search {
        servers,
        arrivals: &arrivals,
        residents: residents.clone(),
        competing: competing_now.clone(),
        loads: loads.clone(),
        choices: Vec::with_capacity(arrivals.len()),
        best: None,
    };

    let best = if arrivals.is_empty() {
        let mut search = new_search();
        search.descend(0);
        search.best
    } else {
        // split on the first arrival's choice; the reduction is order independent
        (0..=servers.len())
            .into_par_iter()
            .filter_map(|choice| {
                let mut search = new_search();
                search.step(choice, 0);
                search.best
            })
            .min_by(|a, b| a.cmp(b))
    }
    .expect("queueing every arrival is always a valid assignment");

    let queue = servers.len();
    Ok(BruteForceOutcome {
        assignment: best
            .choices
            .iter()
            .map(|&c| (c != queue).then_some(c))
            .collect(),
        queued: best.queued,
        objective: ObjectiveValue {
            total: best.objective,
        },
    })
}

/// Applies an assignment vector produced by [`brute_force_allocate`].
pub fn apply_assignment(
    sequence: &[WorkloadSpec],
    assignment: &[Option<usize>],
    servers: &[Server],
    state: &mut PlacementState,
) -> Result<Vec<AllocationDecision>> {
    let mut decisions = Vec::with_capacity(sequence.len());
    for (workload, choice) in sequence.iter().zip(assignment) {
        let outcome = match *choice {
            Some(server) => {
                state.place(server, workload.clone())?;
                Outcome::Placed { server }
            }
            None => {
                state.enqueue(workload.clone())?;
                Outcome::Queued
            }
        };
        decisions.push(AllocationDecision {
            workload: workload.id.clone(),
            outcome,
            snapshot: all_loads(servers, state)?,
        });
    }
    Ok(decisions)
}

/// Every server's loads in the current state.
pub fn snapshot(servers: &[Server], state: &PlacementState) -> Result<Vec<ServerLoads>> {
    all_loads(servers, state)
}

/// Checks both bin bounds on every server.
pub fn state_is_feasible(servers: &[Server], state: &PlacementState) -> Result<bool> {
    Ok(all_loads(servers, state)?
        .iter()
        .all(ServerLoads::is_feasible))
}
