//! Digital twins: deep copies of a world that evaluate candidate decisions
//! before they are committed to the physical one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::TaskId;
use crate::controller::Priority;
use crate::harness::trace::TraceHash;
use crate::ids::{FlowId, LinkId, NodeId, TenantId, Tick};
use crate::world::{World, WorldError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("cannot spawn a twin in the middle of tick {0}")]
    MidTickSpawn(Tick),
    #[error("decision does not resolve: {0}")]
    UnresolvableDecision(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("delta was evaluated at tick {snapshot}, world is at tick {now}")]
    StaleDelta { snapshot: Tick, now: Tick },
    #[error("delta was evaluated for a different decision")]
    MismatchedDelta,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Reroute {
        flow: FlowId,
        path: Vec<NodeId>,
    },
    SetSlice {
        tenant: TenantId,
        links: BTreeSet<LinkId>,
        share: u32,
        priority: Priority,
    },
    PlaceTask {
        task: TaskId,
        node: NodeId,
    },
    InjectRepair {
        node: NodeId,
    },
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Reroute { flow, path } => write!(f, "reroute {flow} [{}]", join(path)),
            Decision::SetSlice {
                tenant,
                links,
                share,
                priority,
            } => write!(
                f,
                "slice {tenant} [{}] share={share} {priority:?}",
                join(links)
            ),
            Decision::PlaceTask { task, node } => write!(f, "place task {task} on {node}"),
            Decision::InjectRepair { node } => write!(f, "repair {node}"),
        }
    }
}

/// Candidate minus baseline, over the same horizon from the same snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub decision: Decision,
    pub snapshot_tick: Tick,
    pub horizon: Tick,
    pub delivered_units: i64,
    /// Mean delivery age of the units delivered within the horizon (0 when
    /// none were).
    pub mean_latency: f64,
    pub makespan: i64,
    pub violations: i64,
}

impl MetricsDelta {
    pub fn is_zero(&self) -> bool {
        self.delivered_units == 0
            && self.mean_latency == 0.0
            && self.makespan == 0
            && self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptancePolicy {
    pub max_violations: i64,
    pub min_delivered: i64,
}

impl AcceptancePolicy {
    pub fn accepts(&self, d: &MetricsDelta) -> bool {
        d.violations <= self.max_violations && d.delivered_units >= self.min_delivered
    }
}

/// A deep copy of a world. Node ids map to themselves.
#[derive(Debug, Clone)]
pub struct TwinWorld {
    world: World,
    twin_seed: u64,
}

pub fn spawn_twin(world: &World) -> Result<TwinWorld, SandboxError> {
    if world.in_tick() {
        return Err(SandboxError::MidTickSpawn(world.now()));
    }
    Ok(TwinWorld {
        world: world.clone(),
        twin_seed: world.seed(),
    })
}

/// A twin whose random stream restarts from `seed`.
pub fn spawn_twin_seeded(world: &World, seed: u64) -> Result<TwinWorld, SandboxError> {
    let mut t = spawn_twin(world)?;
    if seed != world.seed() {
        t.world.set_rng_seed(seed);
        t.twin_seed = seed;
    }
    Ok(t)
}

impl TwinWorld {
    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn twin_seed(&self) -> u64 {
        self.twin_seed
    }

    /// Physical to twin node mapping.
    pub fn mapping(&self) -> BTreeMap<NodeId, NodeId> {
        self.world.topology().node_ids().map(|n| (n, n)).collect()
    }

    pub fn run(&mut self, ticks: Tick) -> Result<(), SandboxError> {
        Ok(self.world.run(ticks)?)
    }

    pub fn trace_hash(&self) -> TraceHash {
        self.world.trace_hash()
    }
}

struct Snapshot {
    delivered: u64,
    age_sum: u64,
    makespan: Tick,
    violations: u64,
}

fn snapshot(w: &World) -> Snapshot {
    let c = w.counters();
    Snapshot {
        delivered: c.delivered,
        age_sum: c.age_sum,
        makespan: w.composition_makespan(),
        violations: w.violations(),
    }
}

fn mean(from: &Snapshot, to: &Snapshot) -> f64 {
    let n = to.delivered - from.delivered;
    if n == 0 {
        0.0
    } else {
        (to.age_sum - from.age_sum) as f64 / n as f64
    }
}

/// Runs the twin with and without `d` for `horizon` ticks. The decision is
/// applied at the first tick boundary, as a commit would apply it.
pub fn evaluate(
    twin: &TwinWorld,
    d: &Decision,
    horizon: Tick,
) -> Result<MetricsDelta, SandboxError> {
    if horizon == 0 {
        return Err(SandboxError::ZeroHorizon);
    }
    twin.world.clone().apply_decision(d)?;
    let start = snapshot(&twin.world);
    let mut baseline = twin.world.clone();
    let mut candidate = twin.world.clone();
    candidate.schedule_decision(d.clone());
    baseline.run(horizon)?;
    candidate.run(horizon)?;
    let (b, c) = (snapshot(&baseline), snapshot(&candidate));
    Ok(MetricsDelta {
        decision: d.clone(),
        snapshot_tick: twin.world.now(),
        horizon,
        delivered_units: c.delivered as i64 - b.delivered as i64,
        mean_latency: mean(&start, &c) - mean(&start, &b),
        makespan: c.makespan as i64 - b.makespan as i64,
        violations: c.violations as i64 - b.violations as i64,
    })
}

/// Commits `d` under the default policy.
pub fn commit(world: &mut World, d: &Decision, delta: &MetricsDelta) -> Result<bool, SandboxError> {
    commit_with_policy(world, d, delta, &AcceptancePolicy::default())
}

/// Queues `d` for the next tick boundary if `policy` accepts `delta`.
pub fn commit_with_policy(
    world: &mut World,
    d: &Decision,
    delta: &MetricsDelta,
    policy: &AcceptancePolicy,
) -> Result<bool, SandboxError> {
    if delta.snapshot_tick != world.now() || world.in_tick() {
        return Err(SandboxError::StaleDelta {
            snapshot: delta.snapshot_tick,
            now: world.now(),
        });
    }
    if &delta.decision != d {
        return Err(SandboxError::MismatchedDelta);
    }
    if !policy.accepts(delta) {
        return Ok(false);
    }
    world.clone().apply_decision(d)?;
    world.schedule_decision(d.clone());
    Ok(true)
}
