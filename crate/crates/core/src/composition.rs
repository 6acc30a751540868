//! Service registry, task DAGs and a load-aware list scheduler.
//!
//! Tasks are placed in topological order (ties by task id) on the provider
//! with the earliest estimated finish:
//! `max(input arrival, busy_until) + ceil(cost / capacity)`, ties by node id.
//! An input produced on another node arrives after
//! `shortest health-aware latency * transfer size` ticks.
//!
//! [`Execution`] replays a schedule tick by tick against the live world. It
//! keeps each node's planned task order, so a healthy world runs exactly as
//! planned. A provider found failed when its task is due is replaced for that
//! task alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, Tick};
use crate::topology::{Health, Link, Node, NodeKind, Topology};

pub type TaskId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositionError {
    #[error("service {0} already registered")]
    DuplicateService(String),
    #[error("service {0} has no provider with compute capacity")]
    NoProviders(String),
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("service {0} must have a positive cost")]
    ZeroCost(String),
    #[error("task {0} declared twice")]
    DuplicateTask(TaskId),
    #[error("edge references unknown task {0}")]
    UnknownTask(TaskId),
    #[error("composition graph has a cycle")]
    CyclicDag,
    #[error("no provider for task {0} is reachable from its inputs")]
    UnreachableProvider(TaskId),
    #[error("no healthy provider left for task {0}")]
    NoFeasibleProvider(TaskId),
    #[error("{node} does not provide the service of task {task}")]
    NotAProvider { task: TaskId, node: NodeId },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDef {
    pub name: String,
    /// Service units per invocation.
    pub cost: u32,
    pub providers: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    services: BTreeMap<String, ServiceDef>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `def`, keeping only providers with compute capacity.
    pub fn register_service(
        &mut self,
        topo: &Topology,
        mut def: ServiceDef,
    ) -> Result<(), CompositionError> {
        if self.services.contains_key(&def.name) {
            return Err(CompositionError::DuplicateService(def.name));
        }
        if def.cost == 0 {
            return Err(CompositionError::ZeroCost(def.name));
        }
        for &p in &def.providers {
            if !topo.contains(p) {
                return Err(CompositionError::UnknownNode(p));
            }
        }
        def.providers
            .retain(|&p| topo.node(p).is_some_and(Node::can_host));
        if def.providers.is_empty() {
            return Err(CompositionError::NoProviders(def.name));
        }
        self.services.insert(def.name.clone(), def);
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&ServiceDef> {
        self.services.get(name)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceDef> {
        self.services.values()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub service: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: TaskId,
    pub to: TaskId,
    /// Units moved from producer to consumer.
    pub size: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionDag {
    pub tasks: Vec<Task>,
    pub edges: Vec<DagEdge>,
}

impl CompositionDag {
    /// `n` independent tasks of one service.
    pub fn independent(n: u32, service: &str) -> Self {
        CompositionDag {
            tasks: (0..n)
                .map(|id| Task {
                    id,
                    service: service.to_string(),
                })
                .collect(),
            edges: Vec::new(),
        }
    }

    fn task(&self, id: TaskId) -> &Task {
        self.tasks.iter().find(|t| t.id == id).expect("validated")
    }

    fn inputs(&self, id: TaskId) -> impl Iterator<Item = &DagEdge> {
        self.edges.iter().filter(move |e| e.to == id)
    }

    /// Kahn's algorithm, ready tasks taken by ascending id.
    pub fn topological_order(&self) -> Result<Vec<TaskId>, CompositionError> {
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                return Err(CompositionError::DuplicateTask(t.id));
            }
        }
        let mut indeg: BTreeMap<TaskId, usize> = ids.iter().map(|&i| (i, 0)).collect();
        for e in &self.edges {
            for end in [e.from, e.to] {
                if !ids.contains(&end) {
                    return Err(CompositionError::UnknownTask(end));
                }
            }
            *indeg.get_mut(&e.to).unwrap() += 1;
        }
        let mut ready: BTreeSet<TaskId> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&i, _)| i)
            .collect();
        let mut order = Vec::with_capacity(ids.len());
        while let Some(t) = ready.pop_first() {
            order.push(t);
            for e in self.edges.iter().filter(|e| e.from == t) {
                let d = indeg.get_mut(&e.to).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.to);
                }
            }
        }
        if order.len() != ids.len() {
            return Err(CompositionError::CyclicDag);
        }
        Ok(order)
    }

    /// Widest level of the longest-path layering. A lower bound on the
    /// number of tasks that can run at once; exact for independent tasks.
    pub fn level_width(&self) -> Result<usize, CompositionError> {
        let order = self.topological_order()?;
        let mut level: BTreeMap<TaskId, usize> = BTreeMap::new();
        for &t in &order {
            let l = self
                .inputs(t)
                .map(|e| level[&e.from] + 1)
                .max()
                .unwrap_or(0);
            level.insert(t, l);
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for l in level.values() {
            *counts.entry(*l).or_default() += 1;
        }
        Ok(counts.values().copied().max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: TaskId,
    pub node: NodeId,
    pub start: Tick,
    pub end: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLoad {
    pub node: NodeId,
    pub queue_len: u32,
    pub busy_until: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub assignments: BTreeMap<TaskId, Assignment>,
    pub makespan: Tick,
    pub loads: BTreeMap<NodeId, NodeLoad>,
    /// Placement order, which is also each node's run order.
    pub order: Vec<TaskId>,
}

fn service_ticks(cost: u32, node: &Node) -> Tick {
    (cost as Tick).div_ceil(node.compute_capacity.max(1) as Tick)
}

/// Health-aware point-to-point latency with a per-source cache.
struct Latencies<'a> {
    topo: &'a Topology,
    cache: BTreeMap<(NodeId, NodeId), Option<u64>>,
}

impl<'a> Latencies<'a> {
    fn new(topo: &'a Topology) -> Self {
        Latencies {
            topo,
            cache: BTreeMap::new(),
        }
    }

    fn between(&mut self, a: NodeId, b: NodeId) -> Option<u64> {
        if a == b {
            return Some(0);
        }
        let topo = self.topo;
        *self.cache.entry((a, b)).or_insert_with(|| {
            if topo.health(a).is_failed() || topo.health(b).is_failed() {
                return None;
            }
            let alive = |l: &Link| !topo.health(l.a).is_failed() && !topo.health(l.b).is_failed();
            let weight = |l: &Link| topo.effective_latency(l);
            topo.shortest_path_by(a, b, &alive, &weight).map(|p| {
                p.nodes
                    .windows(2)
                    .map(|w| topo.effective_latency(topo.link_between(w[0], w[1]).unwrap()))
                    .sum()
            })
        })
    }

    /// Time all inputs of a task reach `node`, given where and when each
    /// producer finished; `None` if some producer cannot reach it.
    fn arrival(&mut self, inputs: &[(NodeId, Tick, u32)], node: NodeId) -> Option<Tick> {
        let mut at = 0;
        for &(from, end, size) in inputs {
            let l = self.between(from, node)?;
            at = at.max(end + l * size as Tick);
        }
        Some(at)
    }
}

/// Best provider by (finish, node id) among `candidates`.
fn place_task(
    lat: &mut Latencies,
    topo: &Topology,
    cost: u32,
    candidates: &BTreeSet<NodeId>,
    inputs: &[(NodeId, Tick, u32)],
    busy: &BTreeMap<NodeId, Tick>,
    not_before: Tick,
) -> Option<(NodeId, Tick, Tick)> {
    let mut best: Option<(Tick, NodeId, Tick)> = None;
    for &n in candidates {
        let Some(node) = topo.node(n) else { continue };
        let Some(arrival) = lat.arrival(inputs, n) else {
            continue;
        };
        let start = arrival
            .max(busy.get(&n).copied().unwrap_or(0))
            .max(not_before);
        let end = start + service_ticks(cost, node);
        if best.is_none_or(|(e, bn, _)| (end, n) < (e, bn)) {
            best = Some((end, n, start));
        }
    }
    best.map(|(end, n, start)| (n, start, end))
}

impl Registry {
    pub fn schedule(
        &self,
        dag: &CompositionDag,
        topo: &Topology,
    ) -> Result<Schedule, CompositionError> {
        self.schedule_with_pins(dag, topo, 0, &BTreeMap::new(), &BTreeMap::new())
    }

    /// List schedule starting at `now` on nodes already busy until
    /// `busy_until`. Pinned tasks may only use their pinned node.
    pub fn schedule_with_pins(
        &self,
        dag: &CompositionDag,
        topo: &Topology,
        now: Tick,
        busy_until: &BTreeMap<NodeId, Tick>,
        pins: &BTreeMap<TaskId, NodeId>,
    ) -> Result<Schedule, CompositionError> {
        let order = dag.topological_order()?;
        let mut lat = Latencies::new(topo);
        let mut busy = busy_until.clone();
        let mut loads: BTreeMap<NodeId, NodeLoad> = BTreeMap::new();
        let mut assignments: BTreeMap<TaskId, Assignment> = BTreeMap::new();
        for &t in &order {
            let task = dag.task(t);
            let svc = self
                .lookup(&task.service)
                .ok_or_else(|| CompositionError::UnknownService(task.service.clone()))?;
            let candidates: BTreeSet<NodeId> = match pins.get(&t) {
                Some(&n) if svc.providers.contains(&n) => BTreeSet::from([n]),
                Some(&n) => return Err(CompositionError::NotAProvider { task: t, node: n }),
                None => svc
                    .providers
                    .iter()
                    .copied()
                    .filter(|&p| !topo.health(p).is_failed())
                    .collect(),
            };
            let inputs: Vec<(NodeId, Tick, u32)> = dag
                .inputs(t)
                .map(|e| {
                    let a = assignments[&e.from];
                    (a.node, a.end, e.size)
                })
                .collect();
            let (node, start, end) =
                place_task(&mut lat, topo, svc.cost, &candidates, &inputs, &busy, now)
                    .ok_or(CompositionError::UnreachableProvider(t))?;
            busy.insert(node, end);
            let load = loads.entry(node).or_insert(NodeLoad {
                node,
                queue_len: 0,
                busy_until: 0,
            });
            load.queue_len += 1;
            load.busy_until = end;
            assignments.insert(
                t,
                Assignment {
                    task: t,
                    node,
                    start,
                    end,
                },
            );
        }
        let makespan = assignments.values().map(|a| a.end).max().unwrap_or(now);
        Ok(Schedule {
            assignments,
            makespan,
            loads,
            order,
        })
    }
}

/// Checks non-overlap per node, precedence with transfer latency, and the
/// makespan definition against `topo` as it was at planning time.
pub fn validate_schedule(
    s: &Schedule,
    dag: &CompositionDag,
    registry: &Registry,
    topo: &Topology,
) -> Result<(), String> {
    let mut lat = Latencies::new(topo);
    let mut per_node: BTreeMap<NodeId, Vec<(Tick, Tick)>> = BTreeMap::new();
    for a in s.assignments.values() {
        let svc = registry
            .lookup(&dag.task(a.task).service)
            .ok_or("unknown service")?;
        if !svc.providers.contains(&a.node) {
            return Err(format!("task {} on non-provider {}", a.task, a.node));
        }
        let dur = service_ticks(svc.cost, topo.node(a.node).ok_or("unknown node")?);
        if a.end != a.start + dur {
            return Err(format!("task {} duration mismatch", a.task));
        }
        per_node.entry(a.node).or_default().push((a.start, a.end));
    }
    for (n, mut iv) in per_node {
        iv.sort();
        if iv.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(format!("overlap on {n}"));
        }
    }
    for e in &dag.edges {
        let (p, c) = (s.assignments[&e.from], s.assignments[&e.to]);
        let l = lat.between(p.node, c.node).ok_or("unreachable transfer")?;
        if c.start < p.end + l * e.size as Tick {
            return Err(format!(
                "task {} starts before its input from {}",
                e.to, e.from
            ));
        }
    }
    let max_end = s.assignments.values().map(|a| a.end).max().unwrap_or(0);
    if !s.assignments.is_empty() && s.makespan != max_end {
        return Err("makespan is not the latest end".into());
    }
    Ok(())
}

/// Moves a transfer of `size` units between two nodes; implemented by the
/// world to carry transfers as real flows.
pub trait TransferSink {
    fn open(&mut self, from: NodeId, to: NodeId, size: u32) -> Option<u64>;
    /// `Some(true)` once delivered, `Some(false)` if it can never arrive.
    fn done(&self, handle: u64) -> Option<bool>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Waiting,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositionEvent {
    Started {
        task: TaskId,
        node: NodeId,
        end: Tick,
    },
    Finished {
        task: TaskId,
        node: NodeId,
    },
    Replaced {
        task: TaskId,
        from: NodeId,
        to: NodeId,
    },
    Infeasible {
        task: TaskId,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LiveTask {
    node: NodeId,
    status: TaskStatus,
    start: Tick,
    end: Tick,
    /// Transfers into this task: (edge index, flow handle or ready time).
    pending_inputs: Vec<(usize, Input)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
enum Input {
    Flow(u64),
    ReadyAt(Tick),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub makespan: Tick,
    pub actual: BTreeMap<TaskId, Assignment>,
    pub utilization: BTreeMap<NodeId, f64>,
    pub replaced: Vec<TaskId>,
    pub failed: Vec<TaskId>,
}

/// Tick-by-tick execution of a schedule against the live world.
#[derive(Debug, Clone)]
pub struct Execution {
    dag: CompositionDag,
    costs: BTreeMap<TaskId, u32>,
    providers: BTreeMap<TaskId, BTreeSet<NodeId>>,
    tasks: BTreeMap<TaskId, LiveTask>,
    queues: BTreeMap<NodeId, Vec<TaskId>>,
    replaced: Vec<TaskId>,
    start_tick: Tick,
    planned_makespan: Tick,
}

impl Execution {
    pub fn new(registry: &Registry, dag: &CompositionDag, schedule: &Schedule) -> Self {
        let mut queues: BTreeMap<NodeId, Vec<TaskId>> = BTreeMap::new();
        let mut tasks = BTreeMap::new();
        let mut costs = BTreeMap::new();
        let mut providers = BTreeMap::new();
        for &t in &schedule.order {
            let a = schedule.assignments[&t];
            queues.entry(a.node).or_default().push(t);
            let svc = registry.lookup(&dag.task(t).service).expect("scheduled");
            costs.insert(t, svc.cost);
            providers.insert(t, svc.providers.clone());
            tasks.insert(
                t,
                LiveTask {
                    node: a.node,
                    status: TaskStatus::Waiting,
                    start: 0,
                    end: 0,
                    pending_inputs: Vec::new(),
                },
            );
        }
        let start_tick = schedule
            .assignments
            .values()
            .map(|a| a.start)
            .min()
            .unwrap_or(0);
        Execution {
            dag: dag.clone(),
            costs,
            providers,
            tasks,
            queues,
            replaced: Vec::new(),
            start_tick,
            planned_makespan: schedule.makespan,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.tasks
            .values()
            .all(|t| matches!(t.status, TaskStatus::Done | TaskStatus::Failed))
    }

    pub fn status(&self, t: TaskId) -> Option<&TaskStatus> {
        self.tasks.get(&t).map(|l| &l.status)
    }

    pub fn planned_makespan(&self) -> Tick {
        self.planned_makespan
    }

    /// Latest end among finished tasks.
    pub fn makespan(&self) -> Option<Tick> {
        self.tasks
            .values()
            .filter(|t| t.status == TaskStatus::Done)
            .map(|t| t.end)
            .max()
    }

    fn node_free(&self, n: NodeId, now: Tick) -> bool {
        self.tasks
            .values()
            .all(|t| !(t.node == n && t.status == TaskStatus::Running && t.end > now))
    }

    /// Advances execution to `now`. With a `sink`, transfers between distinct
    /// nodes travel as flows; otherwise they take latency times size.
    pub fn step(
        &mut self,
        now: Tick,
        topo: &Topology,
        mut sink: Option<&mut dyn TransferSink>,
    ) -> Vec<CompositionEvent> {
        let mut events = Vec::new();
        let mut lat = Latencies::new(topo);
        let order: Vec<TaskId> = self.dag.topological_order().expect("validated");

        // completions, and outgoing transfers
        for &t in &order {
            let lt = &self.tasks[&t];
            if lt.status != TaskStatus::Running || lt.end > now {
                continue;
            }
            let (node, end) = (lt.node, lt.end);
            self.tasks.get_mut(&t).unwrap().status = TaskStatus::Done;
            events.push(CompositionEvent::Finished { task: t, node });
            let outs: Vec<(usize, DagEdge)> = self
                .dag
                .edges
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, e)| e.from == t)
                .collect();
            for (i, e) in outs {
                let dest = self.tasks[&e.to].node;
                let input = match sink.as_deref_mut() {
                    Some(s) if dest != node && e.size > 0 => match s.open(node, dest, e.size) {
                        Some(h) => Input::Flow(h),
                        None => Input::ReadyAt(Tick::MAX),
                    },
                    _ => match lat.between(node, dest) {
                        Some(l) => Input::ReadyAt(end + l * e.size as Tick),
                        None => Input::ReadyAt(Tick::MAX),
                    },
                };
                self.tasks
                    .get_mut(&e.to)
                    .unwrap()
                    .pending_inputs
                    .push((i, input));
            }
        }

        // starts, in each node's planned order
        for &t in &order {
            let lt = &self.tasks[&t];
            if lt.status != TaskStatus::Waiting {
                continue;
            }
            let inputs: Vec<DagEdge> = self.dag.inputs(t).copied().collect();
            if inputs
                .iter()
                .any(|e| self.tasks[&e.from].status != TaskStatus::Done)
            {
                if inputs
                    .iter()
                    .any(|e| self.tasks[&e.from].status == TaskStatus::Failed)
                {
                    self.tasks.get_mut(&t).unwrap().status = TaskStatus::Failed;
                    events.push(CompositionEvent::Infeasible { task: t });
                }
                continue;
            }
            if now < self.start_tick {
                continue;
            }
            let planned = lt.node;
            let mut ready = true;
            let mut lost = false;
            for &(_, inp) in &lt.pending_inputs {
                match inp {
                    Input::ReadyAt(at) => ready &= at <= now,
                    Input::Flow(h) => {
                        let d = sink.as_deref().and_then(|s| s.done(h));
                        ready &= d == Some(true);
                        lost |= d == Some(false);
                    }
                }
            }
            if lost {
                self.tasks.get_mut(&t).unwrap().status = TaskStatus::Failed;
                events.push(CompositionEvent::Infeasible { task: t });
                continue;
            }
            let head = self.queues[&planned]
                .iter()
                .find(|q| self.tasks[q].status == TaskStatus::Waiting);
            if head != Some(&t) || !self.node_free(planned, now) {
                continue;
            }
            if !topo.health(planned).is_failed() {
                if !ready {
                    continue;
                }
                let cost = self.costs[&t];
                let node = topo.node(planned).unwrap();
                let dur = service_ticks(cost, node) * topo.health(planned).slowdown();
                let lt = self.tasks.get_mut(&t).unwrap();
                lt.status = TaskStatus::Running;
                lt.start = now;
                lt.end = now + dur;
                events.push(CompositionEvent::Started {
                    task: t,
                    node: planned,
                    end: now + dur,
                });
                continue;
            }
            // planned provider is down: re-place this task only
            let producers: Vec<(NodeId, Tick, u32)> = inputs
                .iter()
                .map(|e| {
                    let p = &self.tasks[&e.from];
                    (p.node, p.end, e.size)
                })
                .collect();
            let mut busy = BTreeMap::new();
            for l in self.tasks.values() {
                if l.status == TaskStatus::Running {
                    let b = busy.entry(l.node).or_insert(0);
                    *b = (*b).max(l.end);
                }
            }
            let candidates: BTreeSet<NodeId> = self.providers[&t]
                .iter()
                .copied()
                .filter(|&p| !topo.health(p).is_failed())
                .collect();
            match place_task(
                &mut lat,
                topo,
                self.costs[&t],
                &candidates,
                &producers,
                &busy,
                now,
            ) {
                Some((alt, start, _)) => {
                    self.queues.get_mut(&planned).unwrap().retain(|&x| x != t);
                    let q = self.queues.entry(alt).or_default();
                    let pos = q
                        .iter()
                        .position(|x| self.tasks[x].status == TaskStatus::Waiting)
                        .unwrap_or(q.len());
                    q.insert(pos, t);
                    let lt = self.tasks.get_mut(&t).unwrap();
                    lt.node = alt;
                    lt.pending_inputs = vec![(usize::MAX, Input::ReadyAt(start))];
                    self.replaced.push(t);
                    events.push(CompositionEvent::Replaced {
                        task: t,
                        from: planned,
                        to: alt,
                    });
                }
                None => {
                    self.tasks.get_mut(&t).unwrap().status = TaskStatus::Failed;
                    events.push(CompositionEvent::Infeasible { task: t });
                }
            }
        }
        events
    }

    /// Moves a task that has not started onto another of its providers.
    /// Inputs already produced are re-timed for the new node.
    pub fn reassign(
        &mut self,
        task: TaskId,
        node: NodeId,
        topo: &Topology,
    ) -> Result<(), CompositionError> {
        let lt = self
            .tasks
            .get(&task)
            .ok_or(CompositionError::UnknownTask(task))?;
        if !self.providers[&task].contains(&node) {
            return Err(CompositionError::NotAProvider { task, node });
        }
        if lt.status != TaskStatus::Waiting {
            return Err(CompositionError::BadParameter(format!(
                "task {task} has already started"
            )));
        }
        let old = lt.node;
        if old == node {
            return Ok(());
        }
        let order = self.dag.topological_order().expect("validated");
        let rank: BTreeMap<TaskId, usize> =
            order.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        self.queues.get_mut(&old).unwrap().retain(|&x| x != task);
        let q = self.queues.entry(node).or_default();
        let pos = q
            .iter()
            .position(|x| self.tasks[x].status == TaskStatus::Waiting && rank[x] > rank[&task])
            .unwrap_or(q.len());
        q.insert(pos, task);
        let mut lat = Latencies::new(topo);
        let mut inputs = Vec::new();
        for (i, e) in self
            .dag
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.to == task)
        {
            let p = &self.tasks[&e.from];
            if p.status != TaskStatus::Done {
                continue;
            }
            let at = if p.node == node {
                p.end
            } else {
                lat.between(p.node, node)
                    .map_or(Tick::MAX, |l| p.end + l * e.size as Tick)
            };
            inputs.push((i, Input::ReadyAt(at)));
        }
        let lt = self.tasks.get_mut(&task).unwrap();
        lt.node = node;
        lt.pending_inputs = inputs;
        Ok(())
    }

    /// Node a task is currently placed on.
    pub fn placement(&self, task: TaskId) -> Option<NodeId> {
        self.tasks.get(&task).map(|l| l.node)
    }

    pub fn report(&self) -> ExecutionReport {
        let actual: BTreeMap<TaskId, Assignment> = self
            .tasks
            .iter()
            .filter(|(_, l)| l.status == TaskStatus::Done)
            .map(|(&t, l)| {
                (
                    t,
                    Assignment {
                        task: t,
                        node: l.node,
                        start: l.start,
                        end: l.end,
                    },
                )
            })
            .collect();
        let makespan = actual.values().map(|a| a.end).max().unwrap_or(0);
        let mut utilization: BTreeMap<NodeId, f64> = BTreeMap::new();
        for a in actual.values() {
            *utilization.entry(a.node).or_default() += (a.end - a.start) as f64;
        }
        let span = makespan.saturating_sub(self.start_tick).max(1) as f64;
        for u in utilization.values_mut() {
            *u /= span;
        }
        ExecutionReport {
            makespan,
            actual,
            utilization,
            replaced: self.replaced.clone(),
            failed: self
                .tasks
                .iter()
                .filter(|(_, l)| l.status == TaskStatus::Failed)
                .map(|(&t, _)| t)
                .collect(),
        }
    }
}

/// Health changes applied at given ticks during [`execute`].
pub type FaultTimeline = BTreeMap<Tick, Vec<(NodeId, Health)>>;

/// Runs `schedule` to completion on a private copy of `topo`, applying
/// `faults` as their ticks come up.
pub fn execute(
    registry: &Registry,
    dag: &CompositionDag,
    schedule: &Schedule,
    topo: &Topology,
    faults: &FaultTimeline,
) -> Result<ExecutionReport, CompositionError> {
    let mut world = topo.clone();
    let mut ex = Execution::new(registry, dag, schedule);
    let mut now = 0;
    // every task either starts or is re-placed within a bounded wait
    let limit =
        schedule.makespan.saturating_mul(4) + faults.keys().max().copied().unwrap_or(0) + 1024;
    while !ex.is_finished() && now <= limit {
        for (n, h) in faults.get(&now).into_iter().flatten() {
            world
                .set_health(*n, *h)
                .map_err(|_| CompositionError::UnknownNode(*n))?;
        }
        for ev in ex.step(now, &world, None) {
            if let CompositionEvent::Infeasible { task } = ev {
                return Err(CompositionError::NoFeasibleProvider(task));
            }
        }
        if ex.is_finished() {
            break;
        }
        now += 1;
    }
    Ok(ex.report())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupPoint {
    pub m: u32,
    pub makespan: Tick,
    pub speedup: f64,
}

/// Makespan of `n_tasks` independent tasks of cost `cost` on `m` identical
/// unit-capacity controller execution spaces, for each `m` in `instances`.
pub fn speedup_curve(
    n_tasks: u32,
    instances: &[u32],
    cost: u32,
) -> Result<Vec<SpeedupPoint>, CompositionError> {
    let makespan_for = |m: u32| -> Result<Tick, CompositionError> {
        if m == 0 {
            return Err(CompositionError::BadParameter(
                "instance count must be >= 1".into(),
            ));
        }
        let mut topo = Topology::new();
        for i in 0..m {
            topo.add_node(Node::new(i, NodeKind::ControllerVes, 1))
                .map_err(|e| CompositionError::BadParameter(e.to_string()))?;
        }
        let mut reg = Registry::new();
        reg.register_service(
            &topo,
            ServiceDef {
                name: "work".into(),
                cost,
                providers: topo.node_ids().collect(),
            },
        )?;
        Ok(reg
            .schedule(&CompositionDag::independent(n_tasks, "work"), &topo)?
            .makespan)
    };
    let base = makespan_for(1)?;
    instances
        .iter()
        .map(|&m| {
            let makespan = makespan_for(m)?;
            Ok(SpeedupPoint {
                m,
                makespan,
                speedup: if makespan == 0 {
                    1.0
                } else {
                    base as f64 / makespan as f64
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
