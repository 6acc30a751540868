//! The simulated world and its per-tick run loop.
//!
//! Every tick runs the same phases in the same order:
//!
//! 1. committed decisions and scheduled faults are applied;
//! 2. controllers ingest the southbound reports the bus delivered last tick;
//! 3. health digests are exchanged when due;
//! 4. scheduled flows are admitted;
//! 5. flows whose path crosses a suspect get a clone decision;
//! 6. the flow engine moves units;
//! 7. the composition executor starts and finishes tasks;
//! 8. nodes publish reports, the engine publishes its events and westbound
//!    traffic is mirrored, then the bus delivers everything stamped this tick;
//! 9. one metrics record is taken.
//!
//! Phases 1-5 form [`World::begin_tick`] and 6-9 [`World::end_tick`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{
    CompositionDag, CompositionError, CompositionEvent, Execution, Registry, Schedule, TransferSink,
};
use crate::controller::{Observation, SouthboundReport};
use crate::farm::Farm;
use crate::flow::{FlowEngine, FlowEvent, FlowState, LinkService};
use crate::harness::bus::{Bus, Publisher, SubscriptionId};
use crate::harness::metrics::{
    CompositionSummary, DecisionSummary, FlowOutcome, HealthEvent, MetricsRecord, Summary,
};
use crate::harness::trace::{TraceHash, TraceHasher};
use crate::ids::{ControllerId, FlowId, NodeId, TenantId, Tick};
use crate::sandbox::{Decision, SandboxError};
use crate::topology::{Health, Topology};

pub const EVENTS_TOPIC: &str = "events/flows";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("tick {tick}: {message}")]
    Abort { tick: Tick, message: String },
    #[error("tick {0} is already in progress")]
    InTick(Tick),
    #[error("no tick in progress")]
    NotInTick,
}

/// A flow the world opens at `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub tenant: TenantId,
    pub origin: NodeId,
    pub dest: NodeId,
    pub units: u32,
    pub start: Tick,
}

#[derive(Debug, Clone)]
struct CompositionRun {
    tenant: TenantId,
    materialize: bool,
    exec: Execution,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub delivered: u64,
    pub dropped: u64,
    pub cloned: u64,
    /// Sum of delivery ages over every delivered unit.
    pub age_sum: u64,
    pub decisions: u64,
}

#[derive(Debug, Clone)]
struct Subscriptions {
    reports: Vec<(ControllerId, SubscriptionId)>,
    events: SubscriptionId,
    west: SubscriptionId,
}

/// Physical state plus everything needed to advance it deterministically.
/// Cloning a world yields an independent copy that evolves identically.
#[derive(Debug, Clone)]
pub struct World {
    topo: Topology,
    farm: Farm,
    flows: FlowEngine,
    bus: Bus,
    subs: Subscriptions,
    rng: ChaCha8Rng,
    seed: u64,
    now: Tick,
    in_tick: bool,
    trace: TraceHasher,
    faults: BTreeMap<Tick, Vec<(NodeId, Health)>>,
    requests: Vec<FlowRequest>,
    admitted: BTreeMap<usize, Result<FlowId, String>>,
    composition: Option<CompositionRun>,
    pending: Vec<Decision>,
    counters: Counters,
    metrics: Vec<MetricsRecord>,
    health_events: Vec<HealthEvent>,
    link_service: Vec<LinkService>,
    last_events: Vec<FlowEvent>,
    epoch: u64,
}

fn abort(tick: Tick, e: impl std::fmt::Display) -> WorldError {
    WorldError::Abort {
        tick,
        message: e.to_string(),
    }
}

/// Carries composition transfers as tenant flows.
struct FlowSink<'a> {
    topo: &'a Topology,
    farm: &'a mut Farm,
    flows: &'a mut FlowEngine,
    tenant: TenantId,
}

impl TransferSink for FlowSink<'_> {
    fn open(&mut self, from: NodeId, to: NodeId, size: u32) -> Option<u64> {
        self.flows
            .open_flow(self.topo, self.farm, self.tenant, from, to, size)
            .ok()
            .map(|f| f.0 as u64)
    }

    fn done(&self, handle: u64) -> Option<bool> {
        match self.flows.flow(FlowId(handle as u32))?.state {
            FlowState::Delivered => Some(true),
            FlowState::Failed => Some(false),
            _ => None,
        }
    }
}

fn composition_line(ev: &CompositionEvent) -> String {
    match *ev {
        CompositionEvent::Started { task, node, end } => {
            format!("task {task} start {node} end={end}")
        }
        CompositionEvent::Finished { task, node } => format!("task {task} finish {node}"),
        CompositionEvent::Replaced { task, from, to } => {
            format!("task {task} replace {from}->{to}")
        }
        CompositionEvent::Infeasible { task } => format!("task {task} infeasible"),
    }
}

impl World {
    /// A world at tick 0 over `topo`, controlled by `farm`.
    pub fn new(topo: Topology, farm: Farm, seed: u64) -> Self {
        let mut bus = Bus::new();
        let reports = farm
            .controllers()
            .map(|c| {
                let topic = format!("south/{}/reports", c.domain());
                (c.id(), bus.subscribe(&topic).expect("non-empty topic"))
            })
            .collect();
        let events = bus.subscribe(EVENTS_TOPIC).expect("non-empty topic");
        let west = bus.subscribe("west/*").expect("non-empty topic");
        World {
            topo,
            farm,
            flows: FlowEngine::new(),
            bus,
            subs: Subscriptions {
                reports,
                events,
                west,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            now: 0,
            in_tick: false,
            trace: TraceHasher::new(),
            faults: BTreeMap::new(),
            requests: Vec::new(),
            admitted: BTreeMap::new(),
            composition: None,
            pending: Vec::new(),
            counters: Counters::default(),
            metrics: Vec::new(),
            health_events: Vec::new(),
            link_service: Vec::new(),
            last_events: Vec::new(),
            epoch: 0,
        }
    }

    /// Schedules a flow; returns its request index.
    pub fn add_flow(&mut self, req: FlowRequest) -> usize {
        self.requests.push(req);
        self.requests.len() - 1
    }

    pub fn add_fault(&mut self, tick: Tick, node: NodeId, health: Health) {
        self.faults.entry(tick).or_default().push((node, health));
    }

    /// Plans `dag` from the current tick and starts executing it.
    pub fn set_composition(
        &mut self,
        registry: &Registry,
        dag: &CompositionDag,
        tenant: TenantId,
        materialize_transfers: bool,
    ) -> Result<Schedule, CompositionError> {
        let schedule = registry.schedule_with_pins(
            dag,
            &self.topo,
            self.now,
            &BTreeMap::new(),
            &BTreeMap::new(),
        )?;
        self.composition = Some(CompositionRun {
            tenant,
            materialize: materialize_transfers,
            exec: Execution::new(registry, dag, &schedule),
        });
        Ok(schedule)
    }

    /// Keeps rendered trace lines in memory (off by default).
    pub fn set_recording(&mut self, on: bool) {
        self.trace.set_recording(on);
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_tick(&self) -> bool {
        self.in_tick
    }

    /// Bumped by every mutation made from outside the run loop.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn farm(&self) -> &Farm {
        &self.farm
    }

    pub fn flows(&self) -> &FlowEngine {
        &self.flows
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn requests(&self) -> &[FlowRequest] {
        &self.requests
    }

    /// Flow opened for request `index`, or the admission error.
    pub fn admission(&self, index: usize) -> Option<&Result<FlowId, String>> {
        self.admitted.get(&index)
    }

    pub fn execution(&self) -> Option<&Execution> {
        self.composition.as_ref().map(|c| &c.exec)
    }

    pub fn trace_hash(&self) -> TraceHash {
        self.trace.digest()
    }

    pub fn trace(&self) -> &TraceHasher {
        &self.trace
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn health_events(&self) -> &[HealthEvent] {
        &self.health_events
    }

    /// Per-tenant link service of the last completed tick.
    pub fn link_service(&self) -> &[LinkService] {
        &self.link_service
    }

    /// Flow events of the last completed tick, as delivered by the bus.
    pub fn last_events(&self) -> &[FlowEvent] {
        &self.last_events
    }

    /// Decisions committed but not yet applied.
    pub fn pending_decisions(&self) -> &[Decision] {
        &self.pending
    }

    pub(crate) fn set_rng_seed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Slice violations, failed flows, rejected admissions and infeasible tasks.
    pub fn violations(&self) -> u64 {
        let failed = self
            .flows
            .flows()
            .filter(|f| f.state == FlowState::Failed)
            .count() as u64;
        let rejected = self.admitted.values().filter(|r| r.is_err()).count() as u64;
        let infeasible = self
            .composition
            .as_ref()
            .map_or(0, |c| c.exec.report().failed.len() as u64);
        self.flows.slice_violations() + failed + rejected + infeasible
    }

    /// Composition makespan so far: the finished makespan, or the current
    /// tick while tasks remain. Zero without a composition.
    pub fn composition_makespan(&self) -> Tick {
        match &self.composition {
            None => 0,
            Some(c) if c.exec.is_finished() => c.exec.report().makespan,
            Some(_) => self.now,
        }
    }

    /// Changes a node's health immediately, outside the run loop.
    pub fn set_health(&mut self, node: NodeId, health: Health) -> Result<(), WorldError> {
        if self.in_tick {
            return Err(WorldError::InTick(self.now));
        }
        if !self.topo.contains(node) {
            return Err(abort(self.now, format!("unknown node {node}")));
        }
        if self.topo.health(node) == health {
            return Ok(());
        }
        self.topo
            .set_health(node, health)
            .map_err(|e| abort(self.now, e))?;
        self.flows.bump_epoch();
        self.epoch += 1;
        self.trace.line(&format!("set {node} {}", health.label()));
        Ok(())
    }

    /// Applies a decision immediately. Fails without changing anything if
    /// the decision does not resolve against this world.
    pub fn apply_decision(&mut self, d: &Decision) -> Result<(), SandboxError> {
        let bad = |m: String| SandboxError::UnresolvableDecision(m);
        match d {
            Decision::Reroute { flow, path } => {
                self.flows
                    .reroute(&self.topo, &self.farm, *flow, path)
                    .map_err(|e| bad(e.to_string()))?;
            }
            Decision::SetSlice {
                tenant,
                links,
                share,
                priority,
            } => {
                self.farm
                    .slice_allocate(&self.topo, *tenant, links, *share, *priority)
                    .map_err(|e| bad(e.to_string()))?;
            }
            Decision::PlaceTask { task, node } => {
                let c = self
                    .composition
                    .as_mut()
                    .ok_or_else(|| bad("no composition is running".into()))?;
                c.exec
                    .reassign(*task, *node, &self.topo)
                    .map_err(|e| bad(e.to_string()))?;
            }
            Decision::InjectRepair { node } => {
                self.topo
                    .set_health(*node, Health::Healthy)
                    .map_err(|e| bad(e.to_string()))?;
            }
        }
        self.flows.bump_epoch();
        self.epoch += 1;
        self.trace.line(&format!("apply {d}"));
        Ok(())
    }

    /// Queues a decision for the next tick boundary.
    pub(crate) fn schedule_decision(&mut self, d: Decision) {
        self.pending.push(d);
    }

    pub fn run(&mut self, ticks: Tick) -> Result<(), WorldError> {
        for _ in 0..ticks {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), WorldError> {
        self.begin_tick()?;
        self.end_tick()
    }

    /// Control-plane half of a tick: faults, ingestion, digests, admission
    /// and clone decisions.
    pub fn begin_tick(&mut self) -> Result<(), WorldError> {
        if self.in_tick {
            return Err(WorldError::InTick(self.now));
        }
        self.in_tick = true;
        let t = self.now;
        self.trace.line(&format!("tick {t}"));
        self.farm.set_now(t);
        self.flows.set_now(t);

        for d in std::mem::take(&mut self.pending) {
            if let Err(e) = self.apply_decision(&d) {
                self.trace.line(&format!("skip {d}: {e}"));
            }
        }
        if let Some(fs) = self.faults.get(&t).cloned() {
            for (n, h) in fs {
                if self.topo.health(n) == h {
                    continue;
                }
                self.topo.set_health(n, h).map_err(|e| abort(t, e))?;
                self.flows.bump_epoch();
                self.trace.line(&format!("fault {n} {}", h.label()));
            }
        }

        for &(c, sub) in &self.subs.reports {
            for msg in self.bus.drain(sub).map_err(|e| abort(t, e))? {
                let report: SouthboundReport =
                    serde_json::from_slice(&msg.payload).map_err(|e| abort(t, e))?;
                let changes = self
                    .farm
                    .ingest_report(&self.topo, t, &report)
                    .map_err(|e| abort(t, e))?;
                for ch in changes {
                    self.trace
                        .line(&format!("health {c} {} {:?}", ch.node, ch.verdict));
                    self.health_events.push(HealthEvent {
                        tick: t,
                        controller: c,
                        node: ch.node,
                        change: format!("{:?}", ch.verdict),
                    });
                }
            }
        }

        if self.farm.len() > 1 && self.farm.digest_due(t) {
            self.farm.exchange_digests(&self.topo);
        }

        for i in 0..self.requests.len() {
            let r = &self.requests[i];
            if r.start != t {
                continue;
            }
            let res = self.flows.open_flow(
                &self.topo,
                &mut self.farm,
                r.tenant,
                r.origin,
                r.dest,
                r.units,
            );
            if let Err(e) = &res {
                self.trace.line(&format!(
                    "reject #{i} {} {}->{}: {e}",
                    r.tenant, r.origin, r.dest
                ));
            }
            self.admitted.insert(i, res.map_err(|e| e.to_string()));
        }

        let decisions = self.flows.detect_and_recover(&self.topo, &mut self.farm);
        self.counters.decisions += decisions.len() as u64;
        Ok(())
    }

    /// Data-plane half of a tick: transport, composition, reports, bus
    /// delivery and metrics.
    pub fn end_tick(&mut self) -> Result<(), WorldError> {
        if !self.in_tick {
            return Err(WorldError::NotInTick);
        }
        let t = self.now;
        let tick_events = self.flows.tick(&self.topo, &self.farm, &mut self.rng);
        self.link_service = tick_events.link_service;

        if let Some(c) = self.composition.as_mut() {
            let events = if c.materialize {
                let mut sink = FlowSink {
                    topo: &self.topo,
                    farm: &mut self.farm,
                    flows: &mut self.flows,
                    tenant: c.tenant,
                };
                c.exec.step(t, &self.topo, Some(&mut sink))
            } else {
                c.exec.step(t, &self.topo, None)
            };
            for ev in &events {
                self.trace.line(&composition_line(ev));
            }
        }

        self.publish_reports(t)?;
        let payload = serde_json::to_vec(&tick_events.events).map_err(|e| abort(t, e))?;
        self.bus
            .publish(t, Publisher::Engine, EVENTS_TOPIC, payload)
            .map_err(|e| abort(t, e))?;
        for m in self.farm.drain_mirror() {
            let topic = m.topic();
            self.bus
                .publish(
                    t,
                    Publisher::Controller(m.sender),
                    &topic,
                    m.to_string().into_bytes(),
                )
                .map_err(|e| abort(t, e))?;
        }
        self.bus.deliver_through(t);

        for msg in self.bus.drain(self.subs.west).map_err(|e| abort(t, e))? {
            self.trace.line(&String::from_utf8_lossy(&msg.payload));
        }
        let mut throughput: BTreeMap<TenantId, u64> = BTreeMap::new();
        self.last_events.clear();
        for msg in self.bus.drain(self.subs.events).map_err(|e| abort(t, e))? {
            let events: Vec<FlowEvent> =
                serde_json::from_slice(&msg.payload).map_err(|e| abort(t, e))?;
            for ev in &events {
                self.trace.line(&ev.to_string());
                match *ev {
                    FlowEvent::Delivered { tenant, age, .. } => {
                        self.counters.delivered += 1;
                        self.counters.age_sum += age;
                        *throughput.entry(tenant).or_default() += 1;
                    }
                    FlowEvent::Dropped { .. } => self.counters.dropped += 1,
                    FlowEvent::Cloned { .. } => self.counters.cloned += 1,
                    _ => {}
                }
            }
            self.last_events.extend(events);
        }
        self.metrics.push(MetricsRecord {
            tick: t,
            delivered_units: self.counters.delivered,
            dropped_units: self.counters.dropped,
            cloned_units: self.counters.cloned,
            active_flows: self.flows.active_flows() as u64,
            per_tenant_throughput: throughput,
            controller_messages: self.farm.messages_processed(),
        });
        self.now += 1;
        self.in_tick = false;
        Ok(())
    }

    /// Every working node reports what it saw of each neighbour this tick.
    fn publish_reports(&mut self, t: Tick) -> Result<(), WorldError> {
        let ids: Vec<NodeId> = self.topo.node_ids().collect();
        for r in ids {
            if self.topo.health(r).is_failed() {
                continue;
            }
            let mut nbrs: Vec<(NodeId, u32)> = self
                .topo
                .neighbors(r)
                .map(|(v, l)| (v, l.latency))
                .collect();
            nbrs.sort();
            let mut obs = Vec::with_capacity(nbrs.len());
            for (v, lat) in nbrs {
                let o = match self.topo.health(v) {
                    Health::Failed => Observation::Loss,
                    Health::Malicious { drop_prob } => {
                        if self.rng.gen_bool(drop_prob) {
                            Observation::Loss
                        } else {
                            Observation::Latency(lat)
                        }
                    }
                    h => Observation::Latency(lat.saturating_mul(h.slowdown() as u32)),
                };
                obs.push((v, o));
            }
            let Some(domain) = self.topo.node(r).map(|n| n.domain) else {
                continue;
            };
            let report = SouthboundReport {
                reporter: r,
                tick: t,
                neighbor_observations: obs,
            };
            let payload = serde_json::to_vec(&report).map_err(|e| abort(t, e))?;
            self.bus
                .publish(
                    t,
                    Publisher::Node(r),
                    &format!("south/{domain}/reports"),
                    payload,
                )
                .map_err(|e| abort(t, e))?;
        }
        Ok(())
    }

    pub fn flow_outcomes(&self) -> Vec<FlowOutcome> {
        self.requests
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let adm = self.admitted.get(&i);
                let flow = adm.and_then(|a| a.as_ref().ok()).copied();
                let f = flow.and_then(|id| self.flows.flow(id));
                FlowOutcome {
                    index: i,
                    flow,
                    tenant: r.tenant,
                    origin: r.origin,
                    destination: r.dest,
                    units: r.units,
                    state: f.map(|f| f.state),
                    rejected: adm.and_then(|a| a.as_ref().err()).cloned(),
                    released: f.map_or(0, |f| f.released().len() as u32),
                    decisions: f.map_or_else(Vec::new, |f| {
                        f.decisions()
                            .iter()
                            .map(|d| DecisionSummary {
                                case_tag: d.case_tag,
                                bad: d.bad,
                                branch_point: d.branch_point,
                                clone_destination: d.clone_destination,
                                detour: d.detour.clone(),
                                cloned: d.cloned_seqs.len() as u32,
                            })
                            .collect()
                    }),
                }
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        Summary {
            ticks: self.now,
            seed: self.seed,
            trace_hash: self.trace_hash().to_string(),
            flows: self.flow_outcomes(),
            clone_decisions: self.counters.decisions,
            delivered_units: self.counters.delivered,
            dropped_units: self.counters.dropped,
            cloned_units: self.counters.cloned,
            slice_violations: self.flows.slice_violations(),
            composition: self.composition.as_ref().map(|c| {
                let r = c.exec.report();
                CompositionSummary {
                    planned_makespan: c.exec.planned_makespan(),
                    makespan: c.exec.is_finished().then_some(r.makespan),
                    replaced: r.replaced,
                    failed: r.failed,
                }
            }),
            health_events: self.health_events.clone(),
            bus_dropped: self.bus.dropped(),
            controller_messages: self.farm.messages_processed(),
        }
    }
}
