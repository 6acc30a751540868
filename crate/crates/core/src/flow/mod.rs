//! Flow transport and the subflow clone/recompose resilience protocol.
//!
//! Each tick moves queued unit copies across links (subject to per-tenant QoS)
//! and delivers arrivals. When an intermediary of a flow's path becomes
//! suspect, [`FlowEngine::on_unhealthy`] picks a branch point and a clone
//! destination, and [`FlowEngine::clone_subflow`] injects duplicate copies on a
//! detour. A [`ReorderBuffer`] at the clone destination (and one at every
//! flow's destination) turns the resulting duplicate, out-of-order stream back
//! into exactly-once in-order delivery.
//!
//! If the clone destination or the detour itself becomes suspect while a flow
//! is recovering, the recovery is abandoned: the recomposed path becomes the
//! flow's path and the decision is made again against it.

mod buffer;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::ReorderBuffer;

use crate::controller::{Controller, ControllerError};
use crate::ids::{FlowId, LinkId, NodeId, SubflowId, TenantId, Tick};
use crate::topology::{Link, Path, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("{node} is not an intermediate node of {flow}")]
    NotIntermediate { flow: FlowId, node: NodeId },
    #[error("flow {0} is not active")]
    NotActive(FlowId),
    #[error("no detour around {bad} for {flow}")]
    Unrecoverable { flow: FlowId, bad: NodeId },
    #[error("decision for {0} no longer matches the world")]
    StaleDecision(FlowId),
    #[error("tenant {0} has no slice")]
    NoSlice(TenantId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

impl From<ControllerError> for FlowError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::NoSlice(t) => FlowError::NoSlice(t),
            ControllerError::NoPathInSlice(from, to) => FlowError::NoPath { from, to },
            ControllerError::UnknownNode(n) => FlowError::UnknownNode(n),
            other => FlowError::InvalidPath(other.to_string()),
        }
    }
}

/// Control-plane services the flow engine needs: admission, detours, the
/// health view and per-link QoS.
pub trait PathService {
    fn admit(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        origin: NodeId,
        dest: NodeId,
    ) -> Result<Path, FlowError>;

    fn detour(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        src: NodeId,
        dst: NodeId,
        excluded: &BTreeSet<NodeId>,
    ) -> Option<Path>;

    /// Nodes currently suspected (congested or failed) as seen from `vantage`.
    fn suspects(&self, vantage: NodeId) -> BTreeSet<NodeId>;

    fn allows(&self, tenant: TenantId, link: LinkId) -> bool;

    fn qos(&self, link: &Link, pending: &BTreeMap<TenantId, u32>) -> BTreeMap<TenantId, u32>;
}

impl PathService for Controller {
    fn admit(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        origin: NodeId,
        dest: NodeId,
    ) -> Result<Path, FlowError> {
        Ok(self.admit_flow(topo, tenant, origin, dest)?)
    }

    fn detour(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        src: NodeId,
        dst: NodeId,
        excluded: &BTreeSet<NodeId>,
    ) -> Option<Path> {
        let mut ex = self.suspect_failed();
        ex.extend(excluded.iter().copied());
        ex.remove(&src);
        ex.remove(&dst);
        self.route(topo, tenant, src, dst, &ex).ok()
    }

    fn suspects(&self, _vantage: NodeId) -> BTreeSet<NodeId> {
        Controller::suspects(self)
    }

    fn allows(&self, tenant: TenantId, link: LinkId) -> bool {
        self.slices().allows(tenant, link)
    }

    fn qos(&self, link: &Link, pending: &BTreeMap<TenantId, u32>) -> BTreeMap<TenantId, u32> {
        self.qos_schedule(link, pending)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowState {
    Active,
    Recovering,
    Delivered,
    Failed,
}

impl FlowState {
    pub fn is_terminal(self) -> bool {
        matches!(self, FlowState::Delivered | FlowState::Failed)
    }

    fn can_become(self, to: FlowState) -> bool {
        use FlowState::*;
        matches!(
            (self, to),
            (Active, Recovering)
                | (Recovering, Active)
                | (Active | Recovering, Delivered)
                | (Active | Recovering, Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloneCase {
    /// Clone destination is the flow destination.
    Case1,
    /// Clone destination is an intermediate node of the original path.
    Case2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneDecision {
    pub flow: FlowId,
    pub case_tag: CloneCase,
    pub bad: NodeId,
    pub branch_point: NodeId,
    pub clone_destination: NodeId,
    pub detour: Vec<NodeId>,
    pub detour_latency: u64,
    /// Latency of the best detour straight to the destination, if one exists.
    pub direct_latency: Option<u64>,
    pub cloned_seqs: BTreeSet<u32>,
    epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Node(NodeId),
    Transit {
        link: LinkId,
        from: NodeId,
        to: NodeId,
        remaining: u64,
    },
}

/// One copy of a sequenced unit. Clones share `seq` but not `copy`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub flow: FlowId,
    pub seq: u32,
    pub copy: u64,
    pub route: usize,
    /// Index into the route of the node this copy is at or last left.
    pub hop: usize,
    pub location: Location,
    /// Furthest node of the flow path this copy has confirmed.
    pub acked_node: Option<NodeId>,
    pub subflow: Option<SubflowId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    NodeFailed,
    Malicious,
    Stranded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowEvent {
    Opened {
        flow: FlowId,
        tenant: TenantId,
        path: Vec<NodeId>,
    },
    Moved {
        flow: FlowId,
        seq: u32,
        from: NodeId,
        to: NodeId,
        link: LinkId,
    },
    Dropped {
        flow: FlowId,
        seq: u32,
        at: NodeId,
        reason: DropReason,
    },
    Decision {
        flow: FlowId,
        case_tag: CloneCase,
        bad: NodeId,
        branch: NodeId,
        clone_destination: NodeId,
        detour: Vec<NodeId>,
        cloned: u32,
    },
    Cloned {
        flow: FlowId,
        seq: u32,
        at: NodeId,
        subflow: SubflowId,
    },
    Absorbed {
        flow: FlowId,
        seq: u32,
        at: NodeId,
    },
    Recomposed {
        flow: FlowId,
        seq: u32,
        at: NodeId,
    },
    Delivered {
        flow: FlowId,
        seq: u32,
        tenant: TenantId,
        age: Tick,
    },
    State {
        flow: FlowId,
        state: FlowState,
    },
}

impl FlowEvent {
    pub fn flow(&self) -> FlowId {
        match *self {
            FlowEvent::Opened { flow, .. }
            | FlowEvent::Moved { flow, .. }
            | FlowEvent::Dropped { flow, .. }
            | FlowEvent::Decision { flow, .. }
            | FlowEvent::Cloned { flow, .. }
            | FlowEvent::Absorbed { flow, .. }
            | FlowEvent::Recomposed { flow, .. }
            | FlowEvent::Delivered { flow, .. }
            | FlowEvent::State { flow, .. } => flow,
        }
    }

    pub fn seq(&self) -> Option<u32> {
        match *self {
            FlowEvent::Moved { seq, .. }
            | FlowEvent::Dropped { seq, .. }
            | FlowEvent::Cloned { seq, .. }
            | FlowEvent::Absorbed { seq, .. }
            | FlowEvent::Recomposed { seq, .. }
            | FlowEvent::Delivered { seq, .. } => Some(seq),
            _ => None,
        }
    }

    fn order_key(&self) -> (FlowId, u32) {
        (self.flow(), self.seq().unwrap_or(u32::MAX))
    }
}

fn join(nodes: &[NodeId]) -> String {
    nodes
        .iter()
        .map(|n| n.0.to_string())
        .collect::<Vec<_>>()
        .join(">")
}

impl fmt::Display for FlowEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowEvent::Opened { flow, tenant, path } => {
                write!(f, "open {flow} {tenant} {}", join(path))
            }
            FlowEvent::Moved {
                flow,
                seq,
                from,
                to,
                link,
            } => write!(f, "move {flow}#{seq} {from}->{to} {link}"),
            FlowEvent::Dropped {
                flow,
                seq,
                at,
                reason,
            } => write!(f, "drop {flow}#{seq} {at} {reason:?}"),
            FlowEvent::Decision {
                flow,
                case_tag,
                bad,
                branch,
                clone_destination,
                detour,
                cloned,
            } => write!(
                f,
                "decide {flow} {case_tag:?} bad={bad} branch={branch} dest={clone_destination} via={} n={cloned}",
                join(detour)
            ),
            FlowEvent::Cloned {
                flow,
                seq,
                at,
                subflow,
            } => write!(f, "clone {flow}#{seq} {at} {subflow}"),
            FlowEvent::Absorbed { flow, seq, at } => write!(f, "absorb {flow}#{seq} {at}"),
            FlowEvent::Recomposed { flow, seq, at } => write!(f, "recompose {flow}#{seq} {at}"),
            FlowEvent::Delivered {
                flow,
                seq,
                tenant,
                age,
            } => write!(f, "deliver {flow}#{seq} {tenant} age={age}"),
            FlowEvent::State { flow, state } => write!(f, "state {flow} {state:?}"),
        }
    }
}

/// Per-tenant service on one link direction during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkService {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub tenant: TenantId,
    pub pending: u32,
    pub sent: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickEvents {
    pub tick: Tick,
    pub events: Vec<FlowEvent>,
    pub link_service: Vec<LinkService>,
}

/// What reached a flow's destination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    /// Every arrival at the destination, duplicates included.
    pub received: Vec<u32>,
    /// Units released by the destination buffer, in release order.
    pub released: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Recovery {
    decision: CloneDecision,
    base_path: Vec<NodeId>,
}

impl Recovery {
    fn recomposed(&self) -> Vec<NodeId> {
        let d = &self.decision;
        let b = self
            .base_path
            .iter()
            .position(|&n| n == d.branch_point)
            .unwrap();
        let mut nodes = self.base_path[..=b].to_vec();
        nodes.extend_from_slice(&d.detour[1..]);
        if d.case_tag == CloneCase::Case2 {
            let r = self
                .base_path
                .iter()
                .position(|&n| n == d.clone_destination)
                .unwrap();
            nodes.extend_from_slice(&self.base_path[r + 1..]);
        }
        loop_erase(nodes)
    }
}

fn loop_erase(nodes: Vec<NodeId>) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(nodes.len());
    for n in nodes {
        if let Some(i) = out.iter().position(|&x| x == n) {
            out.truncate(i + 1);
        } else {
            out.push(n);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub id: FlowId,
    pub tenant: TenantId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub units: u32,
    pub path: Vec<NodeId>,
    pub state: FlowState,
    pub opened_at: Tick,
    routes: Vec<Vec<NodeId>>,
    decisions: Vec<CloneDecision>,
    recovery: Option<Recovery>,
    handled: BTreeSet<NodeId>,
    received: Vec<u32>,
    released: Vec<u32>,
    buffers: BTreeMap<NodeId, ReorderBuffer>,
}

impl Flow {
    pub fn decisions(&self) -> &[CloneDecision] {
        &self.decisions
    }

    pub fn routes(&self) -> &[Vec<NodeId>] {
        &self.routes
    }

    pub fn buffer_at(&self, n: NodeId) -> Option<&ReorderBuffer> {
        self.buffers.get(&n)
    }

    pub fn released(&self) -> &[u32] {
        &self.released
    }

    fn path_index(&self, n: NodeId) -> Option<usize> {
        self.path.iter().position(|&x| x == n)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlowEngine {
    flows: BTreeMap<FlowId, Flow>,
    units: BTreeMap<u64, Unit>,
    queues: BTreeMap<(NodeId, NodeId), VecDeque<u64>>,
    next_flow: u32,
    next_copy: u64,
    next_subflow: u32,
    epoch: u64,
    now: Tick,
    outbox: Vec<FlowEvent>,
    slice_violations: u64,
}

impl FlowEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn set_now(&mut self, t: Tick) {
        self.now = t;
    }

    /// Invalidates outstanding decisions; call after any world mutation.
    pub fn bump_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flows.get(&id)
    }

    pub fn flows(&self) -> impl Iterator<Item = &Flow> {
        self.flows.values()
    }

    pub fn slice_violations(&self) -> u64 {
        self.slice_violations
    }

    /// Live copies, in copy order.
    pub fn units(&self) -> impl Iterator<Item = &Unit> {
        self.units.values()
    }

    pub fn active_flows(&self) -> usize {
        self.flows
            .values()
            .filter(|f| !f.state.is_terminal())
            .count()
    }

    fn emit(&mut self, e: FlowEvent) {
        self.outbox.push(e);
    }

    fn set_state(&mut self, id: FlowId, to: FlowState) {
        let f = self.flows.get_mut(&id).unwrap();
        if f.state == to {
            return;
        }
        debug_assert!(f.state.can_become(to), "{:?} -> {:?}", f.state, to);
        f.state = to;
        self.emit(FlowEvent::State {
            flow: id,
            state: to,
        });
        if to.is_terminal() {
            self.purge(id, to == FlowState::Failed);
        }
    }

    /// Removes every copy of a finished flow; a failed flow reports them lost.
    fn purge(&mut self, id: FlowId, report: bool) {
        if report {
            let lost: Vec<(u32, NodeId)> = self
                .units
                .values()
                .filter(|u| u.flow == id)
                .map(|u| {
                    let at = match u.location {
                        Location::Node(n) => n,
                        Location::Transit { from, .. } => from,
                    };
                    (u.seq, at)
                })
                .collect();
            for (seq, at) in lost {
                self.emit(FlowEvent::Dropped {
                    flow: id,
                    seq,
                    at,
                    reason: DropReason::Stranded,
                });
            }
        }
        self.units.retain(|_, u| u.flow != id);
        let units = &self.units;
        for q in self.queues.values_mut() {
            q.retain(|c| units.contains_key(c));
        }
        self.queues.retain(|_, q| !q.is_empty());
    }

    fn enqueue(&mut self, mut unit: Unit) {
        let route = &self.flows[&unit.flow].routes[unit.route];
        let here = route[unit.hop];
        let next = route[unit.hop + 1];
        unit.location = Location::Node(here);
        let copy = unit.copy;
        self.units.insert(copy, unit);
        self.queues.entry((here, next)).or_default().push_back(copy);
    }

    fn fresh_copy(&mut self) -> u64 {
        let c = self.next_copy;
        self.next_copy += 1;
        c
    }

    pub fn open_flow(
        &mut self,
        topo: &Topology,
        paths: &mut dyn PathService,
        tenant: TenantId,
        origin: NodeId,
        dest: NodeId,
        units: u32,
    ) -> Result<FlowId, FlowError> {
        let path = paths.admit(topo, tenant, origin, dest)?;
        let id = FlowId(self.next_flow);
        self.next_flow += 1;
        let mut dest_buffer = ReorderBuffer::new(dest, id, units);
        dest_buffer.feeds = None;
        self.flows.insert(
            id,
            Flow {
                id,
                tenant,
                origin,
                destination: dest,
                units,
                path: path.nodes.clone(),
                state: FlowState::Active,
                opened_at: self.now,
                routes: vec![path.nodes.clone()],
                decisions: Vec::new(),
                recovery: None,
                handled: BTreeSet::new(),
                received: Vec::new(),
                released: Vec::new(),
                buffers: BTreeMap::from([(dest, dest_buffer)]),
            },
        );
        self.emit(FlowEvent::Opened {
            flow: id,
            tenant,
            path: path.nodes.clone(),
        });
        if units == 0 {
            self.set_state(id, FlowState::Delivered);
        } else if path.nodes.len() == 1 {
            let f = self.flows.get_mut(&id).unwrap();
            f.received = (0..units).collect();
            f.released = (0..units).collect();
            for seq in 0..units {
                self.emit(FlowEvent::Delivered {
                    flow: id,
                    seq,
                    tenant,
                    age: 0,
                });
            }
            self.set_state(id, FlowState::Delivered);
        } else {
            for seq in 0..units {
                let copy = self.fresh_copy();
                self.enqueue(Unit {
                    flow: id,
                    seq,
                    copy,
                    route: 0,
                    hop: 0,
                    location: Location::Node(origin),
                    acked_node: Some(origin),
                    subflow: None,
                });
            }
        }
        self.bump_epoch();
        Ok(id)
    }

    /// Furthest confirmed path index of every sequence number, or `None` for
    /// sequence numbers with no surviving copy.
    fn seq_acks(&self, id: FlowId) -> Vec<Option<usize>> {
        let f = &self.flows[&id];
        let mut acks = vec![None; f.units as usize];
        let last = f.path.len() - 1;
        for &s in &f.released {
            acks[s as usize] = Some(last);
        }
        let held = f.buffers.values().flat_map(|b| b.held_units());
        for u in self.units.values().filter(|u| u.flow == id).chain(held) {
            let idx = u.acked_node.and_then(|n| f.path_index(n));
            let slot = &mut acks[u.seq as usize];
            if idx > *slot {
                *slot = idx;
            }
        }
        acks
    }

    /// Chooses a branch point and clone destination after `bad` was found
    /// unhealthy. The flow becomes `Recovering`, or `Failed` when no detour
    /// exists.
    ///
    /// Copies held by `bad` itself do not count as delivered past it, so their
    /// sequence numbers are cloned too.
    pub fn on_unhealthy(
        &mut self,
        topo: &Topology,
        paths: &mut dyn PathService,
        flow: FlowId,
        bad: NodeId,
    ) -> Result<CloneDecision, FlowError> {
        let f = self.flows.get(&flow).ok_or(FlowError::UnknownFlow(flow))?;
        if f.state != FlowState::Active {
            return Err(FlowError::NotActive(flow));
        }
        let b = f
            .path_index(bad)
            .filter(|&i| i > 0 && i + 1 < f.path.len())
            .ok_or(FlowError::NotIntermediate { flow, node: bad })?;
        let acks = self.seq_acks(flow);
        let f = &self.flows[&flow];
        let branch_idx = (0..b)
            .rev()
            .find(|&i| acks.iter().any(|a| a.is_some_and(|a| a >= i)))
            .unwrap_or(0);
        let branch = f.path[branch_idx];
        let cloned_seqs: BTreeSet<u32> = acks
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none_or(|a| a <= b))
            .map(|(s, _)| s as u32)
            .collect();

        let mut excluded = paths.suspects(f.origin);
        excluded.insert(bad);
        excluded.extend(topo.nodes().filter(|n| n.health.is_failed()).map(|n| n.id));
        excluded.remove(&branch);
        excluded.remove(&f.destination);

        let (tenant, dest, path) = (f.tenant, f.destination, f.path.clone());
        let direct = paths.detour(topo, tenant, branch, dest, &excluded);
        let mut rejoin: Option<(u64, usize, Path)> = None;
        for (r, &node) in path.iter().enumerate().take(path.len() - 1).skip(b + 1) {
            if excluded.contains(&node) {
                continue;
            }
            let Some(d) = paths.detour(topo, tenant, branch, node, &excluded) else {
                continue;
            };
            if direct.as_ref().is_some_and(|dd| d.latency > dd.latency) {
                continue;
            }
            let cand = (d.latency, r, d);
            if rejoin.as_ref().is_none_or(|best| {
                (cand.0, cand.1, &cand.2.nodes) < (best.0, best.1, &best.2.nodes)
            }) {
                rejoin = Some(cand);
            }
        }

        let (case_tag, clone_destination, detour) = match (rejoin, &direct) {
            (Some((_, r, d)), _) => (CloneCase::Case2, path[r], d),
            (None, Some(d)) => (CloneCase::Case1, dest, d.clone()),
            (None, None) => {
                self.set_state(flow, FlowState::Failed);
                self.bump_epoch();
                return Err(FlowError::Unrecoverable { flow, bad });
            }
        };
        self.bump_epoch();
        let decision = CloneDecision {
            flow,
            case_tag,
            bad,
            branch_point: branch,
            clone_destination,
            detour_latency: detour.latency,
            detour: detour.nodes,
            direct_latency: direct.map(|d| d.latency),
            cloned_seqs,
            epoch: self.epoch,
        };
        let f = self.flows.get_mut(&flow).unwrap();
        f.handled.insert(bad);
        f.decisions.push(decision.clone());
        f.recovery = Some(Recovery {
            decision: decision.clone(),
            base_path: path,
        });
        self.emit(FlowEvent::Decision {
            flow,
            case_tag,
            bad,
            branch,
            clone_destination,
            detour: decision.detour.clone(),
            cloned: decision.cloned_seqs.len() as u32,
        });
        self.set_state(flow, FlowState::Recovering);
        Ok(decision)
    }

    /// Injects duplicates of `d.cloned_seqs` at the branch point onto the
    /// detour and installs the recomposition buffer at the clone destination.
    pub fn clone_subflow(&mut self, d: &CloneDecision) -> Result<SubflowId, FlowError> {
        let f = self
            .flows
            .get(&d.flow)
            .ok_or(FlowError::UnknownFlow(d.flow))?;
        let current = f.recovery.as_ref().map(|r| &r.decision);
        if d.epoch != self.epoch || current != Some(d) || f.state != FlowState::Recovering {
            return Err(FlowError::StaleDecision(d.flow));
        }
        let base = f.recovery.as_ref().unwrap().base_path.clone();
        let acks = self.seq_acks(d.flow);
        let sub = SubflowId(self.next_subflow);
        self.next_subflow += 1;

        let f = self.flows.get_mut(&d.flow).unwrap();
        let mut route = d.detour.clone();
        if d.case_tag == CloneCase::Case2 {
            let r = base.iter().position(|&n| n == d.clone_destination).unwrap();
            route.extend_from_slice(&base[r + 1..]);
            let expected: BTreeSet<u32> = acks
                .iter()
                .enumerate()
                .filter(|(_, a)| a.is_none_or(|a| a < r))
                .map(|(s, _)| s as u32)
                .collect();
            f.routes.push(route);
            let detour_route = f.routes.len() - 1;
            let mut feeds: BTreeSet<usize> = f
                .routes
                .iter()
                .enumerate()
                .filter(|(_, rt)| rt.contains(&d.clone_destination))
                .map(|(i, _)| i)
                .collect();
            feeds.insert(detour_route);
            let mut buf = ReorderBuffer::expecting(d.clone_destination, d.flow, expected);
            buf.feeds = Some(feeds);
            f.buffers.insert(d.clone_destination, buf);
        } else {
            f.routes.push(route);
        }
        let route_id = f.routes.len() - 1;
        for &seq in &d.cloned_seqs {
            let copy = self.fresh_copy();
            self.enqueue(Unit {
                flow: d.flow,
                seq,
                copy,
                route: route_id,
                hop: 0,
                location: Location::Node(d.branch_point),
                acked_node: Some(d.branch_point),
                subflow: Some(sub),
            });
            self.emit(FlowEvent::Cloned {
                flow: d.flow,
                seq,
                at: d.branch_point,
                subflow: sub,
            });
        }
        self.bump_epoch();
        Ok(sub)
    }

    /// Gives up on the current recovery: the recomposed path becomes the flow
    /// path and anything held at the clone destination moves on.
    fn abandon_recovery(&mut self, id: FlowId) {
        let f = self.flows.get_mut(&id).unwrap();
        let Some(rec) = f.recovery.take() else {
            return;
        };
        f.path = rec.recomposed();
        let mut released = Vec::new();
        if rec.decision.case_tag == CloneCase::Case2 {
            if let Some(mut buf) = f.buffers.remove(&rec.decision.clone_destination) {
                released = buf.flush();
            }
        }
        for u in released {
            self.emit(FlowEvent::Recomposed {
                flow: id,
                seq: u.seq,
                at: rec.decision.clone_destination,
            });
            self.forward(u);
        }
        self.set_state(id, FlowState::Active);
    }

    fn forward(&mut self, u: Unit) {
        let len = self.flows[&u.flow].routes[u.route].len();
        if u.hop + 1 < len {
            self.enqueue(u);
        } else {
            let at = self.flows[&u.flow].routes[u.route][u.hop];
            self.emit(FlowEvent::Dropped {
                flow: u.flow,
                seq: u.seq,
                at,
                reason: DropReason::Stranded,
            });
        }
    }

    /// Run-loop hook: reacts to suspects on any flow's remaining path.
    pub fn detect_and_recover(
        &mut self,
        topo: &Topology,
        paths: &mut dyn PathService,
    ) -> Vec<CloneDecision> {
        let mut out = Vec::new();
        let ids: Vec<FlowId> = self.flows.keys().copied().collect();
        for id in ids {
            let f = &self.flows[&id];
            if f.state.is_terminal() {
                continue;
            }
            let suspects = paths.suspects(f.origin);
            if suspects.is_empty() {
                continue;
            }
            if f.state == FlowState::Recovering {
                let rec = f.recovery.as_ref().unwrap();
                let recomposed = rec.recomposed();
                let hit = recomposed[1..recomposed.len() - 1]
                    .iter()
                    .any(|n| suspects.contains(n) && !f.handled.contains(n));
                if !hit {
                    continue;
                }
                self.abandon_recovery(id);
            }
            let f = &self.flows[&id];
            let acks = self.seq_acks(id);
            let mut target = None;
            let mut passed = Vec::new();
            for idx in 1..f.path.len().saturating_sub(1) {
                let n = f.path[idx];
                if !suspects.contains(&n) || f.handled.contains(&n) {
                    continue;
                }
                if acks.iter().any(|a| a.is_none_or(|a| a <= idx)) {
                    target = Some(n);
                    break;
                }
                passed.push(n);
            }
            let f = self.flows.get_mut(&id).unwrap();
            f.handled.extend(passed);
            if let Some(bad) = target {
                if let Ok(d) = self.on_unhealthy(topo, paths, id, bad) {
                    if self.clone_subflow(&d).is_ok() {
                        out.push(d);
                    }
                }
            }
        }
        out
    }

    /// Moves `flow` onto `new_path` for everything not yet in flight.
    pub fn reroute(
        &mut self,
        topo: &Topology,
        paths: &dyn PathService,
        flow: FlowId,
        new_path: &[NodeId],
    ) -> Result<(), FlowError> {
        let f = self.flows.get(&flow).ok_or(FlowError::UnknownFlow(flow))?;
        if f.state.is_terminal() {
            return Err(FlowError::NotActive(flow));
        }
        if new_path.first() != Some(&f.origin) || new_path.last() != Some(&f.destination) {
            return Err(FlowError::InvalidPath(
                "endpoints differ from the flow".into(),
            ));
        }
        let distinct: BTreeSet<_> = new_path.iter().collect();
        if distinct.len() != new_path.len() {
            return Err(FlowError::InvalidPath("path repeats a node".into()));
        }
        for w in new_path.windows(2) {
            let l = topo
                .link_between(w[0], w[1])
                .ok_or_else(|| FlowError::InvalidPath(format!("no link {}-{}", w[0], w[1])))?;
            if !paths.allows(f.tenant, l.id) {
                return Err(FlowError::InvalidPath(format!(
                    "link {} outside the tenant slice",
                    l.id
                )));
            }
        }
        if new_path == f.path.as_slice() {
            return Ok(());
        }
        let f = self.flows.get_mut(&flow).unwrap();
        f.routes.push(new_path.to_vec());
        f.path = new_path.to_vec();
        let rid = f.routes.len() - 1;
        let queued: Vec<u64> = self
            .units
            .values()
            .filter(|u| u.flow == flow && matches!(u.location, Location::Node(_)))
            .map(|u| u.copy)
            .collect();
        for c in queued {
            let Location::Node(at) = self.units[&c].location else {
                unreachable!()
            };
            let Some(j) = new_path.iter().position(|&n| n == at) else {
                continue;
            };
            if j + 1 == new_path.len() {
                continue;
            }
            for q in self.queues.values_mut() {
                q.retain(|&x| x != c);
            }
            let mut u = self.units.remove(&c).unwrap();
            u.route = rid;
            u.hop = j;
            self.enqueue(u);
        }
        self.queues.retain(|_, q| !q.is_empty());
        self.bump_epoch();
        Ok(())
    }

    pub fn delivered(&self, flow: FlowId) -> Result<DeliveryRecord, FlowError> {
        let f = self.flows.get(&flow).ok_or(FlowError::UnknownFlow(flow))?;
        Ok(DeliveryRecord {
            received: f.received.clone(),
            released: f.released.clone(),
        })
    }

    /// Advances the transport by one tick.
    pub fn tick<R: Rng>(
        &mut self,
        topo: &Topology,
        paths: &dyn PathService,
        rng: &mut R,
    ) -> TickEvents {
        let mut link_service = Vec::new();

        // units sitting at failed nodes are lost
        let stranded: Vec<u64> = self
            .units
            .values()
            .filter(|u| matches!(u.location, Location::Node(n) if topo.health(n).is_failed()))
            .map(|u| u.copy)
            .collect();
        for c in stranded {
            let u = self.units.remove(&c).unwrap();
            let Location::Node(at) = u.location else {
                unreachable!()
            };
            self.emit(FlowEvent::Dropped {
                flow: u.flow,
                seq: u.seq,
                at,
                reason: DropReason::NodeFailed,
            });
        }
        let mut held_lost = Vec::new();
        for f in self.flows.values_mut() {
            for buf in f.buffers.values_mut() {
                if topo.health(buf.at).is_failed() {
                    held_lost.extend(buf.flush().into_iter().map(|u| (u, buf.at)));
                }
            }
        }
        for (u, at) in held_lost {
            self.emit(FlowEvent::Dropped {
                flow: u.flow,
                seq: u.seq,
                at,
                reason: DropReason::NodeFailed,
            });
        }
        let units = &self.units;
        for q in self.queues.values_mut() {
            q.retain(|c| units.contains_key(c));
        }
        self.queues.retain(|_, q| !q.is_empty());

        // transmit
        let keys: Vec<(NodeId, NodeId)> = self.queues.keys().copied().collect();
        for (from, to) in keys {
            let Some(link) = topo.link_between(from, to).copied() else {
                continue;
            };
            let queue = self.queues.remove(&(from, to)).unwrap_or_default();
            let mut pending: BTreeMap<TenantId, u32> = BTreeMap::new();
            for c in &queue {
                let t = self.flows[&self.units[c].flow].tenant;
                *pending.entry(t).or_default() += 1;
            }
            let grants = paths.qos(&link, &pending);
            let mut left = grants.clone();
            let mut kept = VecDeque::new();
            let latency = topo.effective_latency(&link);
            for c in queue {
                let (flow, seq) = (self.units[&c].flow, self.units[&c].seq);
                let tenant = self.flows[&flow].tenant;
                let g = left.entry(tenant).or_default();
                if *g == 0 {
                    kept.push_back(c);
                    continue;
                }
                *g -= 1;
                if !paths.allows(tenant, link.id) {
                    self.slice_violations += 1;
                }
                self.units.get_mut(&c).unwrap().location = Location::Transit {
                    link: link.id,
                    from,
                    to,
                    remaining: latency,
                };
                self.emit(FlowEvent::Moved {
                    flow,
                    seq,
                    from,
                    to,
                    link: link.id,
                });
            }
            for (&tenant, &p) in &pending {
                link_service.push(LinkService {
                    link: link.id,
                    from,
                    to,
                    tenant,
                    pending: p,
                    sent: grants.get(&tenant).copied().unwrap_or(0),
                });
            }
            if !kept.is_empty() {
                self.queues.insert((from, to), kept);
            }
        }

        // advance
        let mut arrivals: Vec<(FlowId, u32, u64)> = Vec::new();
        for u in self.units.values_mut() {
            if let Location::Transit { remaining, .. } = &mut u.location {
                *remaining -= 1;
                if *remaining == 0 {
                    arrivals.push((u.flow, u.seq, u.copy));
                }
            }
        }
        arrivals.sort_unstable();

        // arrive
        for (_, _, c) in arrivals {
            let mut u = self.units.remove(&c).unwrap();
            let Location::Transit { to: at, .. } = u.location else {
                unreachable!()
            };
            u.location = Location::Node(at);
            if self.flows[&u.flow].state.is_terminal() {
                continue;
            }
            let dropped = match topo.health(at) {
                crate::topology::Health::Failed => Some(DropReason::NodeFailed),
                crate::topology::Health::Malicious { drop_prob } => {
                    rng.gen_bool(drop_prob).then_some(DropReason::Malicious)
                }
                _ => None,
            };
            if let Some(reason) = dropped {
                self.emit(FlowEvent::Dropped {
                    flow: u.flow,
                    seq: u.seq,
                    at,
                    reason,
                });
                continue;
            }
            u.hop += 1;
            let now = self.now;
            let f = self.flows.get_mut(&u.flow).unwrap();
            if let Some(j) = f.path_index(at) {
                let cur = u.acked_node.and_then(|n| f.path_index(n));
                if cur.is_none_or(|cur| cur < j) {
                    u.acked_node = Some(at);
                }
            }
            if at == f.destination {
                f.received.push(u.seq);
            }
            let (flow, seq, tenant, opened) = (u.flow, u.seq, f.tenant, f.opened_at);
            let final_stage = at == f.destination;
            match f.buffers.get_mut(&at) {
                Some(buf) if buf.intercepts(u.route) => {
                    if buf.seen(seq) {
                        self.emit(FlowEvent::Absorbed { flow, seq, at });
                        continue;
                    }
                    let released = buf.recompose(u);
                    for r in released {
                        if final_stage {
                            self.flows.get_mut(&flow).unwrap().released.push(r.seq);
                            self.emit(FlowEvent::Delivered {
                                flow,
                                seq: r.seq,
                                tenant,
                                age: now + 1 - opened,
                            });
                        } else {
                            self.emit(FlowEvent::Recomposed {
                                flow,
                                seq: r.seq,
                                at,
                            });
                            self.forward(r);
                        }
                    }
                }
                _ => self.forward(u),
            }
        }

        // completion
        let ids: Vec<FlowId> = self.flows.keys().copied().collect();
        for id in ids {
            let f = &self.flows[&id];
            if f.state.is_terminal() {
                continue;
            }
            if f.buffers[&f.destination].is_complete() {
                self.set_state(id, FlowState::Delivered);
                continue;
            }
            if f.state == FlowState::Recovering {
                let rec = f.recovery.as_ref().unwrap();
                if rec.decision.case_tag == CloneCase::Case2
                    && f.buffers
                        .get(&rec.decision.clone_destination)
                        .is_some_and(|b| b.is_complete())
                {
                    let f = self.flows.get_mut(&id).unwrap();
                    let rec = f.recovery.take().unwrap();
                    f.path = rec.recomposed();
                    self.set_state(id, FlowState::Active);
                }
            }
        }

        self.now += 1;
        self.bump_epoch();
        let mut events = std::mem::take(&mut self.outbox);
        events.sort_by_key(FlowEvent::order_key);
        TickEvents {
            tick: self.now - 1,
            events,
            link_service,
        }
    }
}
