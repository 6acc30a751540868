//! The controller federation: domain ownership, westbound messaging,
//! cross-domain path composition, peer store reads and health digests.
//!
//! Controllers never touch each other's state. Every interaction is a
//! [`WestboundMessage`], processed one at a time in [`OrderKey`] order. The
//! key's clock is the world tick refined by a round counter: a message sent
//! while processing round `r` is stamped `r + 1`, so replies always sort after
//! the request that caused them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    Controller, ControllerError, HealthConfig, HealthEstimate, Priority, Requester,
    SouthboundReport, TenantSlice, Verdict,
};
use crate::flow::{FlowError, PathService};
use crate::ids::{ControllerId, DomainId, LinkId, NodeId, TenantId, Tick};
use crate::topology::{Link, Path, Topology};

pub const DEFAULT_DIGEST_PERIOD: Tick = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FarmError {
    #[error("{node} already belongs to domain {existing}")]
    OverlappingDomain { node: NodeId, existing: DomainId },
    #[error("domain {0} is not connected")]
    DisconnectedDomain(DomainId),
    #[error("domain {0} registered twice")]
    DuplicateDomain(DomainId),
    #[error("domain {0} has no nodes")]
    EmptyDomain(DomainId),
    #[error("{0} is not assigned to any domain")]
    UnassignedNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown controller {0}")]
    UnknownController(ControllerId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("tenant {tenant} has no slice in domain {domain}")]
    SliceViolation { tenant: TenantId, domain: DomainId },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

impl From<FarmError> for FlowError {
    fn from(e: FarmError) -> Self {
        match e {
            FarmError::NoPath { from, to } => FlowError::NoPath { from, to },
            FarmError::SliceViolation { tenant, .. } => FlowError::NoSlice(tenant),
            FarmError::UnassignedNode(n) | FarmError::UnknownNode(n) => FlowError::UnknownNode(n),
            other => FlowError::InvalidPath(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub id: DomainId,
    pub nodes: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    ResolveNode {
        node: NodeId,
    },
    ResolveReply {
        node: NodeId,
        owner: Option<ControllerId>,
    },
    PathSegmentRequest {
        tenant: TenantId,
        src: NodeId,
        targets: BTreeSet<NodeId>,
        excluded: BTreeSet<NodeId>,
        keep: BTreeSet<NodeId>,
    },
    PathSegmentResponse {
        src: NodeId,
        segments: Vec<Path>,
    },
    PeerStoreRead {
        tenant: TenantId,
        path: Vec<String>,
    },
    PeerStoreReply {
        value: Option<Vec<u8>>,
        error: Option<ControllerError>,
    },
    HealthDigest {
        view: BTreeMap<NodeId, Verdict>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::ResolveNode { .. } => "ResolveNode",
            Payload::ResolveReply { .. } => "ResolveReply",
            Payload::PathSegmentRequest { .. } => "PathSegmentRequest",
            Payload::PathSegmentResponse { .. } => "PathSegmentResponse",
            Payload::PeerStoreRead { .. } => "PeerStoreRead",
            Payload::PeerStoreReply { .. } => "PeerStoreReply",
            Payload::HealthDigest { .. } => "HealthDigest",
        }
    }

    fn is_reply(&self) -> bool {
        matches!(
            self,
            Payload::ResolveReply { .. }
                | Payload::PathSegmentResponse { .. }
                | Payload::PeerStoreReply { .. }
        )
    }
}

/// Total delivery order: (tick, round, sender, per-sender sequence).
pub type OrderKey = (Tick, u32, ControllerId, u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WestboundMessage {
    pub sender: ControllerId,
    pub receiver: ControllerId,
    pub correlation: u64,
    pub tick: Tick,
    pub round: u32,
    pub seq: u64,
    pub payload: Payload,
}

impl WestboundMessage {
    pub fn key(&self) -> OrderKey {
        (self.tick, self.round, self.sender, self.seq)
    }

    /// Bus topic the message is mirrored on.
    pub fn topic(&self) -> String {
        let (a, b) = if self.sender <= self.receiver {
            (self.sender, self.receiver)
        } else {
            (self.receiver, self.sender)
        };
        format!("west/{}-{}", a.0, b.0)
    }
}

impl fmt::Display for WestboundMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = serde_json::to_string(&self.payload).map_err(|_| fmt::Error)?;
        write!(
            f,
            "{}.{} {}#{} -> {} corr={} {}",
            self.tick, self.round, self.sender, self.seq, self.receiver, self.correlation, body
        )
    }
}

/// Cross-domain links per ordered domain pair, as (node in first, node in second).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GatewayIndex {
    pairs: BTreeMap<(DomainId, DomainId), BTreeSet<(NodeId, NodeId)>>,
}

impl GatewayIndex {
    pub fn build(topo: &Topology, owner_domain: &BTreeMap<NodeId, DomainId>) -> Self {
        let mut pairs: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
        for l in topo.links() {
            let (Some(&da), Some(&db)) = (owner_domain.get(&l.a), owner_domain.get(&l.b)) else {
                continue;
            };
            if da != db {
                pairs.entry((da, db)).or_default().insert((l.a, l.b));
                pairs.entry((db, da)).or_default().insert((l.b, l.a));
            }
        }
        GatewayIndex { pairs }
    }

    pub fn between(&self, a: DomainId, b: DomainId) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.pairs.get(&(a, b)).into_iter().flatten().copied()
    }

    pub fn all(&self) -> impl Iterator<Item = ((DomainId, DomainId), &BTreeSet<(NodeId, NodeId)>)> {
        self.pairs.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Farm {
    config: HealthConfig,
    digest_period: Tick,
    controllers: BTreeMap<ControllerId, Controller>,
    domains: BTreeMap<DomainId, ControllerId>,
    owner: BTreeMap<NodeId, ControllerId>,
    node_domain: BTreeMap<NodeId, DomainId>,
    gateways: GatewayIndex,
    queue: BTreeMap<OrderKey, WestboundMessage>,
    next_seq: BTreeMap<ControllerId, u64>,
    next_correlation: u64,
    replies: BTreeMap<u64, Payload>,
    now: Tick,
    round: u32,
    last_processed: Option<OrderKey>,
    order_violations: u64,
    processed: u64,
    log: Vec<OrderKey>,
    mirror: Vec<WestboundMessage>,
}

impl Farm {
    pub fn new(config: HealthConfig, digest_period: Tick) -> Self {
        Farm {
            config,
            digest_period: digest_period.max(1),
            controllers: BTreeMap::new(),
            domains: BTreeMap::new(),
            owner: BTreeMap::new(),
            node_domain: BTreeMap::new(),
            gateways: GatewayIndex::default(),
            queue: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            next_correlation: 0,
            replies: BTreeMap::new(),
            now: 0,
            round: 0,
            last_processed: None,
            order_violations: 0,
            processed: 0,
            log: Vec::new(),
            mirror: Vec::new(),
        }
    }

    /// A farm with one controller owning every node of `topo`.
    pub fn single(topo: &Topology, config: HealthConfig) -> Self {
        let mut f = Farm::new(config, DEFAULT_DIGEST_PERIOD);
        f.register_controller(
            topo,
            Domain {
                id: DomainId(0),
                nodes: topo.node_ids().collect(),
            },
        )
        .expect("a single domain over a connected topology is valid");
        f
    }

    pub fn register_controller(
        &mut self,
        topo: &Topology,
        domain: Domain,
    ) -> Result<ControllerId, FarmError> {
        if self.domains.contains_key(&domain.id) {
            return Err(FarmError::DuplicateDomain(domain.id));
        }
        if domain.nodes.is_empty() {
            return Err(FarmError::EmptyDomain(domain.id));
        }
        for &n in &domain.nodes {
            if !topo.contains(n) {
                return Err(FarmError::UnknownNode(n));
            }
            if let Some(&existing) = self.node_domain.get(&n) {
                return Err(FarmError::OverlappingDomain { node: n, existing });
            }
        }
        if !topo.induced_connected(&domain.nodes) {
            return Err(FarmError::DisconnectedDomain(domain.id));
        }
        let id = ControllerId(self.controllers.len() as u32);
        for &n in &domain.nodes {
            self.owner.insert(n, id);
            self.node_domain.insert(n, domain.id);
        }
        self.domains.insert(domain.id, id);
        self.controllers.insert(
            id,
            Controller::new(id, domain.id, domain.nodes, self.config),
        );
        self.refresh_gateways(topo);
        Ok(id)
    }

    pub fn refresh_gateways(&mut self, topo: &Topology) {
        self.gateways = GatewayIndex::build(topo, &self.node_domain);
    }

    pub fn gateways(&self) -> &GatewayIndex {
        &self.gateways
    }

    pub fn resolve(&self, n: NodeId) -> Result<ControllerId, FarmError> {
        self.owner
            .get(&n)
            .copied()
            .ok_or(FarmError::UnassignedNode(n))
    }

    pub fn domain_of(&self, n: NodeId) -> Option<DomainId> {
        self.node_domain.get(&n).copied()
    }

    pub fn controller(&self, id: ControllerId) -> Option<&Controller> {
        self.controllers.get(&id)
    }

    pub fn controller_mut(&mut self, id: ControllerId) -> Option<&mut Controller> {
        self.controllers.get_mut(&id)
    }

    pub fn controllers(&self) -> impl Iterator<Item = &Controller> {
        self.controllers.values()
    }

    pub fn controller_ids(&self) -> Vec<ControllerId> {
        self.controllers.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.controllers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controllers.is_empty()
    }

    pub fn digest_period(&self) -> Tick {
        self.digest_period
    }

    pub fn health_config(&self) -> HealthConfig {
        self.config
    }

    /// Unassigned nodes of `topo`; a complete partition has none.
    pub fn unassigned(&self, topo: &Topology) -> Vec<NodeId> {
        topo.node_ids()
            .filter(|n| !self.owner.contains_key(n))
            .collect()
    }

    /// Starts a new world tick: message rounds restart at zero.
    pub fn set_now(&mut self, t: Tick) {
        if t != self.now {
            self.now = t;
            self.round = 0;
        }
    }

    pub fn messages_processed(&self) -> u64 {
        self.processed
    }

    /// Keys of every processed message, in processing order.
    pub fn processed_log(&self) -> &[OrderKey] {
        &self.log
    }

    pub fn order_violations(&self) -> u64 {
        self.order_violations
    }

    /// Messages sent since the last call, in send order.
    pub fn drain_mirror(&mut self) -> Vec<WestboundMessage> {
        std::mem::take(&mut self.mirror)
    }

    fn send(
        &mut self,
        sender: ControllerId,
        receiver: ControllerId,
        correlation: u64,
        payload: Payload,
    ) {
        let seq = self.next_seq.entry(sender).or_default();
        let msg = WestboundMessage {
            sender,
            receiver,
            correlation,
            tick: self.now,
            round: self.round + 1,
            seq: *seq,
            payload,
        };
        *seq += 1;
        self.mirror.push(msg.clone());
        self.queue.insert(msg.key(), msg);
    }

    fn request(&mut self, sender: ControllerId, receiver: ControllerId, payload: Payload) -> u64 {
        let corr = self.next_correlation;
        self.next_correlation += 1;
        self.send(sender, receiver, corr, payload);
        corr
    }

    /// Processes queued westbound messages in order until none remain.
    pub fn pump(&mut self, topo: &Topology) {
        while let Some((key, msg)) = self.queue.pop_first() {
            if self.last_processed.is_some_and(|last| key < last) {
                self.order_violations += 1;
            }
            self.last_processed = Some(key);
            self.round = self.round.max(msg.round);
            self.processed += 1;
            self.log.push(key);
            self.dispatch(topo, msg);
        }
    }

    fn dispatch(&mut self, topo: &Topology, msg: WestboundMessage) {
        if msg.payload.is_reply() {
            self.replies.insert(msg.correlation, msg.payload);
            return;
        }
        let Some(ctl) = self.controllers.get_mut(&msg.receiver) else {
            return;
        };
        let reply = match msg.payload {
            Payload::HealthDigest { view } => {
                ctl.absorb_digest(msg.sender, view);
                None
            }
            Payload::ResolveNode { node } => Some(Payload::ResolveReply {
                node,
                owner: ctl.owns(node).then_some(ctl.id()),
            }),
            Payload::PathSegmentRequest {
                tenant,
                src,
                targets,
                excluded,
                keep,
            } => {
                let table = ctl.segment_table(topo, tenant, src, &targets, &excluded, &keep);
                Some(Payload::PathSegmentResponse {
                    src,
                    segments: table.into_values().collect(),
                })
            }
            Payload::PeerStoreRead { tenant, path } => {
                let r = ctl.store_get(Requester::Peer(msg.sender), tenant, &path);
                Some(match r {
                    Ok(v) => Payload::PeerStoreReply {
                        value: Some(v),
                        error: None,
                    },
                    Err(e) => Payload::PeerStoreReply {
                        value: None,
                        error: Some(e),
                    },
                })
            }
            _ => None,
        };
        if let Some(p) = reply {
            self.send(msg.receiver, msg.sender, msg.correlation, p);
        }
    }

    fn call(
        &mut self,
        topo: &Topology,
        sender: ControllerId,
        receiver: ControllerId,
        p: Payload,
    ) -> Payload {
        let corr = self.request(sender, receiver, p);
        self.pump(topo);
        self.replies
            .remove(&corr)
            .expect("every request is answered within the same pump")
    }

    /// Routes a southbound report to the controller owning its reporter.
    pub fn ingest_report(
        &mut self,
        topo: &Topology,
        now: Tick,
        report: &SouthboundReport,
    ) -> Result<Vec<HealthEstimate>, FarmError> {
        let c = self.resolve(report.reporter)?;
        Ok(self
            .controllers
            .get_mut(&c)
            .unwrap()
            .ingest_report(topo, now, report)?)
    }

    pub fn digest_due(&self, now: Tick) -> bool {
        now.is_multiple_of(self.digest_period)
    }

    /// Sends `from`'s local estimates to every peer.
    pub fn broadcast_health_digest(&mut self, from: ControllerId) -> Result<(), FarmError> {
        let view = self
            .controllers
            .get(&from)
            .ok_or(FarmError::UnknownController(from))?
            .local_estimates();
        let peers: Vec<ControllerId> = self
            .controllers
            .keys()
            .copied()
            .filter(|&c| c != from)
            .collect();
        for p in peers {
            self.send(
                from,
                p,
                u64::MAX,
                Payload::HealthDigest { view: view.clone() },
            );
        }
        Ok(())
    }

    /// Every controller broadcasts, then all digests are delivered.
    pub fn exchange_digests(&mut self, topo: &Topology) {
        for c in self.controller_ids() {
            self.broadcast_health_digest(c).unwrap();
        }
        self.pump(topo);
    }

    /// Allocates `tenant`'s slice on every controller; each one holds the
    /// links touching its domain. Nothing changes unless all of them accept.
    pub fn slice_allocate(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        links: &BTreeSet<LinkId>,
        share: u32,
        priority: Priority,
    ) -> Result<Vec<TenantSlice>, FarmError> {
        let mut per: BTreeMap<ControllerId, BTreeSet<LinkId>> = self
            .controllers
            .keys()
            .map(|&c| (c, BTreeSet::new()))
            .collect();
        for &l in links {
            let link = topo.link(l).ok_or(ControllerError::UnknownLink(l))?;
            for end in [link.a, link.b] {
                per.entry(self.resolve(end)?).or_default().insert(l);
            }
        }
        for (c, ls) in &per {
            self.controllers[c].check_slice(topo, tenant, ls, share)?;
        }
        let mut out = Vec::new();
        for (c, ls) in per {
            let ctl = self.controllers.get_mut(&c).unwrap();
            out.push(ctl.slice_allocate(topo, tenant, ls, share, priority)?);
        }
        Ok(out)
    }

    pub fn allows(&self, tenant: TenantId, link: &Link) -> bool {
        self.owner
            .get(&link.a)
            .is_some_and(|c| self.controllers[c].slices().allows(tenant, link.id))
    }

    /// Reads another controller's store entry through the westbound channel.
    pub fn peer_store_read(
        &mut self,
        topo: &Topology,
        requester: ControllerId,
        owner: ControllerId,
        tenant: TenantId,
        path: &[String],
    ) -> Result<Vec<u8>, FarmError> {
        for c in [requester, owner] {
            if !self.controllers.contains_key(&c) {
                return Err(FarmError::UnknownController(c));
            }
        }
        let reply = self.call(
            topo,
            requester,
            owner,
            Payload::PeerStoreRead {
                tenant,
                path: path.to_vec(),
            },
        );
        match reply {
            Payload::PeerStoreReply { value: Some(v), .. } => Ok(v),
            Payload::PeerStoreReply { error: Some(e), .. } => Err(e.into()),
            other => unreachable!("unexpected reply {other:?}"),
        }
    }

    /// Finds the owner of `n` by asking every peer.
    fn resolve_remote(
        &mut self,
        topo: &Topology,
        requester: ControllerId,
        n: NodeId,
    ) -> Option<ControllerId> {
        if self.controllers[&requester].owns(n) {
            return Some(requester);
        }
        let peers: Vec<ControllerId> = self
            .controllers
            .keys()
            .copied()
            .filter(|&c| c != requester)
            .collect();
        let corrs: Vec<u64> = peers
            .iter()
            .map(|&p| self.request(requester, p, Payload::ResolveNode { node: n }))
            .collect();
        self.pump(topo);
        let mut found = None;
        for c in corrs {
            if let Some(Payload::ResolveReply { owner: Some(o), .. }) = self.replies.remove(&c) {
                found = found.or(Some(o));
            }
        }
        found
    }

    /// Best path for `tenant` from `src` to `dst`, composed from per-domain
    /// segments joined at gateway links. Nodes in `excluded` are avoided
    /// unless they are an endpoint.
    pub fn cross_domain_path(
        &mut self,
        topo: &Topology,
        src: NodeId,
        dst: NodeId,
        tenant: TenantId,
        excluded: &BTreeSet<NodeId>,
    ) -> Result<Path, FarmError> {
        let requester = self.resolve(src)?;
        self.resolve(dst)?;
        let no_path = FarmError::NoPath { from: src, to: dst };
        let slice_missing = |f: &Farm, c: ControllerId| FarmError::SliceViolation {
            tenant,
            domain: f.controllers[&c].domain(),
        };
        if self.controllers[&requester].slices().get(tenant).is_none() {
            return Err(slice_missing(self, requester));
        }
        if self.controllers.len() == 1 {
            let ctl = &self.controllers[&requester];
            let mut ex = ctl.suspect_failed();
            ex.extend(excluded.iter().copied());
            ex.remove(&src);
            ex.remove(&dst);
            return ctl.route(topo, tenant, src, dst, &ex).map_err(|e| match e {
                ControllerError::NoPathInSlice(..) => no_path,
                other => other.into(),
            });
        }
        let dst_owner = self
            .resolve_remote(topo, requester, dst)
            .ok_or(FarmError::UnassignedNode(dst))?;
        if self.controllers[&dst_owner].slices().get(tenant).is_none() {
            return Err(slice_missing(self, dst_owner));
        }
        if src == dst {
            return Ok(Path::trivial(src));
        }

        let keep = BTreeSet::from([src, dst]);
        let mut avoid = self.controllers[&requester].suspect_failed();
        avoid.extend(excluded.iter().copied());
        avoid.retain(|n| !keep.contains(n));

        // ports: endpoints plus both ends of every usable gateway link
        let mut ports: BTreeMap<ControllerId, BTreeSet<NodeId>> = BTreeMap::new();
        ports.entry(requester).or_default().insert(src);
        ports.entry(dst_owner).or_default().insert(dst);
        let mut gateway_edges: Vec<(NodeId, NodeId, u64)> = Vec::new();
        for (_, set) in self.gateways.all() {
            for &(u, v) in set {
                if avoid.contains(&u) || avoid.contains(&v) {
                    continue;
                }
                let link = topo.link_between(u, v).expect("gateway index tracks links");
                if !self.allows(tenant, link) {
                    continue;
                }
                ports.entry(self.owner[&u]).or_default().insert(u);
                gateway_edges.push((u, v, link.latency as u64));
            }
        }

        // per-domain segments between ports
        let mut edges: BTreeMap<NodeId, Vec<(NodeId, Path)>> = BTreeMap::new();
        let domain_ports: Vec<(ControllerId, BTreeSet<NodeId>)> =
            ports.iter().map(|(c, p)| (*c, p.clone())).collect();
        for (c, members) in domain_ports {
            for &p in &members {
                let segments = if c == requester {
                    self.controllers
                        .get_mut(&c)
                        .unwrap()
                        .segment_table(topo, tenant, p, &members, &avoid, &keep)
                        .into_values()
                        .collect()
                } else {
                    match self.call(
                        topo,
                        requester,
                        c,
                        Payload::PathSegmentRequest {
                            tenant,
                            src: p,
                            targets: members.clone(),
                            excluded: avoid.clone(),
                            keep: keep.clone(),
                        },
                    ) {
                        Payload::PathSegmentResponse { segments, .. } => segments,
                        other => unreachable!("unexpected reply {other:?}"),
                    }
                };
                for s in segments {
                    if s.nodes.len() > 1 {
                        edges.entry(p).or_default().push((s.last(), s));
                    }
                }
            }
        }
        for (u, v, lat) in gateway_edges {
            edges.entry(u).or_default().push((
                v,
                Path {
                    nodes: vec![u, v],
                    latency: lat,
                },
            ));
        }

        overlay_dijkstra(&edges, src, dst).ok_or(no_path)
    }
}

type OverlayLabel = (u64, usize, Vec<NodeId>);

/// Dijkstra over port-to-port segments, with labels compared on the fully
/// expanded path so ties break exactly as on the merged graph.
fn overlay_dijkstra(
    edges: &BTreeMap<NodeId, Vec<(NodeId, Path)>>,
    src: NodeId,
    dst: NodeId,
) -> Option<Path> {
    let mut best: BTreeMap<NodeId, OverlayLabel> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    let start = (0u64, 0usize, vec![src]);
    best.insert(src, start.clone());
    heap.push(Reverse((start, src)));
    let mut done = BTreeSet::new();
    while let Some(Reverse((label, u))) = heap.pop() {
        if !done.insert(u) {
            continue;
        }
        if u == dst {
            return Some(Path {
                latency: label.0,
                nodes: label.2,
            });
        }
        for (v, seg) in edges.get(&u).into_iter().flatten() {
            if done.contains(v) {
                continue;
            }
            let mut nodes = label.2.clone();
            if seg.nodes[1..].iter().any(|n| nodes.contains(n)) {
                continue;
            }
            nodes.extend_from_slice(&seg.nodes[1..]);
            let cand = (label.0 + seg.latency, nodes.len() - 1, nodes);
            if best.get(v).is_none_or(|b| cand < *b) {
                best.insert(*v, cand.clone());
                heap.push(Reverse((cand, *v)));
            }
        }
    }
    None
}

impl PathService for Farm {
    fn admit(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        origin: NodeId,
        dest: NodeId,
    ) -> Result<Path, FlowError> {
        Ok(self.cross_domain_path(topo, origin, dest, tenant, &BTreeSet::new())?)
    }

    fn detour(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        src: NodeId,
        dst: NodeId,
        excluded: &BTreeSet<NodeId>,
    ) -> Option<Path> {
        self.cross_domain_path(topo, src, dst, tenant, excluded)
            .ok()
    }

    fn suspects(&self, vantage: NodeId) -> BTreeSet<NodeId> {
        self.owner
            .get(&vantage)
            .map(|c| self.controllers[c].suspects())
            .unwrap_or_default()
    }

    fn allows(&self, tenant: TenantId, link: LinkId) -> bool {
        self.controllers
            .values()
            .any(|c| c.slices().allows(tenant, link))
    }

    fn qos(&self, link: &Link, pending: &BTreeMap<TenantId, u32>) -> BTreeMap<TenantId, u32> {
        match self.owner.get(&link.a) {
            Some(c) => self.controllers[c].qos_schedule(link, pending),
            None => pending.keys().map(|&t| (t, 0)).collect(),
        }
    }
}
