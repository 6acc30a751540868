//! A single-domain controller.
//!
//! Holds the tenant slices for the links touching its domain, a tenant-scoped
//! data store, and a health monitor fed by southbound reports. Peer digests
//! are folded into a merged view by severity.

mod health;
mod slice;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use health::{
    HealthConfig, HealthEstimate, HealthMonitor, Observation, SouthboundReport, Verdict,
};
pub use slice::{Priority, SliceTable, TenantSlice};
pub use store::{DataStore, Requester};

use crate::ids::{ControllerId, DomainId, LinkId, NodeId, TenantId, Tick};
use crate::topology::{Link, Path, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerError {
    #[error("link {0} would be oversubscribed")]
    Oversubscribed(LinkId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("store path must not be empty")]
    EmptyPath,
    #[error("entry not found")]
    NotFound,
    #[error("access denied")]
    AccessDenied,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} and {1} are not neighbours")]
    NotNeighbor(NodeId, NodeId),
    #[error("stale report from {reporter}: tick {tick} < last processed {last}")]
    StaleReport {
        reporter: NodeId,
        tick: Tick,
        last: Tick,
    },
    #[error("report from the future (tick {0})")]
    FutureReport(Tick),
    #[error("tenant {0} has no slice")]
    NoSlice(TenantId),
    #[error("no path from {0} to {1} inside the tenant slice")]
    NoPathInSlice(NodeId, NodeId),
}

/// Shortest path inside a tenant slice, skipping links that touch `excluded`.
pub(crate) fn slice_route(
    topo: &Topology,
    slice: &TenantSlice,
    src: NodeId,
    dst: NodeId,
    excluded: &BTreeSet<NodeId>,
    within: Option<&BTreeSet<NodeId>>,
) -> Option<Path> {
    if src == dst {
        return (!excluded.contains(&src)).then(|| Path::trivial(src));
    }
    let filter = |l: &Link| {
        slice.links.contains(&l.id)
            && !excluded.contains(&l.a)
            && !excluded.contains(&l.b)
            && within.is_none_or(|w| w.contains(&l.a) && w.contains(&l.b))
    };
    topo.k_shortest_paths(src, dst, 1, &filter)
        .ok()
        .and_then(|mut v| v.pop())
}

#[derive(Debug, Clone)]
pub struct Controller {
    id: ControllerId,
    domain: DomainId,
    nodes: BTreeSet<NodeId>,
    slices: SliceTable,
    store: DataStore,
    health: HealthMonitor,
    peer_views: BTreeMap<ControllerId, BTreeMap<NodeId, Verdict>>,
    segment_cache: BTreeMap<(TenantId, NodeId), BTreeMap<NodeId, Path>>,
}

impl Controller {
    pub fn new(
        id: ControllerId,
        domain: DomainId,
        nodes: BTreeSet<NodeId>,
        config: HealthConfig,
    ) -> Self {
        Controller {
            id,
            domain,
            nodes,
            slices: SliceTable::new(),
            store: DataStore::new(),
            health: HealthMonitor::new(config),
            peer_views: BTreeMap::new(),
            segment_cache: BTreeMap::new(),
        }
    }

    /// A controller owning every node of `topo`.
    pub fn standalone(topo: &Topology, config: HealthConfig) -> Self {
        Self::new(
            ControllerId(0),
            DomainId(0),
            topo.node_ids().collect(),
            config,
        )
    }

    pub fn id(&self) -> ControllerId {
        self.id
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn owns(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn slices(&self) -> &SliceTable {
        &self.slices
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut DataStore {
        &mut self.store
    }

    pub fn slice_allocate(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        links: BTreeSet<LinkId>,
        share: u32,
        priority: Priority,
    ) -> Result<TenantSlice, ControllerError> {
        let s = self.slices.allocate(topo, tenant, links, share, priority)?;
        self.segment_cache.clear();
        Ok(s)
    }

    pub(crate) fn check_slice(
        &self,
        topo: &Topology,
        tenant: TenantId,
        links: &BTreeSet<LinkId>,
        share: u32,
    ) -> Result<(), ControllerError> {
        self.slices.check(topo, tenant, links, share)
    }

    pub fn store_put(
        &mut self,
        tenant: TenantId,
        path: &[String],
        value: Vec<u8>,
    ) -> Result<(), ControllerError> {
        self.store.put(tenant, path, value)
    }

    pub fn store_get(
        &self,
        requester: Requester,
        owner: TenantId,
        path: &[String],
    ) -> Result<Vec<u8>, ControllerError> {
        self.store.get(requester, owner, path).map(<[u8]>::to_vec)
    }

    pub fn ingest_report(
        &mut self,
        topo: &Topology,
        now: Tick,
        report: &SouthboundReport,
    ) -> Result<Vec<HealthEstimate>, ControllerError> {
        let tr = self.health.ingest(topo, now, report)?;
        if !tr.is_empty() {
            self.segment_cache.clear();
        }
        Ok(tr)
    }

    pub fn health(&self) -> &HealthMonitor {
        &self.health
    }

    /// Local estimates, one per node this controller has observations about.
    pub fn local_estimates(&self) -> BTreeMap<NodeId, Verdict> {
        self.health.verdicts()
    }

    /// Replaces the last digest received from `from`.
    pub fn absorb_digest(&mut self, from: ControllerId, view: BTreeMap<NodeId, Verdict>) {
        if self.peer_views.get(&from) != Some(&view) {
            self.peer_views.insert(from, view);
            self.segment_cache.clear();
        }
    }

    /// Own estimates merged with peer digests; the most severe verdict wins.
    pub fn merged_view(&self) -> BTreeMap<NodeId, Verdict> {
        let mut view = self.local_estimates();
        for peer in self.peer_views.values() {
            for (&n, &v) in peer {
                let e = view.entry(n).or_insert(v);
                *e = (*e).max(v);
            }
        }
        view.retain(|_, v| v.is_suspect());
        view
    }

    pub fn suspect_failed(&self) -> BTreeSet<NodeId> {
        self.merged_view()
            .into_iter()
            .filter(|(_, v)| *v == Verdict::SuspectFailed)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn suspects(&self) -> BTreeSet<NodeId> {
        self.merged_view().into_keys().collect()
    }

    /// Least-latency path for `tenant` over its slice links avoiding `excluded`.
    pub fn route(
        &self,
        topo: &Topology,
        tenant: TenantId,
        src: NodeId,
        dst: NodeId,
        excluded: &BTreeSet<NodeId>,
    ) -> Result<Path, ControllerError> {
        let slice = self
            .slices
            .get(tenant)
            .ok_or(ControllerError::NoSlice(tenant))?;
        for n in [src, dst] {
            if !topo.contains(n) {
                return Err(ControllerError::UnknownNode(n));
            }
        }
        slice_route(topo, slice, src, dst, excluded, None)
            .ok_or(ControllerError::NoPathInSlice(src, dst))
    }

    pub fn admit_flow(
        &self,
        topo: &Topology,
        tenant: TenantId,
        origin: NodeId,
        dest: NodeId,
    ) -> Result<Path, ControllerError> {
        self.route(topo, tenant, origin, dest, &self.suspect_failed())
    }

    pub fn qos_schedule(
        &self,
        link: &Link,
        pending: &BTreeMap<TenantId, u32>,
    ) -> BTreeMap<TenantId, u32> {
        self.slices.qos_schedule(link, pending)
    }

    /// Intra-domain best paths from `src` to each of `targets`, restricted to
    /// slice links with both endpoints in this domain, avoiding suspects and
    /// `extra_excluded` except for the nodes in `keep`. Answers are memoized
    /// until the slice table or the health view changes.
    pub fn segment_table(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        src: NodeId,
        targets: &BTreeSet<NodeId>,
        extra_excluded: &BTreeSet<NodeId>,
        keep: &BTreeSet<NodeId>,
    ) -> BTreeMap<NodeId, Path> {
        let Some(slice) = self.slices.get(tenant) else {
            return BTreeMap::new();
        };
        let mut excluded = self.suspect_failed();
        let cacheable = extra_excluded.is_empty() && excluded.is_disjoint(keep);
        excluded.extend(extra_excluded.iter().copied());
        excluded.retain(|n| !keep.contains(n));
        if !self.owns(src) || excluded.contains(&src) {
            return BTreeMap::new();
        }
        let tree = match self.segment_cache.get(&(tenant, src)) {
            Some(t) if cacheable => t.clone(),
            _ => {
                let nodes = &self.nodes;
                let filter = |l: &Link| {
                    slice.links.contains(&l.id)
                        && nodes.contains(&l.a)
                        && nodes.contains(&l.b)
                        && !excluded.contains(&l.a)
                        && !excluded.contains(&l.b)
                };
                let t = topo.shortest_tree(src, &filter);
                if cacheable {
                    self.segment_cache.insert((tenant, src), t.clone());
                }
                t
            }
        };
        tree.into_iter()
            .filter(|(n, _)| targets.contains(n))
            .collect()
    }
}
