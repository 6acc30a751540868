//! The shared world model: nodes, links, node health and path computation.
//!
//! Links are undirected with symmetric latency and capacity. Path ordering is
//! total: `(latency, hop count, node-id sequence)`, so every query has exactly
//! one answer.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::{DomainId, LinkId, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("node {0} already exists")]
    DuplicateId(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("self loop on {0}")]
    SelfLoop(NodeId),
    #[error("link between {0} and {1} already exists")]
    DuplicateLink(NodeId, NodeId),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("excluded set contains endpoint {0}")]
    ExcludesEndpoint(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    SmartDevice,
    Switch,
    Surrogate,
    #[serde(rename = "ControllerVES")]
    ControllerVes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Health {
    #[default]
    Healthy,
    /// Traversal latency of adjacent links is multiplied by `slowdown`.
    Congested { slowdown: u32 },
    /// Drops every unit that arrives.
    Failed,
    /// Drops arriving units with probability `drop_prob`, drawn from the world RNG.
    Malicious { drop_prob: f64 },
}

impl Health {
    pub fn validate(&self) -> Result<(), TopologyError> {
        match *self {
            Health::Congested { slowdown } if slowdown < 1 => Err(TopologyError::BadParameter(
                format!("congestion slowdown {slowdown} < 1"),
            )),
            Health::Malicious { drop_prob } if !(0.0..=1.0).contains(&drop_prob) => Err(
                TopologyError::BadParameter(format!("drop probability {drop_prob} outside [0,1]")),
            ),
            _ => Ok(()),
        }
    }

    pub fn slowdown(&self) -> u64 {
        match *self {
            Health::Congested { slowdown } => slowdown.max(1) as u64,
            _ => 1,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Health::Failed)
    }

    /// Stable textual form used in traces.
    pub fn label(&self) -> String {
        match *self {
            Health::Healthy => "healthy".into(),
            Health::Congested { slowdown } => format!("congested({slowdown})"),
            Health::Failed => "failed".into(),
            Health::Malicious { drop_prob } => format!("malicious({drop_prob})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub domain: DomainId,
    /// Service units per tick.
    pub compute_capacity: u32,
    pub health: Health,
}

impl Node {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind, compute_capacity: u32) -> Self {
        Node {
            id: id.into(),
            kind,
            domain: DomainId(0),
            compute_capacity,
            health: Health::Healthy,
        }
    }

    pub fn switch(id: impl Into<NodeId>) -> Self {
        Node::new(id, NodeKind::Switch, 0)
    }

    pub fn can_host(&self) -> bool {
        self.compute_capacity > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    /// Ticks, at least 1.
    pub latency: u32,
    /// Units per tick in each direction, at least 1.
    pub capacity: u32,
}

impl Link {
    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if self.a == n {
            self.b
        } else {
            self.a
        }
    }
}

/// A loop-free node sequence together with its total latency.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub latency: u64,
}

impl Path {
    pub fn trivial(n: NodeId) -> Self {
        Path {
            nodes: vec![n],
            latency: 0,
        }
    }

    pub fn hops(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    fn key(&self) -> (u64, usize, Vec<NodeId>) {
        (self.latency, self.hops(), self.nodes.clone())
    }

    pub fn first(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn last(&self) -> NodeId {
        *self.nodes.last().expect("paths are non-empty")
    }

    pub fn position(&self, n: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&x| x == n)
    }
}

type Label = (u64, usize, Vec<NodeId>);

#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, Node>,
    links: BTreeMap<LinkId, Link>,
    pairs: BTreeMap<(NodeId, NodeId), LinkId>,
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, LinkId>>,
    next_link: u32,
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: Node) -> Result<NodeId, TopologyError> {
        if self.nodes.contains_key(&node.id) {
            return Err(TopologyError::DuplicateId(node.id));
        }
        if node.compute_capacity == 0 && node.kind != NodeKind::Switch {
            return Err(TopologyError::BadParameter(format!(
                "{:?} node {} needs compute capacity > 0",
                node.kind, node.id
            )));
        }
        node.health.validate()?;
        let id = node.id;
        self.nodes.insert(id, node);
        self.adjacency.insert(id, BTreeMap::new());
        Ok(id)
    }

    pub fn add_link(
        &mut self,
        a: NodeId,
        b: NodeId,
        latency: u32,
        capacity: u32,
    ) -> Result<LinkId, TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        self.require(a)?;
        self.require(b)?;
        if self.pairs.contains_key(&pair(a, b)) {
            return Err(TopologyError::DuplicateLink(a, b));
        }
        if latency < 1 || capacity < 1 {
            return Err(TopologyError::BadParameter(format!(
                "link {a}-{b}: latency {latency} and capacity {capacity} must be >= 1"
            )));
        }
        let id = LinkId(self.next_link);
        self.next_link += 1;
        self.links.insert(
            id,
            Link {
                id,
                a,
                b,
                latency,
                capacity,
            },
        );
        self.pairs.insert(pair(a, b), id);
        self.adjacency.get_mut(&a).unwrap().insert(b, id);
        self.adjacency.get_mut(&b).unwrap().insert(a, id);
        Ok(id)
    }

    pub fn set_health(&mut self, n: NodeId, h: Health) -> Result<(), TopologyError> {
        h.validate()?;
        self.nodes
            .get_mut(&n)
            .ok_or(TopologyError::UnknownNode(n))?
            .health = h;
        Ok(())
    }

    pub fn set_domain(&mut self, n: NodeId, d: DomainId) -> Result<(), TopologyError> {
        self.nodes
            .get_mut(&n)
            .ok_or(TopologyError::UnknownNode(n))?
            .domain = d;
        Ok(())
    }

    fn require(&self, n: NodeId) -> Result<&Node, TopologyError> {
        self.nodes.get(&n).ok_or(TopologyError::UnknownNode(n))
    }

    pub fn node(&self, n: NodeId) -> Option<&Node> {
        self.nodes.get(&n)
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains_key(&n)
    }

    pub fn health(&self, n: NodeId) -> Health {
        self.nodes.get(&n).map(|n| n.health).unwrap_or_default()
    }

    pub fn link(&self, l: LinkId) -> Option<&Link> {
        self.links.get(&l)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.pairs.get(&pair(a, b)).and_then(|l| self.links.get(l))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Neighbours of `n` in ascending id order, with the connecting link.
    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = (NodeId, &Link)> + '_ {
        self.adjacency
            .get(&n)
            .into_iter()
            .flat_map(move |m| m.iter().map(move |(&v, l)| (v, &self.links[l])))
    }

    /// Link latency scaled by the worst congestion slowdown of its endpoints.
    pub fn effective_latency(&self, link: &Link) -> u64 {
        let s = self
            .health(link.a)
            .slowdown()
            .max(self.health(link.b).slowdown());
        link.latency as u64 * s
    }

    /// Sum of nominal latencies along `nodes`, or `None` if some hop has no link.
    pub fn path_latency(&self, nodes: &[NodeId]) -> Option<u64> {
        nodes
            .windows(2)
            .map(|w| self.link_between(w[0], w[1]).map(|l| l.latency as u64))
            .sum()
    }

    pub fn k_shortest_paths(
        &self,
        src: NodeId,
        dst: NodeId,
        k: usize,
        link_filter: &dyn Fn(&Link) -> bool,
    ) -> Result<Vec<Path>, TopologyError> {
        self.require(src)?;
        self.require(dst)?;
        if k == 0 {
            return Err(TopologyError::BadParameter("k must be >= 1".into()));
        }
        Ok(self.yen(src, dst, k, link_filter, &|l: &Link| l.latency as u64))
    }

    /// Single best path under `weight` (which must be >= 1 per link).
    pub fn shortest_path_by(
        &self,
        src: NodeId,
        dst: NodeId,
        link_filter: &dyn Fn(&Link) -> bool,
        weight: &dyn Fn(&Link) -> u64,
    ) -> Option<Path> {
        if !self.contains(src) || !self.contains(dst) {
            return None;
        }
        self.dijkstra(
            src,
            dst,
            link_filter,
            &BTreeSet::new(),
            &BTreeSet::new(),
            weight,
        )
    }

    /// Single-source best paths to every reachable node, under nominal latency.
    pub fn shortest_tree(
        &self,
        src: NodeId,
        link_filter: &dyn Fn(&Link) -> bool,
    ) -> BTreeMap<NodeId, Path> {
        let mut best: BTreeMap<NodeId, Label> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        if !self.contains(src) {
            return BTreeMap::new();
        }
        let start: Label = (0, 0, vec![src]);
        best.insert(src, start.clone());
        heap.push(Reverse(start));
        while let Some(Reverse(label)) = heap.pop() {
            let u = *label.2.last().unwrap();
            if best.get(&u) != Some(&label) {
                continue;
            }
            for (v, link) in self.neighbors(u) {
                if !link_filter(link) || label.2.contains(&v) {
                    continue;
                }
                let mut seq = label.2.clone();
                seq.push(v);
                let cand: Label = (label.0 + link.latency as u64, label.1 + 1, seq);
                if best.get(&v).is_none_or(|b| cand < *b) {
                    best.insert(v, cand.clone());
                    heap.push(Reverse(cand));
                }
            }
        }
        best.into_iter()
            .map(|(n, (lat, _, nodes))| {
                (
                    n,
                    Path {
                        nodes,
                        latency: lat,
                    },
                )
            })
            .collect()
    }

    fn dijkstra(
        &self,
        src: NodeId,
        dst: NodeId,
        link_filter: &dyn Fn(&Link) -> bool,
        banned_nodes: &BTreeSet<NodeId>,
        banned_links: &BTreeSet<LinkId>,
        weight: &dyn Fn(&Link) -> u64,
    ) -> Option<Path> {
        if banned_nodes.contains(&src) || banned_nodes.contains(&dst) {
            return None;
        }
        let mut best: BTreeMap<NodeId, Label> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        let start: Label = (0, 0, vec![src]);
        best.insert(src, start.clone());
        heap.push(Reverse(start));
        while let Some(Reverse(label)) = heap.pop() {
            let u = *label.2.last().unwrap();
            if best.get(&u) != Some(&label) {
                continue;
            }
            if u == dst {
                return Some(Path {
                    nodes: label.2,
                    latency: label.0,
                });
            }
            for (v, link) in self.neighbors(u) {
                if banned_nodes.contains(&v)
                    || banned_links.contains(&link.id)
                    || !link_filter(link)
                    || label.2.contains(&v)
                {
                    continue;
                }
                let mut seq = label.2.clone();
                seq.push(v);
                let cand: Label = (label.0 + weight(link), label.1 + 1, seq);
                if best.get(&v).is_none_or(|b| cand < *b) {
                    best.insert(v, cand.clone());
                    heap.push(Reverse(cand));
                }
            }
        }
        None
    }

    fn yen(
        &self,
        src: NodeId,
        dst: NodeId,
        k: usize,
        link_filter: &dyn Fn(&Link) -> bool,
        weight: &dyn Fn(&Link) -> u64,
    ) -> Vec<Path> {
        let none = BTreeSet::new();
        let Some(first) = self.dijkstra(src, dst, link_filter, &none, &BTreeSet::new(), weight)
        else {
            return Vec::new();
        };
        let mut accepted = vec![first];
        let mut candidates: BTreeSet<Label> = BTreeSet::new();
        while accepted.len() < k {
            let prev = accepted.last().unwrap().nodes.clone();
            for i in 0..prev.len().saturating_sub(1) {
                let spur = prev[i];
                let root = &prev[..=i];
                let mut banned_links = BTreeSet::new();
                for p in &accepted {
                    if p.nodes.len() > i + 1 && p.nodes[..=i] == *root {
                        if let Some(l) = self.link_between(p.nodes[i], p.nodes[i + 1]) {
                            banned_links.insert(l.id);
                        }
                    }
                }
                let banned_nodes: BTreeSet<NodeId> = root[..i].iter().copied().collect();
                let Some(spur_path) =
                    self.dijkstra(spur, dst, link_filter, &banned_nodes, &banned_links, weight)
                else {
                    continue;
                };
                let root_lat: u64 = root
                    .windows(2)
                    .map(|w| weight(self.link_between(w[0], w[1]).unwrap()))
                    .sum();
                let mut nodes = root.to_vec();
                nodes.extend_from_slice(&spur_path.nodes[1..]);
                let cand = Path {
                    latency: root_lat + spur_path.latency,
                    nodes,
                };
                if !accepted.contains(&cand) {
                    candidates.insert(cand.key());
                }
            }
            let Some(next) = candidates.pop_first() else {
                break;
            };
            accepted.push(Path {
                latency: next.0,
                nodes: next.2,
            });
        }
        accepted
    }

    pub fn reachable_excluding(
        &self,
        src: NodeId,
        dst: NodeId,
        excluded: &BTreeSet<NodeId>,
    ) -> Result<bool, TopologyError> {
        self.require(src)?;
        self.require(dst)?;
        for e in [src, dst] {
            if excluded.contains(&e) {
                return Err(TopologyError::ExcludesEndpoint(e));
            }
        }
        let mut seen = BTreeSet::from([src]);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if u == dst {
                return Ok(true);
            }
            for (v, _) in self.neighbors(u) {
                if !excluded.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        Ok(false)
    }

    /// Whether the subgraph induced by `members` is connected (empty counts as connected).
    pub fn induced_connected(&self, members: &BTreeSet<NodeId>) -> bool {
        let Some(&start) = members.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for (v, _) in self.neighbors(u) {
                if members.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == members.len()
    }
}
