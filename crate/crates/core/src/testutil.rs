//! Random topologies and partitions shared by unit tests.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::farm::Domain;
use crate::ids::{DomainId, NodeId};
use crate::topology::{Node, Topology};

/// Connected graph: a random spanning tree plus `extra` random chords.
pub fn random_graph<R: Rng>(rng: &mut R, n: u32, extra: usize, max_lat: u32, cap: u32) -> Topology {
    let mut t = Topology::new();
    for i in 0..n {
        t.add_node(Node::switch(i)).unwrap();
    }
    for i in 1..n {
        let p = rng.gen_range(0..i);
        t.add_link(NodeId(p), NodeId(i), rng.gen_range(1..=max_lat), cap)
            .unwrap();
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && t.link_between(NodeId(a), NodeId(b)).is_none() {
            t.add_link(NodeId(a), NodeId(b), rng.gen_range(1..=max_lat), cap)
                .unwrap();
        }
    }
    t
}

/// Partitions a connected graph into `k` connected domains by region growing.
pub fn random_partition<R: Rng>(rng: &mut R, topo: &Topology, k: usize) -> Vec<Domain> {
    let ids: Vec<NodeId> = topo.node_ids().collect();
    let k = k.clamp(1, ids.len());
    let mut owner: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut seeds = BTreeSet::new();
    while seeds.len() < k {
        seeds.insert(ids[rng.gen_range(0..ids.len())]);
    }
    for (i, s) in seeds.iter().enumerate() {
        owner.insert(*s, i);
    }
    while owner.len() < ids.len() {
        let frontier: Vec<(NodeId, usize)> = owner
            .iter()
            .flat_map(|(&n, &d)| {
                topo.neighbors(n)
                    .filter(|(v, _)| !owner.contains_key(v))
                    .map(move |(v, _)| (v, d))
            })
            .collect();
        let (v, d) = frontier[rng.gen_range(0..frontier.len())];
        owner.insert(v, d);
    }
    (0..k)
        .map(|d| Domain {
            id: DomainId(d as u32),
            nodes: owner
                .iter()
                .filter(|(_, &o)| o == d)
                .map(|(&n, _)| n)
                .collect(),
        })
        .collect()
}
