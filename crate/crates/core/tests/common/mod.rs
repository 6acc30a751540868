//! Helpers shared by the integration tests: fixture loading, random scenario
//! generation and independent graph oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdcps_core::controller::Priority;
use sdcps_core::harness::scenario::{
    DomainSpec, FaultSpec, FlowSpec, LinkSpec, NodeSpec, Options, Scenario, TenantSpec,
};
use sdcps_core::topology::{Health, NodeKind};
use sdcps_core::{DomainId, NodeId, TenantId};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixtures() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

pub fn fixture(name: &str) -> Scenario {
    let text = std::fs::read_to_string(fixture_dir().join(name)).unwrap();
    sdcps_core::harness::parse_scenario(&text).unwrap()
}

pub fn bare(n: u32, links: Vec<LinkSpec>) -> Scenario {
    Scenario {
        seed: 0,
        horizon: 50,
        nodes: (0..n)
            .map(|i| NodeSpec {
                id: NodeId(i),
                kind: NodeKind::Switch,
                capacity: 0,
            })
            .collect(),
        links,
        domains: Vec::new(),
        tenants: vec![TenantSpec {
            id: TenantId(0),
            priority: Priority::Gold,
            share: 1,
            links: None,
        }],
        services: Vec::new(),
        dag: None,
        flows: Vec::new(),
        faults: Vec::new(),
        options: Options::default(),
        sweep: None,
    }
}

pub fn link(a: u32, b: u32, latency: u32, capacity: u32) -> LinkSpec {
    LinkSpec {
        a: NodeId(a),
        b: NodeId(b),
        latency,
        capacity,
    }
}

/// Random connected graph: a random spanning tree plus `extra` chords.
pub fn random_links(
    rng: &mut ChaCha8Rng,
    n: u32,
    extra: u32,
    max_lat: u32,
    max_cap: u32,
) -> Vec<LinkSpec> {
    let mut pairs = BTreeSet::new();
    let mut out = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        pairs.insert((j, i));
        out.push(link(
            j,
            i,
            rng.gen_range(1..=max_lat),
            rng.gen_range(1..=max_cap),
        ));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && pairs.insert(key) {
            out.push(link(
                key.0,
                key.1,
                rng.gen_range(1..=max_lat),
                rng.gen_range(1..=max_cap),
            ));
        }
    }
    out
}

pub fn adjacency(n: u32, links: &[LinkSpec]) -> Vec<Vec<(u32, u64)>> {
    let mut adj = vec![Vec::new(); n as usize];
    for l in links {
        adj[l.a.index()].push((l.b.0, l.latency as u64));
        adj[l.b.index()].push((l.a.0, l.latency as u64));
    }
    adj
}

/// Connected regions grown breadth-first from `k` random seeds.
pub fn random_domains(rng: &mut ChaCha8Rng, n: u32, links: &[LinkSpec], k: u32) -> Vec<DomainSpec> {
    let adj = adjacency(n, links);
    let mut ids: Vec<u32> = (0..n).collect();
    ids.shuffle(rng);
    let k = k.clamp(1, n);
    let mut owner: BTreeMap<u32, u32> = BTreeMap::new();
    let mut frontier: Vec<VecDeque<u32>> = Vec::new();
    for (d, &s) in ids.iter().take(k as usize).enumerate() {
        owner.insert(s, d as u32);
        frontier.push(VecDeque::from([s]));
    }
    while owner.len() < n as usize {
        for d in 0..k as usize {
            if let Some(u) = frontier[d].pop_front() {
                for &(v, _) in &adj[u as usize] {
                    if let std::collections::btree_map::Entry::Vacant(e) = owner.entry(v) {
                        e.insert(d as u32);
                        frontier[d].push_back(v);
                    }
                }
            }
        }
    }
    (0..k)
        .map(|d| DomainSpec {
            id: DomainId(d),
            nodes: owner
                .iter()
                .filter(|(_, &o)| o == d)
                .map(|(&nd, _)| NodeId(nd))
                .collect(),
        })
        .collect()
}

/// Reachability oracle by breadth-first search.
pub fn reachable(n: u32, links: &[LinkSpec], src: u32, dst: u32, excluded: &BTreeSet<u32>) -> bool {
    let adj = adjacency(n, links);
    let mut seen = vec![false; n as usize];
    let mut q = VecDeque::from([src]);
    seen[src as usize] = true;
    while let Some(u) = q.pop_front() {
        if u == dst {
            return true;
        }
        for &(v, _) in &adj[u as usize] {
            if !seen[v as usize] && !excluded.contains(&v) {
                seen[v as usize] = true;
                q.push_back(v);
            }
        }
    }
    false
}

/// All-pairs shortest latencies (Floyd-Warshall).
pub fn all_pairs(n: u32, links: &[LinkSpec]) -> Vec<Vec<Option<u64>>> {
    let n = n as usize;
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for l in links {
        let w = Some(l.latency as u64);
        let (a, b) = (l.a.index(), l.b.index());
        d[a][b] = d[a][b].min(w).or(w);
        d[b][a] = d[a][b];
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k][j] {
                    if d[i][j].is_none_or(|x| ik + kj < x) {
                        d[i][j] = Some(ik + kj);
                    }
                }
            }
        }
    }
    d
}

/// One resilience case: a random world with one intermediate-node failure.
pub struct ResilienceCase {
    pub scenario: Scenario,
    pub failed: u32,
}

pub fn resilience_case(seed: u64) -> ResilienceCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..=50u32);
    let links = random_links(&mut rng, n, n / 2, 3, 2);
    let k = rng.gen_range(1..=3);
    let domains = random_domains(&mut rng, n, &links, k);
    let mut s = bare(n, links);
    s.seed = seed;
    s.domains = domains;
    let fault_tick = rng.gen_range(0..=6u64);
    let flows = rng.gen_range(1..=3);
    let mut endpoints = BTreeSet::new();
    for _ in 0..flows {
        let o = rng.gen_range(0..n);
        let mut d = rng.gen_range(0..n);
        while d == o {
            d = rng.gen_range(0..n);
        }
        endpoints.insert(o);
        endpoints.insert(d);
        s.flows.push(FlowSpec {
            tenant: TenantId(0),
            origin: NodeId(o),
            dest: NodeId(d),
            units: rng.gen_range(1..=8),
            start: fault_tick + rng.gen_range(0..=2),
        });
    }
    // fail an intermediate of the first flow's shortest path when it has one
    let first = &s.flows[0];
    let path = shortest_path(n, &s.links, first.origin.0, first.dest.0);
    let inner: Vec<u32> = path[1..path.len() - 1]
        .iter()
        .copied()
        .filter(|x| !endpoints.contains(x))
        .collect();
    let failed = if inner.is_empty() {
        let others: Vec<u32> = (0..n).filter(|x| !endpoints.contains(x)).collect();
        *others.choose(&mut rng).unwrap_or(&path[0])
    } else {
        *inner.choose(&mut rng).unwrap()
    };
    s.faults.push(FaultSpec {
        tick: fault_tick,
        node: NodeId(failed),
        health: Health::Failed,
    });
    s.horizon = 3000;
    ResilienceCase {
        scenario: s,
        failed,
    }
}

/// Least-latency path by Dijkstra with (latency, hops, node sequence) order.
pub fn shortest_path(n: u32, links: &[LinkSpec], src: u32, dst: u32) -> Vec<u32> {
    let adj = adjacency(n, links);
    let mut best: BTreeMap<u32, (u64, usize, Vec<u32>)> = BTreeMap::new();
    let mut open: BTreeSet<(u64, usize, Vec<u32>)> = BTreeSet::new();
    open.insert((0, 0, vec![src]));
    while let Some(cur) = open.pop_first() {
        let u = *cur.2.last().unwrap();
        if best.contains_key(&u) {
            continue;
        }
        best.insert(u, cur.clone());
        if u == dst {
            return cur.2;
        }
        for &(v, w) in &adj[u as usize] {
            if !best.contains_key(&v) {
                let mut p = cur.2.clone();
                p.push(v);
                open.insert((cur.0 + w, cur.1 + 1, p));
            }
        }
    }
    vec![src]
}

/// A random world with several tenants, flows and faults of every kind.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..=24u32);
    let mut links = random_links(&mut rng, n, n / 2, 3, 4);
    for l in &mut links {
        l.capacity = l.capacity.max(2);
    }
    let k = rng.gen_range(1..=3);
    let domains = random_domains(&mut rng, n, &links, k);
    let mut s = bare(n, links);
    s.seed = seed;
    s.horizon = rng.gen_range(30..=80);
    s.domains = domains;
    s.tenants.push(TenantSpec {
        id: TenantId(1),
        priority: Priority::Bronze,
        share: 1,
        links: None,
    });
    for _ in 0..rng.gen_range(1..=4) {
        let o = rng.gen_range(0..n);
        let d = (o + rng.gen_range(1..n)) % n;
        s.flows.push(FlowSpec {
            tenant: TenantId(rng.gen_range(0..2)),
            origin: NodeId(o),
            dest: NodeId(d),
            units: rng.gen_range(1..=12),
            start: rng.gen_range(0..10),
        });
    }
    for _ in 0..rng.gen_range(0..=3) {
        let health = match rng.gen_range(0..4) {
            0 => Health::Failed,
            1 => Health::Congested {
                slowdown: rng.gen_range(1..=4),
            },
            2 => Health::Malicious {
                drop_prob: rng.gen_range(0.0..1.0),
            },
            _ => Health::Healthy,
        };
        s.faults.push(FaultSpec {
            tick: rng.gen_range(0..s.horizon),
            node: NodeId(rng.gen_range(0..n)),
            health,
        });
    }
    s
}
