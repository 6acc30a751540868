//! Scenario documents: a fixed JSON schema describing a world, its workload
//! and its faults. Parsing validates every statically checkable
//! precondition and reports all violations at once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{CompositionDag, DagEdge, Registry, ServiceDef, Task, TaskId};
use crate::controller::{ControllerError, HealthConfig, Priority};
use crate::farm::{Domain, Farm, FarmError};
use crate::ids::{DomainId, LinkId, NodeId, TenantId, Tick};
use crate::sandbox::AcceptancePolicy;
use crate::topology::{Health, Link, Node, NodeKind, Topology};
use crate::world::{FlowRequest, World};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("syntax error at line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    ValidationError(Vec<String>),
}

fn default_kind() -> NodeKind {
    NodeKind::Switch
}

fn one() -> u32 {
    1
}

fn silver() -> Priority {
    Priority::Silver
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default = "default_kind")]
    pub kind: NodeKind,
    #[serde(default)]
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default = "one")]
    pub latency: u32,
    #[serde(default = "one")]
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: DomainId,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenantSpec {
    pub id: TenantId,
    #[serde(default = "silver")]
    pub priority: Priority,
    #[serde(default = "one")]
    pub share: u32,
    /// Endpoint pairs of the slice links; every link when absent.
    #[serde(default)]
    pub links: Option<Vec<(NodeId, NodeId)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub cost: u32,
    pub providers: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: TaskId,
    pub service: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: TaskId,
    pub to: TaskId,
    #[serde(default = "one")]
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DagSpec {
    /// Tenant whose slice carries materialized transfers.
    #[serde(default)]
    pub tenant: TenantId,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub tenant: TenantId,
    pub origin: NodeId,
    pub dest: NodeId,
    pub units: u32,
    #[serde(default)]
    pub start: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub tick: Tick,
    pub node: NodeId,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub materialize_transfers: bool,
    #[serde(rename = "W")]
    pub window: u32,
    pub digest_period: Tick,
    pub congestion_threshold: u32,
    pub acceptance: AcceptancePolicy,
}

impl Default for Options {
    fn default() -> Self {
        let h = HealthConfig::default();
        Options {
            materialize_transfers: false,
            window: h.window,
            digest_period: crate::farm::DEFAULT_DIGEST_PERIOD,
            congestion_threshold: h.congestion_threshold,
            acceptance: AcceptancePolicy::default(),
        }
    }
}

/// Workload for the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub tasks: u32,
    pub cost: u32,
    pub instances: Vec<u32>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            tasks: 64,
            cost: 1,
            instances: vec![1, 2, 4, 8, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub horizon: Tick,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    /// Controller partitions; one domain over every node when empty.
    #[serde(default)]
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub tenants: Vec<TenantSpec>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub dag: Option<DagSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => ScenarioError::SyntaxError {
                line: e.line(),
                message: e.to_string(),
            },
            Category::Data => ScenarioError::ValidationError(vec![e.to_string()]),
        }
    })?;
    s.validate()?;
    Ok(s)
}

fn link_name(topo: &Topology, l: LinkId) -> String {
    match topo.link(l) {
        Some(k) => format!("link {l} ({}-{}, capacity {})", k.a, k.b, k.capacity),
        None => format!("link {l}"),
    }
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.build().map(|_| ())
    }

    /// Builds the world at tick 0, or lists every violation found.
    pub fn build(&self) -> Result<World, ScenarioError> {
        let mut errs: Vec<String> = Vec::new();
        let o = &self.options;
        if o.window == 0 {
            errs.push("option W must be at least 1".into());
        }
        if o.digest_period == 0 {
            errs.push("option digest_period must be at least 1".into());
        }
        if o.congestion_threshold == 0 {
            errs.push("option congestion_threshold must be at least 1".into());
        }
        if let Some(sw) = &self.sweep {
            if sw.cost == 0 {
                errs.push("sweep cost must be at least 1".into());
            }
            if sw.instances.contains(&0) {
                errs.push("sweep instance counts must be at least 1".into());
            }
        }

        // topology
        let mut topo = Topology::new();
        for n in &self.nodes {
            if let Err(e) = topo.add_node(Node::new(n.id, n.kind, n.capacity)) {
                errs.push(format!("node {}: {e}", n.id));
            }
        }
        for l in &self.links {
            if let Err(e) = topo.add_link(l.a, l.b, l.latency, l.capacity) {
                errs.push(format!("link {}-{}: {e}", l.a, l.b));
            }
        }

        // domains
        let config = HealthConfig {
            window: o.window.max(1),
            congestion_threshold: o.congestion_threshold.max(1),
        };
        let mut farm = Farm::new(config, o.digest_period.max(1));
        let domains: Vec<DomainSpec> = if self.domains.is_empty() {
            vec![DomainSpec {
                id: DomainId(0),
                nodes: topo.node_ids().collect(),
            }]
        } else {
            self.domains.clone()
        };
        let mut listed: BTreeMap<NodeId, DomainId> = BTreeMap::new();
        let mut domains_ok = true;
        for d in &domains {
            let mut ok = true;
            let mut seen = BTreeSet::new();
            for &n in &d.nodes {
                if !seen.insert(n) {
                    continue;
                }
                if let Some(&prev) = listed.get(&n) {
                    errs.push(format!("domains {prev} and {} both contain {n}", d.id));
                    ok = false;
                } else {
                    listed.insert(n, d.id);
                }
            }
            if !ok {
                domains_ok = false;
                continue;
            }
            let dom = Domain {
                id: d.id,
                nodes: seen,
            };
            match farm.register_controller(&topo, dom) {
                Ok(_) => {
                    for &n in &d.nodes {
                        let _ = topo.set_domain(n, d.id);
                    }
                }
                Err(e) => {
                    errs.push(format!("domain {}: {e}", d.id));
                    domains_ok = false;
                }
            }
        }
        let unassigned: Vec<NodeId> = topo
            .node_ids()
            .filter(|n| !listed.contains_key(n))
            .collect();
        if !unassigned.is_empty() {
            let names: Vec<String> = unassigned.iter().map(|n| n.to_string()).collect();
            errs.push(format!("nodes not in any domain: {}", names.join(", ")));
            domains_ok = false;
        }
        farm.refresh_gateways(&topo);

        // tenants and slices
        let mut slices: BTreeMap<TenantId, BTreeSet<LinkId>> = BTreeMap::new();
        for t in &self.tenants {
            if slices.contains_key(&t.id) {
                errs.push(format!("tenant {} declared twice", t.id));
                continue;
            }
            if t.share == 0 {
                errs.push(format!("tenant {} share must be at least 1", t.id));
            }
            let links: BTreeSet<LinkId> = match &t.links {
                None => topo.links().map(|l| l.id).collect(),
                Some(pairs) => pairs
                    .iter()
                    .filter_map(|&(a, b)| match topo.link_between(a, b) {
                        Some(l) => Some(l.id),
                        None => {
                            errs.push(format!("tenant {}: no link {a}-{b}", t.id));
                            None
                        }
                    })
                    .collect(),
            };
            slices.insert(t.id, links);
        }
        let mut load: BTreeMap<LinkId, Vec<(TenantId, u32)>> = BTreeMap::new();
        for t in &self.tenants {
            if let Some(ls) = slices.get(&t.id) {
                for &l in ls {
                    load.entry(l).or_default().push((t.id, t.share));
                }
            }
        }
        let mut oversubscribed = BTreeSet::new();
        for (l, users) in &load {
            let total: u64 = users.iter().map(|u| u.1 as u64).sum();
            let cap = topo.link(*l).map_or(0, |k| k.capacity as u64);
            if total > cap {
                let who: Vec<String> = users.iter().map(|(t, s)| format!("{t}:{s}")).collect();
                errs.push(format!(
                    "{} oversubscribed: shares {} sum to {total}",
                    link_name(&topo, *l),
                    who.join(" ")
                ));
                oversubscribed.insert(*l);
            }
        }
        if domains_ok && oversubscribed.is_empty() {
            let mut done = BTreeSet::new();
            for t in &self.tenants {
                if !done.insert(t.id) {
                    continue;
                }
                if let Err(e) =
                    farm.slice_allocate(&topo, t.id, &slices[&t.id], t.share, t.priority)
                {
                    let msg = match e {
                        FarmError::Controller(ControllerError::Oversubscribed(l)) => {
                            format!("tenant {}: {} oversubscribed", t.id, link_name(&topo, l))
                        }
                        e => format!("tenant {}: {e}", t.id),
                    };
                    errs.push(msg);
                }
            }
        }

        // composition
        let mut registry = Registry::new();
        for s in &self.services {
            let def = ServiceDef {
                name: s.name.clone(),
                cost: s.cost,
                providers: s.providers.iter().copied().collect(),
            };
            if let Err(e) = registry.register_service(&topo, def) {
                errs.push(format!("service {}: {e}", s.name));
            }
        }
        let mut composition = None;
        if let Some(d) = &self.dag {
            let dag = CompositionDag {
                tasks: d
                    .tasks
                    .iter()
                    .map(|t| Task {
                        id: t.id,
                        service: t.service.clone(),
                    })
                    .collect(),
                edges: d
                    .edges
                    .iter()
                    .map(|e| DagEdge {
                        from: e.from,
                        to: e.to,
                        size: e.size,
                    })
                    .collect(),
            };
            if o.materialize_transfers && !slices.contains_key(&d.tenant) {
                errs.push(format!("dag tenant {} has no slice", d.tenant));
            }
            match registry.schedule(&dag, &topo) {
                Ok(_) => composition = Some((dag, d.tenant)),
                Err(e) => errs.push(format!("dag: {e}")),
            }
        }

        // flows
        for (i, f) in self.flows.iter().enumerate() {
            let mut ok = true;
            for n in [f.origin, f.dest] {
                if !topo.contains(n) {
                    errs.push(format!("flow #{i}: unknown node {n}"));
                    ok = false;
                }
            }
            let Some(links) = slices.get(&f.tenant) else {
                errs.push(format!("flow #{i}: tenant {} has no slice", f.tenant));
                continue;
            };
            if ok {
                let filter = |l: &Link| links.contains(&l.id);
                let found = topo
                    .k_shortest_paths(f.origin, f.dest, 1, &filter)
                    .map(|v| !v.is_empty())
                    .unwrap_or(false);
                if !found {
                    errs.push(format!(
                        "flow #{i}: {} cannot reach {} inside the slice of {}",
                        f.origin, f.dest, f.tenant
                    ));
                }
            }
        }

        // faults
        for (i, f) in self.faults.iter().enumerate() {
            if !topo.contains(f.node) {
                errs.push(format!("fault #{i}: unknown node {}", f.node));
            }
            if let Err(e) = f.health.validate() {
                errs.push(format!("fault #{i}: {e}"));
            }
        }

        if !errs.is_empty() {
            return Err(ScenarioError::ValidationError(errs));
        }
        let mut world = World::new(topo, farm, self.seed);
        for f in &self.flows {
            world.add_flow(FlowRequest {
                tenant: f.tenant,
                origin: f.origin,
                dest: f.dest,
                units: f.units,
                start: f.start,
            });
        }
        for f in &self.faults {
            world.add_fault(f.tick, f.node, f.health);
        }
        if let Some((dag, tenant)) = composition {
            world
                .set_composition(&registry, &dag, tenant, o.materialize_transfers)
                .map_err(|e| ScenarioError::ValidationError(vec![format!("dag: {e}")]))?;
        }
        Ok(world)
    }

    /// Parameters for the speedup sweep: the `sweep` section, else the DAG
    /// task count and its first service cost.
    pub fn sweep_spec(&self) -> SweepSpec {
        if let Some(s) = &self.sweep {
            return s.clone();
        }
        let mut s = SweepSpec::default();
        if let Some(d) = &self.dag {
            s.tasks = d.tasks.len() as u32;
            if let Some(t) = d.tasks.first() {
                if let Some(svc) = self.services.iter().find(|x| x.name == t.service) {
                    s.cost = svc.cost;
                }
            }
        }
        s
    }
}
