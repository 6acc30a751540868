//! Per-tick metrics records and the end-of-run summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::composition::TaskId;
use crate::flow::{CloneCase, FlowState};
use crate::ids::{ControllerId, FlowId, NodeId, TenantId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tick: Tick,
    /// Units released at flow destinations, cumulative.
    pub delivered_units: u64,
    pub dropped_units: u64,
    pub cloned_units: u64,
    pub active_flows: u64,
    /// Units delivered this tick, per tenant.
    pub per_tenant_throughput: BTreeMap<TenantId, u64>,
    /// Westbound messages processed, cumulative.
    pub controller_messages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub index: usize,
    pub flow: Option<FlowId>,
    pub tenant: TenantId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub units: u32,
    pub state: Option<FlowState>,
    pub rejected: Option<String>,
    pub released: u32,
    pub decisions: Vec<DecisionSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub case_tag: CloneCase,
    pub bad: NodeId,
    pub branch_point: NodeId,
    pub clone_destination: NodeId,
    pub detour: Vec<NodeId>,
    pub cloned: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthEvent {
    pub tick: Tick,
    pub controller: ControllerId,
    pub node: NodeId,
    pub change: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionSummary {
    pub planned_makespan: Tick,
    pub makespan: Option<Tick>,
    pub replaced: Vec<TaskId>,
    pub failed: Vec<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub ticks: Tick,
    pub seed: u64,
    pub trace_hash: String,
    pub flows: Vec<FlowOutcome>,
    pub clone_decisions: u64,
    pub delivered_units: u64,
    pub dropped_units: u64,
    pub cloned_units: u64,
    pub slice_violations: u64,
    pub composition: Option<CompositionSummary>,
    pub health_events: Vec<HealthEvent>,
    pub bus_dropped: u64,
    pub controller_messages: u64,
}
