//! Deterministic discrete-event simulator and control plane for software-defined
//! cyber-physical systems.
//!
//! A [`world::World`] owns the physical [`topology::Topology`], a federation of
//! domain [`controller::Controller`]s ([`farm::Farm`]), the [`flow::FlowEngine`]
//! that moves tenant traffic, and the [`composition`] scheduler. The
//! [`sandbox`] evaluates candidate decisions on a twin before they touch the
//! physical world, and [`harness`] loads scenarios and records metrics.

pub mod composition;
pub mod controller;
pub mod farm;
pub mod flow;
pub mod harness;
pub mod ids;
pub mod sandbox;
pub mod topology;
pub mod world;

pub use ids::{ControllerId, DomainId, FlowId, LinkId, NodeId, SubflowId, TenantId, Tick};

#[cfg(test)]
pub(crate) mod testutil;
