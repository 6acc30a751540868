//! Scenario ingestion, the message bus, trace hashing, metrics and run
//! orchestration.

pub mod bus;
pub mod metrics;
pub mod run;
pub mod scenario;
pub mod trace;

pub use bus::{Bus, BusError, Message, Publisher, SubscriptionId};
pub use metrics::{MetricsRecord, Summary};
pub use run::{run, RunError, RunOutput};
pub use scenario::{parse_scenario, Scenario, ScenarioError};
pub use trace::{TraceHash, TraceHasher};
