//! Identifier newtypes shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// A node in the world. Never reused within one world.
    NodeId,
    "n"
);
id_type!(LinkId, "l");
id_type!(DomainId, "d");
id_type!(
    /// Tenant owning slices, flows and store entries.
    TenantId,
    "t"
);
id_type!(ControllerId, "c");
id_type!(FlowId, "f");
id_type!(SubflowId, "s");

/// Simulation time in ticks.
pub type Tick = u64;
