//! Tenant slices: permitted links, a guaranteed per-link share and a priority class.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::ids::{LinkId, TenantId};
use crate::topology::{Link, Topology};

/// Priority classes in service order: Gold is filled before Silver before Bronze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    Gold,
    Silver,
    Bronze,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantSlice {
    pub tenant: TenantId,
    pub links: BTreeSet<LinkId>,
    /// Guaranteed units per tick on every link of the slice.
    pub share: u32,
    pub priority: Priority,
}

#[derive(Debug, Clone, Default)]
pub struct SliceTable {
    slices: BTreeMap<TenantId, TenantSlice>,
}

impl SliceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks that `tenant` could hold `share` on every link in `links`,
    /// replacing whatever slice it currently holds.
    pub fn check(
        &self,
        topo: &Topology,
        tenant: TenantId,
        links: &BTreeSet<LinkId>,
        share: u32,
    ) -> Result<(), ControllerError> {
        for &l in links {
            let link = topo.link(l).ok_or(ControllerError::UnknownLink(l))?;
            let others: u64 = self
                .slices
                .values()
                .filter(|s| s.tenant != tenant && s.links.contains(&l))
                .map(|s| s.share as u64)
                .sum();
            if others + share as u64 > link.capacity as u64 {
                return Err(ControllerError::Oversubscribed(l));
            }
        }
        Ok(())
    }

    pub fn allocate(
        &mut self,
        topo: &Topology,
        tenant: TenantId,
        links: BTreeSet<LinkId>,
        share: u32,
        priority: Priority,
    ) -> Result<TenantSlice, ControllerError> {
        self.check(topo, tenant, &links, share)?;
        let slice = TenantSlice {
            tenant,
            links,
            share,
            priority,
        };
        self.slices.insert(tenant, slice.clone());
        Ok(slice)
    }

    pub fn get(&self, tenant: TenantId) -> Option<&TenantSlice> {
        self.slices.get(&tenant)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TenantSlice> {
        self.slices.values()
    }

    pub fn allows(&self, tenant: TenantId, link: LinkId) -> bool {
        self.slices
            .get(&tenant)
            .is_some_and(|s| s.links.contains(&link))
    }

    /// Units handed to each tenant on `link` this tick.
    ///
    /// Every tenant first receives `min(pending, share)`. Remaining capacity is
    /// then handed out one unit at a time by priority class, round-robin over
    /// ascending tenant id inside a class. The total never exceeds capacity.
    pub fn qos_schedule(
        &self,
        link: &Link,
        pending: &BTreeMap<TenantId, u32>,
    ) -> BTreeMap<TenantId, u32> {
        let mut grant: BTreeMap<TenantId, u32> = pending.keys().map(|&t| (t, 0)).collect();
        let mut left = link.capacity;
        for (&t, &want) in pending {
            let share = self
                .slices
                .get(&t)
                .filter(|s| s.links.contains(&link.id))
                .map_or(0, |s| s.share);
            let g = want.min(share).min(left);
            grant.insert(t, g);
            left -= g;
        }
        for class in [Priority::Gold, Priority::Silver, Priority::Bronze] {
            let members: Vec<TenantId> = pending
                .keys()
                .copied()
                .filter(|t| self.slices.get(t).map(|s| s.priority) == Some(class))
                .collect();
            while left > 0 {
                let mut progressed = false;
                for t in &members {
                    if left == 0 {
                        break;
                    }
                    let g = grant.get_mut(t).unwrap();
                    if *g < pending[t] {
                        *g += 1;
                        left -= 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    break;
                }
            }
        }
        grant
    }
}
