//! Tenant-scoped in-memory data store with explicit peer grants.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::ids::{ControllerId, TenantId};

/// Who is asking for an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Requester {
    Tenant(TenantId),
    Peer(ControllerId),
}

#[derive(Debug, Clone, Default)]
pub struct DataStore {
    entries: BTreeMap<(TenantId, Vec<String>), Vec<u8>>,
    grants: BTreeSet<(TenantId, ControllerId)>,
}

impl DataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(
        &mut self,
        tenant: TenantId,
        path: &[String],
        value: Vec<u8>,
    ) -> Result<(), ControllerError> {
        if path.is_empty() {
            return Err(ControllerError::EmptyPath);
        }
        self.entries.insert((tenant, path.to_vec()), value);
        Ok(())
    }

    /// Access is checked before existence so a denied requester learns nothing.
    pub fn get(
        &self,
        requester: Requester,
        owner: TenantId,
        path: &[String],
    ) -> Result<&[u8], ControllerError> {
        let allowed = match requester {
            Requester::Tenant(t) => t == owner,
            Requester::Peer(c) => self.grants.contains(&(owner, c)),
        };
        if !allowed {
            return Err(ControllerError::AccessDenied);
        }
        self.entries
            .get(&(owner, path.to_vec()))
            .map(Vec::as_slice)
            .ok_or(ControllerError::NotFound)
    }

    pub fn grant(&mut self, owner: TenantId, reader: ControllerId) {
        self.grants.insert((owner, reader));
    }

    pub fn revoke(&mut self, owner: TenantId, reader: ControllerId) {
        self.grants.remove(&(owner, reader));
    }

    pub fn has_grant(&self, owner: TenantId, reader: ControllerId) -> bool {
        self.grants.contains(&(owner, reader))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn round_trip_and_overwrite() {
        let mut s = DataStore::new();
        let t = TenantId(1);
        s.put(t, &p(&["a", "b"]), b"x".to_vec()).unwrap();
        assert_eq!(
            s.get(Requester::Tenant(t), t, &p(&["a", "b"])).unwrap(),
            b"x"
        );
        s.put(t, &p(&["a", "b"]), b"y".to_vec()).unwrap();
        assert_eq!(
            s.get(Requester::Tenant(t), t, &p(&["a", "b"])).unwrap(),
            b"y"
        );
        assert_eq!(s.put(t, &[], vec![]), Err(ControllerError::EmptyPath));
    }

    #[test]
    fn tenants_are_namespaced() {
        let mut s = DataStore::new();
        s.put(TenantId(1), &p(&["k"]), b"one".to_vec()).unwrap();
        s.put(TenantId(2), &p(&["k"]), b"two".to_vec()).unwrap();
        assert_eq!(
            s.get(Requester::Tenant(TenantId(1)), TenantId(1), &p(&["k"]))
                .unwrap(),
            b"one"
        );
        assert_eq!(
            s.get(Requester::Tenant(TenantId(2)), TenantId(2), &p(&["k"]))
                .unwrap(),
            b"two"
        );
        assert_eq!(
            s.get(Requester::Tenant(TenantId(2)), TenantId(1), &p(&["k"])),
            Err(ControllerError::AccessDenied)
        );
    }

    #[test]
    fn peer_needs_grant() {
        let mut s = DataStore::new();
        s.put(TenantId(1), &p(&["k"]), b"v".to_vec()).unwrap();
        let peer = Requester::Peer(ControllerId(4));
        assert_eq!(
            s.get(peer, TenantId(1), &p(&["k"])),
            Err(ControllerError::AccessDenied)
        );
        s.grant(TenantId(1), ControllerId(4));
        assert_eq!(s.get(peer, TenantId(1), &p(&["k"])).unwrap(), b"v");
        assert_eq!(
            s.get(peer, TenantId(1), &p(&["missing"])),
            Err(ControllerError::NotFound)
        );
    }

    proptest! {
        #[test]
        fn never_crosses_tenants_without_grant(
            grants in proptest::collection::btree_set((0u32..4, 0u32..4), 0..10),
            reader in 0u32..4,
            owner in 0u32..4,
        ) {
            let mut s = DataStore::new();
            for t in 0..4 {
                s.put(TenantId(t), &p(&["data"]), vec![t as u8]).unwrap();
            }
            for &(o, c) in &grants {
                s.grant(TenantId(o), ControllerId(c));
            }
            let res = s.get(Requester::Peer(ControllerId(reader)), TenantId(owner), &p(&["data"]));
            prop_assert_eq!(res.is_ok(), grants.contains(&(owner, reader)));
            if let Ok(v) = res {
                prop_assert_eq!(v, &[owner as u8][..]);
            }
        }
    }
}
