use std::collections::{BTreeMap, BTreeSet};

use super::Unit;
use crate::ids::{FlowId, NodeId};

/// Restores exactly-once, in-order release of a flow's units at one node.
///
/// `expected` holds the sequence numbers that must pass through this buffer.
/// Anything outside it, or already seen, is absorbed as a duplicate.
#[derive(Debug, Clone)]
pub struct ReorderBuffer {
    pub at: NodeId,
    pub flow: FlowId,
    seen: BTreeSet<u32>,
    expected: BTreeSet<u32>,
    held: BTreeMap<u32, Unit>,
    released: usize,
    /// Routes whose copies are intercepted here; `None` intercepts every route.
    pub(crate) feeds: Option<BTreeSet<usize>>,
}

impl ReorderBuffer {
    /// Buffer expecting every sequence number `0..units`.
    pub fn new(at: NodeId, flow: FlowId, units: u32) -> Self {
        Self::expecting(at, flow, (0..units).collect())
    }

    pub fn expecting(at: NodeId, flow: FlowId, expected: BTreeSet<u32>) -> Self {
        ReorderBuffer {
            at,
            flow,
            seen: BTreeSet::new(),
            expected,
            held: BTreeMap::new(),
            released: 0,
            feeds: None,
        }
    }

    /// Smallest expected sequence number not yet released.
    pub fn next_expected(&self) -> Option<u32> {
        self.expected.iter().nth(self.released).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.released == self.expected.len()
    }

    pub fn seen(&self, seq: u32) -> bool {
        self.seen.contains(&seq) || !self.expected.contains(&seq)
    }

    pub fn held_len(&self) -> usize {
        self.held.len()
    }

    pub(crate) fn intercepts(&self, route: usize) -> bool {
        self.feeds.as_ref().is_none_or(|f| f.contains(&route))
    }

    /// Accepts one arrival and returns the units now releasable, in order.
    /// Duplicates are absorbed and yield nothing.
    pub fn recompose(&mut self, arrival: Unit) -> Vec<Unit> {
        assert_eq!(arrival.flow, self.flow, "unit for another flow");
        if self.seen(arrival.seq) {
            return Vec::new();
        }
        self.seen.insert(arrival.seq);
        self.held.insert(arrival.seq, arrival);
        let mut out = Vec::new();
        while let Some(next) = self.next_expected() {
            match self.held.remove(&next) {
                Some(u) => {
                    out.push(u);
                    self.released += 1;
                }
                None => break,
            }
        }
        out
    }

    /// Releases everything held, in sequence order, regardless of gaps.
    pub(crate) fn flush(&mut self) -> Vec<Unit> {
        let out: Vec<Unit> = std::mem::take(&mut self.held).into_values().collect();
        self.released += out.len();
        out
    }

    pub(crate) fn held_units(&self) -> impl Iterator<Item = &Unit> {
        self.held.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Location;
    use proptest::prelude::*;

    fn unit(seq: u32) -> Unit {
        Unit {
            flow: FlowId(0),
            seq,
            copy: seq as u64,
            route: 0,
            hop: 0,
            location: Location::Node(NodeId(0)),
            acked_node: None,
            subflow: None,
        }
    }

    fn seqs(v: &[Unit]) -> Vec<u32> {
        v.iter().map(|u| u.seq).collect()
    }

    #[test]
    fn reorders() {
        let mut b = ReorderBuffer::new(NodeId(3), FlowId(0), 2);
        assert!(b.recompose(unit(1)).is_empty());
        assert_eq!(seqs(&b.recompose(unit(0))), vec![0, 1]);
        assert!(b.is_complete());
    }

    #[test]
    fn absorbs_duplicates() {
        let mut b = ReorderBuffer::new(NodeId(3), FlowId(0), 2);
        assert_eq!(seqs(&b.recompose(unit(0))), vec![0]);
        assert!(b.recompose(unit(0)).is_empty());
        assert_eq!(b.next_expected(), Some(1));
    }

    #[test]
    fn in_order_is_immediate() {
        let mut b = ReorderBuffer::new(NodeId(3), FlowId(0), 3);
        for s in 0..3 {
            assert_eq!(seqs(&b.recompose(unit(s))), vec![s]);
        }
    }

    #[test]
    fn partial_expectation_skips_passed_seqs() {
        let mut b = ReorderBuffer::expecting(NodeId(2), FlowId(0), BTreeSet::from([2, 3]));
        assert!(b.recompose(unit(0)).is_empty());
        assert!(b.recompose(unit(3)).is_empty());
        assert_eq!(seqs(&b.recompose(unit(2))), vec![2, 3]);
        assert!(b.is_complete());
    }

    proptest! {
        #[test]
        fn any_arrival_order_releases_exactly_once_in_order(
            order in proptest::collection::vec(0u32..8, 0..40),
        ) {
            let mut b = ReorderBuffer::new(NodeId(0), FlowId(0), 8);
            let mut out = Vec::new();
            for s in order.iter().copied().chain(0..8) {
                out.extend(seqs(&b.recompose(unit(s))));
            }
            prop_assert_eq!(out, (0..8).collect::<Vec<_>>());
        }
    }
}
