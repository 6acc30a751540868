//! In-process topic bus standing in for the MOM protocols.
//!
//! Messages wait in a single queue ordered by (tick, publisher, per-publisher
//! sequence) and are handed to subscriber inboxes by [`Bus::deliver_through`].
//! Delivery is at-most-once per subscriber and FIFO per publisher. A
//! subscription pattern ending in `/*` matches every topic under that prefix.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ControllerId, NodeId, Tick};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("topic name must not be empty")]
    EmptyTopic,
    #[error("unknown subscription {0}")]
    UnknownSubscription(u32),
}

/// Ordered first by kind, then by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Publisher {
    Engine,
    Controller(ControllerId),
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub publisher: Publisher,
    pub tick: Tick,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn key(&self) -> (Tick, Publisher, u64) {
        (self.tick, self.publisher, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriptionId(pub u32);

fn matches(pattern: &str, topic: &str) -> bool {
    match pattern.strip_suffix("/*") {
        Some(prefix) => topic
            .strip_prefix(prefix)
            .is_some_and(|rest| rest.starts_with('/')),
        None => pattern == topic,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bus {
    subscriptions: Vec<(SubscriptionId, String)>,
    inboxes: BTreeMap<SubscriptionId, VecDeque<Message>>,
    pending: BTreeMap<(Tick, Publisher, u64), Message>,
    next_seq: BTreeMap<Publisher, u64>,
    dropped: u64,
    delivered: u64,
    last_key: Option<(Tick, Publisher, u64)>,
    order_violations: u64,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, pattern: &str) -> Result<SubscriptionId, BusError> {
        if pattern.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let id = SubscriptionId(self.subscriptions.len() as u32);
        self.subscriptions.push((id, pattern.to_string()));
        self.inboxes.insert(id, VecDeque::new());
        Ok(id)
    }

    pub fn publish(
        &mut self,
        tick: Tick,
        publisher: Publisher,
        topic: &str,
        payload: Vec<u8>,
    ) -> Result<(), BusError> {
        if topic.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let seq = self.next_seq.entry(publisher).or_default();
        let msg = Message {
            topic: topic.to_string(),
            publisher,
            tick,
            seq: *seq,
            payload,
        };
        *seq += 1;
        self.pending.insert(msg.key(), msg);
        Ok(())
    }

    /// Hands every pending message stamped at or before `tick` to the
    /// matching inboxes; returns how many messages left the queue.
    pub fn deliver_through(&mut self, tick: Tick) -> usize {
        let mut n = 0;
        while let Some(entry) = self.pending.first_entry() {
            if entry.key().0 > tick {
                break;
            }
            let msg = entry.remove();
            if self.last_key.is_some_and(|k| msg.key() < k) {
                self.order_violations += 1;
            }
            self.last_key = Some(msg.key());
            n += 1;
            let targets: Vec<SubscriptionId> = self
                .subscriptions
                .iter()
                .filter(|(_, p)| matches(p, &msg.topic))
                .map(|(id, _)| *id)
                .collect();
            if targets.is_empty() {
                self.dropped += 1;
                continue;
            }
            for id in targets {
                self.inboxes.get_mut(&id).unwrap().push_back(msg.clone());
                self.delivered += 1;
            }
        }
        n
    }

    pub fn drain(&mut self, sub: SubscriptionId) -> Result<Vec<Message>, BusError> {
        self.inboxes
            .get_mut(&sub)
            .map(|q| q.drain(..).collect())
            .ok_or(BusError::UnknownSubscription(sub.0))
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn order_violations(&self) -> u64 {
        self.order_violations
    }
}
