//! Health estimation from southbound neighbour reports.
//!
//! Every observation about a node is classified as clean, congested or loss.
//! A verdict changes only once `window` consecutive observations agree on the
//! new class; any disagreeing observation restarts the streak.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::ids::{NodeId, Tick};
use crate::topology::Topology;

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Healthy,
    SuspectCongested,
    SuspectFailed,
}

impl Verdict {
    pub fn is_suspect(self) -> bool {
        self != Verdict::Healthy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    /// Observed traversal latency in ticks.
    Latency(u32),
    Loss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SouthboundReport {
    pub reporter: NodeId,
    pub tick: Tick,
    pub neighbor_observations: Vec<(NodeId, Observation)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthEstimate {
    pub node: NodeId,
    pub verdict: Verdict,
    /// Length of the current run of agreeing observations.
    pub window: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthConfig {
    /// Consecutive corroborating reports needed to change a verdict.
    pub window: u32,
    /// Observed latency above `threshold * nominal` counts as congested.
    pub congestion_threshold: u32,
}

impl Default for HealthConfig {
    fn default() -> Self {
        HealthConfig {
            window: 3,
            congestion_threshold: 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tracker {
    verdict: Verdict,
    streak_class: Verdict,
    streak: u32,
}

#[derive(Debug, Clone, Default)]
pub struct HealthMonitor {
    config: HealthConfig,
    trackers: BTreeMap<NodeId, Tracker>,
    last_tick: BTreeMap<NodeId, Tick>,
}

impl HealthMonitor {
    pub fn new(config: HealthConfig) -> Self {
        HealthMonitor {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> HealthConfig {
        self.config
    }

    pub fn classify(&self, nominal: u32, obs: Observation) -> Verdict {
        match obs {
            Observation::Loss => Verdict::SuspectFailed,
            Observation::Latency(l)
                if l as u64 > self.config.congestion_threshold as u64 * nominal as u64 =>
            {
                Verdict::SuspectCongested
            }
            Observation::Latency(_) => Verdict::Healthy,
        }
    }

    /// Feeds one report; returns every verdict change it caused, in observation order.
    pub fn ingest(
        &mut self,
        topo: &Topology,
        now: Tick,
        report: &SouthboundReport,
    ) -> Result<Vec<HealthEstimate>, ControllerError> {
        if !topo.contains(report.reporter) {
            return Err(ControllerError::UnknownNode(report.reporter));
        }
        if report.tick > now {
            return Err(ControllerError::FutureReport(report.tick));
        }
        if let Some(&last) = self.last_tick.get(&report.reporter) {
            if report.tick < last {
                return Err(ControllerError::StaleReport {
                    reporter: report.reporter,
                    tick: report.tick,
                    last,
                });
            }
        }
        let mut classes = Vec::with_capacity(report.neighbor_observations.len());
        for &(n, obs) in &report.neighbor_observations {
            if !topo.contains(n) {
                return Err(ControllerError::UnknownNode(n));
            }
            let link = topo
                .link_between(report.reporter, n)
                .ok_or(ControllerError::NotNeighbor(report.reporter, n))?;
            classes.push((n, self.classify(link.latency, obs)));
        }
        self.last_tick.insert(report.reporter, report.tick);
        let mut transitions = Vec::new();
        for (n, class) in classes {
            if let Some(e) = self.observe(n, class) {
                transitions.push(e);
            }
        }
        Ok(transitions)
    }

    fn observe(&mut self, node: NodeId, class: Verdict) -> Option<HealthEstimate> {
        let w = self.config.window.max(1);
        let t = self.trackers.entry(node).or_insert(Tracker {
            verdict: Verdict::Healthy,
            streak_class: Verdict::Healthy,
            streak: 0,
        });
        if t.streak_class == class {
            t.streak = t.streak.saturating_add(1);
        } else {
            t.streak_class = class;
            t.streak = 1;
        }
        if t.streak >= w && t.verdict != class {
            t.verdict = class;
            return Some(HealthEstimate {
                node,
                verdict: class,
                window: t.streak,
            });
        }
        None
    }

    pub fn estimate(&self, node: NodeId) -> HealthEstimate {
        self.trackers.get(&node).map_or(
            HealthEstimate {
                node,
                verdict: Verdict::Healthy,
                window: 0,
            },
            |t| HealthEstimate {
                node,
                verdict: t.verdict,
                window: if t.streak_class == t.verdict {
                    t.streak
                } else {
                    0
                },
            },
        )
    }

    /// Current verdict for every node this monitor has heard about.
    pub fn verdicts(&self) -> BTreeMap<NodeId, Verdict> {
        self.trackers.iter().map(|(&n, t)| (n, t.verdict)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Node;
    use proptest::prelude::*;

    fn star() -> Topology {
        let mut t = Topology::new();
        for i in 0..6 {
            t.add_node(Node::switch(i)).unwrap();
        }
        for i in 0..5 {
            t.add_link(NodeId(i), NodeId(5), 1, 1).unwrap();
        }
        t
    }

    fn report(reporter: u32, tick: Tick, obs: Observation) -> SouthboundReport {
        SouthboundReport {
            reporter: NodeId(reporter),
            tick,
            neighbor_observations: vec![(NodeId(5), obs)],
        }
    }

    #[test]
    fn three_losses_mark_failed() {
        let topo = star();
        let mut m = HealthMonitor::new(HealthConfig::default());
        assert!(m
            .ingest(&topo, 0, &report(0, 0, Observation::Loss))
            .unwrap()
            .is_empty());
        assert!(m
            .ingest(&topo, 1, &report(0, 1, Observation::Loss))
            .unwrap()
            .is_empty());
        let tr = m
            .ingest(&topo, 2, &report(0, 2, Observation::Loss))
            .unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr[0].verdict, Verdict::SuspectFailed);
        assert_eq!(tr[0].node, NodeId(5));
    }

    #[test]
    fn clean_report_resets_window() {
        let topo = star();
        let mut m = HealthMonitor::new(HealthConfig::default());
        let seq = [
            Observation::Loss,
            Observation::Loss,
            Observation::Latency(1),
            Observation::Loss,
            Observation::Loss,
        ];
        for (i, o) in seq.into_iter().enumerate() {
            assert!(m
                .ingest(&topo, i as Tick, &report(1, i as Tick, o))
                .unwrap()
                .is_empty());
        }
        assert_eq!(m.estimate(NodeId(5)).verdict, Verdict::Healthy);
    }

    #[test]
    fn congestion_needs_more_than_threshold() {
        let topo = star();
        let mut m = HealthMonitor::new(HealthConfig::default());
        for i in 0..3 {
            m.ingest(&topo, i, &report(2, i, Observation::Latency(2)))
                .unwrap();
        }
        assert_eq!(m.estimate(NodeId(5)).verdict, Verdict::Healthy);
        for i in 3..6 {
            m.ingest(&topo, i, &report(2, i, Observation::Latency(3)))
                .unwrap();
        }
        assert_eq!(m.estimate(NodeId(5)).verdict, Verdict::SuspectCongested);
    }

    #[test]
    fn errors() {
        let topo = star();
        let mut m = HealthMonitor::new(HealthConfig::default());
        let mut r = report(0, 0, Observation::Loss);
        r.neighbor_observations[0].0 = NodeId(42);
        assert_eq!(
            m.ingest(&topo, 0, &r),
            Err(ControllerError::UnknownNode(NodeId(42)))
        );
        m.ingest(&topo, 4, &report(0, 4, Observation::Loss))
            .unwrap();
        assert!(matches!(
            m.ingest(&topo, 4, &report(0, 3, Observation::Loss)),
            Err(ControllerError::StaleReport { .. })
        ));
        assert!(matches!(
            m.ingest(&topo, 4, &report(0, 9, Observation::Loss)),
            Err(ControllerError::FutureReport(9))
        ));
        let r = SouthboundReport {
            reporter: NodeId(0),
            tick: 4,
            neighbor_observations: vec![(NodeId(1), Observation::Loss)],
        };
        assert_eq!(
            m.ingest(&topo, 4, &r),
            Err(ControllerError::NotNeighbor(NodeId(0), NodeId(1)))
        );
    }

    /// Brute-force replay: the verdict after step i is the class of the last W
    /// observations when they all agree, otherwise the verdict after step i-1.
    fn replay(classes: &[Verdict], w: usize) -> Vec<Option<Verdict>> {
        let mut out = Vec::new();
        let mut verdict = Verdict::Healthy;
        for i in 0..classes.len() {
            let mut change = None;
            if i + 1 >= w {
                let tail = &classes[i + 1 - w..=i];
                if tail.iter().all(|c| *c == tail[0]) && tail[0] != verdict {
                    verdict = tail[0];
                    change = Some(verdict);
                }
            }
            out.push(change);
        }
        out
    }

    proptest! {
        #[test]
        fn window_matches_replay(raw in proptest::collection::vec(0u8..3, 0..60), w in 1u32..5) {
            let topo = star();
            let mut m = HealthMonitor::new(HealthConfig { window: w, congestion_threshold: 2 });
            let obs: Vec<Observation> = raw.iter().map(|r| match r {
                0 => Observation::Latency(1),
                1 => Observation::Latency(5),
                _ => Observation::Loss,
            }).collect();
            let classes: Vec<Verdict> = obs.iter().map(|&o| m.classify(1, o)).collect();
            let expected = replay(&classes, w as usize);
            for (i, &o) in obs.iter().enumerate() {
                let got = m.ingest(&topo, i as Tick, &report(3, i as Tick, o)).unwrap();
                prop_assert_eq!(got.first().map(|e| e.verdict), expected[i]);
            }
        }
    }
}
