use proptest::prelude::*;

use super::*;

fn hosts(caps: &[u32]) -> Topology {
    let mut t = Topology::new();
    for (i, &c) in caps.iter().enumerate() {
        t.add_node(Node::new(i as u32, NodeKind::Surrogate, c))
            .unwrap();
    }
    t
}

fn connect_line(t: &mut Topology, lat: u32) {
    let ids: Vec<NodeId> = t.node_ids().collect();
    for w in ids.windows(2) {
        t.add_link(w[0], w[1], lat, 4).unwrap();
    }
}

fn svc(name: &str, cost: u32, providers: &[u32]) -> ServiceDef {
    ServiceDef {
        name: name.into(),
        cost,
        providers: providers.iter().map(|&p| NodeId(p)).collect(),
    }
}

fn chain(a: &str, b: &str, size: u32) -> CompositionDag {
    CompositionDag {
        tasks: vec![
            Task {
                id: 0,
                service: a.into(),
            },
            Task {
                id: 1,
                service: b.into(),
            },
        ],
        edges: vec![DagEdge {
            from: 0,
            to: 1,
            size,
        }],
    }
}

#[test]
fn registry_rules() {
    let mut t = hosts(&[2]);
    t.add_node(Node::switch(1)).unwrap();
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 1, &[0])).unwrap();
    assert!(r.lookup("a").is_some());
    assert_eq!(
        r.register_service(&t, svc("a", 1, &[0])),
        Err(CompositionError::DuplicateService("a".into()))
    );
    assert_eq!(
        r.register_service(&t, svc("b", 1, &[1])),
        Err(CompositionError::NoProviders("b".into()))
    );
    assert_eq!(
        r.register_service(&t, svc("c", 0, &[0])),
        Err(CompositionError::ZeroCost("c".into()))
    );
}

#[test]
fn single_task_ceil_cost() {
    let t = hosts(&[2]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 4, &[0])).unwrap();
    let s = r
        .schedule(&CompositionDag::independent(1, "a"), &t)
        .unwrap();
    assert_eq!(s.makespan, 2);
}

#[test]
fn four_equal_tasks_on_two_providers() {
    let t = hosts(&[1, 1]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 3, &[0, 1])).unwrap();
    let dag = CompositionDag::independent(4, "a");
    let s = r.schedule(&dag, &t).unwrap();
    assert_eq!(s.makespan, 6);
    assert_eq!(s.assignments[&0].node, NodeId(0));
    assert_eq!(s.assignments[&1].node, NodeId(1));
    validate_schedule(&s, &dag, &r, &t).unwrap();
}

#[test]
fn chain_waits_for_transfer() {
    let mut t = hosts(&[1, 1]);
    t.add_link(NodeId(0), NodeId(1), 3, 1).unwrap();
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 2, &[0])).unwrap();
    r.register_service(&t, svc("b", 1, &[1])).unwrap();
    let dag = chain("a", "b", 1);
    let s = r.schedule(&dag, &t).unwrap();
    assert_eq!(s.assignments[&1].start, s.assignments[&0].end + 3);
}

#[test]
fn schedule_errors() {
    let t = hosts(&[1, 1]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 1, &[0])).unwrap();
    r.register_service(&t, svc("b", 1, &[1])).unwrap();
    assert_eq!(
        r.schedule(&CompositionDag::independent(1, "zzz"), &t),
        Err(CompositionError::UnknownService("zzz".into()))
    );
    // no link between the two hosts
    assert_eq!(
        r.schedule(&chain("a", "b", 1), &t),
        Err(CompositionError::UnreachableProvider(1))
    );
    let mut cyc = chain("a", "a", 0);
    cyc.edges.push(DagEdge {
        from: 1,
        to: 0,
        size: 0,
    });
    assert_eq!(r.schedule(&cyc, &t), Err(CompositionError::CyclicDag));
}

#[test]
fn pins_force_placement() {
    let t = hosts(&[1, 1]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 1, &[0, 1])).unwrap();
    let dag = CompositionDag::independent(1, "a");
    let pins = BTreeMap::from([(0, NodeId(1))]);
    let s = r
        .schedule_with_pins(&dag, &t, 0, &BTreeMap::new(), &pins)
        .unwrap();
    assert_eq!(s.assignments[&0].node, NodeId(1));
    let bad = BTreeMap::from([(0, NodeId(7))]);
    assert!(matches!(
        r.schedule_with_pins(&dag, &t, 0, &BTreeMap::new(), &bad),
        Err(CompositionError::NotAProvider { .. })
    ));
}

#[test]
fn healthy_execution_matches_plan() {
    let mut t = hosts(&[1, 2, 1]);
    connect_line(&mut t, 2);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 2, &[0, 1])).unwrap();
    r.register_service(&t, svc("b", 3, &[1, 2])).unwrap();
    let dag = CompositionDag {
        tasks: (0..5)
            .map(|id| Task {
                id,
                service: if id % 2 == 0 { "a" } else { "b" }.into(),
            })
            .collect(),
        edges: vec![
            DagEdge {
                from: 0,
                to: 1,
                size: 2,
            },
            DagEdge {
                from: 0,
                to: 3,
                size: 1,
            },
            DagEdge {
                from: 2,
                to: 3,
                size: 1,
            },
        ],
    };
    let s = r.schedule(&dag, &t).unwrap();
    let rep = execute(&r, &dag, &s, &t, &FaultTimeline::new()).unwrap();
    assert_eq!(rep.actual, s.assignments);
    assert_eq!(rep.makespan, s.makespan);
    assert!(rep.replaced.is_empty());
}

#[test]
fn failed_provider_is_replaced() {
    let mut t = hosts(&[1, 1]);
    connect_line(&mut t, 1);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 2, &[0, 1])).unwrap();
    let dag = CompositionDag::independent(2, "a");
    let s = r.schedule(&dag, &t).unwrap();
    assert_eq!(s.makespan, 2);
    let faults = FaultTimeline::from([(0, vec![(NodeId(1), Health::Failed)])]);
    let rep = execute(&r, &dag, &s, &t, &faults).unwrap();
    assert_eq!(rep.replaced, vec![1]);
    assert_eq!(rep.actual[&1].node, NodeId(0));
    assert_eq!(rep.makespan, 4);
}

#[test]
fn all_providers_failed_is_infeasible() {
    let t = hosts(&[1, 1]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 2, &[0, 1])).unwrap();
    let dag = CompositionDag::independent(1, "a");
    let s = r.schedule(&dag, &t).unwrap();
    let faults = FaultTimeline::from([(
        0,
        vec![(NodeId(0), Health::Failed), (NodeId(1), Health::Failed)],
    )]);
    assert_eq!(
        execute(&r, &dag, &s, &t, &faults),
        Err(CompositionError::NoFeasibleProvider(0))
    );
}

#[test]
fn congestion_stretches_execution() {
    let t = hosts(&[1]);
    let mut r = Registry::new();
    r.register_service(&t, svc("a", 2, &[0])).unwrap();
    let dag = CompositionDag::independent(1, "a");
    let s = r.schedule(&dag, &t).unwrap();
    let faults = FaultTimeline::from([(0, vec![(NodeId(0), Health::Congested { slowdown: 3 })])]);
    assert_eq!(execute(&r, &dag, &s, &t, &faults).unwrap().makespan, 6);
}

#[test]
fn speedup_examples() {
    let c = speedup_curve(64, &[1, 64, 128], 1).unwrap();
    assert_eq!(c[0].makespan, 64);
    assert_eq!((c[1].makespan, c[1].speedup), (1, 64.0));
    assert_eq!((c[2].makespan, c[2].speedup), (1, 64.0));
    assert!(speedup_curve(4, &[0], 1).is_err());
}

/// Optimal makespan of independent tasks by trying every assignment.
fn brute_force_independent(durations: &[Tick], m: usize) -> Tick {
    let mut best = Tick::MAX;
    let total = m.pow(durations.len() as u32);
    for code in 0..total {
        let mut loads = vec![0; m];
        let mut c = code;
        for &d in durations {
            loads[c % m] += d;
            c /= m;
        }
        best = best.min(*loads.iter().max().unwrap());
    }
    best
}

#[test]
fn equal_tasks_match_exhaustive_optimum() {
    for m in 1..=3u32 {
        for n in 1..=8u32 {
            for cost in 1..=3 {
                let t = hosts(&vec![1; m as usize]);
                let mut r = Registry::new();
                r.register_service(&t, svc("a", cost, &(0..m).collect::<Vec<_>>()))
                    .unwrap();
                let s = r
                    .schedule(&CompositionDag::independent(n, "a"), &t)
                    .unwrap();
                let opt = brute_force_independent(&vec![cost as Tick; n as usize], m as usize);
                assert!(s.makespan * 2 <= opt * 3, "n={n} m={m}");
                assert_eq!(s.makespan, opt);
            }
        }
    }
}

fn arb_dag() -> impl Strategy<Value = (Vec<u8>, Vec<(u32, u32, u32)>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u8..3, n),
            proptest::collection::vec((0u32..n as u32, 0u32..n as u32, 0u32..3), 0..2 * n),
        )
    })
}

proptest! {
    #[test]
    fn schedules_are_valid((svcs, raw_edges) in arb_dag(), caps in proptest::collection::vec(1u32..4, 4)) {
        let mut t = hosts(&caps);
        connect_line(&mut t, 1);
        t.add_link(NodeId(0), NodeId(3), 5, 1).unwrap();
        let mut r = Registry::new();
        r.register_service(&t, svc("s0", 3, &[0, 1])).unwrap();
        r.register_service(&t, svc("s1", 5, &[1, 2, 3])).unwrap();
        r.register_service(&t, svc("s2", 1, &[3])).unwrap();
        let dag = CompositionDag {
            tasks: svcs.iter().enumerate().map(|(i, s)| Task { id: i as u32, service: format!("s{s}") }).collect(),
            // forward edges only, so the graph is acyclic
            edges: raw_edges.into_iter().filter(|(a, b, _)| a < b).map(|(from, to, size)| DagEdge { from, to, size }).collect(),
        };
        let s = r.schedule(&dag, &t).unwrap();
        prop_assert_eq!(validate_schedule(&s, &dag, &r, &t), Ok(()));
        prop_assert_eq!(&r.schedule(&dag, &t).unwrap(), &s);
        let rep = execute(&r, &dag, &s, &t, &FaultTimeline::new()).unwrap();
        prop_assert_eq!(rep.actual, s.assignments);
    }

    #[test]
    fn speedup_is_monotone_and_bounded(n in 1u32..80, cost in 1u32..4) {
        let ms = [1, 2, 3, 4, 8, 16, 32, 64, 128];
        let c = speedup_curve(n, &ms, cost).unwrap();
        for w in c.windows(2) {
            prop_assert!(w[1].speedup >= w[0].speedup);
        }
        for p in &c {
            prop_assert_eq!(p.makespan, (n as Tick).div_ceil(p.m as Tick) * cost as Tick);
            prop_assert!(p.speedup <= (p.m.min(n)) as f64 + 1e-9);
        }
    }
}
