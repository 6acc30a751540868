mod common;

use common::{bare, fixture, fixtures, link};
use sdcps_core::flow::{CloneCase, FlowState};
use sdcps_core::harness::scenario::{DomainSpec, FlowSpec, TenantSpec};
use sdcps_core::harness::{parse_scenario, run, ScenarioError};
use sdcps_core::topology::Health;
use sdcps_core::{DomainId, NodeId, TenantId};

fn flow(o: u32, d: u32, units: u32, start: u64) -> FlowSpec {
    FlowSpec {
        tenant: TenantId(0),
        origin: NodeId(o),
        dest: NodeId(d),
        units,
        start,
    }
}

fn violations(text: &str) -> Vec<String> {
    match parse_scenario(text) {
        Err(ScenarioError::ValidationError(v)) => v,
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn minimal_document_runs_to_delivery() {
    let out = run(&fixture("minimal.json")).unwrap();
    let f = &out.summary.flows[0];
    assert_eq!(f.state, Some(FlowState::Delivered));
    assert_eq!(f.released, 3);
    assert_eq!(out.summary.clone_decisions, 0);
    assert_eq!(out.metrics.len(), 10);
    assert_eq!(out.summary.ticks, 10);
}

#[test]
fn diamond_fault_yields_one_case1_decision() {
    let out = run(&fixture("diamond_fault.json")).unwrap();
    assert_eq!(out.summary.clone_decisions, 1);
    let f = &out.summary.flows[0];
    assert_eq!(f.state, Some(FlowState::Delivered));
    assert_eq!(f.released, 10);
    let d = &f.decisions[0];
    assert_eq!(d.case_tag, CloneCase::Case1);
    assert_eq!(d.detour, vec![NodeId(0), NodeId(2), NodeId(3)]);
    assert_eq!(out.summary.health_events.len(), 1);
}

#[test]
fn chord_fault_recomposes_at_intermediate() {
    let out = run(&fixture("chord_case2.json")).unwrap();
    let f = &out.summary.flows[0];
    assert_eq!(f.state, Some(FlowState::Delivered));
    assert_eq!(f.decisions[0].case_tag, CloneCase::Case2);
    assert_eq!(f.decisions[0].clone_destination, NodeId(2));
}

#[test]
fn line_failure_fails_the_flow() {
    let out = run(&fixture("line_unrecoverable.json")).unwrap();
    assert_eq!(out.summary.flows[0].state, Some(FlowState::Failed));
    assert_eq!(out.summary.delivered_units, 0);
}

#[test]
fn composition_replaces_failed_provider() {
    let out = run(&fixture("composition.json")).unwrap();
    let c = out.summary.composition.unwrap();
    assert_eq!(c.replaced, vec![2]);
    assert!(c.failed.is_empty());
    assert!(c.makespan.unwrap() >= c.planned_makespan);
}

#[test]
fn federated_grid_delivers_everything() {
    let out = run(&fixture("federated_grid.json")).unwrap();
    for f in &out.summary.flows {
        assert_eq!(f.state, Some(FlowState::Delivered), "{f:?}");
        assert_eq!(f.released, f.units);
    }
    assert!(out.summary.controller_messages > 0);
    assert_eq!(out.summary.bus_dropped, 0);
}

#[test]
fn corpus_is_reproducible() {
    for (name, text) in fixtures() {
        let s = parse_scenario(&text).unwrap();
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.trace_hash, b.trace_hash, "{name}");
        assert_eq!(a.metrics_jsonl(), b.metrics_jsonl(), "{name}");
    }
}

#[test]
fn seed_changes_malicious_outcomes() {
    let mut s = fixture("health_mix.json");
    let a = run(&s).unwrap().trace_hash;
    s.seed += 1;
    assert_ne!(run(&s).unwrap().trace_hash, a);
}

#[test]
fn metrics_are_monotone_and_one_per_tick() {
    let out = run(&fixture("federated_grid.json")).unwrap();
    for (i, w) in out.metrics.windows(2).enumerate() {
        assert_eq!(w[0].tick, i as u64);
        assert!(w[0].delivered_units <= w[1].delivered_units);
        assert!(w[0].dropped_units <= w[1].dropped_units);
        assert!(w[0].cloned_units <= w[1].cloned_units);
        assert!(w[0].controller_messages <= w[1].controller_messages);
    }
    let per_tenant: u64 = out
        .metrics
        .iter()
        .flat_map(|m| m.per_tenant_throughput.values())
        .sum();
    assert_eq!(per_tenant, out.summary.delivered_units);
    let jsonl = out.metrics_jsonl();
    assert_eq!(jsonl.lines().count(), out.metrics.len() + 1);
    assert!(jsonl.lines().last().unwrap().starts_with("{\"summary\""));
}

#[test]
fn syntax_error_reports_line() {
    let e = parse_scenario("{\n  \"seed\": 1,\n  \"horizon\": ,\n}").unwrap_err();
    assert!(
        matches!(e, ScenarioError::SyntaxError { line: 3, .. }),
        "{e:?}"
    );
}

#[test]
fn unknown_field_is_rejected() {
    let v = violations(r#"{"horizon": 1, "nodes": [], "colour": "red"}"#);
    assert!(v[0].contains("colour"), "{v:?}");
}

#[test]
fn overlapping_domains_name_both() {
    let mut s = bare(3, vec![link(0, 1, 1, 1), link(1, 2, 1, 1)]);
    s.domains = vec![
        DomainSpec {
            id: DomainId(4),
            nodes: vec![NodeId(0), NodeId(1)],
        },
        DomainSpec {
            id: DomainId(7),
            nodes: vec![NodeId(1), NodeId(2)],
        },
    ];
    let v = violations(&s.to_json());
    assert!(
        v.iter().any(|m| m.contains("d4") && m.contains("d7")),
        "{v:?}"
    );
}

#[test]
fn oversubscription_names_the_link() {
    let mut s = bare(3, vec![link(0, 1, 1, 3), link(1, 2, 1, 8)]);
    s.tenants = vec![
        TenantSpec {
            id: TenantId(0),
            priority: sdcps_core::controller::Priority::Gold,
            share: 2,
            links: None,
        },
        TenantSpec {
            id: TenantId(1),
            priority: sdcps_core::controller::Priority::Bronze,
            share: 2,
            links: None,
        },
    ];
    let v = violations(&s.to_json());
    // 2 + 2 > 3 on l0 only
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].contains("l0") && v[0].contains("n0-n1"), "{v:?}");
}

#[test]
fn every_violation_is_listed() {
    let mut s = bare(
        4,
        vec![link(0, 1, 1, 1), link(1, 1, 1, 1), link(2, 3, 0, 1)],
    );
    s.domains = vec![DomainSpec {
        id: DomainId(0),
        nodes: vec![NodeId(0), NodeId(1)],
    }];
    s.flows.push(flow(0, 9, 1, 0));
    s.flows.push(FlowSpec {
        tenant: TenantId(5),
        ..flow(0, 1, 1, 0)
    });
    s.faults.push(sdcps_core::harness::scenario::FaultSpec {
        tick: 0,
        node: NodeId(1),
        health: Health::Congested { slowdown: 0 },
    });
    s.options.window = 0;
    let v = violations(&s.to_json());
    for needle in [
        "self loop",
        "latency",
        "not in any domain",
        "unknown node n9",
        "t5",
        "slowdown",
        "W",
    ] {
        assert!(
            v.iter().any(|m| m.contains(needle)),
            "missing {needle}: {v:?}"
        );
    }
}

#[test]
fn cyclic_dag_is_rejected() {
    let text = r#"{
        "horizon": 5,
        "nodes": [{"id": 0, "kind": "Surrogate", "capacity": 1}],
        "services": [{"name": "s", "cost": 1, "providers": [0]}],
        "dag": {"tasks": [{"id": 0, "service": "s"}, {"id": 1, "service": "s"}],
                "edges": [{"from": 0, "to": 1}, {"from": 1, "to": 0}]}
    }"#;
    let v = violations(text);
    assert!(v.iter().any(|m| m.contains("cycle")), "{v:?}");
}

#[test]
fn flow_outside_slice_is_rejected_statically() {
    let mut s = bare(3, vec![link(0, 1, 1, 1), link(1, 2, 1, 1)]);
    s.tenants[0].links = Some(vec![(NodeId(0), NodeId(1))]);
    s.flows.push(flow(0, 2, 1, 0));
    let v = violations(&s.to_json());
    assert!(v[0].contains("cannot reach"), "{v:?}");
}

#[test]
fn congestion_doubles_line_latency() {
    let age = |h: Option<Health>| {
        let mut s = bare(3, vec![link(0, 1, 1, 1), link(1, 2, 1, 1)]);
        s.flows.push(flow(0, 2, 1, 0));
        if let Some(h) = h {
            s.faults.push(sdcps_core::harness::scenario::FaultSpec {
                tick: 0,
                node: NodeId(1),
                health: h,
            });
        }
        s.horizon = 10;
        let mut w = s.build().unwrap();
        let mut ages = Vec::new();
        for _ in 0..10 {
            w.step().unwrap();
            for e in w.last_events() {
                if let sdcps_core::flow::FlowEvent::Delivered { age, .. } = e {
                    ages.push(*age);
                }
            }
        }
        ages
    };
    assert_eq!(age(None), vec![2]);
    assert_eq!(age(Some(Health::Congested { slowdown: 2 })), vec![4]);
}

#[test]
fn healthy_on_healthy_is_invisible() {
    let base = fixture("minimal.json");
    let mut with = base.clone();
    with.faults.push(sdcps_core::harness::scenario::FaultSpec {
        tick: 0,
        node: NodeId(0),
        health: Health::Healthy,
    });
    let a = run(&base).unwrap();
    let b = run(&with).unwrap();
    assert_eq!(a.trace_hash, b.trace_hash);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn zero_horizon_runs_nothing() {
    let mut s = fixture("minimal.json");
    s.horizon = 0;
    let out = run(&s).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.summary.flows[0].state, None);
}
