//! In-memory end-to-end smoke test: graph -> descriptions -> embeddings ->
//! reduction -> change extraction -> scoring -> windowed flags -> events.

use std::collections::BTreeMap;

use bgplens::aggregator::{
    build_prefix_events, classify_events, emit_report, link_events, CandidateMode, ReservedRanges,
    RunMeta,
};
use bgplens::as_profile::{build_graph, render_description, Rel, RelEdge};
use bgplens::cdr::{train, Hyper, OrgMap};
use bgplens::detector::{detect, score_changes};
use bgplens::embedder::{embed_all, EmbedOptions, MockProvider, RetryPolicy};
use bgplens::route_monitor::{build_prefix_trees, extract_route_changes, Update, UpdateAction};
use bgplens::types::{AsPath, Asn, RibEntry};

fn p2c(a: Asn, b: Asn) -> RelEdge {
    RelEdge {
        a,
        b,
        rel: Rel::P2C,
    }
}

#[test]
fn pipeline_smoke() {
    // Two tier-1s, two mid ASes, four leaves; orgs pair the leaves.
    let (graph, _) = build_graph(vec![
        RelEdge {
            a: 1,
            b: 2,
            rel: Rel::P2P,
        },
        p2c(1, 10),
        p2c(2, 11),
        p2c(1, 11),
        p2c(10, 100),
        p2c(10, 101),
        p2c(11, 102),
        p2c(11, 103),
    ]);
    let orgs: OrgMap = [
        (100u32, "org-a"),
        (101, "org-a"),
        (102, "org-b"),
        (103, "org-b"),
        (10, "org-mid"),
        (11, "org-mid"),
        (1, "org-core"),
        (2, "org-core"),
    ]
    .into_iter()
    .map(|(a, o)| (a, o.to_string()))
    .collect();

    // Describe and embed every AS.
    let provider = MockProvider { dim: 24, seed: 5 };
    let mut groups = BTreeMap::new();
    for asn in graph.nodes() {
        groups.insert(
            asn,
            render_description(asn, &graph, None, 50, None).unwrap(),
        );
    }
    let opts = EmbedOptions {
        retry: RetryPolicy {
            max_retries: 0,
            base_delay: std::time::Duration::ZERO,
        },
        ..EmbedOptions::default()
    };
    let (store, _) = embed_all(&groups, &provider, &opts).unwrap();
    assert_eq!(store.len(), graph.node_count());

    // Train a tiny reduction and apply it.
    let hyper = Hyper {
        hidden_dim: 16,
        output_dim: 4,
        iterations: 60,
        batch_pos: 8,
        batch_neg: 8,
        ..Hyper::default()
    };
    let outcome = train(&store, &orgs, &hyper, 3).unwrap();
    let reduced = bgplens::cdr::reduce(&outcome.model, &store).unwrap();
    assert_eq!(reduced.dim(), 4);

    // One vantage, one prefix; an attacker (103) takes over from 100.
    let rib = vec![RibEntry {
        vantage: 10,
        prefix: "10.0.0.0/22".parse().unwrap(),
        path: AsPath::from_asns(&[10, 100]),
    }];
    let (mut trees, _) = build_prefix_trees(rib).unwrap();
    let mut updates = Vec::new();
    // Benign churn in window 0.
    for t in 0..50i64 {
        let path = if t % 2 == 0 {
            AsPath::from_asns(&[10, 1, 10, 100])
        } else {
            AsPath::from_asns(&[10, 100])
        };
        updates.push(Update {
            ts: t * 60,
            vantage: 10,
            prefix: "10.0.0.0/22".parse().unwrap(),
            action: UpdateAction::Announce(path),
        });
    }
    // The takeover in window 1, announced as a more-specific /24.
    updates.push(Update {
        ts: 3800,
        vantage: 10,
        prefix: "10.0.1.0/24".parse().unwrap(),
        action: UpdateAction::Announce(AsPath::from_asns(&[10, 11, 103])),
    });
    let (changes, _) = extract_route_changes(&mut trees, &updates, 0).unwrap();
    assert!(changes.len() >= 50);
    assert_eq!(
        changes.last().unwrap().matched_prefix,
        "10.0.0.0/22".parse().unwrap()
    );

    let (scored, stats) = score_changes(&changes, &reduced).unwrap();
    assert_eq!(stats.skipped_unresolved, 0);
    let (flagged, _) = detect(scored, 3600).unwrap();
    let anomaly: Vec<_> = flagged.iter().filter(|s| s.flagged).collect();
    assert!(
        anomaly
            .iter()
            .any(|s| s.change.announced_prefix == "10.0.1.0/24".parse().unwrap()),
        "takeover change should be flagged"
    );

    let (events, theta_vp) = build_prefix_events(&flagged, 3600, CandidateMode::Union).unwrap();
    let mut linked = link_events(events);
    classify_events(&mut linked, &graph, &orgs, None, &ReservedRanges::default());
    let report = emit_report(
        &linked,
        RunMeta {
            tool_version: "test".into(),
            window_secs: 3600,
            n_scored: flagged.len(),
            n_flagged: anomaly.len(),
            theta_vp,
            candidate_mode: "union".into(),
            roa_supplied: false,
        },
    );
    assert!(!report.events.is_empty());
    let hit = report.events.iter().any(|e| {
        e.prefixes.contains(&"10.0.1.0/24".to_string()) && e.responsible_ases.contains(&103)
    });
    assert!(
        hit,
        "report should attribute the takeover: {}",
        report.to_json()
    );
}
