//! Synthetic scenario generator: a three-tier topology with benign routing
//! churn and three injected anomalies (an origin change against a covering
//! /22, a provider-to-provider route leak, and a path manipulation through a
//! reserved ASN), plus ground truth for end-to-end validation.
//!
//! Everything is derived from one seed, so two generations into different
//! directories produce identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use bgplens::rng::DetRng;
use bgplens::types::Asn;

use crate::config::{
    AggregateSection, ConfigPaths, DetectSection, EmbedSection, ProviderConfig, RunConfig,
    TrainSection,
};

const TIER1: [Asn; 4] = [1001, 1002, 1003, 1004];
const N_TIER2: u32 = 24;
const N_TIER3: u32 = 180;
const VANTAGES: [Asn; 5] = [2001, 2005, 2009, 2013, 2017];

const VICTIM: Asn = 3042;
const VICTIM_COVER: &str = "10.77.152.0/22";
const HIJACKED: &str = "10.77.153.0/24";
const ATTACKER: Asn = 3113;

const LEAK_ORIGIN: Asn = 3055;
const LEAK_PREFIX: &str = "10.88.1.0/24";
const LEAKER: Asn = 2007;

const MANIP_ORIGIN: Asn = 3090;
const MANIP_PREFIX: &str = "10.99.2.0/24";
const RESERVED_HOP: Asn = 64512;

const N_BENIGN_PREFIXES: usize = 240;
const N_BENIGN_UPDATES: usize = 56_000;
const N_SINGLE_VANTAGE_NOISE: usize = 120;
const DAY: i64 = 86_400;

/// Event windows (seconds into the day): hours 6, 12 and 18.
const EVENT_STARTS: [i64; 3] = [6 * 3600 + 300, 12 * 3600 + 300, 18 * 3600 + 300];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub name: String,
    pub prefix: String,
    pub responsible: Asn,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub events: Vec<GroundTruthEvent>,
}

struct Topology {
    /// Directed provider -> customer edges plus peer pairs.
    edges: Vec<(Asn, Asn, i8)>,
    providers: BTreeMap<Asn, Vec<Asn>>,
    orgs: BTreeMap<Asn, String>,
}

fn tier2(i: u32) -> Asn {
    2001 + i
}

fn tier3(i: u32) -> Asn {
    3001 + i
}

fn build_topology(rng: &mut DetRng) -> Topology {
    let mut edges = Vec::new();
    let mut providers: BTreeMap<Asn, Vec<Asn>> = BTreeMap::new();
    let mut orgs = BTreeMap::new();

    for (i, a) in TIER1.iter().enumerate() {
        orgs.insert(*a, "org-core".to_string());
        for b in TIER1.iter().skip(i + 1) {
            edges.push((*a, *b, 0));
        }
    }

    for i in 0..N_TIER2 {
        let asn = tier2(i);
        orgs.insert(asn, format!("org-t2-{}", i / 3));
        let first = TIER1[rng.next_usize(TIER1.len())];
        let mut second = TIER1[rng.next_usize(TIER1.len())];
        while second == first {
            second = TIER1[rng.next_usize(TIER1.len())];
        }
        for p in [first, second] {
            edges.push((p, asn, -1));
        }
        providers.insert(asn, vec![first.min(second), first.max(second)]);
    }
    for i in 0..N_TIER2 {
        for j in i + 1..N_TIER2 {
            if rng.next_f64() < 0.12 {
                edges.push((tier2(i), tier2(j), 0));
            }
        }
    }

    for i in 0..N_TIER3 {
        let asn = tier3(i);
        orgs.insert(asn, format!("org-t3-{}", i / 5));
        let first = tier2(rng.next_range(u64::from(N_TIER2)) as u32);
        let mut ups = vec![first];
        // The event origins are always dual-homed so anomalous routes can
        // enter through a tier-2 the benign variants never use.
        let special = [VICTIM, ATTACKER, LEAK_ORIGIN, MANIP_ORIGIN].contains(&asn);
        if special || rng.next_f64() < 0.5 {
            let mut second = tier2(rng.next_range(u64::from(N_TIER2)) as u32);
            while second == first {
                second = tier2(rng.next_range(u64::from(N_TIER2)) as u32);
            }
            ups.push(second);
        }
        ups.sort_unstable();
        for p in &ups {
            edges.push((*p, asn, -1));
        }
        providers.insert(asn, ups);
    }

    Topology {
        edges,
        providers,
        orgs,
    }
}

/// Benign route variants from a vantage to an origin: the vantage's first
/// tier-1 provider is fixed, the origin-side tier-2 is fixed, and only the
/// descent tier-1 varies, so the two variants differ in exactly one mid-path
/// position. Every tier-2 has two tier-1 providers, so two variants always
/// exist.
fn route_variants(topology: &Topology, vantage: Asn, origin: Asn) -> Vec<Vec<Asn>> {
    let t1a = topology.providers[&vantage][0];
    let t2o = topology.providers[&origin][0];
    let mut variants = Vec::new();
    for t1b in &topology.providers[&t2o] {
        let path = if t1a == *t1b {
            vec![vantage, t1a, t2o, origin]
        } else {
            vec![vantage, t1a, *t1b, t2o, origin]
        };
        if !variants.contains(&path) {
            variants.push(path);
        }
    }
    variants
}

/// An anomalous approach: climb through the vantage's *other* tier-1 and
/// descend through the origin's *other* tier-2, so the path diverges from
/// every benign variant in all interior positions.
fn detour_path(topology: &Topology, vantage: Asn, origin: Asn) -> Vec<Asn> {
    let t1a = topology.providers[&vantage][1];
    let ups = &topology.providers[&origin];
    let t2o = *ups.last().unwrap();
    let t1b = topology.providers[&t2o][0];
    if t1a == t1b {
        vec![vantage, t1a, t2o, origin]
    } else {
        vec![vantage, t1a, t1b, t2o, origin]
    }
}

fn path_str(path: &[Asn]) -> String {
    path.iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn customer_cones(topology: &Topology) -> BTreeMap<Asn, usize> {
    let mut customers: BTreeMap<Asn, Vec<Asn>> = BTreeMap::new();
    for (a, b, rel) in &topology.edges {
        if *rel == -1 {
            customers.entry(*a).or_default().push(*b);
        }
    }
    let mut cones = BTreeMap::new();
    for asn in topology.orgs.keys() {
        let mut seen = BTreeSet::new();
        let mut queue = vec![*asn];
        while let Some(next) = queue.pop() {
            for c in customers.get(&next).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(*c) {
                    queue.push(*c);
                }
            }
        }
        cones.insert(*asn, seen.len() + 1);
    }
    cones
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Generates the fixture into `dir` and returns its ground truth.
pub fn generate(dir: &Path, seed: u64) -> Result<GroundTruth> {
    std::fs::create_dir_all(dir)?;
    let mut rng = DetRng::derived(seed, "fixture");
    let topology = build_topology(&mut rng);

    // Relationship file.
    let mut rel = String::from("# synthetic AS relationships (serial-1)\n");
    for (a, b, kind) in &topology.edges {
        rel.push_str(&format!("{a}|{b}|{kind}\n"));
    }
    write_file(dir, "rel.txt", &rel)?;

    // Metadata.
    let cones = customer_cones(&topology);
    let countries = ["US", "DE", "JP", "BR", "IN", "ZA"];
    let mut meta = String::new();
    for (asn, org) in &topology.orgs {
        let cone = cones[asn];
        let country = countries[(*asn as usize) % countries.len()];
        let record = serde_json::json!({
            "asn": asn,
            "orgName": org,
            "country": country,
            "numberAsns": cone,
            "numberPrefixes": cone * 2,
            "numberAddresses": cone * 512,
            "announcingPrefixes": 1 + (*asn as u64 % 7),
            "announcingAddresses": (1 + (*asn as u64 % 7)) * 256,
        });
        meta.push_str(&record.to_string());
        meta.push('\n');
    }
    write_file(dir, "meta.jsonl", &meta)?;

    // Benign prefixes and their origins.
    let mut prefixes: Vec<(String, Asn)> = Vec::with_capacity(N_BENIGN_PREFIXES);
    for i in 0..N_BENIGN_PREFIXES {
        let a = i / 16;
        let b = (i % 16) * 16;
        prefixes.push((
            format!("10.{a}.{b}.0/24"),
            tier3((i % N_TIER3 as usize) as u32),
        ));
    }

    // RIB: benign variant zero for every vantage and prefix, the covering
    // /22 for the victim, and the two other special prefixes.
    let specials: Vec<(String, Asn)> = vec![
        (VICTIM_COVER.to_string(), VICTIM),
        (LEAK_PREFIX.to_string(), LEAK_ORIGIN),
        (MANIP_PREFIX.to_string(), MANIP_ORIGIN),
    ];
    let mut rib = String::from("# synthetic RIB snapshot\n");
    for v in VANTAGES {
        for (prefix, origin) in prefixes.iter().chain(specials.iter()) {
            let variants = route_variants(&topology, v, *origin);
            rib.push_str(&format!("{v}\t{prefix}\t{}\n", path_str(&variants[0])));
        }
    }
    write_file(dir, "rib.tsv", &rib)?;

    // Update stream, assembled in two passes: draws first, then a global
    // time sort, then benign variant assignment in stream order so that
    // consecutive announcements for one (vantage, prefix) always alternate
    // and every benign announcement yields a route change.
    enum Kind {
        Benign {
            v: Asn,
            pi: usize,
            with_set: bool,
        },
        Raw {
            v: Asn,
            prefix: String,
            path: String,
        },
        Withdraw {
            v: Asn,
            pi: usize,
        },
    }
    struct Draw {
        ts: i64,
        seq: usize,
        kind: Kind,
    }
    let mut draws: Vec<Draw> = Vec::new();
    let mut seq = 0usize;

    for k in 0..N_BENIGN_UPDATES {
        let ts = rng.next_range(DAY as u64) as i64;
        let v = VANTAGES[rng.next_usize(VANTAGES.len())];
        let pi = rng.next_usize(prefixes.len());
        draws.push(Draw {
            ts,
            seq,
            kind: Kind::Benign {
                v,
                pi,
                // Occasionally the origin appears as an AS set with a
                // numerically adjacent sibling.
                with_set: k % 997 == 499,
            },
        });
        seq += 1;
        // A sparse trickle of withdrawals.
        if k % 2500 == 0 {
            draws.push(Draw {
                ts: (ts + 120).min(DAY - 1),
                seq,
                kind: Kind::Withdraw { v, pi },
            });
            seq += 1;
        }
    }

    // Single-vantage wrong-origin noise at distinct (window, prefix) slots:
    // flagged by the score threshold, filtered by the vantage-count knee.
    for k in 0..N_SINGLE_VANTAGE_NOISE {
        let window = (k % 24) as i64;
        let pi = (k * 239) % prefixes.len();
        let (prefix, _) = &prefixes[pi];
        let ts = window * 3600 + 600 + (k as i64 * 37) % 2400;
        let v = VANTAGES[k % VANTAGES.len()];
        let wrong_origin = tier3(((k * 13) % N_TIER3 as usize) as u32);
        let variants = route_variants(&topology, v, wrong_origin);
        draws.push(Draw {
            ts,
            seq,
            kind: Kind::Raw {
                v,
                prefix: prefix.clone(),
                path: path_str(&variants[k % variants.len()]),
            },
        });
        seq += 1;
    }

    // Injected events: per vantage, four announcements alternating the
    // anomalous route (through the vantage's other tier-1, so it diverges
    // from benign churn in most positions) with the legitimate one.
    let mut truth = Vec::new();
    let inject = |draws: &mut Vec<Draw>,
                  seq: &mut usize,
                  event_index: usize,
                  prefix: &str,
                  anomalous: &dyn Fn(Asn) -> Vec<Asn>,
                  restore: &dyn Fn(Asn) -> Vec<Asn>|
     -> (i64, i64) {
        let start = EVENT_STARTS[event_index];
        let mut last = start;
        for (vi, v) in VANTAGES.iter().enumerate() {
            for i in 0..6 {
                let ts = start + (vi as i64) * 23 + (i as i64) * 150;
                last = last.max(ts);
                let path = if i % 2 == 0 {
                    anomalous(*v)
                } else {
                    restore(*v)
                };
                draws.push(Draw {
                    ts,
                    seq: *seq,
                    kind: Kind::Raw {
                        v: *v,
                        prefix: prefix.to_string(),
                        path: path_str(&path),
                    },
                });
                *seq += 1;
            }
        }
        (start, last)
    };

    // 1) Origin change: the attacker announces a more-specific /24 inside
    //    the victim's covering /22.
    {
        let (start, end) = inject(
            &mut draws,
            &mut seq,
            0,
            HIJACKED,
            &|v| detour_path(&topology, v, ATTACKER),
            &|v| route_variants(&topology, v, VICTIM)[0].clone(),
        );
        truth.push(GroundTruthEvent {
            name: "origin-change".into(),
            prefix: HIJACKED.into(),
            responsible: ATTACKER,
            start,
            end,
        });
    }

    // 2) Route leak: the leaker re-exports a route learned from one tier-1
    //    provider to its other tier-1 provider.
    {
        let leaker_ups = topology.providers[&LEAKER].clone();
        // The leaked route descends through the origin's other tier-2, so it
        // shares nothing but the endpoints with the benign variants.
        let t2o = *topology.providers[&LEAK_ORIGIN].last().unwrap();
        let leaked = move |topology: &Topology, v: Asn| {
            let t1_entry = topology.providers[&v][1];
            let (t1_down, t1_up) = (leaker_ups[0], leaker_ups[1]);
            let mut path = vec![v, t1_entry];
            if t1_entry != t1_down {
                path.push(t1_down);
            }
            path.extend([LEAKER, t1_up, t2o, LEAK_ORIGIN]);
            path
        };
        let (start, end) = inject(
            &mut draws,
            &mut seq,
            1,
            LEAK_PREFIX,
            &|v| leaked(&topology, v),
            &|v| route_variants(&topology, v, LEAK_ORIGIN)[0].clone(),
        );
        truth.push(GroundTruthEvent {
            name: "route-leak".into(),
            prefix: LEAK_PREFIX.into(),
            responsible: LEAKER,
            start,
            end,
        });
    }

    // 3) Path manipulation: a reserved ASN spliced into a detour path.
    {
        let t2o = *topology.providers[&MANIP_ORIGIN].last().unwrap();
        let (start, end) = inject(
            &mut draws,
            &mut seq,
            2,
            MANIP_PREFIX,
            &|v| {
                vec![
                    v,
                    topology.providers[&v][1],
                    RESERVED_HOP,
                    t2o,
                    MANIP_ORIGIN,
                ]
            },
            &|v| route_variants(&topology, v, MANIP_ORIGIN)[0].clone(),
        );
        truth.push(GroundTruthEvent {
            name: "path-manipulation".into(),
            prefix: MANIP_PREFIX.into(),
            responsible: RESERVED_HOP,
            start,
            end,
        });
    }

    draws.sort_by_key(|d| (d.ts, d.seq));
    let mut flip: BTreeMap<(Asn, usize), usize> = BTreeMap::new();
    let mut updates = String::from("# synthetic update stream\n");
    let n_lines = draws.len();
    for d in &draws {
        match &d.kind {
            Kind::Benign { v, pi, with_set } => {
                let (prefix, origin) = &prefixes[*pi];
                let variants = route_variants(&topology, *v, *origin);
                let slot = flip.entry((*v, *pi)).or_insert(0);
                *slot += 1;
                let path = &variants[*slot % variants.len()];
                let text = if *with_set {
                    let sibling = if *origin == tier3(N_TIER3 - 1) {
                        tier3(N_TIER3 - 2)
                    } else {
                        *origin + 1
                    };
                    let mut s = path_str(&path[..path.len() - 1]);
                    s.push_str(&format!(
                        " {{{},{}}}",
                        origin.min(&sibling),
                        origin.max(&sibling)
                    ));
                    s
                } else {
                    path_str(path)
                };
                updates.push_str(&format!("{}\t{v}\t{prefix}\t{text}\n", d.ts));
            }
            Kind::Raw { v, prefix, path } => {
                updates.push_str(&format!("{}\t{v}\t{prefix}\t{path}\n", d.ts));
            }
            Kind::Withdraw { v, pi } => {
                let (prefix, _) = &prefixes[*pi];
                updates.push_str(&format!("{}\t{v}\t{prefix}\tWITHDRAW\n", d.ts));
            }
        }
    }
    write_file(dir, "updates.tsv", &updates)?;

    // ROA table for the special prefixes plus a few benign ones.
    let mut roa = String::from("# prefix,max_length,asn\n");
    roa.push_str(&format!("{VICTIM_COVER},24,{VICTIM}\n"));
    roa.push_str(&format!("{LEAK_PREFIX},24,{LEAK_ORIGIN}\n"));
    roa.push_str(&format!("{MANIP_PREFIX},24,{MANIP_ORIGIN}\n"));
    for (prefix, origin) in prefixes.iter().take(40) {
        roa.push_str(&format!("{prefix},24,{origin}\n"));
    }
    write_file(dir, "roa.csv", &roa)?;

    let truth = GroundTruth { events: truth };
    write_file(
        dir,
        "ground_truth.json",
        &format!("{}\n", serde_json::to_string_pretty(&truth)?),
    )?;

    // Run configuration with paths relative to the fixture directory.
    let config = RunConfig {
        paths: ConfigPaths {
            rib: "rib.tsv".into(),
            updates: "updates.tsv".into(),
            relationships: "rel.txt".into(),
            metadata: "meta.jsonl".into(),
            roa: Some("roa.csv".into()),
            reserved_asns: None,
            changes: "out/changes.jsonl".into(),
            segments: "out/segments.jsonl".into(),
            store: "out/store.jsonl".into(),
            model: "out/model.json".into(),
            reduced_store: "out/reduced.jsonl".into(),
            scored: "out/scored.jsonl".into(),
            report: "out/report.json".into(),
            report_text: Some("out/report.txt".into()),
        },
        window_secs: 3600,
        reduced_dim: 16,
        neighbor_batch_size: 50,
        segment_char_limit: 8000,
        auto_batch_size: true,
        provider: ProviderConfig::Mock { dim: 64, seed },
        embed: EmbedSection::default(),
        train: TrainSection {
            iterations: 300,
            ..TrainSection::default()
        },
        detect: DetectSection::default(),
        aggregate: AggregateSection::default(),
        seed,
        jobs: None,
    };
    write_file(
        dir,
        "config.json",
        &format!("{}\n", serde_json::to_string_pretty(&config)?),
    )?;

    eprintln!(
        "fixture: {} updates, {} prefixes, {} ASes, 3 injected events, seed {seed} -> {}",
        n_lines,
        prefixes.len() + 3,
        topology.orgs.len(),
        dir.display()
    );
    Ok(truth)
}
