//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Numeric criteria compare the production code against independent
//! brute-force oracles; end-to-end criteria drive the compiled binary over
//! the generated synthetic scenario and score the report against its ground
//! truth. Run with `cargo test -p bgplens-cli --test acceptance`
//! (`-- --nocapture` to see the per-criterion lines).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bgplens::cdr::{self, Hyper};
use bgplens::detector::{self, clean_path, detect, Scored};
use bgplens::embedder::{embed_as, EmbedOptions, MockProvider, RetryPolicy, VectorStore};
use bgplens::oracles;
use bgplens::rng::DetRng;
use bgplens::route_monitor::PrefixTree;
use bgplens::types::{AsPath, Asn, Family, PathElement, Prefix, RouteChange};

fn pass(criterion: usize, label: &str) {
    println!("[acceptance] criterion {criterion} ({label}): PASS");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bgplens")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------------------
// 1. AR-DTW oracle equivalence
// ---------------------------------------------------------------------------

fn random_store(rng: &mut DetRng, n_as: u32, dim: usize) -> VectorStore {
    let mut store = VectorStore::new(dim, "oracle".into(), "v1".into());
    for asn in 1..=n_as {
        store
            .insert(asn, (0..dim).map(|_| rng.next_f64() * 8.0 - 4.0).collect())
            .unwrap();
    }
    store
}

fn random_element(rng: &mut DetRng, n_as: u32) -> PathElement {
    if rng.next_f64() < 0.2 {
        let size = rng.next_usize(3) + 2;
        let members: Vec<Asn> = (0..size)
            .map(|_| rng.next_range(u64::from(n_as)) as u32 + 1)
            .collect();
        PathElement::set(members).unwrap()
    } else {
        PathElement::Asn(rng.next_range(u64::from(n_as)) as u32 + 1)
    }
}

#[test]
fn criterion_01_ar_dtw_matches_exhaustive_enumeration() {
    let started = Instant::now();
    let mut rng = DetRng::new(0xA1);
    for case in 0..500 {
        let dim = rng.next_usize(4) + 1;
        let n_as = 12;
        let store = random_store(&mut rng, n_as, dim);
        let vectors: BTreeMap<Asn, Vec<f64>> = store.iter().map(|(a, v)| (a, v.to_vec())).collect();

        let shared_first = random_element(&mut rng, n_as);
        let build = |rng: &mut DetRng, len: usize| {
            let mut elements = vec![shared_first.clone()];
            for _ in 1..len {
                let e = random_element(rng, n_as);
                // Occasional consecutive duplicates exercise cleaning.
                if rng.next_f64() < 0.15 {
                    elements.push(elements.last().unwrap().clone());
                }
                elements.push(e);
            }
            clean_path(&AsPath::new(elements).unwrap())
        };
        let len_s = rng.next_usize(5) + 1;
        let len_t = rng.next_usize(5) + 1;
        let s = build(&mut rng, len_s);
        let t = build(&mut rng, len_t);
        if s.len() > 5 || t.len() > 5 {
            continue;
        }

        let dp = detector::ar_dtw(&s, &t, &store).unwrap();
        let brute = oracles::dtw_exhaustive(s.elements(), t.elements(), &vectors);
        assert_eq!(dp, brute, "case {case}: s={s:?} t={t:?}");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "500 oracle comparisons took {elapsed:?}"
    );
    pass(
        1,
        "AR-DTW equals brute-force alignment enumeration on 500 path pairs",
    );
}

// ---------------------------------------------------------------------------
// 2. LPM oracle equivalence
// ---------------------------------------------------------------------------

fn random_prefix(rng: &mut DetRng, family: Family) -> Prefix {
    match family {
        Family::V4 => {
            let len = rng.next_range(33) as u8;
            Prefix::new(Family::V4, u128::from(rng.next_u64() as u32) << 96, len).unwrap()
        }
        Family::V6 => {
            let len = rng.next_range(129) as u8;
            let bits = (u128::from(rng.next_u64()) << 64) | u128::from(rng.next_u64());
            Prefix::new(Family::V6, bits, len).unwrap()
        }
    }
}

#[test]
fn criterion_02_lpm_matches_linear_scan() {
    let mut rng = DetRng::new(0xA2);
    let mut instances = 0;
    while instances < 1000 {
        let family = if rng.next_f64() < 0.5 {
            Family::V4
        } else {
            Family::V6
        };
        let mut tree = PrefixTree::new(family);
        let mut entries: Vec<(Prefix, AsPath)> = Vec::new();
        for i in 0..rng.next_usize(40) + 1 {
            let prefix = random_prefix(&mut rng, family);
            let path = AsPath::from_asns(&[100, i as u32 + 1]);
            // Last write wins in both routes.
            entries.retain(|(p, _)| *p != prefix);
            entries.push((prefix, path.clone()));
            tree.insert(prefix, path).unwrap();
        }
        for _ in 0..10 {
            // Half the queries extend a stored prefix so covers actually hit.
            let query = if rng.next_f64() < 0.5 && !entries.is_empty() {
                let (base, _) = &entries[rng.next_usize(entries.len())];
                let extra = rng.next_range(u64::from(family.max_len() - base.len()) + 1) as u8;
                let mut q = random_prefix(&mut rng, family);
                while q.len() < base.len() + extra {
                    q = random_prefix(&mut rng, family);
                }
                // Splice: base bits then random tail at the target length.
                let len = base.len() + extra;
                let mut bits = 0u128;
                for i in 0..len {
                    let bit = if i < base.len() {
                        base.bit(i)
                    } else {
                        q.bit(i)
                    };
                    bits |= u128::from(bit) << (127 - u32::from(i));
                }
                Prefix::new(family, bits, len).unwrap()
            } else {
                random_prefix(&mut rng, family)
            };
            let got = tree.lpm(&query).unwrap();
            let expected = oracles::lpm_linear_scan(&entries, &query);
            match (got, expected) {
                (None, None) => {}
                (Some((gp, gpath)), Some((ep, epath))) => {
                    assert_eq!(gp, ep, "query {query}");
                    assert_eq!(gpath, epath, "query {query}");
                }
                (got, expected) => panic!("query {query}: {got:?} vs {expected:?}"),
            }
            instances += 1;
        }
    }
    pass(
        2,
        "LPM equals linear-scan longest cover on 1000 mixed v4/v6 queries",
    );
}

// ---------------------------------------------------------------------------
// 3. CDR gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_cdr_gradients_match_finite_differences() {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 1..=10u64 {
        let mut rng = DetRng::new(seed);
        let input_dim = rng.next_usize(6) + 3;
        let hyper = Hyper {
            hidden_dim: rng.next_usize(6) + 3,
            output_dim: rng.next_usize(2) + 2,
            ..Hyper::default()
        };
        let model = cdr::ReductionModel::init(input_dim, &hyper, seed);
        let n_pos = rng.next_usize(3) + 1;
        let n_neg = rng.next_usize(3) + 1;
        let mut mk = |n: usize| -> Vec<(Vec<f64>, Vec<f64>)> {
            (0..n)
                .map(|_| {
                    (
                        (0..input_dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
                        (0..input_dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
                    )
                })
                .collect()
        };
        let pos = mk(n_pos);
        let neg = mk(n_neg);
        let pos_refs: Vec<(&[f64], &[f64])> = pos
            .iter()
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
            .collect();
        let neg_refs: Vec<(&[f64], &[f64])> = neg
            .iter()
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
            .collect();
        let (_, grads) = cdr::loss_and_grads(&model, &pos_refs, &neg_refs, false);

        let loss_at = |m: &cdr::ReductionModel| {
            let pr: Vec<(Vec<f64>, Vec<f64>)> = pos
                .iter()
                .map(|(a, b)| (m.forward(a), m.forward(b)))
                .collect();
            let nr: Vec<(Vec<f64>, Vec<f64>)> = neg
                .iter()
                .map(|(a, b)| (m.forward(a), m.forward(b)))
                .collect();
            cdr::cdr_loss(&pr, &nr, m.output_dim, false)
        };
        let mut check =
            |analytic: &[f64],
             select: &dyn for<'a> Fn(&'a mut cdr::ReductionModel) -> &'a mut Vec<f64>| {
                for (i, analytic) in analytic.iter().enumerate() {
                    let mut plus = model.clone();
                    select(&mut plus)[i] += step;
                    let mut minus = model.clone();
                    select(&mut minus)[i] -= step;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                    let denom = analytic.abs().max(fd.abs());
                    if denom > 1e-8 {
                        worst = worst.max((analytic - fd).abs() / denom);
                    }
                }
            };
        check(&grads.w1, &|m| &mut m.w1);
        check(&grads.b1, &|m| &mut m.b1);
        check(&grads.w2, &|m| &mut m.w2);
        check(&grads.b2, &|m| &mut m.b2);
    }
    assert!(worst <= 1e-4, "max relative gradient error {worst}");
    pass(
        3,
        "analytic CDR gradients within 1e-4 of central finite differences",
    );
}

// ---------------------------------------------------------------------------
// 4. CDR separation on the seeded two-org synthetic store
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_cdr_separates_synthetic_orgs() {
    let started = Instant::now();
    // Two orgs of 50 ASes, cluster centers 10 apart in 64 dims, sigma 1.
    let mut rng = DetRng::new(0xA4);
    let dim = 64;
    let per_org = 50;
    let mut store = VectorStore::new(dim, "synthetic".into(), "v1".into());
    let mut orgs = cdr::OrgMap::new();
    let offset = 10.0 / (dim as f64).sqrt();
    for i in 0..2 * per_org {
        let asn = 100 + i as u32;
        let center = if i < per_org { 0.0 } else { offset };
        store
            .insert(
                asn,
                (0..dim).map(|_| center + rng.next_gaussian()).collect(),
            )
            .unwrap();
        orgs.insert(
            asn,
            if i < per_org {
                "org-a".into()
            } else {
                "org-b".into()
            },
        );
    }
    let hyper = Hyper {
        iterations: 300,
        ..Hyper::default()
    };
    let outcome = cdr::train(&store, &orgs, &hyper, 0xA4).unwrap();

    let initial = outcome.loss_trace[0];
    let trailing = outcome.loss_trace.iter().rev().take(50).sum::<f64>() / 50.0;
    assert!(
        trailing < initial,
        "trailing-50 mean {trailing} not below initial {initial}"
    );

    let reduced = cdr::reduce(&outcome.model, &store).unwrap();
    let euclid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mean_over = |pairs: &[(Asn, Asn)]| -> f64 {
        pairs
            .iter()
            .map(|(a, b)| euclid(reduced.get(*a).unwrap(), reduced.get(*b).unwrap()))
            .sum::<f64>()
            / pairs.len() as f64
    };
    let pos = mean_over(&outcome.initial_pairs.positives);
    let neg = mean_over(&outcome.initial_pairs.negatives);
    assert!(
        pos < neg,
        "reduced positive mean {pos} not below negative mean {neg}"
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "training took {elapsed:?}"
    );
    pass(4, "trained reduction separates the two-org synthetic store");
}

// ---------------------------------------------------------------------------
// 5. Threshold coverage under the four-sigma rule
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_four_sigma_flags_at_most_point_one_percent() {
    let mut rng = DetRng::new(0xA5);
    let mk = |ts: i64, norm: f64| Scored {
        change: RouteChange {
            ts,
            vantage: 1,
            announced_prefix: "10.0.0.0/8".parse().unwrap(),
            matched_prefix: "10.0.0.0/8".parse().unwrap(),
            historical_path: AsPath::from_asns(&[1, 2]),
            updated_path: AsPath::from_asns(&[1, 3]),
        },
        raw: norm,
        norm,
    };
    let mut scored = Vec::with_capacity(20_000);
    for i in 0..10_000i64 {
        scored.push(mk(i % 3600, rng.next_gaussian()));
    }
    for i in 0..10_000i64 {
        scored.push(mk(3600 + i % 3600, rng.next_gaussian()));
    }
    scored.sort_by_key(|s| s.change.ts);
    let (out, _) = detect(scored, 3600).unwrap();
    let flagged = out
        .iter()
        .filter(|s| s.change.ts >= 3600 && s.flagged)
        .count();
    assert!(
        flagged <= 10,
        "{flagged} of 10000 in-distribution scores flagged (limit 0.1%)"
    );
    pass(
        5,
        "mean + 4 sigma flags <= 0.1% of an identically distributed window",
    );
}

// ---------------------------------------------------------------------------
// 6. End-to-end synthetic analogue
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct TruthFile {
    events: Vec<TruthEvent>,
}

#[derive(serde::Deserialize)]
struct TruthEvent {
    name: String,
    prefix: String,
    responsible: Asn,
    start: i64,
    end: i64,
}

#[derive(serde::Deserialize)]
struct ReportFile {
    run: ReportRun,
    events: Vec<ReportEvent>,
}

#[derive(serde::Deserialize)]
struct ReportRun {
    n_scored: usize,
}

#[derive(serde::Deserialize)]
struct ReportEvent {
    prefixes: Vec<String>,
    responsible_ases: Vec<Asn>,
    start: i64,
    end: i64,
}

fn generate_fixture(dir: &Path, seed: u64) -> TruthFile {
    let out = Command::new(bin())
        .args([
            "--gen-fixture",
            dir.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_str(&fs::read_to_string(dir.join("ground_truth.json")).unwrap()).unwrap()
}

fn run_all(config: &Path) -> ReportFile {
    let out = Command::new(bin())
        .args([
            "--config",
            config.to_str().unwrap(),
            "--jobs",
            "1",
            "run-all",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run-all failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report_path = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(&fs::read_to_string(report_path.trim()).unwrap()).unwrap()
}

fn matches_truth(report: &ReportFile, truth: &TruthEvent) -> bool {
    report.events.iter().any(|e| {
        e.prefixes.contains(&truth.prefix)
            && e.responsible_ases.contains(&truth.responsible)
            && e.start <= truth.end
            && truth.start <= e.end
    })
}

fn is_true_event(event: &ReportEvent, truth: &TruthFile) -> bool {
    truth.events.iter().any(|t| {
        event.prefixes.contains(&t.prefix)
            && event.responsible_ases.contains(&t.responsible)
            && event.start <= t.end
            && t.start <= event.end
    })
}

#[test]
fn criterion_06_end_to_end_detects_all_injected_events() {
    let started = Instant::now();
    let dir = tmp_dir("acceptance_e2e");
    let truth = generate_fixture(&dir, 42);
    assert_eq!(truth.events.len(), 3);
    let report = run_all(&dir.join("config.json"));

    // The scenario provides at least 50k benign changes beside the events.
    let injected: usize = 3 * 30;
    assert!(
        report.run.n_scored - injected >= 50_000,
        "only {} scored changes",
        report.run.n_scored
    );

    for t in &truth.events {
        assert!(
            matches_truth(&report, t),
            "injected {} event on {} (AS{}) not attributed",
            t.name,
            t.prefix,
            t.responsible
        );
    }
    let false_events = report
        .events
        .iter()
        .filter(|e| !is_true_event(e, &truth))
        .count();
    let rate = false_events as f64 / report.events.len().max(1) as f64;
    assert!(
        rate <= 0.05,
        "false-event rate {rate} ({false_events} of {})",
        report.events.len()
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "end-to-end took {elapsed:?}"
    );
    pass(
        6,
        "3/3 injected events attributed, false-event rate within 5%",
    );
}

// ---------------------------------------------------------------------------
// 7. New-AS pipeline latency
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_unseen_as_embeds_in_under_a_second() {
    let provider = MockProvider { dim: 64, seed: 7 };
    let opts = EmbedOptions {
        retry: RetryPolicy {
            max_retries: 0,
            base_delay: Duration::ZERO,
        },
        ..EmbedOptions::default()
    };
    // A populated reduced store to diff against.
    let mut store = VectorStore::new(64, "mock".into(), "v1".into());
    let mut rng = DetRng::new(0xA7);
    for asn in 1..=200u32 {
        store
            .insert(asn, (0..64).map(|_| rng.next_f64()).collect())
            .unwrap();
    }
    let hyper = Hyper::default();
    let model = cdr::ReductionModel::init(64, &hyper, 7);
    let mut reduced = cdr::reduce(&model, &store).unwrap();
    let before: BTreeMap<Asn, Vec<u64>> = reduced
        .iter()
        .map(|(a, v)| (a, v.iter().map(|x| x.to_bits()).collect()))
        .collect();

    let started = Instant::now();
    let segment = bgplens::as_profile::render_minimal(64_499);
    let outcome = embed_as(&[segment], &provider, &opts).unwrap();
    let vec = model.forward(&outcome.embedding.vec);
    reduced.insert(64_499, vec).unwrap();
    let elapsed = started.elapsed();

    assert!(
        elapsed < Duration::from_secs(1),
        "describe+embed+reduce took {elapsed:?}"
    );
    assert_eq!(reduced.len(), before.len() + 1);
    for (asn, bits) in before {
        let now: Vec<u64> = reduced
            .get(asn)
            .unwrap()
            .iter()
            .map(|x| x.to_bits())
            .collect();
        assert_eq!(now, bits, "existing entry for AS {asn} changed");
    }
    pass(
        7,
        "describe -> embed -> reduce for one unseen AS in under 1s, store diff of one",
    );
}

// ---------------------------------------------------------------------------
// 8. Robustness to relationship noise
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_pipeline_survives_quarter_noise() {
    let dir = tmp_dir("acceptance_noise");
    let truth = generate_fixture(&dir, 42);
    let base_config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();

    for noise in ["delete", "add", "flip"] {
        for seed in [11u64, 12, 13] {
            let tag = format!("{noise}_{seed}");
            let rel = format!("rel_{tag}.txt");
            let out = Command::new(bin())
                .args([
                    "--config",
                    dir.join("config.json").to_str().unwrap(),
                    "--seed",
                    &seed.to_string(),
                    "perturb",
                    "--noise",
                    noise,
                    "--ratio",
                    "0.25",
                    "--out",
                    dir.join(&rel).to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );

            let mut config = base_config.clone();
            config["paths"]["relationships"] = serde_json::json!(rel);
            for key in [
                "changes",
                "segments",
                "store",
                "model",
                "reduced_store",
                "scored",
                "report",
            ] {
                config["paths"][key] = serde_json::json!(format!("out_{tag}/{key}.json"));
            }
            config["paths"]["report_text"] = serde_json::Value::Null;
            let config_path = dir.join(format!("config_{tag}.json"));
            fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

            let report = run_all(&config_path);
            let detected = truth
                .events
                .iter()
                .filter(|t| matches_truth(&report, t))
                .count();
            assert!(
                detected >= 2,
                "{noise} noise (seed {seed}): only {detected}/3 events detected"
            );
        }
    }
    pass(
        8,
        "25% relationship noise: every run completes and detects >= 2/3 events",
    );
}

// ---------------------------------------------------------------------------
// 9. Valley-free checker equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_valley_free_matches_state_machine() {
    use bgplens::as_profile::{build_graph, Rel, RelEdge};
    let mut rng = DetRng::new(0xA9);
    let nodes = 5u32;
    for graph_index in 0..100 {
        let mut edges = Vec::new();
        for _ in 0..8 {
            let a = rng.next_range(u64::from(nodes)) as u32 + 1;
            let b = rng.next_range(u64::from(nodes)) as u32 + 1;
            let rel = if rng.next_f64() < 0.35 {
                Rel::P2P
            } else {
                Rel::P2C
            };
            edges.push(RelEdge { a, b, rel });
        }
        let (graph, _) = build_graph(edges);

        // Every labeled path of length 2..=6 over the node universe.
        let mut path = Vec::new();
        exhaustive_paths(&mut path, nodes, 6, &mut |asns| {
            let elements: Vec<PathElement> = asns.iter().map(|a| PathElement::Asn(*a)).collect();
            let got = bgplens::aggregator::valley_free_ok(&elements, &graph);
            let expected = oracles::valley_free_exhaustive(asns, &graph);
            assert_eq!(got, expected, "graph {graph_index}, path {asns:?}");
        });
    }
    pass(
        9,
        "valley-free checker equals the exhaustive state machine on all paths <= 6",
    );
}

fn exhaustive_paths(
    path: &mut Vec<Asn>,
    nodes: u32,
    max_len: usize,
    visit: &mut impl FnMut(&[Asn]),
) {
    if path.len() >= 2 {
        visit(path);
    }
    if path.len() == max_len {
        return;
    }
    for next in 1..=nodes {
        path.push(next);
        exhaustive_paths(path, nodes, max_len, visit);
        path.pop();
    }
}

// ---------------------------------------------------------------------------
// 10. Run-all determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_run_all_is_byte_deterministic() {
    let dir = tmp_dir("acceptance_determinism");
    generate_fixture(&dir, 42);
    let config = dir.join("config.json");
    run_all(&config);
    let first = fs::read(dir.join("out/report.json")).unwrap();
    run_all(&config);
    let second = fs::read(dir.join("out/report.json")).unwrap();
    assert_eq!(first, second, "reports must be byte-identical");
    pass(10, "two identical runs produce byte-identical reports");
}
