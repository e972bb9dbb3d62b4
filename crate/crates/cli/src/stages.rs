//! Pipeline stage implementations behind the subcommands.
//!
//! Each stage reads its documented inputs, writes its documented file format
//! and prints a short summary to stderr. `run_all` chains them and prints
//! the report path on stdout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use bgplens::aggregator::{
    build_prefix_events, classify_events, emit_report, link_events, CandidateMode, ReservedRanges,
    RoaTable, RunMeta,
};
use bgplens::as_profile::{
    build_graph, load_metadata, load_relationships, perturb_graph, render_description,
    render_description_auto, render_minimal, write_relationships, write_segments, AsGraph,
    AsMetadata, NoiseKind, PromptSegment,
};
use bgplens::cdr::{reduce, train, OrgMap, ReductionModel};
use bgplens::detector::{collect_missing_asns, detect, score_changes, write_scored};
use bgplens::embedder::{
    embed_all, embed_as, EmbedOptions, HttpConfig, HttpProvider, MockProvider, Provider,
    VectorStore,
};
use bgplens::route_monitor::{
    build_prefix_trees, extract_route_changes, load_rib, load_updates, read_changes, write_changes,
};
use bgplens::types::Asn;

use crate::config::{ProviderConfig, RunConfig};

fn open_input(path: &Path, what: &str) -> Result<BufReader<File>> {
    let file =
        File::open(path).with_context(|| format!("{what} file not found: {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn make_provider(config: &RunConfig) -> Result<Box<dyn Provider>> {
    match &config.provider {
        ProviderConfig::Mock { dim, seed } => Ok(Box::new(MockProvider {
            dim: *dim,
            seed: *seed,
        })),
        ProviderConfig::Http {
            endpoint,
            model,
            expected_dim,
            timeout_secs,
        } => {
            let endpoint = endpoint
                .clone()
                .or_else(|| std::env::var("EMBED_ENDPOINT").ok())
                .ok_or_else(|| anyhow!("http provider needs endpoint or EMBED_ENDPOINT"))?;
            let model = model
                .clone()
                .or_else(|| std::env::var("EMBED_MODEL").ok())
                .ok_or_else(|| anyhow!("http provider needs model or EMBED_MODEL"))?;
            Ok(Box::new(HttpProvider::new(HttpConfig {
                endpoint,
                model,
                api_key: std::env::var("EMBED_API_KEY").ok(),
                timeout: std::time::Duration::from_secs(*timeout_secs),
                expected_dim: *expected_dim,
            })))
        }
    }
}

/// RIB + updates -> route-change file.
pub fn monitor(config: &RunConfig) -> Result<()> {
    let (entries, rib_errors) = load_rib(open_input(&config.paths.rib, "RIB")?)?;
    let (mut trees, stats) = build_prefix_trees(entries)?;
    let (updates, update_errors) = load_updates(open_input(&config.paths.updates, "updates")?)?;
    let (changes, extract) =
        extract_route_changes(&mut trees, &updates, config.detect.order_slack_secs)?;
    write_changes(create_output(&config.paths.changes)?, &changes)?;
    eprintln!(
        "monitor: {} vantages, {} rib entries ({} skipped lines, {} head violations), \
         {} announcements, {} withdrawals, {} changes, {} lpm misses ({} bad update lines)",
        stats.entries_per_vantage.len(),
        stats.entries_per_vantage.values().sum::<usize>(),
        rib_errors.len(),
        stats.vantage_head_violations,
        extract.announcements,
        extract.withdrawals,
        extract.changes,
        extract.lpm_misses,
        update_errors.len(),
    );
    for err in rib_errors.iter().chain(update_errors.iter()).take(5) {
        eprintln!("monitor: line {}: {}", err.line, err.msg);
    }
    Ok(())
}

fn load_graph_and_metadata(config: &RunConfig) -> Result<(AsGraph, BTreeMap<Asn, AsMetadata>)> {
    let (edges, rel_errors) =
        load_relationships(open_input(&config.paths.relationships, "relationships")?)?;
    let (graph, warnings) = build_graph(edges);
    if warnings.self_loops + warnings.conflicts > 0 {
        eprintln!(
            "profile: {} self-loops skipped, {} conflicting duplicates kept-first",
            warnings.self_loops, warnings.conflicts
        );
    }
    for err in rel_errors.iter().take(5) {
        eprintln!("profile: line {}: {}", err.line, err.msg);
    }
    let (metadata, meta_errors) = load_metadata(open_input(&config.paths.metadata, "metadata")?)?;
    for err in meta_errors.iter().take(5) {
        eprintln!("profile: metadata line {}: {}", err.line, err.msg);
    }
    Ok((graph, metadata))
}

fn org_map_of(metadata: &BTreeMap<Asn, AsMetadata>) -> OrgMap {
    metadata
        .iter()
        .filter_map(|(asn, m)| m.org_name.clone().map(|org| (*asn, org)))
        .collect()
}

/// Relationship graph + metadata -> description segment dump.
pub fn profile(config: &RunConfig) -> Result<()> {
    let (graph, metadata) = load_graph_and_metadata(config)?;
    let universe: std::collections::BTreeSet<Asn> =
        graph.nodes().chain(metadata.keys().copied()).collect();
    let mut segments: Vec<PromptSegment> = Vec::new();
    for asn in &universe {
        let meta = metadata.get(asn);
        let rendered = if config.auto_batch_size {
            render_description_auto(
                *asn,
                &graph,
                meta,
                config.neighbor_batch_size,
                config.segment_char_limit,
            )?
        } else {
            render_description(
                *asn,
                &graph,
                meta,
                config.neighbor_batch_size,
                Some(config.segment_char_limit),
            )?
        };
        segments.extend(rendered);
    }
    write_segments(create_output(&config.paths.segments)?, &segments)?;
    eprintln!(
        "profile: {} ASes, {} segments (batch size {}, char limit {})",
        universe.len(),
        segments.len(),
        config.neighbor_batch_size,
        config.segment_char_limit
    );
    Ok(())
}

/// Segment dump + provider -> embedding store.
pub fn embed(config: &RunConfig) -> Result<()> {
    let segments =
        bgplens::as_profile::read_segments(open_input(&config.paths.segments, "segments")?)?;
    let mut groups: BTreeMap<Asn, Vec<PromptSegment>> = BTreeMap::new();
    for seg in segments {
        groups.entry(seg.asn).or_default().push(seg);
    }
    if groups.is_empty() {
        bail!(
            "no segments to embed in {}",
            config.paths.segments.display()
        );
    }
    let provider = make_provider(config)?;
    let (store, stats) = embed_all(&groups, provider.as_ref(), &config.embed.options())?;
    store.save(create_output(&config.paths.store)?)?;
    eprintln!(
        "embed: {} ASes, {} segments, {} retries, dim {} via {}",
        stats.ases,
        stats.segments,
        stats.retries,
        store.dim(),
        store.provider_id
    );
    Ok(())
}

/// Embedding store + org map -> reduction model.
pub fn train_cdr(config: &RunConfig) -> Result<()> {
    let store = VectorStore::load(open_input(&config.paths.store, "store")?)?;
    let (_, metadata) = load_graph_and_metadata(config)?;
    let org_map = org_map_of(&metadata);
    let hyper = config.train.hyper(config.reduced_dim);
    let outcome = train(&store, &org_map, &hyper, config.seed)?;
    outcome.model.save(create_output(&config.paths.model)?)?;
    let first = outcome.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "train-cdr: {} iterations, {} resamples, loss {first:.6} -> {last:.6}, \
         {} positives / {} negatives initially, model {}",
        outcome.loss_trace.len(),
        outcome.resamples,
        outcome.initial_pairs.positives.len(),
        outcome.initial_pairs.negatives.len(),
        outcome.model.checksum(),
    );
    Ok(())
}

fn load_or_init_model(config: &RunConfig, store: &VectorStore) -> Result<ReductionModel> {
    if config.paths.model.exists() {
        Ok(ReductionModel::load(open_input(
            &config.paths.model,
            "model",
        )?)?)
    } else {
        // No trained model: a seeded projection still reduces dimensionality
        // deterministically. Saved so later stages reuse the same weights.
        let hyper = config.train.hyper(config.reduced_dim);
        let model = ReductionModel::init(store.dim(), &hyper, config.seed);
        model.save(create_output(&config.paths.model)?)?;
        eprintln!(
            "reduce: no model at {}, initialized from seed {}",
            config.paths.model.display(),
            config.seed
        );
        Ok(model)
    }
}

/// Model + store -> reduced store.
pub fn reduce_stage(config: &RunConfig) -> Result<()> {
    let store = VectorStore::load(open_input(&config.paths.store, "store")?)?;
    let model = load_or_init_model(config, &store)?;
    let reduced = reduce(&model, &store)?;
    reduced.save(create_output(&config.paths.reduced_store)?)?;
    eprintln!(
        "reduce: {} vectors {} -> {} dims, model {}",
        reduced.len(),
        store.dim(),
        reduced.dim(),
        model.checksum()
    );
    Ok(())
}

/// Embeds one previously unseen AS from a minimal description and inserts
/// its reduced vector into the store copy.
pub fn resolve_unseen(
    asn: Asn,
    provider: &dyn Provider,
    opts: &EmbedOptions,
    model: &ReductionModel,
    reduced: &mut VectorStore,
) -> Result<()> {
    let segment = render_minimal(asn);
    let outcome = embed_as(&[segment], provider, opts)?;
    let vec = model.forward(&outcome.embedding.vec);
    reduced.insert(asn, vec)?;
    Ok(())
}

/// Route changes + reduced store -> scored changes with flags.
pub fn detect_stage(config: &RunConfig) -> Result<()> {
    let changes = read_changes(open_input(&config.paths.changes, "changes")?)?;
    let mut reduced = VectorStore::load(open_input(&config.paths.reduced_store, "reduced store")?)?;

    let missing = collect_missing_asns(&changes, &reduced);
    let mut resolved = 0usize;
    if !missing.is_empty() && config.detect.fallback_unknown {
        let store = VectorStore::load(open_input(&config.paths.store, "store")?)?;
        let model = load_or_init_model(config, &store)?;
        let provider = make_provider(config)?;
        let opts = config.embed.options();
        for asn in &missing {
            resolve_unseen(*asn, provider.as_ref(), &opts, &model, &mut reduced)?;
            resolved += 1;
        }
    }

    let (scored, stats) = score_changes(&changes, &reduced)?;
    let (flagged, windows) = detect(scored, config.window_secs)?;
    write_scored(create_output(&config.paths.scored)?, &flagged)?;
    let n_flagged = flagged.iter().filter(|s| s.flagged).count();
    eprintln!(
        "detect: {} scored over {} windows, {} flagged, {} unseen ASes embedded on demand, \
         {} skipped (vantage mismatch), {} skipped (unresolved)",
        stats.scored,
        windows.len(),
        n_flagged,
        resolved,
        stats.skipped_vantage_mismatch,
        stats.skipped_unresolved,
    );
    Ok(())
}

/// Scored changes -> linked, classified, reported events.
pub fn aggregate(config: &RunConfig) -> Result<()> {
    let scored = bgplens::detector::read_scored(open_input(&config.paths.scored, "scored")?)?;
    let (graph, metadata) = load_graph_and_metadata(config)?;
    let org_map = org_map_of(&metadata);
    let roa = match &config.paths.roa {
        Some(path) => Some(RoaTable::load(open_input(path, "ROA")?)?),
        None => None,
    };
    let reserved = match &config.paths.reserved_asns {
        Some(path) => ReservedRanges::load(open_input(path, "reserved ASN")?)?,
        None => ReservedRanges::default(),
    };
    let mode: CandidateMode = config.aggregate.candidate_mode.parse()?;

    let (prefix_events, theta_vp) = build_prefix_events(&scored, config.window_secs, mode)?;
    let mut events = link_events(prefix_events);
    classify_events(&mut events, &graph, &org_map, roa.as_ref(), &reserved);

    let run = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        window_secs: config.window_secs,
        n_scored: scored.len(),
        n_flagged: scored.iter().filter(|s| s.flagged).count(),
        theta_vp,
        candidate_mode: config.aggregate.candidate_mode.clone(),
        roa_supplied: roa.is_some(),
    };
    let report = emit_report(&events, run);
    let mut out = create_output(&config.paths.report)?;
    out.write_all(report.to_json().as_bytes())?;
    out.write_all(b"\n")?;
    if let Some(path) = &config.paths.report_text {
        let mut out = create_output(path)?;
        out.write_all(report.to_text().as_bytes())?;
    }
    eprintln!(
        "aggregate: {} events from {} flagged changes (theta_vp {theta_vp})",
        report.events.len(),
        report.run.n_flagged
    );
    Ok(())
}

/// Applies relationship noise and writes the perturbed edge file.
pub fn perturb(config: &RunConfig, noise: NoiseKind, ratio: f64, out: &Path) -> Result<()> {
    let (edges, _) = load_relationships(open_input(&config.paths.relationships, "relationships")?)?;
    let (graph, _) = build_graph(edges);
    let perturbed = perturb_graph(&graph, noise, ratio, config.seed)?;
    write_relationships(create_output(out)?, perturbed.edges())?;
    eprintln!(
        "perturb: {:?} ratio {} seed {}: {} -> {} edges, written to {}",
        noise,
        ratio,
        config.seed,
        graph.edge_count(),
        perturbed.edge_count(),
        out.display()
    );
    Ok(())
}

/// Full pipeline; prints the report path on stdout.
pub fn run_all(config: &RunConfig) -> Result<()> {
    monitor(config).context("stage monitor failed")?;
    profile(config).context("stage profile failed")?;
    embed(config).context("stage embed failed")?;
    if config.train.enabled {
        train_cdr(config).context("stage train-cdr failed")?;
    }
    reduce_stage(config).context("stage reduce failed")?;
    detect_stage(config).context("stage detect failed")?;
    aggregate(config).context("stage aggregate failed")?;
    println!("{}", config.paths.report.display());
    Ok(())
}
