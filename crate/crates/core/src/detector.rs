//! Path-difference scoring and windowed anomaly flagging.
//!
//! A route change is scored by aligning the cleaned historical and updated
//! paths with a boundary-constrained dynamic-time-warping program over
//! reduced AS embeddings. Cell costs are Euclidean distances; an AS set is
//! resolved by the maximum distance over its members, so the most suspicious
//! member dominates the alignment. Scores are normalized by the paths' own
//! consecutive-hop distances and flagged against a per-window mean + 4 sigma
//! threshold taken from the preceding window.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::embedder::VectorStore;
use crate::error::CoreError;
use crate::types::{AsPath, Asn, PathElement, RouteChange};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// An AS path with consecutive duplicates removed (sets compared as sets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanPath {
    elements: Vec<PathElement>,
}

impl CleanPath {
    pub fn elements(&self) -> &[PathElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Removes consecutive duplicate elements, order preserved. Non-consecutive
/// repeats stay.
pub fn clean_path(path: &AsPath) -> CleanPath {
    let mut elements: Vec<PathElement> = Vec::with_capacity(path.len());
    for e in path.elements() {
        if elements.last() != Some(e) {
            elements.push(e.clone());
        }
    }
    CleanPath { elements }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn resolve(store: &VectorStore, asn: Asn) -> Result<&[f64], CoreError> {
    store.get(asn).ok_or(CoreError::UnresolvedAsn(asn))
}

/// Distance between two path elements over reduced embeddings. Singletons
/// use plain Euclidean distance; an AS set takes the maximum over its
/// members (over both memberships for set vs. set).
pub fn node_distance(
    a: &PathElement,
    b: &PathElement,
    store: &VectorStore,
) -> Result<f64, CoreError> {
    if a == b {
        return Ok(0.0);
    }
    let mut max = 0.0f64;
    for x in a.asns() {
        let vx = resolve(store, x)?;
        for y in b.asns() {
            let vy = resolve(store, y)?;
            max = max.max(euclid(vx, vy));
        }
    }
    Ok(max)
}

/// Boundary-constrained DTW over cleaned paths: first elements align with
/// first, last with last, steps are (i-1,j), (i,j-1), (i-1,j-1). The cleaned
/// paths must start at the same element (the vantage); differing origins are
/// allowed and contribute cost.
pub fn ar_dtw(s: &CleanPath, t: &CleanPath, store: &VectorStore) -> Result<f64, CoreError> {
    let n = s.len();
    let m = t.len();
    if s.elements[0] != t.elements[0] {
        return Err(CoreError::VantageMismatch);
    }

    let mut prev = vec![0.0f64; m];
    let mut current = vec![0.0f64; m];
    for i in 0..n {
        for j in 0..m {
            let cost = node_distance(&s.elements[i], &t.elements[j], store)?;
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => current[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(current[j - 1]).min(prev[j - 1]),
            };
            current[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut current);
    }
    Ok(prev[m - 1])
}

const NORM_EPSILON: f64 = 1e-9;

fn path_self_cost(p: &CleanPath, store: &VectorStore) -> Result<f64, CoreError> {
    let mut sum = 0.0;
    for pair in p.elements.windows(2) {
        sum += node_distance(&pair[0], &pair[1], store)?;
    }
    Ok(sum)
}

/// Normalizes a raw alignment score by the summed consecutive-hop distances
/// along both cleaned paths. A zero raw score stays zero even when the
/// denominator degenerates (single-hop paths).
pub fn normalize_score(
    raw: f64,
    s: &CleanPath,
    t: &CleanPath,
    store: &VectorStore,
) -> Result<f64, CoreError> {
    if raw == 0.0 {
        return Ok(0.0);
    }
    let denominator = path_self_cost(s, store)? + path_self_cost(t, store)?;
    Ok(raw / denominator.max(NORM_EPSILON))
}

/// A change with its raw and normalized path-difference scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub change: RouteChange,
    pub raw: f64,
    pub norm: f64,
}

/// Scores one route change; cleans both paths first.
pub fn score_change(change: &RouteChange, store: &VectorStore) -> Result<Scored, CoreError> {
    let s = clean_path(&change.historical_path);
    let t = clean_path(&change.updated_path);
    let raw = ar_dtw(&s, &t, store)?;
    let norm = normalize_score(raw, &s, &t, store)?;
    Ok(Scored {
        change: change.clone(),
        raw,
        norm,
    })
}

/// Per-run scoring counters. Changes that cannot be scored are skipped, not
/// fatal: a vantage mismatch means the two cleaned paths start at different
/// ASes, and an unresolved ASN means no reduced embedding was available with
/// the fallback disabled.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ScoreStats {
    pub scored: usize,
    pub skipped_vantage_mismatch: usize,
    pub skipped_unresolved: usize,
    pub unresolved_asns: BTreeSet<Asn>,
}

fn fold_outcome(
    outcome: Result<Scored, CoreError>,
    out: &mut Vec<Scored>,
    stats: &mut ScoreStats,
) -> Result<(), CoreError> {
    match outcome {
        Ok(scored) => {
            stats.scored += 1;
            out.push(scored);
            Ok(())
        }
        Err(CoreError::VantageMismatch) => {
            stats.skipped_vantage_mismatch += 1;
            Ok(())
        }
        Err(CoreError::UnresolvedAsn(asn)) => {
            stats.skipped_unresolved += 1;
            stats.unresolved_asns.insert(asn);
            Ok(())
        }
        Err(other) => Err(other),
    }
}

/// Sequential scoring of a change batch, input order preserved.
pub fn score_changes_seq(
    changes: &[RouteChange],
    store: &VectorStore,
) -> Result<(Vec<Scored>, ScoreStats), CoreError> {
    let mut out = Vec::with_capacity(changes.len());
    let mut stats = ScoreStats::default();
    for change in changes {
        fold_outcome(score_change(change, store), &mut out, &mut stats)?;
    }
    Ok((out, stats))
}

/// Data-parallel scoring; scoring is pure, so the outcome list is collected
/// in input order and matches the sequential run exactly.
#[cfg(feature = "parallel")]
pub fn score_changes_par(
    changes: &[RouteChange],
    store: &VectorStore,
) -> Result<(Vec<Scored>, ScoreStats), CoreError> {
    let outcomes: Vec<Result<Scored, CoreError>> = changes
        .par_iter()
        .map(|change| score_change(change, store))
        .collect();
    let mut out = Vec::with_capacity(changes.len());
    let mut stats = ScoreStats::default();
    for outcome in outcomes {
        fold_outcome(outcome, &mut out, &mut stats)?;
    }
    Ok((out, stats))
}

pub fn score_changes(
    changes: &[RouteChange],
    store: &VectorStore,
) -> Result<(Vec<Scored>, ScoreStats), CoreError> {
    #[cfg(feature = "parallel")]
    {
        score_changes_par(changes, store)
    }
    #[cfg(not(feature = "parallel"))]
    {
        score_changes_seq(changes, store)
    }
}

/// ASNs referenced by the change paths but absent from the store.
pub fn collect_missing_asns(changes: &[RouteChange], store: &VectorStore) -> BTreeSet<Asn> {
    let mut missing = BTreeSet::new();
    for change in changes {
        for asn in change
            .historical_path
            .asns()
            .chain(change.updated_path.asns())
        {
            if !store.contains(asn) {
                missing.insert(asn);
            }
        }
    }
    missing
}

/// Tumbling-window statistics used for thresholding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStats {
    pub window_start: i64,
    pub width: i64,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub count: usize,
}

/// A scored change with its flag and the threshold that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChange {
    #[serde(flatten)]
    pub change: RouteChange,
    #[serde(rename = "D")]
    pub raw: f64,
    #[serde(rename = "Dstar")]
    pub norm: f64,
    pub flagged: bool,
    pub theta: f64,
}

fn stats_of(window_start: i64, width: i64, norms: &[f64]) -> WindowStats {
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    WindowStats {
        window_start,
        width,
        mean,
        stddev: var.sqrt(),
        count: norms.len(),
    }
}

/// Splits the time axis into tumbling windows of `width` seconds aligned to
/// epoch multiples and flags every change whose normalized score exceeds
/// mean + 4 sigma of the *previous* window. The first window, and any window
/// whose predecessor held no samples, bootstraps from its own statistics.
///
/// Input must be ordered by timestamp; this is a sequential fold.
pub fn detect(
    scored: Vec<Scored>,
    width: i64,
) -> Result<(Vec<ScoredChange>, Vec<WindowStats>), CoreError> {
    if width <= 0 {
        return Err(CoreError::InvalidArgument(
            "window width must be positive".into(),
        ));
    }
    if scored.windows(2).any(|w| w[0].change.ts > w[1].change.ts) {
        return Err(CoreError::InvalidArgument(
            "scored stream must be ordered by timestamp".into(),
        ));
    }

    let mut out = Vec::with_capacity(scored.len());
    let mut stats_out = Vec::new();
    let mut prev: Option<(i64, WindowStats)> = None;

    let mut i = 0;
    while i < scored.len() {
        let window_index = scored[i].change.ts.div_euclid(width);
        let mut j = i;
        while j < scored.len() && scored[j].change.ts.div_euclid(width) == window_index {
            j += 1;
        }
        let norms: Vec<f64> = scored[i..j].iter().map(|s| s.norm).collect();
        let own = stats_of(window_index * width, width, &norms);
        let theta = match &prev {
            Some((prev_index, prev_stats))
                if *prev_index + 1 == window_index && prev_stats.count > 0 =>
            {
                prev_stats.mean + 4.0 * prev_stats.stddev
            }
            _ => own.mean + 4.0 * own.stddev,
        };
        for s in &scored[i..j] {
            out.push(ScoredChange {
                change: s.change.clone(),
                raw: s.raw,
                norm: s.norm,
                flagged: s.norm > theta,
                theta,
            });
        }
        prev = Some((window_index, own.clone()));
        stats_out.push(own);
        i = j;
    }
    Ok((out, stats_out))
}

/// Writes scored changes as JSON lines (route-change fields plus `D`,
/// `Dstar`, `flagged`, `theta`).
pub fn write_scored(mut w: impl Write, scored: &[ScoredChange]) -> Result<(), CoreError> {
    for s in scored {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scored(reader: impl BufRead) -> Result<Vec<ScoredChange>, CoreError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
