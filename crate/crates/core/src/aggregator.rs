//! Event aggregation: knee-point vantage filtering on the prefix axis,
//! responsibility attribution on the AS axis, event linking, pattern
//! classification and report emission.
//!
//! Flagged changes are grouped per prefix and window; a knee point over the
//! descending vantage-count distribution filters transient noise. Surviving
//! windows merge into prefix events, and prefix events that overlap in time
//! and share candidate ASes are linked into anomaly events attributed to the
//! intersection of their candidates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::Serialize;

use crate::as_profile::{AsGraph, Role};
use crate::cdr::OrgMap;
use crate::detector::{clean_path, ScoredChange};
use crate::error::CoreError;
use crate::types::{Asn, PathElement, Prefix};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// RPKI route-origin validation state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoaState {
    Valid,
    Invalid,
    NotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoaEntry {
    pub prefix: Prefix,
    pub max_length: u8,
    pub asn: Asn,
}

/// Route-origin authorization table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoaTable {
    entries: Vec<RoaEntry>,
}

impl RoaTable {
    pub fn new(entries: Vec<RoaEntry>) -> Self {
        Self { entries }
    }

    /// Parses CSV lines `prefix,max_length,asn`; `#` begins a comment.
    pub fn load(reader: impl BufRead) -> Result<Self, CoreError> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 3 {
                return Err(CoreError::Parse {
                    line: lineno + 1,
                    msg: format!("expected prefix,max_length,asn: {trimmed:?}"),
                });
            }
            let prefix: Prefix = fields[0].parse()?;
            let max_length: u8 = fields[1].parse().map_err(|_| CoreError::Parse {
                line: lineno + 1,
                msg: format!("bad max_length {:?}", fields[1]),
            })?;
            let asn: Asn = fields[2].parse().map_err(|_| CoreError::Parse {
                line: lineno + 1,
                msg: format!("bad asn {:?}", fields[2]),
            })?;
            entries.push(RoaEntry {
                prefix,
                max_length,
                asn,
            });
        }
        Ok(Self { entries })
    }

    /// RFC 6811 semantics: Valid when a covering authorization matches the
    /// origin and the announced length stays within max_length; Invalid when
    /// covering authorizations exist but none matches; NotFound otherwise.
    pub fn validate(&self, origin: Asn, prefix: &Prefix) -> RoaState {
        let mut covered = false;
        for e in &self.entries {
            if e.prefix.covers(prefix) {
                covered = true;
                if e.asn == origin && prefix.len() <= e.max_length {
                    return RoaState::Valid;
                }
            }
        }
        if covered {
            RoaState::Invalid
        } else {
            RoaState::NotFound
        }
    }
}

/// Inclusive reserved-ASN ranges, IANA defaults shipped with the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservedRanges {
    ranges: Vec<(Asn, Asn)>,
}

impl Default for ReservedRanges {
    fn default() -> Self {
        Self::load(std::io::Cursor::new(include_str!(
            "../data/reserved_asns.csv"
        )))
        .expect("bundled reserved-ASN table parses")
    }
}

impl ReservedRanges {
    /// Parses CSV lines `start,end` (inclusive); `#` begins a comment.
    pub fn load(reader: impl BufRead) -> Result<Self, CoreError> {
        let mut ranges = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (start, end) = trimmed.split_once(',').ok_or_else(|| CoreError::Parse {
                line: lineno + 1,
                msg: format!("expected start,end: {trimmed:?}"),
            })?;
            let start: Asn = start.trim().parse().map_err(|_| CoreError::Parse {
                line: lineno + 1,
                msg: format!("bad start {start:?}"),
            })?;
            let end: Asn = end.trim().parse().map_err(|_| CoreError::Parse {
                line: lineno + 1,
                msg: format!("bad end {end:?}"),
            })?;
            ranges.push((start, end));
        }
        Ok(Self { ranges })
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.ranges.iter().any(|(s, e)| (*s..=*e).contains(&asn))
    }
}

/// Knee of a descending-sorted curve: the value at the index maximizing the
/// discrete second difference, ties to the smallest index. Curves shorter
/// than three points have no knee; the threshold is zero and everything is
/// retained.
pub fn knee_point(curve: &[f64]) -> f64 {
    if curve.len() < 3 {
        return 0.0;
    }
    let mut best_index = 1;
    let mut best = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let second = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if second > best {
            best = second;
            best_index = i;
        }
    }
    curve[best_index]
}

/// How the per-change candidate set is drawn from the two paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateMode {
    /// ASes in historical or updated path, vantage excluded.
    #[default]
    Union,
    /// ASes in both paths, vantage excluded.
    Intersection,
}

impl std::str::FromStr for CandidateMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(CandidateMode::Union),
            "intersection" => Ok(CandidateMode::Intersection),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown candidate mode {other:?}"
            ))),
        }
    }
}

fn change_candidates(change: &ScoredChange, mode: CandidateMode) -> BTreeSet<Asn> {
    let hist: BTreeSet<Asn> = change.change.historical_path.asns().collect();
    let upd: BTreeSet<Asn> = change.change.updated_path.asns().collect();
    let mut set: BTreeSet<Asn> = match mode {
        CandidateMode::Union => hist.union(&upd).copied().collect(),
        CandidateMode::Intersection => hist.intersection(&upd).copied().collect(),
    };
    set.remove(&change.change.vantage);
    set
}

/// Flagged changes for one prefix over one run of retained windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixEvent {
    pub prefix: Prefix,
    pub start: i64,
    pub end: i64,
    pub changes: Vec<ScoredChange>,
    /// Distinct reporting vantages per window for this prefix.
    pub vp_count_curve: Vec<(i64, usize)>,
    /// Intersection of the member changes' candidate ASes.
    pub candidate_ases: BTreeSet<Asn>,
    /// True when the intersection came up empty.
    pub unattributed: bool,
}

/// Groups flagged changes into prefix events. Returns the events plus the
/// knee threshold applied to the cross-prefix vantage-count distribution.
pub fn build_prefix_events(
    scored: &[ScoredChange],
    width: i64,
    mode: CandidateMode,
) -> Result<(Vec<PrefixEvent>, f64), CoreError> {
    if width <= 0 {
        return Err(CoreError::InvalidArgument(
            "window width must be positive".into(),
        ));
    }
    let flagged: Vec<&ScoredChange> = scored.iter().filter(|s| s.flagged).collect();

    let mut vantages: BTreeMap<(Prefix, i64), BTreeSet<Asn>> = BTreeMap::new();
    let mut by_prefix: BTreeMap<Prefix, BTreeMap<i64, Vec<&ScoredChange>>> = BTreeMap::new();
    for s in &flagged {
        let window = s.change.ts.div_euclid(width);
        vantages
            .entry((s.change.announced_prefix, window))
            .or_default()
            .insert(s.change.vantage);
        by_prefix
            .entry(s.change.announced_prefix)
            .or_default()
            .entry(window)
            .or_default()
            .push(s);
    }

    let mut distribution: Vec<f64> = vantages.values().map(|v| v.len() as f64).collect();
    distribution.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let theta_vp = knee_point(&distribution);

    let mut events = Vec::new();
    for (prefix, windows) in &by_prefix {
        let curve: Vec<(i64, usize)> = windows
            .keys()
            .map(|w| (*w * width, vantages[&(*prefix, *w)].len()))
            .collect();

        // Merge consecutive retained windows into one event.
        let mut run: Vec<&ScoredChange> = Vec::new();
        let mut run_last_window: Option<i64> = None;
        let flush = |run: &mut Vec<&ScoredChange>, events: &mut Vec<PrefixEvent>| {
            if run.is_empty() {
                return;
            }
            let changes: Vec<ScoredChange> = run.iter().map(|s| (*s).clone()).collect();
            let start = changes.iter().map(|c| c.change.ts).min().unwrap();
            let end = changes.iter().map(|c| c.change.ts).max().unwrap();
            let mut candidates: Option<BTreeSet<Asn>> = None;
            for c in &changes {
                let set = change_candidates(c, mode);
                candidates = Some(match candidates {
                    None => set,
                    Some(prev) => prev.intersection(&set).copied().collect(),
                });
            }
            let candidate_ases = candidates.unwrap_or_default();
            events.push(PrefixEvent {
                prefix: *prefix,
                start,
                end,
                unattributed: candidate_ases.is_empty(),
                candidate_ases,
                vp_count_curve: curve.clone(),
                changes,
            });
            run.clear();
        };

        for (window, members) in windows {
            let count = vantages[&(*prefix, *window)].len() as f64;
            if count > theta_vp {
                if run_last_window.is_some_and(|last| last + 1 != *window) {
                    flush(&mut run, &mut events);
                }
                run.extend(members.iter().copied());
                run_last_window = Some(*window);
            } else {
                flush(&mut run, &mut events);
                run_last_window = None;
            }
        }
        flush(&mut run, &mut events);
    }
    Ok((events, theta_vp))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Anomaly pattern labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    OriginChange,
    RouteLeak,
    PathManipulation,
    RoaMisconfig,
    WeakPathTampering,
    Unclassified,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::OriginChange => "OriginChange",
            Pattern::RouteLeak => "RouteLeak",
            Pattern::PathManipulation => "PathManipulation",
            Pattern::RoaMisconfig => "RoaMisconfig",
            Pattern::WeakPathTampering => "WeakPathTampering",
            Pattern::Unclassified => "Unclassified",
        })
    }
}

/// A cluster of linked prefix events attributed to a common AS set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEvent {
    pub event_id: String,
    pub prefixes: BTreeSet<Prefix>,
    pub responsible_ases: BTreeSet<Asn>,
    /// Member candidate intersection was empty; the union is reported and
    /// attribution is marked ambiguous.
    pub ambiguous_attribution: bool,
    pub start: i64,
    pub end: i64,
    pub patterns: BTreeSet<Pattern>,
    /// OriginChange / RoaMisconfig checks were skipped for lack of ROA data.
    pub needs_rpki: bool,
    pub members: Vec<PrefixEvent>,
}

impl AnomalyEvent {
    pub fn n_changes(&self) -> usize {
        self.members.iter().map(|m| m.changes.len()).sum()
    }

    pub fn max_norm_score(&self) -> f64 {
        self.members
            .iter()
            .flat_map(|m| m.changes.iter().map(|c| c.norm))
            .fold(0.0, f64::max)
    }
}

fn overlap(a: &PrefixEvent, b: &PrefixEvent) -> bool {
    a.start <= b.end && b.start <= a.end
}

/// Links prefix events that overlap temporally and share candidate ASes;
/// connected components become anomaly events. Pattern labels are left
/// empty for [`classify_event`].
pub fn link_events(mut events: Vec<PrefixEvent>) -> Vec<AnomalyEvent> {
    events.sort_by(|a, b| {
        (a.start, a.end, a.prefix)
            .partial_cmp(&(b.start, b.end, b.prefix))
            .unwrap()
    });
    let mut dsu = UnionFind::new(events.len());
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            if events[j].start > events[i].end {
                break;
            }
            if overlap(&events[i], &events[j])
                && !events[i]
                    .candidate_ases
                    .is_disjoint(&events[j].candidate_ases)
            {
                dsu.union(i, j);
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<PrefixEvent>> = BTreeMap::new();
    for (i, event) in events.into_iter().enumerate() {
        components.entry(dsu.find(i)).or_default().push(event);
    }

    let mut clusters: Vec<AnomalyEvent> = components
        .into_values()
        .map(|members| {
            let start = members.iter().map(|m| m.start).min().unwrap();
            let end = members.iter().map(|m| m.end).max().unwrap();
            let prefixes: BTreeSet<Prefix> = members.iter().map(|m| m.prefix).collect();
            let mut intersection: Option<BTreeSet<Asn>> = None;
            for m in &members {
                intersection = Some(match intersection {
                    None => m.candidate_ases.clone(),
                    Some(prev) => prev.intersection(&m.candidate_ases).copied().collect(),
                });
            }
            let intersection = intersection.unwrap_or_default();
            let (responsible_ases, ambiguous_attribution) = if intersection.is_empty() {
                let union: BTreeSet<Asn> = members
                    .iter()
                    .flat_map(|m| m.candidate_ases.iter().copied())
                    .collect();
                (union, true)
            } else {
                (intersection, false)
            };
            AnomalyEvent {
                event_id: String::new(),
                prefixes,
                responsible_ases,
                ambiguous_attribution,
                start,
                end,
                patterns: BTreeSet::new(),
                needs_rpki: false,
                members,
            }
        })
        .collect();

    clusters.sort_by(|a, b| {
        (a.start, a.end, a.prefixes.iter().next())
            .partial_cmp(&(b.start, b.end, b.prefixes.iter().next()))
            .unwrap()
    });
    for (i, cluster) in clusters.iter_mut().enumerate() {
        cluster.event_id = format!("evt-{:04}", i + 1);
    }
    clusters
}

const HOP_UP: u8 = 1;
const HOP_PEER: u8 = 2;
const HOP_DOWN: u8 = 4;
const HOP_ANY: u8 = HOP_UP | HOP_PEER | HOP_DOWN;

/// Possible hop labels between two path elements under the graph. A hop with
/// no known relationship (or a shared member) is unconstrained.
fn hop_labels(x: &PathElement, y: &PathElement, graph: &AsGraph) -> u8 {
    let mut mask = 0;
    for a in x.asns() {
        for b in y.asns() {
            if a == b {
                return HOP_ANY;
            }
            match graph.role_of(a, b) {
                // b is a's provider: the path climbs.
                Some(Role::Provider) => mask |= HOP_UP,
                Some(Role::Peer) => mask |= HOP_PEER,
                Some(Role::Customer) => mask |= HOP_DOWN,
                None => {}
            }
        }
    }
    if mask == 0 {
        HOP_ANY
    } else {
        mask
    }
}

/// Valley-free check: some assignment of hop labels must climb customer to
/// provider links, cross at most one peer link, then only descend. Returns
/// false only for definite violations.
pub fn valley_free_ok(elements: &[PathElement], graph: &AsGraph) -> bool {
    // States: ascending, or descending (past the peak / peer edge).
    let mut ascent = true;
    let mut descent = false;
    for pair in elements.windows(2) {
        let labels = hop_labels(&pair[0], &pair[1], graph);
        let mut next_ascent = false;
        let mut next_descent = false;
        if ascent {
            if labels & HOP_UP != 0 {
                next_ascent = true;
            }
            if labels & (HOP_PEER | HOP_DOWN) != 0 {
                next_descent = true;
            }
        }
        if descent && labels & HOP_DOWN != 0 {
            next_descent = true;
        }
        if !next_ascent && !next_descent {
            return false;
        }
        ascent = next_ascent;
        descent = next_descent;
    }
    true
}

fn reserved_in_path(elements: &[PathElement], reserved: &ReservedRanges) -> bool {
    elements
        .iter()
        .flat_map(PathElement::asns)
        .any(|asn| reserved.contains(asn))
}

fn unrelated_adjacency(elements: &[PathElement], graph: &AsGraph) -> bool {
    elements.windows(2).any(|pair| {
        !pair[0].asns().any(|a| {
            pair[1]
                .asns()
                .any(|b| a == b || graph.role_of(a, b).is_some())
        })
    })
}

/// Assigns pattern labels to one linked event. Checks that need ROA data are
/// skipped when no table is supplied and the event is flagged `needs_rpki`.
pub fn classify_event(
    event: &AnomalyEvent,
    graph: &AsGraph,
    org_map: &OrgMap,
    roa: Option<&RoaTable>,
    reserved: &ReservedRanges,
) -> (BTreeSet<Pattern>, bool) {
    let mut patterns = BTreeSet::new();
    let mut manipulation = false;
    let mut roa_unresolvable = roa.is_none();

    for member in &event.members {
        for change in &member.changes {
            let hist = clean_path(&change.change.historical_path);
            let upd = clean_path(&change.change.updated_path);

            for path in [&hist, &upd] {
                if !valley_free_ok(path.elements(), graph) {
                    patterns.insert(Pattern::RouteLeak);
                }
                if reserved_in_path(path.elements(), reserved)
                    || unrelated_adjacency(path.elements(), graph)
                {
                    manipulation = true;
                }
            }

            let hist_origin = hist.elements().last().unwrap();
            let upd_origin = upd.elements().last().unwrap();

            if let Some(roa) = roa {
                for oh in hist_origin.asns() {
                    let state_h = roa.validate(oh, &change.change.matched_prefix);
                    for ou in upd_origin.asns() {
                        let state_u = roa.validate(ou, &change.change.announced_prefix);
                        if state_h == RoaState::NotFound || state_u == RoaState::NotFound {
                            roa_unresolvable = true;
                        }
                        if state_h == state_u {
                            continue;
                        }
                        let org_h = org_map.get(&oh);
                        let org_u = org_map.get(&ou);
                        match (org_h, org_u) {
                            (Some(a), Some(b)) if a != b => {
                                patterns.insert(Pattern::OriginChange);
                            }
                            (Some(a), Some(b)) if a == b => {
                                patterns.insert(Pattern::RoaMisconfig);
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }

    if manipulation {
        patterns.insert(Pattern::PathManipulation);
        if roa_unresolvable {
            patterns.insert(Pattern::WeakPathTampering);
        }
    }
    if patterns.is_empty() {
        patterns.insert(Pattern::Unclassified);
    }
    (patterns, roa.is_none())
}

/// Classifies every event, in parallel when built with rayon.
pub fn classify_events(
    events: &mut [AnomalyEvent],
    graph: &AsGraph,
    org_map: &OrgMap,
    roa: Option<&RoaTable>,
    reserved: &ReservedRanges,
) {
    let assign = |event: &mut AnomalyEvent| {
        let (patterns, needs_rpki) = classify_event(event, graph, org_map, roa, reserved);
        event.patterns = patterns;
        event.needs_rpki = needs_rpki;
    };
    #[cfg(feature = "parallel")]
    {
        events.par_iter_mut().for_each(assign);
    }
    #[cfg(not(feature = "parallel"))]
    {
        events.iter_mut().for_each(assign);
    }
}

/// Run metadata embedded in the report. Contains nothing wall-clock so equal
/// inputs produce byte-identical reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub window_secs: i64,
    pub n_scored: usize,
    pub n_flagged: usize,
    pub theta_vp: f64,
    pub candidate_mode: String,
    pub roa_supplied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEvent {
    pub event_id: String,
    pub prefixes: Vec<String>,
    pub responsible_ases: Vec<Asn>,
    pub start: i64,
    pub end: i64,
    pub patterns: Vec<String>,
    pub n_changes: usize,
    #[serde(rename = "max_Dstar")]
    pub max_dstar: f64,
    pub ambiguous_attribution: bool,
    pub needs_rpki: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub run: RunMeta,
    pub events: Vec<ReportEvent>,
}

/// Builds the report document with deterministic ordering (interval start,
/// then event id).
pub fn emit_report(events: &[AnomalyEvent], run: RunMeta) -> Report {
    let mut report_events: Vec<ReportEvent> = events
        .iter()
        .map(|e| ReportEvent {
            event_id: e.event_id.clone(),
            prefixes: e.prefixes.iter().map(Prefix::to_string).collect(),
            responsible_ases: e.responsible_ases.iter().copied().collect(),
            start: e.start,
            end: e.end,
            patterns: e.patterns.iter().map(Pattern::to_string).collect(),
            n_changes: e.n_changes(),
            max_dstar: e.max_norm_score(),
            ambiguous_attribution: e.ambiguous_attribution,
            needs_rpki: e.needs_rpki,
        })
        .collect();
    report_events.sort_by(|a, b| (a.start, &a.event_id).cmp(&(b.start, &b.event_id)));
    Report {
        run,
        events: report_events,
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "anomaly report ({} events, window {}s, theta_vp {})\n",
            self.events.len(),
            self.run.window_secs,
            self.run.theta_vp
        ));
        for e in &self.events {
            out.push_str(&format!(
                "{} [{} .. {}] prefixes: {} responsible: {} patterns: {} changes: {} maxD*: {:.4}{}{}\n",
                e.event_id,
                e.start,
                e.end,
                e.prefixes.join(" "),
                e.responsible_ases
                    .iter()
                    .map(|a| format!("AS{a}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                e.patterns.join("+"),
                e.n_changes,
                e.max_dstar,
                if e.ambiguous_attribution { " [ambiguous]" } else { "" },
                if e.needs_rpki { " [needs-RPKI]" } else { "" },
            ));
        }
        out
    }
}
