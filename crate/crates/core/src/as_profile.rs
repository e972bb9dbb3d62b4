//! AS profiles: the business-relationship graph, per-AS description
//! rendering, and relationship-noise perturbation.
//!
//! Each AS is described by a fixed, versioned template made of a Stable
//! Attributes block (identity, relationship counts, cone and announcement
//! statistics) and a Business Neighbors block enumerating every neighbor
//! with its relationship label and own connectivity counts. Long neighbor
//! lists are split into segments that each repeat the Stable Attributes, so
//! embeddings can be computed per segment and averaged.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::DetRng;
use crate::types::Asn;

/// Relationship type of an edge record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    P2P,
    /// `a` is the provider of `b`.
    P2C,
}

/// One relationship record between two ASes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelEdge {
    pub a: Asn,
    pub b: Asn,
    pub rel: Rel,
}

/// What a neighbor is to the AS whose adjacency list it appears in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Provider,
    Peer,
    Customer,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Provider => "provider",
            Role::Peer => "peer",
            Role::Customer => "customer",
        }
    }
}

/// Per-AS provider/peer/customer counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoleCounts {
    pub providers: usize,
    pub peers: usize,
    pub customers: usize,
}

impl RoleCounts {
    pub fn total(&self) -> usize {
        self.providers + self.peers + self.customers
    }
}

/// The AS business-relationship graph. P2P edges are stored symmetrically;
/// a P2C edge appears as Customer on the provider's list and Provider on the
/// customer's list. At most one relationship survives per AS pair.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct AsGraph {
    edges: Vec<RelEdge>,
    adj: BTreeMap<Asn, BTreeMap<Asn, Role>>,
}

/// Tolerated problems encountered while building a graph.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct GraphWarnings {
    pub self_loops: usize,
    /// Same pair seen again with a different relationship; first kept.
    pub conflicts: usize,
    /// Same pair seen again with the identical relationship.
    pub duplicates: usize,
}

impl AsGraph {
    pub fn nodes(&self) -> impl Iterator<Item = Asn> + '_ {
        self.adj.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[RelEdge] {
        &self.edges
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.adj.contains_key(&asn)
    }

    /// Neighbors of `asn` with their role from `asn`'s perspective.
    pub fn neighbors(&self, asn: Asn) -> impl Iterator<Item = (Asn, Role)> + '_ {
        self.adj
            .get(&asn)
            .into_iter()
            .flat_map(|m| m.iter().map(|(n, r)| (*n, *r)))
    }

    /// Role of `b` as seen from `a`, if the two are related.
    pub fn role_of(&self, a: Asn, b: Asn) -> Option<Role> {
        self.adj.get(&a)?.get(&b).copied()
    }

    pub fn counts(&self, asn: Asn) -> RoleCounts {
        let mut counts = RoleCounts::default();
        for (_, role) in self.neighbors(asn) {
            match role {
                Role::Provider => counts.providers += 1,
                Role::Peer => counts.peers += 1,
                Role::Customer => counts.customers += 1,
            }
        }
        counts
    }

    pub fn degree(&self, asn: Asn) -> usize {
        self.adj.get(&asn).map_or(0, |m| m.len())
    }
}

fn pair_key(a: Asn, b: Asn) -> (Asn, Asn) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Builds the adjacency from edge records. Self-loops are skipped; on a
/// duplicate pair the first relationship wins.
pub fn build_graph(edges: impl IntoIterator<Item = RelEdge>) -> (AsGraph, GraphWarnings) {
    let mut graph = AsGraph::default();
    let mut warnings = GraphWarnings::default();
    let mut seen: BTreeMap<(Asn, Asn), RelEdge> = BTreeMap::new();
    for edge in edges {
        if edge.a == edge.b {
            warnings.self_loops += 1;
            continue;
        }
        match seen.get(&pair_key(edge.a, edge.b)) {
            Some(first) if *first == edge => {
                warnings.duplicates += 1;
                continue;
            }
            Some(_) => {
                warnings.conflicts += 1;
                continue;
            }
            None => {}
        }
        seen.insert(pair_key(edge.a, edge.b), edge);
        graph.edges.push(edge);
        match edge.rel {
            Rel::P2P => {
                graph
                    .adj
                    .entry(edge.a)
                    .or_default()
                    .insert(edge.b, Role::Peer);
                graph
                    .adj
                    .entry(edge.b)
                    .or_default()
                    .insert(edge.a, Role::Peer);
            }
            Rel::P2C => {
                graph
                    .adj
                    .entry(edge.a)
                    .or_default()
                    .insert(edge.b, Role::Customer);
                graph
                    .adj
                    .entry(edge.b)
                    .or_default()
                    .insert(edge.a, Role::Provider);
            }
        }
    }
    (graph, warnings)
}

/// Parses a CAIDA serial-1 style relationship file: `a|b|-1` means `a` is a
/// provider of `b`, `a|b|0` means peers; `#` begins comments.
pub fn load_relationships(
    reader: impl BufRead,
) -> Result<(Vec<RelEdge>, Vec<crate::route_monitor::LineError>), CoreError> {
    let mut edges = Vec::new();
    let mut errors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut push_err = |msg: String| {
            errors.push(crate::route_monitor::LineError { line: lineno, msg });
        };
        let fields: Vec<&str> = trimmed.split('|').collect();
        if fields.len() < 3 {
            push_err(format!("expected a|b|rel, got {trimmed:?}"));
            continue;
        }
        let (Ok(a), Ok(b)) = (fields[0].parse::<u32>(), fields[1].parse::<u32>()) else {
            push_err(format!("bad ASN in {trimmed:?}"));
            continue;
        };
        match fields[2] {
            "-1" => edges.push(RelEdge {
                a,
                b,
                rel: Rel::P2C,
            }),
            "0" => edges.push(RelEdge {
                a,
                b,
                rel: Rel::P2P,
            }),
            other => push_err(format!("unknown relationship {other:?}")),
        }
    }
    Ok((edges, errors))
}

/// Writes edges back in the serial-1 format, preserving order.
pub fn write_relationships(mut w: impl Write, edges: &[RelEdge]) -> Result<(), CoreError> {
    for e in edges {
        let rel = match e.rel {
            Rel::P2C => -1,
            Rel::P2P => 0,
        };
        writeln!(w, "{}|{}|{}", e.a, e.b, rel)?;
    }
    Ok(())
}

/// Per-AS metadata; absent fields render as the literal string "unknown".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AsMetadata {
    pub asn: Asn,
    #[serde(rename = "orgName", default, skip_serializing_if = "Option::is_none")]
    pub org_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(
        rename = "numberAsns",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub number_asns: Option<u64>,
    #[serde(
        rename = "numberPrefixes",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub number_prefixes: Option<u64>,
    #[serde(
        rename = "numberAddresses",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub number_addresses: Option<u64>,
    #[serde(
        rename = "announcingPrefixes",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub announcing_prefixes: Option<u64>,
    #[serde(
        rename = "announcingAddresses",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub announcing_addresses: Option<u64>,
}

/// Loads one-JSON-object-per-line metadata keyed by ASN.
pub fn load_metadata(
    reader: impl BufRead,
) -> Result<
    (
        BTreeMap<Asn, AsMetadata>,
        Vec<crate::route_monitor::LineError>,
    ),
    CoreError,
> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AsMetadata>(&line) {
            Ok(meta) => {
                map.insert(meta.asn, meta);
            }
            Err(e) => errors.push(crate::route_monitor::LineError {
                line: lineno + 1,
                msg: e.to_string(),
            }),
        }
    }
    Ok((map, errors))
}

/// Version tag for the description wording below. Embeddings are only
/// comparable within one template version.
pub const TEMPLATE_VERSION: &str = "v1";

const TEMPLATE: &str = include_str!("../templates/as_description.txt");

/// One rendered description segment for an AS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSegment {
    pub asn: Asn,
    /// 1-based segment number.
    pub index: usize,
    pub total: usize,
    pub text: String,
    #[serde(skip, default = "default_template_version")]
    pub template_version: String,
}

fn default_template_version() -> String {
    TEMPLATE_VERSION.to_string()
}

fn fmt_opt_str(v: &Option<String>) -> String {
    v.clone().unwrap_or_else(|| "unknown".to_string())
}

fn fmt_opt_num(v: Option<u64>) -> String {
    v.map_or_else(|| "unknown".to_string(), |n| n.to_string())
}

fn stable_block(asn: Asn, counts: RoleCounts, meta: Option<&AsMetadata>) -> String {
    let empty = AsMetadata::default();
    let meta = meta.unwrap_or(&empty);
    TEMPLATE
        .replace("<asn>", &asn.to_string())
        .replace("<orgName>", &fmt_opt_str(&meta.org_name))
        .replace("<country>", &fmt_opt_str(&meta.country))
        .replace("<provider>", &counts.providers.to_string())
        .replace("<peer>", &counts.peers.to_string())
        .replace("<customer>", &counts.customers.to_string())
        .replace("<total>", &counts.total().to_string())
        .replace("<numberAsns>", &fmt_opt_num(meta.number_asns))
        .replace("<numberPrefixes>", &fmt_opt_num(meta.number_prefixes))
        .replace("<numberAddresses>", &fmt_opt_num(meta.number_addresses))
        .replace(
            "<announcingPrefixes>",
            &fmt_opt_num(meta.announcing_prefixes),
        )
        .replace(
            "<announcingAddresses>",
            &fmt_opt_num(meta.announcing_addresses),
        )
}

fn neighbor_line(graph: &AsGraph, neighbor: Asn, role: Role) -> String {
    let counts = graph.counts(neighbor);
    format!(
        "- AS{} ({} of this AS): {} providers, {} peers, {} customers",
        neighbor,
        role.label(),
        counts.providers,
        counts.peers,
        counts.customers
    )
}

/// Renders the description of `asn` into `ceil(neighbors / batch)` segments
/// (minimum one). Every segment repeats the Stable Attributes block; all but
/// the last end with a remaining-neighbor indicator. When `char_limit` is
/// set, a segment longer than it is a hard error.
pub fn render_description(
    asn: Asn,
    graph: &AsGraph,
    meta: Option<&AsMetadata>,
    neighbor_batch_size: usize,
    char_limit: Option<usize>,
) -> Result<Vec<PromptSegment>, CoreError> {
    if neighbor_batch_size == 0 {
        return Err(CoreError::InvalidArgument(
            "neighbor_batch_size must be positive".into(),
        ));
    }
    if !graph.contains(asn) && meta.is_none() {
        return Err(CoreError::UnknownAs(asn));
    }

    // Deterministic ordering: descending neighbor degree, ties by ASN.
    let mut neighbors: Vec<(Asn, Role)> = graph.neighbors(asn).collect();
    neighbors.sort_by(|(a, _), (b, _)| {
        graph
            .degree(*b)
            .cmp(&graph.degree(*a))
            .then_with(|| a.cmp(b))
    });

    let counts = graph.counts(asn);
    let stable = stable_block(asn, counts, meta);
    let total = neighbors.len().div_ceil(neighbor_batch_size).max(1);

    let mut segments = Vec::with_capacity(total);
    for (j, chunk) in neighbors
        .chunks(neighbor_batch_size)
        .chain(std::iter::repeat_n(
            &[][..],
            usize::from(neighbors.is_empty()),
        ))
        .enumerate()
    {
        let mut lines: Vec<String> = chunk
            .iter()
            .map(|(n, role)| neighbor_line(graph, *n, *role))
            .collect();
        if lines.is_empty() {
            lines.push("- none".to_string());
        }
        let consumed = j * neighbor_batch_size + chunk.len();
        let remaining = neighbors.len() - consumed;
        if remaining > 0 {
            lines.push(format!(
                "(+{remaining} more neighbors described in the following segments)"
            ));
        }
        let text = stable.replace("<neighbors>", &lines.join("\n"));
        if let Some(limit) = char_limit {
            let len = text.chars().count();
            if len > limit {
                return Err(CoreError::SegmentTooLong {
                    asn,
                    index: j + 1,
                    total,
                    len,
                    limit,
                });
            }
        }
        segments.push(PromptSegment {
            asn,
            index: j + 1,
            total,
            text,
            template_version: TEMPLATE_VERSION.to_string(),
        });
    }
    debug_assert_eq!(segments.len(), total);
    Ok(segments)
}

/// Auto-sizing render: halves the batch size until every segment fits the
/// `char_limit`. Fails only if a single-neighbor batch still overflows.
pub fn render_description_auto(
    asn: Asn,
    graph: &AsGraph,
    meta: Option<&AsMetadata>,
    initial_batch: usize,
    char_limit: usize,
) -> Result<Vec<PromptSegment>, CoreError> {
    let mut batch = initial_batch.max(1);
    loop {
        match render_description(asn, graph, meta, batch, Some(char_limit)) {
            Err(CoreError::SegmentTooLong { .. }) if batch > 1 => batch /= 2,
            other => return other,
        }
    }
}

/// Minimal single-segment description for an AS known to neither the graph
/// nor the metadata: Stable Attributes with "unknown" fields, no neighbors.
pub fn render_minimal(asn: Asn) -> PromptSegment {
    let stable = stable_block(asn, RoleCounts::default(), None);
    PromptSegment {
        asn,
        index: 1,
        total: 1,
        text: stable.replace("<neighbors>", "- none"),
        template_version: TEMPLATE_VERSION.to_string(),
    }
}

/// Writes the debug segment dump: one `{asn, index, total, text}` per line.
pub fn write_segments(mut w: impl Write, segments: &[PromptSegment]) -> Result<(), CoreError> {
    for seg in segments {
        serde_json::to_writer(&mut w, seg)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a segment dump. Segments carry the current template version.
pub fn read_segments(reader: impl BufRead) -> Result<Vec<PromptSegment>, CoreError> {
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

/// Noise model for relationship perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Delete,
    Add,
    Flip,
}

impl std::str::FromStr for NoiseKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delete" => Ok(NoiseKind::Delete),
            "add" => Ok(NoiseKind::Add),
            "flip" => Ok(NoiseKind::Flip),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown noise type {other:?} (expected delete, add or flip)"
            ))),
        }
    }
}

/// Perturbs `floor(ratio * |E|)` edges. Delete removes edges; add inserts
/// new non-duplicate edges between existing nodes with a uniformly chosen
/// relationship; flip swaps P2C direction and turns P2P into a randomly
/// directed P2C. Deterministic under `seed`.
pub fn perturb_graph(
    graph: &AsGraph,
    noise: NoiseKind,
    ratio: f64,
    seed: u64,
) -> Result<AsGraph, CoreError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::InvalidArgument(format!(
            "noise ratio {ratio} outside [0, 1]"
        )));
    }
    let mut rng = DetRng::derived(seed, "perturb");
    let k = (ratio * graph.edge_count() as f64).floor() as usize;
    let mut edges = graph.edges.clone();
    match noise {
        NoiseKind::Delete => {
            let mut doomed = rng.sample_indices(edges.len(), k);
            doomed.sort_unstable_by(|a, b| b.cmp(a));
            for i in doomed {
                edges.remove(i);
            }
        }
        NoiseKind::Add => {
            let nodes: Vec<Asn> = graph.nodes().collect();
            let mut pairs: std::collections::BTreeSet<(Asn, Asn)> =
                edges.iter().map(|e| pair_key(e.a, e.b)).collect();
            let mut added = 0;
            let mut attempts = 0usize;
            let budget = k.saturating_mul(200) + 1000;
            while added < k && attempts < budget && nodes.len() >= 2 {
                attempts += 1;
                let a = nodes[rng.next_usize(nodes.len())];
                let b = nodes[rng.next_usize(nodes.len())];
                if a == b || pairs.contains(&pair_key(a, b)) {
                    continue;
                }
                let rel = if rng.next_f64() < 0.5 {
                    Rel::P2P
                } else {
                    Rel::P2C
                };
                let (a, b) = if rel == Rel::P2C && rng.next_f64() < 0.5 {
                    (b, a)
                } else {
                    (a, b)
                };
                pairs.insert(pair_key(a, b));
                edges.push(RelEdge { a, b, rel });
                added += 1;
            }
        }
        NoiseKind::Flip => {
            for i in rng.sample_indices(edges.len(), k) {
                let e = edges[i];
                edges[i] = match e.rel {
                    Rel::P2C => RelEdge {
                        a: e.b,
                        b: e.a,
                        rel: Rel::P2C,
                    },
                    Rel::P2P => {
                        if rng.next_f64() < 0.5 {
                            RelEdge {
                                a: e.a,
                                b: e.b,
                                rel: Rel::P2C,
                            }
                        } else {
                            RelEdge {
                                a: e.b,
                                b: e.a,
                                rel: Rel::P2C,
                            }
                        }
                    }
                };
            }
        }
    }
    let (graph, _) = build_graph(edges);
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2c(a: Asn, b: Asn) -> RelEdge {
        RelEdge {
            a,
            b,
            rel: Rel::P2C,
        }
    }

    fn p2p(a: Asn, b: Asn) -> RelEdge {
        RelEdge {
            a,
            b,
            rel: Rel::P2P,
        }
    }

    #[test]
    fn p2c_roles() {
        let (g, _) = build_graph(vec![p2c(1, 2)]);
        assert_eq!(g.role_of(1, 2), Some(Role::Customer));
        assert_eq!(g.role_of(2, 1), Some(Role::Provider));
    }

    #[test]
    fn p2p_is_bidirectional() {
        let (g, _) = build_graph(vec![p2p(3, 4)]);
        assert_eq!(g.role_of(3, 4), Some(Role::Peer));
        assert_eq!(g.role_of(4, 3), Some(Role::Peer));
    }

    #[test]
    fn empty_edges_empty_graph() {
        let (g, _) = build_graph(vec![]);
        assert_eq!(g.node_count(), 0);
    }

    #[test]
    fn self_loop_skipped() {
        let (g, w) = build_graph(vec![p2c(5, 5), p2c(1, 2)]);
        assert_eq!(w.self_loops, 1);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn conflicting_duplicate_keeps_first() {
        let (g, w) = build_graph(vec![p2c(1, 2), p2p(2, 1), p2c(1, 2)]);
        assert_eq!(w.conflicts, 1);
        assert_eq!(w.duplicates, 1);
        assert_eq!(g.role_of(1, 2), Some(Role::Customer));
    }

    #[test]
    fn graph_symmetry_property() {
        let mut rng = DetRng::new(17);
        let mut edges = Vec::new();
        for _ in 0..200 {
            let a = rng.next_range(40) as u32 + 1;
            let b = rng.next_range(40) as u32 + 1;
            let rel = if rng.next_f64() < 0.4 {
                Rel::P2P
            } else {
                Rel::P2C
            };
            edges.push(RelEdge { a, b, rel });
        }
        let (g, _) = build_graph(edges);
        for x in g.nodes() {
            for (y, role) in g.neighbors(x) {
                let back = g.role_of(y, x).unwrap();
                match role {
                    Role::Peer => assert_eq!(back, Role::Peer),
                    Role::Customer => assert_eq!(back, Role::Provider),
                    Role::Provider => assert_eq!(back, Role::Customer),
                }
            }
        }
    }

    fn star_graph() -> AsGraph {
        // AS 10: providers 1 and 2, peer 3, customers 4, 5, 6.
        let (g, _) = build_graph(vec![
            p2c(1, 10),
            p2c(2, 10),
            p2p(10, 3),
            p2c(10, 4),
            p2c(10, 5),
            p2c(10, 6),
        ]);
        g
    }

    #[test]
    fn segment_count_is_ceiling() {
        let g = star_graph();
        let segs = render_description(10, &g, None, 2, None).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.total == 3));
        assert_eq!(segs[0].index, 1);
        assert_eq!(segs[2].index, 3);
    }

    #[test]
    fn zero_neighbors_single_stable_segment() {
        let meta = AsMetadata {
            asn: 99,
            org_name: Some("org-z".into()),
            ..AsMetadata::default()
        };
        let g = AsGraph::default();
        let segs = render_description(99, &g, Some(&meta), 50, None).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].text.contains("org-z"));
        assert!(segs[0].text.contains("- none"));
        assert!(segs[0].text.contains("0 providers, 0 peers, 0 customers"));
    }

    #[test]
    fn stable_block_lists_counts_and_total() {
        let g = star_graph();
        let segs = render_description(10, &g, None, 50, None).unwrap();
        assert_eq!(segs.len(), 1);
        let text = &segs[0].text;
        assert!(text.contains("2 providers, 1 peers, 3 customers, 6 neighbors in total"));
        // Missing metadata renders the literal placeholder value.
        assert!(text.contains("Organization: unknown"));
        assert!(text.contains("unknown ASes"));
    }

    #[test]
    fn every_segment_repeats_stable_attributes() {
        let g = star_graph();
        let segs = render_description(10, &g, None, 2, None).unwrap();
        for s in &segs {
            assert!(s.text.contains("AS number: 10"));
            assert!(s.text.contains("Customer cone:"));
        }
        // All but the last carry the remaining indicator.
        assert!(segs[0].text.contains("more neighbors described"));
        assert!(segs[1].text.contains("more neighbors described"));
        assert!(!segs[2].text.contains("more neighbors described"));
    }

    #[test]
    fn segment_coverage_each_neighbor_once() {
        let g = star_graph();
        let segs = render_description(10, &g, None, 2, None).unwrap();
        let mut seen = Vec::new();
        for s in &segs {
            for line in s.text.lines() {
                if let Some(rest) = line.strip_prefix("- AS") {
                    // Skip the stable-attribute "AS number:" line.
                    if rest.starts_with(|c: char| c.is_ascii_digit()) {
                        let asn: u32 = rest.split(' ').next().unwrap().parse().unwrap();
                        seen.push(asn);
                    }
                }
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn zero_batch_size_errors() {
        let g = star_graph();
        assert!(render_description(10, &g, None, 0, None).is_err());
    }

    #[test]
    fn char_limit_violation_is_hard_error() {
        let g = star_graph();
        let err = render_description(10, &g, None, 50, Some(100)).unwrap_err();
        assert!(matches!(err, CoreError::SegmentTooLong { .. }));
    }

    #[test]
    fn auto_sizing_halves_until_fit() {
        let g = star_graph();
        // One-segment render overflows 620 chars; halving must find a size
        // where every segment fits.
        let segs = render_description_auto(10, &g, None, 50, 620).unwrap();
        assert!(segs.len() > 1);
        for s in &segs {
            assert!(s.text.chars().count() <= 620);
        }
        // A limit below the stable block cannot be met at any batch size.
        assert!(matches!(
            render_description_auto(10, &g, None, 50, 100),
            Err(CoreError::SegmentTooLong { .. })
        ));
    }

    #[test]
    fn unknown_as_errors_but_minimal_renders() {
        let g = AsGraph::default();
        assert!(matches!(
            render_description(123, &g, None, 50, None),
            Err(CoreError::UnknownAs(123))
        ));
        let seg = render_minimal(123);
        assert!(seg.text.contains("AS number: 123"));
        assert!(seg.text.contains("Organization: unknown"));
    }

    #[test]
    fn neighbor_order_degree_desc_then_asn() {
        let (g, _) = build_graph(vec![
            p2c(1, 10),
            p2c(2, 10),
            // AS 2 also serves another customer, so its degree is higher.
            p2c(2, 7),
        ]);
        let segs = render_description(10, &g, None, 50, None).unwrap();
        let text = &segs[0].text;
        let pos_1 = text.find("- AS1 ").unwrap();
        let pos_2 = text.find("- AS2 ").unwrap();
        assert!(pos_2 < pos_1, "higher-degree neighbor listed first");
    }

    #[test]
    fn segments_jsonl_shape_and_roundtrip() {
        let g = star_graph();
        let segs = render_description(10, &g, None, 4, None).unwrap();
        let mut buf = Vec::new();
        write_segments(&mut buf, &segs).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        let first_line = first.lines().next().unwrap();
        assert!(first_line.starts_with("{\"asn\":10,\"index\":1,\"total\":2,\"text\":"));
        let v: serde_json::Value = serde_json::from_str(first_line).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4);
        let back = read_segments(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, segs);
    }

    #[test]
    fn relationship_file_roundtrip() {
        let text = "# serial-1\n1|2|-1\n3|4|0\nbad|line|9\n";
        let (edges, errors) = load_relationships(std::io::Cursor::new(text)).unwrap();
        assert_eq!(edges, vec![p2c(1, 2), p2p(3, 4)]);
        assert_eq!(errors.len(), 1);
        let mut buf = Vec::new();
        write_relationships(&mut buf, &edges).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1|2|-1\n3|4|0\n");
    }

    #[test]
    fn metadata_missing_fields_accepted() {
        let text = "{\"asn\":7,\"orgName\":\"org-a\",\"country\":\"JP\"}\n{\"asn\":8}\n";
        let (map, errors) = load_metadata(std::io::Cursor::new(text)).unwrap();
        assert!(errors.is_empty());
        assert_eq!(map[&7].org_name.as_deref(), Some("org-a"));
        assert_eq!(map[&8].org_name, None);
    }

    fn noisy_graph() -> AsGraph {
        let mut rng = DetRng::new(23);
        let mut edges = Vec::new();
        while edges.len() < 100 {
            let a = rng.next_range(60) as u32 + 1;
            let b = rng.next_range(60) as u32 + 1;
            if a == b {
                continue;
            }
            let rel = if rng.next_f64() < 0.3 {
                Rel::P2P
            } else {
                Rel::P2C
            };
            edges.push(RelEdge { a, b, rel });
        }
        let (g, _) = build_graph(edges);
        g
    }

    #[test]
    fn ratio_zero_identity() {
        let g = noisy_graph();
        for noise in [NoiseKind::Delete, NoiseKind::Add, NoiseKind::Flip] {
            let out = perturb_graph(&g, noise, 0.0, 1).unwrap();
            assert_eq!(out, g);
        }
    }

    #[test]
    fn delete_quarter_leaves_three_quarters() {
        let g = noisy_graph();
        let n = g.edge_count();
        let out = perturb_graph(&g, NoiseKind::Delete, 0.25, 2).unwrap();
        assert_eq!(out.edge_count(), n - n / 4);
    }

    #[test]
    fn add_inserts_new_edges() {
        let g = noisy_graph();
        let n = g.edge_count();
        let out = perturb_graph(&g, NoiseKind::Add, 0.25, 3).unwrap();
        assert_eq!(out.edge_count(), n + n / 4);
    }

    #[test]
    fn flip_swaps_p2c_direction() {
        let (g, _) = build_graph(vec![p2c(1, 2)]);
        let out = perturb_graph(&g, NoiseKind::Flip, 1.0, 4).unwrap();
        assert_eq!(out.edges(), &[p2c(2, 1)]);
    }

    #[test]
    fn perturb_reproducible_byte_for_byte() {
        let g = noisy_graph();
        for noise in [NoiseKind::Delete, NoiseKind::Add, NoiseKind::Flip] {
            let a = perturb_graph(&g, noise, 0.25, 99).unwrap();
            let b = perturb_graph(&g, noise, 0.25, 99).unwrap();
            let mut buf_a = Vec::new();
            let mut buf_b = Vec::new();
            write_relationships(&mut buf_a, a.edges()).unwrap();
            write_relationships(&mut buf_b, b.edges()).unwrap();
            assert_eq!(buf_a, buf_b);
            let c = perturb_graph(&g, noise, 0.25, 100).unwrap();
            let mut buf_c = Vec::new();
            write_relationships(&mut buf_c, c.edges()).unwrap();
            assert_ne!(buf_a, buf_c, "different seed should perturb differently");
        }
    }

    #[test]
    fn ratio_above_one_rejected() {
        let g = noisy_graph();
        assert!(perturb_graph(&g, NoiseKind::Delete, 1.5, 1).is_err());
    }
}
