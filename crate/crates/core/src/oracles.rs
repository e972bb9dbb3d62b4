//! Brute-force reference implementations for validation.
//!
//! Everything here recomputes a result by exhaustive search or direct
//! definition, independently of the production code paths, so tests can
//! compare the two routes. Compiled only under the `oracles` feature;
//! never used by the pipeline itself.

use std::collections::BTreeMap;

use crate::as_profile::{AsGraph, Role};
use crate::types::{AsPath, Asn, PathElement, Prefix};

/// Longest-cover lookup by linear scan over all stored prefixes.
pub fn lpm_linear_scan<'a>(
    entries: &'a [(Prefix, AsPath)],
    query: &Prefix,
) -> Option<(Prefix, &'a AsPath)> {
    let mut best: Option<(Prefix, &AsPath)> = None;
    for (prefix, path) in entries {
        if prefix.covers(query) {
            match &best {
                Some((current, _)) if current.len() >= prefix.len() => {}
                _ => best = Some((*prefix, path)),
            }
        }
    }
    best
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Element distance re-derived from first principles: Euclidean between
/// singleton vectors, maximum over members for sets.
pub fn element_distance(
    a: &PathElement,
    b: &PathElement,
    vectors: &BTreeMap<Asn, Vec<f64>>,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut max = 0.0f64;
    for x in a.asns() {
        for y in b.asns() {
            max = max.max(euclid(&vectors[&x], &vectors[&y]));
        }
    }
    max
}

/// Minimal alignment cost by explicit enumeration of every monotone path
/// from (0,0) to (n-1,m-1), accumulating costs forward so floating-point
/// addition order matches a dynamic program that sums along the path.
pub fn dtw_exhaustive(
    s: &[PathElement],
    t: &[PathElement],
    vectors: &BTreeMap<Asn, Vec<f64>>,
) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        acc: f64,
        s: &[PathElement],
        t: &[PathElement],
        vectors: &BTreeMap<Asn, Vec<f64>>,
        best: &mut f64,
    ) {
        let acc = acc + element_distance(&s[i], &t[j], vectors);
        if i == s.len() - 1 && j == t.len() - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < s.len() {
            walk(i + 1, j, acc, s, t, vectors, best);
        }
        if j + 1 < t.len() {
            walk(i, j + 1, acc, s, t, vectors, best);
        }
        if i + 1 < s.len() && j + 1 < t.len() {
            walk(i + 1, j + 1, acc, s, t, vectors, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, s, t, vectors, &mut best);
    best
}

/// Reference quantile with linear interpolation, written in the rank/weight
/// formulation.
pub fn quantile_reference(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let rank = q.clamp(0.0, 1.0) * (n as f64 - 1.0);
    let below = rank.floor() as usize;
    let above = (below + 1).min(n - 1);
    let weight = rank - below as f64;
    sorted[below] * (1.0 - weight) + sorted[above] * weight
}

/// One hop label between two singleton path positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hop {
    Up,
    Peer,
    Down,
    Unknown,
}

fn hop_of(a: Asn, b: Asn, graph: &AsGraph) -> Hop {
    match graph.role_of(a, b) {
        Some(Role::Provider) => Hop::Up,
        Some(Role::Peer) => Hop::Peer,
        Some(Role::Customer) => Hop::Down,
        None => Hop::Unknown,
    }
}

/// Exhaustive valley-free oracle over singleton ASN paths: resolve every
/// unknown hop to each of the three labels and accept if any assignment
/// drives the explicit up*-peer?-down* state machine to the end.
pub fn valley_free_exhaustive(asns: &[Asn], graph: &AsGraph) -> bool {
    fn machine_accepts(labels: &[Hop]) -> bool {
        let mut past_peak = false;
        for hop in labels {
            match hop {
                Hop::Up if past_peak => return false,
                Hop::Up => {}
                Hop::Peer if past_peak => return false,
                Hop::Peer => past_peak = true,
                Hop::Down => past_peak = true,
                Hop::Unknown => unreachable!("unknowns resolved before simulation"),
            }
        }
        true
    }

    fn resolve(labels: &mut Vec<Hop>, i: usize) -> bool {
        if i == labels.len() {
            return machine_accepts(labels);
        }
        if labels[i] == Hop::Unknown {
            for candidate in [Hop::Up, Hop::Peer, Hop::Down] {
                labels[i] = candidate;
                if resolve(labels, i + 1) {
                    labels[i] = Hop::Unknown;
                    return true;
                }
            }
            labels[i] = Hop::Unknown;
            false
        } else {
            resolve(labels, i + 1)
        }
    }

    if asns.len() < 2 {
        return true;
    }
    let mut labels: Vec<Hop> = asns.windows(2).map(|w| hop_of(w[0], w[1], graph)).collect();
    resolve(&mut labels, 0)
}
