//! Route monitor: prefix trees per vantage point and route-change extraction.
//!
//! A RIB snapshot seeds one pair of family-tagged prefix trees per vantage.
//! Each announcement in the update stream is matched against its vantage's
//! tree under the longest-prefix-match rule; when the stored path differs
//! from the announced one a [`RouteChange`] is emitted, and the tree is then
//! updated so "historical" always means the most recently observed route.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::CoreError;
use crate::types::{AsPath, Asn, Family, Prefix, RibEntry, RouteChange};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Default)]
struct Node {
    children: [Option<Box<Node>>; 2],
    value: Option<AsPath>,
}

/// Binary trie over the bits of one address family.
#[derive(Debug)]
pub struct PrefixTree {
    family: Family,
    root: Node,
    len: usize,
}

impl PrefixTree {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            root: Node::default(),
            len: 0,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Number of stored prefixes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check_family(&self, prefix: &Prefix) -> Result<(), CoreError> {
        if prefix.family() != self.family {
            return Err(CoreError::FamilyMismatch(format!(
                "{prefix} against a {:?} tree",
                self.family
            )));
        }
        Ok(())
    }

    /// Inserts or overwrites the exact prefix. Returns the replaced path.
    pub fn insert(&mut self, prefix: Prefix, path: AsPath) -> Result<Option<AsPath>, CoreError> {
        self.check_family(&prefix)?;
        let mut node = &mut self.root;
        for i in 0..prefix.len() {
            let bit = prefix.bit(i) as usize;
            node = node.children[bit].get_or_insert_with(Box::default);
        }
        let old = node.value.replace(path);
        if old.is_none() {
            self.len += 1;
        }
        Ok(old)
    }

    /// Removes the exact prefix if present, returning its path.
    pub fn remove(&mut self, prefix: &Prefix) -> Result<Option<AsPath>, CoreError> {
        self.check_family(prefix)?;
        let mut node = &mut self.root;
        for i in 0..prefix.len() {
            let bit = prefix.bit(i) as usize;
            match node.children[bit].as_deref_mut() {
                Some(child) => node = child,
                None => return Ok(None),
            }
        }
        let old = node.value.take();
        if old.is_some() {
            self.len -= 1;
        }
        Ok(old)
    }

    /// Longest-prefix-match lookup: the stored entry covering `query` with
    /// maximal length, if any.
    pub fn lpm(&self, query: &Prefix) -> Result<Option<(Prefix, &AsPath)>, CoreError> {
        self.check_family(query)?;
        let mut node = &self.root;
        let mut best: Option<(u8, &AsPath)> = None;
        if let Some(path) = &node.value {
            best = Some((0, path));
        }
        for i in 0..query.len() {
            let bit = query.bit(i) as usize;
            match node.children[bit].as_deref() {
                Some(child) => {
                    node = child;
                    if let Some(path) = &node.value {
                        best = Some((i + 1, path));
                    }
                }
                None => break,
            }
        }
        Ok(best.map(|(depth, path)| (query.truncated(depth), path)))
    }
}

/// The v4 and v6 trees of one vantage point. The bit trees never mix
/// families; the family tag on the query picks the tree.
#[derive(Debug)]
pub struct VantageTables {
    pub v4: PrefixTree,
    pub v6: PrefixTree,
}

impl Default for VantageTables {
    fn default() -> Self {
        Self {
            v4: PrefixTree::new(Family::V4),
            v6: PrefixTree::new(Family::V6),
        }
    }
}

impl VantageTables {
    pub fn for_family(&self, family: Family) -> &PrefixTree {
        match family {
            Family::V4 => &self.v4,
            Family::V6 => &self.v6,
        }
    }

    pub fn for_family_mut(&mut self, family: Family) -> &mut PrefixTree {
        match family {
            Family::V4 => &mut self.v4,
            Family::V6 => &mut self.v6,
        }
    }

    pub fn len(&self) -> usize {
        self.v4.len() + self.v6.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type VantageTrees = BTreeMap<Asn, VantageTables>;

/// Counters reported while building the reference trees.
#[derive(Debug, Default)]
pub struct LoadStats {
    pub entries_per_vantage: BTreeMap<Asn, usize>,
    /// RIB entries whose path does not start at the vantage AS. They are
    /// kept, but the count is surfaced for the caller to log.
    pub vantage_head_violations: usize,
}

/// Builds per-vantage prefix trees from RIB entries. Duplicate
/// (vantage, prefix) keys keep the last entry read.
pub fn build_prefix_trees(
    entries: impl IntoIterator<Item = RibEntry>,
) -> Result<(VantageTrees, LoadStats), CoreError> {
    let mut trees = VantageTrees::new();
    let mut stats = LoadStats::default();
    for entry in entries {
        if entry.path.first().asns().all(|a| a != entry.vantage) {
            stats.vantage_head_violations += 1;
        }
        let tables = trees.entry(entry.vantage).or_default();
        tables
            .for_family_mut(entry.prefix.family())
            .insert(entry.prefix, entry.path)?;
    }
    for (vantage, tables) in &trees {
        stats.entries_per_vantage.insert(*vantage, tables.len());
    }
    Ok((trees, stats))
}

/// One parsed update-stream record.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub ts: i64,
    pub vantage: Asn,
    pub prefix: Prefix,
    pub action: UpdateAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateAction {
    Announce(AsPath),
    Withdraw,
}

/// Counters from one extraction run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ExtractStats {
    pub announcements: usize,
    pub withdrawals: usize,
    pub changes: usize,
    /// Announcements that found no covering prefix in the tree.
    pub lpm_misses: usize,
}

fn check_order(updates: &[Update], slack: i64) -> Result<(), CoreError> {
    let mut high = i64::MIN;
    for (i, u) in updates.iter().enumerate() {
        if high != i64::MIN && u.ts + slack < high {
            return Err(CoreError::OutOfOrder {
                line: i + 1,
                ts: u.ts,
                high,
                slack,
            });
        }
        high = high.max(u.ts);
    }
    Ok(())
}

fn apply_update(
    tables: &mut VantageTables,
    update: &Update,
    stats: &mut ExtractStats,
    out: &mut Vec<RouteChange>,
) -> Result<(), CoreError> {
    let tree = tables.for_family_mut(update.prefix.family());
    match &update.action {
        UpdateAction::Withdraw => {
            stats.withdrawals += 1;
            tree.remove(&update.prefix)?;
        }
        UpdateAction::Announce(path) => {
            stats.announcements += 1;
            match tree.lpm(&update.prefix)? {
                Some((matched, stored)) if stored != path => {
                    out.push(RouteChange {
                        ts: update.ts,
                        vantage: update.vantage,
                        announced_prefix: update.prefix,
                        matched_prefix: matched,
                        historical_path: stored.clone(),
                        updated_path: path.clone(),
                    });
                    stats.changes += 1;
                }
                Some(_) => {}
                None => stats.lpm_misses += 1,
            }
            tree.insert(update.prefix, path.clone())?;
        }
    }
    Ok(())
}

/// Sequential route-change extraction. Updates must be time-ordered within
/// `slack` seconds; an unknown vantage gets a fresh empty tree.
pub fn extract_route_changes_seq(
    trees: &mut VantageTrees,
    updates: &[Update],
    slack: i64,
) -> Result<(Vec<RouteChange>, ExtractStats), CoreError> {
    check_order(updates, slack)?;
    let mut out = Vec::new();
    let mut stats = ExtractStats::default();
    for update in updates {
        let tables = trees.entry(update.vantage).or_default();
        apply_update(tables, update, &mut stats, &mut out)?;
    }
    Ok((out, stats))
}

/// Parallel extraction across vantages. Trees are independent per vantage,
/// so each vantage's updates are applied serially while vantages proceed in
/// parallel; the merged output is byte-identical to the sequential run.
#[cfg(feature = "parallel")]
pub fn extract_route_changes_par(
    trees: &mut VantageTrees,
    updates: &[Update],
    slack: i64,
) -> Result<(Vec<RouteChange>, ExtractStats), CoreError> {
    check_order(updates, slack)?;
    let mut groups: BTreeMap<Asn, Vec<(usize, &Update)>> = BTreeMap::new();
    for (i, u) in updates.iter().enumerate() {
        groups.entry(u.vantage).or_default().push((i, u));
    }
    for vantage in groups.keys() {
        trees.entry(*vantage).or_default();
    }

    type Job<'a> = (Asn, Vec<(usize, &'a Update)>, &'a mut VantageTables);
    let mut work: Vec<Job> = Vec::new();
    let mut taken: BTreeMap<Asn, &mut VantageTables> =
        trees.iter_mut().map(|(v, t)| (*v, t)).collect();
    for (vantage, group) in groups {
        let tables = taken.remove(&vantage).expect("vantage table exists");
        work.push((vantage, group, tables));
    }

    let results: Result<Vec<_>, CoreError> = work
        .into_par_iter()
        .map(|(_, group, tables)| {
            let mut out = Vec::new();
            let mut stats = ExtractStats::default();
            let mut tagged = Vec::new();
            for (index, update) in group {
                let before = out.len();
                apply_update(tables, update, &mut stats, &mut out)?;
                if out.len() > before {
                    tagged.push(index);
                }
            }
            Ok((out, tagged, stats))
        })
        .collect();

    let mut merged: Vec<(usize, RouteChange)> = Vec::new();
    let mut stats = ExtractStats::default();
    for (changes, tags, s) in results? {
        merged.extend(tags.into_iter().zip(changes));
        stats.announcements += s.announcements;
        stats.withdrawals += s.withdrawals;
        stats.changes += s.changes;
        stats.lpm_misses += s.lpm_misses;
    }
    merged.sort_by_key(|(index, _)| *index);
    Ok((merged.into_iter().map(|(_, c)| c).collect(), stats))
}

/// Dispatches to the parallel implementation when built with it.
pub fn extract_route_changes(
    trees: &mut VantageTrees,
    updates: &[Update],
    slack: i64,
) -> Result<(Vec<RouteChange>, ExtractStats), CoreError> {
    #[cfg(feature = "parallel")]
    {
        extract_route_changes_par(trees, updates, slack)
    }
    #[cfg(not(feature = "parallel"))]
    {
        extract_route_changes_seq(trees, updates, slack)
    }
}

/// A tolerated per-line input problem: the line number and what went wrong.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub msg: String,
}

/// Parses a RIB snapshot: `vantage<TAB>prefix<TAB>as_path`, `#` comments.
/// Malformed lines are skipped and reported.
pub fn load_rib(reader: impl BufRead) -> Result<(Vec<RibEntry>, Vec<LineError>), CoreError> {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_rib_line(trimmed) {
            Ok(entry) => entries.push(entry),
            Err(e) => errors.push(LineError {
                line: lineno,
                msg: e.to_string(),
            }),
        }
    }
    Ok((entries, errors))
}

fn parse_rib_line(line: &str) -> Result<RibEntry, CoreError> {
    let mut fields = line.split('\t');
    let vantage = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing vantage".into()))?
        .parse::<u32>()
        .map_err(|_| CoreError::InvalidArgument("bad vantage ASN".into()))?;
    let prefix: Prefix = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing prefix".into()))?
        .parse()?;
    let path: AsPath = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing path".into()))?
        .parse()?;
    Ok(RibEntry {
        vantage,
        prefix,
        path,
    })
}

/// Parses an update stream: `ts<TAB>vantage<TAB>prefix<TAB>(as_path|WITHDRAW)`.
pub fn load_updates(reader: impl BufRead) -> Result<(Vec<Update>, Vec<LineError>), CoreError> {
    let mut updates = Vec::new();
    let mut errors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match parse_update_line(trimmed) {
            Ok(update) => updates.push(update),
            Err(e) => errors.push(LineError {
                line: lineno,
                msg: e.to_string(),
            }),
        }
    }
    Ok((updates, errors))
}

fn parse_update_line(line: &str) -> Result<Update, CoreError> {
    let mut fields = line.split('\t');
    let ts = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing timestamp".into()))?
        .parse::<i64>()
        .map_err(|_| CoreError::InvalidArgument("bad timestamp".into()))?;
    let vantage = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing vantage".into()))?
        .parse::<u32>()
        .map_err(|_| CoreError::InvalidArgument("bad vantage ASN".into()))?;
    let prefix: Prefix = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing prefix".into()))?
        .parse()?;
    let rest = fields
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("missing path or WITHDRAW".into()))?;
    let action = if rest == "WITHDRAW" {
        UpdateAction::Withdraw
    } else {
        UpdateAction::Announce(rest.parse()?)
    };
    Ok(Update {
        ts,
        vantage,
        prefix,
        action,
    })
}

/// Writes route changes as JSON lines.
pub fn write_changes(mut w: impl Write, changes: &[RouteChange]) -> Result<(), CoreError> {
    for change in changes {
        serde_json::to_writer(&mut w, change)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines route-change file.
pub fn read_changes(reader: impl BufRead) -> Result<Vec<RouteChange>, CoreError> {
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
