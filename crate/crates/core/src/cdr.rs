//! Contrastive dimensionality reduction.
//!
//! Organizational grouping supervises a small two-layer network that maps
//! provider embeddings into a compact space where Euclidean distance tracks
//! behavioral similarity. Positive pairs are same-organization ASes whose
//! embedding distance falls in the bottom quartile of the intra-org
//! distribution; negative pairs are cross-organization ASes in or above the
//! top quartile. The softplus margin loss pulls positives together and
//! pushes negatives apart, and the pair set is rebuilt periodically from
//! distances in the current reduced space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedder::VectorStore;
use crate::error::CoreError;
use crate::rng::{hash64, DetRng};
use crate::types::Asn;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// ASN to organization name.
pub type OrgMap = BTreeMap<Asn, String>;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub learning_rate: f64,
    /// Positive pairs per batch (P).
    pub batch_pos: usize,
    /// Negative pairs per batch (N).
    pub batch_neg: usize,
    /// Pair-set reconstruction period in iterations (R).
    pub resample_every: usize,
    pub iterations: usize,
    /// Negatives are capped at this multiple of the positive count.
    pub negative_cap: f64,
    /// Use softplus(L_neg - L_pos) instead of the default
    /// softplus(L_pos - L_neg).
    pub reversed_loss_margin: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            output_dim: 16,
            learning_rate: 1e-3,
            batch_pos: 64,
            batch_neg: 64,
            resample_every: 25,
            iterations: 1000,
            negative_cap: 4.0,
            reversed_loss_margin: false,
        }
    }
}

/// Two-layer reduction network with a tanh hidden layer. Weights are stored
/// row-major: `w1[i * hidden + j]`, `w2[j * output + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub hyper: Hyper,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ReductionModel {
    /// Seeded initialization, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn init(input_dim: usize, hyper: &Hyper, seed: u64) -> Self {
        let mut rng = DetRng::derived(seed, "init");
        let hidden = hyper.hidden_dim;
        let output = hyper.output_dim;
        let bound1 = 1.0 / (input_dim as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.next_f64() * 2.0 - 1.0) * bound)
                .collect()
        };
        Self {
            input_dim,
            hidden_dim: hidden,
            output_dim: output,
            seed,
            hyper: hyper.clone(),
            w1: draw(input_dim * hidden, bound1),
            b1: draw(hidden, bound1),
            w2: draw(hidden * output, bound2),
            b2: draw(output, bound2),
        }
    }

    /// All-zero parameters; forward output is identically zero.
    pub fn zeroed(input_dim: usize, hyper: &Hyper) -> Self {
        Self {
            input_dim,
            hidden_dim: hyper.hidden_dim,
            output_dim: hyper.output_dim,
            seed: 0,
            hyper: hyper.clone(),
            w1: vec![0.0; input_dim * hyper.hidden_dim],
            b1: vec![0.0; hyper.hidden_dim],
            w2: vec![0.0; hyper.hidden_dim * hyper.output_dim],
            b2: vec![0.0; hyper.output_dim],
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut h = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            for (hj, wj) in h.iter_mut().zip(row) {
                *hj += xi * wj;
            }
        }
        for hj in &mut h {
            *hj = hj.tanh();
        }
        h
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let mut y = self.b2.clone();
        for (j, &hj) in h.iter().enumerate() {
            let row = &self.w2[j * self.output_dim..(j + 1) * self.output_dim];
            for (yk, wk) in y.iter_mut().zip(row) {
                *yk += hj * wk;
            }
        }
        y
    }

    /// Pure forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.output(&self.hidden(x))
    }

    /// Hex checksum over the serialized model, for provenance headers.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        format!("{:016x}", hash64(0, &bytes))
    }

    pub fn save(&self, mut w: impl std::io::Write) -> Result<(), CoreError> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(reader: impl std::io::Read) -> Result<Self, CoreError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Quantile of a sorted sample by linear interpolation between order
/// statistics: rank h = q * (n - 1).
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Contrastive supervision: order-normalized positive and negative pairs
/// with the quartile thresholds that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub positives: Vec<(Asn, Asn)>,
    pub negatives: Vec<(Asn, Asn)>,
    pub q25: f64,
    pub q75: f64,
}

fn histogram(values: &[f64]) -> String {
    if values.is_empty() {
        return "(no samples)".into();
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(f64::MIN_POSITIVE);
    let mut bins = [0usize; 10];
    for v in values {
        let b = (((v - min) / span) * 10.0).floor() as usize;
        bins[b.min(9)] += 1;
    }
    format!("[{min:.4}..{max:.4}] counts {bins:?}")
}

fn intra_org_pairs(orgs: &BTreeMap<&str, Vec<Asn>>) -> Vec<(Asn, Asn)> {
    let mut pairs = Vec::new();
    for members in orgs.values() {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                pairs.push((members[i], members[j]));
            }
        }
    }
    pairs
}

fn pair_distances(pairs: &[(Asn, Asn)], vectors: &BTreeMap<Asn, Vec<f64>>) -> Vec<f64> {
    let dist = |&(a, b): &(Asn, Asn)| euclid(&vectors[&a], &vectors[&b]);
    #[cfg(feature = "parallel")]
    {
        pairs.par_iter().map(dist).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(dist).collect()
    }
}

/// Pair construction over an arbitrary vector space. The caller provides the
/// RNG so resampling stays a pure function of (vectors, org_map, seed).
fn construct_pairs_in(
    vectors: &BTreeMap<Asn, Vec<f64>>,
    org_map: &OrgMap,
    negative_cap: f64,
    rng: &mut DetRng,
) -> Result<PairSet, CoreError> {
    let mut orgs: BTreeMap<&str, Vec<Asn>> = BTreeMap::new();
    for (asn, org) in org_map {
        if vectors.contains_key(asn) {
            orgs.entry(org.as_str()).or_default().push(*asn);
        }
    }
    orgs.retain(|_, members| members.len() >= 2);
    if orgs.len() < 2 {
        return Err(CoreError::InsufficientSupervision);
    }

    let intra = intra_org_pairs(&orgs);
    let intra_dists = pair_distances(&intra, vectors);
    let mut sorted = intra_dists.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q25 = quantile_linear(&sorted, 0.25);
    let q75 = quantile_linear(&sorted, 0.75);

    let mut positives: Vec<(Asn, Asn)> = intra
        .iter()
        .zip(&intra_dists)
        .filter(|(_, d)| **d <= q25)
        .map(|(p, _)| *p)
        .collect();
    positives.sort_unstable();
    if positives.is_empty() {
        return Err(CoreError::EmptyPairSet {
            side: "positive",
            histogram: histogram(&intra_dists),
        });
    }

    // Rejection-sample cross-org pairs at or above q75, capped at a multiple
    // of the positive count.
    let supervised: Vec<Asn> = orgs.values().flatten().copied().collect();
    let cap = (negative_cap * positives.len() as f64).floor() as usize;
    let mut negatives: Vec<(Asn, Asn)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let budget = cap.saturating_mul(200) + 1000;
    let mut attempts = 0;
    while negatives.len() < cap && attempts < budget {
        attempts += 1;
        let a = supervised[rng.next_usize(supervised.len())];
        let b = supervised[rng.next_usize(supervised.len())];
        if a == b || org_map[&a] == org_map[&b] {
            continue;
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        if seen.contains(&pair) {
            continue;
        }
        if euclid(&vectors[&pair.0], &vectors[&pair.1]) >= q75 {
            seen.insert(pair);
            negatives.push(pair);
        }
    }
    if negatives.is_empty() {
        return Err(CoreError::EmptyPairSet {
            side: "negative",
            histogram: histogram(&intra_dists),
        });
    }
    negatives.sort_unstable();

    Ok(PairSet {
        positives,
        negatives,
        q25,
        q75,
    })
}

/// Builds the supervision pair set from original-space embedding distances.
pub fn construct_pairs(
    store: &VectorStore,
    org_map: &OrgMap,
    negative_cap: f64,
    seed: u64,
) -> Result<PairSet, CoreError> {
    if store.is_empty() {
        return Err(CoreError::InvalidArgument("empty embedding store".into()));
    }
    let mut rng = DetRng::derived(seed, "pairs");
    construct_pairs_in(store.entries(), org_map, negative_cap, &mut rng)
}

/// Mean squared distance per dimension over a batch of reduced pairs (the
/// positive or negative side of the contrastive loss).
pub fn batch_mean_sq(pairs: &[(Vec<f64>, Vec<f64>)], output_dim: usize) -> f64 {
    let sum: f64 = pairs.iter().map(|(a, b)| sq_dist(a, b)).sum();
    sum / (pairs.len() as f64 * output_dim as f64)
}

/// Contrastive loss over already-reduced batches. The default margin is
/// softplus(L_pos - L_neg), so the loss vanishes as negatives get far; the
/// reversed-margin variant softplus(L_neg - L_pos) sits behind the flag.
pub fn cdr_loss(
    pos_reduced: &[(Vec<f64>, Vec<f64>)],
    neg_reduced: &[(Vec<f64>, Vec<f64>)],
    output_dim: usize,
    reversed_margin: bool,
) -> f64 {
    assert!(!pos_reduced.is_empty() && !neg_reduced.is_empty());
    let l_pos = batch_mean_sq(pos_reduced, output_dim);
    let l_neg = batch_mean_sq(neg_reduced, output_dim);
    if reversed_margin {
        softplus(l_neg - l_pos)
    } else {
        softplus(l_pos - l_neg)
    }
}

/// Parameter gradients of the batch loss.
#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Grads {
    fn zeros(model: &ReductionModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }
}

/// Loss and analytic parameter gradients for one batch of input-space pairs.
pub fn loss_and_grads(
    model: &ReductionModel,
    pos_inputs: &[(&[f64], &[f64])],
    neg_inputs: &[(&[f64], &[f64])],
    reversed_margin: bool,
) -> (f64, Grads) {
    struct Cached<'a> {
        x: &'a [f64],
        h: Vec<f64>,
        y: Vec<f64>,
    }

    let forward = |x: &'_ [f64]| {
        let h = model.hidden(x);
        let y = model.output(&h);
        (h, y)
    };

    let mut cache: Vec<(Cached, Cached)> = Vec::with_capacity(pos_inputs.len() + neg_inputs.len());
    for &(xa, xb) in pos_inputs.iter().chain(neg_inputs) {
        let (ha, ya) = forward(xa);
        let (hb, yb) = forward(xb);
        cache.push((
            Cached {
                x: xa,
                h: ha,
                y: ya,
            },
            Cached {
                x: xb,
                h: hb,
                y: yb,
            },
        ));
    }

    let d_out = model.output_dim as f64;
    let p = pos_inputs.len() as f64;
    let n = neg_inputs.len() as f64;
    let l_pos: f64 = cache[..pos_inputs.len()]
        .iter()
        .map(|(a, b)| sq_dist(&a.y, &b.y))
        .sum::<f64>()
        / (p * d_out);
    let l_neg: f64 = cache[pos_inputs.len()..]
        .iter()
        .map(|(a, b)| sq_dist(&a.y, &b.y))
        .sum::<f64>()
        / (n * d_out);

    let margin = if reversed_margin {
        l_neg - l_pos
    } else {
        l_pos - l_neg
    };
    let loss = softplus(margin);
    let s = sigmoid(margin);
    // dLoss/dL_pos and dLoss/dL_neg under either sign convention.
    let (c_pos, c_neg) = if reversed_margin { (-s, s) } else { (s, -s) };

    let mut grads = Grads::zeros(model);
    let mut backprop = |v: &Cached, g_y: &[f64]| {
        for (slot, g) in grads.b2.iter_mut().zip(g_y) {
            *slot += g;
        }
        let hidden = model.hidden_dim;
        let out = model.output_dim;
        let mut g_pre = vec![0.0; hidden];
        for (j, pre) in g_pre.iter_mut().enumerate() {
            let mut g_h = 0.0;
            let row = &model.w2[j * out..(j + 1) * out];
            for (wk, g) in row.iter().zip(g_y) {
                g_h += wk * g;
            }
            for (slot, g) in grads.w2[j * out..(j + 1) * out].iter_mut().zip(g_y) {
                *slot += v.h[j] * g;
            }
            *pre = g_h * (1.0 - v.h[j] * v.h[j]);
        }
        for (slot, g) in grads.b1.iter_mut().zip(&g_pre) {
            *slot += g;
        }
        for (i, &xi) in v.x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (slot, g) in grads.w1[i * hidden..(i + 1) * hidden]
                .iter_mut()
                .zip(&g_pre)
            {
                *slot += xi * g;
            }
        }
    };

    for (idx, (a, b)) in cache.iter().enumerate() {
        let (coef, batch) = if idx < pos_inputs.len() {
            (c_pos, p)
        } else {
            (c_neg, n)
        };
        let scale = coef * 2.0 / (batch * d_out);
        let g_a: Vec<f64> =
            a.y.iter()
                .zip(&b.y)
                .map(|(ya, yb)| scale * (ya - yb))
                .collect();
        let g_b: Vec<f64> = g_a.iter().map(|g| -g).collect();
        backprop(a, &g_a);
        backprop(b, &g_b);
    }

    (loss, grads)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ReductionModel,
    pub loss_trace: Vec<f64>,
    /// Pair-set reconstruction events, the initial one included.
    pub resamples: usize,
    /// Supervision constructed in the original space; kept for diagnostics.
    pub initial_pairs: PairSet,
}

fn reduce_map(
    model: &ReductionModel,
    vectors: &BTreeMap<Asn, Vec<f64>>,
) -> BTreeMap<Asn, Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        vectors
            .par_iter()
            .map(|(asn, v)| (*asn, model.forward(v)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        vectors
            .iter()
            .map(|(asn, v)| (*asn, model.forward(v)))
            .collect()
    }
}

/// One training period's positive and negative pair picks.
type PairBatch = (Vec<(Asn, Asn)>, Vec<(Asn, Asn)>);

fn sample_batch(
    pairs: &PairSet,
    batch_pos: usize,
    batch_neg: usize,
    rng: &mut DetRng,
) -> PairBatch {
    let pos = (0..batch_pos)
        .map(|_| pairs.positives[rng.next_usize(pairs.positives.len())])
        .collect();
    let neg = (0..batch_neg)
        .map(|_| pairs.negatives[rng.next_usize(pairs.negatives.len())])
        .collect();
    (pos, neg)
}

/// Trains the reduction network by mini-batch gradient descent.
///
/// Every `resample_every` iterations, starting at iteration zero, the pair
/// set is reconstructed from distances in the current reduced space (same
/// quartile rule) and the period's batch is drawn from it. Both draws are a
/// pure function of (reduced vectors, org map, seed), which makes equal
/// seeds bit-identical and keeps the loss trace constant when the learning
/// rate is zero. An original-space pair construction runs first as the
/// feasibility gate and is returned for diagnostics.
pub fn train(
    store: &VectorStore,
    org_map: &OrgMap,
    hyper: &Hyper,
    seed: u64,
) -> Result<TrainOutcome, CoreError> {
    if hyper.output_dim >= store.dim() {
        return Err(CoreError::InvalidArgument(format!(
            "output dim {} must be below input dim {}",
            hyper.output_dim,
            store.dim()
        )));
    }
    if hyper.batch_pos == 0 || hyper.batch_neg == 0 || hyper.resample_every == 0 {
        return Err(CoreError::InvalidArgument(
            "batch sizes and resample period must be positive".into(),
        ));
    }
    let initial_pairs = construct_pairs(store, org_map, hyper.negative_cap, seed)?;

    let supervised: BTreeMap<Asn, Vec<f64>> = store
        .entries()
        .iter()
        .filter(|(asn, _)| org_map.contains_key(asn))
        .map(|(asn, v)| (*asn, v.clone()))
        .collect();

    let mut model = ReductionModel::init(store.dim(), hyper, seed);
    let mut loss_trace = Vec::with_capacity(hyper.iterations);
    let mut resamples = 0;
    let mut batch: Option<PairBatch> = None;

    for iteration in 0..hyper.iterations {
        if iteration % hyper.resample_every == 0 {
            let reduced = reduce_map(&model, &supervised);
            let mut rng = DetRng::derived(seed, "resample");
            let pairs = construct_pairs_in(&reduced, org_map, hyper.negative_cap, &mut rng)?;
            batch = Some(sample_batch(
                &pairs,
                hyper.batch_pos,
                hyper.batch_neg,
                &mut rng,
            ));
            resamples += 1;
        }
        let (pos, neg) = batch.as_ref().expect("batch set at iteration zero");
        let pos_inputs: Vec<(&[f64], &[f64])> = pos
            .iter()
            .map(|(a, b)| (supervised[a].as_slice(), supervised[b].as_slice()))
            .collect();
        let neg_inputs: Vec<(&[f64], &[f64])> = neg
            .iter()
            .map(|(a, b)| (supervised[a].as_slice(), supervised[b].as_slice()))
            .collect();

        let (loss, grads) =
            loss_and_grads(&model, &pos_inputs, &neg_inputs, hyper.reversed_loss_margin);
        if !loss.is_finite() {
            return Err(CoreError::Divergence { iteration });
        }
        loss_trace.push(loss);

        let lr = hyper.learning_rate;
        for (w, g) in model.w1.iter_mut().zip(&grads.w1) {
            *w -= lr * g;
        }
        for (w, g) in model.b1.iter_mut().zip(&grads.b1) {
            *w -= lr * g;
        }
        for (w, g) in model.w2.iter_mut().zip(&grads.w2) {
            *w -= lr * g;
        }
        for (w, g) in model.b2.iter_mut().zip(&grads.b2) {
            *w -= lr * g;
        }
    }

    Ok(TrainOutcome {
        model,
        loss_trace,
        resamples,
        initial_pairs,
    })
}

/// Applies the trained reduction to every store entry. New embeddings can be
/// reduced later without retraining; this is a pure forward pass.
pub fn reduce(model: &ReductionModel, store: &VectorStore) -> Result<VectorStore, CoreError> {
    if store.dim() != model.input_dim {
        return Err(CoreError::DimMismatch {
            store: store.dim(),
            expected: model.input_dim,
        });
    }
    let reduced_entries = reduce_map(model, store.entries());
    let mut out = VectorStore::new(
        model.output_dim,
        store.provider_id.clone(),
        store.template_version.clone(),
    );
    out.reduced = true;
    out.model_checksum = Some(model.checksum());
    for (asn, vec) in reduced_entries {
        out.insert(asn, vec)?;
    }
    Ok(out)
}
