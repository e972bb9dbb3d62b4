//! Embedding generation: pluggable providers, segment-mean aggregation and
//! the on-disk vector store.
//!
//! An AS description may span several segments; each segment is embedded
//! separately and the AS embedding is the componentwise mean of the segment
//! vectors. Two providers ship with the crate: a deterministic mock for
//! tests and fixtures, and an HTTP bridge speaking the embeddings wire
//! protocol (`POST <base>/embeddings`).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::as_profile::PromptSegment;
use crate::error::CoreError;
use crate::rng::{hash64, mix64};
use crate::types::Asn;

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Transient failure; the retry policy applies.
    #[error("retryable: {0}")]
    Retryable(String),
    /// Permanent failure; retrying cannot help.
    #[error("fatal: {0}")]
    Fatal(String),
}

/// A text-embedding backend. Implementations must be safe to call from
/// several worker threads at once.
pub trait Provider: Send + Sync {
    fn id(&self) -> String;
    /// Expected output dimension, when known up front.
    fn dim_hint(&self) -> Option<usize>;
    /// Embeds one batch of texts, order-preserving.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Deterministic embedding of `text`: a counter-based generator seeded with
/// a 64-bit hash of `(seed, text)` drawing `dim` values uniform in [-1, 1].
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let h = hash64(seed, text.as_bytes());
    (0..dim)
        .map(|i| {
            let u = mix64(h.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            ((u >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Test/fixture provider backed by [`mock_embed`].
#[derive(Debug, Clone)]
pub struct MockProvider {
    pub dim: usize,
    pub seed: u64,
}

impl Provider for MockProvider {
    fn id(&self) -> String {
        format!("mock-d{}-s{}", self.dim, self.seed)
    }

    fn dim_hint(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| mock_embed(t, self.dim, self.seed))
            .collect())
    }
}

/// Retry policy for provider calls.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Base delay, doubled per attempt.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Options for segment embedding.
#[derive(Debug, Clone)]
pub struct EmbedOptions {
    /// Largest batch sent to the provider in one call.
    pub max_batch: usize,
    pub retry: RetryPolicy,
    /// Concurrent provider calls when embedding many ASes.
    pub in_flight: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            max_batch: 16,
            retry: RetryPolicy::default(),
            in_flight: 4,
        }
    }
}

/// Calls the provider with retries on transient failures. Returns the
/// vectors and the number of retries consumed.
pub fn embed_with_retry(
    provider: &dyn Provider,
    texts: &[String],
    policy: &RetryPolicy,
) -> Result<(Vec<Vec<f64>>, u32), ProviderError> {
    let mut retries = 0;
    loop {
        match provider.embed_batch(texts) {
            Ok(vecs) => {
                if vecs.len() != texts.len() {
                    return Err(ProviderError::Fatal(format!(
                        "provider returned {} vectors for {} inputs",
                        vecs.len(),
                        texts.len()
                    )));
                }
                return Ok((vecs, retries));
            }
            Err(ProviderError::Retryable(msg)) => {
                if retries >= policy.max_retries {
                    return Err(ProviderError::Retryable(format!(
                        "{msg} (after {retries} retries)"
                    )));
                }
                let delay = policy.base_delay * 2u32.saturating_pow(retries);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                retries += 1;
            }
            Err(fatal) => return Err(fatal),
        }
    }
}

/// One AS embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub asn: Asn,
    pub vec: Vec<f64>,
    pub template_version: String,
    pub provider_id: String,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vec.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutcome {
    pub embedding: Embedding,
    pub retries: u32,
}

/// Embeds all segments of one AS and returns their componentwise mean.
/// A provider failure on any segment fails the whole AS: no partial mean.
pub fn embed_as(
    segments: &[PromptSegment],
    provider: &dyn Provider,
    opts: &EmbedOptions,
) -> Result<EmbedOutcome, CoreError> {
    let first = segments
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("no segments to embed".into()))?;
    let asn = first.asn;
    if segments.iter().any(|s| s.asn != asn) {
        return Err(CoreError::InvalidArgument(
            "segments for embed_as must all describe one AS".into(),
        ));
    }
    let texts: Vec<String> = segments.iter().map(|s| s.text.clone()).collect();

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
    let mut retries = 0;
    for chunk in texts.chunks(opts.max_batch.max(1)) {
        let (vecs, r) = embed_with_retry(provider, chunk, &opts.retry)
            .map_err(|source| CoreError::Provider { asn, source })?;
        retries += r;
        vectors.extend(vecs);
    }

    let dim = vectors[0].len();
    if let Some(expected) = provider.dim_hint() {
        if dim != expected {
            return Err(CoreError::Provider {
                asn,
                source: ProviderError::Fatal(format!(
                    "provider returned dim {dim}, expected {expected}"
                )),
            });
        }
    }
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(CoreError::Provider {
            asn,
            source: ProviderError::Fatal("segment vectors of mixed dimension".into()),
        });
    }

    let m = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in &vectors {
        for (acc, x) in mean.iter_mut().zip(v) {
            *acc += x;
        }
    }
    for acc in &mut mean {
        *acc /= m;
    }
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Provider {
            asn,
            source: ProviderError::Fatal("non-finite embedding component".into()),
        });
    }

    Ok(EmbedOutcome {
        embedding: Embedding {
            asn,
            vec: mean,
            template_version: first.template_version.clone(),
            provider_id: provider.id(),
        },
        retries,
    })
}

/// Totals from an [`embed_all`] run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct EmbedStats {
    pub ases: usize,
    pub segments: usize,
    pub retries: u64,
}

/// Embeds every AS in `groups`, up to `opts.in_flight` provider calls at a
/// time. Fails on the first (lowest-ASN) failure.
pub fn embed_all(
    groups: &BTreeMap<Asn, Vec<PromptSegment>>,
    provider: &dyn Provider,
    opts: &EmbedOptions,
) -> Result<(VectorStore, EmbedStats), CoreError> {
    let work: Vec<(&Asn, &Vec<PromptSegment>)> = groups.iter().collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(Asn, Result<EmbedOutcome, CoreError>)>> =
        Mutex::new(Vec::with_capacity(work.len()));

    let workers = opts.in_flight.max(1).min(work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((asn, segments)) = work.get(i) else {
                    break;
                };
                let outcome = embed_as(segments, provider, opts);
                results.lock().unwrap().push((**asn, outcome));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(asn, _)| *asn);

    let mut stats = EmbedStats::default();
    let mut store: Option<VectorStore> = None;
    for (asn, outcome) in results {
        let outcome = outcome?;
        stats.ases += 1;
        stats.segments += groups[&asn].len();
        stats.retries += u64::from(outcome.retries);
        let emb = outcome.embedding;
        let store = store.get_or_insert_with(|| {
            VectorStore::new(
                emb.dim(),
                emb.provider_id.clone(),
                emb.template_version.clone(),
            )
        });
        store.insert(emb.asn, emb.vec)?;
    }
    let store = store.ok_or_else(|| CoreError::InvalidArgument("nothing to embed".into()))?;
    Ok((store, stats))
}

/// HTTP provider configuration. `endpoint` is the base URL; the request is
/// sent to `<endpoint>/embeddings`.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub expected_dim: Option<usize>,
}

impl HttpConfig {
    /// Reads `EMBED_ENDPOINT`, `EMBED_MODEL` and optional `EMBED_API_KEY`.
    pub fn from_env() -> Result<Self, CoreError> {
        let endpoint = std::env::var("EMBED_ENDPOINT")
            .map_err(|_| CoreError::InvalidArgument("EMBED_ENDPOINT not set".into()))?;
        let model = std::env::var("EMBED_MODEL")
            .map_err(|_| CoreError::InvalidArgument("EMBED_MODEL not set".into()))?;
        Ok(Self {
            endpoint,
            model,
            api_key: std::env::var("EMBED_API_KEY").ok(),
            timeout: Duration::from_secs(30),
            expected_dim: None,
        })
    }
}

/// Bridge to a real embedding endpoint speaking the JSON wire protocol.
pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireItem>,
}

#[derive(Deserialize)]
struct WireItem {
    index: usize,
    embedding: Vec<f64>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(agent_config),
            config,
        }
    }

    fn classify(err: ureq::Error) -> ProviderError {
        match err {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
                ProviderError::Retryable(format!("http status {code}"))
            }
            ureq::Error::StatusCode(code) => ProviderError::Fatal(format!("http status {code}")),
            ureq::Error::Timeout(t) => ProviderError::Retryable(format!("timeout: {t}")),
            ureq::Error::Io(e) => ProviderError::Retryable(format!("io: {e}")),
            other => ProviderError::Fatal(other.to_string()),
        }
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn dim_hint(&self) -> Option<usize> {
        self.config.expected_dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let url = format!("{}/embeddings", self.config.endpoint.trim_end_matches('/'));
        let body = serde_json::to_vec(&WireRequest {
            model: &self.config.model,
            input: texts,
        })
        .map_err(|e| ProviderError::Fatal(e.to_string()))?;

        let mut request = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send(&body[..]).map_err(Self::classify)?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(Self::classify)?;
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("malformed response body: {e}")))?;

        // Items may arrive in any order; `index` is authoritative.
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for item in parsed.data {
            let slot = out.get_mut(item.index).ok_or_else(|| {
                ProviderError::Fatal(format!("response index {} out of range", item.index))
            })?;
            if slot.replace(item.embedding).is_some() {
                return Err(ProviderError::Fatal(format!(
                    "duplicate response index {}",
                    item.index
                )));
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| ProviderError::Fatal(format!("missing index {i}"))))
            .collect()
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
    provider_id: String,
    template_version: String,
    #[serde(default, skip_serializing_if = "is_false")]
    reduced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_checksum: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct StoreLine {
    asn: Asn,
    vec: Vec<f64>,
}

/// A homogeneous ASN-to-vector map with provenance. Used for both raw
/// provider embeddings and reduced embeddings (`reduced: true` plus the
/// reduction-model checksum in the header).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    pub provider_id: String,
    pub template_version: String,
    pub reduced: bool,
    pub model_checksum: Option<String>,
    entries: BTreeMap<Asn, Vec<f64>>,
}

impl VectorStore {
    pub fn new(dim: usize, provider_id: String, template_version: String) -> Self {
        Self {
            dim,
            provider_id,
            template_version,
            reduced: false,
            model_checksum: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.entries.contains_key(&asn)
    }

    pub fn get(&self, asn: Asn) -> Option<&[f64]> {
        self.entries.get(&asn).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Asn, &[f64])> + '_ {
        self.entries.iter().map(|(a, v)| (*a, v.as_slice()))
    }

    pub fn entries(&self) -> &BTreeMap<Asn, Vec<f64>> {
        &self.entries
    }

    pub fn insert(&mut self, asn: Asn, vec: Vec<f64>) -> Result<(), CoreError> {
        if vec.len() != self.dim {
            return Err(CoreError::DimMismatch {
                store: self.dim,
                expected: vec.len(),
            });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::InvalidArgument(format!(
                "non-finite component in vector for AS {asn}"
            )));
        }
        self.entries.insert(asn, vec);
        Ok(())
    }

    /// Header line followed by one `{asn, vec}` JSON object per line.
    pub fn save(&self, mut w: impl Write) -> Result<(), CoreError> {
        let header = StoreHeader {
            dim: self.dim,
            provider_id: self.provider_id.clone(),
            template_version: self.template_version.clone(),
            reduced: self.reduced,
            model_checksum: self.model_checksum.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (asn, vec) in &self.entries {
            serde_json::to_writer(
                &mut w,
                &StoreLine {
                    asn: *asn,
                    vec: vec.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(reader: impl BufRead) -> Result<Self, CoreError> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| CoreError::InvalidArgument("empty store file".into()))??;
        let header: StoreHeader = serde_json::from_str(&header_line)?;
        let mut store = VectorStore::new(header.dim, header.provider_id, header.template_version);
        store.reduced = header.reduced;
        store.model_checksum = header.model_checksum;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoreLine = serde_json::from_str(&line)?;
            store.insert(entry.asn, entry.vec)?;
        }
        Ok(store)
    }
}
