//! Run configuration: one JSON file describing inputs, outputs and stage
//! parameters. Relative paths are resolved against the config file's
//! directory, so a fixture directory is self-contained.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bgplens::cdr::Hyper;
use bgplens::embedder::{EmbedOptions, RetryPolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigPaths {
    pub rib: PathBuf,
    pub updates: PathBuf,
    pub relationships: PathBuf,
    pub metadata: PathBuf,
    #[serde(default)]
    pub roa: Option<PathBuf>,
    /// Overrides the bundled reserved-ASN table.
    #[serde(default)]
    pub reserved_asns: Option<PathBuf>,
    #[serde(default = "default_changes")]
    pub changes: PathBuf,
    #[serde(default = "default_segments")]
    pub segments: PathBuf,
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_model")]
    pub model: PathBuf,
    #[serde(default = "default_reduced_store")]
    pub reduced_store: PathBuf,
    #[serde(default = "default_scored")]
    pub scored: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    #[serde(default)]
    pub report_text: Option<PathBuf>,
}

fn default_changes() -> PathBuf {
    "out/changes.jsonl".into()
}
fn default_segments() -> PathBuf {
    "out/segments.jsonl".into()
}
fn default_store() -> PathBuf {
    "out/store.jsonl".into()
}
fn default_model() -> PathBuf {
    "out/model.json".into()
}
fn default_reduced_store() -> PathBuf {
    "out/reduced.jsonl".into()
}
fn default_scored() -> PathBuf {
    "out/scored.jsonl".into()
}
fn default_report() -> PathBuf {
    "out/report.json".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Mock {
        #[serde(default = "default_mock_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        /// Defaults to EMBED_ENDPOINT.
        #[serde(default)]
        endpoint: Option<String>,
        /// Defaults to EMBED_MODEL.
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        expected_dim: Option<usize>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_mock_dim() -> usize {
    64
}
fn default_timeout_secs() -> u64 {
    30
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock {
            dim: default_mock_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedSection {
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

fn default_max_batch() -> usize {
    16
}
fn default_in_flight() -> usize {
    4
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    250
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            max_batch: default_max_batch(),
            in_flight: default_in_flight(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
        }
    }
}

impl EmbedSection {
    pub fn options(&self) -> EmbedOptions {
        EmbedOptions {
            max_batch: self.max_batch,
            retry: RetryPolicy {
                max_retries: self.max_retries,
                base_delay: Duration::from_millis(self.retry_base_ms),
            },
            in_flight: self.in_flight,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_pos: usize,
    #[serde(default = "default_batch")]
    pub batch_neg: usize,
    #[serde(default = "default_resample_every")]
    pub resample_every: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_negative_cap")]
    pub negative_cap: f64,
    #[serde(default)]
    pub reversed_loss_margin: bool,
}

fn default_true() -> bool {
    true
}
fn default_hidden_dim() -> usize {
    256
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_resample_every() -> usize {
    25
}
fn default_iterations() -> usize {
    1000
}
fn default_negative_cap() -> f64 {
    4.0
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            enabled: true,
            hidden_dim: default_hidden_dim(),
            learning_rate: default_learning_rate(),
            batch_pos: default_batch(),
            batch_neg: default_batch(),
            resample_every: default_resample_every(),
            iterations: default_iterations(),
            negative_cap: default_negative_cap(),
            reversed_loss_margin: false,
        }
    }
}

impl TrainSection {
    pub fn hyper(&self, reduced_dim: usize) -> Hyper {
        Hyper {
            hidden_dim: self.hidden_dim,
            output_dim: reduced_dim,
            learning_rate: self.learning_rate,
            batch_pos: self.batch_pos,
            batch_neg: self.batch_neg,
            resample_every: self.resample_every,
            iterations: self.iterations,
            negative_cap: self.negative_cap,
            reversed_loss_margin: self.reversed_loss_margin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSection {
    /// Embed unseen ASes on demand from a minimal description; when false
    /// such changes are skipped and counted.
    #[serde(default = "default_true")]
    pub fallback_unknown: bool,
    #[serde(default)]
    pub order_slack_secs: i64,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            fallback_unknown: true,
            order_slack_secs: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateSection {
    /// "union" or "intersection" of the two paths for candidate extraction.
    #[serde(default = "default_candidate_mode")]
    pub candidate_mode: String,
}

fn default_candidate_mode() -> String {
    "union".into()
}

impl Default for AggregateSection {
    fn default() -> Self {
        Self {
            candidate_mode: default_candidate_mode(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: ConfigPaths,
    #[serde(default = "default_window_secs")]
    pub window_secs: i64,
    #[serde(default = "default_reduced_dim")]
    pub reduced_dim: usize,
    #[serde(default = "default_neighbor_batch_size")]
    pub neighbor_batch_size: usize,
    #[serde(default = "default_segment_char_limit")]
    pub segment_char_limit: usize,
    /// Halve the neighbor batch size until segments fit the char limit.
    #[serde(default = "default_true")]
    pub auto_batch_size: bool,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_window_secs() -> i64 {
    3600
}
fn default_reduced_dim() -> usize {
    16
}
fn default_neighbor_batch_size() -> usize {
    50
}
fn default_segment_char_limit() -> usize {
    8000
}
fn default_seed() -> u64 {
    42
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.rib);
        fix(&mut paths.updates);
        fix(&mut paths.relationships);
        fix(&mut paths.metadata);
        if let Some(p) = &mut paths.roa {
            fix(p);
        }
        if let Some(p) = &mut paths.reserved_asns {
            fix(p);
        }
        fix(&mut paths.changes);
        fix(&mut paths.segments);
        fix(&mut paths.store);
        fix(&mut paths.model);
        fix(&mut paths.reduced_store);
        fix(&mut paths.scored);
        fix(&mut paths.report);
        if let Some(p) = &mut paths.report_text {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_secs <= 0 {
            bail!(
                "config: window_secs must be positive, got {}",
                self.window_secs
            );
        }
        if self.reduced_dim < 2 {
            bail!(
                "config: reduced_dim must be at least 2, got {}",
                self.reduced_dim
            );
        }
        if self.neighbor_batch_size == 0 {
            bail!("config: neighbor_batch_size must be positive");
        }
        if let ProviderConfig::Mock { dim, .. } = &self.provider {
            if *dim <= self.reduced_dim {
                bail!(
                    "config: provider dim {} must exceed reduced_dim {}",
                    dim,
                    self.reduced_dim
                );
            }
        }
        self.aggregate
            .candidate_mode
            .parse::<bgplens::aggregator::CandidateMode>()
            .map_err(|e| anyhow::anyhow!("config: {e}"))?;
        Ok(())
    }
}
