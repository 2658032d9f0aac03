//! Flat run configuration: `key=value` files, CLI overrides, and a sorted
//! echo so every output directory carries the exact effective settings.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TrainConfig;

/// Which batching policy builds sub-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchingPolicy {
    TokenBudget,
    Shape,
    TimeBalanced,
}

impl BatchingPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "token_budget" => Ok(BatchingPolicy::TokenBudget),
            "shape" => Ok(BatchingPolicy::Shape),
            "time_balanced" => Ok(BatchingPolicy::TimeBalanced),
            other => Err(Error::Config(format!(
                "unknown batching_policy {other:?} (token_budget | shape | time_balanced)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BatchingPolicy::TokenBudget => "token_budget",
            BatchingPolicy::Shape => "shape",
            BatchingPolicy::TimeBalanced => "time_balanced",
        }
    }
}

/// Every knob of a run. Defaults follow the reference experiment settings
/// (cumul=16, bucket_mb=150, warmup=4000, lr_peak=5e-4, max_tokens=3500,
/// target_percentile=90).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workers: usize,
    pub cumul: usize,
    pub steps: usize,
    pub seed: u64,

    pub max_tokens: usize,
    pub batching_policy: BatchingPolicy,
    pub shape_tolerance: usize,
    pub target_percentile: f64,
    pub hist_bins: usize,

    pub fp16: bool,
    pub lr_peak: f64,
    pub lr_2x: bool,
    pub warmup_steps: u64,
    pub label_smoothing: f64,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,

    pub bucket_mb: u64,
    pub overlap: bool,
    pub comm_latency_s: f64,
    pub comm_bandwidth_bytes_per_s: f64,
    pub jitter_sigma: f64,
    /// Multiplies the toy model's per-layer byte sizes when modeling
    /// communication, to study transfer volumes of much larger models.
    pub param_scale: u64,

    pub mix_ratio: String,
    pub mix_samples: usize,

    pub corpus: String,
    pub vocab: String,
    pub clean_corpus: String,
    pub noisy_corpus: String,
    pub measurements: String,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workers: 8,
            cumul: 16,
            steps: 100,
            seed: 1,
            max_tokens: 3500,
            batching_policy: BatchingPolicy::TokenBudget,
            shape_tolerance: 4,
            target_percentile: 90.0,
            hist_bins: 20,
            fp16: false,
            lr_peak: 5e-4,
            lr_2x: false,
            warmup_steps: 4000,
            label_smoothing: 0.1,
            embed_dim: 16,
            hidden_dim: 32,
            num_layers: 6,
            bucket_mb: 150,
            overlap: false,
            comm_latency_s: 1e-4,
            comm_bandwidth_bytes_per_s: 2e9,
            jitter_sigma: 0.0,
            param_scale: 1,
            mix_ratio: "1:1".to_string(),
            mix_samples: 100_000,
            corpus: String::new(),
            vocab: String::new(),
            clean_corpus: String::new(),
            noisy_corpus: String::new(),
            measurements: String::new(),
            out: String::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}={value}: expected a boolean"))),
    }
}

impl RunConfig {
    /// Set one knob from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "workers" => self.workers = parse(key, value)?,
            "cumul" => self.cumul = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_tokens" => self.max_tokens = parse(key, value)?,
            "batching_policy" => self.batching_policy = BatchingPolicy::parse(value)?,
            "shape_tolerance" => self.shape_tolerance = parse(key, value)?,
            "target_percentile" => self.target_percentile = parse(key, value)?,
            "hist_bins" => self.hist_bins = parse(key, value)?,
            "fp16" => self.fp16 = parse_bool(key, value)?,
            "lr_peak" => self.lr_peak = parse(key, value)?,
            "lr_2x" => self.lr_2x = parse_bool(key, value)?,
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "label_smoothing" => self.label_smoothing = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "bucket_mb" => self.bucket_mb = parse(key, value)?,
            "overlap" => self.overlap = parse_bool(key, value)?,
            "comm_latency_s" => self.comm_latency_s = parse(key, value)?,
            "comm_bandwidth_bytes_per_s" => {
                self.comm_bandwidth_bytes_per_s = parse(key, value)?
            }
            "jitter_sigma" => self.jitter_sigma = parse(key, value)?,
            "param_scale" => self.param_scale = parse(key, value)?,
            "mix_ratio" => self.mix_ratio = value.to_string(),
            "mix_samples" => self.mix_samples = parse(key, value)?,
            "corpus" => self.corpus = value.to_string(),
            "vocab" => self.vocab = value.to_string(),
            "clean_corpus" => self.clean_corpus = value.to_string(),
            "noisy_corpus" => self.noisy_corpus = value.to_string(),
            "measurements" => self.measurements = value.to_string(),
            "out" => self.out = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Merge a `key=value` file. Blank lines and `#` comments are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let body = std::fs::read_to_string(path)?;
        for (lineno, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply `key=value` overrides from the command line (they win over the
    /// file).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Effective peak learning rate: doubled under the 2x regime.
    pub fn effective_lr_peak(&self) -> f64 {
        if self.lr_2x {
            self.lr_peak * 2.0
        } else {
            self.lr_peak
        }
    }

    pub fn bucket_bytes(&self) -> u64 {
        self.bucket_mb * (1 << 20)
    }

    /// Model/optimizer configuration for a given vocabulary size.
    pub fn train_config(&self, vocab_size: usize) -> TrainConfig {
        TrainConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            peak_lr: self.effective_lr_peak(),
            warmup_steps: self.warmup_steps,
            label_smoothing: self.label_smoothing,
            ..TrainConfig::default()
        }
    }

    /// All knobs in sorted `key=value` form.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("workers", self.workers.to_string());
        put("cumul", self.cumul.to_string());
        put("steps", self.steps.to_string());
        put("seed", self.seed.to_string());
        put("max_tokens", self.max_tokens.to_string());
        put("batching_policy", self.batching_policy.name().to_string());
        put("shape_tolerance", self.shape_tolerance.to_string());
        put("target_percentile", self.target_percentile.to_string());
        put("hist_bins", self.hist_bins.to_string());
        put("fp16", self.fp16.to_string());
        put("lr_peak", self.lr_peak.to_string());
        put("lr_2x", self.lr_2x.to_string());
        put("warmup_steps", self.warmup_steps.to_string());
        put("label_smoothing", self.label_smoothing.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("hidden_dim", self.hidden_dim.to_string());
        put("num_layers", self.num_layers.to_string());
        put("bucket_mb", self.bucket_mb.to_string());
        put("overlap", self.overlap.to_string());
        put("comm_latency_s", self.comm_latency_s.to_string());
        put(
            "comm_bandwidth_bytes_per_s",
            self.comm_bandwidth_bytes_per_s.to_string(),
        );
        put("jitter_sigma", self.jitter_sigma.to_string());
        put("param_scale", self.param_scale.to_string());
        put("mix_ratio", self.mix_ratio.clone());
        put("mix_samples", self.mix_samples.to_string());
        put("corpus", self.corpus.clone());
        put("vocab", self.vocab.clone());
        put("clean_corpus", self.clean_corpus.clone());
        put("noisy_corpus", self.noisy_corpus.clone());
        put("measurements", self.measurements.clone());
        put("out", self.out.clone());
        m
    }

    /// Write the effective config into the output directory so the run can
    /// be reproduced from it.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            out.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(dir.join("config.effective.cfg"), out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.cumul, 16);
        assert_eq!(c.bucket_mb, 150);
        assert_eq!(c.warmup_steps, 4000);
        assert_eq!(c.lr_peak, 5e-4);
        assert_eq!(c.max_tokens, 3500);
        assert_eq!(c.target_percentile, 90.0);
        assert_eq!(c.workers, 8);
    }

    #[test]
    fn lr_2x_doubles_the_peak() {
        let mut c = RunConfig::default();
        assert_eq!(c.effective_lr_peak(), 5e-4);
        c.set("lr_2x", "true").unwrap();
        assert_eq!(c.effective_lr_peak(), 1e-3);
    }

    #[test]
    fn file_then_overrides() {
        let dir = std::env::temp_dir().join("gradlab_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.cfg");
        std::fs::write(&p, "# comment\nworkers=4\ncumul = 2\nfp16=true\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&p).unwrap();
        assert_eq!(c.workers, 4);
        assert_eq!(c.cumul, 2);
        assert!(c.fp16);
        c.apply_overrides(&["workers=2".to_string()]).unwrap();
        assert_eq!(c.workers, 2);
        assert_eq!(c.cumul, 2);
    }

    #[test]
    fn echo_round_trips() {
        let dir = std::env::temp_dir().join("gradlab_cfg_echo");
        std::fs::create_dir_all(&dir).unwrap();
        let mut c = RunConfig::default();
        c.set("batching_policy", "time_balanced").unwrap();
        c.set("seed", "17").unwrap();
        c.echo_to(&dir).unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&dir.join("config.effective.cfg")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(c.set("no_such_key", "1").is_err());
        assert!(c.set("workers", "many").is_err());
        assert!(c.set("fp16", "maybe").is_err());
        assert!(c.set("batching_policy", "magic").is_err());
    }
}
