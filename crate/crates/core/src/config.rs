//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Unknown keys are rejected and
//! every value is checked against the owning module's preconditions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::QualityTier;
use crate::lfs::{self, LfsParams};
use crate::synth::{CorpusSpec, Manipulation};
use crate::toynet::{ToyNetConfig, TrainConfig, Variant};

/// Number of decomposition bands; the band cuts are fixed at 1/16, 1/8, 1.
pub const FAD_BANDS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub out: PathBuf,
    /// Corpus root holding `manifest.csv`.
    pub corpus: PathBuf,
    pub checkpoint: Option<PathBuf>,

    pub side: usize,
    pub n_pairs: usize,
    pub manipulations: Vec<Manipulation>,
    pub tiers: Vec<QualityTier>,
    pub hq_quality: u8,
    pub lq_quality: u8,

    pub fad_bands: usize,
    pub lfs_window: usize,
    pub lfs_stride: usize,
    pub lfs_bands: usize,
    pub lfs_epsilon: f64,

    pub variant: Variant,
    pub widths: [usize; 3],
    pub mix_after: Vec<usize>,
    /// Rescale baseline widths to the full model's parameter count.
    pub match_baseline: bool,

    /// Tier used for training and evaluation.
    pub tier: QualityTier,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub steps: usize,
    pub log_every: usize,

    pub bench_runs: usize,
    pub bench_sizes: Vec<usize>,
    pub bench_strides: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        let model = ToyNetConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            corpus: PathBuf::from("corpus"),
            checkpoint: None,
            side: corpus.side,
            n_pairs: corpus.n_pairs,
            manipulations: corpus.manipulations,
            tiers: corpus.tiers,
            hq_quality: corpus.hq_quality,
            lq_quality: corpus.lq_quality,
            fad_bands: FAD_BANDS,
            lfs_window: lfs::DEFAULT_WINDOW,
            lfs_stride: lfs::DEFAULT_STRIDE,
            lfs_bands: lfs::DEFAULT_BANDS,
            lfs_epsilon: lfs::DEFAULT_EPSILON,
            variant: model.variant,
            widths: model.widths,
            mix_after: model.mix_after,
            match_baseline: true,
            tier: QualityTier::Lq,
            lr: train.lr,
            momentum: train.momentum,
            batch: train.batch,
            steps: train.steps,
            log_every: train.log_every,
            bench_runs: 30,
            bench_sizes: vec![8, 16, 32, 64],
            bench_strides: vec![10, 6, 4, 3, 2, 1],
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value '{value}' for {key}"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(key, v))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Parses a document on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key; used for both file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "corpus" => self.corpus = PathBuf::from(value),
            "checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "side" => self.side = parse(key, value)?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "manipulations" => self.manipulations = parse_list(key, value)?,
            "tiers" => self.tiers = parse_list(key, value)?,
            "hq_quality" => self.hq_quality = parse(key, value)?,
            "lq_quality" => self.lq_quality = parse(key, value)?,
            "fad_bands" => self.fad_bands = parse(key, value)?,
            "lfs_window" => self.lfs_window = parse(key, value)?,
            "lfs_stride" => self.lfs_stride = parse(key, value)?,
            "lfs_bands" => self.lfs_bands = parse(key, value)?,
            "lfs_epsilon" => self.lfs_epsilon = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "widths" => {
                self.widths = parse_list::<usize>(key, value)?
                    .try_into()
                    .map_err(|_| bad(key, value))?
            }
            "mix_after" => self.mix_after = parse_list(key, value)?,
            "match_baseline" => self.match_baseline = parse(key, value)?,
            "tier" => self.tier = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "bench_runs" => self.bench_runs = parse(key, value)?,
            "bench_sizes" => self.bench_sizes = parse_list(key, value)?,
            "bench_strides" => self.bench_strides = parse_list(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_spec().validate()?;
        if self.fad_bands != FAD_BANDS {
            return Err(Error::Config(format!(
                "fad_bands must be {FAD_BANDS}: the band cuts are fixed"
            )));
        }
        if self.lfs_window == 0 || self.lfs_window > self.side {
            return Err(Error::Config(format!(
                "lfs_window {} not in 1..={}",
                self.lfs_window, self.side
            )));
        }
        if self.lfs_bands == 0 || self.lfs_bands > 2 * (self.lfs_window - 1) + 1 {
            return Err(Error::Config(format!(
                "lfs_bands {} not in 1..={} for window {}",
                self.lfs_bands,
                2 * (self.lfs_window - 1) + 1,
                self.lfs_window
            )));
        }
        if self.bench_runs < 30 {
            return Err(Error::Config("bench_runs must be at least 30".into()));
        }
        if self.bench_sizes.is_empty() || self.bench_sizes.contains(&0) {
            return Err(Error::Config("bench_sizes must be positive".into()));
        }
        if self.bench_strides.is_empty() || self.bench_strides.contains(&0) {
            return Err(Error::Config("bench_strides must be positive".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_pairs: self.n_pairs,
            side: self.side,
            manipulations: self.manipulations.clone(),
            tiers: self.tiers.clone(),
            hq_quality: self.hq_quality,
            lq_quality: self.lq_quality,
            seed: self.seed,
        }
    }

    pub fn lfs_params(&self) -> LfsParams {
        LfsParams {
            window: self.lfs_window,
            stride: self.lfs_stride,
            epsilon: self.lfs_epsilon,
        }
    }

    /// Model architecture before any baseline width matching.
    pub fn model_config(&self) -> ToyNetConfig {
        ToyNetConfig {
            side: self.side,
            image_channels: 3,
            widths: self.widths,
            mix_after: self.mix_after.clone(),
            variant: self.variant,
            lfs: self.lfs_params(),
            lfs_bands: self.lfs_bands,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch: self.batch,
            steps: self.steps,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn quality(&self, tier: QualityTier) -> Option<u8> {
        self.corpus_spec().quality(tier)
    }

    /// Canonical text form; `Config::parse(c.to_text())` returns `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("corpus", self.corpus.display().to_string());
        kv(
            "checkpoint",
            self.checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("side", self.side.to_string());
        kv("n_pairs", self.n_pairs.to_string());
        kv("manipulations", join(&self.manipulations));
        kv("tiers", join(&self.tiers));
        kv("hq_quality", self.hq_quality.to_string());
        kv("lq_quality", self.lq_quality.to_string());
        kv("fad_bands", self.fad_bands.to_string());
        kv("lfs_window", self.lfs_window.to_string());
        kv("lfs_stride", self.lfs_stride.to_string());
        kv("lfs_bands", self.lfs_bands.to_string());
        kv("lfs_epsilon", format!("{:e}", self.lfs_epsilon));
        kv("variant", self.variant.to_string());
        kv("widths", join(&self.widths));
        kv("mix_after", join(&self.mix_after));
        kv("match_baseline", self.match_baseline.to_string());
        kv("tier", self.tier.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("batch", self.batch.to_string());
        kv("steps", self.steps.to_string());
        kv("log_every", self.log_every.to_string());
        kv("bench_runs", self.bench_runs.to_string());
        kv("bench_sizes", join(&self.bench_sizes));
        kv("bench_strides", join(&self.bench_strides));
        s
    }
}
