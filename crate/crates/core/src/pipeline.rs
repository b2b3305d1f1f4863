//! End-to-end commands: corpus generation, feature extraction, training,
//! evaluation, ablations and kernel benchmarks. Each writes its artifacts
//! under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::dct::{dct2, dct2_naive, sliding_dct};
use crate::error::{Error, Result};
use crate::eval::{group_average, val_test_protocol, EvalReport, ScoreEntry, ScoreSet};
use crate::fad::fad_forward;
use crate::filterbank::FilterBank;
use crate::image::{load_image, resize_bilinear, Image, QualityTier};
use crate::lfs::lfs_forward;
use crate::persist::FeatureDump;
use crate::plane::Plane;
use crate::synth::{self, build_corpus, read_manifest, split_of, Sample, Split};
use crate::toynet::{matched_baseline, train, Checkpoint, ToyNet, ToyNetConfig, Variant};

pub const CHECKPOINT_NAME: &str = "checkpoint.f3ck";
pub const TRAIN_LOG_NAME: &str = "train_log.csv";
pub const REPORT_NAME: &str = "report.json";
pub const ROC_NAME: &str = "roc.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates the corpus described by `cfg` into `cfg.out`.
pub fn cmd_gen(cfg: &Config) -> Result<Vec<Sample>> {
    create_dir(&cfg.out)?;
    let samples = build_corpus(&cfg.corpus_spec(), &cfg.out)?;
    info!("wrote {} images to {}", samples.len(), cfg.out.display());
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractMode {
    Fad,
    Lfs,
    Both,
}

impl FromStr for ExtractMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fad" => Ok(ExtractMode::Fad),
            "lfs" => Ok(ExtractMode::Lfs),
            "both" => Ok(ExtractMode::Both),
            _ => Err(Error::arg(format!("unknown extract mode '{s}'"))),
        }
    }
}

/// Image files under `input` (the file itself, or the sorted PNG/JPEG
/// entries of a directory).
fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(input).map_err(|e| Error::io(input, e))?;
    if !meta.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| Error::io(input, e))? {
        let path = entry.map_err(|e| Error::io(input, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no images in {}", input.display())));
    }
    Ok(files)
}

/// Decomposition components as a `(3C, H, W)` dump, band-major.
pub fn fad_dump(img: &Image, bank: &FilterBank) -> Result<FeatureDump> {
    let comps = fad_forward(img, bank)?;
    let dims = vec![comps.planes().len(), img.height(), img.width()];
    let data = comps
        .into_planes()
        .into_iter()
        .flat_map(Plane::into_vec)
        .collect();
    FeatureDump::f64(dims, data)
}

/// Local statistics as a `(rows, cols, M)` dump.
pub fn lfs_dump(img: &Image, bank: &FilterBank, cfg: &Config) -> Result<FeatureDump> {
    let map = lfs_forward(img, bank, &cfg.lfs_params())?;
    FeatureDump::f64(
        vec![map.rows(), map.cols(), map.m_bands()],
        map.data().to_vec(),
    )
}

/// Writes `<stem>.fad.f3ft` and/or `<stem>.lfs.f3ft` per input image into
/// `cfg.out`. Filters come from `cfg.checkpoint` when set, else are zero.
pub fn cmd_extract(cfg: &Config, input: &Path, mode: ExtractMode) -> Result<Vec<PathBuf>> {
    let model = match &cfg.checkpoint {
        Some(path) => Some(Checkpoint::load(path)?.model),
        None => None,
    };
    let lfs_bank = match model.as_ref().and_then(|m| m.lfs.clone()) {
        Some(bank) => bank,
        None => FilterBank::lfs(cfg.lfs_window, cfg.lfs_bands)?,
    };
    create_dir(&cfg.out)?;
    let mut written = Vec::new();
    for path in image_inputs(input)? {
        let img = load_image(&path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        if matches!(mode, ExtractMode::Fad | ExtractMode::Both) {
            let bank = match model.as_ref().and_then(|m| m.fad.clone()) {
                Some(bank) => bank,
                None => FilterBank::fad(img.height())?,
            };
            let out = cfg.out.join(format!("{stem}.fad.f3ft"));
            fad_dump(&img, &bank)?.write(&out)?;
            written.push(out);
        }
        if matches!(mode, ExtractMode::Lfs | ExtractMode::Both) {
            let out = cfg.out.join(format!("{stem}.lfs.f3ft"));
            lfs_dump(&img, &lfs_bank, cfg)?.write(&out)?;
            written.push(out);
        }
    }
    Ok(written)
}

/// Images of one tier and split, resized to `side` when needed.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labelled(&self) -> Vec<(Image, usize)> {
        self.images
            .iter()
            .zip(&self.samples)
            .map(|(img, s)| (img.clone(), s.label.index()))
            .collect()
    }
}

pub fn load_split(
    root: &Path,
    samples: &[Sample],
    tier: QualityTier,
    split: Split,
    side: usize,
) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for s in samples {
        if s.tier()? != tier || split_of(s.pair_index()?) != split {
            continue;
        }
        let mut img = load_image(&root.join(&s.path))?;
        if img.channels() != 3 {
            return Err(Error::Data(format!("{} is not an RGB image", s.path)));
        }
        if (img.height(), img.width()) != (side, side) {
            img = resize_bilinear(&img, side, side)?;
        }
        ds.images.push(img);
        ds.samples.push(s.clone());
    }
    Ok(ds)
}

/// Train, validation and test sets of the configured tier.
pub fn load_corpus(cfg: &Config) -> Result<(Dataset, Dataset, Dataset)> {
    let manifest = cfg.corpus.join(synth::MANIFEST_NAME);
    let samples = read_manifest(&manifest)?;
    let load = |split| load_split(&cfg.corpus, &samples, cfg.tier, split, cfg.side);
    let (train, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    for (name, ds) in [("train", &train), ("validation", &val), ("test", &test)] {
        if ds.is_empty() {
            return Err(Error::Data(format!(
                "{name} split of tier {} is empty",
                cfg.tier
            )));
        }
    }
    Ok((train, val, test))
}

/// Architecture to train; baselines are width-matched to the full model when
/// `match_baseline` is set.
pub fn resolved_model_config(cfg: &Config) -> Result<ToyNetConfig> {
    let model = cfg.model_config();
    if model.variant != Variant::Baseline || !cfg.match_baseline {
        return Ok(model);
    }
    let full = ToyNetConfig {
        variant: Variant::Full,
        ..model
    };
    let target = ToyNet::new(full.clone(), &mut ChaCha8Rng::seed_from_u64(0))?.param_count();
    Ok(matched_baseline(&full, target))
}

pub fn score_dataset(model: &ToyNet, ds: &Dataset) -> Result<ScoreSet> {
    let mut entries = Vec::with_capacity(ds.len());
    for (img, s) in ds.images.iter().zip(&ds.samples) {
        entries.push(ScoreEntry {
            id: s.path.clone(),
            group: s.path.clone(),
            label: s.label,
            score: model.score(img)?,
        });
    }
    group_average(&ScoreSet::new(entries)?)
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub final_loss: f64,
    pub losses: Vec<(usize, f64)>,
    pub model: ToyNet,
}

/// Trains on the corpus train split and writes the checkpoint and loss trace.
pub fn cmd_train(cfg: &Config) -> Result<TrainSummary> {
    let (train_set, _, _) = load_corpus(cfg)?;
    let model_cfg = resolved_model_config(cfg)?;
    info!(
        "training {} (widths {:?}) on {} images",
        model_cfg.variant,
        model_cfg.widths,
        train_set.len()
    );
    let outcome = train(&model_cfg, &cfg.train_config(), &train_set.labelled())?;
    create_dir(&cfg.out)?;
    let checkpoint = cfg.out.join(CHECKPOINT_NAME);
    Checkpoint {
        model: outcome.model.clone(),
        step: outcome.steps as u64,
        rng: outcome.rng,
    }
    .save(&checkpoint)?;
    let mut log = String::from("step,loss\n");
    for (step, loss) in &outcome.losses {
        log.push_str(&format!("{step},{loss}\n"));
    }
    write_text(&cfg.out.join(TRAIN_LOG_NAME), &log)?;
    let final_loss = outcome.losses.last().map(|l| l.1).unwrap_or(f64::NAN);
    Ok(TrainSummary {
        checkpoint,
        final_loss,
        losses: outcome.losses,
        model: outcome.model,
    })
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    report.write_json(&out.join(REPORT_NAME))?;
    report.write_roc_csv(&out.join(ROC_NAME))
}

/// Scores the validation and test splits with a checkpoint and reports test
/// metrics at the validation-fitted threshold.
pub fn cmd_eval(cfg: &Config, checkpoint: &Path) -> Result<EvalReport> {
    let model = Checkpoint::load(checkpoint)?.model;
    let cfg = Config {
        side: model.config().side,
        ..cfg.clone()
    };
    let (_, val, test) = load_corpus(&cfg)?;
    let val_scores = score_dataset(&model, &val)?;
    let test_scores = score_dataset(&model, &test)?;
    create_dir(&cfg.out)?;
    val_scores.write_csv(&cfg.out.join("scores_val.csv"))?;
    test_scores.write_csv(&cfg.out.join("scores_test.csv"))?;
    let report = val_test_protocol(&val_scores, &test_scores)?;
    write_report(&report, &cfg.out)?;
    Ok(report)
}

/// Evaluates precomputed scores; the test set doubles as validation set when
/// no separate one is given.
pub fn cmd_eval_scores(test_csv: &Path, val_csv: Option<&Path>, out: &Path) -> Result<EvalReport> {
    let test = group_average(&ScoreSet::read_csv(test_csv)?)?;
    let val = match val_csv {
        Some(path) => group_average(&ScoreSet::read_csv(path)?)?,
        None => test.clone(),
    };
    let report = val_test_protocol(&val, &test)?;
    write_report(&report, out)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Window,
    Stride,
    Bands,
    Branch,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(AblationAxis::Window),
            "stride" => Ok(AblationAxis::Stride),
            "bands" => Ok(AblationAxis::Bands),
            "branch" => Ok(AblationAxis::Branch),
            _ => Err(Error::arg(format!("unknown ablation axis '{s}'"))),
        }
    }
}

pub const ABLATION_WINDOWS: [usize; 5] = [2, 5, 10, 20, 30];
pub const ABLATION_STRIDES: [usize; 6] = [10, 6, 4, 3, 2, 1];
pub const ABLATION_BANDS: [usize; 6] = [1, 2, 3, 4, 5, 6];

impl AblationAxis {
    /// `(label, config)` for every point on the axis. Statistics-axis points
    /// use the configured variant if it has a statistics stream, else the full
    /// model; windows too small for the band count get the largest valid count.
    pub fn variants(self, cfg: &Config) -> Vec<(String, Config)> {
        let lfs_base = Config {
            variant: if cfg.variant.uses_lfs() {
                cfg.variant
            } else {
                Variant::Full
            },
            ..cfg.clone()
        };
        match self {
            AblationAxis::Window => ABLATION_WINDOWS
                .iter()
                .map(|&w| {
                    let c = Config {
                        lfs_window: w,
                        lfs_bands: cfg.lfs_bands.min(2 * (w - 1) + 1),
                        ..lfs_base.clone()
                    };
                    (format!("window={w}"), c)
                })
                .collect(),
            AblationAxis::Stride => ABLATION_STRIDES
                .iter()
                .map(|&s| {
                    (
                        format!("stride={s}"),
                        Config {
                            lfs_stride: s,
                            ..lfs_base.clone()
                        },
                    )
                })
                .collect(),
            AblationAxis::Bands => ABLATION_BANDS
                .iter()
                .map(|&m| {
                    (
                        format!("bands={m}"),
                        Config {
                            lfs_bands: m,
                            ..lfs_base.clone()
                        },
                    )
                })
                .collect(),
            AblationAxis::Branch => Variant::ALL
                .iter()
                .map(|&v| {
                    (
                        v.to_string(),
                        Config {
                            variant: v,
                            ..cfg.clone()
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub auc: f64,
    pub acc_greedy: f64,
    pub wall_secs: f64,
}

/// Trains and evaluates a model from `cfg` on preloaded splits.
pub fn fit_and_evaluate(
    cfg: &Config,
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<(ToyNet, EvalReport)> {
    cfg.validate()?;
    let model_cfg = resolved_model_config(cfg)?;
    let outcome = train(&model_cfg, &cfg.train_config(), &train_set.labelled())?;
    let report = val_test_protocol(
        &score_dataset(&outcome.model, val)?,
        &score_dataset(&outcome.model, test)?,
    )?;
    Ok((outcome.model, report))
}

/// Runs every point of an ablation axis with the shared seed and writes
/// `ablation_<axis>.csv`.
pub fn cmd_ablate(cfg: &Config, axis: AblationAxis) -> Result<Vec<AblationRow>> {
    let (train_set, val, test) = load_corpus(cfg)?;
    let mut rows = Vec::new();
    for (label, variant_cfg) in axis.variants(cfg) {
        let start = Instant::now();
        let (_, report) = fit_and_evaluate(&variant_cfg, &train_set, &val, &test)?;
        let row = AblationRow {
            variant: label,
            auc: report.auc,
            acc_greedy: report.acc_greedy,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        info!(
            "{} auc {:.4} acc {:.4}",
            row.variant, row.auc, row.acc_greedy
        );
        rows.push(row);
    }
    create_dir(&cfg.out)?;
    let name = format!("ablation_{}.csv", format!("{axis:?}").to_lowercase());
    let mut csv = String::from("variant,auc,acc_greedy,wall_secs\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.variant, r.auc, r.acc_greedy, r.wall_secs
        ));
    }
    write_text(&cfg.out.join(name), &csv)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub op: &'static str,
    pub size: usize,
    pub window: usize,
    pub stride: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

fn time_runs(runs: usize, mut f: impl FnMut()) -> (f64, f64) {
    let samples: Vec<f64> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1).max(1) as f64;
    (mean, var.sqrt())
}

/// Largest naive-vs-separable disagreement over the benchmark sizes.
pub fn bench_cross_check(cfg: &Config) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cfg.bench_sizes
        .iter()
        .map(|&n| {
            let p = Plane::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            dct2(&p).max_abs_diff(&dct2_naive(&p))
        })
        .fold(0.0, f64::max)
}

/// Times `dct2` per size and `sliding_dct` per stride (at `lfs_window` on a
/// `side`×`side` plane), after checking the fast transform against the naive
/// one. Writes `bench.csv`.
pub fn cmd_bench(cfg: &Config) -> Result<Vec<BenchRow>> {
    let worst = bench_cross_check(cfg);
    if !(worst < 1e-10) {
        return Err(Error::Data(format!(
            "separable transform disagrees with naive one by {worst:e}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.bench_sizes {
        let p = Plane::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let (mean_ms, std_ms) = time_runs(cfg.bench_runs, || {
            std::hint::black_box(dct2(std::hint::black_box(&p)));
        });
        rows.push(BenchRow {
            op: "dct2",
            size: n,
            window: n,
            stride: 0,
            runs: cfg.bench_runs,
            mean_ms,
            std_ms,
        });
    }
    let p = Plane::from_fn(cfg.side, cfg.side, |_, _| rng.gen_range(-1.0..1.0));
    for &s in &cfg.bench_strides {
        let mut result = Ok(());
        let (mean_ms, std_ms) = time_runs(cfg.bench_runs, || {
            if let Err(e) = sliding_dct(std::hint::black_box(&p), cfg.lfs_window, s) {
                result = Err(e);
            }
        });
        result?;
        rows.push(BenchRow {
            op: "sliding_dct",
            size: cfg.side,
            window: cfg.lfs_window,
            stride: s,
            runs: cfg.bench_runs,
            mean_ms,
            std_ms,
        });
    }
    create_dir(&cfg.out)?;
    let mut csv = String::from("op,size,window,stride,runs,mean_ms,std_ms\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            r.op, r.size, r.window, r.stride, r.runs, r.mean_ms, r.std_ms
        ));
    }
    write_text(&cfg.out.join("bench.csv"), &csv)?;
    Ok(rows)
}
