mod common;

use std::fs;
use std::path::Path;

use freqforensics::config::Config;
use freqforensics::image::save_png;
use freqforensics::pipeline::{cmd_eval, cmd_train, REPORT_NAME};
use freqforensics::synth::{write_manifest, Label, Sample, MANIFEST_NAME};
use freqforensics::toynet::Variant;
use freqforensics::{Error, Image};
use rand::Rng;

/// Corpus where fakes are uniformly brighter than reals.
fn bright_fakes(root: &Path, pairs: usize, side: usize) {
    let mut r = common::rng(21);
    let mut samples = Vec::new();
    for pair in 0..pairs {
        for (label, base) in [(Label::Real, 0.3), (Label::Fake, 0.7)] {
            let img =
                Image::from_fn(side, side, 3, |_, _, _| base + r.gen_range(-0.1..0.1)).unwrap();
            let path = format!("LQ/{}/{pair:05}.png", label.as_str());
            fs::create_dir_all(root.join("LQ").join(label.as_str())).unwrap();
            save_png(&img, &root.join(&path)).unwrap();
            samples.push(Sample {
                path,
                label,
                manipulation: if label == Label::Real {
                    "none"
                } else {
                    "brighten"
                }
                .into(),
                tier: "LQ".into(),
                pair_id: format!("{pair:05}"),
            });
        }
    }
    write_manifest(&root.join(MANIFEST_NAME), &samples).unwrap();
}

#[test]
fn separable_corpus_evaluates_to_auc_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    bright_fakes(&corpus, 20, 32);
    let cfg = Config {
        corpus,
        out: dir.path().join("run"),
        side: 32,
        variant: Variant::Baseline,
        steps: 200,
        batch: 8,
        lr: 0.01,
        ..Config::default()
    };
    let summary = cmd_train(&cfg).unwrap();
    let report = cmd_eval(&cfg, &summary.checkpoint).unwrap();
    assert_eq!(report.auc, 1.0);
    assert_eq!(report.acc_greedy, 1.0);
    assert_eq!(report.n_test, 8);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join(REPORT_NAME)).unwrap()).unwrap();
    assert_eq!(json["auc"], 1.0);
}

#[test]
fn eval_rejects_a_corpus_without_the_tier() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    bright_fakes(&corpus, 10, 32);
    let cfg = Config {
        corpus,
        out: dir.path().join("run"),
        side: 32,
        steps: 2,
        batch: 2,
        ..Config::default()
    };
    let ckpt = cmd_train(&cfg).unwrap().checkpoint;
    let hq = Config {
        tier: freqforensics::QualityTier::Hq,
        ..cfg
    };
    assert!(matches!(cmd_eval(&hq, &ckpt), Err(Error::Data(_))));
}
