mod common;

use freqforensics::eval::{accuracy_at, ScoreSet};
use freqforensics::synth::Label;
use freqforensics::toynet::*;
use freqforensics::Image;
use rand::Rng;

fn small_config(variant: Variant) -> ToyNetConfig {
    ToyNetConfig {
        side: 16,
        variant,
        ..ToyNetConfig::default()
    }
}

#[test]
fn identical_images_give_identical_logits() {
    let mut r = common::rng(1);
    let net = ToyNet::new(small_config(Variant::Full), &mut r).unwrap();
    let img = common::random_image(&mut r, 16, 3);
    let logits = net.forward(&[img.clone(), img]).unwrap();
    assert_eq!(logits[0], logits[1]);
    assert!(logits[0].iter().all(|v| v.is_finite()));
}

#[test]
fn duplicating_a_batch_keeps_the_loss() {
    let mut r = common::rng(2);
    let net = ToyNet::new(small_config(Variant::Full), &mut r).unwrap();
    let a = common::random_image(&mut r, 16, 3);
    let b = common::random_image(&mut r, 16, 3);
    let once = net.loss(&[a.clone(), b.clone()], &[0, 1]).unwrap();
    let twice = net
        .loss(&[a.clone(), b.clone(), a, b], &[0, 1, 0, 1])
        .unwrap();
    assert!((once - twice).abs() < 1e-12);
}

#[test]
fn uniform_logits_give_ln2() {
    let mut r = common::rng(3);
    let mut net = ToyNet::new(small_config(Variant::Baseline), &mut r).unwrap();
    for t in net.tensors_mut() {
        if t.name.starts_with("head.") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let img = common::random_image(&mut r, 16, 3);
    let loss = net.loss(&[img], &[1]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn mixing_at_zero_gates_changes_nothing() {
    let mut r = common::rng(4);
    let with_mix = ToyNet::new(small_config(Variant::Full), &mut r).unwrap();
    let cfg = ToyNetConfig {
        mix_after: vec![],
        ..small_config(Variant::Full)
    };
    let mut without = ToyNet::new(cfg, &mut r).unwrap();
    let source = with_mix.tensors();
    for t in without.tensors_mut() {
        let src = source.iter().find(|s| s.name == t.name).unwrap();
        t.data.copy_from_slice(src.data);
    }
    let img = common::random_image(&mut r, 16, 3);
    assert_eq!(
        with_mix.forward(std::slice::from_ref(&img)).unwrap(),
        without.forward(&[img]).unwrap()
    );
}

#[test]
fn sgd_decreases_loss_on_a_fixed_batch() {
    let mut r = common::rng(5);
    let mut net = ToyNet::new(small_config(Variant::Full), &mut r).unwrap();
    let images: Vec<Image> = (0..4)
        .map(|_| common::random_image(&mut r, 16, 3))
        .collect();
    let labels = [0, 1, 0, 1];
    let mut opt = Sgd::new(&net, 0.9);
    let mut losses = vec![];
    for _ in 0..=20 {
        let (loss, grads) = net.loss_and_grads(&images, &labels).unwrap();
        losses.push(loss);
        opt.step(&mut net, &grads, 1e-3);
    }
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(rises <= 2, "{losses:?}");
    assert!(losses[20] < losses[0]);
}

fn bright_dark_set(n: usize, side: usize, seed: u64) -> Vec<(Image, usize)> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let base = if label == 1 { 0.7 } else { 0.3 };
            let img =
                Image::from_fn(side, side, 3, |_, _, _| base + r.gen_range(-0.1..0.1)).unwrap();
            (img, label)
        })
        .collect()
}

#[test]
fn learns_a_separable_toy_set() {
    let data = bright_dark_set(200, 16, 6);
    let cfg = TrainConfig {
        steps: 500,
        batch: 8,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let out = train(&small_config(Variant::Baseline), &cfg, &data).unwrap();
    let scores: Vec<_> = data
        .iter()
        .map(|(img, l)| {
            let label = if *l == 1 { Label::Fake } else { Label::Real };
            (label, out.model.score(img).unwrap())
        })
        .collect();
    let acc = accuracy_at(&ScoreSet::from_pairs(&scores).unwrap(), 0.5).unwrap();
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn training_is_deterministic() {
    let data = bright_dark_set(16, 16, 7);
    let cfg = TrainConfig {
        steps: 5,
        batch: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&small_config(Variant::Full), &cfg, &data).unwrap();
    let b = train(&small_config(Variant::Full), &cfg, &data).unwrap();
    assert_eq!(a.losses, b.losses);
    let ca = Checkpoint {
        model: a.model,
        step: 5,
        rng: a.rng,
    };
    let cb = Checkpoint {
        model: b.model,
        step: 5,
        rng: b.rng,
    };
    assert_eq!(ca.to_bytes(), cb.to_bytes());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = bright_dark_set(8, 16, 8);
    let cfg = TrainConfig {
        steps: 3,
        batch: 4,
        ..TrainConfig::default()
    };
    let out = train(&small_config(Variant::Full), &cfg, &data).unwrap();
    let ckpt = Checkpoint {
        model: out.model,
        step: 3,
        rng: out.rng,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.f3ck");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let images: Vec<Image> = data.iter().map(|d| d.0.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|d| d.1).collect();
    assert_eq!(back.step, 3);
    assert_eq!(
        back.model.forward(&images).unwrap(),
        ckpt.model.forward(&images).unwrap()
    );
    assert_eq!(
        back.model.loss(&images, &labels).unwrap().to_bits(),
        ckpt.model.loss(&images, &labels).unwrap().to_bits()
    );
    assert_eq!(back.to_bytes(), ckpt.to_bytes());
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let mut r = common::rng(9);
    let net = ToyNet::new(small_config(Variant::Lfs), &mut r).unwrap();
    let bytes = Checkpoint {
        model: net,
        step: 0,
        rng: common::rng(0),
    }
    .to_bytes();
    let origin = std::path::Path::new("mem");
    let mut flipped = bytes.clone();
    flipped[10] ^= 1; // config hash
    for bad in [&bytes[..bytes.len() - 3], &flipped[..], b"F3FT"] {
        let err = Checkpoint::from_bytes(bad, origin).unwrap_err();
        assert!(matches!(err, freqforensics::Error::Format { .. }), "{err}");
    }
}
