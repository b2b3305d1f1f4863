#![allow(dead_code)]

use freqforensics::fad::{fad_backward, fad_forward};
use freqforensics::filterbank::{FilterBank, LearnableFilter};
use freqforensics::lfs::{lfs_backward_plane, lfs_forward_plane, LfsParams};
use freqforensics::mixblock::{mixblock_backward, mixblock_forward, MixBlockParams};
use freqforensics::tensor::FeatureMap;
use freqforensics::toynet::{ToyNet, ToyNetConfig, Variant};
use freqforensics::{Image, Plane};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, side: usize, channels: usize) -> Image {
    Image::from_fn(side, side, channels, |_, _, _| rng.gen::<f64>()).unwrap()
}

/// Image with samples kept away from the [0, 1] clamp so finite
/// differences on pixels stay valid.
pub fn interior_image(rng: &mut ChaCha8Rng, side: usize, channels: usize) -> Image {
    Image::from_fn(side, side, channels, |_, _, _| rng.gen_range(0.1..0.9)).unwrap()
}

pub fn random_plane(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Plane {
    Plane::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_vec(
        c,
        h,
        w,
        (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn randomize_bank(bank: &mut FilterBank, rng: &mut ChaCha8Rng, scale: f64) {
    let size = bank.size();
    for f in bank.filters_mut() {
        *f = LearnableFilter::from_raw(Plane::from_fn(size, size, |_, _| {
            rng.gen_range(-scale..scale)
        }))
        .unwrap();
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Worst relative error of the mixblock backward pass over every parameter
/// and input entry, with loss `<wa, Fa'> + <wb, Fb'>`.
pub fn mixblock_max_rel_err(seed: u64, c: usize, h: usize, w: usize, step: f64) -> f64 {
    let mut r = rng(seed);
    let mut params = MixBlockParams::init(c, &mut r);
    params.gate_a = 0.8;
    params.gate_b = -0.6;
    let fa = random_map(&mut r, c, h, w);
    let fb = random_map(&mut r, c, h, w);
    let wa = random_map(&mut r, c, h, w);
    let wb = random_map(&mut r, c, h, w);
    let loss = |p: &MixBlockParams, fa: &FeatureMap, fb: &FeatureMap| {
        let (oa, ob) = mixblock_forward(fa, fb, p).unwrap();
        oa.dot(&wa) + ob.dot(&wb)
    };
    let grads = mixblock_backward(&wa, &wb, &fa, &fb, &params).unwrap();
    let mut worst: f64 = 0.0;

    let analytic: Vec<Vec<f64>> = grads
        .params
        .tensors()
        .iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    for (ti, an) in analytic.iter().enumerate() {
        for k in 0..an.len() {
            let mut p = params.clone();
            let num = central_difference(
                |v| {
                    p.tensors_mut()[ti].1[k] = v;
                    loss(&p, &fa, &fb)
                },
                params.tensors()[ti].1[k],
                step,
            );
            worst = worst.max(rel_err(an[k], num, 1e-6));
        }
    }
    for k in 0..fa.data().len() {
        let mut x = fa.clone();
        let orig = x.data()[k];
        let num = central_difference(
            |v| {
                x.data_mut()[k] = v;
                loss(&params, &x, &fb)
            },
            orig,
            step,
        );
        worst = worst.max(rel_err(grads.input_a.data()[k], num, 1e-6));
        let mut y = fb.clone();
        let orig = y.data()[k];
        let num = central_difference(
            |v| {
                y.data_mut()[k] = v;
                loss(&params, &fa, &y)
            },
            orig,
            step,
        );
        worst = worst.max(rel_err(grads.input_b.data()[k], num, 1e-6));
    }
    worst
}

/// End-to-end check of the full model on one `side`×`side` image: compares
/// analytic gradients to central differences for `samples` randomly chosen
/// parameters, always including decomposition and statistics filter entries.
pub fn toynet_max_rel_err(seed: u64, side: usize, samples: usize, step: f64) -> f64 {
    toynet_variant_max_rel_err(Variant::Full, seed, side, samples, step)
}

pub fn toynet_variant_max_rel_err(
    variant: Variant,
    seed: u64,
    side: usize,
    samples: usize,
    step: f64,
) -> f64 {
    let mut r = rng(seed);
    let cfg = ToyNetConfig {
        side,
        variant,
        ..ToyNetConfig::default()
    };
    let mut net = ToyNet::new(cfg, &mut r).unwrap();
    for m in &mut net.mixers {
        m.gate_a = 0.5;
        m.gate_b = -0.4;
    }
    if let Some(bank) = net.fad.as_mut() {
        randomize_bank(bank, &mut r, 0.5);
    }
    if let Some(bank) = net.lfs.as_mut() {
        randomize_bank(bank, &mut r, 0.5);
    }
    for norm in [&mut net.norm_a, &mut net.norm_b] {
        norm.shift
            .iter_mut()
            .for_each(|v| *v = r.gen_range(-0.5..0.5));
        norm.scale
            .iter_mut()
            .for_each(|v| *v = r.gen_range(0.5..2.0));
    }
    let img = interior_image(&mut r, side, 3);
    let images = [img];
    let labels = [1usize];
    let (_, grads) = net.loss_and_grads(&images, &labels).unwrap();

    // (tensor index, element index)
    let sizes: Vec<(String, usize)> = net
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), if t.trainable { t.data.len() } else { 0 }))
        .collect();
    let mut picks = Vec::new();
    for (ti, (name, len)) in sizes.iter().enumerate() {
        if (name.starts_with("fad.") || name.starts_with("lfs.")) && picks.len() < 6 {
            picks.push((ti, r.gen_range(0..*len)));
        }
    }
    let all: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(ti, (_, len))| (0..*len).map(move |k| (ti, k)))
        .collect();
    while picks.len() < samples {
        let p = *all.choose(&mut r).unwrap();
        if !picks.contains(&p) {
            picks.push(p);
        }
    }

    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (ti, k) in picks {
        let orig = net.tensors()[ti].data[k];
        let mut probe = net.clone();
        let num = central_difference(
            |v| {
                probe.tensors_mut()[ti].data[k] = v;
                probe.loss(&images, &labels).unwrap()
            },
            orig,
            step,
        );
        worst = worst.max(rel_err(analytic[ti][k], num, 1e-6));
    }
    worst
}

fn fad_loss(x: &Image, bank: &FilterBank, weights: &[Plane]) -> f64 {
    fad_forward(x, bank)
        .unwrap()
        .planes()
        .iter()
        .zip(weights)
        .map(|(y, w)| y.hadamard(w).sum())
        .sum()
}

/// Worst relative error of the decomposition backward pass over every
/// filter entry and input sample, with loss `sum_i <w_i, y_i>`.
pub fn fad_max_rel_err(seed: u64, side: usize) -> f64 {
    let mut r = rng(seed);
    let x = interior_image(&mut r, side, 3);
    let mut bank = FilterBank::fad(side).unwrap();
    randomize_bank(&mut bank, &mut r, 1.0);
    let weights: Vec<_> = (0..9).map(|_| random_plane(&mut r, side, side)).collect();
    let grads = fad_backward(&weights, &x, &bank).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;

    for band in 0..3 {
        for k in 0..side * side {
            let orig = bank.filters()[band].raw().data()[k];
            let mut probe = bank.clone();
            let num = central_difference(
                |v| {
                    probe.filters_mut()[band].raw_mut().data_mut()[k] = v;
                    fad_loss(&x, &probe, &weights)
                },
                orig,
                h,
            );
            worst = worst.max(rel_err(grads.filters[band].data()[k], num, 1e-8));
        }
    }
    for c in 0..3 {
        for y in 0..side {
            for xx in 0..side {
                let num = central_difference(
                    |v| {
                        let probe = Image::from_fn(side, side, 3, |py, px, pc| {
                            if (py, px, pc) == (y, xx, c) {
                                v
                            } else {
                                x.get(py, px, pc)
                            }
                        })
                        .unwrap();
                        fad_loss(&probe, &bank, &weights)
                    },
                    x.get(y, xx, c),
                    h,
                );
                worst = worst.max(rel_err(grads.input[c].get(y, xx), num, 1e-8));
            }
        }
    }
    worst
}

/// Worst relative error of the statistics filter gradients on a 16×16
/// plane, skipping entries whose effective filter sits at the |.| kink.
/// Also returns how many entries were compared.
pub fn lfs_max_rel_err(seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let plane = Plane::from_fn(16, 16, |_, _| r.gen::<f64>());
    let params = LfsParams::default();
    let bank = FilterBank::lfs(10, 6).unwrap();
    let map = lfs_forward_plane(&plane, &bank, &params).unwrap();
    let weights: Vec<_> = (0..6)
        .map(|_| random_plane(&mut r, map.rows(), map.cols()))
        .collect();
    let loss = |b: &FilterBank| {
        lfs_forward_plane(&plane, b, &params)
            .unwrap()
            .band_planes()
            .iter()
            .zip(&weights)
            .map(|(q, w)| q.hadamard(w).sum())
            .sum::<f64>()
    };
    let grads = lfs_backward_plane(&weights, &plane, &bank, &params).unwrap();
    let effective = bank.effective();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for band in 0..6 {
        for k in 0..100 {
            if effective[band].data()[k].abs() <= 1e-6 {
                continue;
            }
            let mut probe = bank.clone();
            let num = central_difference(
                |v| {
                    probe.filters_mut()[band].raw_mut().data_mut()[k] = v;
                    loss(&probe)
                },
                0.0,
                1e-5,
            );
            worst = worst.max(rel_err(grads[band].data()[k], num, 1e-8));
            checked += 1;
        }
    }
    (worst, checked)
}
