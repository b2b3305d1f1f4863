//! The two-stream classifier.
//!
//! Stream A sees either raw pixels or the decomposition components; stream B
//! sees the local-statistics map, nearest-neighbour resized to half the input
//! side so that after its first (unpooled) stage it matches stream A's stage-1
//! output. Each stream is three `conv3x3 -> relu -> [avgpool2]` stages with
//! widths `widths[0..3]`. Cross-attention blocks may follow any stage where both
//! streams exist. Pooled features of the present streams are concatenated and
//! mapped to two logits (0 = real, 1 = fake).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dct::{Dct2d, Spectrum};
use crate::error::{Error, Result};
use crate::fad;
use crate::filterbank::FilterBank;
use crate::image::Image;
use crate::lfs::{self, LfsParams};
use crate::mixblock::{mixblock_backward, mixblock_forward, MixBlockParams};
use crate::plane::Plane;
use crate::tensor::FeatureMap;

use super::layers::{
    avg_pool2, avg_pool2_backward, cross_entropy, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, softmax, Conv3x3, Linear,
};

pub const STAGES: usize = 3;

/// Which branches a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Single stream on raw pixels.
    Baseline,
    /// Single stream on decomposition components.
    Fad,
    /// Single stream on the local-statistics map.
    Lfs,
    /// Both frequency streams, fused only at the head.
    FadLfs,
    /// Both frequency streams with cross-attention fusion.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Fad,
        Variant::Lfs,
        Variant::FadLfs,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Fad => "fad",
            Variant::Lfs => "lfs",
            Variant::FadLfs => "fad+lfs",
            Variant::Full => "full",
        }
    }

    pub fn uses_fad(self) -> bool {
        matches!(self, Variant::Fad | Variant::FadLfs | Variant::Full)
    }

    pub fn uses_lfs(self) -> bool {
        matches!(self, Variant::Lfs | Variant::FadLfs | Variant::Full)
    }

    pub fn has_stream_a(self) -> bool {
        self != Variant::Lfs
    }

    pub fn uses_mix(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }
}

/// Architecture of a [`ToyNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNetConfig {
    pub side: usize,
    pub image_channels: usize,
    pub widths: [usize; STAGES],
    /// 1-based stage indices followed by a cross-attention block.
    pub mix_after: Vec<usize>,
    pub variant: Variant,
    pub lfs: LfsParams,
    pub lfs_bands: usize,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        Self {
            side: 64,
            image_channels: 3,
            widths: [8, 16, 32],
            mix_after: vec![2, 3],
            variant: Variant::Full,
            lfs: LfsParams::default(),
            lfs_bands: lfs::DEFAULT_BANDS,
        }
    }
}

impl ToyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 8 || !self.side.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "input side {} must be a positive multiple of 8",
                self.side
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::Config("image channels must be 1 or 3".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("stage widths must be positive".into()));
        }
        if let Some(bad) = self.mix_after.iter().find(|&&s| s == 0 || s > STAGES) {
            return Err(Error::Config(format!(
                "mix stage {bad} outside 1..={STAGES}"
            )));
        }
        let mut sorted = self.mix_after.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.mix_after {
            return Err(Error::Config(
                "mix_after must be strictly increasing".into(),
            ));
        }
        if self.variant.uses_lfs() {
            if self.lfs.window > self.side || self.lfs.stride == 0 || !(self.lfs.epsilon > 0.0) {
                return Err(Error::Config(
                    "invalid local-statistics window settings".into(),
                ));
            }
            lfs_bank(self)?;
        }
        Ok(())
    }

    /// Mix stages that actually take effect for this variant.
    pub fn active_mix(&self) -> &[usize] {
        if self.variant.uses_mix() {
            &self.mix_after
        } else {
            &[]
        }
    }

    fn stream_a_inputs(&self) -> usize {
        if self.variant.uses_fad() {
            3 * self.image_channels
        } else {
            self.image_channels
        }
    }

    /// Canonical `key = value` text; stable across runs and used for hashing.
    pub fn to_kv(&self) -> String {
        let mix: Vec<String> = self.mix_after.iter().map(|s| s.to_string()).collect();
        format!(
            "side = {}\nimage_channels = {}\nwidths = {},{},{}\nmix_after = {}\nvariant = {}\n\
             lfs_window = {}\nlfs_stride = {}\nlfs_epsilon = {:e}\nlfs_bands = {}\n",
            self.side,
            self.image_channels,
            self.widths[0],
            self.widths[1],
            self.widths[2],
            mix.join(","),
            self.variant,
            self.lfs.window,
            self.lfs.stride,
            self.lfs.epsilon,
            self.lfs_bands
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ToyNetConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad integer '{v}' for {key}")))
            };
            match key {
                "side" => cfg.side = num(value)?,
                "image_channels" => cfg.image_channels = num(value)?,
                "widths" => {
                    let parts: Vec<_> = value
                        .split(',')
                        .map(|p| num(p.trim()))
                        .collect::<Result<_>>()?;
                    cfg.widths = parts
                        .try_into()
                        .map_err(|_| Error::Config("widths needs three values".into()))?;
                }
                "mix_after" => {
                    cfg.mix_after = value
                        .split(',')
                        .map(str::trim)
                        .filter(|p| !p.is_empty())
                        .map(num)
                        .collect::<Result<_>>()?
                }
                "variant" => cfg.variant = value.parse()?,
                "lfs_window" => cfg.lfs.window = num(value)?,
                "lfs_stride" => cfg.lfs.stride = num(value)?,
                "lfs_epsilon" => {
                    cfg.lfs.epsilon = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad epsilon '{value}'")))?
                }
                "lfs_bands" => cfg.lfs_bands = num(value)?,
                other => return Err(Error::Config(format!("unknown model key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn lfs_bank(cfg: &ToyNetConfig) -> Result<FilterBank> {
    FilterBank::lfs(cfg.lfs.window, cfg.lfs_bands)
        .map_err(|e| Error::Config(format!("local-statistics bands: {e}")))
}

/// A borrowed learnable tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
    pub trainable: bool,
}

/// Model parameters. Also used, zero-initialized, as a gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    config: ToyNetConfig,
    pub fad: Option<FilterBank>,
    pub lfs: Option<FilterBank>,
    pub stream_a: Vec<Conv3x3>,
    pub stream_b: Vec<Conv3x3>,
    /// One block per entry of `config.active_mix()`.
    pub mixers: Vec<MixBlockParams>,
    pub head: Linear,
    /// Fixed per-channel standardization of stream A's input.
    pub norm_a: InputNorm,
    /// Fixed per-band standardization of the statistics map.
    pub norm_b: InputNorm,
}

/// `y_c = (x_c - shift_c) * scale_c`; not trained by gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            shift: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Shift and scale giving every channel zero mean and unit variance over
    /// all samples; near-constant channels are only centred.
    pub fn fit(samples: &[FeatureMap]) -> Self {
        let channels = samples.first().map_or(0, FeatureMap::channels);
        let mut norm = Self::identity(channels);
        for c in 0..channels {
            let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
            for m in samples {
                for &v in m.channel(c) {
                    n += 1.0;
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            let std = (sq / n - mean * mean).max(0.0).sqrt();
            norm.shift[c] = mean;
            norm.scale[c] = if std > 1e-8 { 1.0 / std } else { 1.0 };
        }
        norm
    }

    fn apply(&self, x: &mut FeatureMap) {
        for c in 0..x.channels() {
            let (m, k) = (self.shift[c], self.scale[c]);
            x.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) * k);
        }
    }

    fn backward(&self, g: &mut FeatureMap) {
        for c in 0..g.channels() {
            let k = self.scale[c];
            g.channel_mut(c).iter_mut().for_each(|v| *v *= k);
        }
    }
}

struct StageTrace {
    input: FeatureMap,
    pre: FeatureMap,
}

struct StreamTrace {
    stages: Vec<StageTrace>,
    /// Stage outputs before any mixing.
    outputs: Vec<FeatureMap>,
}

struct Trace {
    spectra: Vec<Spectrum>,
    luma: Option<Plane>,
    lfs_dims: (usize, usize),
    a: Option<StreamTrace>,
    b: Option<StreamTrace>,
    features: Vec<f64>,
    logits: Vec<f64>,
}

fn stage_forward(conv: &Conv3x3, input: FeatureMap, pooled: bool) -> (StageTrace, FeatureMap) {
    let pre = conv.forward(&input);
    let act = relu(&pre);
    let out = if pooled { avg_pool2(&act) } else { act };
    (StageTrace { input, pre }, out)
}

fn stage_backward(
    conv: &Conv3x3,
    trace: &StageTrace,
    pooled: bool,
    grad: &FeatureMap,
    grads: &mut Conv3x3,
    want_input: bool,
) -> Option<FeatureMap> {
    let g = if pooled {
        avg_pool2_backward(grad, trace.pre.height(), trace.pre.width())
    } else {
        grad.clone()
    };
    let g = relu_backward(&trace.pre, &g);
    conv.backward(&trace.input, &g, grads, want_input)
}

const A_POOLED: [bool; STAGES] = [true, true, true];
const B_POOLED: [bool; STAGES] = [false, true, true];

impl ToyNet {
    pub fn new<R: Rng>(config: ToyNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        let widths = config.widths;
        let stem = |inputs: usize, rng: &mut R| {
            let mut ins = inputs;
            widths
                .iter()
                .map(|&w| {
                    let c = Conv3x3::init(ins, w, rng);
                    ins = w;
                    c
                })
                .collect::<Vec<_>>()
        };
        let fad = if v.uses_fad() {
            Some(FilterBank::fad(config.side)?)
        } else {
            None
        };
        let lfs = if v.uses_lfs() {
            Some(lfs_bank(&config)?)
        } else {
            None
        };
        let stream_a = if v.has_stream_a() {
            stem(config.stream_a_inputs(), rng)
        } else {
            vec![]
        };
        let stream_b = if v.uses_lfs() {
            stem(config.lfs_bands, rng)
        } else {
            vec![]
        };
        let mixers = config
            .active_mix()
            .iter()
            .map(|&s| MixBlockParams::init(widths[s - 1], rng))
            .collect();
        let streams = usize::from(v.has_stream_a()) + usize::from(v.uses_lfs());
        let head = Linear::init(streams * widths[STAGES - 1], 2, rng);
        let norm_a = InputNorm::identity(if v.has_stream_a() {
            config.stream_a_inputs()
        } else {
            0
        });
        let norm_b = InputNorm::identity(if v.uses_lfs() { config.lfs_bands } else { 0 });
        Ok(Self {
            config,
            fad,
            lfs,
            stream_a,
            stream_b,
            mixers,
            head,
            norm_a,
            norm_b,
        })
    }

    pub fn config(&self) -> &ToyNetConfig {
        &self.config
    }

    /// Same structure, every value zero (gates included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (prefix, bank) in [("fad", &self.fad), ("lfs", &self.lfs)] {
            if let Some(bank) = bank {
                for (i, f) in bank.filters().iter().enumerate() {
                    out.push(TensorView {
                        name: format!("{prefix}.filter{}", i + 1),
                        dims: vec![f.size(), f.size()],
                        data: f.raw().data(),
                        trainable: f.trainable,
                    });
                }
            }
        }
        for (prefix, stem) in [("a", &self.stream_a), ("b", &self.stream_b)] {
            for (k, conv) in stem.iter().enumerate() {
                let dims = vec![conv.out_channels, conv.in_channels, 3, 3];
                out.push(TensorView {
                    name: format!("{prefix}.conv{}.weight", k + 1),
                    dims,
                    data: &conv.weight,
                    trainable: true,
                });
                out.push(TensorView {
                    name: format!("{prefix}.conv{}.bias", k + 1),
                    dims: vec![conv.out_channels],
                    data: &conv.bias,
                    trainable: true,
                });
            }
        }
        for (stage, mix) in self.config.active_mix().iter().zip(&self.mixers) {
            let (c, r) = (mix.channels, mix.reduced);
            for (name, data) in mix.tensors() {
                let dims = match name {
                    "query" | "key" => vec![r, c],
                    "value_a" | "value_b" => vec![c, c],
                    _ => vec![1],
                };
                out.push(TensorView {
                    name: format!("mix{stage}.{name}"),
                    dims,
                    data,
                    trainable: true,
                });
            }
        }
        out.push(TensorView {
            name: "head.weight".into(),
            dims: vec![self.head.outputs, self.head.inputs],
            data: &self.head.weight,
            trainable: true,
        });
        out.push(TensorView {
            name: "head.bias".into(),
            dims: vec![self.head.outputs],
            data: &self.head.bias,
            trainable: true,
        });
        for (prefix, norm) in [("a", &self.norm_a), ("b", &self.norm_b)] {
            if norm.shift.is_empty() {
                continue;
            }
            for (name, data) in [("shift", &norm.shift), ("scale", &norm.scale)] {
                out.push(TensorView {
                    name: format!("{prefix}.norm.{name}"),
                    dims: vec![data.len()],
                    data,
                    trainable: false,
                });
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        for (prefix, bank) in [("fad", &mut self.fad), ("lfs", &mut self.lfs)] {
            if let Some(bank) = bank {
                for (i, f) in bank.filters_mut().iter_mut().enumerate() {
                    let size = f.size();
                    let trainable = f.trainable;
                    out.push(TensorViewMut {
                        name: format!("{prefix}.filter{}", i + 1),
                        dims: vec![size, size],
                        data: f.raw_mut().data_mut(),
                        trainable,
                    });
                }
            }
        }
        for (prefix, stem) in [("a", &mut self.stream_a), ("b", &mut self.stream_b)] {
            for (k, conv) in stem.iter_mut().enumerate() {
                let dims = vec![conv.out_channels, conv.in_channels, 3, 3];
                let bias_dims = vec![conv.out_channels];
                out.push(TensorViewMut {
                    name: format!("{prefix}.conv{}.weight", k + 1),
                    dims,
                    data: &mut conv.weight,
                    trainable: true,
                });
                out.push(TensorViewMut {
                    name: format!("{prefix}.conv{}.bias", k + 1),
                    dims: bias_dims,
                    data: &mut conv.bias,
                    trainable: true,
                });
            }
        }
        let stages = self.config.active_mix().to_vec();
        for (stage, mix) in stages.iter().zip(self.mixers.iter_mut()) {
            let (c, r) = (mix.channels, mix.reduced);
            for (name, data) in mix.tensors_mut() {
                let dims = match name {
                    "query" | "key" => vec![r, c],
                    "value_a" | "value_b" => vec![c, c],
                    _ => vec![1],
                };
                out.push(TensorViewMut {
                    name: format!("mix{stage}.{name}"),
                    dims,
                    data,
                    trainable: true,
                });
            }
        }
        let (o, i) = (self.head.outputs, self.head.inputs);
        out.push(TensorViewMut {
            name: "head.weight".into(),
            dims: vec![o, i],
            data: &mut self.head.weight,
            trainable: true,
        });
        out.push(TensorViewMut {
            name: "head.bias".into(),
            dims: vec![o],
            data: &mut self.head.bias,
            trainable: true,
        });
        for (prefix, norm) in [("a", &mut self.norm_a), ("b", &mut self.norm_b)] {
            if norm.shift.is_empty() {
                continue;
            }
            for (name, data) in [("shift", &mut norm.shift), ("scale", &mut norm.scale)] {
                out.push(TensorViewMut {
                    name: format!("{prefix}.norm.{name}"),
                    dims: vec![data.len()],
                    data,
                    trainable: false,
                });
            }
        }
        out
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.data.len())
            .sum()
    }

    /// Stream inputs (before standardization) for one image.
    fn stream_inputs(&self, img: &Image) -> Result<(Option<FeatureMap>, Option<FeatureMap>)> {
        let t = self.forward_inputs(img)?;
        Ok((t.0.map(|(m, _)| m), t.1.map(|(m, _)| m)))
    }

    /// Fits both input standardizations to a set of training images.
    pub fn fit_input_norm<'a>(
        &mut self,
        images: impl IntoIterator<Item = &'a Image>,
    ) -> Result<()> {
        let (mut a, mut b) = (vec![], vec![]);
        for img in images {
            let (ma, mb) = self.stream_inputs(img)?;
            a.extend(ma);
            b.extend(mb);
        }
        if !a.is_empty() {
            self.norm_a = InputNorm::fit(&a);
        }
        if !b.is_empty() {
            self.norm_b = InputNorm::fit(&b);
        }
        Ok(())
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        let c = &self.config;
        if img.height() != c.side || img.width() != c.side {
            return Err(Error::arg(format!(
                "model expects {}x{} input, got {}x{}",
                c.side,
                c.side,
                img.height(),
                img.width()
            )));
        }
        if img.channels() != c.image_channels {
            return Err(Error::arg(format!(
                "model expects {} channels, got {}",
                c.image_channels,
                img.channels()
            )));
        }
        Ok(())
    }

    /// Stream A input with the channel spectra it came from, and the raw
    /// statistics map with the luminance plane it was computed on.
    #[allow(clippy::type_complexity)]
    fn forward_inputs(
        &self,
        img: &Image,
    ) -> Result<(
        Option<(FeatureMap, Vec<Spectrum>)>,
        Option<(FeatureMap, Plane)>,
    )> {
        self.check_image(img)?;
        let cfg = &self.config;
        let a = if cfg.variant.has_stream_a() {
            let planes = img.planes();
            Some(match &self.fad {
                Some(bank) => {
                    let mut kernel = Dct2d::new(cfg.side, cfg.side);
                    let spectra: Vec<Spectrum> = planes.iter().map(|p| kernel.forward(p)).collect();
                    let comps = fad::forward_from_spectra(&spectra, bank);
                    (FeatureMap::from_planes(comps.planes())?, spectra)
                }
                None => (FeatureMap::from_planes(&planes)?, vec![]),
            })
        } else {
            None
        };
        let b = match &self.lfs {
            Some(bank) => {
                let plane = img.luminance();
                let map = lfs::lfs_forward_plane(&plane, bank, &cfg.lfs)?;
                Some((FeatureMap::from_planes(&map.band_planes())?, plane))
            }
            None => None,
        };
        Ok((a, b))
    }

    fn forward_traced(&self, img: &Image) -> Result<Trace> {
        let cfg = &self.config;
        let side = cfg.side;

        let (inputs_a, inputs_b) = self.forward_inputs(img)?;
        let mut spectra = vec![];
        let mut a = inputs_a.map(|(mut input, s)| {
            spectra = s;
            self.norm_a.apply(&mut input);
            (
                input,
                StreamTrace {
                    stages: vec![],
                    outputs: vec![],
                },
            )
        });
        let mut luma = None;
        let mut lfs_dims = (0, 0);
        let mut b = inputs_b.map(|(mut map, plane)| {
            lfs_dims = (map.height(), map.width());
            luma = Some(plane);
            self.norm_b.apply(&mut map);
            let input = map.resize_nearest(side / 2, side / 2);
            (
                input,
                StreamTrace {
                    stages: vec![],
                    outputs: vec![],
                },
            )
        });

        let mut mix_iter = cfg.active_mix().iter().zip(&self.mixers).peekable();
        for stage in 0..STAGES {
            if let Some((input, trace)) = a.as_mut() {
                let x = std::mem::replace(input, FeatureMap::zeros(1, 1, 1));
                let (st, out) = stage_forward(&self.stream_a[stage], x, A_POOLED[stage]);
                trace.stages.push(st);
                trace.outputs.push(out.clone());
                *input = out;
            }
            if let Some((input, trace)) = b.as_mut() {
                let x = std::mem::replace(input, FeatureMap::zeros(1, 1, 1));
                let (st, out) = stage_forward(&self.stream_b[stage], x, B_POOLED[stage]);
                trace.stages.push(st);
                trace.outputs.push(out.clone());
                *input = out;
            }
            if let Some((_, params)) = mix_iter.next_if(|(s, _)| **s == stage + 1) {
                let (fa, fb) = (&mut a.as_mut().unwrap().0, &mut b.as_mut().unwrap().0);
                let (ma, mb) = mixblock_forward(fa, fb, params)?;
                *fa = ma;
                *fb = mb;
            }
        }

        let mut features = vec![];
        if let Some((out, _)) = &a {
            features.extend(global_avg_pool(out));
        }
        if let Some((out, _)) = &b {
            features.extend(global_avg_pool(out));
        }
        let logits = self.head.forward(&features);
        Ok(Trace {
            spectra,
            luma,
            lfs_dims,
            a: a.map(|(_, t)| t),
            b: b.map(|(_, t)| t),
            features,
            logits,
        })
    }

    /// Logits for every image.
    pub fn forward(&self, images: &[Image]) -> Result<Vec<[f64; 2]>> {
        images
            .iter()
            .map(|img| {
                let t = self.forward_traced(img)?;
                Ok([t.logits[0], t.logits[1]])
            })
            .collect()
    }

    /// Probability of the "fake" class.
    pub fn score(&self, img: &Image) -> Result<f64> {
        let t = self.forward_traced(img)?;
        Ok(softmax(&t.logits)[1])
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, images: &[Image], labels: &[usize]) -> Result<f64> {
        check_batch(images, labels)?;
        let mut total = 0.0;
        for (img, &label) in images.iter().zip(labels) {
            let t = self.forward_traced(img)?;
            total += cross_entropy(&t.logits, label).0;
        }
        Ok(total / images.len() as f64)
    }

    /// Mean cross-entropy and its gradient for every learnable tensor.
    /// Per-example gradients are accumulated in batch order.
    pub fn loss_and_grads(&self, images: &[Image], labels: &[usize]) -> Result<(f64, ToyNet)> {
        check_batch(images, labels)?;
        let mut grads = self.zeros_like();
        let scale = 1.0 / images.len() as f64;
        let mut total = 0.0;
        for (img, &label) in images.iter().zip(labels) {
            let trace = self.forward_traced(img)?;
            let (loss, mut dlogits) = cross_entropy(&trace.logits, label);
            total += loss;
            dlogits.iter_mut().for_each(|g| *g *= scale);
            self.backward(&trace, &dlogits, &mut grads)?;
        }
        Ok((total * scale, grads))
    }

    fn backward(&self, trace: &Trace, dlogits: &[f64], grads: &mut ToyNet) -> Result<()> {
        let cfg = &self.config;
        let dfeat = self
            .head
            .backward(&trace.features, dlogits, &mut grads.head);
        let last = cfg.widths[STAGES - 1];
        let mut offset = 0;
        let mut ga = trace.a.as_ref().map(|t| {
            let out = &t.outputs[STAGES - 1];
            offset = last;
            global_avg_pool_backward(&dfeat[..last], out.height(), out.width())
        });
        let mut gb = trace.b.as_ref().map(|t| {
            let out = &t.outputs[STAGES - 1];
            global_avg_pool_backward(&dfeat[offset..offset + last], out.height(), out.width())
        });

        let mix_stages = cfg.active_mix();
        for stage in (0..STAGES).rev() {
            if let Some(k) = mix_stages.iter().position(|&s| s == stage + 1) {
                let (ta, tb) = (trace.a.as_ref().unwrap(), trace.b.as_ref().unwrap());
                let mg = mixblock_backward(
                    ga.as_ref().unwrap(),
                    gb.as_ref().unwrap(),
                    &ta.outputs[stage],
                    &tb.outputs[stage],
                    &self.mixers[k],
                )?;
                for (acc, g) in grads.mixers[k]
                    .tensors_mut()
                    .into_iter()
                    .zip(mg.params.tensors())
                {
                    acc.1.iter_mut().zip(g.1).for_each(|(a, b)| *a += b);
                }
                ga = Some(mg.input_a);
                gb = Some(mg.input_b);
            }
            if let (Some(t), Some(g)) = (trace.a.as_ref(), ga.as_ref()) {
                let want = stage > 0 || self.fad.is_some();
                ga = stage_backward(
                    &self.stream_a[stage],
                    &t.stages[stage],
                    A_POOLED[stage],
                    g,
                    &mut grads.stream_a[stage],
                    want,
                );
            }
            if let (Some(t), Some(g)) = (trace.b.as_ref(), gb.as_ref()) {
                gb = stage_backward(
                    &self.stream_b[stage],
                    &t.stages[stage],
                    B_POOLED[stage],
                    g,
                    &mut grads.stream_b[stage],
                    true,
                );
            }
        }

        if let (Some(bank), Some(mut g)) = (&self.fad, ga) {
            self.norm_a.backward(&mut g);
            let upstream = g.to_planes();
            let fg = fad::backward_from_spectra(&upstream, &trace.spectra, bank, false);
            let acc = grads.fad.as_mut().expect("grad bank");
            for (f, d) in acc.filters_mut().iter_mut().zip(&fg.filters) {
                f.raw_mut().add_scaled(d, 1.0);
            }
        }
        if let (Some(bank), Some(g)) = (&self.lfs, gb) {
            let (rows, cols) = trace.lfs_dims;
            let mut g = FeatureMap::resize_nearest_backward(&g, rows, cols);
            self.norm_b.backward(&mut g);
            let upstream = g.to_planes();
            let luma = trace.luma.as_ref().expect("luma cached");
            let lg = lfs::lfs_backward_plane(&upstream, luma, bank, &cfg.lfs)?;
            let acc = grads.lfs.as_mut().expect("grad bank");
            for (f, d) in acc.filters_mut().iter_mut().zip(&lg) {
                f.raw_mut().add_scaled(d, 1.0);
            }
        }
        Ok(())
    }
}

fn check_batch(images: &[Image], labels: &[usize]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if images.len() != labels.len() {
        return Err(Error::arg("batch and label counts differ"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::arg(format!("label {bad} not in {{0, 1}}")));
    }
    Ok(())
}

/// Scales the stem widths of a pixel baseline so its parameter count is as
/// close as possible to `target`.
pub fn matched_baseline(reference: &ToyNetConfig, target: usize) -> ToyNetConfig {
    let base = reference.widths;
    let count = |widths: [usize; STAGES]| {
        let cfg = ToyNetConfig {
            widths,
            variant: Variant::Baseline,
            mix_after: vec![],
            ..reference.clone()
        };
        baseline_param_count(&cfg)
    };
    let mut best = (usize::MAX, base);
    for step in 4..=64 {
        let k = step as f64 / 8.0;
        let widths = base.map(|w| ((w as f64 * k).round() as usize).max(1));
        let diff = count(widths).abs_diff(target);
        if diff < best.0 {
            best = (diff, widths);
        }
    }
    ToyNetConfig {
        widths: best.1,
        variant: Variant::Baseline,
        mix_after: vec![],
        ..reference.clone()
    }
}

fn baseline_param_count(cfg: &ToyNetConfig) -> usize {
    let mut ins = cfg.image_channels;
    let mut total = 0;
    for &w in &cfg.widths {
        total += ins * w * 9 + w;
        ins = w;
    }
    total + cfg.widths[STAGES - 1] * 2 + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(variant: Variant) -> ToyNetConfig {
        ToyNetConfig {
            side: 16,
            variant,
            ..ToyNetConfig::default()
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
        Image::from_fn(side, side, 3, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn every_variant_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in Variant::ALL {
            let net = ToyNet::new(small(v), &mut rng).unwrap();
            let img = random_image(&mut rng, 16);
            let logits = net.forward(&[img.clone(), img]).unwrap();
            assert_eq!(logits[0], logits[1]);
            assert!(logits[0].iter().all(|v| v.is_finite()));
            let (loss, grads) = net
                .loss_and_grads(&[random_image(&mut rng, 16)], &[1])
                .unwrap();
            assert!(loss.is_finite());
            assert_eq!(grads.param_count(), net.param_count());
        }
    }

    #[test]
    fn baseline_matching_is_close() {
        let full = ToyNetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = ToyNet::new(full.clone(), &mut rng).unwrap().param_count();
        let cfg = matched_baseline(&full, target);
        let count = ToyNet::new(cfg, &mut rng).unwrap().param_count();
        assert!((count as f64 - target as f64).abs() <= 0.1 * target as f64);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ToyNetConfig {
            mix_after: vec![3],
            variant: Variant::FadLfs,
            ..ToyNetConfig::default()
        };
        assert_eq!(ToyNetConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(ToyNetConfig::from_kv("bogus = 1").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = ToyNetConfig {
            mix_after: vec![4],
            ..ToyNetConfig::default()
        };
        assert!(ToyNet::new(bad, &mut rng).is_err());
        let bad = ToyNetConfig {
            side: 12,
            ..ToyNetConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn label_and_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ToyNet::new(small(Variant::Full), &mut rng).unwrap();
        let img = random_image(&mut rng, 16);
        assert!(net.loss(std::slice::from_ref(&img), &[2]).is_err());
        assert!(net.loss(&[img], &[0, 1]).is_err());
        assert!(net.forward(&[random_image(&mut rng, 24)]).is_err());
    }
}
