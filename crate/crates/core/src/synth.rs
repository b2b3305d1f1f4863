//! Deterministic synthetic forgery corpus.
//!
//! "Real" images are multi-octave value-noise textures over a low-frequency
//! gradient. "Fake" siblings alter a feathered elliptical region covering about
//! a quarter of the image with one of three local manipulations. Every pair is
//! rendered at each requested compression tier.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_plane_bilinear, save_png, Image, QualityTier};
use crate::plane::Plane;
use crate::rng::stream_seed;

pub const MIN_SIDE: usize = 32;

/// Region edits applied to a real image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Manipulation {
    /// Gaussian blur (sigma 1.5) of the region, alpha-composited.
    BlurSplice,
    /// Bilinear down-2x then up-2x of the region.
    Resample,
    /// +/-0.02 period-2 grid pattern added to the region.
    Checkerboard,
}

impl Manipulation {
    pub const ALL: [Manipulation; 3] = [
        Manipulation::BlurSplice,
        Manipulation::Resample,
        Manipulation::Checkerboard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Manipulation::BlurSplice => "blur_splice",
            Manipulation::Resample => "resample",
            Manipulation::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for Manipulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Manipulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Manipulation::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown manipulation '{s}'")))
    }
}

/// One octave of value noise: uniform lattice values every `spacing` pixels,
/// smoothstep-interpolated.
fn value_noise(rng: &mut ChaCha8Rng, side: usize, spacing: usize) -> Plane {
    let cells = side / spacing + 2;
    let lattice: Vec<f64> = (0..cells * cells)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    if spacing == 1 {
        return Plane::from_fn(side, side, |y, x| lattice[y * cells + x]);
    }
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    Plane::from_fn(side, side, |y, x| {
        let (fy, fx) = (y as f64 / spacing as f64, x as f64 / spacing as f64);
        let (iy, ix) = (fy as usize, fx as usize);
        let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
        let at = |r: usize, c: usize| lattice[r * cells + c];
        let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
        let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// (lattice spacing, amplitude) of the shared luminance texture.
const OCTAVES: [(usize, f64); 5] = [(16, 1.0), (8, 0.6), (4, 0.45), (2, 0.35), (1, 0.25)];

/// A procedurally textured RGB image, deterministic in `seed`.
pub fn gen_real(seed: u64, side: usize) -> Result<Image> {
    if side < MIN_SIDE {
        return Err(Error::arg(format!("side {side} < {MIN_SIDE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texture = Plane::zeros(side, side);
    for (spacing, amp) in OCTAVES {
        texture.add_scaled(&value_noise(&mut rng, side, spacing), amp);
    }
    let (gy, gx): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let gradient = Plane::from_fn(side, side, |y, x| {
        gy * y as f64 / side as f64 + gx * x as f64 / side as f64
    });
    texture.add_scaled(&gradient, 1.0);

    let mut channels = Vec::with_capacity(3);
    for _ in 0..3 {
        let tint = rng.gen_range(-0.3..0.3);
        let mut ch = texture.clone();
        ch.add_scaled(&value_noise(&mut rng, side, 4), 0.2);
        ch.data_mut().iter_mut().for_each(|v| *v += tint);
        channels.push(ch);
    }
    let lo = channels
        .iter()
        .flat_map(|c| c.data().iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = channels
        .iter()
        .flat_map(|c| c.data().iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for ch in &mut channels {
        ch.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
    Image::from_planes(&channels)
}

/// Feathered elliptical edit region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub feather: f64,
}

impl Region {
    /// Ellipse with area a quarter of the image, centre jittered by up to
    /// `side / 8` and aspect ratio in `[0.75, 1.33]`.
    pub fn random(rng: &mut ChaCha8Rng, side: usize) -> Self {
        let s = side as f64;
        let jitter = s / 8.0;
        let aspect: f64 = rng.gen_range(0.75..1.33);
        let ab = 0.25 * s * s / std::f64::consts::PI;
        Self {
            cy: s / 2.0 + rng.gen_range(-jitter..jitter),
            cx: s / 2.0 + rng.gen_range(-jitter..jitter),
            ry: (ab * aspect).sqrt(),
            rx: (ab / aspect).sqrt(),
            feather: 3.0,
        }
    }

    fn rho(&self, y: usize, x: usize) -> f64 {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        (dy * dy + dx * dx).sqrt()
    }

    /// Blend weight: 1 deep inside, ramping to 0 over `feather` pixels at the edge.
    pub fn alpha(&self, y: usize, x: usize) -> f64 {
        let depth = (1.0 - self.rho(y, x)) * self.ry.min(self.rx);
        (depth / self.feather).clamp(0.0, 1.0)
    }

    /// Whether the pixel may be modified (`alpha > 0`).
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.rho(y, x) < 1.0
    }
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let (h, w) = plane.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let horizontal = Plane::from_fn(h, w, |y, x| {
        weights
            .iter()
            .enumerate()
            .map(|(i, wt)| wt * plane.get(y, clamp(x as isize + i as isize - radius, w)))
            .sum::<f64>()
            / norm
    });
    Plane::from_fn(h, w, |y, x| {
        weights
            .iter()
            .enumerate()
            .map(|(i, wt)| wt * horizontal.get(clamp(y as isize + i as isize - radius, h), x))
            .sum::<f64>()
            / norm
    })
}

/// Applies `manipulation` inside a seed-determined region.
pub fn gen_fake(real: &Image, manipulation: Manipulation, seed: u64) -> Result<Image> {
    let (h, w) = (real.height(), real.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = Region::random(&mut rng, h.min(w));
    gen_fake_in(real, manipulation, &region)
}

/// Region used by [`gen_fake`] for `seed` on an image of side `side`.
pub fn fake_region(side: usize, seed: u64) -> Region {
    Region::random(&mut ChaCha8Rng::seed_from_u64(seed), side)
}

pub fn gen_fake_in(real: &Image, manipulation: Manipulation, region: &Region) -> Result<Image> {
    let (h, w) = (real.height(), real.width());
    let planes: Vec<Plane> = real
        .planes()
        .into_iter()
        .map(|p| {
            let edited = match manipulation {
                Manipulation::BlurSplice => gaussian_blur(&p, 1.5),
                Manipulation::Resample => {
                    let down = resize_plane_bilinear(&p, (h / 2).max(1), (w / 2).max(1));
                    resize_plane_bilinear(&down, h, w)
                }
                Manipulation::Checkerboard => Plane::from_fn(h, w, |y, x| {
                    let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                    p.get(y, x) + 0.02 * sign
                }),
            };
            Plane::from_fn(h, w, |y, x| {
                let a = region.alpha(y, x);
                if a == 0.0 {
                    p.get(y, x)
                } else {
                    a * edited.get(y, x) + (1.0 - a) * p.get(y, x)
                }
            })
        })
        .collect();
    Image::from_planes(&planes)
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_pairs: usize,
    pub side: usize,
    pub manipulations: Vec<Manipulation>,
    pub tiers: Vec<QualityTier>,
    pub hq_quality: u8,
    pub lq_quality: u8,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_pairs: 100,
            side: 64,
            manipulations: Manipulation::ALL.to_vec(),
            tiers: QualityTier::ALL.to_vec(),
            hq_quality: 75,
            lq_quality: 30,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.manipulations.is_empty() || self.tiers.is_empty() {
            return Err(Error::Config(
                "at least one manipulation and one tier are required".into(),
            ));
        }
        if self.side < MIN_SIDE {
            return Err(Error::Config(format!("side must be at least {MIN_SIDE}")));
        }
        for q in [self.hq_quality, self.lq_quality] {
            if !(1..=100).contains(&q) {
                return Err(Error::Config(format!("jpeg quality {q} not in 1..=100")));
            }
        }
        Ok(())
    }

    pub fn quality(&self, tier: QualityTier) -> Option<u8> {
        match tier {
            QualityTier::Raw => None,
            QualityTier::Hq => Some(self.hq_quality),
            QualityTier::Lq => Some(self.lq_quality),
        }
    }

    /// Manipulation used for a pair (round-robin over the configured list).
    pub fn manipulation_for(&self, pair: usize) -> Manipulation {
        self.manipulations[pair % self.manipulations.len()]
    }

    /// Uncompressed real/fake pair `pair`.
    pub fn render_pair(&self, pair: usize) -> Result<(Image, Image)> {
        let real = gen_real(stream_seed(self.seed, &format!("real/{pair}")), self.side)?;
        let fake = gen_fake(
            &real,
            self.manipulation_for(pair),
            stream_seed(self.seed, &format!("fake/{pair}")),
        )?;
        Ok((real, fake))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index: 0 = real, 1 = fake.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            _ => Err(Error::Data(format!("unknown label '{s}'"))),
        }
    }
}

/// One manifest row. `path` is relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: String,
    pub label: Label,
    /// Manipulation name for fakes, `none` for reals.
    pub manipulation: String,
    pub tier: String,
    pub pair_id: String,
}

impl Sample {
    pub fn pair_index(&self) -> Result<usize> {
        self.pair_id
            .parse()
            .map_err(|_| Error::Data(format!("bad pair id '{}'", self.pair_id)))
    }

    pub fn tier(&self) -> Result<QualityTier> {
        self.tier
            .parse()
            .map_err(|_| Error::Data(format!("bad tier '{}'", self.tier)))
    }
}

pub const MANIFEST_NAME: &str = "manifest.csv";

fn pair_id(pair: usize) -> String {
    format!("{pair:05}")
}

/// Renders the corpus under `root` as `<root>/<tier>/<real|fake>/<pair_id>.png`
/// and writes `<root>/manifest.csv`.
pub fn build_corpus(spec: &CorpusSpec, root: &Path) -> Result<Vec<Sample>> {
    spec.validate()?;
    for tier in &spec.tiers {
        for label in ["real", "fake"] {
            let dir = root.join(tier.as_str()).join(label);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    let mut samples = Vec::new();
    for pair in 0..spec.n_pairs {
        let (real, fake) = spec.render_pair(pair)?;
        let manipulation = spec.manipulation_for(pair);
        for &tier in &spec.tiers {
            let quality = spec.quality(tier);
            for (label, img) in [(Label::Real, &real), (Label::Fake, &fake)] {
                let rel = format!("{}/{}/{}.png", tier, label.as_str(), pair_id(pair));
                save_png(&tier.apply_with(img, quality)?, &root.join(&rel))?;
                samples.push(Sample {
                    path: rel,
                    label,
                    manipulation: match label {
                        Label::Real => "none".into(),
                        Label::Fake => manipulation.to_string(),
                    },
                    tier: tier.to_string(),
                    pair_id: pair_id(pair),
                });
            }
        }
    }
    write_manifest(&root.join(MANIFEST_NAME), &samples)?;
    Ok(samples)
}

pub fn write_manifest(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for s in samples {
        w.serialize(s).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "manipulation", "tier", "pair_id"] {
        return Err(Error::Data(format!(
            "{}: unexpected manifest header",
            path.display()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Data(format!("{}: {e}", path.display()))
    }
}

/// Corpus root of a manifest path.
pub fn manifest_root(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Data split of a pair: ids with `pair % 5` in {0, 1, 2} train, 3 validation, 4 test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

pub fn split_of(pair: usize) -> Split {
    match pair % 5 {
        0..=2 => Split::Train,
        3 => Split::Val,
        _ => Split::Test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_is_deterministic_and_textured() {
        let a = gen_real(3, 64).unwrap();
        assert_eq!(a, gen_real(3, 64).unwrap());
        assert_ne!(a, gen_real(4, 64).unwrap());
        let l = a.luminance();
        let mean = l.mean();
        let var = l.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.data().len() as f64;
        assert!(var > 1e-4);
        assert!(gen_real(1, 31).is_err());
    }

    #[test]
    fn fake_changes_only_inside_region() {
        let real = gen_real(5, 64).unwrap();
        for m in Manipulation::ALL {
            let fake = gen_fake(&real, m, 9).unwrap();
            let region = fake_region(64, 9);
            let mut changed = 0;
            for y in 0..64 {
                for x in 0..64 {
                    for c in 0..3 {
                        if fake.get(y, x, c) != real.get(y, x, c) {
                            assert!(
                                region.contains(y, x),
                                "{m} changed ({y},{x}) outside region"
                            );
                            changed += 1;
                        }
                    }
                }
            }
            assert!(changed > 0, "{m} changed nothing");
        }
    }

    #[test]
    fn region_covers_a_quarter() {
        let region = fake_region(64, 1);
        let inside = (0..64)
            .flat_map(|y| (0..64).map(move |x| (y, x)))
            .filter(|&(y, x)| region.contains(y, x))
            .count();
        let frac = inside as f64 / 4096.0;
        assert!((0.22..0.28).contains(&frac), "{frac}");
    }

    #[test]
    fn manipulation_names() {
        for m in Manipulation::ALL {
            assert_eq!(m.as_str().parse::<Manipulation>().unwrap(), m);
        }
        assert!("warp".parse::<Manipulation>().is_err());
    }

    #[test]
    fn splits_cover_all_three() {
        let s: Vec<_> = (0..5).map(split_of).collect();
        assert_eq!(
            s,
            [
                Split::Train,
                Split::Train,
                Split::Train,
                Split::Val,
                Split::Test
            ]
        );
    }
}
