//! Image representation, file I/O, resizing and a JPEG-style quantizer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::dct::Dct2d;
use crate::error::{Error, Result};
use crate::plane::Plane;

/// An `H`×`W`×`C` raster with samples in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, rejecting non-finite or out-of-range samples.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "image data has {} samples, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::arg(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from `f(y, x, c)`, clamping results to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Interleaves per-channel planes, clamping to `[0, 1]`.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::arg("at least one plane required"))?;
        let (h, w) = first.dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::arg("planes differ in size"));
        }
        Self::from_fn(h, w, planes.len(), |y, x, c| planes[c].get(y, x))
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane::from_fn(self.height, self.width, |y, x| self.get(y, x, c))
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Rec. 601 luma (`0.299 R + 0.587 G + 0.114 B`); identity for grayscale.
    pub fn luminance(&self) -> Plane {
        if self.channels == 1 {
            return self.channel(0);
        }
        Plane::from_fn(self.height, self.width, |y, x| {
            0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
        })
    }

    /// Largest absolute per-sample difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(
            (self.height, self.width, self.channels),
            (other.height, other.width, other.channels)
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// 8-bit samples as written to disk: `round(v * 255)` clamped to `[0, 255]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Decodes a PNG or JPEG file. Grayscale files yield one channel, everything
/// else is converted to RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        other => {
            return Err(Error::format(
                path,
                format!("unsupported image format {other:?}"),
            ))
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_) => {
            let buf = decoded.to_luma8();
            Image::from_bytes(h, w, 1, buf.as_raw())
        }
        _ => {
            let buf = decoded.to_rgb8();
            Image::from_bytes(h, w, 3, buf.as_raw())
        }
    }
}

/// Writes an 8-bit PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_bytes();
    let result = if img.channels() == 1 {
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
            .expect("buffer size")
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
            .expect("buffer size")
            .save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

/// Source coordinate and blend weight for corner-aligned sampling.
#[inline]
fn corner_aligned(i: usize, out: usize, src: usize) -> (usize, usize, f64) {
    if out == 1 || src == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (src - 1) as f64 / (out - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resampling of a plane with corner-aligned sampling.
pub fn resize_plane_bilinear(plane: &Plane, out_h: usize, out_w: usize) -> Plane {
    let (h, w) = plane.dims();
    if (h, w) == (out_h, out_w) {
        return plane.clone();
    }
    let xs: Vec<_> = (0..out_w).map(|x| corner_aligned(x, out_w, w)).collect();
    Plane::from_fn(out_h, out_w, |y, x| {
        let (y0, y1, fy) = corner_aligned(y, out_h, h);
        let (x0, x1, fx) = xs[x];
        let top = plane.get(y0, x0) * (1.0 - fx) + plane.get(y0, x1) * fx;
        let bottom = plane.get(y1, x0) * (1.0 - fx) + plane.get(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Bilinear resize with corner alignment: output corners sample input corners.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("resize target must be at least 1x1"));
    }
    if (img.height, img.width) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let planes: Vec<_> = img
        .planes()
        .iter()
        .map(|p| resize_plane_bilinear(p, out_h, out_w))
        .collect();
    Image::from_planes(&planes)
}

/// Copies an `h`×`w` crop starting at `(y0, x0)`.
pub fn crop(img: &Image, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
    if h == 0 || w == 0 || y0 + h > img.height || x0 + w > img.width {
        return Err(Error::arg("crop window outside image"));
    }
    Image::from_fn(h, w, img.channels, |y, x, c| img.get(y0 + y, x0 + x, c))
}

/// Standard JPEG luminance quantization table (ITU-T T.81 Annex K), row-major.
pub const LUMA_QUANT_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99, //
];

/// Luminance table scaled with the IJG quality formula.
pub fn quant_table(quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::arg(format!("jpeg quality {quality} not in 1..=100")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut table = [0u16; 64];
    for (t, &base) in table.iter_mut().zip(&LUMA_QUANT_TABLE) {
        *t = ((base as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(table)
}

/// Pads a plane to multiples of 8 by edge replication.
fn pad_to_blocks(plane: &Plane) -> Plane {
    let (h, w) = plane.dims();
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    Plane::from_fn(ph, pw, |y, x| plane.get(y.min(h - 1), x.min(w - 1)))
}

/// 8×8 blockwise orthonormal DCT of a plane in JPEG sample units
/// (`255 * v - 128`), after edge-replication padding. The result covers the
/// padded extent, block by block in place.
pub fn block_dct8(plane: &Plane) -> Plane {
    let padded = pad_to_blocks(plane);
    let shifted = Plane::from_fn(padded.rows(), padded.cols(), |y, x| {
        padded.get(y, x) * 255.0 - 128.0
    });
    let mut out = Plane::zeros(padded.rows(), padded.cols());
    let mut kernel = Dct2d::new(8, 8);
    let mut block = [0.0; 64];
    let pitch = shifted.cols();
    for by in (0..shifted.rows()).step_by(8) {
        for bx in (0..pitch).step_by(8) {
            kernel.forward_into(&shifted.data()[by * pitch + bx..], pitch, &mut block);
            for (k, v) in block.iter().enumerate() {
                out.set(by + k / 8, bx + k % 8, *v);
            }
        }
    }
    out
}

fn compress_plane(plane: &Plane, table: &[u16; 64]) -> Plane {
    let (h, w) = plane.dims();
    let coeffs = block_dct8(plane);
    let mut kernel = Dct2d::new(8, 8);
    let mut block = [0.0; 64];
    let mut spatial = [0.0; 64];
    let mut out = Plane::zeros(h, w);
    for by in (0..coeffs.rows()).step_by(8) {
        for bx in (0..coeffs.cols()).step_by(8) {
            for (k, b) in block.iter_mut().enumerate() {
                let q = table[k] as f64;
                *b = (coeffs.get(by + k / 8, bx + k % 8) / q).round() * q;
            }
            kernel.inverse_into(&block, &mut spatial);
            for (k, s) in spatial.iter().enumerate() {
                let (y, x) = (by + k / 8, bx + k % 8);
                if y < h && x < w {
                    out.set(y, x, clamp_unit((s + 128.0) / 255.0));
                }
            }
        }
    }
    out
}

/// JPEG-style lossy round trip: per channel, blockwise DCT, quantize with the
/// quality-scaled luminance table, dequantize, inverse DCT and clamp. No chroma
/// subsampling or entropy coding is performed.
pub fn compress_jpeg_like(img: &Image, quality: u8) -> Result<Image> {
    let table = quant_table(quality)?;
    let planes: Vec<_> = img
        .planes()
        .iter()
        .map(|p| compress_plane(p, &table))
        .collect();
    Image::from_planes(&planes)
}

/// Compression severity tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QualityTier {
    Raw,
    Hq,
    Lq,
}

impl QualityTier {
    pub const ALL: [QualityTier; 3] = [QualityTier::Raw, QualityTier::Hq, QualityTier::Lq];

    /// Default JPEG quality for the tier; `None` means uncompressed.
    pub fn default_quality(self) -> Option<u8> {
        match self {
            QualityTier::Raw => None,
            QualityTier::Hq => Some(75),
            QualityTier::Lq => Some(30),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityTier::Raw => "RAW",
            QualityTier::Hq => "HQ",
            QualityTier::Lq => "LQ",
        }
    }

    /// Applies the tier with an explicit quality; RAW is always the identity.
    pub fn apply_with(self, img: &Image, quality: Option<u8>) -> Result<Image> {
        match (self, quality) {
            (QualityTier::Raw, _) | (_, None) => Ok(img.clone()),
            (_, Some(q)) => compress_jpeg_like(img, q),
        }
    }

    pub fn apply(self, img: &Image) -> Result<Image> {
        self.apply_with(img, self.default_quality())
    }
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RAW" => Ok(QualityTier::Raw),
            "HQ" => Ok(QualityTier::Hq),
            "LQ" => Ok(QualityTier::Lq),
            _ => Err(Error::Config(format!("unknown quality tier '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn bilinear_corner_aligned() {
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 3, 1).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let img = random_image(1, 7, 5, 3);
        assert_eq!(resize_bilinear(&img, 7, 5).unwrap(), img);
        let flat = Image::filled(6, 6, 3, 0.3).unwrap();
        let up = resize_bilinear(&flat, 11, 4).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        let back = resize_bilinear(&up, 6, 6).unwrap();
        assert!(back.max_abs_diff(&flat) < 1e-15);
    }

    #[test]
    fn bilinear_rejects_zero_target() {
        let img = random_image(2, 4, 4, 1);
        assert!(matches!(
            resize_bilinear(&img, 0, 4),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn quant_table_scaling() {
        assert!(quant_table(100).unwrap().iter().all(|&t| t == 1));
        assert_eq!(quant_table(50).unwrap(), LUMA_QUANT_TABLE);
        let t30 = quant_table(30).unwrap();
        // 5000 / 30 = 166 (integer division), (16 * 166 + 50) / 100 = 27
        assert_eq!(t30[0], 27);
        assert_eq!(quant_table(1).unwrap()[0], 255);
        assert!(quant_table(0).is_err());
        assert!(quant_table(101).is_err());
    }

    #[test]
    fn quality_100_is_nearly_lossless() {
        for seed in 0..10 {
            let img = random_image(seed, 32, 32, 1);
            let out = compress_jpeg_like(&img, 100).unwrap();
            assert!(out.max_abs_diff(&img) <= 2.0 / 255.0);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        for q in [1u8, 10, 30, 75, 100] {
            let img = Image::filled(13, 21, 3, 0.42).unwrap();
            let out = compress_jpeg_like(&img, q).unwrap();
            let first = out.data()[0];
            assert!(out.data().iter().all(|v| (v - first).abs() < 1e-12));
            // DC moves by at most half a quantizer step; one DC unit is 1/8 sample unit.
            let step = quant_table(q).unwrap()[0] as f64;
            assert!((first - 0.42).abs() <= step / 2.0 / 8.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn raw_tier_is_identity() {
        let img = random_image(4, 9, 9, 3);
        assert_eq!(QualityTier::Raw.apply(&img).unwrap(), img);
        assert_eq!(QualityTier::Raw.apply_with(&img, Some(10)).unwrap(), img);
        assert_eq!("lq".parse::<QualityTier>().unwrap(), QualityTier::Lq);
        assert!("MQ".parse::<QualityTier>().is_err());
    }

    #[test]
    fn second_pass_drifts_less_than_one_step() {
        let img = random_image(9, 24, 24, 1);
        for q in [30u8, 75] {
            let table = quant_table(q).unwrap();
            let once = compress_jpeg_like(&img, q).unwrap();
            let twice = compress_jpeg_like(&once, q).unwrap();
            let a = block_dct8(&once.channel(0));
            let b = block_dct8(&twice.channel(0));
            for y in 0..a.rows() {
                for x in 0..a.cols() {
                    let t = table[(y % 8) * 8 + x % 8] as f64;
                    assert!((a.get(y, x) - b.get(y, x)).abs() < t);
                }
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(5, 6, 7, 3);
        let path = dir.path().join("x.png");
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.to_bytes(), img.to_bytes());
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn load_missing_is_io_error() {
        let err = load_image(Path::new("/definitely/not/here.png")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn load_garbage_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not an image at all").unwrap();
        assert!(matches!(load_image(&path), Err(Error::Format { .. })));
    }
}
