//! Document rasters: loading, Otsu binarization, ink contours and patch sampling.
//!
//! Images are 8-bit, row-major. Binarization assumes dark ink on light paper
//! unless [`Polarity::LightInk`] is requested.

use std::cmp::Ordering;
use std::path::Path;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of a sampled patch.
pub const PATCH_SIDE: usize = 32;
/// Number of pixels in a patch.
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;
const HALF: usize = PATCH_SIDE / 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[v as usize] += 1;
        }
        hist
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} mask entries for a {width}x{height} image",
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_ink(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn ink_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Which side of the threshold counts as ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Intensity <= threshold is ink.
    #[default]
    DarkInk,
    /// Intensity > threshold is ink.
    LightInk,
}

/// A 32x32 window of intensities scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Vec<f32>,
    pub center: (usize, usize),
    pub source_doc: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSampling {
    pub stride: usize,
    pub max_patches: usize,
    pub seed: u64,
}

/// Between-class variance of a split, kept as an exact fraction
/// `diff^2 / den` with `diff = s0*N - S*n0` and `den = n0*n1`.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    diff: u128,
    den: u128,
}

impl SplitScore {
    fn cmp(&self, other: &Self) -> Ordering {
        let fast = self
            .diff
            .checked_mul(self.diff)
            .and_then(|v| v.checked_mul(other.den))
            .zip(
                other
                    .diff
                    .checked_mul(other.diff)
                    .and_then(|v| v.checked_mul(self.den)),
            );
        match fast {
            Some((lhs, rhs)) => lhs.cmp(&rhs),
            None => {
                let lhs = BigUint::from(self.diff).pow(2) * BigUint::from(other.den);
                let rhs = BigUint::from(other.diff).pow(2) * BigUint::from(self.den);
                lhs.cmp(&rhs)
            }
        }
    }
}

/// Otsu threshold on a 256-bin histogram.
///
/// Returns the smallest `t` maximizing the between-class variance of the
/// split `{v <= t}` / `{v > t}`. Comparisons are exact, so ties resolve
/// deterministically.
pub fn otsu_threshold_from_histogram(hist: &[u64; 256]) -> Result<u8> {
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    let sum: u128 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as u128 * c as u128)
        .sum();
    if total == 0 {
        return Err(Error::InvalidImage("empty histogram".into()));
    }

    let mut best: Option<(u8, SplitScore)> = None;
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    for t in 0..256usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = SplitScore {
            diff: (s0 * total).abs_diff(sum * n0),
            den: n0 * n1,
        };
        if score.diff == 0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => score.cmp(b) == Ordering::Greater,
        };
        if better {
            best = Some((t as u8, score));
        }
    }

    best.map(|(t, _)| t).ok_or_else(|| {
        let only = hist.iter().position(|&c| c > 0).unwrap_or(0) as u8;
        Error::DegenerateHistogram(only)
    })
}

pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    otsu_threshold_from_histogram(&img.histogram())
}

pub fn threshold_image(img: &GrayImage, threshold: u8, polarity: Polarity) -> BinaryImage {
    let mask = img
        .data
        .iter()
        .map(|&v| match polarity {
            Polarity::DarkInk => v <= threshold,
            Polarity::LightInk => v > threshold,
        })
        .collect();
    BinaryImage {
        width: img.width,
        height: img.height,
        mask,
    }
}

/// Otsu threshold followed by [`threshold_image`].
pub fn binarize(img: &GrayImage, polarity: Polarity) -> Result<(u8, BinaryImage)> {
    let t = otsu_threshold(img)?;
    Ok((t, threshold_image(img, t, polarity)))
}

/// Ink pixels with at least one non-ink 4-neighbour, in row-major order.
/// Pixels on the image border count as touching background.
pub fn extract_contour(bin: &BinaryImage) -> Vec<(usize, usize)> {
    let (w, h) = (bin.width, bin.height);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !bin.is_ink(r, c) {
                continue;
            }
            let on_border = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
            if on_border
                || !bin.is_ink(r - 1, c)
                || !bin.is_ink(r + 1, c)
                || !bin.is_ink(r, c - 1)
                || !bin.is_ink(r, c + 1)
            {
                out.push((r, c));
            }
        }
    }
    out
}

/// Whether a 32x32 window centred at `(row, col)` fits inside the image.
/// The window spans rows `row-16..=row+15` and likewise for columns.
pub fn window_fits(img_width: usize, img_height: usize, row: usize, col: usize) -> bool {
    row >= HALF && col >= HALF && row + HALF <= img_height && col + HALF <= img_width
}

pub fn extract_window(img: &GrayImage, row: usize, col: usize) -> Vec<f32> {
    let mut pixels = Vec::with_capacity(PATCH_LEN);
    for r in row - HALF..row + HALF {
        let start = r * img.width + col - HALF;
        pixels.extend(
            img.data[start..start + PATCH_SIDE]
                .iter()
                .map(|&v| v as f32 / 255.0),
        );
    }
    pixels
}

/// Takes every `stride`-th contour point, drops those whose window would leave
/// the image, and caps the result at `max_patches` by seeded uniform
/// subsampling (original order kept).
pub fn sample_patches(
    img: &GrayImage,
    contour: &[(usize, usize)],
    sampling: &PatchSampling,
    doc_id: &str,
) -> Result<Vec<Patch>> {
    if sampling.stride == 0 {
        return Err(Error::Config("patch stride must be >= 1".into()));
    }
    let eligible: Vec<(usize, usize)> = contour
        .iter()
        .step_by(sampling.stride)
        .copied()
        .filter(|&(r, c)| window_fits(img.width, img.height, r, c))
        .collect();

    let chosen: Vec<(usize, usize)> = if eligible.len() > sampling.max_patches {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let mut idx = rand::seq::index::sample(&mut rng, eligible.len(), sampling.max_patches)
            .into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| eligible[i]).collect()
    } else {
        eligible
    };

    Ok(chosen
        .into_iter()
        .map(|(r, c)| Patch {
            pixels: extract_window(img, r, c),
            center: (r, c),
            source_doc: doc_id.to_string(),
        })
        .collect())
}

/// `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Loads a PNG or PGM as 8-bit grayscale. Colour inputs go through [`luma`].
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data = match dynimg {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage::new(w, h, data)
}

/// Writes an 8-bit grayscale PNG atomically.
pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    use image::ImageEncoder;
    let mut bytes = Vec::new();
    image::codecs::png::PngEncoder::new(&mut bytes)
        .write_image(
            &img.data,
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    crate::format::write_atomic(path, &bytes)
}

/// Ink is written black (0), background white (255).
pub fn binary_to_gray(bin: &BinaryImage) -> GrayImage {
    GrayImage {
        width: bin.width,
        height: bin.height,
        data: bin.mask.iter().map(|&m| if m { 0 } else { 255 }).collect(),
    }
}

/// Reads a mask written by [`binary_to_gray`]; pixels below 128 are ink.
pub fn gray_to_binary(img: &GrayImage) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        mask: img.data.iter().map(|&v| v < 128).collect(),
    }
}
