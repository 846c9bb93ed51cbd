//! Synthetic handwriting for tests and demos.
//!
//! Every writer draws the same small alphabet of Bezier glyphs, but with a
//! personal slant, stroke width, size, aspect, curvature and a fixed set of
//! per-glyph shape distortions. Documents by one writer differ only in the
//! glyph sequence, the baseline jitter and the background noise.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnn::LabeledPatches;
use crate::error::Result;
use crate::format::write_atomic;
use crate::imaging::{save_gray_png, GrayImage, PATCH_LEN, PATCH_SIDE};

const ALPHABET_SEED: u64 = 0x5eed_a1fa;
const GLYPHS: usize = 16;
const STROKES_PER_GLYPH: usize = 2;

type Point = (f64, f64);
/// Cubic Bezier control points in glyph units: x in [0,1] left to right,
/// y in [0,1] top to bottom with the baseline at y = 1.
type Stroke = [Point; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct WriterStyle {
    /// Shear angle in radians; positive leans right.
    pub slant: f64,
    /// Pen radius in pixels.
    pub pen_radius: f64,
    /// Glyph height in pixels.
    pub glyph_height: f64,
    /// Width over height of a glyph box.
    pub aspect: f64,
    /// 0 draws straight chords, 1 the alphabet's curves, more exaggerates them.
    pub curvature: f64,
    pub ink_level: u8,
    glyphs: Vec<[Stroke; STROKES_PER_GLYPH]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageLayout {
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    pub paper_level: u8,
    /// Uniform noise amplitude added to every pixel.
    pub noise: u8,
}

impl Default for PageLayout {
    fn default() -> Self {
        Self {
            width: 360,
            height: 240,
            margin: 18,
            paper_level: 225,
            noise: 12,
        }
    }
}

/// One generated document.
#[derive(Debug, Clone)]
pub struct SyntheticDoc {
    pub writer_id: String,
    pub doc_id: String,
    pub image: GrayImage,
}

fn alphabet() -> Vec<[Stroke; STROKES_PER_GLYPH]> {
    let mut rng = ChaCha8Rng::seed_from_u64(ALPHABET_SEED);
    let pt = |rng: &mut ChaCha8Rng| (rng.gen_range(0.05..0.95), rng.gen_range(0.05..1.0));
    (0..GLYPHS)
        .map(|_| std::array::from_fn(|_| [pt(&mut rng), pt(&mut rng), pt(&mut rng), pt(&mut rng)]))
        .collect()
}

impl WriterStyle {
    /// Style of writer `index`, fully determined by `(index, seed)`.
    pub fn sample(index: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let slant = rng.gen_range(-0.6..0.6);
        let pen_radius = rng.gen_range(0.8..2.6);
        let glyph_height = rng.gen_range(16.0..30.0);
        let aspect = rng.gen_range(0.5..1.1);
        let curvature = rng.gen_range(0.0..1.6);
        let ink_level = rng.gen_range(20..90);
        let glyphs = alphabet()
            .into_iter()
            .map(|strokes| {
                strokes.map(|s| {
                    s.map(|(x, y)| {
                        (
                            (x + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0),
                            (y + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0),
                        )
                    })
                })
            })
            .collect();
        Self {
            slant,
            pen_radius,
            glyph_height,
            aspect,
            curvature,
            ink_level,
            glyphs,
        }
    }

    /// Glyph strokes after the curvature adjustment, still in glyph units.
    fn glyph(&self, g: usize) -> [Stroke; STROKES_PER_GLYPH] {
        self.glyphs[g].map(|[p0, p1, p2, p3]| {
            let chord = |t: f64| (p0.0 + t * (p3.0 - p0.0), p0.1 + t * (p3.1 - p0.1));
            let bend = |p: Point, c: Point| (c.0 + self.curvature * (p.0 - c.0), c.1 + self.curvature * (p.1 - c.1));
            [p0, bend(p1, chord(1.0 / 3.0)), bend(p2, chord(2.0 / 3.0)), p3]
        })
    }
}

fn bezier(s: &Stroke, t: f64) -> Point {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (
        a * s[0].0 + b * s[1].0 + c * s[2].0 + d * s[3].0,
        a * s[0].1 + b * s[1].1 + c * s[2].1 + d * s[3].1,
    )
}

/// Ink coverage in [0,1] per pixel, max-combined.
struct Canvas {
    width: usize,
    height: usize,
    coverage: Vec<f32>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            coverage: vec![0.0; width * height],
        }
    }

    /// Antialiased disc of radius `r` centred at `(x, y)` (x = column).
    fn dab(&mut self, x: f64, y: f64, r: f64) {
        let reach = r + 1.0;
        let c0 = (x - reach).floor().max(0.0) as usize;
        let r0 = (y - reach).floor().max(0.0) as usize;
        let c1 = ((x + reach).ceil() as isize).clamp(-1, self.width as isize - 1);
        let r1 = ((y + reach).ceil() as isize).clamp(-1, self.height as isize - 1);
        if c1 < 0 || r1 < 0 {
            return;
        }
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let d = ((col as f64 + 0.5 - x).powi(2) + (row as f64 + 0.5 - y).powi(2)).sqrt();
                let cov = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                let cell = &mut self.coverage[row * self.width + col];
                *cell = cell.max(cov);
            }
        }
    }

    fn stroke(&mut self, pts: impl Fn(f64) -> Point, approx_len: f64, r: f64) {
        let steps = (approx_len * 2.0).ceil().max(2.0) as usize;
        for i in 0..=steps {
            let (x, y) = pts(i as f64 / steps as f64);
            self.dab(x, y, r);
        }
    }

    fn into_gray<R: Rng>(self, paper: u8, ink: u8, noise: u8, rng: &mut R) -> Result<GrayImage> {
        let data = self
            .coverage
            .iter()
            .map(|&c| {
                let base = paper as f32 - c * (paper as f32 - ink as f32);
                let jitter = if noise > 0 {
                    rng.gen_range(-(noise as f32)..=noise as f32)
                } else {
                    0.0
                };
                (base + jitter).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayImage::new(self.width, self.height, data)
    }
}

/// Renders one page of pseudo-text in the given style.
pub fn render_document(style: &WriterStyle, layout: &PageLayout, doc_seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(doc_seed);
    let mut canvas = Canvas::new(layout.width, layout.height);
    let h = style.glyph_height;
    let w = h * style.aspect;
    let shear = style.slant.tan();
    let margin = layout.margin as f64;
    let right = layout.width as f64 - margin - w - h * shear.abs();
    let line_gap = 1.7 * h;

    let mut baseline = margin + h;
    while baseline + 0.2 * h < layout.height as f64 - margin {
        let mut x = margin + h * (-shear).max(0.0);
        while x < right {
            let word_len = rng.gen_range(2..=5);
            for _ in 0..word_len {
                if x >= right {
                    break;
                }
                let g = rng.gen_range(0..GLYPHS);
                let dy = rng.gen_range(-1.5..1.5);
                let (ox, oy) = (x, baseline + dy);
                for s in style.glyph(g) {
                    let to_page = |(gx, gy): Point| {
                        let py = oy - (1.0 - gy) * h;
                        (ox + gx * w + shear * (oy - py), py)
                    };
                    let poly = s.windows(2).map(|p| {
                        let (a, b) = (to_page(p[0]), to_page(p[1]));
                        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
                    });
                    let approx_len: f64 = poly.sum();
                    canvas.stroke(|t| to_page(bezier(&s, t)), approx_len, style.pen_radius);
                }
                x += w * 1.1;
            }
            x += w * 0.8;
        }
        baseline += line_gap;
    }
    canvas.into_gray(layout.paper_level, style.ink_level, layout.noise, &mut rng)
}

/// `writers x docs` documents with writer ids `first_writer..`, zero-padded to
/// three digits, and document ids `1..=docs`.
pub fn corpus(writers: usize, docs: usize, first_writer: usize, layout: &PageLayout, seed: u64) -> Result<Vec<SyntheticDoc>> {
    let mut out = Vec::with_capacity(writers * docs);
    for w in first_writer..first_writer + writers {
        let style = WriterStyle::sample(w, seed);
        for d in 1..=docs {
            let doc_seed = seed
                .wrapping_add((w as u64) << 20)
                .wrapping_add(d as u64)
                .wrapping_mul(0xd134_2543_de82_ef95);
            out.push(SyntheticDoc {
                writer_id: format!("{w:03}"),
                doc_id: d.to_string(),
                image: render_document(&style, layout, doc_seed)?,
            });
        }
    }
    Ok(out)
}

/// Writes `<writer>_<doc>.png` for every document and a `manifest.txt`
/// listing them with their writer ids. Returns the manifest path.
pub fn write_dataset(dir: &Path, docs: &[SyntheticDoc]) -> Result<PathBuf> {
    let mut manifest = String::new();
    for d in docs {
        let name = format!("{}_{}.png", d.writer_id, d.doc_id);
        save_gray_png(&d.image, &dir.join(&name))?;
        manifest.push_str(&format!("{name}\t{}\n", d.writer_id));
    }
    let path = dir.join("manifest.txt");
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

/// A 32x32 patch holding one dark bar through the middle at
/// `class * 45` degrees, with random offset, width and pixel noise.
pub fn oriented_bar<R: Rng>(class: usize, rng: &mut R) -> Vec<f32> {
    let angle = (class % 4) as f64 * std::f64::consts::FRAC_PI_4;
    let (dx, dy) = (angle.cos(), -angle.sin());
    let offset = rng.gen_range(-4.0..4.0);
    let (cx, cy) = (16.0 - dy * offset, 16.0 + dx * offset);
    let mut canvas = Canvas::new(PATCH_SIDE, PATCH_SIDE);
    let r = rng.gen_range(1.0..2.5);
    canvas.stroke(|t| (cx + (t - 0.5) * 40.0 * dx, cy + (t - 0.5) * 40.0 * dy), 40.0, r);
    let mut out = Vec::with_capacity(PATCH_LEN);
    for c in canvas.coverage {
        let v = 0.9 - 0.8 * c + rng.gen_range(-0.1f32..0.1);
        out.push(v.clamp(0.0, 1.0));
    }
    out
}

/// `n` bar patches with labels cycling through the four orientations.
pub fn bars_dataset(n: usize, seed: u64) -> Result<LabeledPatches> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = LabeledPatches::new();
    for i in 0..n {
        let class = i % 4;
        data.push(&oriented_bar(class, &mut rng), class)?;
    }
    Ok(data)
}
