//! Procedural 16×16-style grayscale shape images and their binary container.
//!
//! Dataset file layout (little-endian):
//!
//! ```text
//! magic    4 bytes "CSDS"
//! version  u32     1
//! seed     u64
//! count    u32
//! height   u32
//! width    u32
//! per image:
//!   class  u8      0 disk, 1 square, 2 cross, 3 bar
//!   cx, cy, size   f64 x 3
//!   vertical       u8 (bars only; 0 otherwise)
//!   pixels         height*width x f64, row-major, values in [-1, 1]
//! ```

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Class label standing in for the textual prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Disk,
    Square,
    Cross,
    Bar,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [ShapeClass::Disk, ShapeClass::Square, ShapeClass::Cross, ShapeClass::Bar];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Cross => "cross",
            ShapeClass::Bar => "bar",
        }
    }

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

/// Semantic condition attached to an image (the stand-in for `t_sem`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticCondition {
    pub label: ShapeClass,
}

impl From<ShapeClass> for SemanticCondition {
    fn from(label: ShapeClass) -> Self {
        SemanticCondition { label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMeta {
    pub class: ShapeClass,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub vertical: bool,
}

/// Grayscale image with pixels in `[-1, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pub meta: Option<ShapeMeta>,
}

impl ToyImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("image pixels", height * width, pixels.len()));
        }
        if let Some(p) = pixels.iter().find(|p| !(p.is_finite() && (-1.0..=1.0).contains(*p))) {
            return Err(Error::Domain(format!("pixel value {p} outside [-1, 1]")));
        }
        Ok(ToyImage { height, width, pixels, meta: None })
    }

    /// Clamps arbitrary real values into `[-1, 1]`; NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let pixels = values.iter().map(|&v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn class(&self) -> Option<ShapeClass> {
        self.meta.map(|m| m.class)
    }
}

const SUPERSAMPLE: usize = 4;

/// Renders one shape with anti-aliased edges (4×4 supersampled coverage).
pub fn render_shape(height: usize, width: usize, meta: ShapeMeta) -> ToyImage {
    let inside = |x: f64, y: f64| -> bool {
        let dx = x - meta.cx;
        let dy = y - meta.cy;
        let s = meta.size;
        match meta.class {
            ShapeClass::Disk => dx * dx + dy * dy <= s * s,
            ShapeClass::Square => dx.abs() <= s && dy.abs() <= s,
            ShapeClass::Cross => {
                let arm = 0.3 * s + 0.5;
                (dx.abs() <= s && dy.abs() <= arm) || (dy.abs() <= s && dx.abs() <= arm)
            }
            ShapeClass::Bar => {
                let (along, across) = if meta.vertical { (dy, dx) } else { (dx, dy) };
                along.abs() <= s && across.abs() <= 0.35 * s
            }
        }
    };
    let mut pixels = Vec::with_capacity(height * width);
    let n = SUPERSAMPLE as f64;
    for r in 0..height {
        for c in 0..width {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = c as f64 + (sx as f64 + 0.5) / n;
                    let y = r as f64 + (sy as f64 + 0.5) / n;
                    hits += inside(x, y) as usize;
                }
            }
            pixels.push(2.0 * hits as f64 / (n * n) - 1.0);
        }
    }
    ToyImage { height, width, pixels, meta: Some(meta) }
}

/// Draws random position and size for `class`, keeping the shape inside the frame.
pub fn random_shape<R: Rng>(rng: &mut R, class: ShapeClass, height: usize, width: usize) -> ToyImage {
    let scale = height.min(width) as f64 / 16.0;
    let (lo, hi) = match class {
        ShapeClass::Disk => (2.5, 5.0),
        ShapeClass::Square => (2.0, 4.5),
        ShapeClass::Cross => (3.0, 6.0),
        ShapeClass::Bar => (3.5, 6.5),
    };
    let size = rng.random_range(lo * scale..hi * scale);
    let vertical = class == ShapeClass::Bar && rng.random_bool(0.5);
    let margin = |extent: f64| {
        let m = (0.6 * size).min(extent / 2.0 - 0.5);
        (m, extent - m)
    };
    let (x0, x1) = margin(width as f64);
    let (y0, y1) = margin(height as f64);
    let cx = rng.random_range(x0..x1);
    let cy = rng.random_range(y0..y1);
    render_shape(height, width, ShapeMeta { class, cx, cy, size, vertical })
}

/// Labelled image collection. Image `i` has class `ALL[i % 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub images: Vec<ToyImage>,
}

impl Dataset {
    pub fn generate(count: usize, height: usize, width: usize, seed: u64) -> Self {
        let images = (0..count)
            .map(|i| {
                let mut r = rng::substream(seed, i as u64);
                random_shape(&mut r, ShapeClass::ALL[i % ShapeClass::COUNT], height, width)
            })
            .collect();
        Dataset { seed, height, width, images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> [usize; ShapeClass::COUNT] {
        let mut counts = [0; ShapeClass::COUNT];
        for im in &self.images {
            if let Some(c) = im.class() {
                counts[c.index()] += 1;
            }
        }
        counts
    }

    pub fn label(&self, i: usize) -> ShapeClass {
        self.images[i].class().unwrap_or(ShapeClass::ALL[i % ShapeClass::COUNT])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(28 + self.images.len() * (34 + self.height * self.width * 8));
        buf.extend_from_slice(b"CSDS");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.images.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for (i, im) in self.images.iter().enumerate() {
            let meta = im.meta.unwrap_or(ShapeMeta {
                class: self.label(i),
                cx: 0.0,
                cy: 0.0,
                size: 0.0,
                vertical: false,
            });
            buf.push(meta.class.index() as u8);
            for v in [meta.cx, meta.cy, meta.size] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(meta.vertical as u8);
            for p in im.pixels() {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != b"CSDS" {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let seed = cur.u64()?;
        let count = cur.u32()? as usize;
        let height = cur.u32()? as usize;
        let width = cur.u32()? as usize;
        let mut images = Vec::with_capacity(count);
        for _ in 0..count {
            let tag = cur.take(1)?[0] as usize;
            let class = ShapeClass::from_index(tag)
                .ok_or_else(|| Error::Format(format!("unknown class tag {tag}")))?;
            let (cx, cy, size) = (cur.f64()?, cur.f64()?, cur.f64()?);
            let vertical = cur.take(1)?[0] != 0;
            let pixels = (0..height * width).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let mut im = ToyImage::new(height, width, pixels)?;
            im.meta = Some(ShapeMeta { class, cx, cy, size, vertical });
            images.push(im);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Ok(Dataset { seed, height, width, images })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("unexpected end of dataset".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
