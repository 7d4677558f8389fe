use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::raster::RasterImage;

/// Default canvas side, matching the square images returned by generators.
pub const DEFAULT_CANVAS_SIDE: u32 = 1024;

/// Pen widths the studio offers are clamped to this range.
pub const MIN_STROKE_WIDTH: f32 = 1.0;
pub const MAX_STROKE_WIDTH: f32 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);

    pub fn rgba(self) -> [u8; 4] {
        [self.0[0], self.0[1], self.0[2], 255]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub x: f32,
    pub y: f32,
    /// Milliseconds since the start of the sketch.
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width: DEFAULT_CANVAS_SIDE,
            height: DEFAULT_CANVAS_SIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<StrokePoint>,
    pub width: f32,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SketchError {
    #[error("sketch has no strokes")]
    EmptySketch,
    #[error("stroke {stroke} has {points} points, need at least 2")]
    TooFewPoints { stroke: usize, points: usize },
    #[error("stroke {stroke} point {point} lies outside the {width}x{height} canvas")]
    OutOfBounds {
        stroke: usize,
        point: usize,
        width: u32,
        height: u32,
    },
    #[error("stroke {stroke} timestamps decrease at point {point}")]
    TimeReversed { stroke: usize, point: usize },
    #[error("stroke {stroke} width {width} outside [{MIN_STROKE_WIDTH}, {MAX_STROKE_WIDTH}]")]
    BadWidth { stroke: usize, width: f32 },
    #[error("canvas must be non-empty")]
    EmptyCanvas,
}

impl Stroke {
    pub fn validate(&self, index: usize, canvas: Canvas) -> Result<(), SketchError> {
        if self.points.len() < 2 {
            return Err(SketchError::TooFewPoints {
                stroke: index,
                points: self.points.len(),
            });
        }
        if !(MIN_STROKE_WIDTH..=MAX_STROKE_WIDTH).contains(&self.width) {
            return Err(SketchError::BadWidth {
                stroke: index,
                width: self.width,
            });
        }
        for (i, p) in self.points.iter().enumerate() {
            let inside = p.x >= 0.0
                && p.y >= 0.0
                && p.x <= canvas.width as f32
                && p.y <= canvas.height as f32;
            if !inside {
                return Err(SketchError::OutOfBounds {
                    stroke: index,
                    point: i,
                    width: canvas.width,
                    height: canvas.height,
                });
            }
        }
        if let Some(i) = self.points.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(SketchError::TimeReversed {
                stroke: index,
                point: i + 1,
            });
        }
        Ok(())
    }
}

/// The user's pen input: ordered strokes on a fixed canvas.
///
/// The raster is derived on first use and cached; it is a pure function of
/// strokes and canvas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchDocument {
    pub strokes: Vec<Stroke>,
    pub canvas: Canvas,
    #[serde(skip)]
    raster: OnceLock<RasterImage>,
}

impl PartialEq for SketchDocument {
    fn eq(&self, other: &Self) -> bool {
        self.strokes == other.strokes && self.canvas == other.canvas
    }
}

impl SketchDocument {
    pub fn new(canvas: Canvas, strokes: Vec<Stroke>) -> Self {
        Self {
            strokes,
            canvas,
            raster: OnceLock::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SketchError> {
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(SketchError::EmptyCanvas);
        }
        self.strokes
            .iter()
            .enumerate()
            .try_for_each(|(i, s)| s.validate(i, self.canvas))
    }

    pub fn raster(&self) -> Result<&RasterImage, SketchError> {
        if let Some(r) = self.raster.get() {
            return Ok(r);
        }
        let r = rasterize(self)?;
        Ok(self.raster.get_or_init(|| r))
    }
}

/// Render a sketch on a white background.
///
/// Each stroke is drawn as round-capped line segments in draw order with no
/// anti-aliasing: a pixel is inked iff its centre lies within `width / 2` of
/// one of the stroke's segments.
pub fn rasterize(doc: &SketchDocument) -> Result<RasterImage, SketchError> {
    if doc.strokes.is_empty() {
        return Err(SketchError::EmptySketch);
    }
    doc.validate()?;
    let Canvas { width, height } = doc.canvas;
    let mut buf = Rgb::WHITE
        .rgba()
        .iter()
        .copied()
        .cycle()
        .take(width as usize * height as usize * 4)
        .collect::<Vec<_>>();
    for stroke in &doc.strokes {
        draw_stroke(&mut buf, width, height, stroke);
    }
    Ok(RasterImage::new(width, height, buf).expect("buffer sized from canvas"))
}

/// Paint strokes over an existing image (used by the re-sketch edit path).
pub fn draw_strokes_over(base: &RasterImage, strokes: &[Stroke]) -> RasterImage {
    let (w, h) = (base.width(), base.height());
    base.map_pixels(|buf| {
        for s in strokes {
            draw_stroke(buf, w, h, s);
        }
    })
}

fn draw_stroke(buf: &mut [u8], width: u32, height: u32, stroke: &Stroke) {
    let radius = stroke.width as f64 / 2.0;
    let rgba = stroke.color.rgba();
    for seg in stroke.points.windows(2) {
        let a = (seg[0].x as f64, seg[0].y as f64);
        let b = (seg[1].x as f64, seg[1].y as f64);
        fill_capsule(buf, width, height, a, b, radius, rgba);
    }
}

/// Squared distance from `p` to the segment `a`-`b`.
pub(crate) fn segment_distance_sq(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).powi(2) + (p.1 - cy).powi(2)
}

/// Scanline fill of the capsule around a segment.
///
/// A capsule is convex, so each row meets it in one interval. The row's seed
/// is the segment point whose y is closest to the row centre; the interval is
/// grown outward from there with the exact inside test.
fn fill_capsule(
    buf: &mut [u8],
    width: u32,
    height: u32,
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    rgba: [u8; 4],
) {
    let r_sq = radius * radius;
    let inside = |px: i64, py: i64| {
        segment_distance_sq((px as f64 + 0.5, py as f64 + 0.5), a, b) <= r_sq
    };
    let y_lo = ((a.1.min(b.1) - radius - 0.5).floor() as i64).max(0);
    let y_hi = ((a.1.max(b.1) + radius - 0.5).ceil() as i64).min(height as i64 - 1);
    for py in y_lo..=y_hi {
        let yc = py as f64 + 0.5;
        let seed_x = if a.1 == b.1 {
            a.0
        } else {
            let t = ((yc - a.1) / (b.1 - a.1)).clamp(0.0, 1.0);
            a.0 + t * (b.0 - a.0)
        };
        let sx = seed_x.floor() as i64;
        let Some(start) = [sx, sx - 1, sx + 1].into_iter().find(|&x| inside(x, py)) else {
            continue;
        };
        let mut lo = start;
        while lo > 0 && inside(lo - 1, py) {
            lo -= 1;
        }
        let mut hi = start;
        while hi + 1 < width as i64 && inside(hi + 1, py) {
            hi += 1;
        }
        let (lo, hi) = (lo.max(0), hi.min(width as i64 - 1));
        let row = py as usize * width as usize;
        for px in lo..=hi {
            let i = (row + px as usize) * 4;
            buf[i..i + 4].copy_from_slice(&rgba);
        }
    }
}
