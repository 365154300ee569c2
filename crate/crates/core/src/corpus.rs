//! Synthetic design-like corpora for desk-scale experiments.
//!
//! Three parametric generators draw dark structures on a white (+1)
//! ground: filled `shapes` (ellipse / rounded box / triangle plus a
//! satellite), outlined `frames` (a box with interior struts), and
//! stick-figure `bikes` (two wheels, frame tubes, seat and handlebar).
//! Primitives are rendered from signed distance fields with a soft
//! ~1.5-pixel edge, which keeps the images smooth enough for a small
//! autoencoder to learn while preserving crisp global structure.
//!
//! Parameter ranges are deliberately tight: a corpus of a few hundred
//! samples must cover the layout manifold densely enough that a
//! bottlenecked autoencoder generalizes to fresh draws instead of
//! memorizing the training images.
//!
//! Image `i` of a corpus is drawn from `derive_seed(seed, i)`, so a
//! corpus is reproducible and individual images can be regenerated.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::ImageTensor;
use crate::util::derive_seed;

/// Corpus family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Shapes,
    Frames,
    BikesStick,
}

impl Generator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shapes" => Ok(Generator::Shapes),
            "frames" => Ok(Generator::Frames),
            "bikes-stick" | "bikes_stick" => Ok(Generator::BikesStick),
            other => Err(Error::input(format!("unknown corpus generator `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Generator::Shapes => "shapes",
            Generator::Frames => "frames",
            Generator::BikesStick => "bikes-stick",
        }
    }
}

/// Structural parameter ranges shared by the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    /// Primary structure size as a fraction of the image, min..max.
    pub scale: (f64, f64),
    /// Ink level range (darkness of strokes/fills).
    pub ink: (f64, f64),
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            scale: (0.30, 0.38),
            ink: (-0.85, -0.65),
        }
    }
}

/// A corpus request.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub generator: Generator,
    pub count: usize,
    pub size: usize,
    pub params: GenParams,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(generator: Generator, count: usize, size: usize, seed: u64) -> Self {
        CorpusSpec {
            generator,
            count,
            size,
            params: GenParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::input("corpus count must be ≥ 1"));
        }
        if self.size < 16 {
            return Err(Error::input(format!(
                "corpus image size must be ≥ 16, got {}",
                self.size
            )));
        }
        let (lo, hi) = self.params.ink;
        if !(-1.0..=0.0).contains(&lo) || !(-1.0..=0.0).contains(&hi) || lo > hi {
            return Err(Error::input("ink range must satisfy -1 ≤ lo ≤ hi ≤ 0"));
        }
        let (slo, shi) = self.params.scale;
        if !(slo > 0.0 && shi <= 1.0 && slo <= shi) {
            return Err(Error::input("scale range must satisfy 0 < lo ≤ hi ≤ 1"));
        }
        Ok(())
    }
}

/// Generates the whole corpus.
pub fn generate(spec: &CorpusSpec) -> Result<Vec<ImageTensor>> {
    spec.validate()?;
    Ok((0..spec.count)
        .map(|i| generate_one(spec, derive_seed(spec.seed, i as u64)))
        .collect())
}

/// Generates a single image from an explicit seed.
pub fn generate_one(spec: &CorpusSpec, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::new(spec.size);
    match spec.generator {
        Generator::Shapes => draw_shapes(&mut canvas, &spec.params, &mut rng),
        Generator::Frames => draw_frame(&mut canvas, &spec.params, &mut rng),
        Generator::BikesStick => draw_bike(&mut canvas, &spec.params, &mut rng),
    }
    canvas.into_image()
}

/// Soft edge width in pixels.
const EDGE: f64 = 1.5;

/// Accumulates ink coverage (union of primitives) over a white ground.
struct Canvas {
    size: usize,
    /// Per pixel: (coverage in [0,1], ink level at full coverage).
    cover: Vec<f64>,
    shade: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas {
            size,
            cover: vec![0.0; size * size],
            shade: vec![0.0; size * size],
        }
    }

    /// Rasterizes one signed distance field with the given ink level.
    /// Coverage = smooth step across the zero contour.
    fn paint<F: Fn(f64, f64) -> f64>(&mut self, ink: f64, sdf: F) {
        for y in 0..self.size {
            for x in 0..self.size {
                let d = sdf(x as f64 + 0.5, y as f64 + 0.5);
                let c = smooth_coverage(d);
                if c <= 0.0 {
                    continue;
                }
                let i = y * self.size + x;
                // Union: keep the darker/denser contribution.
                if c > self.cover[i] {
                    self.cover[i] = c;
                    self.shade[i] = ink;
                }
            }
        }
    }

    fn into_image(self) -> ImageTensor {
        let data: Vec<f64> = self
            .cover
            .iter()
            .zip(&self.shade)
            .map(|(&c, &ink)| (1.0 + (ink - 1.0) * c).clamp(-1.0, 1.0))
            .collect();
        ImageTensor::new(data, self.size, self.size, 1).expect("clamped range")
    }
}

/// Maps a signed distance to coverage with a soft edge.
fn smooth_coverage(d: f64) -> f64 {
    let t = (0.5 - d / EDGE).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

// --- signed distance primitives -------------------------------------

fn rotate(px: f64, py: f64, cos: f64, sin: f64) -> (f64, f64) {
    (px * cos + py * sin, -px * sin + py * cos)
}

fn sdf_circle(px: f64, py: f64, cx: f64, cy: f64, r: f64) -> f64 {
    ((px - cx).hypot(py - cy)) - r
}

/// Ring of the circle outline with stroke half-width `w`.
fn sdf_ring(px: f64, py: f64, cx: f64, cy: f64, r: f64, w: f64) -> f64 {
    sdf_circle(px, py, cx, cy, r).abs() - w
}

fn sdf_ellipse(px: f64, py: f64, cx: f64, cy: f64, rx: f64, ry: f64, rot: f64) -> f64 {
    let (dx, dy) = rotate(px - cx, py - cy, rot.cos(), rot.sin());
    // Pseudo-distance: good within a pixel for mild aspect ratios.
    let k = ((dx / rx) * (dx / rx) + (dy / ry) * (dy / ry)).sqrt();
    (k - 1.0) * rx.min(ry)
}

fn sdf_box(px: f64, py: f64, cx: f64, cy: f64, hx: f64, hy: f64, rot: f64) -> f64 {
    let (dx, dy) = rotate(px - cx, py - cy, rot.cos(), rot.sin());
    let (qx, qy) = (dx.abs() - hx, dy.abs() - hy);
    let outside = qx.max(0.0).hypot(qy.max(0.0));
    outside + qx.max(qy).min(0.0)
}

fn sdf_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64, w: f64) -> f64 {
    let (vx, vy) = (bx - ax, by - ay);
    let (ux, uy) = (px - ax, py - ay);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ux * vx + uy * vy) / len2).clamp(0.0, 1.0)
    };
    ((ux - t * vx).hypot(uy - t * vy)) - w
}

fn sdf_triangle(px: f64, py: f64, v: &[(f64, f64); 3]) -> f64 {
    // Distance to the boundary; negative inside (vertices are CCW in
    // image coordinates, so inside means every cross product ≤ 0).
    let mut dist = f64::INFINITY;
    let mut inside = true;
    for i in 0..3 {
        let (ax, ay) = v[i];
        let (bx, by) = v[(i + 1) % 3];
        dist = dist.min(sdf_segment(px, py, ax, ay, bx, by, 0.0));
        let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if cross > 0.0 {
            inside = false;
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

// --- generators ------------------------------------------------------

fn draw_shapes(canvas: &mut Canvas, params: &GenParams, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ink = rng.gen_range(params.ink.0..=params.ink.1);
    let scale = rng.gen_range(params.scale.0..=params.scale.1) * s;
    let cx = s * rng.gen_range(0.47..0.53);
    let cy = s * rng.gen_range(0.47..0.53);
    let rot = rng.gen_range(0.0..0.3);

    match rng.gen_range(0..3u8) {
        0 => {
            let aspect = rng.gen_range(0.75..0.95);
            canvas.paint(ink, |px, py| {
                sdf_ellipse(px, py, cx, cy, scale, scale * aspect, rot)
            });
        }
        1 => {
            let aspect = rng.gen_range(0.7..0.95);
            canvas.paint(ink, |px, py| {
                sdf_box(px, py, cx, cy, scale * 0.9, scale * 0.9 * aspect, rot)
            });
        }
        _ => {
            let mut v = [(0.0, 0.0); 3];
            for (i, vert) in v.iter_mut().enumerate() {
                let ang = rot + i as f64 * 2.0 * std::f64::consts::PI / 3.0
                    + rng.gen_range(-0.1..0.1);
                let r = scale * rng.gen_range(0.9..1.05);
                *vert = (cx + r * ang.cos(), cy + r * ang.sin());
            }
            ensure_ccw(&mut v);
            canvas.paint(ink, |px, py| sdf_triangle(px, py, &v));
        }
    }

    // A smaller satellite gives secondary structure; its bearing is tied
    // to the main rotation so it adds no independent full-circle dim.
    let sat_ink = rng.gen_range(params.ink.0..=params.ink.1);
    let sat_r = scale * rng.gen_range(0.26..0.32);
    let ang = rot + rng.gen_range(0.5..0.9);
    let dist = scale * rng.gen_range(1.32..1.42);
    let sx = (cx + dist * ang.cos()).clamp(sat_r, s - sat_r);
    let sy = (cy + dist * ang.sin()).clamp(sat_r, s - sat_r);
    canvas.paint(sat_ink, |px, py| sdf_circle(px, py, sx, sy, sat_r));
}

fn ensure_ccw(v: &mut [(f64, f64); 3]) {
    let area = (v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1);
    if area > 0.0 {
        v.swap(1, 2);
    }
}

fn draw_frame(canvas: &mut Canvas, params: &GenParams, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ink = rng.gen_range(params.ink.0..=params.ink.1);
    let stroke = s * rng.gen_range(0.02..0.035);
    let hx = s * rng.gen_range(params.scale.0..=params.scale.1);
    let hy = hx * rng.gen_range(0.6..1.0);
    let cx = s * rng.gen_range(0.45..0.55);
    let cy = s * rng.gen_range(0.45..0.55);
    let rot = rng.gen_range(-0.2..0.2);

    // Outer box rendered as a stroked outline.
    canvas.paint(ink, |px, py| {
        sdf_box(px, py, cx, cy, hx, hy, rot).abs() - stroke
    });

    // 1–2 interior struts between opposite edges.
    let struts = rng.gen_range(1..=2u8);
    let (c, n) = (rot.cos(), rot.sin());
    for _ in 0..struts {
        let t = rng.gen_range(-0.55..0.55);
        let vertical = rng.gen_range(0..2u8) == 0;
        let (ax, ay, bx, by) = if vertical {
            let x = t * hx;
            (x, -hy, x, hy)
        } else {
            let y = t * hy;
            (-hx, y, hx, y)
        };
        // Rotate strut endpoints into image coordinates.
        let (axr, ayr) = (cx + ax * c - ay * n, cy + ax * n + ay * c);
        let (bxr, byr) = (cx + bx * c - by * n, cy + bx * n + by * c);
        canvas.paint(ink, |px, py| {
            sdf_segment(px, py, axr, ayr, bxr, byr, stroke)
        });
    }
}

fn draw_bike(canvas: &mut Canvas, params: &GenParams, rng: &mut ChaCha8Rng) {
    let s = canvas.size as f64;
    let ink = rng.gen_range(params.ink.0..=params.ink.1);
    let stroke = s * rng.gen_range(0.016..0.026);
    let wheel_r = s * rng.gen_range(0.14..0.18);
    let base_y = s * rng.gen_range(0.62..0.72);
    let gap = s * rng.gen_range(0.42..0.52);
    let rear = (s * 0.5 - gap / 2.0, base_y);
    let front = (s * 0.5 + gap / 2.0, base_y);

    for &(wx, wy) in &[rear, front] {
        canvas.paint(ink, |px, py| sdf_ring(px, py, wx, wy, wheel_r, stroke));
    }

    // Frame: bottom bracket between the wheels, seat above the rear,
    // head above the front.
    let bb = (
        rear.0 + gap * rng.gen_range(0.42..0.52),
        base_y + s * rng.gen_range(-0.02..0.02),
    );
    let seat = (
        rear.0 + gap * rng.gen_range(0.05..0.18),
        base_y - s * rng.gen_range(0.24..0.32),
    );
    let head = (
        front.0 - gap * rng.gen_range(0.02..0.12),
        base_y - s * rng.gen_range(0.26..0.34),
    );
    let tubes: [((f64, f64), (f64, f64)); 6] = [
        (rear, bb),
        (bb, seat),
        (seat, rear),
        (seat, head),
        (bb, head),
        (head, front),
    ];
    for &((ax, ay), (bx, by)) in &tubes {
        canvas.paint(ink, |px, py| sdf_segment(px, py, ax, ay, bx, by, stroke));
    }
    // Seat top and handlebar.
    let seat_w = s * rng.gen_range(0.05..0.08);
    canvas.paint(ink, |px, py| {
        sdf_segment(px, py, seat.0 - seat_w, seat.1, seat.0 + seat_w, seat.1, stroke)
    });
    let bar_w = s * rng.gen_range(0.04..0.07);
    canvas.paint(ink, |px, py| {
        sdf_segment(px, py, head.0, head.1, head.0 + bar_w, head.1 - bar_w * 0.5, stroke)
    });
}
