//! Procedural two-domain scene generator.
//!
//! A scene is a background plus 2-4 filled shapes (circle, rectangle,
//! triangle, stripe) drawn back to front; the label of a pixel is the class of
//! the topmost shape covering its centre. Source images use the flat class
//! colours. Target images start from the same rendering and then get a hue
//! rotation, a linear brightness ramp, a sinusoidal texture and Gaussian
//! noise. Labels are never touched by the shift.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, SegImage};

pub const BACKGROUND: u8 = 0;
pub const CIRCLE: u8 = 1;
pub const RECTANGLE: u8 = 2;
pub const TRIANGLE: u8 = 3;
pub const STRIPE: u8 = 4;
pub const CLASS_NAMES: [&str; 5] = ["background", "circle", "rectangle", "triangle", "stripe"];

/// Base hue (degrees) of each foreground class.
const CLASS_HUES: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
const HUE_JITTER: f64 = 12.0;
const SATURATION_RANGE: (f64, f64) = (0.55, 0.95);
const VALUE_RANGE: (f64, f64) = (0.55, 0.95);
const BACKGROUND_VALUE_RANGE: (f64, f64) = (0.2, 0.45);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::InvalidInput(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: CLASS_NAMES.len(),
            min_shapes: 2,
            max_shapes: 4,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != CLASS_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "the shape generator produces {} classes, spec asks for {}",
                CLASS_NAMES.len(),
                self.num_classes
            )));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::InvalidConfig("min_shapes exceeds max_shapes".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidConfig(format!(
                "canvas {}x{} too small for the shape sizes (min 16x16)",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Appearance shift applied to target images. A zero value disables a component.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub hue_rotation: f64,
    pub noise_sigma: f64,
    /// Peak offset of the linear brightness ramp.
    pub brightness_gradient: f64,
    /// Texture cycles across the image width.
    pub texture_frequency: f64,
    pub texture_amplitude: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            hue_rotation: 60.0,
            noise_sigma: 0.05,
            brightness_gradient: 0.2,
            texture_frequency: 8.0,
            texture_amplitude: 0.08,
        }
    }
}

impl DomainShift {
    pub fn none() -> Self {
        Self {
            hue_rotation: 0.0,
            noise_sigma: 0.0,
            brightness_gradient: 0.0,
            texture_frequency: 0.0,
            texture_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Circle { cx: f64, cy: f64, radius: f64 },
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { vertices: [(f64, f64); 3] },
    /// Thick line segment.
    Stripe { a: (f64, f64), b: (f64, f64), half_width: f64 },
}

impl Geometry {
    pub fn class_id(&self) -> u8 {
        match self {
            Geometry::Circle { .. } => CIRCLE,
            Geometry::Rectangle { .. } => RECTANGLE,
            Geometry::Triangle { .. } => TRIANGLE,
            Geometry::Stripe { .. } => STRIPE,
        }
    }

    /// Point-in-shape test in continuous pixel coordinates (`x` = column).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Geometry::Circle { cx, cy, radius } => (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius,
            Geometry::Rectangle { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Geometry::Triangle { vertices: [a, b, c] } => {
                let cross = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
            Geometry::Stripe { a, b, half_width } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (a.0 + t * dx, a.1 + t * dy);
                (x - px).powi(2) + (y - py).powi(2) <= half_width * half_width
            }
        }
    }

    /// Axis-aligned bounding box `(xmin, ymin, xmax, ymax)`.
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Geometry::Circle { cx, cy, radius } => (cx - radius, cy - radius, cx + radius, cy + radius),
            Geometry::Rectangle { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Geometry::Triangle { vertices } => vertices.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
            Geometry::Stripe { a, b, half_width } => (
                a.0.min(b.0) - half_width,
                a.1.min(b.1) - half_width,
                a.0.max(b.0) + half_width,
                a.1.max(b.1) + half_width,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub geometry: Geometry,
    /// Source-domain RGB colour.
    pub color: [f64; 3],
}

/// Everything about a scene that both domains share.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub background: [f64; 3],
    /// Back to front.
    pub shapes: Vec<Shape>,
}

impl SceneLayout {
    /// Index of the topmost shape covering each pixel centre.
    pub fn owners(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.height * self.width];
        for (i, s) in self.shapes.iter().enumerate() {
            paint(&mut owner, self.width, &s.geometry, i);
        }
        owner
    }

    pub fn labels(&self) -> LabelMap {
        let data = self
            .owners()
            .iter()
            .map(|o| o.map_or(BACKGROUND, |i| self.shapes[i].geometry.class_id()))
            .collect();
        LabelMap::new(self.height, self.width, data).expect("layout dimensions")
    }
}

fn paint(owner: &mut [Option<usize>], width: usize, g: &Geometry, index: usize) {
    let height = owner.len() / width;
    let (xmin, ymin, xmax, ymax) = g.bounds();
    let r0 = (ymin.floor().max(0.0)) as usize;
    let r1 = (ymax.ceil().max(0.0) as usize).min(height);
    let c0 = (xmin.floor().max(0.0)) as usize;
    let c1 = (xmax.ceil().max(0.0) as usize).min(width);
    for r in r0..r1 {
        for c in c0..c1 {
            if g.contains(c as f64 + 0.5, r as f64 + 0.5) {
                owner[r * width + c] = Some(index);
            }
        }
    }
}

/// HSV (hue in degrees, s and v in [0, 1]) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

/// Shape sizes are given for a 64-pixel canvas and scaled with the shorter side.
const REFERENCE_SIDE: f64 = 64.0;

fn sample_geometry<R: Rng + ?Sized>(class: u8, h: f64, w: f64, rng: &mut R) -> Geometry {
    let s = h.min(w) / REFERENCE_SIDE;
    loop {
        let cx = rng.gen_range(0.0..w);
        let cy = rng.gen_range(0.0..h);
        let g = match class {
            CIRCLE => Geometry::Circle {
                cx,
                cy,
                radius: s * rng.gen_range(5.0..12.0),
            },
            RECTANGLE => {
                let (hw, hh) = (s * rng.gen_range(4.0..12.0), s * rng.gen_range(4.0..12.0));
                Geometry::Rectangle {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            TRIANGLE => {
                let size = s * rng.gen_range(6.0..13.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let mut vertices = [(0.0, 0.0); 3];
                for (k, v) in vertices.iter_mut().enumerate() {
                    let angle = phase + 2.0 * PI * k as f64 / 3.0 + rng.gen_range(-0.3..0.3);
                    let radius = size * rng.gen_range(0.8..1.2);
                    *v = (cx + radius * angle.cos(), cy + radius * angle.sin());
                }
                Geometry::Triangle { vertices }
            }
            _ => {
                let half_len = s * rng.gen_range(12.0..28.0);
                let angle = rng.gen_range(0.0..PI);
                let (dx, dy) = (half_len * angle.cos(), half_len * angle.sin());
                Geometry::Stripe {
                    a: (cx - dx, cy - dy),
                    b: (cx + dx, cy + dy),
                    half_width: (s * rng.gen_range(1.2..2.5)).max(0.75),
                }
            }
        };
        let (x0, y0, x1, y1) = g.bounds();
        if x0 >= 0.0 && y0 >= 0.0 && x1 <= w && y1 <= h {
            return g;
        }
    }
}

fn sample_color<R: Rng + ?Sized>(class: u8, rng: &mut R) -> [f64; 3] {
    let hue = CLASS_HUES[class as usize - 1] + rng.gen_range(-HUE_JITTER..=HUE_JITTER);
    let s = rng.gen_range(SATURATION_RANGE.0..=SATURATION_RANGE.1);
    let v = rng.gen_range(VALUE_RANGE.0..=VALUE_RANGE.1);
    hsv_to_rgb(hue, s, v)
}

/// Number of attempts at placing a shape so that it, and everything under
/// it, stays visible.
const PLACEMENT_ATTEMPTS: usize = 32;

/// Draws a scene layout. Every placed shape keeps at least one visible pixel.
pub fn generate_layout<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<SceneLayout> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let gray = rng.gen_range(BACKGROUND_VALUE_RANGE.0..=BACKGROUND_VALUE_RANGE.1);
    let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let mut layout = SceneLayout {
        height: h,
        width: w,
        background: [gray; 3],
        shapes: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let class = rng.gen_range(1..=4u8);
        let color = sample_color(class, rng);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let geometry = sample_geometry(class, h as f64, w as f64, rng);
            layout.shapes.push(Shape { geometry, color });
            let owners = layout.owners();
            let mut visible = vec![false; layout.shapes.len()];
            for i in owners.iter().flatten() {
                visible[*i] = true;
            }
            if visible.iter().all(|&v| v) {
                break;
            }
            layout.shapes.pop();
        }
    }
    Ok(layout)
}

/// Flat-colour rendering of a layout (the source-domain appearance).
pub fn render_source(layout: &SceneLayout) -> SegImage {
    let owners = layout.owners();
    let mut data = Vec::with_capacity(owners.len() * 3);
    for o in owners {
        let c = o.map_or(layout.background, |i| layout.shapes[i].color);
        data.extend_from_slice(&c);
    }
    SegImage::from_clamped(layout.height, layout.width, 3, data).expect("layout dimensions")
}

/// Applies the target-domain shift to an image. Randomness (ramp direction,
/// texture phase, noise) is drawn from `rng`.
pub fn apply_shift<R: Rng + ?Sized>(image: &SegImage, shift: &DomainShift, rng: &mut R) -> Result<SegImage> {
    let (h, w) = (image.height(), image.width());
    let ch = image.channels();
    let mut data = image.data().to_vec();
    if ch == 3 && shift.hue_rotation != 0.0 {
        for px in data.chunks_exact_mut(3) {
            let (hue, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
            px.copy_from_slice(&hsv_to_rgb(hue + shift.hue_rotation, s, v));
        }
    }
    if shift.brightness_gradient != 0.0 {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let (dx, dy) = (theta.cos(), theta.sin());
        let reach = (dx.abs() * w as f64 + dy.abs() * h as f64) / 2.0;
        for (p, px) in data.chunks_exact_mut(ch).enumerate() {
            let (r, c) = ((p / w) as f64 + 0.5 - h as f64 / 2.0, (p % w) as f64 + 0.5 - w as f64 / 2.0);
            let offset = shift.brightness_gradient * (c * dx + r * dy) / reach;
            px.iter_mut().for_each(|v| *v += offset);
        }
    }
    if shift.texture_frequency != 0.0 && shift.texture_amplitude != 0.0 {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let k = 2.0 * PI * shift.texture_frequency / w as f64;
        for (p, px) in data.chunks_exact_mut(ch).enumerate() {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            let t = shift.texture_amplitude * (k * (c * theta.cos() + r * theta.sin()) + phase).sin();
            px.iter_mut().for_each(|v| *v += t);
        }
    }
    if shift.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, shift.noise_sigma)
            .map_err(|e| Error::InvalidConfig(format!("noise_sigma: {e}")))?;
        data.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    SegImage::from_clamped(h, w, ch, data)
}

/// One scene rendered in the requested domain.
pub fn generate_scene<R: Rng + ?Sized>(
    spec: &SceneSpec,
    domain: Domain,
    shift: &DomainShift,
    rng: &mut R,
) -> Result<(SegImage, LabelMap)> {
    let layout = generate_layout(spec, rng)?;
    let image = render_source(&layout);
    let image = match domain {
        Domain::Source => image,
        Domain::Target => apply_shift(&image, shift, rng)?,
    };
    Ok((image, layout.labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_shapes_means_all_background() {
        let spec = SceneSpec {
            min_shapes: 0,
            max_shapes: 0,
            ..Default::default()
        };
        let (_, labels) = generate_scene(&spec, Domain::Source, &DomainShift::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(labels.data().iter().all(|&l| l == BACKGROUND));
    }

    #[test]
    fn shift_touches_pixels_only() {
        let spec = SceneSpec::default();
        let shift = DomainShift::default();
        let (xs, ys) = generate_scene(&spec, Domain::Source, &shift, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (xt, yt) = generate_scene(&spec, Domain::Target, &shift, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(ys, yt);
        assert_ne!(xs, xt);
    }

    #[test]
    fn hsv_round_trip() {
        for &(h, s, v) in &[(0.0, 1.0, 1.0), (75.0, 0.5, 0.8), (200.0, 0.3, 0.4), (330.0, 0.9, 0.2)] {
            let (h2, s2, v2) = rgb_to_hsv(hsv_to_rgb(h, s, v));
            assert!((h - h2).abs() < 1e-9 && (s - s2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn hue_rotation_moves_red_to_yellow() {
        let red = SegImage::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let shift = DomainShift {
            hue_rotation: 60.0,
            ..DomainShift::none()
        };
        let out = apply_shift(&red, &shift, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let d = out.data();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12 && d[2].abs() < 1e-12);
    }

    #[test]
    fn smallest_canvas_terminates() {
        let spec = SceneSpec {
            height: 16,
            width: 16,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            generate_layout(&spec, &mut rng).unwrap();
        }
    }

    #[test]
    fn shapes_fit_and_stay_visible() {
        let spec = SceneSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let layout = generate_layout(&spec, &mut rng).unwrap();
            assert!(layout.shapes.len() <= spec.max_shapes);
            for s in &layout.shapes {
                let (x0, y0, x1, y1) = s.geometry.bounds();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 64.0 && y1 <= 64.0);
            }
        }
    }
}
