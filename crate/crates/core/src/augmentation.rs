//! Seeded flip / shift / shear / zoom augmentation of windows.
//!
//! Transforms are applied in a fixed order: horizontal flip, translation,
//! shear, zoom, all about the image center. The output is produced by
//! inverse mapping every output pixel center into the source and sampling
//! bilinearly; coordinates outside the source are folded back according to
//! [`FillMode`].
//!
//! Every draw for one variant comes from a ChaCha8 stream keyed by
//! `(seed, draw_index)` and always consumes five values in the order flip,
//! shift x, shift y, shear, zoom, whatever the spec's ranges are.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::IdentityId;
use crate::seeding;
use crate::windowing::Window;
use crate::{Error, Result};

pub const DEFAULT_FACTOR: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Repeat the nearest edge pixel.
    #[default]
    Nearest,
    /// Mirror about the image border (`dcba|abcd|dcba`).
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub flip_probability: f64,
    /// Maximum |offset| per axis as a fraction of that axis' length.
    pub shift_fraction: f64,
    /// Maximum |shear angle| in degrees.
    pub shear_degrees: f64,
    pub zoom_range: (f64, f64),
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            shift_fraction: 0.1,
            shear_degrees: 10.0,
            zoom_range: (0.9, 1.1),
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// No-op spec: every variant is a copy of its source.
    pub fn identity() -> Self {
        Self {
            flip_probability: 0.0,
            shift_fraction: 0.0,
            shear_degrees: 0.0,
            zoom_range: (1.0, 1.0),
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }

    /// Mirror-only spec.
    pub fn flip_only() -> Self {
        Self {
            flip_probability: 1.0,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("augmentation: {m}")));
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability {} outside [0, 1]", self.flip_probability));
        }
        if !(self.shift_fraction >= 0.0 && self.shift_fraction.is_finite()) {
            return bad(format!("shift_fraction {} must be >= 0", self.shift_fraction));
        }
        if !(self.shear_degrees >= 0.0 && self.shear_degrees < 90.0) {
            return bad(format!("shear_degrees {} must be in [0, 90)", self.shear_degrees));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("zoom_range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// The concrete parameters drawn for one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentDraw {
    pub flip: bool,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear_degrees: f64,
    pub zoom: f64,
}

pub fn draw_params(spec: &AugmentationSpec, draw_index: u64, width: u32, height: u32) -> AugmentDraw {
    let mut rng = seeding::rng_for(
        "petident/augment",
        &[&spec.seed.to_le_bytes(), &draw_index.to_le_bytes()],
    );
    let flip = seeding::unit_f64(&mut rng) < spec.flip_probability;
    let sx = spec.shift_fraction * width as f64;
    let sy = spec.shift_fraction * height as f64;
    let shift_x = seeding::uniform(&mut rng, -sx, sx);
    let shift_y = seeding::uniform(&mut rng, -sy, sy);
    let shear_degrees = seeding::uniform(&mut rng, -spec.shear_degrees, spec.shear_degrees);
    let zoom = seeding::uniform(&mut rng, spec.zoom_range.0, spec.zoom_range.1);
    AugmentDraw {
        flip,
        shift_x,
        shift_y,
        shear_degrees,
        zoom,
    }
}

/// 2×3 affine map `p -> A p + t` in center-relative coordinates.
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: [[f64; 2]; 2],
    t: [f64; 2],
}

impl Affine {
    /// Forward map of flip, then shift, then shear, then zoom.
    fn forward(d: &AugmentDraw) -> Self {
        let f = if d.flip { -1.0 } else { 1.0 };
        let k = d.shear_degrees.to_radians().tan();
        let z = d.zoom;
        // zoom * shear * (flip * p + shift), shear being x' = x + k y
        let a = [[z * f, z * k], [0.0, z]];
        let t = [z * (d.shift_x + k * d.shift_y), z * d.shift_y];
        Self { a, t }
    }

    fn inverse(&self) -> Self {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
            -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
        ];
        Self { a: inv, t }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.t[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.t[1],
        ]
    }
}

fn fold_coordinate(u: f64, len: u32, mode: FillMode) -> f64 {
    let max = (len - 1) as f64;
    match mode {
        FillMode::Nearest => u.clamp(0.0, max),
        FillMode::Reflect => {
            let period = 2.0 * len as f64;
            let mut t = (u + 0.5).rem_euclid(period);
            if t >= len as f64 {
                t = period - t;
            }
            (t - 0.5).clamp(0.0, max)
        }
    }
}

fn sample(src: &RgbImage, x: f64, y: f64, mode: FillMode) -> Rgb<u8> {
    let x = fold_coordinate(x, src.width(), mode);
    let y = fold_coordinate(y, src.height(), mode);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(src.width() - 1);
    let y1 = (y0 + 1).min(src.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = src.get_pixel(x0, y0).0;
    let p10 = src.get_pixel(x1, y0).0;
    let p01 = src.get_pixel(x0, y1).0;
    let p11 = src.get_pixel(x1, y1).0;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = ((top * (1.0 - fy) + bottom * fy) + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Applies the drawn transform to `src`; the output has the same size.
pub fn apply_draw(src: &RgbImage, draw: &AugmentDraw, fill_mode: FillMode) -> RgbImage {
    let (w, h) = src.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let inv = Affine::forward(draw).inverse();
    RgbImage::from_fn(w, h, |x, y| {
        let [sx, sy] = inv.apply([x as f64 - cx, y as f64 - cy]);
        sample(src, sx + cx, sy + cy, fill_mode)
    })
}

pub fn augment_image(src: &RgbImage, spec: &AugmentationSpec, draw_index: u64) -> RgbImage {
    let draw = draw_params(spec, draw_index, src.width(), src.height());
    apply_draw(src, &draw, spec.fill_mode)
}

/// Augments the window's buffer; region, ordinal and source are kept.
pub fn augment_window(window: &Window, spec: &AugmentationSpec, draw_index: u64) -> Window {
    Window {
        pixels: augment_image(&window.pixels, spec, draw_index),
        ..window.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub identity: IdentityId,
    pub window: Window,
    /// 0 for the original, `1..factor` for augmented variants.
    pub variant: usize,
}

/// Draw index used for variant `variant` of input item `item`.
pub fn draw_index(item: usize, variant: usize, factor: usize) -> u64 {
    item as u64 * factor as u64 + variant as u64
}

/// Each input window followed by `factor - 1` augmented copies of it.
pub fn expand_dataset(
    windows: &[LabeledWindow],
    spec: &AugmentationSpec,
    factor: usize,
) -> Result<Vec<LabeledWindow>> {
    if factor < 1 {
        return Err(Error::InvalidArgument(format!("factor {factor} must be >= 1")));
    }
    spec.validate()?;
    let mut out = Vec::with_capacity(windows.len() * factor);
    for (i, lw) in windows.iter().enumerate() {
        out.push(LabeledWindow {
            variant: 0,
            ..lw.clone()
        });
        for v in 1..factor {
            out.push(LabeledWindow {
                identity: lw.identity.clone(),
                window: augment_window(&lw.window, spec, draw_index(i, v, factor)),
                variant: v,
            });
        }
    }
    Ok(out)
}
