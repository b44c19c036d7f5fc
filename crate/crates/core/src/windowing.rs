//! Three square windows per dog box.
//!
//! For a box with shorter side `S` and longer side `L`, the windows are
//! `S`×`S` squares placed along the longer side at offsets `0`,
//! `(L - S) / 2` (floor) and `L - S`, spanning the shorter side fully. Up to
//! an aspect ratio of 3 the windows cover the whole box; beyond that they
//! leave gaps but still touch both ends.

use std::fmt::Write as _;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::BoundingBox;
use crate::{Error, Result};

pub const DEFAULT_INPUT_SIDE: u32 = 299;
pub const WINDOWS_PER_BOX: usize = 3;

/// A square crop of a dog box, resized for the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Square region in source-image coordinates.
    pub region: BoundingBox,
    /// Position along the long axis: 0 start, 1 middle, 2 end.
    pub ordinal: usize,
    /// Key of the source image, when known.
    pub source: Option<String>,
    pub pixels: RgbImage,
}

impl Window {
    /// Wraps an already square buffer, e.g. a window image read back from disk.
    pub fn from_pixels(pixels: RgbImage, ordinal: usize, source: Option<String>) -> Result<Self> {
        if pixels.width() != pixels.height() || pixels.width() == 0 {
            return Err(Error::InvalidArgument(format!(
                "window buffer must be square and non-empty, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            region: BoundingBox::new(0, 0, pixels.width(), pixels.height()),
            ordinal,
            source,
            pixels,
        })
    }

    pub fn side(&self) -> u32 {
        self.pixels.width()
    }

    /// Hex SHA-256 over the buffer dimensions and bytes.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.pixels)
    }
}

pub fn fingerprint(pixels: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(pixels.width().to_le_bytes());
    h.update(pixels.height().to_le_bytes());
    h.update(pixels.as_raw());
    let mut s = String::with_capacity(64);
    for b in h.finalize() {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Offsets of the three windows along an axis of length `long` with window
/// side `short`.
pub fn window_offsets(long: u32, short: u32) -> [u32; 3] {
    debug_assert!(short <= long);
    let slack = long - short;
    [0, slack / 2, slack]
}

/// The three square regions for `bbox`, ordered start, middle, end.
pub fn window_regions(bbox: &BoundingBox) -> Result<[BoundingBox; 3]> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::ZeroAreaBox);
    }
    let side = bbox.w.min(bbox.h);
    let regions = if bbox.w >= bbox.h {
        window_offsets(bbox.w, side).map(|o| BoundingBox::new(bbox.x + o, bbox.y, side, side))
    } else {
        window_offsets(bbox.h, side).map(|o| BoundingBox::new(bbox.x, bbox.y + o, side, side))
    };
    Ok(regions)
}

/// Crops the three windows of `bbox` from `image` and resizes each to
/// `input_side`×`input_side`.
pub fn extract_windows(image: &RgbImage, bbox: &BoundingBox, input_side: u32) -> Result<[Window; 3]> {
    if input_side == 0 {
        return Err(Error::InvalidArgument("input_side must be positive".into()));
    }
    let regions = window_regions(bbox)?;
    if !bbox.fits_in(image.width(), image.height()) {
        return Err(Error::InvalidArgument(format!(
            "box {bbox:?} exceeds image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut ordinal = 0;
    Ok(regions.map(|region| {
        let crop = imageops::crop_imm(image, region.x, region.y, region.w, region.h).to_image();
        let w = Window {
            region,
            ordinal,
            source: None,
            pixels: resize_crop(&crop, input_side),
        };
        ordinal += 1;
        w
    }))
}

/// Bilinear resize to `side`×`side`.
pub fn resize_crop(crop: &RgbImage, side: u32) -> RgbImage {
    resize_bilinear(crop, side, side)
}

/// Bilinear resize with half-pixel centers and edge clamping.
///
/// Output pixel `i` samples source coordinate `(i + 0.5) * in / out - 0.5`,
/// clamped to `[0, in - 1]`; channels are rounded half up.
pub fn resize_bilinear(src: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    assert!(src.width() > 0 && src.height() > 0, "empty source image");
    if src.width() == out_w && src.height() == out_h {
        return src.clone();
    }
    let xs = axis_taps(src.width(), out_w);
    let ys = axis_taps(src.height(), out_h);
    let mut out = RgbImage::new(out_w, out_h);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = src.get_pixel(x0, y0).0;
            let p10 = src.get_pixel(x1, y0).0;
            let p01 = src.get_pixel(x0, y1).0;
            let p11 = src.get_pixel(x1, y1).0;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                px[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(ox as u32, oy as u32, image::Rgb(px));
        }
    }
    out
}

fn axis_taps(input: u32, output: u32) -> Vec<(u32, u32, f64)> {
    let scale = input as f64 / output as f64;
    let max = (input - 1) as f64;
    (0..output)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as u32;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Offsets written next to window files so a run can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub ordinal: usize,
    pub file: String,
    pub region: BoundingBox,
    pub offset: u32,
}

impl WindowRecord {
    pub fn new(window: &Window, source_box: &BoundingBox, file: String) -> Self {
        let offset = if source_box.w >= source_box.h {
            window.region.x - source_box.x
        } else {
            window.region.y - source_box.y
        };
        Self {
            ordinal: window.ordinal,
            file,
            region: window.region,
            offset,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn horizontal_box_with_ratio_three() {
        let r = window_regions(&BoundingBox::new(0, 0, 300, 100)).unwrap();
        let xs: Vec<u32> = r.iter().map(|b| b.x).collect();
        assert_eq!(xs, vec![0, 100, 200]);
        assert!(r.iter().all(|b| b.w == 100 && b.h == 100 && b.y == 0));
    }

    #[test]
    fn square_box_gives_identical_regions() {
        let b = BoundingBox::new(7, 9, 100, 100);
        let r = window_regions(&b).unwrap();
        assert_eq!(r, [b; 3]);
    }

    #[test]
    fn vertical_box() {
        let r = window_regions(&BoundingBox::new(10, 20, 100, 250)).unwrap();
        let ys: Vec<u32> = r.iter().map(|b| b.y).collect();
        assert_eq!(ys, vec![20, 95, 170]);
        assert!(r.iter().all(|b| b.x == 10 && b.w == 100 && b.h == 100));
    }

    #[test]
    fn zero_area_box_is_an_error() {
        assert!(matches!(
            window_regions(&BoundingBox::new(0, 0, 0, 10)),
            Err(Error::ZeroAreaBox)
        ));
        let img = RgbImage::new(10, 10);
        assert!(matches!(
            extract_windows(&img, &BoundingBox::new(0, 0, 5, 0), 4),
            Err(Error::ZeroAreaBox)
        ));
    }

    #[test]
    fn extracted_windows_have_input_side_and_order() {
        let mut img = RgbImage::new(60, 20);
        for (x, _, p) in img.enumerate_pixels_mut() {
            *p = Rgb([x as u8 * 4, 0, 0]);
        }
        let ws = extract_windows(&img, &BoundingBox::new(0, 0, 60, 20), 8).unwrap();
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.ordinal, i);
            assert_eq!(w.pixels.dimensions(), (8, 8));
        }
        // start window is darker than the end window along a red ramp
        assert!(ws[0].pixels.get_pixel(4, 4)[0] < ws[2].pixels.get_pixel(4, 4)[0]);
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let img = RgbImage::new(10, 10);
        assert!(extract_windows(&img, &BoundingBox::new(5, 0, 10, 5), 4).is_err());
    }

    #[test]
    fn identity_resize_is_byte_identical() {
        let mut img = RgbImage::new(100, 100);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]);
        }
        assert_eq!(resize_crop(&img, 100).as_raw(), img.as_raw());
    }

    #[test]
    fn uniform_crop_stays_uniform() {
        let img = RgbImage::from_pixel(50, 50, Rgb([12, 200, 77]));
        let out = resize_crop(&img, 299);
        assert_eq!(out.dimensions(), (299, 299));
        assert!(out.pixels().all(|p| *p == Rgb([12, 200, 77])));
    }

    #[test]
    fn checkerboard_upscale_matches_hand_computation() {
        // Source [[0, 255], [255, 0]] (same in every channel). With half-pixel
        // centers, output coordinates 0..4 sample source positions
        // -0.25, 0.25, 0.75, 1.25, clamped to 0, 0.25, 0.75, 1.
        // Value at fractional (u, v) is 255 * (u + v - 2uv).
        let mut src = RgbImage::new(2, 2);
        src.put_pixel(1, 0, Rgb([255; 3]));
        src.put_pixel(0, 1, Rgb([255; 3]));
        let out = resize_crop(&src, 4);
        let pos = [0.0, 0.25, 0.75, 1.0];
        let mut expected = [[0u8; 4]; 4];
        for (yi, &v) in pos.iter().enumerate() {
            for (xi, &u) in pos.iter().enumerate() {
                let f: f64 = 255.0 * (u + v - 2.0 * u * v);
                expected[yi][xi] = (f + 0.5).floor() as u8;
            }
        }
        // spot values worked out by hand
        assert_eq!(expected[0], [0, 64, 191, 255]);
        assert_eq!(expected[1], [64, 96, 159, 191]);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get_pixel(x, y).0, [expected[y as usize][x as usize]; 3]);
            }
        }
        assert_eq!(out.get_pixel(0, 0), src.get_pixel(0, 0));
        assert_eq!(out.get_pixel(3, 0), src.get_pixel(1, 0));
        assert_eq!(out.get_pixel(0, 3), src.get_pixel(0, 1));
        assert_eq!(out.get_pixel(3, 3), src.get_pixel(1, 1));
    }

    #[test]
    fn window_record_offsets() {
        let img = RgbImage::new(400, 200);
        let bbox = BoundingBox::new(50, 10, 300, 100);
        let ws = extract_windows(&img, &bbox, 4).unwrap();
        let offsets: Vec<u32> = ws
            .iter()
            .map(|w| WindowRecord::new(w, &bbox, String::new()).offset)
            .collect();
        assert_eq!(offsets, vec![0, 100, 200]);
    }

    #[test]
    fn fingerprint_tracks_content_and_shape() {
        let a = RgbImage::new(4, 4);
        let b = RgbImage::new(2, 8);
        let mut c = a.clone();
        c.put_pixel(0, 0, Rgb([1, 0, 0]));
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
    }
}
