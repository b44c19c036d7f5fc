//! Image decoding and the keyed image type the backends consume.

use std::path::Path;

use image::RgbImage;

use crate::{Error, Result};

/// A decoded RGB image plus the key scripted backends look it up by
/// (usually the manifest's `image_path` string).
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub key: String,
    pub pixels: RgbImage,
}

impl SourceImage {
    pub fn new(key: impl Into<String>, pixels: RgbImage) -> Self {
        Self {
            key: key.into(),
            pixels,
        }
    }

    /// Decode `path`, keying the image by `key`.
    pub fn open(path: &Path, key: impl Into<String>) -> Result<Self> {
        Ok(Self::new(key, load_rgb(path)?))
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgb = img.into_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(Error::Image {
            path: path.display().to_string(),
            message: "image has zero size".into(),
        });
    }
    Ok(rgb)
}

pub fn save_png(image: &RgbImage, path: &Path) -> Result<()> {
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}
