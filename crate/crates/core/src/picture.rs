use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::RgbImage;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::regions::BoundingBox;

/// The stimulus picture. Grayscale and alpha inputs are converted to RGB on
/// load, so a gray picture becomes three identical channels.
#[derive(Debug, Clone)]
pub struct Picture {
    pub path: Option<PathBuf>,
    pub image: RgbImage,
    fingerprint: OnceLock<String>,
}

impl Picture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = image::open(path)?.to_rgb8();
        Ok(Picture {
            path: Some(path.to_path_buf()),
            image,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn from_image(image: RgbImage) -> Self {
        Picture {
            path: None,
            image,
            fingerprint: OnceLock::new(),
        }
    }

    /// Short content digest of the pixels and dimensions.
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(self.image.width().to_le_bytes());
            h.update(self.image.height().to_le_bytes());
            h.update(self.image.as_raw());
            hex::encode(&h.finalize()[..12])
        })
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            x0: 0,
            y0: 0,
            x1: self.width(),
            y1: self.height(),
        }
    }

    /// Errors unless `bbox` has positive area and lies inside the picture.
    pub fn check_box(&self, bbox: BoundingBox) -> Result<()> {
        if bbox.x1 <= bbox.x0 || bbox.y1 <= bbox.y0 {
            return Err(Error::DegenerateCrop(bbox));
        }
        if !bbox.fits(self.width(), self.height()) {
            return Err(Error::BoxOutOfBounds {
                bbox,
                width: self.width(),
                height: self.height(),
            });
        }
        Ok(())
    }

    pub fn crop(&self, bbox: BoundingBox) -> Result<RgbImage> {
        self.check_box(bbox)?;
        Ok(
            image::imageops::crop_imm(&self.image, bbox.x0, bbox.y0, bbox.width(), bbox.height())
                .to_image(),
        )
    }
}
