use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::map::Mask;

use super::visualize::RgbImage;

/// Writes a bilevel 8-bit grayscale PNG (0 or 255).
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if *mask.get(y as usize, x as usize) {
            255
        } else {
            0
        }])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads a mask PNG; pixels at or above 128 are set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::format(0, "empty mask image"));
    }
    Ok(Mask::from_fn(h, w, |r, c| {
        img.get_pixel(c as u32, r as u32)[0] >= 128
    }))
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::from_fn(7, 9, |r, c| (r * c) % 3 == 1);
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        let raw = image::open(&p).unwrap().into_luma8();
        assert!(raw.pixels().all(|p| p[0] == 0 || p[0] == 255));
    }

    #[test]
    fn garbage_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        assert!(matches!(read_mask(&p), Err(Error::Image(_))));
    }
}
