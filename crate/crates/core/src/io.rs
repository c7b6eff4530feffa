//! Grayscale PNG/TIFF reading and PNG writing.
//!
//! Instance masks are stored as 16-bit grayscale PNG where the pixel value is
//! the label id.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::raster::{ImageGrid, InstanceMask, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::param("bit_depth", format!("{other} is not 8 or 16"))),
        }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    ImageReader::open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| unsupported(e.to_string()))
}

/// Loads an 8- or 16-bit single-channel PNG or TIFF. The declared range is the
/// full range of the source bit depth.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let values = buf.into_raw().into_iter().map(f64::from).collect();
            ImageGrid::new(h, w, values, ValueRange::U8)
        }
        DynamicImage::ImageLuma16(buf) => {
            let values = buf.into_raw().into_iter().map(f64::from).collect();
            ImageGrid::new(h, w, values, ValueRange::U16)
        }
        other => {
            let channels = other.color().channel_count();
            if channels > 1 {
                Err(Error::MultiChannel {
                    path: path.to_path_buf(),
                    channels,
                })
            } else {
                Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("sample type {:?}", other.color()),
                })
            }
        }
    }
}

/// Writes `img` as grayscale PNG, mapping its declared range linearly onto
/// the integer range of `depth`.
pub fn save_image(img: &ImageGrid, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let range = img.range();
    let max = depth.max_value();
    // A zero-width range maps every pixel to 0.
    let scale = if range.width() > 0.0 { max / range.width() } else { 0.0 };
    let mut levels = Vec::with_capacity(img.values().len());
    for &v in img.values() {
        let q = ((v - range.lo) * scale).round();
        if !(0.0..=max).contains(&q) {
            return Err(Error::OutOfRange {
                value: v,
                lo: range.lo,
                hi: range.hi,
            });
        }
        levels.push(q as u16);
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match depth {
        BitDepth::Eight => {
            let raw = levels.into_iter().map(|l| l as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw).expect("buffer sized"))
        }
        BitDepth::Sixteen => {
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, levels).expect("buffer sized"))
        }
    };
    write_png(&dynamic, path)
}

fn write_png(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Encode {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

pub fn save_labels(mask: &InstanceMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if mask.instance_count() > u16::MAX as u32 {
        return Err(Error::InvalidLabels(format!(
            "{} instances exceed the 16-bit label format",
            mask.instance_count()
        )));
    }
    let raw = mask.labels().iter().map(|&l| l as u16).collect();
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer sized");
    write_png(&DynamicImage::ImageLuma16(buf), path)
}

/// Reads a label PNG. 8-bit files are accepted too. Labels need not be
/// contiguous on disk; they are renumbered in raster order of first
/// appearance when they are not.
pub fn load_labels(path: impl AsRef<Path>) -> Result<InstanceMask> {
    let img = load_image(path)?;
    let raw: Vec<u32> = img.values().iter().map(|&v| v as u32).collect();
    match InstanceMask::new(img.height(), img.width(), raw.clone()) {
        Ok(mask) => Ok(mask),
        Err(_) => InstanceMask::relabeled(img.height(), img.width(), &raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::normalize;

    #[test]
    fn zero_png_loads_as_zero_u8_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.png");
        image::GrayImage::new(3, 2).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.dims(), (2, 3));
        assert!(img.values().iter().all(|&v| v == 0.0));
        assert_eq!(img.range(), ValueRange::U8);
    }

    #[test]
    fn sixteen_bit_max_value_survives() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        let mut buf = ImageBuffer::<Luma<u16>, Vec<u16>>::new(2, 2);
        buf.put_pixel(1, 0, Luma([65535]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.range(), ValueRange::U16);
        assert_eq!(img.get(0, 1), 65535.0);
    }

    #[test]
    fn rgb_is_rejected_as_multichannel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&p).unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::MultiChannel { channels: 3, .. }));
        assert!(err.to_string().contains("multi-channel unsupported"));
    }

    #[test]
    fn missing_and_garbage_files_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("nope.png")),
            Err(Error::NotFound(_))
        ));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&p), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn grayscale_tiff_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tiff");
        let mut buf = image::GrayImage::new(4, 3);
        buf.put_pixel(2, 1, Luma([200]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.dims(), (3, 4));
        assert_eq!(img.get(1, 2), 200.0);
    }

    #[test]
    fn eight_bit_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        let img = ImageGrid::from_fn(5, 7, ValueRange::U8, |r, c| ((r * 37 + c * 11) % 256) as f64).unwrap();
        save_image(&img, &p, BitDepth::Eight).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn signed_range_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        // Irrational stride so values fall between quantization levels.
        let img = ImageGrid::from_fn(16, 16, ValueRange::UNIT_SIGNED, |r, c| {
            -1.0 + 2.0 * ((r * 16 + c) as f64 * 0.618_033_988_7).fract()
        })
        .unwrap();
        save_image(&img, &p, BitDepth::Eight).unwrap();
        let back = normalize(&load_image(&p).unwrap(), ValueRange::UNIT_SIGNED).unwrap();
        let bound = (2.0 / 255.0) / 2.0 + 1e-12;
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
    }

    #[test]
    fn unwritable_path_is_error() {
        let img = ImageGrid::filled(2, 2, 0.0, ValueRange::U8).unwrap();
        let err = save_image(&img, "/nonexistent-dir/for/sure/x.png", BitDepth::Eight).unwrap_err();
        assert!(matches!(err, Error::Io { .. } | Error::Encode { .. }));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let labels: Vec<u32> = (0..300u32).map(|i| i % 300).collect();
        let mask = InstanceMask::new(10, 30, labels).unwrap();
        save_labels(&mask, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), mask);
    }
}
