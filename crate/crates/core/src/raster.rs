//! Raster containers shared by every stage: real-valued images, binary masks
//! and labeled instance masks, plus value-range normalization and cropping.

use rand::Rng;

use crate::error::{Error, Result};

/// Closed interval of pixel values an image is asserted to lie in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub const UNIT_SIGNED: ValueRange = ValueRange { lo: -1.0, hi: 1.0 };
    pub const U8: ValueRange = ValueRange { lo: 0.0, hi: 255.0 };
    pub const U16: ValueRange = ValueRange { lo: 0.0, hi: 65535.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::param("range", format!("[{lo}, {hi}] is not a closed interval")));
        }
        Ok(ValueRange { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Smallest range containing both `self` and every value in `values`.
    pub fn widened_to(&self, values: &[f64]) -> ValueRange {
        values.iter().fold(*self, |r, &v| ValueRange {
            lo: r.lo.min(v),
            hi: r.hi.max(v),
        })
    }

    pub fn spanning(values: &[f64]) -> Option<ValueRange> {
        let first = *values.first()?;
        Some(ValueRange { lo: first, hi: first }.widened_to(values))
    }
}

/// Row-major single-channel real raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
    range: ValueRange,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>, range: ValueRange) -> Result<Self> {
        check_dims(height, width, values.len())?;
        if let Some(&v) = values.iter().find(|v| !range.contains(**v)) {
            return Err(Error::OutOfRange {
                value: v,
                lo: range.lo,
                hi: range.hi,
            });
        }
        Ok(ImageGrid {
            height,
            width,
            values,
            range,
        })
    }

    /// Builds an image whose declared range is `range` widened to cover the
    /// values, for outputs of operations that may overshoot (filtering, noise).
    pub fn with_widened_range(height: usize, width: usize, values: Vec<f64>, range: ValueRange) -> Result<Self> {
        check_dims(height, width, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "non-finite pixel value"));
        }
        let range = range.widened_to(&values);
        Ok(ImageGrid {
            height,
            width,
            values,
            range,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        range: ValueRange,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values, range)
    }

    pub fn filled(height: usize, width: usize, value: f64, range: ValueRange) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], range)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Same pixels, different declared range. The values must fit.
    pub fn with_range(&self, range: ValueRange) -> Result<Self> {
        Self::new(self.height, self.width, self.values.clone(), range)
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::Dimensions(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            values.extend_from_slice(&self.values[start..start + width]);
        }
        Ok(ImageGrid {
            height,
            width,
            values,
            range: self.range,
        })
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimensions(format!("{height}x{width} raster is empty")));
    }
    if height.checked_mul(width) != Some(len) {
        return Err(Error::Dimensions(format!("{height}x{width} raster given {len} values")));
    }
    Ok(())
}

/// Affine map of the declared range onto `target`.
pub fn normalize(img: &ImageGrid, target: ValueRange) -> Result<ImageGrid> {
    let src = img.range();
    if src.width() <= 0.0 {
        return Err(Error::DegenerateRange { lo: src.lo, hi: src.hi });
    }
    let scale = target.width() / src.width();
    let values = img
        .values()
        .iter()
        .map(|&v| (target.lo + (v - src.lo) * scale).clamp(target.lo, target.hi))
        .collect();
    ImageGrid::new(img.height(), img.width(), values, target)
}

/// Uniformly drawn top-left corner of a `size`×`size` window.
pub fn random_crop_offset<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    size: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if size == 0 || size > height || size > width {
        return Err(Error::Dimensions(format!(
            "crop size {size} does not fit a {height}x{width} image"
        )));
    }
    let row = rng.random_range(0..=height - size);
    let col = rng.random_range(0..=width - size);
    Ok((row, col))
}

pub fn crop_random<R: Rng + ?Sized>(img: &ImageGrid, size: usize, rng: &mut R) -> Result<ImageGrid> {
    let (row, col) = random_crop_offset(img.height(), img.width(), size, rng)?;
    img.crop(row, col, size, size)
}

/// Row-major foreground raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(height, width, bits.len())?;
        Ok(BinaryMask { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground as 1.0, background as 0.0, in range [0, 1].
    pub fn to_image(&self) -> ImageGrid {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ImageGrid::new(self.height, self.width, values, ValueRange { lo: 0.0, hi: 1.0 })
            .expect("mask dimensions are valid")
    }
}

/// Labeled raster: 0 is background, instances carry labels `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: u32,
}

impl InstanceMask {
    /// Validates that the labels are exactly `{0, 1, ..., K}` with every
    /// positive label present.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        check_dims(height, width, labels.len())?;
        let count = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().skip(1).position(|s| !s) {
            return Err(Error::InvalidLabels(format!(
                "label {} absent while max label is {count}",
                missing + 1
            )));
        }
        Ok(InstanceMask {
            height,
            width,
            labels,
            count,
        })
    }

    /// Renumbers arbitrary labels to `1..=K` in order of first appearance
    /// in raster order.
    pub fn relabeled(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        check_dims(height, width, raw.len())?;
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        let labels = raw
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *map.entry(l).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        Ok(InstanceMask {
            height,
            width,
            labels,
            count: next,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn instance_count(&self) -> u32 {
        self.count
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    /// Pixel areas indexed by label; entry 0 is the background area.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Sorted flat pixel indices of every instance, indexed by `label - 1`.
    pub fn pixel_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.count as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                sets[l as usize - 1].push(i);
            }
        }
        sets
    }
}
