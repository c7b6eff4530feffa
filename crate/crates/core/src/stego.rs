//! A closed-form stand-in for the hidden channel a cycle-consistent generator
//! learns: a downsampled mask written into the highest-frequency DCT
//! coefficients as a ±ε signal.
//!
//! Bit `k` of the row-major P×P payload lives in the `k`-th highest
//! coefficient under the radial ordering. A positive coefficient decodes as
//! 1; zero and negative decode as 0.

use crate::dct::{self, FrequencyMask, Ordering};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageGrid, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StegoConfig {
    /// The payload is pooled down to `payload_side`×`payload_side` bits.
    pub payload_side: usize,
    /// Magnitude written into every band coefficient.
    pub epsilon: f64,
    /// Share of the highest frequencies the payload may occupy.
    pub band_fraction: f64,
}

impl Default for StegoConfig {
    fn default() -> Self {
        StegoConfig {
            payload_side: 16,
            epsilon: 0.01,
            band_fraction: 0.5,
        }
    }
}

impl StegoConfig {
    pub fn bit_count(&self) -> usize {
        self.payload_side * self.payload_side
    }

    /// Checks the parameters alone and against an `n`×`m` carrier.
    pub fn validate_for(&self, n: usize, m: usize) -> Result<()> {
        if self.payload_side == 0 {
            return Err(Error::param("payload_side", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("{} must be > 0", self.epsilon)));
        }
        if !(self.band_fraction > 0.0 && self.band_fraction <= 0.5) {
            return Err(Error::param(
                "band_fraction",
                format!("{} is outside (0, 0.5]", self.band_fraction),
            ));
        }
        let band = (self.band_fraction * (n * m) as f64).round() as usize;
        if self.bit_count() > band {
            return Err(Error::param(
                "payload_side",
                format!(
                    "{} bits do not fit the {band}-coefficient band of a {n}x{m} carrier",
                    self.bit_count()
                ),
            ));
        }
        Ok(())
    }
}

/// Flat coefficient indices carrying payload bits, highest frequency first.
pub fn embedding_band(n: usize, m: usize, bits: usize) -> Vec<usize> {
    dct::frequency_rank(n, m, Ordering::Radial)
        .into_iter()
        .rev()
        .take(bits)
        .collect()
}

/// Majority pooling onto a `side`×`side` grid; a block that is exactly half
/// foreground pools to foreground. Blocks are `floor` partitions of each
/// axis, at least one pixel wide.
pub fn downsample_payload(payload: &BinaryMask, side: usize) -> BinaryMask {
    let (h, w) = payload.dims();
    let span = |u: usize, len: usize| {
        let lo = (u * len / side).min(len - 1);
        let hi = ((u + 1) * len / side).max(lo + 1);
        lo..hi
    };
    BinaryMask::from_fn(side, side, |u, v| {
        let (rows, cols) = (span(u, h), span(v, w));
        let area = rows.len() * cols.len();
        let fg = rows
            .flat_map(|r| cols.clone().map(move |c| (r, c)))
            .filter(|&(r, c)| payload.get(r, c))
            .count();
        2 * fg >= area
    })
    .expect("side > 0")
}

pub fn embed(carrier: &ImageGrid, payload: &BinaryMask, cfg: &StegoConfig) -> Result<ImageGrid> {
    if carrier.range() != ValueRange::UNIT_SIGNED {
        let r = carrier.range();
        return Err(Error::param(
            "carrier",
            format!("declared range [{}, {}] must be [-1, 1]", r.lo, r.hi),
        ));
    }
    let (n, m) = carrier.dims();
    cfg.validate_for(n, m)?;
    let bits = downsample_payload(payload, cfg.payload_side);
    let mut coeffs = dct::dct2(carrier);
    for (&pos, &bit) in embedding_band(n, m, cfg.bit_count()).iter().zip(bits.bits()) {
        coeffs.coeffs_mut()[pos] = if bit { cfg.epsilon } else { -cfg.epsilon };
    }
    Ok(dct::idct2(&coeffs))
}

pub fn extract(stego: &ImageGrid, cfg: &StegoConfig) -> Result<BinaryMask> {
    let (n, m) = stego.dims();
    cfg.validate_for(n, m)?;
    let coeffs = dct::dct2(stego);
    let bits = embedding_band(n, m, cfg.bit_count())
        .into_iter()
        .map(|pos| coeffs.coeffs()[pos] > 0.0)
        .collect();
    BinaryMask::new(cfg.payload_side, cfg.payload_side, bits)
}

/// Fraction of differing bits.
pub fn bit_error_rate(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let wrong = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
    Ok(wrong as f64 / a.bits().len() as f64)
}

/// PSNR in dB with the reference's declared range width as peak. Identical
/// images give `+inf`.
pub fn psnr(reference: &ImageGrid, test: &ImageGrid) -> Result<f64> {
    if reference.dims() != test.dims() {
        return Err(Error::DimensionMismatch {
            expected: reference.dims(),
            actual: test.dims(),
        });
    }
    let mse = reference
        .values()
        .iter()
        .zip(test.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.values().len() as f64;
    let peak = reference.range().width();
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `|a - b|` per pixel, declared over `[0, max]`.
pub fn abs_difference(a: &ImageGrid, b: &ImageGrid) -> Result<ImageGrid> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let values: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).collect();
    let hi = values.iter().copied().fold(0.0, f64::max);
    ImageGrid::new(a.height(), a.width(), values, ValueRange { lo: 0.0, hi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StegoReport {
    pub psnr_carrier_vs_stego: f64,
    pub ber_prefilter: f64,
    pub ber_postfilter: f64,
}

impl std::fmt::Display for StegoReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "psnr_carrier_vs_stego_db={:.4}", self.psnr_carrier_vs_stego)?;
        writeln!(f, "ber_prefilter={:.6}", self.ber_prefilter)?;
        write!(f, "ber_postfilter={:.6}", self.ber_postfilter)
    }
}

/// Images produced along the way by [`run_stego`].
#[derive(Debug, Clone)]
pub struct StegoRun {
    pub stego: ImageGrid,
    pub filtered: ImageGrid,
    pub report: StegoReport,
}

/// embed → PSNR and BER → low-pass filter → BER again.
pub fn run_stego(
    carrier: &ImageGrid,
    payload: &BinaryMask,
    cfg: &StegoConfig,
    filter_mask: &FrequencyMask,
) -> Result<StegoRun> {
    let truth = downsample_payload(payload, cfg.payload_side);
    let stego = embed(carrier, payload, cfg)?;
    let ber_prefilter = bit_error_rate(&truth, &extract(&stego, cfg)?)?;
    let filtered = dct::lowpass_filter(&stego, filter_mask)?;
    let ber_postfilter = bit_error_rate(&truth, &extract(&filtered, cfg)?)?;
    let report = StegoReport {
        psnr_carrier_vs_stego: psnr(carrier, &stego)?,
        ber_prefilter,
        ber_postfilter,
    };
    Ok(StegoRun {
        stego,
        filtered,
        report,
    })
}

pub fn stego_report(
    carrier: &ImageGrid,
    payload: &BinaryMask,
    cfg: &StegoConfig,
    filter_mask: &FrequencyMask,
) -> Result<StegoReport> {
    run_stego(carrier, payload, cfg, filter_mask).map(|run| run.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::build_frequency_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_carrier(n: usize, m: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(n, m, ValueRange::UNIT_SIGNED, |_, _| rng.random_range(-0.5..0.5)).unwrap()
    }

    fn random_payload(side: usize, seed: u64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BinaryMask::from_fn(side, side, |_, _| rng.random_bool(0.5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = StegoConfig {
            payload_side: 4,
            ..Default::default()
        };
        let carrier = random_carrier(16, 12, 1);
        let payload = random_payload(9, 2);
        let stego = embed(&carrier, &payload, &cfg).unwrap();
        assert_eq!(extract(&stego, &cfg).unwrap(), downsample_payload(&payload, 4));
    }

    #[test]
    fn zero_payload_still_changes_carrier() {
        let cfg = StegoConfig {
            payload_side: 4,
            ..Default::default()
        };
        let carrier = ImageGrid::filled(16, 16, 0.0, ValueRange::UNIT_SIGNED).unwrap();
        let payload = BinaryMask::empty(16, 16).unwrap();
        let stego = embed(&carrier, &payload, &cfg).unwrap();
        assert_ne!(stego.values(), carrier.values());
    }

    #[test]
    fn wrong_range_and_small_band_are_rejected() {
        let cfg = StegoConfig::default();
        let carrier = ImageGrid::filled(64, 64, 0.0, ValueRange::U8).unwrap();
        let payload = BinaryMask::empty(4, 4).unwrap();
        assert!(embed(&carrier, &payload, &cfg).is_err());
        // 256 bits need a 512-coefficient carrier at band_fraction 0.5.
        let small = ImageGrid::filled(16, 16, 0.0, ValueRange::UNIT_SIGNED).unwrap();
        assert!(embed(&small, &payload, &cfg).is_err());
    }

    #[test]
    fn majority_pooling() {
        // 4x4 -> 2x2: top-left block full, top-right half, bottom-left one pixel.
        let rows = ["1111", "1100", "1000", "0000"];
        let mask = BinaryMask::from_fn(4, 4, |r, c| rows[r].as_bytes()[c] == b'1').unwrap();
        let pooled = downsample_payload(&mask, 2);
        assert_eq!(pooled.bits(), &[true, true, false, false]);
    }

    #[test]
    fn upsampling_small_payload_repeats_pixels() {
        let mask = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        let pooled = downsample_payload(&mask, 4);
        assert!((0..4).all(|r| pooled.get(r, 0) && pooled.get(r, 1) && !pooled.get(r, 2) && !pooled.get(r, 3)));
    }

    #[test]
    fn identity_filter_keeps_channel() {
        let cfg = StegoConfig {
            payload_side: 8,
            ..Default::default()
        };
        let carrier = random_carrier(32, 32, 4);
        let mask = build_frequency_mask(32, 32, 1.0, Ordering::Radial).unwrap();
        let report = stego_report(&carrier, &random_payload(8, 5), &cfg, &mask).unwrap();
        assert_eq!(report.ber_prefilter, 0.0);
        assert_eq!(report.ber_postfilter, 0.0);
    }

    #[test]
    fn zero_keep_filter_decodes_all_zero() {
        let cfg = StegoConfig {
            payload_side: 8,
            ..Default::default()
        };
        let carrier = random_carrier(32, 32, 6);
        let payload = random_payload(8, 7);
        let mask = build_frequency_mask(32, 32, 0.0, Ordering::Radial).unwrap();
        let run = run_stego(&carrier, &payload, &cfg, &mask).unwrap();
        assert!(run.filtered.values().iter().all(|&v| v == 0.0));
        let ones = payload.count() as f64 / 64.0;
        assert_eq!(run.report.ber_postfilter, ones);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = random_carrier(4, 4, 9);
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }
}
