use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stegclean::dct::{self, Ordering};
use stegclean::{raster, ImageGrid, ValueRange};

fn image(h: usize, w: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageGrid::from_fn(h, w, ValueRange::UNIT_SIGNED, |_, _| rng.random_range(-1.0..=1.0)).unwrap()
}

fn ordering() -> impl Strategy<Value = Ordering> {
    prop_oneof![Just(Ordering::Radial), Just(Ordering::Diagonal)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dct_is_linear(h in 1usize..40, w in 1usize..40, s1: u64, s2: u64, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (x, y) = (image(h, w, s1), image(h, w, s2));
        let combo: Vec<f64> = x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect();
        let wide = ValueRange::spanning(&combo).unwrap_or(ValueRange::UNIT_SIGNED);
        let z = ImageGrid::new(h, w, combo, wide.widened_to(&[-1.0, 1.0])).unwrap();
        let (cx, cy, cz) = (dct::dct2(&x), dct::dct2(&y), dct::dct2(&z));
        for k in 0..h * w {
            let expect = a * cx.coeffs()[k] + b * cy.coeffs()[k];
            prop_assert!((cz.coeffs()[k] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn filtering_is_idempotent(h in 1usize..40, w in 1usize..40, seed: u64, kf in 0.0f64..=1.0, ord in ordering()) {
        let img = image(h, w, seed);
        let mask = dct::build_frequency_mask(h, w, kf, ord).unwrap();
        let once = dct::lowpass_filter(&img, &mask).unwrap();
        let twice = dct::lowpass_filter(&once, &mask).unwrap();
        for (p, q) in once.values().iter().zip(twice.values()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_keeps_rounded_count_of_lowest_ranks(h in 1usize..30, w in 1usize..30, kf in 0.0f64..=1.0, ord in ordering()) {
        let mask = dct::build_frequency_mask(h, w, kf, ord).unwrap();
        let keep = (kf * (h * w) as f64).round() as usize;
        prop_assert_eq!(mask.kept_count(), keep);
        let rank = dct::frequency_rank(h, w, ord);
        for (r, &pos) in rank.iter().enumerate() {
            prop_assert_eq!(mask.keep()[pos], r < keep);
        }
    }

    #[test]
    fn normalize_round_trips(h in 1usize..20, w in 1usize..20, seed: u64) {
        let img = image(h, w, seed);
        let there = raster::normalize(&img, ValueRange::U16).unwrap();
        let back = raster::normalize(&there, ValueRange::UNIT_SIGNED).unwrap();
        for (p, q) in img.values().iter().zip(back.values()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn random_crop_has_requested_size(h in 1usize..80, w in 1usize..80, size in 1usize..80, seed: u64) {
        let img = image(h, w, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match raster::crop_random(&img, size, &mut rng) {
            Ok(crop) => prop_assert_eq!(crop.dims(), (size, size)),
            Err(_) => prop_assert!(size > h || size > w),
        }
    }
}

#[test]
fn radial_rank_orders_by_normalized_frequency() {
    // Oracle: sort by (i/N)² + (j/M)² with exact rationals via cross multiplication.
    let (n, m) = (6usize, 9usize);
    let mut expect: Vec<usize> = (0..n * m).collect();
    expect.sort_by_key(|&p| {
        let (i, j) = (p / m, p % m);
        (i * i * m * m + j * j * n * n, i, j)
    });
    assert_eq!(dct::frequency_rank(n, m, Ordering::Radial), expect);
}

#[test]
fn diagonal_rank_orders_by_normalized_sum() {
    let (n, m) = (5usize, 7usize);
    let mut expect: Vec<usize> = (0..n * m).collect();
    expect.sort_by_key(|&p| {
        let (i, j) = (p / m, p % m);
        (i * m + j * n, i, j)
    });
    assert_eq!(dct::frequency_rank(n, m, Ordering::Diagonal), expect);
}

#[test]
fn noise_injection_keeps_shape() {
    let img = image(32, 32, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = dct::inject_gaussian_noise(&img, 0.2, &mut rng).unwrap();
    assert_eq!(noisy.dims(), img.dims());
    assert!(noisy.values().iter().all(|v| noisy.range().contains(*v)));
}
