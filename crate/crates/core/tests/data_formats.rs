mod common;

use std::collections::HashSet;

use common::{fixture, MNIST_IMAGES, MNIST_LABELS};
use proptest::prelude::*;
use qldm_core::data::{
    decode_latents, encode_idx_images, encode_idx_labels, encode_latents, encode_pgm, load_idx_images,
    load_idx_labels, scale_pixels, subset_indices, unscale_pixels, RawImages,
};
use qldm_core::{Error, LatentDataset};

#[test]
fn fixture_has_expected_layout() {
    let raw = load_idx_images(fixture(MNIST_IMAGES), true).unwrap();
    assert_eq!((raw.count, raw.rows, raw.cols), (5000, 28, 28));
    let labels = load_idx_labels(fixture(MNIST_LABELS)).unwrap();
    let mut counts = [0usize; 10];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    assert_eq!(counts, [500; 10]);
}

#[test]
fn idx_round_trip_and_bad_magic() {
    let raw = RawImages {
        count: 2,
        rows: 28,
        cols: 28,
        pixels: (0..2 * 784).map(|i| (i % 256) as u8).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    std::fs::write(&img, encode_idx_images(&raw)).unwrap();
    std::fs::write(&lab, encode_idx_labels(&[3, 7])).unwrap();
    assert_eq!(load_idx_images(&img, true).unwrap(), raw);
    assert_eq!(load_idx_labels(&lab).unwrap(), vec![3, 7]);
    assert!(matches!(load_idx_images(&lab, true), Err(Error::Format { .. })));
    assert!(matches!(load_idx_labels(dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn pixel_scaling_endpoints_and_monotonicity() {
    let all: Vec<u8> = (0..=255).collect();
    let scaled = scale_pixels(&all);
    assert_eq!(scaled[0], -1.0);
    assert_eq!(scaled[255], 1.0);
    assert!(scaled.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(unscale_pixels(&scaled), all);
}

#[test]
fn latent_file_round_trip_is_exact_at_f32() {
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..3).map(|j| f64::from(f32::from_bits(0x3e00_0000 + i * 977 + j * 13))).collect())
        .collect();
    let ds = LatentDataset::new(rows, 3, Some(vec![1, 2, 3, 4, 5]), "probe").unwrap();
    let back = decode_latents(std::path::Path::new("mem"), &encode_latents(&ds)).unwrap();
    assert_eq!(back.latents, ds.latents);
    assert_eq!(back.labels, ds.labels);

    // Values that are not f32-representable come back rounded to f32.
    let fine = LatentDataset::new(vec![vec![0.1, -0.7]], 2, None, "x").unwrap();
    let back = decode_latents(std::path::Path::new("mem"), &encode_latents(&fine)).unwrap();
    assert_eq!(back.latents[0], vec![f64::from(0.1f32), f64::from(-0.7f32)]);
}

#[test]
fn pgm_header() {
    let bytes = encode_pgm(&[0u8; 6], 2, 3).unwrap();
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
    assert!(encode_pgm(&[0u8; 5], 2, 3).is_err());
}

proptest! {
    #[test]
    fn subsets_never_repeat(n in 1usize..500, fraction in 0.001f64..=1.0, seed in any::<u64>()) {
        let idx = subset_indices(n, fraction, seed).unwrap();
        prop_assert_eq!(idx.len(), ((fraction * n as f64).ceil() as usize).min(n));
        prop_assert_eq!(idx.iter().collect::<HashSet<_>>().len(), idx.len());
        prop_assert!(idx.iter().all(|&i| i < n));
    }
}
