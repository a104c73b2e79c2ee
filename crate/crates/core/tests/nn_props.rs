use qldm_core::denoiser::{count_params, DenoiserConfig, Variant};
use qldm_core::nn::{ema_decay, AdamConfig, AdamState, EmaState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn adam_with_zero_gradient_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let start: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut p = start.clone();
    let mut adam = AdamState::new(AdamConfig::default(), 20);
    for _ in 0..10 {
        adam.update(&mut p, &[0.0; 20]).unwrap();
    }
    assert_eq!(p, start);
    assert_eq!(adam.step, 10);
}

#[test]
fn adam_rejects_mismatched_lengths() {
    let mut adam = AdamState::new(AdamConfig::default(), 3);
    assert!(adam.update(&mut [0.0; 3], &[0.0; 2]).is_err());
    assert!(adam.update(&mut [0.0; 2], &[0.0; 2]).is_err());
}

#[test]
fn ema_shadow_stays_within_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut p: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lo = p.clone();
    let mut hi = p.clone();
    let mut ema = EmaState::new(&p);
    for _ in 0..500 {
        for (i, v) in p.iter_mut().enumerate() {
            *v += rng.random_range(-0.3..0.3);
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
        ema.update(&p).unwrap();
        for (i, s) in ema.shadow.iter().enumerate() {
            assert!(lo[i] - 1e-12 <= *s && *s <= hi[i] + 1e-12);
        }
    }
    assert_eq!(ema.step, 500);
}

#[test]
fn ema_decay_warms_up_to_cap() {
    assert!((ema_decay(0) - 0.1).abs() < 1e-15);
    assert!((ema_decay(10) - 11.0 / 20.0).abs() < 1e-15);
    assert_eq!(ema_decay(1_000_000), 0.999);
    assert!((0..20_000).all(|s| ema_decay(s) <= ema_decay(s + 1)));
}

#[test]
fn parameter_counts_follow_closed_forms() {
    for d in [2, 4, 8, 10, 12] {
        let count = |v| count_params(&DenoiserConfig::new(v, d).unwrap());
        assert_eq!(count(Variant::Classical), 3 * (d * d + d));
        assert_eq!(count(Variant::BasicQ), 3 * d * 4);
        assert_eq!(count(Variant::Expr3Z), 3 * 3 * d * 3);
        assert_eq!(count(Variant::Expr3X), 3 * 3 * d * 3);
        assert_eq!(count(Variant::Expr4Z), 3 * 3 * d * 4);
        assert_eq!(count(Variant::Expr4X), 3 * 3 * d * 4);
    }
    assert!(DenoiserConfig::new(Variant::BasicQ, 3).is_err());
}
