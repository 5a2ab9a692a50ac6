use hypsep::signal::{apply_mask_and_resynthesize, si_sdr, si_sdri, Stft, StftConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn signal(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stft_round_trip(seed in any::<u64>(), len in 256usize..4000, rate in prop::sample::select(vec![8000u32, 16000])) {
        let engine = Stft::new(StftConfig::for_rate(rate).unwrap()).unwrap();
        let len = len.max(engine.config().window);
        let x = signal(seed, len);
        let y = engine.synthesize(&engine.analyze(&x).unwrap()).unwrap();
        prop_assert_eq!(y.len(), x.len());
        prop_assert!(rel_rms(&y, &x) <= 1e-8);
    }

    #[test]
    fn si_sdr_is_scale_invariant(seed in any::<u64>(), beta in prop::sample::select(vec![1e-3, 0.1, 3.0, 1e3, -2.0])) {
        let s = signal(seed, 300);
        let noise = signal(seed ^ 0xdead, 300);
        let e: Vec<f64> = s.iter().zip(&noise).map(|(a, n)| a + 0.3 * n).collect();
        let scaled: Vec<f64> = e.iter().map(|v| beta * v).collect();
        prop_assert!((si_sdr(&scaled, &s).unwrap() - si_sdr(&e, &s).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn mixture_improvement_is_exactly_zero(seed in any::<u64>()) {
        let s = signal(seed, 200);
        let x: Vec<f64> = s.iter().zip(signal(seed.wrapping_add(1), 200)).map(|(a, b)| a + b).collect();
        prop_assert_eq!(si_sdri(&x, &s, &x).unwrap(), 0.0);
    }

    #[test]
    fn complementary_masks_rebuild_the_mixture(seed in any::<u64>()) {
        let engine = Stft::new(StftConfig::for_rate(8000).unwrap()).unwrap();
        let x = signal(seed, 2000);
        let spec = engine.analyze(&x).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let near = Array2::from_shape_fn(spec.data.dim(), |_| rng.random_range(0.0..1.0));
        let far = near.mapv(|m| 1.0 - m);
        let a = apply_mask_and_resynthesize(&engine, &spec, &near).unwrap();
        let b = apply_mask_and_resynthesize(&engine, &spec, &far).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        prop_assert!(rel_rms(&sum, &x) <= 1e-6);
    }
}

#[test]
fn too_short_input_is_rejected() {
    let engine = Stft::new(StftConfig::for_rate(8000).unwrap()).unwrap();
    assert!(engine.analyze(&[0.0; 10]).is_err());
}
