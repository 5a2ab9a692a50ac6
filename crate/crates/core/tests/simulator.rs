use hypsep::nn::{HierarchySpec, FAR, NEAR};
use hypsep::scene::{
    generate_split, place_sources, probe_equidistant, probe_mic_distance, render, render_source, sample_distance,
    sample_room, stream_rng, synth_speech_like, write_split, DatasetConfig, Density, DensityPreset, Manifest,
    RenderConfig, Split, BETA_SHAPE, DEFAULT_TAU,
};
use proptest::prelude::*;

fn cfg(seed: u64) -> DatasetConfig {
    DatasetConfig {
        seed,
        tau: DEFAULT_TAU,
        hierarchy: HierarchySpec::new(2).unwrap(),
        render: RenderConfig {
            sample_rate: 8000,
            seconds: 0.25,
        },
        densities: DensityPreset::Table1Desk.splits(30, 10, 3),
    }
}

#[test]
fn labels_follow_the_threshold() {
    let spec = HierarchySpec::new(2).unwrap();
    let densities = [Density::new(1, 1), Density::new(2, 0), Density::new(0, 2), Density::new(2, 2), Density::new(1, 2)];
    let mut rng = stream_rng(3, 0);
    for i in 0..10_000 {
        let room = sample_room(&mut rng);
        let density = densities[i % densities.len()];
        let sources = place_sources(&room, &spec, density, DEFAULT_TAU, &mut rng).unwrap();
        let near = sources.iter().filter(|s| s.parent == NEAR).count();
        assert_eq!(near, density.near);
        assert_eq!(sources.len() - near, density.far);
        for s in &sources {
            assert_eq!(s.parent == NEAR, s.distance < DEFAULT_TAU);
            assert!(room.contains(&s.position));
            let d: f64 = (0..3).map(|k| (s.position[k] - room.mic[k]).powi(2)).sum::<f64>().sqrt();
            assert!((d - s.distance).abs() < 1e-9);
        }
    }
}

#[test]
fn density_counts_match_the_config() {
    let c = cfg(5);
    for split in [Split::Train, Split::Val, Split::Test] {
        let m = generate_split(&c, split).unwrap();
        let expected: Vec<(Density, usize)> = c
            .densities
            .iter()
            .map(|d| {
                let n = match split {
                    Split::Train => d.train,
                    Split::Val => d.val,
                    _ => d.test,
                };
                (d.density, n)
            })
            .filter(|&(_, n)| n > 0)
            .collect();
        let hist = m.density_histogram();
        for (d, n) in expected {
            assert_eq!(hist.get(&d.to_string()).copied().unwrap_or(0), n, "{split:?} {d}");
        }
        for r in &m.scenes {
            let labels = r.labels();
            assert_eq!(labels.iter().filter(|&&l| l == NEAR).count(), r.density.near);
            assert_eq!(labels.iter().filter(|&&l| l == FAR).count(), r.density.far);
        }
    }
}

#[test]
fn writing_a_split_twice_is_bit_identical() {
    let c = cfg(8);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut m1 = generate_split(&c, Split::Val).unwrap();
    let mut m2 = generate_split(&c, Split::Val).unwrap();
    write_split(&mut m1, a.path()).unwrap();
    write_split(&mut m2, b.path()).unwrap();
    for (r1, r2) in m1.scenes.iter().zip(&m2.scenes) {
        assert_eq!(r1.files.as_ref().unwrap().sha256, r2.files.as_ref().unwrap().sha256);
    }
    let loaded = Manifest::load(&a.path().join("val/manifest.json")).unwrap();
    assert_eq!(loaded.scenes, m1.scenes);
    let from_disk = loaded.audio(0).unwrap();
    let rendered = render(&m1.scenes[0], &c.render);
    let err = from_disk
        .mixture
        .iter()
        .zip(&rendered.mixture)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "float32 storage error {err}");
}

#[test]
fn beta_mean_matches_analytic_value() {
    let (a, b) = BETA_SHAPE;
    let (lo, hi) = (0.1, 3.0);
    let analytic = lo + (hi - lo) * a / (a + b);
    let mut rng = stream_rng(11, 0);
    let n = 100_000;
    let mean = (0..n).map(|_| sample_distance(&mut rng, lo, hi)).sum::<f64>() / n as f64;
    assert!((mean - analytic).abs() <= 0.02 * analytic, "{mean} vs {analytic}");
}

#[test]
fn probes_place_sources_at_requested_distances() {
    let c = cfg(2);
    let eq = probe_equidistant(&c, &[0.0, 0.4, 1.0], 3).unwrap();
    assert_eq!(eq.scenes.len(), 9);
    for r in &eq.scenes {
        let delta = r.condition.unwrap();
        assert!((r.sources[NEAR].distance - (DEFAULT_TAU - delta / 2.0)).abs() < 1e-12);
        assert!((r.sources[FAR].distance - (DEFAULT_TAU + delta / 2.0)).abs() < 1e-12);
        assert_eq!(r.labels(), vec![NEAR, FAR]);
    }
    let mic = probe_mic_distance(&c, &[0.2, 0.8], 2).unwrap();
    for r in &mic.scenes {
        assert_eq!(r.sources[NEAR].distance, r.condition.unwrap());
        assert!((r.sources[FAR].distance - 2.9).abs() < 1e-12);
    }
    assert!(probe_mic_distance(&c, &[0.1], 1).is_err());
}

#[test]
fn longer_reverb_has_more_tail_energy() {
    let dry = synth_speech_like(0.5, 8000, &mut stream_rng(4, 0));
    let delay = (8000.0f64 / 343.0).round() as usize;
    let tail_energy = |rt60: f64| -> f64 {
        let wet = render_source(&dry, 1.0, rt60, 8000, &mut stream_rng(4, 1));
        wet.iter()
            .enumerate()
            .map(|(i, w)| {
                let direct = i.checked_sub(delay).and_then(|k| dry.get(k)).copied().unwrap_or(0.0);
                (w - direct).powi(2)
            })
            .sum()
    };
    assert!(tail_energy(0.5) > tail_energy(0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixture_is_the_sum_of_sources(seed in any::<u64>()) {
        let c = cfg(seed);
        let m = generate_split(&c, Split::Test).unwrap();
        for r in m.scenes.iter().take(3) {
            let a = render(r, &c.render);
            for (i, &x) in a.mixture.iter().enumerate() {
                let s: f64 = a.wet.iter().map(|w| w[i]).sum();
                prop_assert_eq!(x, s);
                prop_assert!((a.parents[NEAR][i] + a.parents[FAR][i] - x).abs() < 1e-12);
                prop_assert!(x.abs() <= 1.0, "{}", x);
            }
        }
    }
}
