use hypsep::diffkit::{grad_check, Tensor};
use hypsep::manifold::Curvature;
use hypsep::nn::{Backbone, EncoderConfig, HierarchySpec, Levels, Model, ModelConfig, Resynthesis, FAR, NEAR};
use hypsep::scene::Density;
use hypsep::train::{build_loss, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 4;
const BINS: usize = 5;

fn model(c: f64, backbone: Backbone, seed: u64) -> Model {
    let encoder = EncoderConfig {
        bins: BINS,
        context: if backbone == Backbone::Recurrent { 0 } else { 1 },
        hidden: vec![6],
        embed_dim: 3,
        dropout: 0.0,
        backbone,
    };
    let cfg = ModelConfig {
        encoder,
        hierarchy: HierarchySpec::new(2).unwrap(),
        levels: Levels::Two,
        curvature: Curvature::new(c).unwrap(),
        resynthesis: Resynthesis::Joint,
    };
    Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn toy_example(density: Density, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = FRAMES * BINS;
    let features = Tensor::from_shape_fn((FRAMES, BINS), |_| rng.random_range(-1.5..1.5));
    let parent: Vec<u8> = (0..n)
        .map(|_| match density.silent_parent() {
            Some(s) => (1 - s) as u8,
            None => rng.random_range(0..2),
        })
        .collect();
    let child = [NEAR, FAR].map(|p| (density.count(p) > 0).then(|| (0..n).map(|_| rng.random_range(0..2)).collect()));
    Example {
        id: format!("toy-{seed}"),
        density,
        frames: FRAMES,
        bins: BINS,
        features,
        parent,
        child,
    }
}

fn check(m: &Model, ex: &Example) -> f64 {
    let values: Vec<Tensor> = m.params.params.iter().map(|p| p.value.clone()).collect();
    let report = grad_check(
        |g, leaves| {
            let fwd = m.forward_with::<ChaCha8Rng>(g, leaves.to_vec(), &ex.features, None)?;
            Ok(build_loss(m, g, &fwd, ex)?.0)
        },
        &values,
        1e-6,
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    for c in [-1.0, 0.0] {
        for (i, density) in [Density::new(1, 1), Density::new(2, 2), Density::new(2, 0), Density::new(0, 1)]
            .into_iter()
            .enumerate()
        {
            let m = model(c, Backbone::FeedforwardContext, 3 + i as u64);
            let err = check(&m, &toy_example(density, 10 + i as u64));
            assert!(err <= 1e-4, "c={c} {density}: {err}");
        }
    }
}

#[test]
fn recurrent_full_loss_gradients_match_finite_differences() {
    let m = model(-1.0, Backbone::Recurrent, 21);
    let err = check(&m, &toy_example(Density::new(1, 2), 22));
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn masks_are_normalized_per_bin() {
    let spec = HierarchySpec::new(2).unwrap();
    for c in [-1.0, -0.1, 0.0] {
        let m = model(c, Backbone::FeedforwardContext, 30);
        let ex = toy_example(Density::new(2, 1), 31);
        let inf = m.infer(&ex.features).unwrap();
        let joint = inf.joint.unwrap();
        let cond = inf.child_cond.unwrap();
        for r in 0..FRAMES * BINS {
            assert!((inf.parent.row(r).sum() - 1.0).abs() <= 1e-12);
            assert!((joint.row(r).sum() - 1.0).abs() <= 1e-12);
            for p in [NEAR, FAR] {
                let range = spec.leaf_range(p);
                let s: f64 = range.clone().map(|k| cond[[r, k]]).sum();
                assert!((s - 1.0).abs() <= 1e-12);
                let j: f64 = range.map(|k| joint[[r, k]]).sum();
                assert!((j - inf.parent[[r, p]]).abs() <= 1e-12);
            }
        }
    }
}
