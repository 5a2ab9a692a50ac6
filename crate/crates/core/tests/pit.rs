use hypsep::diffkit::Tensor;
use hypsep::nn::{HierarchySpec, FAR, NEAR};
use hypsep::train::loss_children_pit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{exhaustive_pit, pit_instance};

#[test]
fn pit_matches_exhaustive_search() {
    for children in [2, 3] {
        let spec = HierarchySpec::new(children).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(children as u64);
        for _ in 0..100 {
            let rows = rng.random_range(1..12);
            let (pred, t) = pit_instance(&mut rng, &spec, rows);
            let pit = loss_children_pit([Some(&t[NEAR]), Some(&t[FAR])], &pred, &spec).unwrap();
            assert_eq!(pit.loss, exhaustive_pit(&pred, &t, &spec), "{children}+{children}");
            assert_eq!(pit.loss, pit.near + pit.far);
        }
    }
}

#[test]
fn silent_parent_contributes_nothing() {
    let spec = HierarchySpec::new(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (pred, t) = pit_instance(&mut rng, &spec, 6);
    let pit = loss_children_pit([None, Some(&t[FAR])], &pred, &spec).unwrap();
    assert_eq!(pit.near, 0.0);
    assert!(pit.perms[NEAR].is_none());
    let full = loss_children_pit([Some(&t[NEAR]), Some(&t[FAR])], &pred, &spec).unwrap();
    assert_eq!(pit.far, full.far);
}

#[test]
fn permuted_perfect_prediction_costs_nothing() {
    let spec = HierarchySpec::new(2).unwrap();
    let t = [
        Tensor::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
        Tensor::from_shape_vec((3, 2), vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
    ];
    // Slots swapped inside each parent.
    let mut pred = Tensor::zeros((3, 4));
    for i in 0..3 {
        pred[[i, 0]] = t[NEAR][[i, 1]];
        pred[[i, 1]] = t[NEAR][[i, 0]];
        pred[[i, 2]] = t[FAR][[i, 1]];
        pred[[i, 3]] = t[FAR][[i, 0]];
    }
    let pit = loss_children_pit([Some(&t[NEAR]), Some(&t[FAR])], &pred, &spec).unwrap();
    assert!(pit.loss <= 1e-6);
    assert_eq!(pit.perms[NEAR], Some(vec![1, 0]));
}
