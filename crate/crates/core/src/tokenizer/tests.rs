use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::scene::{generate_synthetic, SyntheticConfig};

fn scenario(seed: u64) -> Scenario {
    generate_synthetic(
        seed,
        &SyntheticConfig {
            num_scenarios: 1,
            ..SyntheticConfig::default()
        },
    )
    .unwrap()
    .remove(0)
}

fn set(store: &mut ParamStore, name: &str, data: Vec<f64>) {
    let id = store.id(name).unwrap();
    let shape = store.tensor(id).shape().to_vec();
    *store.tensor_mut(id) = Tensor::new(shape, data).unwrap().with_requires_grad(true);
}

fn encode_rows(enc: &PolylineEncoder, store: &ParamStore, rows: Vec<f64>, width: usize, groups: &[Vec<usize>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let n = rows.len() / width;
    let x = tape.constant(Tensor::new(vec![n, width], rows).unwrap());
    let y = enc.forward(&mut tape, store, x, groups).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn agent_frame_examples() {
    let id = Pose2::identity();
    assert_eq!(to_agent_frame(&[[3.0, -1.0]], &id), vec![[3.0, -1.0]]);
    let p = to_agent_frame(&[[1.0, 0.0]], &Pose2::new(1.0, 0.0, FRAC_PI_2));
    assert!(p[0][0].abs() < 1e-15 && p[0][1].abs() < 1e-15);
}

#[test]
fn agent_frame_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let pose = Pose2::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-3.0..3.0),
        );
        let p = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let back = pose.to_world(to_agent_frame(&[p], &pose)[0]);
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    }
}

#[test]
fn granularity_levels_must_be_ordered() {
    GranularitySpec::default().validate().unwrap();
    let mut spec = GranularitySpec::default();
    spec.map_levels.reverse();
    assert!(spec.validate().is_err());
    let spec = GranularitySpec {
        voxel_levels: vec![0.8, 1.6],
        ..GranularitySpec::default()
    };
    assert!(spec.validate().is_err());
    let spec = GranularitySpec {
        voxel_levels: vec![],
        ..GranularitySpec::default()
    };
    assert!(spec.validate().is_err());
}

#[test]
fn hand_computed_polyline_max() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = PolylineEncoder::new(&mut store, "p", 2, 2, &mut rng).unwrap();
    let eye = vec![1.0, 0.0, 0.0, 1.0];
    for name in ["p.pre.l0.weight", "p.pre.l1.weight", "p.post.weight"] {
        set(&mut store, name, eye.clone());
    }
    for name in ["p.pre.l0.bias", "p.pre.l1.bias", "p.post.bias"] {
        set(&mut store, name, vec![0.0, 0.0]);
    }
    // relu rows: (1,0), (3,0.5), (0,4)
    let out = encode_rows(&enc, &store, vec![1.0, -2.0, 3.0, 0.5, -1.0, 4.0], 2, &[vec![0, 1, 2]]);
    assert_eq!(out, vec![3.0, 4.0]);
}

#[test]
fn polyline_encoding_symmetries() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = PolylineEncoder::new(&mut store, "p", MAP_FEATURES, 8, &mut rng).unwrap();
    let rows: Vec<f64> = (0..5 * MAP_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = encode_rows(&enc, &store, rows.clone(), MAP_FEATURES, &[vec![0, 1, 2], vec![3, 4]]);
    let permuted = encode_rows(&enc, &store, rows.clone(), MAP_FEATURES, &[vec![2, 0, 1], vec![4, 3]]);
    assert_eq!(base, permuted);
    let swapped = encode_rows(&enc, &store, rows.clone(), MAP_FEATURES, &[vec![3, 4], vec![0, 1, 2]]);
    assert_eq!(&base[..8], &swapped[8..]);
    assert_eq!(&base[8..], &swapped[..8]);

    // padded slots outside every group: any content leaves the tokens unchanged
    let mut padded = rows.clone();
    padded.extend((0..3 * MAP_FEATURES).map(|_| rng.random_range(-9.0..9.0)));
    let out = encode_rows(&enc, &store, padded, MAP_FEATURES, &[vec![0, 1, 2], vec![3, 4]]);
    assert_eq!(base, out);
}

#[test]
fn single_point_polyline_is_its_mlp_output() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = PolylineEncoder::new(&mut store, "p", 3, 4, &mut rng).unwrap();
    let row = vec![0.3, -0.7, 0.2];
    let got = encode_rows(&enc, &store, row.clone(), 3, &[vec![0]]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![1, 3], row).unwrap());
    let h = enc.pre.forward(&mut tape, &store, x).unwrap();
    let y = enc.post.forward(&mut tape, &store, h).unwrap();
    assert_eq!(tape.value(y).data(), &got[..]);
}

#[test]
fn agent_features_layout() {
    let s = scenario(4);
    let track = &s.agents[0];
    let pose = track.current().pose();
    let (rows, steps) = agent_step_features(track, &pose);
    let dim = agent_feature_dim(track.states.len());
    assert_eq!(dim, 24);
    assert_eq!(rows.len(), steps.len() * dim);
    let cur = &rows[rows.len() - dim..];
    assert!(cur[0].abs() < 1e-12 && cur[1].abs() < 1e-12);
    assert!((cur[4] - 1.0).abs() < 1e-12 && cur[5].abs() < 1e-12);
    assert!(cur[3].abs() < 1e-12, "target-frame velocity is along +x");
    assert_eq!(cur[dim - 2], 1.0, "time one-hot marks the current step");
    assert_eq!(cur[dim - 1], 1.0);
}

#[test]
fn invalid_target_rejected() {
    let mut s = scenario(5);
    let spec = GranularitySpec::default();
    let prep = PreparedScene::new(&s, &spec).unwrap();
    let id = s.agents[0].agent_id;
    let last = s.agents[0].states.len() - 1;
    s.agents[0].valid[last] = false;
    assert!(build_target_inputs(&s, &prep, id, &SelectionConfig::default()).is_err());
    assert!(build_target_inputs(&s, &prep, 999, &SelectionConfig::default()).is_err());
}

#[test]
fn budgets_respected() {
    let s = scenario(6);
    let spec = GranularitySpec::default();
    let prep = PreparedScene::new(&s, &spec).unwrap();
    let sel = SelectionConfig::default();
    let inputs = build_target_inputs(&s, &prep, s.targets[0], &sel).unwrap();
    let maps: usize = inputs.maps.iter().map(LevelInputs::tokens).sum();
    let voxels: usize = inputs.voxels.iter().map(LevelInputs::tokens).sum();
    assert_eq!(maps, sel.map_tokens);
    assert_eq!(voxels, sel.voxel_tokens);
    assert_eq!(inputs.agents.tokens(), s.agents.len());
    assert_eq!(inputs.agent_ids[inputs.target_token], s.targets[0]);
    for ((level, polys), spec_level) in inputs.maps.iter().zip(&prep.map.levels).zip(&spec.map_levels) {
        let cap = spec_level.points_per_polyline;
        for e in &s.map {
            let mine: Vec<_> = polys.iter().filter(|p| p.element_id == e.element_id).collect();
            let total: usize = mine.iter().map(|p| p.points.len()).sum();
            assert!(mine.len() <= total.div_ceil(cap));
        }
        assert!(level.groups.iter().all(|g| !g.is_empty() && g.len() <= cap));
    }
}

#[test]
fn tokens_are_frame_invariant() {
    let spec = GranularitySpec::default();
    let sel = SelectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let enc = TokenEncoders::new(&mut store, &spec, 11, 57, 16, &mut rng).unwrap();
    for seed in 0..5 {
        let s = scenario(seed);
        let t = Pose2::new(
            rng.random_range(-300.0..300.0),
            rng.random_range(-300.0..300.0),
            rng.random_range(-3.1..3.1),
        );
        let moved = s.transformed(&t);
        let pa = PreparedScene::new(&s, &spec).unwrap();
        let pb = PreparedScene::new(&moved, &spec).unwrap();
        for &target in &s.targets {
            let a = build_target_inputs(&s, &pa, target, &sel).unwrap();
            let b = build_target_inputs(&moved, &pb, target, &sel).unwrap();
            let mut ta = Tape::new();
            let mut tb = Tape::new();
            let xa = enc.forward(&mut ta, &store, &a).unwrap().tokens(&ta);
            let xb = enc.forward(&mut tb, &store, &b).unwrap().tokens(&tb);
            assert_eq!(xa.len(), xb.len());
            for (u, v) in xa.iter().zip(&xb) {
                assert_eq!(u.source, v.source);
                for k in 0..2 {
                    assert!((u.ref_position[k] - v.ref_position[k]).abs() < 1e-9);
                }
                for (p, q) in u.feature.iter().zip(&v.feature) {
                    assert!((p - q).abs() < 1e-9, "{p} vs {q}");
                }
            }
        }
    }
}
