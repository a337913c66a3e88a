use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::context_search::{nearest_tokens, trajectory_aware_select, union_select};
use crate::geometry::distance_sq;
use crate::tokenizer::TokenSource;

const C: usize = 16;
const T: usize = 5;

fn config() -> DecoderConfig {
    DecoderConfig {
        layers: 2,
        heads: 2,
        ffn_dim: 16,
        modes: 4,
        trajectory_tokens: 3,
        motion_tokens: 2,
    }
}

fn scene(tape: &mut Tape, agents: usize, others: usize, rng: &mut ChaCha8Rng) -> EncodedScene {
    let n = agents + others;
    let data: Vec<f64> = (0..n * C).map(|_| rng.random_range(-1.0..1.0)).collect();
    let context = tape.constant(Tensor::new(vec![n, C], data).unwrap());
    let aux = tape.constant(Tensor::zeros(&[agents, T * 4]));
    EncodedScene {
        refined: context,
        future_aware_agents: context,
        context,
        positions: (0..n)
            .map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)])
            .collect(),
        sources: (0..n)
            .map(|i| if i < agents { TokenSource::Agent } else { TokenSource::Map(0) })
            .collect(),
        agent_count: agents,
        aux,
    }
}

fn goals() -> Vec<Point2> {
    vec![[10.0, 0.0], [5.0, 5.0], [5.0, -5.0], [0.5, 0.0]]
}

fn mode_set(rng: &mut ChaCha8Rng, k: usize, spread: f64) -> GmmModeSet {
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let reg: Vec<f64> = (0..k * 2 * REG_CHANNELS).map(|_| rng.random_range(-spread..spread)).collect();
    GmmModeSet::from_outputs(
        &Tensor::new(vec![1, k], logits).unwrap(),
        &Tensor::new(vec![k, 2 * REG_CHANNELS], reg).unwrap(),
    )
    .unwrap()
}

/// Direct restatement of the greedy NMS contract.
fn nms_oracle(set: &GmmModeSet, keep: usize, radius: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..set.len()).collect();
    let mut kept = Vec::new();
    let mut suppressed = Vec::new();
    while kept.len() < keep && !remaining.is_empty() {
        let mut best = 0;
        for (pos, &i) in remaining.iter().enumerate() {
            if set.probabilities[i] > set.probabilities[remaining[best]] {
                best = pos;
            }
        }
        let i = remaining.remove(best);
        let clear = kept
            .iter()
            .all(|&j: &usize| distance_sq(set.endpoint(i), set.endpoint(j)).sqrt() > radius);
        if clear {
            kept.push(i);
        } else {
            suppressed.push(i);
        }
    }
    while kept.len() < keep && !suppressed.is_empty() {
        kept.push(suppressed.remove(0));
    }
    kept
}

#[test]
fn zero_features_give_uniform_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
    for name in ["decoder.layer0.cls", "decoder.layer0.reg"] {
        for l in 0..2 {
            let id = store.id(&format!("{name}.l{l}.bias")).unwrap();
            let shape = store.tensor(id).shape().to_vec();
            *store.tensor_mut(id) = Tensor::zeros(&shape).with_requires_grad(true);
        }
    }
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::zeros(&[4, C]));
    let (logits, reg) = dec.heads(&mut tape, &store, 0, f).unwrap();
    let set = GmmModeSet::from_outputs(tape.value(logits), tape.value(reg)).unwrap();
    for p in &set.probabilities {
        assert!((p - 0.25).abs() < 1e-15);
    }
    assert!(tape.value(reg).data().iter().all(|x| *x == 0.0));
    assert_eq!(set.sigma(0, 0), [1.0, 1.0]);
    assert_eq!(set.rho(0, 0), 0.0);
}

#[test]
fn probabilities_form_a_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let set = mode_set(&mut rng, 8, 30.0);
        let z: f64 = set.probabilities.iter().sum();
        assert!((z - 1.0).abs() < 1e-12);
        assert!(set.probabilities.iter().all(|p| *p >= 0.0));
    }
    let big = GmmModeSet::from_outputs(
        &Tensor::new(vec![1, 2], vec![1000.0, -1000.0]).unwrap(),
        &Tensor::zeros(&[2, REG_CHANNELS]),
    )
    .unwrap();
    assert_eq!(big.probabilities, vec![1.0, 0.0]);
}

#[test]
fn head_gradients_match_finite_differences() {
    use crate::numerics::gradcheck::{check_gradients, GradCheckOptions};
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
    let input: Vec<f64> = (0..4 * C).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |s: &ParamStore| {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new(vec![4, C], input.clone()).unwrap());
        let (logits, reg) = dec.heads(&mut tape, s, 1, f).unwrap();
        let lse = tape.logsumexp_rows(logits).unwrap();
        let a = tape.sum(lse);
        let r = tape.tanh(reg);
        let b = tape.sum(r);
        let loss = tape.add(a, b).unwrap();
        (tape, loss)
    };
    let (tape, loss) = run(&store);
    let grads = tape.backward(loss).unwrap().for_params(&tape, &store);
    for c in check_gradients(&store, &grads, |s| {
        let (t, l) = run(s);
        t.value(l).item()
    }, GradCheckOptions::default())
    {
        if c.name.starts_with("decoder.layer1") {
            assert!(c.max_rel_error < 1e-4, "{}: {}", c.name, c.max_rel_error);
        }
    }
}

#[test]
fn decode_shapes_do_not_depend_on_agent_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
    for agents in [1, 3, 7] {
        let mut tape = Tape::new();
        let sc = scene(&mut tape, agents, 6, &mut rng);
        let out = dec
            .decode(&mut tape, &store, &sc, &goals(), AgentType::Vehicle, [4.0, 0.0])
            .unwrap();
        assert_eq!(out.len(), 2);
        for layer in &out {
            assert_eq!(tape.shape(layer.logits), &[1, 4]);
            assert_eq!(tape.shape(layer.reg), &[4, T * REG_CHANNELS]);
            let set = layer.modes(&tape).unwrap();
            assert_eq!(set.steps(), T);
        }
    }
}

#[test]
fn first_layer_context_is_union_over_straight_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
    let mut tape = Tape::new();
    let sc = scene(&mut tape, 2, 12, &mut rng);
    let center = [3.0, 1.0];
    let out = dec
        .decode(&mut tape, &store, &sc, &goals(), AgentType::Cyclist, center)
        .unwrap();
    let motion = nearest_tokens(&sc.positions, center, 2);
    for (m, g) in goals().iter().enumerate() {
        let line: Vec<Point2> = (1..=T).map(|s| [g[0] * s as f64 / T as f64, g[1] * s as f64 / T as f64]).collect();
        let near = trajectory_aware_select(&sc.positions, &line, 3).unwrap();
        assert_eq!(out[0].context[m], union_select(&near, &motion).unwrap());
    }
    // later layers search along the previous layer's predicted means
    let prev = out[0].modes(&tape).unwrap();
    for m in 0..4 {
        let near = trajectory_aware_select(&sc.positions, &prev.positions(m), 3).unwrap();
        assert_eq!(out[1].context[m], union_select(&near, &motion).unwrap());
    }
}

#[test]
fn decode_is_bitwise_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let sc = scene(&mut tape, 2, 8, &mut rng);
        let out = dec
            .decode(&mut tape, &store, &sc, &goals(), AgentType::Pedestrian, [0.0, 0.0])
            .unwrap();
        out.iter()
            .flat_map(|l| tape.value(l.reg).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(build(), build());
}

#[test]
fn wrong_goal_count_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &config(), C, T, 1, &mut rng).unwrap();
    let mut tape = Tape::new();
    let sc = scene(&mut tape, 1, 3, &mut rng);
    assert!(dec
        .decode(&mut tape, &store, &sc, &goals()[..3], AgentType::Vehicle, [0.0, 0.0])
        .is_err());
}

#[test]
fn goal_set_round_trips_and_validates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut endpoints = BTreeMap::new();
    for t in AgentType::ALL {
        endpoints.insert(
            t,
            (0..30)
                .map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)])
                .collect::<Vec<_>>(),
        );
    }
    let set = cluster_intention_goals(&endpoints, 5, 11).unwrap();
    assert_eq!(set.modes(), 5);
    let back = IntentionGoalSet::from_json(&set.to_json().unwrap()).unwrap();
    assert_eq!(back, set);
    endpoints.get_mut(&AgentType::Cyclist).unwrap().truncate(4);
    assert!(cluster_intention_goals(&endpoints, 5, 11).is_err());
    let mut broken = set.clone();
    broken.goals.get_mut(&AgentType::Vehicle).unwrap().pop();
    assert!(broken.validate().is_err());
}

#[test]
fn nms_identical_endpoints_backfill() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut set = mode_set(&mut rng, 8, 1.0);
    for m in &mut set.modes {
        let last = m.last_mut().unwrap();
        last[0] = 3.0;
        last[1] = -1.0;
    }
    let r = nms_select(&set, 6, 2.5);
    assert_eq!(r.survivors, 1);
    assert_eq!(r.indices.len(), 6);
    let z: f64 = r.modes.probabilities.iter().sum();
    assert!((z - 1.0).abs() < 1e-12);
}

#[test]
fn nms_far_apart_keeps_top_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut set = mode_set(&mut rng, 8, 1.0);
    for (i, m) in set.modes.iter_mut().enumerate() {
        let last = m.last_mut().unwrap();
        last[0] = 10.0 * i as f64;
        last[1] = 0.0;
    }
    let r = nms_select(&set, 6, 2.5);
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| set.probabilities[b].total_cmp(&set.probabilities[a]));
    assert_eq!(r.indices, order[..6]);
    assert_eq!(r.survivors, 6);
}

#[test]
fn nms_matches_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let set = mode_set(&mut rng, 64, 15.0);
        let keep = rng.random_range(1..=8);
        let radius = rng.random_range(0.5..6.0);
        let r = nms_select(&set, keep, radius);
        assert_eq!(r.indices, nms_oracle(&set, keep, radius));
    }
}

proptest! {
    #[test]
    fn nms_survivors_are_separated(seed in 0u64..10_000, keep in 1usize..10, radius in 0.1f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = mode_set(&mut rng, 16, 10.0);
        let r = nms_select(&set, keep, radius);
        let s = &r.indices[..r.survivors];
        for (a, &i) in s.iter().enumerate() {
            for &j in &s[a + 1..] {
                prop_assert!(distance_sq(set.endpoint(i), set.endpoint(j)).sqrt() > radius);
            }
        }
        prop_assert_eq!(r.indices.len(), keep.min(16));
        let z: f64 = r.modes.probabilities.iter().sum();
        prop_assert!((z - 1.0).abs() < 1e-12);
    }
}
