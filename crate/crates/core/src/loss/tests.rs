use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::Tensor;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
    tape.leaf(Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true))
}

/// `[K, T·7]` outputs with means `mu[m][t]`, log σ, ρ_raw and velocities.
fn reg_data(mu: &[Vec<[f64; 2]>], log_sigma: [f64; 2], rho_raw: f64, vel: [f64; 2]) -> Vec<f64> {
    mu.iter()
        .flat_map(|m| {
            m.iter()
                .flat_map(move |p| [p[0], p[1], log_sigma[0], log_sigma[1], rho_raw, vel[0], vel[1]])
        })
        .collect()
}

fn gt_track(points: &[[f64; 2]], vel: [f64; 2]) -> Vec<[f64; 4]> {
    points.iter().map(|p| [p[0], p[1], vel[0], vel[1]]).collect()
}

/// Per-step NLL written out directly in f64.
fn nll_oracle(p: &[f64; 7], gt: &[f64; 4]) -> f64 {
    let lsx = p[2].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let lsy = p[3].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let (sx, sy) = (lsx.exp(), lsy.exp());
    let rho = p[4].tanh();
    let (dx, dy) = (gt[0] - p[0], gt[1] - p[1]);
    let one = 1.0 - rho * rho;
    lsx + lsy + 0.5 * one.ln() + (2.0 * PI).ln()
        + (dx * dx / (sx * sx) + dy * dy / (sy * sy) - 2.0 * rho * dx * dy / (sx * sy)) / (2.0 * one)
}

#[test]
fn aux_loss_examples() {
    let mut tape = Tape::new();
    let gt = vec![Some(vec![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]), None];
    let exact = leaf(&mut tape, &[2, 8], vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 9., 9., 9., 9., 9., 9., 9.]);
    let l = aux_loss(&mut tape, exact, &gt, None).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    let delta = 0.7;
    let shifted = leaf(
        &mut tape,
        &[2, 8],
        vec![1. + delta, 2. + delta, 3., 4., 5. + delta, 6. + delta, 7., 8., 0., 0., 0., 0., 0., 0., 0., 0.],
    );
    let l = aux_loss(&mut tape, shifted, &gt, None).unwrap();
    assert!((tape.value(l).item() - delta / 2.0).abs() < 1e-15);
    let none = vec![None, None];
    assert!(aux_loss(&mut tape, exact, &none, None).is_err());
}

#[test]
fn aux_loss_matches_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (n, t) = (rng.random_range(1..5), rng.random_range(1..6));
        let pred: Vec<f64> = (0..n * t * 4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let gt: Vec<Option<Vec<[f64; 4]>>> = (0..n)
            .map(|a| {
                (a == 0 || rng.random_bool(0.6)).then(|| {
                    (0..t)
                        .map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0)))
                        .collect()
                })
            })
            .collect();
        let valid: Vec<Vec<bool>> = (0..n).map(|_| (0..t).map(|s| s == 0 || rng.random_bool(0.7)).collect()).collect();
        let (mut sum, mut count) = (0.0, 0);
        for a in 0..n {
            if let Some(f) = &gt[a] {
                for s in 0..t {
                    if valid[a][s] {
                        for c in 0..4 {
                            sum += (pred[a * t * 4 + s * 4 + c] - f[s][c]).abs();
                            count += 1;
                        }
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[n, t * 4], pred);
        let l = aux_loss(&mut tape, x, &gt, Some(&valid)).unwrap();
        assert!((tape.value(l).item() - sum / count as f64).abs() < 1e-12);
    }
}

#[test]
fn unit_gaussian_at_mean_is_log_two_pi() {
    let mut tape = Tape::new();
    let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, -0.5 * i as f64]).collect();
    let reg = leaf(&mut tape, &[1, 6 * 7], reg_data(std::slice::from_ref(&pts), [0.0, 0.0], 0.0, [1.0, 2.0]));
    let gt = gt_track(&pts, [1.0, 2.0]);
    let l = gmm_nll(&mut tape, reg, 0, &gt, &[true; 6]).unwrap();
    assert!((tape.value(l).item() - LOG_2PI).abs() < 1e-12);
    let s: f64 = 1.7;
    let reg = leaf(&mut tape, &[1, 6 * 7], reg_data(&[pts], [s.ln(), s.ln()], 0.0, [1.0, 2.0]));
    let l = gmm_nll(&mut tape, reg, 0, &gt, &[true; 6]).unwrap();
    assert!((tape.value(l).item() - (LOG_2PI + 2.0 * s.ln())).abs() < 1e-12);
}

#[test]
fn nll_gradient_vanishes_at_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<[f64; 2]> = (0..5).map(|_| [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)]).collect();
    let mut tape = Tape::new();
    let reg = leaf(&mut tape, &[1, 35], reg_data(std::slice::from_ref(&pts), [0.3, -0.4], 0.8, [0.5, 0.5]));
    let gt = gt_track(&pts, [0.1, 0.2]);
    let l = gmm_nll(&mut tape, reg, 0, &gt, &[true; 5]).unwrap();
    let g = tape.backward(l).unwrap();
    let g = g.get(reg).unwrap();
    for s in 0..5 {
        assert!(g[s * 7].abs() < 1e-8 && g[s * 7 + 1].abs() < 1e-8);
    }
}

#[test]
fn nll_matches_direct_oracle_and_skips_invalid_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.random_range(1..8);
        let data: Vec<f64> = (0..2 * t * 7)
            .map(|i| match i % 7 {
                2 | 3 => rng.random_range(-2.5..3.0),
                4 => rng.random_range(-3.0..3.0),
                _ => rng.random_range(-10.0..10.0),
            })
            .collect();
        let gt: Vec<[f64; 4]> = (0..t).map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0))).collect();
        let valid: Vec<bool> = (0..t).map(|s| s == t - 1 || rng.random_bool(0.7)).collect();
        let mode = rng.random_range(0..2);
        let (mut nll, mut vel, mut n) = (0.0, 0.0, 0);
        for s in 0..t {
            if !valid[s] {
                continue;
            }
            let p: [f64; 7] = data[(mode * t + s) * 7..(mode * t + s + 1) * 7].try_into().unwrap();
            nll += nll_oracle(&p, &gt[s]);
            vel += (p[5] - gt[s][2]).abs() + (p[6] - gt[s][3]).abs();
            n += 1;
        }
        let want = nll / n as f64 + vel / (2 * n) as f64;
        let mut tape = Tape::new();
        let reg = leaf(&mut tape, &[2, t * 7], data);
        let l = gmm_nll(&mut tape, reg, mode, &gt, &valid).unwrap();
        assert!((tape.value(l).item() - want).abs() < 1e-10 * want.abs().max(1.0));
    }
}

#[test]
fn nll_stays_finite_for_saturated_correlation() {
    let mut tape = Tape::new();
    let reg = leaf(&mut tape, &[1, 7], vec![1.0, 1.0, 0.0, 0.0, 40.0, 0.0, 0.0]);
    let l = gmm_nll(&mut tape, reg, 0, &[[1.0, 1.0, 0.0, 0.0]], &[true]).unwrap();
    let v = tape.value(l).item();
    assert!(v.is_finite());
    // ½ log(1 − ρ²) = −log cosh 40
    assert!((v - (LOG_2PI - (40.0 - std::f64::consts::LN_2))).abs() < 1e-9);
    assert!(tape.backward(l).unwrap().get(reg).unwrap().iter().all(|g| g.is_finite()));
}

#[test]
fn nll_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = 4;
    let data: Vec<f64> = (0..t * 7)
        .map(|i| match i % 7 {
            2 | 3 => rng.random_range(-1.0..1.0),
            4 => rng.random_range(-1.0..1.0),
            _ => rng.random_range(-3.0..3.0),
        })
        .collect();
    let gt: Vec<[f64; 4]> = (0..t).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
    let eval = |d: &[f64]| {
        let mut tape = Tape::new();
        let reg = leaf(&mut tape, &[1, t * 7], d.to_vec());
        let l = gmm_nll(&mut tape, reg, 0, &gt, &[true; 4]).unwrap();
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let reg = leaf(&mut tape, &[1, t * 7], data.clone());
    let l = gmm_nll(&mut tape, reg, 0, &gt, &[true; 4]).unwrap();
    let g = tape.backward(l).unwrap().get(reg).unwrap().to_vec();
    let h = 1e-6;
    for i in 0..data.len() {
        let (mut a, mut b) = (data.clone(), data.clone());
        a[i] += h;
        b[i] -= h;
        let fd = (eval(&a) - eval(&b)) / (2.0 * h);
        assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn cls_loss_examples() {
    let mut tape = Tape::new();
    let uniform = leaf(&mut tape, &[1, 6], vec![0.3; 6]);
    let l = cls_loss(&mut tape, uniform, 2).unwrap();
    assert!((tape.value(l).item() - 6f64.ln()).abs() < 1e-14);
    let peaked = leaf(&mut tape, &[1, 3], vec![-50.0, 60.0, -40.0]);
    let l = cls_loss(&mut tape, peaked, 1).unwrap();
    assert!(tape.value(l).item() < 1e-40);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let logits: Vec<f64> = (0..8).map(|_| rng.random_range(-20.0..20.0)).collect();
        let best = rng.random_range(0..8);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let x = leaf(&mut tape, &[1, 8], logits.clone());
        let l = cls_loss(&mut tape, x, best).unwrap();
        assert!((tape.value(l).item() - (lse - logits[best])).abs() < 1e-12);
    }
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, t: usize) -> GmmModeSet {
    GmmModeSet::from_outputs(
        &Tensor::new(vec![1, k], (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        &Tensor::new(vec![k, t * 7], (0..k * t * 7).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap(),
    )
    .unwrap()
}

#[test]
fn hard_assign_ties_go_to_lowest_index() {
    let pts = vec![[1.0, 0.0], [2.0, 0.0]];
    let up: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], 1.0]).collect();
    let down: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], -1.0]).collect();
    let set = GmmModeSet::from_outputs(
        &Tensor::new(vec![1, 3], vec![0.0, 0.0, 5.0]).unwrap(),
        &Tensor::new(vec![3, 14], reg_data(&[vec![[9.0, 9.0]; 2], up, down], [0.0, 0.0], 0.0, [0.0, 0.0])).unwrap(),
    )
    .unwrap();
    let gt = gt_track(&pts, [0.0, 0.0]);
    assert_eq!(hard_assign(&set, &gt, &[true, true], false), 1);
    assert_eq!(hard_assign(&set, &gt, &[true, true], true), 1);
}

#[test]
fn hard_assign_endpoint_flag_changes_metric() {
    // mode 0 is close everywhere except the end, mode 1 only at the end
    let gt = gt_track(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [0.0, 0.0]);
    let a = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 3.0]];
    let b = vec![[0.0, 5.0], [1.0, 5.0], [2.0, 0.0]];
    let set = GmmModeSet::from_outputs(
        &Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(),
        &Tensor::new(vec![2, 21], reg_data(&[a, b], [0.0, 0.0], 0.0, [0.0, 0.0])).unwrap(),
    )
    .unwrap();
    assert_eq!(hard_assign(&set, &gt, &[true; 3], false), 0);
    assert_eq!(hard_assign(&set, &gt, &[true; 3], true), 1);
}

proptest! {
    #[test]
    fn hard_assign_ignores_probabilities(seed in 0u64..5000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng, 6, 4);
        let gt: Vec<[f64; 4]> = (0..4).map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0))).collect();
        let mut scaled = set.clone();
        scaled.probabilities.iter_mut().for_each(|p| *p *= scale);
        scaled.probabilities.reverse();
        prop_assert_eq!(hard_assign(&set, &gt, &[true; 4], false), hard_assign(&scaled, &gt, &[true; 4], false));
    }
}

fn target_terms(tape: &mut Tape, seed: u64) -> TargetLoss {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, t) = (3, 4);
    let layers: Vec<LayerOutput> = (0..2)
        .map(|_| {
            let logits = leaf(tape, &[1, k], (0..k).map(|_| rng.random_range(-1.0..1.0)).collect());
            let reg = leaf(tape, &[k, t * 7], (0..k * t * 7).map(|_| rng.random_range(-2.0..2.0)).collect());
            LayerOutput {
                logits,
                reg,
                context: vec![],
            }
        })
        .collect();
    let aux = leaf(tape, &[2, t * 4], (0..2 * t * 4).map(|_| rng.random_range(-2.0..2.0)).collect());
    let fut: Vec<[f64; 4]> = (0..t).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
    let futures = vec![Some(fut.clone()), None];
    target_loss(tape, &layers, aux, &futures, &fut, &[true; 4], &LossWeights::default()).unwrap()
}

#[test]
fn total_is_weighted_sum_of_components() {
    let mut tape = Tape::new();
    let terms = vec![target_terms(&mut tape, 1), target_terms(&mut tape, 2)];
    let w = LossWeights {
        w_aux: 0.5,
        w_cls: 2.0,
        w_gmm: 1.5,
        endpoint_assignment: false,
    };
    let (total, b) = total_loss(&mut tape, &terms, &w).unwrap();
    assert!((b.total - (0.5 * b.aux + 2.0 * b.cls + 1.5 * b.gmm)).abs() < 1e-12);
    assert_eq!(tape.value(total).item(), b.total);
    assert_eq!(b.best_modes.len(), 2);
    assert_eq!(b.best_modes[0].len(), 2);
    let doubled = LossWeights { w_cls: 4.0, ..w.clone() };
    let (_, d) = total_loss(&mut tape, &terms, &doubled).unwrap();
    assert_eq!((d.aux, d.cls, d.gmm), (b.aux, b.cls, b.gmm));
    assert!((d.total - b.total - 2.0 * b.cls).abs() < 1e-12);
    let want_aux = (tape.value(terms[0].aux).item() + tape.value(terms[1].aux).item()) / 2.0;
    assert!((b.aux - want_aux).abs() < 1e-15);
}

#[test]
fn weights_validate() {
    LossWeights::default().validate().unwrap();
    let zero = LossWeights {
        w_aux: 0.0,
        w_cls: 0.0,
        w_gmm: 0.0,
        endpoint_assignment: false,
    };
    assert!(zero.validate().is_err());
    assert!(LossWeights { w_aux: -1.0, ..LossWeights::default() }.validate().is_err());
}
