//! Training objective: auxiliary L1 on scene futures, intention
//! cross-entropy and bivariate-Gaussian NLL under hard assignment.

use std::f64::consts::{LN_10, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::decoder::{GmmModeSet, LayerOutput, REG_CHANNELS};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Bounds applied to log σ inside the NLL.
pub const LOG_SIGMA_MIN: f64 = -1.609_437_912_434_100_3; // ln 0.2
pub const LOG_SIGMA_MAX: f64 = LN_10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_aux: f64,
    pub w_cls: f64,
    pub w_gmm: f64,
    /// Assign by endpoint distance instead of mean distance over steps.
    pub endpoint_assignment: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_aux: 1.0,
            w_cls: 1.0,
            w_gmm: 1.0,
            endpoint_assignment: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_aux, self.w_cls, self.w_gmm];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(Error::config("loss weights must be non-negative with at least one positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub aux: f64,
    pub cls: f64,
    pub gmm: f64,
    /// Assigned mode per target per decoder layer.
    pub best_modes: Vec<Vec<usize>>,
}

/// Loss terms of one target, still on the tape.
#[derive(Clone, Debug)]
pub struct TargetLoss {
    pub aux: Var,
    /// Averaged over decoder layers.
    pub cls: Var,
    pub gmm: Var,
    pub best_modes: Vec<usize>,
}

/// Mean absolute error of `aux` (`[agents, T·4]`, metres) over every agent
/// with a ground-truth future and every valid step.
pub fn aux_loss(
    tape: &mut Tape,
    aux: Var,
    futures: &[Option<Vec<[f64; 4]>>],
    valid: Option<&[Vec<bool>]>,
) -> Result<Var> {
    let shape = tape.shape(aux).to_vec();
    if shape.len() != 2 || shape[0] != futures.len() || !shape[1].is_multiple_of(4) {
        return Err(Error::Dimension {
            op: "aux_loss",
            lhs: shape,
            rhs: vec![futures.len()],
        });
    }
    let t = shape[1] / 4;
    let mut target = vec![0.0; shape[0] * shape[1]];
    let mut mask = vec![0.0; shape[0] * shape[1]];
    let mut count = 0usize;
    for (a, f) in futures.iter().enumerate() {
        let Some(f) = f else { continue };
        if f.len() != t {
            return Err(Error::contract(format!("future of {} steps, expected {t}", f.len())));
        }
        for (s, state) in f.iter().enumerate() {
            if valid.is_some_and(|v| !v[a][s]) {
                continue;
            }
            let base = a * shape[1] + s * 4;
            target[base..base + 4].copy_from_slice(state);
            mask[base..base + 4].fill(1.0);
            count += 4;
        }
    }
    if count == 0 {
        return Err(Error::contract("aux loss has no valid entries"));
    }
    let target = tape.constant(Tensor::new(shape.clone(), target)?);
    let mask = tape.constant(Tensor::new(shape, mask)?);
    let d = tape.sub(aux, target)?;
    let d = tape.abs(d);
    let d = tape.mul(d, mask)?;
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / count as f64))
}

/// Mode whose mean positions are closest to `gt` on average over valid
/// steps (or at the last valid step); ties go to the lowest index.
pub fn hard_assign(modes: &GmmModeSet, gt: &[[f64; 4]], valid: &[bool], endpoint_only: bool) -> usize {
    let steps: Vec<usize> = if endpoint_only {
        valid.iter().rposition(|v| *v).into_iter().collect()
    } else {
        (0..gt.len()).filter(|&s| valid[s]).collect()
    };
    let mut best = (0, f64::INFINITY);
    for (m, mode) in modes.modes.iter().enumerate() {
        let d: f64 = steps
            .iter()
            .map(|&s| ((mode[s][0] - gt[s][0]).powi(2) + (mode[s][1] - gt[s][1]).powi(2)).sqrt())
            .sum::<f64>()
            / steps.len().max(1) as f64;
        if d < best.1 {
            best = (m, d);
        }
    }
    best.0
}

fn column(tape: &mut Tape, x: Var, c: usize) -> Result<Var> {
    tape.slice_cols(x, c, c + 1)
}

/// Bivariate Gaussian NLL of mode `mode` of `reg` averaged over valid steps,
/// plus the mean L1 error of its velocity channels.
pub fn gmm_nll(tape: &mut Tape, reg: Var, mode: usize, gt: &[[f64; 4]], valid: &[bool]) -> Result<Var> {
    let cols = tape.shape(reg)[1];
    let t = cols / REG_CHANNELS;
    if t != gt.len() || valid.len() != t || mode >= tape.shape(reg)[0] {
        return Err(Error::contract(format!(
            "gmm_nll: {t} predicted steps, {} ground-truth steps, mode {mode}",
            gt.len()
        )));
    }
    let steps: Vec<usize> = (0..t).filter(|&s| valid[s]).collect();
    if steps.is_empty() {
        return Err(Error::contract("gmm_nll has no valid steps"));
    }
    let n = steps.len();
    let row = tape.gather_rows(reg, &[mode])?;
    let per_step = tape.reshape(row, &[t, REG_CHANNELS])?;
    let p = tape.gather_rows(per_step, &steps)?;
    let gt_col = |c: usize| Tensor::new(vec![n, 1], steps.iter().map(|&s| gt[s][c]).collect()).expect("column");

    let mux = column(tape, p, 0)?;
    let muy = column(tape, p, 1)?;
    let lsx = column(tape, p, 2)?;
    let lsx = tape.clamp(lsx, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let lsy = column(tape, p, 3)?;
    let lsy = tape.clamp(lsy, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let r = column(tape, p, 4)?;
    let v = tape.slice_cols(p, 5, 7)?;

    let gx = tape.constant(gt_col(0));
    let gy = tape.constant(gt_col(1));
    let dx = tape.sub(gx, mux)?;
    let dy = tape.sub(gy, muy)?;
    let ix = tape.scale(lsx, -1.0);
    let ix = tape.exp(ix);
    let iy = tape.scale(lsy, -1.0);
    let iy = tape.exp(iy);
    let zx = tape.mul(dx, ix)?;
    let zy = tape.mul(dy, iy)?;

    // log cosh r = |r| + log(1 + e^{-2|r|}) - ln 2, so that
    // 1 - ρ² = sech² r stays representable when tanh r rounds to ±1
    let a = tape.abs(r);
    let e = tape.scale(a, -2.0);
    let e = tape.exp(e);
    let e = tape.add_scalar(e, 1.0);
    let l = tape.log(e);
    let lc = tape.add(a, l)?;
    let lc = tape.add_scalar(lc, -LN_2);
    let rho = tape.tanh(r);

    let zx2 = tape.mul(zx, zx)?;
    let zy2 = tape.mul(zy, zy)?;
    let zxy = tape.mul(zx, zy)?;
    let cross = tape.mul(rho, zxy)?;
    let cross = tape.scale(cross, -2.0);
    let quad = tape.add(zx2, zy2)?;
    let quad = tape.add(quad, cross)?;
    let inv = tape.scale(lc, 2.0);
    let inv = tape.exp(inv);
    let q = tape.mul(inv, quad)?;
    let q = tape.scale(q, 0.5);

    let nll = tape.add(lsx, lsy)?;
    let nll = tape.sub(nll, lc)?;
    let nll = tape.add(nll, q)?;
    let nll = tape.mean(nll);
    let nll = tape.add_scalar(nll, (2.0 * PI).ln());

    let gv = Tensor::new(vec![n, 2], steps.iter().flat_map(|&s| [gt[s][2], gt[s][3]]).collect())?;
    let gv = tape.constant(gv);
    let dv = tape.sub(v, gv)?;
    let dv = tape.abs(dv);
    let vel = tape.mean(dv);
    tape.add(nll, vel)
}

/// Cross-entropy of `[1, K]` logits against mode `best`.
pub fn cls_loss(tape: &mut Tape, logits: Var, best: usize) -> Result<Var> {
    let lse = tape.logsumexp_rows(logits)?;
    let lse = tape.reshape(lse, &[1, 1])?;
    let picked = tape.slice_cols(logits, best, best + 1)?;
    tape.sub(lse, picked)
}

/// All loss terms of one target. Every decoder layer is supervised with its
/// own hard assignment.
pub fn target_loss(
    tape: &mut Tape,
    layers: &[LayerOutput],
    aux: Var,
    agent_futures: &[Option<Vec<[f64; 4]>>],
    target_future: &[[f64; 4]],
    valid: &[bool],
    weights: &LossWeights,
) -> Result<TargetLoss> {
    if layers.is_empty() {
        return Err(Error::contract("no decoder layers to supervise"));
    }
    let aux = aux_loss(tape, aux, agent_futures, None)?;
    let mut cls_terms = Vec::with_capacity(layers.len());
    let mut gmm_terms = Vec::with_capacity(layers.len());
    let mut best_modes = Vec::with_capacity(layers.len());
    for layer in layers {
        let modes = layer.modes(tape)?;
        let best = hard_assign(&modes, target_future, valid, weights.endpoint_assignment);
        cls_terms.push(cls_loss(tape, layer.logits, best)?);
        gmm_terms.push(gmm_nll(tape, layer.reg, best, target_future, valid)?);
        best_modes.push(best);
    }
    let scale = 1.0 / layers.len() as f64;
    let cls = tape.concat_rows(&cls_terms)?;
    let cls = tape.sum(cls);
    let cls = tape.scale(cls, scale);
    let gmm = tape.concat_cols(&gmm_terms)?;
    let gmm = tape.sum(gmm);
    let gmm = tape.scale(gmm, scale);
    Ok(TargetLoss {
        aux,
        cls,
        gmm,
        best_modes,
    })
}

/// Weighted sum of the target terms, each averaged over targets.
pub fn total_loss(tape: &mut Tape, targets: &[TargetLoss], weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    if targets.is_empty() {
        return Err(Error::contract("no targets to average"));
    }
    let scale = 1.0 / targets.len() as f64;
    let mean = |tape: &mut Tape, pick: fn(&TargetLoss) -> Var| -> Result<Var> {
        let parts: Vec<Var> = targets.iter().map(pick).collect();
        let mut acc = parts[0];
        for p in &parts[1..] {
            acc = tape.add(acc, *p)?;
        }
        let acc = tape.sum(acc);
        Ok(tape.scale(acc, scale))
    };
    let aux = mean(tape, |t| t.aux)?;
    let cls = mean(tape, |t| t.cls)?;
    let gmm = mean(tape, |t| t.gmm)?;
    let wa = tape.scale(aux, weights.w_aux);
    let wc = tape.scale(cls, weights.w_cls);
    let wg = tape.scale(gmm, weights.w_gmm);
    let total = tape.add(wa, wc)?;
    let total = tape.add(total, wg)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        aux: tape.value(aux).item(),
        cls: tape.value(cls).item(),
        gmm: tape.value(gmm).item(),
        best_modes: targets.iter().map(|t| t.best_modes.clone()).collect(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests;
