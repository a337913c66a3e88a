use crate::geometry::distance_sq;

use super::GmmModeSet;

/// Modes kept by [`nms_select`], in selection order.
#[derive(Clone, Debug, PartialEq)]
pub struct NmsResult {
    /// Indices into the input mode set; the first `survivors` passed
    /// suppression, the rest are backfill.
    pub indices: Vec<usize>,
    pub survivors: usize,
    pub modes: GmmModeSet,
}

/// Greedy endpoint NMS: visit modes by descending probability (ties by
/// index) and drop any whose endpoint lies within `radius` of a kept one.
/// Short results are backfilled from the suppressed modes; kept
/// probabilities are renormalized.
pub fn nms_select(set: &GmmModeSet, keep: usize, radius: f64) -> NmsResult {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.probabilities[b].total_cmp(&set.probabilities[a]).then(a.cmp(&b)));
    let r2 = radius * radius;
    let mut kept: Vec<usize> = Vec::with_capacity(keep);
    let mut suppressed = Vec::new();
    for &i in &order {
        if kept.len() == keep {
            break;
        }
        let e = set.endpoint(i);
        if kept.iter().all(|&j| distance_sq(e, set.endpoint(j)) > r2) {
            kept.push(i);
        } else {
            suppressed.push(i);
        }
    }
    let survivors = kept.len();
    // suppression only ends early once `keep` modes survive, so a short
    // result has already visited every mode
    kept.extend(suppressed.iter().take(keep - survivors));
    let z: f64 = kept.iter().map(|&i| set.probabilities[i]).sum();
    let modes = GmmModeSet {
        probabilities: kept
            .iter()
            .map(|&i| {
                if z > 0.0 {
                    set.probabilities[i] / z
                } else {
                    1.0 / kept.len() as f64
                }
            })
            .collect(),
        modes: kept.iter().map(|&i| set.modes[i].clone()).collect(),
    };
    NmsResult {
        indices: kept,
        survivors,
        modes,
    }
}
