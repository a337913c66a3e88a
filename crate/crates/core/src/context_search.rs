//! Spatial token selection: motion-aware and trajectory-aware searches and
//! the k-nearest-neighbour lists used by local attention.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{distance_sq, Point2};

/// Indices into a token set, ordered by non-decreasing distance to `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub indices: Vec<usize>,
    pub center: Point2,
    /// Size of the token set the indices refer to.
    pub universe: usize,
}

/// Linear extrapolation of the current position over `tau` seconds.
pub fn motion_projected_center(position: Point2, velocity: Point2, tau: f64) -> Point2 {
    [position[0] + velocity[0] * tau, position[1] + velocity[1] * tau]
}

fn by_score(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Squared distances are compared at this resolution (m²), so that ties
/// between equidistant tokens survive the rounding of a change of frame.
pub const DISTANCE_RESOLUTION: f64 = 1e-6;

/// The `n` lowest-scoring indices, ties broken by lower index.
fn smallest(mut scored: Vec<(f64, usize)>, n: usize) -> Vec<usize> {
    for s in &mut scored {
        s.0 = (s.0 / DISTANCE_RESOLUTION).round();
    }
    let n = n.min(scored.len());
    if n == 0 {
        return Vec::new();
    }
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, by_score);
        scored.truncate(n);
    }
    scored.sort_unstable_by(by_score);
    scored.into_iter().map(|(_, i)| i).collect()
}

pub fn nearest_tokens(positions: &[Point2], center: Point2, n: usize) -> SearchResult {
    let scored = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (distance_sq(*p, center), i))
        .collect();
    SearchResult {
        indices: smallest(scored, n),
        center,
        universe: positions.len(),
    }
}

/// Tokens closest to any waypoint of `trajectory`.
pub fn trajectory_aware_select(
    positions: &[Point2],
    trajectory: &[Point2],
    n: usize,
) -> Result<SearchResult> {
    let center = *trajectory
        .last()
        .ok_or_else(|| Error::contract("trajectory-aware search needs at least one waypoint"))?;
    let scored = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = trajectory
                .iter()
                .map(|w| distance_sq(*p, *w))
                .fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .collect();
    Ok(SearchResult {
        indices: smallest(scored, n),
        center,
        universe: positions.len(),
    })
}

/// Deduplicated union keeping first occurrences, `a` before `b`.
pub fn union_select(a: &SearchResult, b: &SearchResult) -> Result<Vec<usize>> {
    if a.universe != b.universe {
        return Err(Error::contract(format!(
            "union of selections over different token sets ({} vs {} tokens)",
            a.universe, b.universe
        )));
    }
    let mut seen = vec![false; a.universe];
    let mut out = Vec::with_capacity(a.indices.len() + b.indices.len());
    for &i in a.indices.iter().chain(&b.indices) {
        if !seen[i] {
            seen[i] = true;
            out.push(i);
        }
    }
    Ok(out)
}

/// For every token, itself followed by its `k - 1` nearest other tokens.
pub fn knn_neighbors(positions: &[Point2], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::contract("knn_neighbors needs k >= 1"));
    }
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let scored = positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (distance_sq(*p, *q), j))
                .collect();
            let mut list = Vec::with_capacity(k.min(positions.len()));
            list.push(i);
            list.extend(smallest(scored, k - 1));
            list
        })
        .collect())
}

/// Nearest tokens over several granularity levels sharing one budget, or
/// with per-level shares of it when `fractions` is given. Returns indices
/// per level, nearest first.
pub fn budgeted_nearest(
    levels: &[Vec<Point2>],
    center: Point2,
    budget: usize,
    fractions: Option<&[f64]>,
) -> Result<Vec<Vec<usize>>> {
    match fractions {
        Some(f) => {
            if f.len() != levels.len() || f.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::config(format!(
                    "{} level fractions given for {} levels",
                    f.len(),
                    levels.len()
                )));
            }
            let total: f64 = f.iter().sum();
            if !(total > 0.0) {
                return Err(Error::config("level fractions sum to zero"));
            }
            Ok(levels
                .iter()
                .zip(f)
                .map(|(pts, share)| {
                    let n = (budget as f64 * share / total).round() as usize;
                    nearest_tokens(pts, center, n).indices
                })
                .collect())
        }
        None => {
            let pooled: Vec<Point2> = levels.iter().flatten().copied().collect();
            let mut out = vec![Vec::new(); levels.len()];
            let starts: Vec<usize> = levels
                .iter()
                .scan(0, |acc, l| {
                    let s = *acc;
                    *acc += l.len();
                    Some(s)
                })
                .collect();
            for i in nearest_tokens(&pooled, center, budget).indices {
                let li = starts.partition_point(|s| *s <= i) - 1;
                out[li].push(i - starts[li]);
            }
            Ok(out)
        }
    }
}
