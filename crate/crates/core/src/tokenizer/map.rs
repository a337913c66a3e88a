//! Arc-length resampling of map elements into fixed-length polylines.

use super::{GranularitySpec, INPUT_SCALE};
use crate::geometry::{distance, Point2, Pose2};
use crate::scene::{MapElement, MapElementKind};

/// x, y, direction (2), kind one-hot (3), curvature, speed limit, validity.
pub const MAP_FEATURES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub position: Point2,
    pub direction: Point2,
    pub kind: MapElementKind,
    pub curvature: f64,
    pub speed_limit: f64,
}

/// Up to `points_per_polyline` valid points of one element chunk, world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPolyline {
    pub element_id: u64,
    pub points: Vec<MapPoint>,
    pub centroid: Point2,
}

impl MapPolyline {
    fn point_features(p: &MapPoint, pose: &Pose2, out: &mut Vec<f64>) {
        let q = pose.to_local(p.position);
        let d = pose.vector_to_local(p.direction);
        out.extend_from_slice(&[q[0] * INPUT_SCALE, q[1] * INPUT_SCALE, d[0], d[1]]);
        let mut onehot = [0.0; 3];
        onehot[p.kind.index()] = 1.0;
        out.extend_from_slice(&onehot);
        out.extend_from_slice(&[p.curvature, p.speed_limit * INPUT_SCALE, 1.0]);
    }

    /// Features of the valid points only, in the frame of `pose`.
    pub fn features(&self, pose: &Pose2) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * MAP_FEATURES);
        for p in &self.points {
            Self::point_features(p, pose, &mut out);
        }
        out
    }

    /// Features zero-padded to `len` points; padded rows have validity 0.
    pub fn padded_features(&self, pose: &Pose2, len: usize) -> Vec<f64> {
        let mut out = self.features(pose);
        out.resize(len.max(self.points.len()) * MAP_FEATURES, 0.0);
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorizedMap {
    /// One list per granularity level, coarse first.
    pub levels: Vec<Vec<MapPolyline>>,
    /// Elements too short to produce a single vector.
    pub skipped: usize,
}

/// Samples `points` at arc lengths `0, s, 2s, …` plus the final point when
/// it does not fall on the lattice.
pub fn resample(points: &[Point2], spacing: f64) -> Vec<Point2> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += distance(w[0], w[1]);
        cum.push(acc);
    }
    let total = acc;
    if points.is_empty() || total <= 0.0 {
        return points.first().map(|p| vec![*p]).unwrap_or_default();
    }
    let tol = 1e-9 * total.max(1.0);
    let mut out = Vec::new();
    let mut seg = 0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * spacing;
        if s > total + tol {
            break;
        }
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        k += 1;
    }
    let last = *points.last().unwrap();
    if total - (k - 1) as f64 * spacing > tol {
        out.push(last);
    }
    out
}

/// Signed inverse circumradius of the triangle `a, b, c` (positive when
/// turning left).
pub fn circumradius_curvature(a: Point2, b: Point2, c: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let bc = [c[0] - b[0], c[1] - b[1]];
    let cross = ab[0] * bc[1] - ab[1] * bc[0];
    let denom = distance(a, b) * distance(b, c) * distance(a, c);
    if denom <= 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

fn vectorize_element(e: &MapElement, spacing: f64) -> Option<Vec<MapPoint>> {
    let samples = resample(&e.points, spacing);
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len();
    let speed_limit = e.speed_limit.unwrap_or(0.0);
    // a short off-lattice tail makes its circumradius triple ill-conditioned
    let m = if n >= 4 && distance(samples[n - 2], samples[n - 1]) < 0.5 * spacing {
        n - 1
    } else {
        n
    };
    let points = (0..n - 1)
        .map(|i| {
            let (a, b) = (samples[i], samples[i + 1]);
            let len = distance(a, b);
            let curvature = if m < 3 {
                0.0
            } else {
                let j = i.clamp(1, m - 2);
                circumradius_curvature(samples[j - 1], samples[j], samples[j + 1])
            };
            MapPoint {
                position: a,
                direction: [(b[0] - a[0]) / len, (b[1] - a[1]) / len],
                kind: e.kind,
                curvature,
                speed_limit,
            }
        })
        .collect();
    Some(points)
}

/// Resamples every element at each map level and chunks the resulting
/// vectors into polylines.
pub fn vectorize_map(map: &[MapElement], spec: &GranularitySpec) -> VectorizedMap {
    let mut out = VectorizedMap::default();
    for (li, level) in spec.map_levels.iter().enumerate() {
        let mut polylines = Vec::new();
        for e in map {
            let Some(points) = vectorize_element(e, level.point_spacing) else {
                if li == 0 {
                    out.skipped += 1;
                }
                continue;
            };
            for chunk in points.chunks(level.points_per_polyline) {
                let n = chunk.len() as f64;
                let centroid = chunk.iter().fold([0.0, 0.0], |acc, p| {
                    [acc[0] + p.position[0], acc[1] + p.position[1]]
                });
                polylines.push(MapPolyline {
                    element_id: e.element_id,
                    points: chunk.to_vec(),
                    centroid: [centroid[0] / n, centroid[1] / n],
                });
            }
        }
        out.levels.push(polylines);
    }
    if out.skipped > 0 {
        log::warn!("skipped {} degenerate map elements", out.skipped);
    }
    out
}
