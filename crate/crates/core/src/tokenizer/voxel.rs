//! Multi-resolution average pooling of the voxel grid.

use super::{GranularitySpec, INPUT_SCALE};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2};
use crate::scene::VoxelGrid;

/// Block means of an `[h, w, c]` array over `factor × factor` cells; edge
/// blocks average over the cells that exist.
pub fn average_pool(data: &[f64], h: usize, w: usize, c: usize, factor: usize) -> (Vec<f64>, usize, usize) {
    assert_eq!(data.len(), h * w * c, "average_pool input shape");
    assert!(factor > 0, "pool factor must be positive");
    let (ph, pw) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = vec![0.0; ph * pw * c];
    for br in 0..ph {
        for bc in 0..pw {
            let dst = &mut out[(br * pw + bc) * c..(br * pw + bc + 1) * c];
            let rows = br * factor..((br + 1) * factor).min(h);
            let cols = bc * factor..((bc + 1) * factor).min(w);
            let n = (rows.len() * cols.len()) as f64;
            for r in rows {
                for cc in cols.clone() {
                    let src = &data[(r * w + cc) * c..(r * w + cc + 1) * c];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            dst.iter_mut().for_each(|d| *d /= n);
        }
    }
    (out, ph, pw)
}

/// Pooled voxel tokens of one granularity, world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledVoxels {
    pub cell_size: f64,
    pub channels: usize,
    /// Offset of the `(x, y, z)` position channels within a feature row.
    pub position_offset: usize,
    pub centers: Vec<Point2>,
    pub features: Vec<f64>,
}

impl PooledVoxels {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Feature row of token `i` with its planar position channels replaced
    /// by the analytic block center in the frame of `pose`.
    pub fn features_in(&self, i: usize, pose: &Pose2, out: &mut Vec<f64>) {
        let row = &self.features[i * self.channels..(i + 1) * self.channels];
        let start = out.len();
        out.extend_from_slice(row);
        let q = pose.to_local(self.centers[i]);
        let o = start + self.position_offset;
        out[o] = q[0] * INPUT_SCALE;
        out[o + 1] = q[1] * INPUT_SCALE;
        out[o + 2] *= INPUT_SCALE;
    }
}

fn pool_factor(level: f64, cell: f64) -> Result<usize> {
    let f = level / cell;
    let r = f.round();
    if r < 1.0 || (f - r).abs() > 1e-6 {
        return Err(Error::config(format!(
            "voxel level {level} m is not a positive multiple of the {cell} m grid"
        )));
    }
    Ok(r as usize)
}

/// Averages every depth column, then pools spatially at each voxel level.
pub fn pool_voxels(grid: &VoxelGrid, spec: &GranularitySpec) -> Result<Vec<PooledVoxels>> {
    let c = grid.channels();
    let (h, w) = (grid.height, grid.width);
    let mut column = vec![0.0; h * w * c];
    for d in 0..grid.depth {
        for r in 0..h {
            for cc in 0..w {
                let src = grid.voxel(d, r, cc);
                let dst = &mut column[(r * w + cc) * c..(r * w + cc + 1) * c];
                dst.iter_mut().zip(src).for_each(|(x, s)| *x += *s as f64);
            }
        }
    }
    let depth = grid.depth as f64;
    column.iter_mut().for_each(|x| *x /= depth);

    spec.voxel_levels
        .iter()
        .map(|&level| {
            let f = pool_factor(level, grid.cell_size)?;
            let (features, ph, pw) = average_pool(&column, h, w, c, f);
            let mut centers = Vec::with_capacity(ph * pw);
            for br in 0..ph {
                for bc in 0..pw {
                    let r1 = ((br + 1) * f).min(h) as f64;
                    let c1 = ((bc + 1) * f).min(w) as f64;
                    centers.push(grid.block_center((br * f) as f64, r1, (bc * f) as f64, c1));
                }
            }
            Ok(PooledVoxels {
                cell_size: level,
                channels: c,
                position_offset: grid.feature_channels + grid.semantic_classes,
                centers,
                features,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_grid_pools_to_constant() {
        let data = vec![0.25; 6 * 6 * 3];
        let (out, ph, pw) = average_pool(&data, 6, 6, 3, 4);
        assert_eq!((ph, pw), (2, 2));
        assert!(out.iter().all(|x| (*x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn pooling_composes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..8 * 8 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, h, w) = average_pool(&data, 8, 8, 2, 2);
        let (b, _, _) = average_pool(&a, h, w, 2, 2);
        let (c, _, _) = average_pool(&data, 8, 8, 2, 4);
        for (x, y) in b.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn four_by_four_block_means() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (out, _, _) = average_pool(&data, 4, 4, 1, 2);
        for br in 0..2 {
            for bc in 0..2 {
                let mut s = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s += data[(2 * br + r) * 4 + 2 * bc + c];
                    }
                }
                assert!((out[br * 2 + bc] - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn partial_edge_blocks() {
        let data: Vec<f64> = (0..5).map(|x| x as f64).collect();
        let (out, ph, pw) = average_pool(&data, 1, 5, 1, 2);
        assert_eq!((ph, pw), (1, 3));
        assert_eq!(out, vec![0.5, 2.5, 4.0]);
    }

    #[test]
    fn level_must_be_grid_multiple() {
        assert_eq!(pool_factor(1.6, 0.8).unwrap(), 2);
        assert!(pool_factor(1.0, 0.8).is_err());
    }
}
