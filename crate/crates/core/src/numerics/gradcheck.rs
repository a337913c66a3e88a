//! Central finite-difference checks of analytic parameter gradients.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Outcome of checking one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// Largest relative error over the probed entries and the random
    /// direction probe.
    pub max_rel_error: f64,
    pub probes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Individual entries probed per tensor (all entries when the tensor is
    /// smaller); a random full-tensor direction is always probed as well.
    pub entries_per_param: usize,
    /// Absolute slack added to the denominator of the relative error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            entries_per_param: 8,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + floor)
}

/// Compares `analytic` (one tensor per parameter, store order) with central
/// differences of `loss`.
pub fn check_gradients<F>(
    store: &ParamStore,
    analytic: &[Tensor],
    mut loss: F,
    opts: GradCheckOptions,
) -> Vec<ParamCheck>
where
    F: FnMut(&ParamStore) -> f64,
{
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut out = Vec::with_capacity(store.len());
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for (id, grad) in ids.into_iter().zip(analytic) {
        let n = store.tensor(id).len();
        let mut entries: Vec<usize> = (0..n).collect();
        if n > opts.entries_per_param {
            for i in 0..opts.entries_per_param {
                let j = rng.random_range(i..n);
                entries.swap(i, j);
            }
            entries.truncate(opts.entries_per_param);
        }
        let mut worst = 0.0f64;
        for &e in &entries {
            let orig = store.tensor(id).data()[e];
            work.tensor_mut(id).data_mut()[e] = orig + opts.step;
            let plus = loss(&work);
            work.tensor_mut(id).data_mut()[e] = orig - opts.step;
            let minus = loss(&work);
            work.tensor_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(grad.data()[e], numeric, opts.abs_floor));
        }
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-300);
        let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
        let orig = store.tensor(id).data().to_vec();
        let shifted = |sign: f64| -> Vec<f64> {
            orig.iter()
                .zip(&dir)
                .map(|(o, d)| o + sign * opts.step * d)
                .collect()
        };
        work.tensor_mut(id).data_mut().copy_from_slice(&shifted(1.0));
        let plus = loss(&work);
        work.tensor_mut(id).data_mut().copy_from_slice(&shifted(-1.0));
        let minus = loss(&work);
        work.tensor_mut(id).data_mut().copy_from_slice(&orig);
        let numeric = (plus - minus) / (2.0 * opts.step);
        let directional: f64 = grad.data().iter().zip(&dir).map(|(g, d)| g * d).sum();
        worst = worst.max(relative_error(directional, numeric, opts.abs_floor));
        out.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: worst,
            probes: entries.len() + 1,
        });
    }
    out
}
