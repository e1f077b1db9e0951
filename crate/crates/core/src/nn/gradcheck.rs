//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use crate::error::Result;

/// One evaluation of a scalar loss at some parameter point.
pub struct LossEval {
    pub loss: f64,
    /// Analytic gradient; only required at the base point.
    pub grads: Option<ParamSet<f64>>,
    /// Sign pattern of every piecewise-linear unit. A probe that changes
    /// it straddles a kink and is skipped.
    pub kinks: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all of them when smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, coords_per_tensor: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `eval(params).grads` against central differences on a random
/// subsample of coordinates of every tensor.
pub fn grad_check<L>(params: &ParamSet<f64>, eval: L, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    L: Fn(&ParamSet<f64>, bool) -> Result<LossEval>,
{
    let base = eval(params, true)?;
    let analytic = base
        .grads
        .ok_or_else(|| crate::SrhError::Contract("loss evaluation returned no gradient".into()))?;
    params.check_same_layout(&analytic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(params.tensors.len());
    for (ti, t) in params.tensors.iter().enumerate() {
        let n = t.data.len();
        let picks = sample(&mut rng, n, opts.coords_per_tensor.min(n));
        let mut report = TensorReport { name: t.spec.name.clone(), checked: 0, skipped_kinks: 0, max_rel_error: 0.0 };
        for i in picks.iter() {
            let orig = t.data[i];
            probe.tensors[ti].data[i] = orig + opts.step;
            let plus = eval(&probe, false)?;
            probe.tensors[ti].data[i] = orig - opts.step;
            let minus = eval(&probe, false)?;
            probe.tensors[ti].data[i] = orig;
            if plus.kinks != base.kinks || minus.kinks != base.kinks {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.step);
            let err = relative_error(analytic.tensors[ti].data[i], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
        tensors.push(report);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, tensors })
}
