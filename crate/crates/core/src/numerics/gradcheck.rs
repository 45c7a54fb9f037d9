use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Parameters;

/// One scalar evaluation for the checker.
///
/// `pattern` identifies the linear piece the evaluation landed on (for
/// example a hash of ReLU on/off states). Coordinates whose perturbed
/// evaluations change the pattern straddle a kink and are skipped.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub loss: f64,
    pub pattern: u64,
}

impl From<f64> for Probe {
    fn from(loss: f64) -> Self {
        Probe { loss, pattern: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub abs_floor: f64,
    /// Sample at most this many coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// (tensor, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// `(checked, max relative error)` for each tensor, in `Parameters` order.
    pub per_tensor: Vec<(usize, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }

    /// Merges the per-tensor results of `tensors` into `(checked, max relative error)`.
    pub fn summarize(&self, tensors: std::ops::Range<usize>) -> (usize, f64) {
        self.per_tensor[tensors]
            .iter()
            .fold((0, 0.0), |(n, m), &(c, e)| (n + c, f64::max(m, e)))
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn finite_diff_check<P, F, R>(
    params: &P,
    analytic: &P,
    mut loss: F,
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    P: Parameters + Clone,
    F: FnMut(&P) -> R,
    R: Into<Probe>,
{
    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let base = loss(params).into();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();

    report.per_tensor = vec![(0, 0.0); sizes.len()];
    for (t, &len) in sizes.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(m) if m < len => {
                let mut c = sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for k in coords {
            let orig = probe.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + cfg.eps;
            let plus = loss(&probe).into();
            probe.tensors_mut()[t][k] = orig - cfg.eps;
            let minus = loss(&probe).into();
            probe.tensors_mut()[t][k] = orig;

            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
            let a = grads[t][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            report.checked += 1;
            let entry = &mut report.per_tensor[t];
            entry.0 += 1;
            entry.1 = entry.1.max(rel);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((t, k, a, numeric));
                }
            }
        }
    }
    report
}
