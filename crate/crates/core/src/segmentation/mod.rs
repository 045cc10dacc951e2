//! Unsupervised super-pixel classification and segment extraction.
//!
//! Cells are modelled by a diagonal Gaussian mixture with a Potts spatial
//! prior: a labeling `y` scores
//!
//! ```text
//! sum_s [ln pi(y_s) + ln N(x_s | y_s)] + beta * sum_{(s,s')} w(s,s') [y_s == y_s']
//! ```
//!
//! Parameters are fitted by mean-field EM ([`em_fit`]), the labeling is
//! refined by iterated conditional modes ([`map_labels`]) and connected
//! same-label cells become segments ([`merge_segments`]).

mod icm;
mod merge;
mod mixture;

pub use icm::{labeling_objective, map_labels, IcmResult};
pub use merge::{merge_segments, Segment, SegmentSet, SegmentSummary};
pub use mixture::{em_fit, init_params, select_k, EmFit, EmOptions};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_SWEEPS: usize = 20;
pub const DEFAULT_PADDING: usize = 8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    // Derived: `ln pi_k - 0.5 * sum(ln 2 pi var)` and `1 / var`, so density
    // evaluation needs no logarithms.
    log_norm: Vec<f64>,
    precisions: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn new(priors: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = priors.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidParams("component counts disagree".into()));
        }
        let dim = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != dim) {
            return Err(Error::InvalidParams("dimension mismatch".into()));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 || priors.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParams("priors must be positive and sum to 1".into()));
        }
        if variances.iter().flatten().any(|&v| !(v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return Err(Error::InvalidParams(format!("variances must be >= {VARIANCE_FLOOR}")));
        }
        Ok(Self::assemble(priors, means, variances))
    }

    /// Builds params from already-validated parts.
    pub(crate) fn assemble(priors: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Self {
        let log_norm = variances
            .iter()
            .map(|var| -0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        let precisions = variances.iter().map(|var| var.iter().map(|v| 1.0 / v).collect()).collect();
        Self {
            priors,
            means,
            variances,
            log_norm,
            precisions,
        }
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// `ln N(x | mean_k, diag(var_k))`.
    pub fn log_density(&self, k: usize, x: &[f64]) -> f64 {
        // Four independent partial sums keep the loop off the add latency.
        let (mean, prec) = (&self.means[k], &self.precisions[k]);
        let mut lanes = [0.0; 4];
        let split = x.len() - x.len() % 4;
        for ((xs, ms), ps) in x[..split].chunks_exact(4).zip(mean.chunks_exact(4)).zip(prec.chunks_exact(4)) {
            for l in 0..4 {
                let d = xs[l] - ms[l];
                lanes[l] += d * d * ps[l];
            }
        }
        let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        for i in split..x.len() {
            let d = x[i] - mean[i];
            acc += d * d * prec[i];
        }
        self.log_norm[k] - 0.5 * acc
    }

    /// `ln pi_k + ln N_k(x)` for every component.
    pub fn unary(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| self.priors[k].ln() + self.log_density(k, x))
            .collect()
    }

    /// Reorders components so that new component `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::assemble(
            perm.iter().map(|&p| self.priors[p]).collect(),
            perm.iter().map(|&p| self.means[p].clone()).collect(),
            perm.iter().map(|&p| self.variances[p].clone()).collect(),
        )
    }
}

/// Per-cell labels with the posteriors they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    k: usize,
    labels: Vec<usize>,
    /// Row-major `cells x k`.
    posteriors: Vec<f64>,
}

impl LabelField {
    /// Labels are the posterior argmax, lowest index on ties.
    pub fn from_posteriors(k: usize, posteriors: Vec<f64>) -> Self {
        let labels = posteriors.chunks_exact(k).map(argmax).collect();
        Self {
            k,
            labels,
            posteriors,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn posterior(&self, cell: usize) -> &[f64] {
        &self.posteriors[cell * self.k..(cell + 1) * self.k]
    }

    pub(crate) fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = labels;
        self
    }
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
