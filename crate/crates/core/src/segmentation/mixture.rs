use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    log_sum_exp, LabelField, MixtureParams, DEFAULT_BETA, DEFAULT_K, DEFAULT_MAX_ITER,
    DEFAULT_TOL, VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::superpixel::{AdjacencyGraph, SuperPixelFeatures};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub k: usize,
    pub beta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            beta: DEFAULT_BETA,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: MixtureParams,
    /// Posteriors under the final parameters; labels are their argmax.
    pub labels: LabelField,
    /// Observed-data log-likelihood `sum_s ln sum_k pi_k N_k(x_s)` of the
    /// parameters entering each iteration, plus the final parameters.
    pub log_likelihood: Vec<f64>,
    /// Mean-field objective after each E-step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_features(features: &SuperPixelFeatures, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be >= 1".into()));
    }
    if features.len() < k {
        return Err(Error::TooFewCells {
            needed: k,
            got: features.len(),
        });
    }
    if let Some(i) = features.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature {
            cell: i / features.dim().max(1),
            dim: i % features.dim().max(1),
        });
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Candidates drawn per seeding step.
const SEEDING_CANDIDATES: usize = 8;

/// Greedy k-means++ seeding: a uniformly random first mean, then at each step
/// several cells are drawn with probability proportional to their squared
/// distance from the nearest chosen mean, and the one that lowers the total
/// potential most is kept. Plain farthest-point selection latches onto single
/// outlier cells (image corners, boundary columns), which EM then never
/// leaves. Variances start at the global per-dimension variance and priors
/// are uniform.
pub fn init_params(features: &SuperPixelFeatures, k: usize, seed: u64) -> Result<MixtureParams> {
    check_features(features, k)?;
    let n = features.len();
    let d = features.dim();
    let mut mean = vec![0.0; d];
    for s in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(s)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for s in 0..n {
        for ((acc, v), m) in var.iter_mut().zip(features.row(s)).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let var: Vec<f64> = var.iter().map(|v| (v / n as f64).max(VARIANCE_FLOOR)).collect();

    let means = if k == 1 {
        vec![mean]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = vec![rng.gen_range(0..n)];
        let mut nearest: Vec<f64> = (0..n)
            .map(|s| sq_dist(features.row(s), features.row(chosen[0])))
            .collect();
        while chosen.len() < k {
            let total: f64 = nearest.iter().sum();
            let mut best: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..SEEDING_CANDIDATES {
                let cand = if total > 0.0 {
                    let mut r = rng.gen::<f64>() * total;
                    let mut pick = n - 1;
                    for (s, d2) in nearest.iter().enumerate() {
                        if r < *d2 {
                            pick = s;
                            break;
                        }
                        r -= d2;
                    }
                    pick
                } else {
                    rng.gen_range(0..n)
                };
                let updated: Vec<f64> = nearest
                    .iter()
                    .enumerate()
                    .map(|(s, d2)| d2.min(sq_dist(features.row(s), features.row(cand))))
                    .collect();
                let potential: f64 = updated.iter().sum();
                if best.as_ref().map_or(true, |(p, _, _)| potential < *p) {
                    best = Some((potential, cand, updated));
                }
            }
            let (_, cand, updated) = best.expect("at least one candidate");
            chosen.push(cand);
            nearest = updated;
        }
        chosen.iter().map(|&s| features.row(s).to_vec()).collect()
    };
    MixtureParams::new(vec![1.0 / k as f64; k], means, vec![var; k])
}

/// Unary terms `ln pi_k + ln N_k(x_s)`, row-major `cells x k`.
fn unary_terms(params: &MixtureParams, features: &SuperPixelFeatures) -> Vec<f64> {
    let k = params.k();
    let mut out = Vec::with_capacity(features.len() * k);
    for s in 0..features.len() {
        let x = features.row(s);
        out.extend((0..k).map(|c| params.priors()[c].ln() + params.log_density(c, x)));
    }
    out
}

/// Softmax of `unary + beta * sum_nbr w * gamma_prev`, per cell.
fn e_step(
    unary: &[f64],
    k: usize,
    graph: Option<&AdjacencyGraph>,
    beta: f64,
    previous: Option<&[f64]>,
) -> Vec<f64> {
    let mut gamma = unary.to_vec();
    for (s, logits) in gamma.chunks_exact_mut(k).enumerate() {
        if let (Some(g), Some(prev)) = (graph, previous) {
            if beta > 0.0 {
                for &(nb, w) in g.neighbors(s) {
                    for (l, p) in logits.iter_mut().zip(&prev[nb * k..(nb + 1) * k]) {
                        *l += beta * w * p;
                    }
                }
            }
        }
        let z = log_sum_exp(logits);
        logits.iter_mut().for_each(|l| *l = (*l - z).exp());
    }
    gamma
}

fn log_likelihood(unary: &[f64], k: usize) -> f64 {
    unary.chunks_exact(k).map(log_sum_exp).sum()
}

/// Expected complete-data log-likelihood plus posterior entropy plus the
/// expected pairwise reward. Equals the log-likelihood at `beta = 0`.
fn mean_field_objective(
    unary: &[f64],
    gamma: &[f64],
    k: usize,
    graph: Option<&AdjacencyGraph>,
    beta: f64,
) -> f64 {
    let mut obj = 0.0;
    for (u, g) in unary.iter().zip(gamma) {
        if *g > 0.0 {
            obj += g * (u - g.ln());
        }
    }
    if let Some(graph) = graph {
        if beta > 0.0 {
            for e in graph.edges() {
                let a = &gamma[e.a * k..(e.a + 1) * k];
                let b = &gamma[e.b * k..(e.b + 1) * k];
                obj += beta * e.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    obj
}

fn m_step(features: &SuperPixelFeatures, gamma: &[f64], previous: &MixtureParams) -> MixtureParams {
    let k = previous.k();
    let n = features.len();
    let d = features.dim();
    let mut weight = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for s in 0..n {
        let x = features.row(s);
        for c in 0..k {
            let g = gamma[s * k + c];
            // Converged posteriors underflow to subnormals, which contribute
            // nothing but make every multiply take the slow path.
            if g < f64::MIN_POSITIVE {
                continue;
            }
            weight[c] += g;
            for (m, v) in means[c].iter_mut().zip(x) {
                *m += g * v;
            }
        }
    }
    let mut variances = vec![vec![0.0; d]; k];
    for c in 0..k {
        if weight[c] > 1e-10 {
            means[c].iter_mut().for_each(|m| *m /= weight[c]);
        } else {
            means[c] = previous.means()[c].clone();
        }
    }
    for s in 0..n {
        let x = features.row(s);
        for c in 0..k {
            let g = gamma[s * k + c];
            if g < f64::MIN_POSITIVE {
                continue;
            }
            for ((acc, v), m) in variances[c].iter_mut().zip(x).zip(&means[c]) {
                *acc += g * (v - m) * (v - m);
            }
        }
    }
    for c in 0..k {
        if weight[c] > 1e-10 {
            for v in variances[c].iter_mut() {
                *v = (*v / weight[c]).max(VARIANCE_FLOOR);
            }
        } else {
            variances[c] = previous.variances()[c].clone();
        }
    }
    let floor = 1e-12;
    let mut priors: Vec<f64> = weight.iter().map(|w| (w / n as f64).max(floor)).collect();
    let total: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= total);
    MixtureParams::assemble(priors, means, variances)
}

/// Fits the mixture by mean-field EM.
///
/// The E-step adds `beta * sum_nbr w(s, s') gamma_{s', k}` from the previous
/// iteration's posteriors to each cell's log-odds; with `beta = 0` (or no
/// graph) this is plain diagonal GMM-EM. Iteration stops once the relative
/// change of the mean-field objective falls below `tol`.
pub fn em_fit(
    features: &SuperPixelFeatures,
    graph: Option<&AdjacencyGraph>,
    opts: &EmOptions,
) -> Result<EmFit> {
    check_features(features, opts.k)?;
    if !(opts.beta >= 0.0) {
        return Err(Error::InvalidParams(format!("beta must be >= 0, got {}", opts.beta)));
    }
    if let Some(g) = graph {
        if g.cells() != features.len() {
            return Err(Error::InvalidParams(format!(
                "graph has {} cells, features have {}",
                g.cells(),
                features.len()
            )));
        }
    }
    let k = opts.k;
    let mut params = init_params(features, k, opts.seed)?;
    let mut gamma: Option<Vec<f64>> = None;
    let mut log_lik = Vec::new();
    let mut objective: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let unary = unary_terms(&params, features);
        log_lik.push(log_likelihood(&unary, k));
        let g = e_step(&unary, k, graph, opts.beta, gamma.as_deref());
        let obj = mean_field_objective(&unary, &g, k, graph, opts.beta);
        params = m_step(features, &g, &params);
        gamma = Some(g);
        iterations += 1;
        if let Some(&prev) = objective.last() {
            let change = (obj - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            objective.push(obj);
            if change < opts.tol {
                converged = true;
                break;
            }
        } else {
            objective.push(obj);
        }
    }

    let unary = unary_terms(&params, features);
    log_lik.push(log_likelihood(&unary, k));
    let posteriors = e_step(&unary, k, graph, opts.beta, gamma.as_deref());
    Ok(EmFit {
        params,
        labels: LabelField::from_posteriors(k, posteriors),
        log_likelihood: log_lik,
        objective,
        iterations,
        converged,
    })
}

/// Picks the component count minimizing BIC over `k_range`, fitting each
/// candidate without the spatial term. Ties go to the smaller `k`.
pub fn select_k(
    features: &SuperPixelFeatures,
    k_range: impl IntoIterator<Item = usize>,
    seed: u64,
) -> Result<usize> {
    let n = features.len() as f64;
    let d = features.dim() as f64;
    let mut best: Option<(usize, f64)> = None;
    for k in k_range {
        let opts = EmOptions {
            k,
            beta: 0.0,
            seed,
            ..EmOptions::default()
        };
        let fit = em_fit(features, None, &opts)?;
        let ll = *fit.log_likelihood.last().expect("at least one evaluation");
        let free = (k as f64 - 1.0) + 2.0 * k as f64 * d;
        let bic = -2.0 * ll + free * n.ln();
        log::debug!("select_k: k={k} loglik={ll:.3} bic={bic:.3}");
        if best.map_or(true, |(_, b)| bic < b) {
            best = Some((k, bic));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidParams("empty k range".into()))
}
