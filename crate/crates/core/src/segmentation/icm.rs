use super::{argmax, LabelField, MixtureParams};
use crate::error::{Error, Result};
use crate::superpixel::{AdjacencyGraph, SuperPixelFeatures};

#[derive(Debug, Clone)]
pub struct IcmResult {
    pub labels: LabelField,
    pub sweeps: usize,
    /// Objective of the final labeling, see [`labeling_objective`].
    pub objective: f64,
    /// Whether the last sweep changed nothing.
    pub converged: bool,
}

fn check(params: &MixtureParams, features: &SuperPixelFeatures, graph: &AdjacencyGraph) -> Result<()> {
    if params.dim() != features.dim() {
        return Err(Error::InvalidParams(format!(
            "parameters have dimension {}, features {}",
            params.dim(),
            features.dim()
        )));
    }
    if graph.cells() != features.len() {
        return Err(Error::InvalidParams(format!(
            "graph has {} cells, features have {}",
            graph.cells(),
            features.len()
        )));
    }
    Ok(())
}

/// Log-score of a labeling: unary terms plus `beta * w` for every edge
/// whose endpoints agree.
pub fn labeling_objective(
    params: &MixtureParams,
    features: &SuperPixelFeatures,
    graph: &AdjacencyGraph,
    beta: f64,
    labels: &[usize],
) -> f64 {
    let unary: f64 = labels
        .iter()
        .enumerate()
        .map(|(s, &y)| params.priors()[y].ln() + params.log_density(y, features.row(s)))
        .sum();
    let pairwise: f64 = graph
        .edges()
        .iter()
        .filter(|e| labels[e.a] == labels[e.b])
        .map(|e| e.weight)
        .sum();
    unary + beta * pairwise
}

/// Iterated conditional modes over cells in raster order.
///
/// Starts from the argmax of `init`'s posteriors (or of the unary posteriors
/// when `init` is `None`). A cell moves only to a strictly better label, the
/// lowest index among equally good ones, so the objective never decreases.
pub fn map_labels(
    params: &MixtureParams,
    features: &SuperPixelFeatures,
    graph: &AdjacencyGraph,
    beta: f64,
    max_sweeps: usize,
    init: Option<&LabelField>,
) -> Result<IcmResult> {
    check(params, features, graph)?;
    let k = params.k();
    let n = features.len();
    let unary: Vec<Vec<f64>> = (0..n).map(|s| params.unary(features.row(s))).collect();

    let start = match init {
        Some(field) if field.len() == n && field.k() == k => field.clone(),
        Some(_) => return Err(Error::InvalidParams("initial labels do not match".into())),
        None => {
            let posteriors = unary
                .iter()
                .flat_map(|u| {
                    let z = super::log_sum_exp(u);
                    u.iter().map(move |v| (v - z).exp())
                })
                .collect();
            LabelField::from_posteriors(k, posteriors)
        }
    };
    let mut labels = start.labels().to_vec();

    let mut sweeps = 0;
    let mut converged = false;
    let mut scores = vec![0.0; k];
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = 0;
        for s in 0..n {
            scores.copy_from_slice(&unary[s]);
            for &(nb, w) in graph.neighbors(s) {
                scores[labels[nb]] += beta * w;
            }
            let best = argmax(&scores);
            if scores[best] > scores[labels[s]] {
                labels[s] = best;
                changed += 1;
            }
        }
        if changed == 0 {
            converged = true;
            break;
        }
    }
    let objective = labeling_objective(params, features, graph, beta, &labels);
    Ok(IcmResult {
        labels: start.with_labels(labels),
        sweeps,
        objective,
        converged,
    })
}
