//! Turning fitted selectors into rankings, outlier scores, connected
//! feature subgraphs and low-dimensional embeddings.

use crate::error::{invalid, Result};
use crate::graph::{connected_components, NetworkStructure};
use crate::numerics::{col_norms, ensure_shape, row_norms, sym_evd, Matrix};

/// Importance of each feature: the Euclidean norm of its row of `P`.
pub fn feature_scores(p: &Matrix) -> Vec<f64> {
    row_norms(p)
}

/// Importance of each instance: the Euclidean norm of its column of `Q`.
pub fn instance_scores(q: &Matrix) -> Vec<f64> {
    col_norms(q)
}

/// Inverted instance importance, `max(s) − s_j`. The least representative
/// instances score highest.
pub fn outlier_scores(instance_scores: &[f64]) -> Vec<f64> {
    let top = instance_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    instance_scores.iter().map(|s| top - s).collect()
}

/// How many items to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Count(usize),
    /// Fraction in (0, 1]; floors, keeping at least one item.
    Fraction(f64),
}

impl Budget {
    pub fn resolve(self, size: usize) -> Result<usize> {
        match self {
            Budget::Count(c) if c >= 1 && c <= size => Ok(c),
            Budget::Count(c) => Err(invalid(format!("budget {c} outside [1, {size}]"))),
            Budget::Fraction(f) if f > 0.0 && f <= 1.0 && size > 0 => {
                Ok(((f * size as f64).floor() as usize).max(1))
            }
            Budget::Fraction(f) => Err(invalid(format!("fraction {f} outside (0, 1] for {size} items"))),
        }
    }
}

impl std::str::FromStr for Budget {
    type Err = crate::Error;

    /// `"25"` is a count, `"0.25"` or `"25%"` a fraction.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(pct) = s.strip_suffix('%') {
            let v: f64 = pct.parse().map_err(|_| invalid(format!("bad percentage '{s}'")))?;
            return Ok(Budget::Fraction(v / 100.0));
        }
        if let Ok(c) = s.parse::<usize>() {
            return Ok(Budget::Count(c));
        }
        let v: f64 = s.parse().map_err(|_| invalid(format!("bad budget '{s}'")))?;
        Ok(Budget::Fraction(v))
    }
}

/// Indices of all items ordered by descending score, ties by ascending index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// The `budget` highest-scoring indices, best first.
pub fn select_top(scores: &[f64], budget: Budget) -> Result<Vec<usize>> {
    let count = budget.resolve(scores.len())?;
    let mut idx = rank(scores);
    idx.truncate(count);
    Ok(idx)
}

/// Connected components of the network restricted to the selected features.
pub fn selected_subgraph(net: &NetworkStructure, selected_features: &[usize]) -> Result<Vec<Vec<usize>>> {
    connected_components(net, selected_features)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub feature_scores: Vec<f64>,
    pub instance_scores: Vec<f64>,
    pub outlier_scores: Vec<f64>,
    pub selected_features: Vec<usize>,
    pub selected_instances: Vec<usize>,
    pub components: Vec<Vec<usize>>,
}

pub fn summarize(
    p: &Matrix,
    q: &Matrix,
    net: &NetworkStructure,
    feature_budget: Budget,
    instance_budget: Budget,
) -> Result<SelectionResult> {
    if p.nrows() != net.node_count() {
        return Err(invalid(format!("P has {} rows, network has {} nodes", p.nrows(), net.node_count())));
    }
    if p.ncols() != q.nrows() {
        return Err(invalid(format!("P is {}x{} but Q is {}x{}", p.nrows(), p.ncols(), q.nrows(), q.ncols())));
    }
    let feature_scores = feature_scores(p);
    let instance_scores = instance_scores(q);
    let selected_features = select_top(&feature_scores, feature_budget)?;
    let selected_instances = select_top(&instance_scores, instance_budget)?;
    let components = selected_subgraph(net, &selected_features)?;
    Ok(SelectionResult {
        outlier_scores: outlier_scores(&instance_scores),
        feature_scores,
        instance_scores,
        selected_features,
        selected_instances,
        components,
    })
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// n×d principal-component coordinates.
    pub coords: Matrix,
    /// Share of total variance carried by each returned component.
    pub variance_ratio: Vec<f64>,
}

/// PCA of the learned projection `XP`: the top `d` principal components of
/// its column-centered rows. Each component is oriented so that its
/// largest-magnitude loading is positive.
pub fn embed(x: &Matrix, p: &Matrix, d: usize) -> Result<Embedding> {
    ensure_shape(p, x.ncols(), p.ncols(), "P")?;
    let k = p.ncols();
    if d == 0 || d > k {
        return Err(invalid(format!("embedding dimension {d} outside [1, {k}]")));
    }
    let mut y = x * p;
    let n = y.nrows();
    for mut col in y.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = y.tr_mul(&y) / (n.max(2) - 1) as f64;
    let evd = sym_evd(&((&cov + cov.transpose()) * 0.5))?;
    let total: f64 = evd.values.iter().map(|v| v.max(0.0)).sum();
    let mut loadings = evd.vectors.columns(0, d).into_owned();
    for mut col in loadings.column_iter_mut() {
        let lead = col.iter().cloned().fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    let variance_ratio = (0..d)
        .map(|i| if total > 0.0 { evd.values[i].max(0.0) / total } else { 0.0 })
        .collect();
    Ok(Embedding { coords: y * loadings, variance_ratio })
}
