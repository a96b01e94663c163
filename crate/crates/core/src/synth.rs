//! Synthetic benchmark: a random geometric graph, a planted connected
//! ground-truth subgraph whose values carry a hidden binary label, Gaussian
//! noise on every node, and optional outlier instances.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::graph::{connected_components, NetworkStructure};
use crate::numerics::Matrix;

/// Value range of ground-truth nodes in positive instances; negatives use
/// the mirrored range.
pub const GT_RANGE: (f64, f64) = (50.0, 100.0);
/// Noise means for ground-truth and non-ground-truth nodes.
pub const GT_NOISE_MEAN: f64 = 10.0;
pub const BACKGROUND_NOISE_MEAN: f64 = 70.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    pub tau: f64,
    pub n: usize,
    pub gt_size: usize,
    pub noise_sigma: f64,
    pub n_outliers: usize,
    /// Attach the larger noise mean to ground-truth nodes instead.
    pub swap_noise_means: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 100,
            tau: 0.2,
            n: 400,
            gt_size: 10,
            noise_sigma: 1.0,
            n_outliers: 0,
            swap_noise_means: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(invalid(format!("m = {} must be at least 2", self.m)));
        }
        if !(self.tau > 0.0 && self.tau < std::f64::consts::SQRT_2) {
            return Err(invalid(format!("tau = {} must lie in (0, sqrt 2)", self.tau)));
        }
        if self.n < 2 {
            return Err(invalid(format!("n = {} must be at least 2", self.n)));
        }
        if self.gt_size == 0 || self.gt_size >= self.m {
            return Err(invalid(format!("gt_size = {} must lie in [1, m)", self.gt_size)));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(invalid(format!("noise_sigma = {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }

    fn noise_means(&self) -> (f64, f64) {
        if self.swap_noise_means {
            (BACKGROUND_NOISE_MEAN, GT_NOISE_MEAN)
        } else {
            (GT_NOISE_MEAN, BACKGROUND_NOISE_MEAN)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// n×m values, one instance per row.
    pub x: Matrix,
    pub net: NetworkStructure,
    /// `Some(true)` positive, `Some(false)` negative, `None` for outliers.
    pub labels: Vec<Option<bool>>,
    /// Ground-truth nodes, ascending.
    pub gt_nodes: Vec<usize>,
    pub outlier_flags: Vec<bool>,
}

impl SynthDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

// Independent RNG streams per stage so that, e.g., changing n does not
// move the graph.
const STREAM_GRAPH: u64 = 1;
const STREAM_GT: u64 = 2;
const STREAM_VALUES: u64 = 3;
const STREAM_OUTLIERS: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Points uniform in the unit square; an edge joins every pair closer than
/// `tau`. All weights are 1.
pub fn gen_geometric_graph(m: usize, tau: f64, seed: u64) -> Result<NetworkStructure> {
    if m < 2 {
        return Err(invalid("geometric graph needs at least 2 nodes"));
    }
    let mut rng = stream(seed, STREAM_GRAPH);
    let pts: Vec<(f64, f64)> = (0..m).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut edges = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
            if (dx * dx + dy * dy).sqrt() < tau {
                edges.push((a, b, 1.0));
            }
        }
    }
    NetworkStructure::new(m, &edges)
}

/// The first `size` nodes reached by breadth-first search from `start`,
/// visiting neighbors in ascending order.
pub fn bfs_ball(net: &NetworkStructure, start: usize, size: usize) -> Result<Vec<usize>> {
    if start >= net.node_count() {
        return Err(invalid(format!("start node {start} out of range")));
    }
    let mut seen = vec![false; net.node_count()];
    let mut out = Vec::with_capacity(size);
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        if out.len() == size {
            break;
        }
        out.push(u);
        for &v in net.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if out.len() < size {
        return Err(Error::Generation(format!(
            "component of node {start} has {} nodes, fewer than {size}",
            out.len()
        )));
    }
    out.sort_unstable();
    Ok(out)
}

/// A connected set of exactly `gt_size` nodes: a BFS ball around a random
/// node of the largest component.
pub fn pick_gt_subgraph(net: &NetworkStructure, gt_size: usize, seed: u64) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..net.node_count()).collect();
    let comps = connected_components(net, &all)?;
    let largest = &comps[0];
    if largest.len() < gt_size {
        return Err(Error::Generation(format!(
            "largest component has {} nodes, need {gt_size}",
            largest.len()
        )));
    }
    let mut rng = stream(seed, STREAM_GT);
    let start = largest[rng.random_range(0..largest.len())];
    bfs_ball(net, start, gt_size)
}

/// Balanced labelled instances. Ground-truth nodes get a base value drawn
/// from `[50, 100]` (positive) or `[-100, -50]` (negative); every node then
/// receives Gaussian noise whose mean depends on whether it is a
/// ground-truth node.
pub fn gen_instances(net: &NetworkStructure, gt_nodes: &[usize], config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let m = net.node_count();
    if m != config.m {
        return Err(invalid(format!("network has {m} nodes, config says {}", config.m)));
    }
    let mut is_gt = vec![false; m];
    for &g in gt_nodes {
        if g >= m {
            return Err(invalid(format!("ground-truth node {g} out of range")));
        }
        is_gt[g] = true;
    }
    let n = config.n;
    let mut rng = stream(config.seed, STREAM_VALUES);
    let mut labels: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    labels.shuffle(&mut rng);

    let (gt_mean, bg_mean) = config.noise_means();
    let gt_noise = Normal::new(gt_mean, config.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let bg_noise = Normal::new(bg_mean, config.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let (lo, hi) = GT_RANGE;
    let mut x = Matrix::zeros(n, m);
    for (i, &positive) in labels.iter().enumerate() {
        for j in 0..m {
            x[(i, j)] = if is_gt[j] {
                let base = rng.random_range(lo..=hi);
                let base = if positive { base } else { -base };
                base + gt_noise.sample(&mut rng)
            } else {
                bg_noise.sample(&mut rng)
            };
        }
    }
    let mut gt: Vec<usize> = gt_nodes.to_vec();
    gt.sort_unstable();
    gt.dedup();
    Ok(SynthDataset {
        x,
        net: net.clone(),
        labels: labels.into_iter().map(Some).collect(),
        gt_nodes: gt,
        outlier_flags: vec![false; n],
    })
}

/// Appends `n_outliers` rows of i.i.d. Gaussian values matching the global
/// mean and standard deviation of the existing non-outlier entries.
pub fn inject_outliers(ds: &SynthDataset, n_outliers: usize, seed: u64) -> Result<SynthDataset> {
    if n_outliers == 0 {
        return Ok(ds.clone());
    }
    let m = ds.x.ncols();
    let normal_rows: Vec<usize> = (0..ds.n()).filter(|&i| !ds.outlier_flags[i]).collect();
    if normal_rows.is_empty() {
        return Err(invalid("no non-outlier instances to match"));
    }
    let count = (normal_rows.len() * m) as f64;
    let mean = normal_rows.iter().map(|&i| ds.x.row(i).sum()).sum::<f64>() / count;
    let var = normal_rows
        .iter()
        .map(|&i| ds.x.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
        .sum::<f64>()
        / count;
    let dist = Normal::new(mean, var.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = stream(seed, STREAM_OUTLIERS);

    let n0 = ds.n();
    let mut x = ds.x.clone().resize_vertically(n0 + n_outliers, 0.0);
    for i in n0..n0 + n_outliers {
        for j in 0..m {
            x[(i, j)] = dist.sample(&mut rng);
        }
    }
    let mut labels = ds.labels.clone();
    labels.extend(std::iter::repeat_n(None, n_outliers));
    let mut flags = ds.outlier_flags.clone();
    flags.extend(std::iter::repeat_n(true, n_outliers));
    Ok(SynthDataset { x, net: ds.net.clone(), labels, gt_nodes: ds.gt_nodes.clone(), outlier_flags: flags })
}

/// Full pipeline: graph, ground truth, instances, outliers.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let net = gen_geometric_graph(config.m, config.tau, config.seed)?;
    let gt = pick_gt_subgraph(&net, config.gt_size, config.seed)?;
    let ds = gen_instances(&net, &gt, config)?;
    inject_outliers(&ds, config.n_outliers, config.seed)
}
