//! The feature network shared by all instances.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{invalid, Result};
use crate::numerics::{ensure_shape, Matrix};

/// Weighted undirected graph over `m` feature nodes.
///
/// Duplicate edges are merged by summing their weights; self-loops and
/// negative weights are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStructure {
    node_count: usize,
    /// Merged edges with `u < v`, sorted.
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkStructure {
    pub fn new(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if node_count == 0 {
            return Err(invalid("network must have at least one node"));
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, w) in edges {
            if u >= node_count || v >= node_count {
                return Err(invalid(format!("edge ({u}, {v}) has a node outside [0, {node_count})")));
            }
            if u == v {
                return Err(invalid(format!("self-loop on node {u}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(format!("edge ({u}, {v}) has invalid weight {w}")));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        let mut neighbors = vec![Vec::new(); node_count];
        for (&(u, v), &w) in &merged {
            if w > 0.0 {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(NetworkStructure {
            node_count,
            edges: merged.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors joined by a positive-weight edge, ascending.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Symmetric weighted adjacency with zero diagonal.
    pub fn adjacency(&self) -> Matrix {
        let mut m = Matrix::zeros(self.node_count, self.node_count);
        for &(u, v, w) in &self.edges {
            m[(u, v)] = w;
            m[(v, u)] = w;
        }
        m
    }

    pub fn laplacian(&self) -> Laplacian {
        build_laplacian(self)
    }
}

/// Graph Laplacian `L = D − M` with `D` the weighted degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(Matrix);

impl Laplacian {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

pub fn build_laplacian(net: &NetworkStructure) -> Laplacian {
    let mut l = Matrix::zeros(net.node_count, net.node_count);
    for &(u, v, w) in &net.edges {
        l[(u, v)] -= w;
        l[(v, u)] -= w;
        l[(u, u)] += w;
        l[(v, v)] += w;
    }
    Laplacian(l)
}

/// `Tr(PᵀLP)`, the smoothness of the rows of `P` over the graph.
pub fn dirichlet_energy(p: &Matrix, l: &Laplacian) -> Result<f64> {
    ensure_shape(p, l.dim(), p.ncols(), "selector")?;
    let lp = l.matrix() * p;
    Ok(lp.iter().zip(p.iter()).map(|(a, b)| a * b).sum())
}

/// Maximal connected components of the subgraph induced by `nodes`.
///
/// Components are sorted by size (largest first, ties by smallest member),
/// and each component lists its nodes in ascending order.
pub fn connected_components(net: &NetworkStructure, nodes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut member = vec![false; net.node_count];
    for &v in nodes {
        if v >= net.node_count {
            return Err(invalid(format!("node {v} outside [0, {})", net.node_count)));
        }
        member[v] = true;
    }
    let mut seen = vec![false; net.node_count];
    let mut components = Vec::new();
    let mut sorted: Vec<usize> = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &start in &sorted {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in net.neighbors(u) {
                if member[v] && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(components)
}
