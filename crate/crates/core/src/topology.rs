//! Transmission and communication graphs.
//!
//! A [`Graph`] is a connected multigraph whose edges carry a fixed orientation
//! `(positive_end, negative_end)`. Indices are 0-based; the scenario loader is
//! the only place that converts from the 1-based indices used in files.

use nalgebra::DMatrix;

use crate::error::{Error, Result, ValidationError};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Option<Vec<String>>,
    edge_labels: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph from 0-based `(positive_end, negative_end)` pairs.
    ///
    /// Rejects self-loops, out-of-range endpoints and disconnected graphs.
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut errors = Vec::new();
        if node_count == 0 {
            errors.push(ValidationError::new("nodes", "graph needs at least one node"));
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a >= node_count || b >= node_count {
                errors.push(ValidationError::new(
                    format!("edges[{k}]"),
                    format!("endpoint out of range for {node_count} nodes"),
                ));
            } else if a == b {
                errors.push(ValidationError::new(
                    format!("edges[{k}]"),
                    "self-loops are not allowed",
                ));
            }
        }
        if !errors.is_empty() {
            return Err(Error::Invalid(errors));
        }
        let graph = Self {
            node_count,
            edges,
            node_labels: None,
            edge_labels: None,
        };
        if !graph.is_connected() {
            return Err(Error::invalid("edges", "graph must be connected"));
        }
        Ok(graph)
    }

    pub fn with_labels(mut self, node_labels: Option<Vec<String>>, edge_labels: Option<Vec<String>>) -> Result<Self> {
        if let Some(labels) = &node_labels {
            if labels.len() != self.node_count {
                return Err(Error::dimension("node labels", self.node_count, labels.len()));
            }
        }
        if let Some(labels) = &edge_labels {
            if labels.len() != self.edges.len() {
                return Err(Error::dimension("edge labels", self.edges.len(), labels.len()));
            }
        }
        self.node_labels = node_labels;
        self.edge_labels = edge_labels;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_labels(&self) -> Option<&[String]> {
        self.node_labels.as_deref()
    }

    pub fn edge_labels(&self) -> Option<&[String]> {
        self.edge_labels.as_deref()
    }

    /// Same graph with edge `k` reversed.
    pub fn with_edge_flipped(&self, k: usize) -> Self {
        let mut g = self.clone();
        let (a, b) = g.edges[k];
        g.edges[k] = (b, a);
        g
    }

    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.node_count, self.edges.len());
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            d[(a, k)] = 1.0;
            d[(b, k)] = -1.0;
        }
        d
    }

    /// `out = D y` for edge values `y`.
    pub fn incidence_mul(&self, edge_values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&(a, b), &y) in self.edges.iter().zip(edge_values) {
            out[a] += y;
            out[b] -= y;
        }
    }

    /// `out = Dᵀ x` for node values `x`.
    pub fn incidence_t_mul(&self, node_values: &[f64], out: &mut [f64]) {
        for (o, &(a, b)) in out.iter_mut().zip(&self.edges) {
            *o = node_values[a] - node_values[b];
        }
    }

    pub fn incidence_apply(&self, edge_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count];
        self.incidence_mul(edge_values, &mut out);
        out
    }

    pub fn incidence_t_apply(&self, node_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.edges.len()];
        self.incidence_t_mul(node_values, &mut out);
        out
    }

    /// Edge indices incident to `node`, with the node's sign in the incidence matrix.
    pub fn incident_edges(&self, node: usize) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        self.edges.iter().enumerate().filter_map(move |(k, &(a, b))| {
            if a == node {
                Some((k, 1.0, b))
            } else if b == node {
                Some((k, -1.0, a))
            } else {
                None
            }
        })
    }

    pub fn is_acyclic(&self) -> bool {
        let mut uf = UnionFind::new(self.node_count);
        self.edges.iter().all(|&(a, b)| uf.union(a, b))
    }

    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.node_count);
        for &(a, b) in &self.edges {
            uf.union(a, b);
        }
        uf.components == 1
    }

    /// Fundamental cycle basis of `ker D`, one column per non-tree edge.
    ///
    /// Each column is a signed ±1/0 cycle indicator, so `D * column = 0`
    /// exactly.
    pub fn cycle_basis(&self) -> DMatrix<f64> {
        let n = self.node_count;
        let m = self.edges.len();
        // Spanning tree by BFS from node 0, tracking parent edge and orientation.
        let mut parent: Vec<Option<(usize, usize, f64)>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut in_tree = vec![false; m];
        let mut queue = std::collections::VecDeque::new();
        visited[0] = true;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for (k, sign, w) in self.incident_edges(u) {
                if !visited[w] {
                    visited[w] = true;
                    in_tree[k] = true;
                    // Walking from w up to u along edge k: the flow direction
                    // w -> u matches edge orientation iff w is the positive end.
                    parent[w] = Some((u, k, -sign));
                    queue.push_back(w);
                }
            }
        }
        let path_to_root = |mut node: usize| {
            let mut path = Vec::new();
            while let Some((up, k, sign)) = parent[node] {
                path.push((k, sign));
                node = up;
            }
            path
        };
        let mut columns = Vec::new();
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if in_tree[k] {
                continue;
            }
            // Cycle: traverse edge k from a to b, then b -> root, then root -> a.
            let mut c = nalgebra::DVector::zeros(m);
            c[k] += 1.0;
            for (e, s) in path_to_root(b) {
                c[e] += s;
            }
            for (e, s) in path_to_root(a) {
                c[e] -= s;
            }
            columns.push(c);
        }
        if columns.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&columns)
        }
    }
}

/// Incidence matrix of `g`; entry `(i, k)` is +1 at the positive end of edge
/// `k`, −1 at its negative end.
pub fn incidence_matrix(g: &Graph) -> DMatrix<f64> {
    g.incidence_matrix()
}

pub fn is_acyclic(g: &Graph) -> bool {
    g.is_acyclic()
}

/// True iff `D v = 0` forces `v = 0`, i.e. the columns of `D` are independent.
pub fn kernel_dimension_check(d: &DMatrix<f64>) -> bool {
    linalg::rank(d, 1e-10) == d.ncols()
}

struct UnionFind {
    parent: Vec<usize>,
    components: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            components: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        self.components -= 1;
        true
    }
}
