//! Undirected CSR graphs, homophily statistics and normalized propagation.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable undirected graph in compressed-sparse-row layout.
///
/// Every undirected edge is stored twice (once per endpoint). Neighbor lists
/// are sorted, duplicate-free and never contain the node itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    neighbor_ids: Vec<u32>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Edges are symmetrized,
    /// deduplicated and self-loops are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "graph with {num_nodes} nodes exceeds u32 node ids"
            )));
        }
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in edges {
            for index in [u, v] {
                if index >= num_nodes {
                    return Err(Error::NodeOutOfRange { index, num_nodes });
                }
            }
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }

        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        row_offsets.push(0);
        for d in &degree {
            row_offsets.push(row_offsets.last().unwrap() + d);
        }
        let mut cursor = row_offsets[..num_nodes].to_vec();
        let mut scratch = vec![0u32; *row_offsets.last().unwrap()];
        for &(u, v) in edges {
            if u == v {
                continue;
            }
            scratch[cursor[u]] = v as u32;
            cursor[u] += 1;
            scratch[cursor[v]] = u as u32;
            cursor[v] += 1;
        }

        // sort + dedup each row, then compact
        let mut neighbor_ids = Vec::with_capacity(scratch.len());
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for node in 0..num_nodes {
            let row = &mut scratch[row_offsets[node]..row_offsets[node + 1]];
            row.sort_unstable();
            let start = neighbor_ids.len();
            for &n in row.iter() {
                if neighbor_ids.len() == start || *neighbor_ids.last().unwrap() != n {
                    neighbor_ids.push(n);
                }
            }
            offsets.push(neighbor_ids.len());
        }
        neighbor_ids.shrink_to_fit();

        Ok(Self {
            num_nodes,
            row_offsets: offsets,
            neighbor_ids,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            neighbor_ids: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbor_ids.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn neighbor_ids(&self) -> &[u32] {
        &self.neighbor_ids
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbor_ids[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.row_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        self.neighbor_ids.len() as f64 / self.num_nodes as f64
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .map(|&v| v as usize)
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }
}

/// Per-node homophily; `None` marks isolated nodes where it is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Homophily {
    pub per_node: Vec<Option<f64>>,
    /// Mean over nodes with positive degree; `None` if there are none.
    pub mean: Option<f64>,
}

/// Fraction of each node's neighbors that share its label.
pub fn node_homophily(graph: &Graph, labels: &[usize]) -> Result<Homophily> {
    if labels.len() != graph.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "node_homophily labels",
            expected: graph.num_nodes(),
            actual: labels.len(),
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let per_node = (0..graph.num_nodes())
        .map(|i| {
            let nbrs = graph.neighbors(i);
            if nbrs.is_empty() {
                return None;
            }
            let same = nbrs.iter().filter(|&&j| labels[j as usize] == labels[i]).count();
            let h = same as f64 / nbrs.len() as f64;
            total += h;
            counted += 1;
            Some(h)
        })
        .collect();
    let mean = (counted > 0).then(|| total / counted as f64);
    Ok(Homophily { per_node, mean })
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn edge_homophily(graph: &Graph, labels: &[usize]) -> Option<f64> {
    let mut same = 0usize;
    let mut total = 0usize;
    for (u, v) in graph.edges() {
        total += 1;
        if labels[u] == labels[v] {
            same += 1;
        }
    }
    (total > 0).then(|| same as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `D^-1 A`
    Row,
    /// `D^-1/2 A D^-1/2`
    #[default]
    Symmetric,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::Row => f.write_str("row"),
            Normalization::Symmetric => f.write_str("sym"),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(Normalization::Row),
            "sym" | "symmetric" => Ok(Normalization::Symmetric),
            other => Err(Error::InvalidParameter(format!(
                "unknown normalization `{other}` (expected row|sym)"
            ))),
        }
    }
}

/// Normalized adjacency operator over a borrowed graph.
///
/// Keeps call counters so callers can assert how many sparse products a
/// pipeline performed.
#[derive(Debug)]
pub struct PropagationOperator<'g> {
    graph: &'g Graph,
    mode: Normalization,
    // out_i = left_i * sum_{j in N(i)} right_j * h_j
    left: Vec<f64>,
    right: Vec<f64>,
    forward_calls: AtomicUsize,
    adjoint_calls: AtomicUsize,
}

impl<'g> PropagationOperator<'g> {
    pub fn new(graph: &'g Graph, mode: Normalization) -> Self {
        let degrees = graph.degrees();
        let inv = |d: usize, f: fn(f64) -> f64| if d == 0 { 0.0 } else { 1.0 / f(d as f64) };
        let (left, right) = match mode {
            Normalization::Row => (
                degrees.iter().map(|&d| inv(d, |x| x)).collect(),
                vec![1.0; degrees.len()],
            ),
            Normalization::Symmetric => {
                let s: Vec<f64> = degrees.iter().map(|&d| inv(d, f64::sqrt)).collect();
                (s.clone(), s)
            }
        };
        Self {
            graph,
            mode,
            left,
            right,
            forward_calls: AtomicUsize::new(0),
            adjoint_calls: AtomicUsize::new(0),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn mode(&self) -> Normalization {
        self.mode
    }

    /// Number of `propagate` calls made so far.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Number of `propagate_adjoint` calls made so far.
    pub fn adjoint_calls(&self) -> usize {
        self.adjoint_calls.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
        self.adjoint_calls.store(0, Ordering::Relaxed);
    }

    /// `Ã·H`. Rows of isolated nodes come out as zero.
    pub fn propagate(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        self.apply(h, &self.left, &self.right)
    }

    /// `Ãᵀ·H`, used when back-propagating through the hop stack.
    pub fn propagate_adjoint(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.adjoint_calls.fetch_add(1, Ordering::Relaxed);
        self.apply(h, &self.right, &self.left)
    }

    fn apply(&self, h: ArrayView2<'_, f64>, left: &[f64], right: &[f64]) -> Result<Array2<f64>> {
        let n = self.graph.num_nodes();
        if h.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "propagate rows",
                expected: n,
                actual: h.nrows(),
            });
        }
        let width = h.ncols();
        let h = h.as_standard_layout();
        let src = h.as_slice().expect("standard layout");
        let mut out = vec![0.0f64; n * width];
        for (i, row) in out.chunks_exact_mut(width.max(1)).enumerate().take(n) {
            if left[i] == 0.0 {
                continue;
            }
            for &j in self.graph.neighbors(i) {
                let j = j as usize;
                let w = right[j];
                let other = &src[j * width..(j + 1) * width];
                for (o, &x) in row.iter_mut().zip(other) {
                    *o += w * x;
                }
            }
            let l = left[i];
            for o in row.iter_mut() {
                *o *= l;
            }
        }
        Ok(Array2::from_shape_vec((n, width), out).expect("shape"))
    }
}
