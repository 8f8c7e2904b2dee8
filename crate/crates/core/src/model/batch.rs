use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::{CsrMatrix, Matrix, Scalar};
use crate::featurize::MoleculeGraph;

use super::ModelError;

/// Several molecules stacked into one block-diagonal graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Concatenated node rows.
    pub features: Matrix<f32>,
    /// Directed edges with endpoints shifted into the concatenated numbering.
    pub edge_index: [Vec<usize>; 2],
    /// Graph of each node; non-decreasing.
    pub graph_id: Arc<[usize]>,
    /// `offsets[g]..offsets[g + 1]` are the nodes of graph `g`.
    pub offsets: Vec<usize>,
    pub labels: Option<Vec<f64>>,
}

impl Batch {
    /// Labels are kept only if every graph has one.
    pub fn from_graphs(graphs: &[&MoleculeGraph]) -> Result<Self, ModelError> {
        let Some(first) = graphs.first() else {
            return Err(ModelError::EmptyBatch);
        };
        let cols = first.node_features.cols();
        let mut data = Vec::new();
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut graph_id = Vec::new();
        let mut offsets = vec![0];
        for (g, graph) in graphs.iter().enumerate() {
            let n = graph.num_atoms();
            if n == 0 {
                return Err(ModelError::EmptyGraph(g));
            }
            if graph.node_features.cols() != cols {
                return Err(ModelError::InputWidth {
                    expected: cols,
                    found: graph.node_features.cols(),
                });
            }
            let base = *offsets.last().unwrap();
            data.extend_from_slice(graph.node_features.as_slice());
            sources.extend(graph.edge_index[0].iter().map(|&i| i + base));
            targets.extend(graph.edge_index[1].iter().map(|&i| i + base));
            graph_id.extend(std::iter::repeat_n(g, n));
            offsets.push(base + n);
        }
        let n = *offsets.last().unwrap();
        let labels = graphs.iter().map(|g| g.label).collect::<Option<Vec<_>>>();
        Ok(Batch {
            features: Matrix::from_vec(n, cols, data),
            edge_index: [sources, targets],
            graph_id: Arc::from(graph_id),
            offsets,
            labels,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn blocks(&self) -> Arc<[Range<usize>]> {
        self.offsets.windows(2).map(|w| w[0]..w[1]).collect::<Vec<_>>().into()
    }

    /// Same structure with different node rows.
    pub fn with_features(&self, features: Matrix<f32>) -> Batch {
        assert_eq!(features.rows(), self.num_nodes());
        Batch {
            features,
            ..self.clone()
        }
    }

    /// `D^-1/2 (A + I) D^-1/2` over the whole batch, which is block diagonal.
    pub fn normalized_adjacency<T: Scalar>(&self) -> CsrMatrix<T> {
        let n = self.num_nodes();
        let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (&s, &t) in self.edge_index[0].iter().zip(&self.edge_index[1]) {
            if s != t {
                pairs.push((s, t));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut degree = vec![0usize; n];
        for &(s, _) in &pairs {
            degree[s] += 1;
        }
        let triplets = pairs
            .into_iter()
            .map(|(s, t)| (s, t, T::of(1.0 / ((degree[s] * degree[t]) as f64).sqrt())))
            .collect();
        CsrMatrix::from_triplets(n, n, triplets)
    }
}
