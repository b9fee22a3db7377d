//! Graph data model, normalized adjacency, homophily and smoothness metrics,
//! the controllable-homophily generator, splits and the on-disk bundle format.

pub(crate) mod bundle;
mod homophily;
mod sbm;
mod smoothness;
mod split;

use std::collections::BTreeSet;

pub use bundle::{load_bundle, save_bundle, Bundle};
pub use homophily::{graph_homophily, homophily_histogram, node_homophily, node_homophily_all};
pub use sbm::{generate_sbm, SbmSpec};
pub use smoothness::smoothness_davg;
pub use split::{make_split, SplitMasks, SplitRatios};

use crate::autodiff::{Matrix, SparseCsr};
use crate::error::{Error, Result};

/// Undirected, simple, labeled graph with node features.
///
/// Edges are stored once each as `(u, v)` with `u < v`, sorted. Self-loops are
/// never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Validates and canonicalizes an edge list. Edges may be given in either
    /// orientation; duplicates (in either orientation) and self-loops are rejected.
    pub fn new(
        name: impl Into<String>,
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if features.rows() != n {
            return Err(Error::Integrity(format!(
                "{} feature rows for {n} labeled nodes",
                features.rows()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Integrity(format!(
                "node {i} has label {y} but there are {num_classes} classes"
            )));
        }
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Integrity(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Integrity(format!("self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Integrity(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self {
            name: name.into(),
            n,
            edges: seen.into_iter().collect(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sorted neighbor lists, excluding the node itself.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Same graph with nodes relabeled so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n || perm.iter().collect::<BTreeSet<_>>().len() != self.n {
            return Err(Error::Argument("permutation is not a bijection on the nodes".into()));
        }
        let mut features = Matrix::zeros(self.n, self.feature_dim());
        let mut labels = vec![0; self.n];
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
            labels[new] = self.labels[old];
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::new(self.name.clone(), edges, features, labels, self.num_classes)
    }
}

/// Symmetric normalization `Ã_ij / sqrt(D̃_ii D̃_jj)` with `Ã = A + I`.
pub fn normalize_adjacency(g: &Graph) -> SparseCsr {
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
    let mut triplets = Vec::with_capacity(2 * g.num_edges() + g.num_nodes());
    for i in 0..g.num_nodes() {
        triplets.push((i, i, 1.0 / deg[i]));
    }
    for &(u, v) in g.edges() {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    SparseCsr::from_triplets(g.num_nodes(), g.num_nodes(), &triplets)
        .expect("graph invariants guarantee valid triplets")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn graph_from_edges(n: usize, edges: &[(usize, usize)], labels: &[usize]) -> Graph {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Graph::new("test", edges.to_vec(), Matrix::zeros(n, 1), labels.to_vec(), k).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = graph_from_edges(1, &[], &[0]);
        assert_eq!(normalize_adjacency(&g).to_dense(), Matrix::from_rows(&[&[1.0]]));
    }

    #[test]
    fn single_edge_normalizes_to_halves() {
        let g = graph_from_edges(2, &[(0, 1)], &[0, 1]);
        assert_eq!(normalize_adjacency(&g).to_dense(), Matrix::filled(2, 2, 0.5));
    }

    #[test]
    fn rejects_bad_edges() {
        let f = Matrix::zeros(3, 1);
        assert!(Graph::new("g", vec![(0, 3)], f.clone(), vec![0; 3], 1).is_err());
        assert!(Graph::new("g", vec![(1, 1)], f.clone(), vec![0; 3], 1).is_err());
        assert!(Graph::new("g", vec![(0, 1), (1, 0)], f.clone(), vec![0; 3], 1).is_err());
        assert!(Graph::new("g", vec![], f, vec![0, 0, 2], 2).is_err());
    }

    #[test]
    fn edges_are_canonicalized() {
        let g = graph_from_edges(3, &[(2, 0), (1, 0)], &[0, 0, 0]);
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(g.adjacency_lists(), vec![vec![1, 2], vec![0], vec![0]]);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..15).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
            let m = pairs.len();
            (Just(n), Just(pairs), proptest::collection::vec(any::<bool>(), m))
                .prop_map(|(n, pairs, keep)| {
                    let edges: Vec<_> = pairs
                        .into_iter()
                        .zip(keep)
                        .filter_map(|(e, k)| k.then_some(e))
                        .collect();
                    graph_from_edges(n, &edges, &vec![0; n])
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn normalized_adjacency_is_symmetric_and_bounded(g in arb_graph()) {
            let a = normalize_adjacency(&g);
            let deg = g.degrees();
            for i in 0..g.num_nodes() {
                prop_assert_eq!(a.row_ptr()[i + 1] - a.row_ptr()[i], deg[i] + 1);
                for (j, v) in a.row_entries(i) {
                    prop_assert!(v > 0.0 && v <= 1.0);
                    prop_assert_eq!(v, a.get(j, i));
                }
            }
        }
    }
}
