use super::Graph;

/// Fraction of node `i`'s neighbors (excluding itself) sharing its label.
/// `None` when the node has no neighbors.
pub fn node_homophily(g: &Graph, i: usize) -> Option<f64> {
    let labels = g.labels();
    let (mut same, mut total) = (0usize, 0usize);
    for &(u, v) in g.edges() {
        let other = if u == i {
            v
        } else if v == i {
            u
        } else {
            continue;
        };
        total += 1;
        if labels[other] == labels[i] {
            same += 1;
        }
    }
    (total > 0).then(|| same as f64 / total as f64)
}

/// Node homophily for every node in one pass over the edge list.
pub fn node_homophily_all(g: &Graph) -> Vec<Option<f64>> {
    let labels = g.labels();
    let mut same = vec![0usize; g.num_nodes()];
    let mut total = vec![0usize; g.num_nodes()];
    for &(u, v) in g.edges() {
        total[u] += 1;
        total[v] += 1;
        if labels[u] == labels[v] {
            same[u] += 1;
            same[v] += 1;
        }
    }
    same.iter()
        .zip(&total)
        .map(|(&s, &t)| (t > 0).then(|| s as f64 / t as f64))
        .collect()
}

/// Mean node homophily over nodes with at least one neighbor.
/// `None` for graphs without edges.
pub fn graph_homophily(g: &Graph) -> Option<f64> {
    let defined: Vec<f64> = node_homophily_all(g).into_iter().flatten().collect();
    if defined.is_empty() {
        return None;
    }
    Some(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Counts of node homophily values in `bins` equal-width bins over `[0, 1]`;
/// the value 1.0 falls into the last bin. Isolated nodes are not counted.
pub fn homophily_histogram(g: &Graph, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for h in node_homophily_all(g).into_iter().flatten() {
        let b = ((h * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}
