use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Parameters of the controllable-homophily block model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmSpec {
    pub n: usize,
    pub k: usize,
    pub target_h: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            n: 400,
            k: 3,
            target_h: 0.9,
            avg_degree: 10.0,
            feature_dim: 16,
            class_separation: 2.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_h > 0.0 && self.target_h < 1.0) {
            return Err(Error::config("sbm.target_h", format!("{} is not in (0, 1)", self.target_h)));
        }
        if self.k < 2 {
            return Err(Error::config("sbm.k", "need at least two classes"));
        }
        if self.n < self.k {
            return Err(Error::config("sbm.n", format!("{} nodes cannot cover {} classes", self.n, self.k)));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree.is_finite()) {
            return Err(Error::config("sbm.avg_degree", "must be positive"));
        }
        if self.feature_dim < self.k {
            return Err(Error::config(
                "sbm.feature_dim",
                format!("must be at least k = {} to separate class means", self.k),
            ));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::config("sbm.class_separation", "must be non-negative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("sbm.noise_std", "must be positive"));
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        (self.n as f64 * self.avg_degree / 2.0).ceil() as usize
    }

    fn name(&self) -> String {
        format!("sbm-n{}-k{}-h{}-s{}", self.n, self.k, self.target_h, self.seed)
    }
}

/// Samples a graph whose expected same-class edge fraction is `target_h`.
///
/// Each edge draws a uniform endpoint `u`, then a uniform partner from `u`'s class
/// with probability `target_h`, otherwise from the remaining classes. Self-loops and
/// duplicates are rejected and redrawn.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.n;
    let m = spec.num_edges();
    let capacity = n * (n - 1) / 2;
    if m > capacity {
        return Err(Error::Argument(format!(
            "{m} edges requested but a simple graph on {n} nodes holds at most {capacity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.k).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); spec.k];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    // nodes outside each class, for heterophilic partner draws
    let outsiders: Vec<Vec<usize>> = (0..spec.k)
        .map(|c| (0..n).filter(|&i| labels[i] != c).collect())
        .collect();

    let mut seen = HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    let max_attempts = 100 * m + 10_000;
    let mut attempts = 0;
    while edges.len() < m {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Argument(format!(
                "could only place {} of {m} edges; the class structure is too saturated",
                edges.len()
            )));
        }
        let u = rng.gen_range(0..n);
        let pool = if rng.gen_bool(spec.target_h) {
            &members[labels[u]]
        } else {
            &outsiders[labels[u]]
        };
        let v = pool[rng.gen_range(0..pool.len())];
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }

    let offset = spec.class_separation / std::f64::consts::SQRT_2;
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::config("sbm.noise_std", e.to_string()))?;
    let mut features = Matrix::zeros(n, spec.feature_dim);
    for (i, &y) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        row[y] += offset;
    }

    Graph::new(spec.name(), edges, features, labels, spec.k)
}
