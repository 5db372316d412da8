//! Global item relationship graph: inverse-interval co-occurrence weights,
//! symmetric degree normalization and threshold pruning.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::{FromPrimitive, Num};
use serde::Serialize;

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GirgConfig {
    /// Largest positional interval `n` that still creates an edge.
    pub max_interval: usize,
    /// Edges whose normalized weight falls below this are removed.
    pub epsilon: f64,
    /// Every raw weight becomes 1 and the interval bound is forced to 1.
    pub unweighted: bool,
}

impl Default for GirgConfig {
    fn default() -> Self {
        GirgConfig {
            max_interval: 3,
            epsilon: 0.05,
            unweighted: false,
        }
    }
}

/// Unordered item pair, stored with the smaller id first.
pub type EdgeKey = (ItemId, ItemId);

fn key(a: ItemId, b: ItemId) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Raw weights `w_ij = Σ_users Σ_k count_k(i, j) / k` for `k = 1..=n`.
/// Identical items at distance `k` contribute nothing.
pub fn raw_weights<W>(sequences: &[Vec<ItemId>], max_interval: usize) -> BTreeMap<EdgeKey, W>
where
    W: Clone + Num + FromPrimitive,
{
    assert!(max_interval >= 1, "interval bound must be positive");
    let inverse: Vec<W> = (1..=max_interval)
        .map(|k| W::one() / W::from_usize(k).expect("interval fits the weight type"))
        .collect();
    let mut weights: BTreeMap<EdgeKey, W> = BTreeMap::new();
    for seq in sequences {
        for (p, &a) in seq.iter().enumerate() {
            for (k, &b) in seq.iter().skip(p + 1).take(max_interval).enumerate() {
                if a == b {
                    continue;
                }
                let w = weights.entry(key(a, b)).or_insert_with(W::zero);
                *w = w.clone() + inverse[k].clone();
            }
        }
    }
    weights
}

/// Graph after normalization, before pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedWeights<T> {
    pub num_items: usize,
    /// `(w_raw, w_norm)` per edge.
    pub edges: BTreeMap<EdgeKey, (T, T)>,
    /// Weighted degree `d_i = Σ_j w_ij` over raw weights.
    pub degree: Vec<T>,
}

/// `w'_ij = w_ij / sqrt(d_i d_j)` with `d` the weighted degree. Isolated
/// nodes have no edges, so no division by zero can occur.
pub fn normalize_weights<T: Scalar>(num_items: usize, raw: &BTreeMap<EdgeKey, T>) -> NormalizedWeights<T> {
    let mut degree = vec![T::zero(); num_items + 1];
    for (&(a, b), &w) in raw {
        degree[a.index()] += w;
        degree[b.index()] += w;
    }
    let edges = raw
        .iter()
        .filter(|(_, &w)| w > T::zero())
        .map(|(&(a, b), &w)| {
            let norm = w / (degree[a.index()] * degree[b.index()]).sqrt();
            ((a, b), (w, norm.min(T::one())))
        })
        .collect();
    NormalizedWeights {
        num_items,
        edges,
        degree,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeWeights<T> {
    pub raw: T,
    pub norm: T,
    pub hat: T,
}

/// Sparse symmetric item graph over items `1..=N` without self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph<T> {
    num_items: usize,
    edges: BTreeMap<EdgeKey, EdgeWeights<T>>,
    /// Per node, `(neighbor, ŵ)` sorted by neighbor id.
    adjacency: Vec<Vec<(ItemId, T)>>,
    /// Weighted degree `Σ_j ŵ_ij` over retained edges.
    degree: Vec<T>,
    pruned: usize,
}

/// Drops edges with `w' < epsilon`; survivors keep `ŵ = w'`.
pub fn prune<T: Scalar>(graph: &NormalizedWeights<T>, epsilon: f64) -> WeightedGraph<T> {
    let eps = T::lit(epsilon);
    let mut pruned = 0;
    let mut edges = BTreeMap::new();
    for (&k, &(raw, norm)) in &graph.edges {
        if norm < eps {
            pruned += 1;
        } else {
            edges.insert(k, EdgeWeights { raw, norm, hat: norm });
        }
    }
    WeightedGraph::from_edges(graph.num_items, edges, pruned)
}

/// `prune(normalize_weights(raw_weights(train, n)), ε)`, or the unweighted
/// variant when `config.unweighted` is set.
pub fn build_girg<T: Scalar>(train: &[Vec<ItemId>], num_items: usize, config: &GirgConfig) -> WeightedGraph<T> {
    let raw: BTreeMap<EdgeKey, T> = if config.unweighted {
        raw_weights::<T>(train, 1)
            .into_keys()
            .map(|k| (k, T::one()))
            .collect()
    } else {
        raw_weights(train, config.max_interval)
    };
    prune(&normalize_weights(num_items, &raw), config.epsilon)
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub pruned_edges: usize,
    pub isolated_nodes: usize,
    /// `(unweighted degree, node count)`, ascending.
    pub degree_histogram: Vec<(usize, usize)>,
    pub mean_weight: f64,
}

impl<T: Scalar> WeightedGraph<T> {
    fn from_edges(num_items: usize, edges: BTreeMap<EdgeKey, EdgeWeights<T>>, pruned: usize) -> Self {
        let mut adjacency = vec![Vec::new(); num_items + 1];
        let mut degree = vec![T::zero(); num_items + 1];
        for (&(a, b), e) in &edges {
            adjacency[a.index()].push((b, e.hat));
            adjacency[b.index()].push((a, e.hat));
            degree[a.index()] += e.hat;
            degree[b.index()] += e.hat;
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        WeightedGraph {
            num_items,
            edges,
            adjacency,
            degree,
            pruned,
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn pruned_edges(&self) -> usize {
        self.pruned
    }

    pub fn contains(&self, item: ItemId) -> bool {
        !item.is_pad() && item.index() <= self.num_items
    }

    pub fn edge(&self, a: ItemId, b: ItemId) -> Option<&EdgeWeights<T>> {
        self.edges.get(&key(a, b))
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeKey, &EdgeWeights<T>)> {
        self.edges.iter().map(|(&k, e)| (k, e))
    }

    pub fn neighbors(&self, item: ItemId) -> &[(ItemId, T)] {
        &self.adjacency[item.index()]
    }

    pub fn degree(&self, item: ItemId) -> T {
        self.degree[item.index()]
    }

    pub fn stats(&self) -> GraphStats {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 1..=self.num_items {
            *hist.entry(self.adjacency[i].len()).or_default() += 1;
        }
        let total: f64 = self.edges.values().map(|e| e.hat.as_f64()).sum();
        GraphStats {
            nodes: self.num_items,
            edges: self.edges.len(),
            pruned_edges: self.pruned,
            isolated_nodes: hist.get(&0).copied().unwrap_or(0),
            degree_histogram: hist.into_iter().collect(),
            mean_weight: if self.edges.is_empty() {
                0.0
            } else {
                total / self.edges.len() as f64
            },
        }
    }

    /// Edge list `i \t j \t w_raw \t w_hat` sorted by `(i, j)`, preceded by
    /// a `# nodes=N pruned=P` header.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes={} pruned={}\n", self.num_items, self.pruned);
        for (&(a, b), e) in &self.edges {
            writeln!(out, "{}\t{}\t{}\t{}", a, b, e.raw.as_f64(), e.hat.as_f64()).expect("string write");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: "<edge list>".into(),
            line,
            message: message.to_string(),
        };
        let mut num_items = None;
        let mut pruned = 0;
        let mut edges = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("nodes", v)) => num_items = v.parse().ok(),
                        Some(("pruned", v)) => pruned = v.parse().map_err(|_| parse_err(lineno, "bad pruned count"))?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err(lineno, "expected 4 tab-separated fields"));
            }
            let a: u32 = f[0].parse().map_err(|_| parse_err(lineno, "bad node id"))?;
            let b: u32 = f[1].parse().map_err(|_| parse_err(lineno, "bad node id"))?;
            let raw: f64 = f[2].parse().map_err(|_| parse_err(lineno, "bad weight"))?;
            let hat: f64 = f[3].parse().map_err(|_| parse_err(lineno, "bad weight"))?;
            if a == b || a == 0 || b == 0 {
                return Err(parse_err(lineno, "self-loop or padding node"));
            }
            let hat = T::lit(hat);
            edges.insert(
                key(ItemId(a), ItemId(b)),
                EdgeWeights {
                    raw: T::lit(raw),
                    norm: hat,
                    hat,
                },
            );
        }
        let max_id = edges.keys().map(|&(_, b)| b.index()).max().unwrap_or(0);
        let num_items = num_items.unwrap_or(max_id);
        if max_id > num_items {
            return Err(parse_err(0, "edge references a node beyond the declared count"));
        }
        Ok(WeightedGraph::from_edges(num_items, edges, pruned))
    }

    /// Same graph with a different ŵ on one edge; used for monotonicity
    /// checks of samplers.
    pub fn with_edge_weight(&self, a: ItemId, b: ItemId, hat: T) -> Self {
        let mut edges = self.edges.clone();
        if let Some(e) = edges.get_mut(&key(a, b)) {
            e.hat = hat;
        }
        WeightedGraph::from_edges(self.num_items, edges, self.pruned)
    }

    /// Builds a graph directly from `(i, j, ŵ)` triples (raw = norm = ŵ).
    pub fn from_weighted_edges(num_items: usize, triples: &[(u32, u32, T)]) -> Self {
        let edges = triples
            .iter()
            .filter(|(a, b, _)| a != b)
            .map(|&(a, b, w)| (key(ItemId(a), ItemId(b)), EdgeWeights { raw: w, norm: w, hat: w }))
            .collect();
        WeightedGraph::from_edges(num_items, edges, 0)
    }
}
