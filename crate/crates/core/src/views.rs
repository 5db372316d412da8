//! Stochastic anchor-centred subgraph views for contrastive learning.

use std::collections::BTreeSet;

use rand::Rng;

use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::girg::WeightedGraph;
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewSample {
    pub anchor: ItemId,
    /// Anchor first, then nodes in the order they were sampled.
    pub nodes: Vec<ItemId>,
    /// Parent-graph edges among `nodes`, as `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(ItemId, ItemId)>,
    pub depth: usize,
}

impl ViewSample {
    pub fn isolated(anchor: ItemId, depth: usize) -> Self {
        ViewSample {
            anchor,
            nodes: vec![anchor],
            edges: Vec::new(),
            depth,
        }
    }

    /// Edges as pairs of positions into `nodes`.
    pub fn local_edges(&self) -> Vec<(usize, usize)> {
        let pos = |x: ItemId| self.nodes.iter().position(|&n| n == x).expect("edge endpoint in view");
        self.edges.iter().map(|&(a, b)| (pos(a), pos(b))).collect()
    }
}

/// Inclusion probability of a neighbour reached over an edge of weight `ŵ`.
pub fn inclusion_probability<T: Scalar>(hat: T, depth: usize) -> f64 {
    (hat.as_f64() / depth as f64).clamp(0.0, 1.0)
}

/// Runs `depth` rounds of frontier expansion from `anchor`. Each unsampled
/// neighbour `j` of a frontier node `i` joins with probability
/// `min(1, ŵ_ij / depth)`; newly joined nodes form the next frontier.
pub fn sample_view<T: Scalar, R: Rng + ?Sized>(
    graph: &WeightedGraph<T>,
    anchor: ItemId,
    depth: usize,
    rng: &mut R,
) -> Result<ViewSample> {
    if !graph.contains(anchor) {
        return Err(Error::MissingNode(anchor.0));
    }
    assert!(depth >= 1, "sampling depth must be positive");
    let mut nodes = vec![anchor];
    let mut seen: BTreeSet<ItemId> = BTreeSet::from([anchor]);
    let mut frontier = vec![anchor];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &i in &frontier {
            for &(j, hat) in graph.neighbors(i) {
                if seen.contains(&j) {
                    continue;
                }
                let p = inclusion_probability(hat, depth);
                if rng.random::<f64>() < p {
                    seen.insert(j);
                    nodes.push(j);
                    next.push(j);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(induced(graph, anchor, nodes, depth))
}

fn induced<T: Scalar>(graph: &WeightedGraph<T>, anchor: ItemId, nodes: Vec<ItemId>, depth: usize) -> ViewSample {
    let members: BTreeSet<ItemId> = nodes.iter().copied().collect();
    let mut edges = Vec::new();
    for &a in &members {
        for &(b, _) in graph.neighbors(a) {
            if a < b && members.contains(&b) {
                edges.push((a, b));
            }
        }
    }
    ViewSample {
        anchor,
        nodes,
        edges,
        depth,
    }
}

/// Two independent views drawn from separate streams seeded off `rng`.
pub fn sample_view_pair<T: Scalar, R: Rng + ?Sized>(
    graph: &WeightedGraph<T>,
    anchor: ItemId,
    depth: usize,
    rng: &mut R,
) -> Result<(ViewSample, ViewSample)> {
    let base: u64 = rng.random();
    let mut first = rng::stream(base, &[anchor.0 as u64, 0]);
    let mut second = rng::stream(base, &[anchor.0 as u64, 1]);
    Ok((
        sample_view(graph, anchor, depth, &mut first)?,
        sample_view(graph, anchor, depth, &mut second)?,
    ))
}

/// Renders a view as `i \t j` lines for debugging.
pub fn view_edge_list(view: &ViewSample) -> String {
    let mut out = format!("# anchor={} nodes={}\n", view.anchor, view.nodes.len());
    for (a, b) in &view.edges {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    out
}

/// Per-draw generator for anchor `anchor` at draw index `draw`.
pub fn anchor_stream(seed: u64, anchor: ItemId, draw: u64) -> StreamRng {
    rng::stream(seed, &[anchor.0 as u64, draw])
}
