use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::views::ViewSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphEncoderConfig {
    pub layers: usize,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig { layers: 2 }
    }
}

/// `A_ij = 1 / sqrt(deg_i deg_j)` over the view's own edges, rows and
/// columns ordered like `view.nodes`.
pub fn view_adjacency<T: Scalar>(view: &ViewSample) -> Tensor<T> {
    let k = view.nodes.len();
    let edges = view.local_edges();
    let mut deg = vec![0usize; k];
    for &(a, b) in &edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let mut adj = Tensor::zeros(k, k);
    for &(a, b) in &edges {
        let w = T::one() / T::from_usize_lossy(deg[a] * deg[b]).sqrt();
        adj.set(a, b, w);
        adj.set(b, a, w);
    }
    adj
}

pub struct LightGcnOutput {
    /// `1×d` embedding of the anchor.
    pub anchor: Var,
    /// `k×d` embeddings of every view node, in `view.nodes` order.
    pub nodes: Var,
}

/// Unweighted normalized propagation over the view, combined across layers
/// by the learnable weights `alpha` (`1×(L+1)`).
pub fn lightgcn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    view: &ViewSample,
    item_table: Var,
    alpha: Var,
    config: &GraphEncoderConfig,
) -> Result<LightGcnOutput> {
    let ids: Vec<usize> = view.nodes.iter().map(|n| n.index()).collect();
    let mut layer = tape.select_rows(item_table, &ids)?;
    let alpha_col = tape.transpose(alpha)?;
    let a0 = tape.select_rows(alpha_col, &[0])?;
    let mut combined = tape.scale(layer, a0)?;
    if config.layers > 0 {
        let adj = tape.constant(view_adjacency(view))?;
        for l in 1..=config.layers {
            layer = tape.matmul(adj, layer)?;
            let al = tape.select_rows(alpha_col, &[l])?;
            let term = tape.scale(layer, al)?;
            combined = tape.add(combined, term)?;
        }
    }
    let anchor = tape.select_rows(combined, &[0])?;
    Ok(LightGcnOutput {
        anchor,
        nodes: combined,
    })
}
