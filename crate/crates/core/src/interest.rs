//! Multi-interest extraction by capsule routing and target-attention fusion.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{NumericError, Tape, Tensor, Var};
use crate::scalar::Scalar;

const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CapsuleConfig {
    pub capsules: usize,
    pub iterations: usize,
}

impl Default for CapsuleConfig {
    fn default() -> Self {
        CapsuleConfig {
            capsules: 4,
            iterations: 3,
        }
    }
}

impl CapsuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capsules == 0 || self.iterations == 0 {
            return Err(Error::Config("capsules and routing iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// `squash(h) = ‖h‖/(1+‖h‖²) · h`, with `squash(0) = 0`.
pub fn squash<T: Scalar>(tape: &mut Tape<T>, h: Var) -> Result<Var, NumericError> {
    let n = tape.l2_norm(h)?;
    let n2 = tape.mul(n, n)?;
    let denom = tape.add_const(n2, T::one())?;
    let factor = tape.div(n, denom)?;
    tape.scale(h, factor)
}

/// Routes the valid rows of `z` (`m×d`) into `R` capsule outputs `o_r`,
/// each `1×d`. Agreement scores start at zero for every capsule.
pub fn dynamic_route<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    mask: &[bool],
    config: &CapsuleConfig,
) -> Result<Vec<Var>> {
    let m = tape.value(z).rows();
    assert_eq!(m, mask.len(), "mask length must equal window length");
    if !mask.iter().any(|&v| v) {
        return Err(Error::Config("routing needs at least one valid position".into()));
    }
    let padded: Vec<bool> = mask.iter().map(|&v| !v).collect();
    let zt = tape.transpose(z)?;
    let mut outputs = Vec::with_capacity(config.capsules);
    for _ in 0..config.capsules {
        let mut g = tape.constant(Tensor::zeros(1, m))?;
        let mut o = None;
        for _ in 0..config.iterations {
            let logits = tape.masked_fill(g, &padded, T::lit(MASKED_LOGIT))?;
            let weights = tape.softmax_rows(logits)?;
            let h = tape.matmul(weights, z)?;
            let out = squash(tape, h)?;
            let agreement = tape.matmul(out, zt)?;
            g = tape.add(g, agreement)?;
            o = Some(out);
        }
        outputs.push(o.expect("at least one iteration"));
    }
    Ok(outputs)
}

/// `õ_r = relu(o_r · W^o_r)`.
pub fn project_capsule<T: Scalar>(tape: &mut Tape<T>, o: Var, w: Var) -> Result<Var, NumericError> {
    let p = tape.matmul(o, w)?;
    tape.relu(p)
}

pub struct Fused {
    /// `k×d`: one fused preference per target row.
    pub q: Var,
    /// `k×R` attention weights.
    pub beta: Var,
}

/// Target attention for `k` candidate targets at once. `interests` holds the
/// projected capsules `õ_r` (`1×d` each), `targets` is `k×d`, `user` is `1×d`.
pub fn fuse_interests<T: Scalar>(
    tape: &mut Tape<T>,
    interests: &[Var],
    targets: Var,
    user: Var,
) -> Result<Fused, NumericError> {
    let stacked = tape.concat_rows(interests)?;
    let st = tape.transpose(stacked)?;
    let logits = tape.matmul(targets, st)?;
    let beta = tape.softmax_rows(logits)?;
    let mixed = tape.matmul(beta, stacked)?;
    let q = tape.add_row(mixed, user)?;
    Ok(Fused { q, beta })
}

pub struct Scored {
    /// `k×1` raw inner products.
    pub logit: Var,
    /// `k×1` sigmoid probabilities.
    pub prob: Var,
}

/// Row-wise `q_k · e_k` and its sigmoid.
pub fn score_pair<T: Scalar>(tape: &mut Tape<T>, q: Var, targets: Var) -> Result<Scored, NumericError> {
    let d = tape.value(q).cols();
    let prod = tape.mul(q, targets)?;
    let ones = tape.constant(Tensor::full(d, 1, T::one()))?;
    let logit = tape.matmul(prod, ones)?;
    let prob = tape.sigmoid(logit)?;
    Ok(Scored { logit, prob })
}

/// Raw scores of every row of `items` (`N×d`) given projected interests
/// (`R×d`) and the user vector, with target attention per candidate.
pub fn fused_scores<T: Scalar>(interests: &Tensor<T>, user: &[T], items: &Tensor<T>) -> Vec<T> {
    let r = interests.rows();
    let mut out = Vec::with_capacity(items.rows());
    let mut logits = vec![T::zero(); r];
    for v in 0..items.rows() {
        let e = items.row(v);
        for (k, l) in logits.iter_mut().enumerate() {
            *l = crate::numerics::dot(interests.row(k), e);
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        // q·e = Σ β_r (õ_r·e) + u·e
        let mixed: T = exps.iter().zip(&logits).map(|(&w, &l)| w / total * l).sum();
        out.push(mixed + crate::numerics::dot(user, e));
    }
    out
}
