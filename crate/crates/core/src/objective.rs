//! Contrastive, prediction and joint losses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{NumericError, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossWeights {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            theta1: 1.0,
            theta2: 0.1,
            theta3: 1e-5,
            tau: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.theta1, self.theta2, self.theta3, self.tau].iter().all(|v| v.is_finite());
        if !finite || self.theta1 < 0.0 || self.theta2 < 0.0 || self.theta3 < 0.0 {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Whether the positive pair also appears in the InfoNCE denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    #[default]
    Standard,
    /// Negatives only in the denominator; can go negative.
    Literal,
}

impl std::str::FromStr for ContrastiveForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(ContrastiveForm::Standard),
            "literal" => Ok(ContrastiveForm::Literal),
            other => Err(format!("unknown contrastive form {other:?}")),
        }
    }
}

impl std::fmt::Display for ContrastiveForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContrastiveForm::Standard => "standard",
            ContrastiveForm::Literal => "literal",
        })
    }
}

/// Plain cosine similarity; `None` when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let na = crate::numerics::dot(a, a).sqrt();
    let nb = crate::numerics::dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return None;
    }
    Some(crate::numerics::dot(a, b) / (na * nb))
}

fn has_zero_row<T: Scalar>(t: &Tensor<T>) -> bool {
    (0..t.rows()).any(|r| t.row(r).iter().all(|&v| v == T::zero()))
}

/// Cosine of the `1×d` row `a` against each row of `rows` (`n×d`), as `n×1`.
fn cosine_column<T: Scalar>(tape: &mut Tape<T>, a: Var, rows: Var) -> Result<Var, NumericError> {
    let d = tape.value(a).cols();
    let at = tape.transpose(a)?;
    let dots = tape.matmul(rows, at)?;
    let sq = tape.mul(rows, rows)?;
    let ones = tape.constant(Tensor::full(d, 1, T::one()))?;
    let row_sq = tape.matmul(sq, ones)?;
    let row_norm = tape.sqrt(row_sq)?;
    let a_norm = tape.l2_norm(a)?;
    let denom = tape.scale(row_norm, a_norm)?;
    tape.div(dots, denom)
}

/// InfoNCE for one anchor: `anchor` and `positive` are `1×d`, `negatives`
/// is `n×d`. `anchor_id` is only used to label a zero-norm error.
pub fn info_nce_loss<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negatives: Var,
    tau: f64,
    form: ContrastiveForm,
    anchor_id: u32,
) -> Result<Var> {
    if tape.value(negatives).rows() == 0 {
        return Err(Error::SamplingImpossible { anchor: anchor_id });
    }
    for v in [anchor, positive, negatives] {
        if has_zero_row(tape.value(v)) {
            return Err(Error::ZeroNorm { anchor: anchor_id });
        }
    }
    let inv_tau = T::lit(1.0 / tau);
    let pos = cosine_column(tape, anchor, positive)?;
    let pos = tape.scale_const(pos, inv_tau)?;
    let neg = cosine_column(tape, anchor, negatives)?;
    let neg = tape.scale_const(neg, inv_tau)?;
    let neg_row = tape.transpose(neg)?;
    let logits = match form {
        ContrastiveForm::Standard => tape.concat_cols(&[pos, neg_row])?,
        ContrastiveForm::Literal => neg_row,
    };
    // log Σ exp, shifted by the constant max for stability
    let shift = tape
        .value(logits)
        .data()
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let shifted = tape.add_const(logits, -shift)?;
    let exps = tape.exp(shifted)?;
    let total = tape.sum(exps)?;
    let lse = tape.log(total)?;
    let lse = tape.add_const(lse, shift)?;
    Ok(tape.sub(lse, pos)?)
}

/// Mean BCE over `k×1` probabilities and their labels.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, labels: &[bool]) -> Result<Var, NumericError> {
    let k = tape.value(probs).len();
    if labels.len() != k {
        return Err(NumericError::shape("bce_loss", tape.value(probs).shape(), &[labels.len()]));
    }
    let p = tape.clamp(probs, T::lit(PROB_FLOOR), T::lit(1.0 - PROB_FLOOR))?;
    let y: Vec<T> = labels.iter().map(|&l| if l { T::one() } else { T::zero() }).collect();
    let not_y: Vec<T> = y.iter().map(|&v| T::one() - v).collect();
    let y = tape.constant(Tensor::new(vec![k, 1], y))?;
    let not_y = tape.constant(Tensor::new(vec![k, 1], not_y))?;
    let ln_p = tape.log(p)?;
    let flipped = tape.scale_const(p, -T::one())?;
    let one_minus = tape.add_const(flipped, T::one())?;
    let ln_q = tape.log(one_minus)?;
    let a = tape.mul(y, ln_p)?;
    let b = tape.mul(not_y, ln_q)?;
    let both = tape.add(a, b)?;
    let mean = tape.mean(both)?;
    tape.scale_const(mean, -T::one())
}

/// `Σ_p ‖p‖²` over every parameter of `store`, recorded on the tape.
pub fn l2_penalty<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var, NumericError> {
    let mut terms = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.iter_ids().map(|(id, _)| id).collect();
    for id in ids {
        let p = tape.param_by_id(store, id)?;
        let sq = tape.mul(p, p)?;
        terms.push(tape.sum(sq)?);
    }
    if terms.is_empty() {
        return tape.scalar(T::zero());
    }
    let stacked = tape.concat_rows(&terms)?;
    tape.sum(stacked)
}

/// `θ1·pred + θ2·cl + θ3·Σ‖p‖²`. A missing contrastive term counts as zero;
/// zero-weighted terms are left off the tape.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    cl: Option<Var>,
    weights: &LossWeights,
    store: &ParamStore<T>,
) -> Result<Var, NumericError> {
    let mut loss = tape.scale_const(pred, T::lit(weights.theta1))?;
    if let Some(cl) = cl.filter(|_| weights.theta2 != 0.0) {
        let term = tape.scale_const(cl, T::lit(weights.theta2))?;
        loss = tape.add(loss, term)?;
    }
    if weights.theta3 != 0.0 {
        let reg = l2_penalty(tape, store)?;
        let term = tape.scale_const(reg, T::lit(weights.theta3))?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}
