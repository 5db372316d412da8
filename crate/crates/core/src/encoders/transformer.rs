use super::padding_fill_mask;
use crate::error::Result;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;

/// Logit assigned to padded keys before the softmax.
const MASKED_LOGIT: f64 = -1e9;

pub struct AttentionHead {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

pub struct BlockWeights {
    pub heads: Vec<AttentionHead>,
    pub wo: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

pub struct TransformerWeights {
    /// Learned positions indexed by recency: row 0 is the most recent slot.
    pub positions: Var,
    pub blocks: Vec<BlockWeights>,
    /// Output projection `W^z`.
    pub wz: Var,
}

fn attention_block<T: Scalar>(tape: &mut Tape<T>, x: Var, mask: &[bool], block: &BlockWeights) -> Result<Var> {
    let m = mask.len();
    let key_mask: Vec<bool> = (0..m).flat_map(|_| mask.iter().map(|&valid| !valid)).collect();
    let mut outputs = Vec::with_capacity(block.heads.len());
    for head in &block.heads {
        let q = tape.matmul(x, head.wq)?;
        let k = tape.matmul(x, head.wk)?;
        let v = tape.matmul(x, head.wv)?;
        let head_dim = tape.value(q).cols();
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale_const(scores, T::one() / T::from_usize_lossy(head_dim).sqrt())?;
        let scores = tape.masked_fill(scores, &key_mask, T::lit(MASKED_LOGIT))?;
        let attn = tape.softmax_rows(scores)?;
        outputs.push(tape.matmul(attn, v)?);
    }
    let joined = tape.concat_cols(&outputs)?;
    let attended = tape.matmul(joined, block.wo)?;
    let x = tape.add(x, attended)?;

    let hidden = tape.matmul(x, block.ffn_w1)?;
    let hidden = tape.add_row(hidden, block.ffn_b1)?;
    let hidden = tape.relu(hidden)?;
    let ffn = tape.matmul(hidden, block.ffn_w2)?;
    let ffn = tape.add_row(ffn, block.ffn_b2)?;
    Ok(tape.add(x, ffn)?)
}

/// `Z = Blocks(S + P) · W^z + S` with padding excluded from attention and
/// zeroed in both `S` and `Z`. `seq` is the `m×d` window of item embeddings.
pub fn transformer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    seq: Var,
    mask: &[bool],
    weights: &TransformerWeights,
) -> Result<Var> {
    let (m, d) = tape.value(seq).dims();
    assert_eq!(m, mask.len(), "mask length must equal window length");
    let fill = padding_fill_mask(mask, d);
    let s = tape.masked_fill(seq, &fill, T::zero())?;
    let recency: Vec<usize> = (0..m).map(|i| m - 1 - i).collect();
    let pos = tape.select_rows(weights.positions, &recency)?;
    let mut x = tape.add(s, pos)?;
    for block in &weights.blocks {
        x = attention_block(tape, x, mask, block)?;
    }
    let projected = tape.matmul(x, weights.wz)?;
    let z = tape.add(projected, s)?;
    Ok(tape.masked_fill(z, &fill, T::zero())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    struct Fixture {
        tape: Tape<f64>,
        weights: TransformerWeights,
    }

    fn fixture(seed: u64, d: usize, heads: usize, blocks: usize, max_len: usize, zero: bool) -> Fixture {
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let mut mat = |tape: &mut Tape<f64>, r: usize, c: usize| {
            let t = if zero {
                Tensor::zeros(r, c)
            } else {
                Tensor::random_uniform(r, c, 0.5, &mut rng)
            };
            tape.constant(t).unwrap()
        };
        let dh = d / heads;
        let positions = mat(&mut tape, max_len, d);
        let blocks = (0..blocks)
            .map(|_| BlockWeights {
                heads: (0..heads)
                    .map(|_| AttentionHead {
                        wq: mat(&mut tape, d, dh),
                        wk: mat(&mut tape, d, dh),
                        wv: mat(&mut tape, d, dh),
                    })
                    .collect(),
                wo: mat(&mut tape, d, d),
                ffn_w1: mat(&mut tape, d, d),
                ffn_b1: mat(&mut tape, 1, d),
                ffn_w2: mat(&mut tape, d, d),
                ffn_b2: mat(&mut tape, 1, d),
            })
            .collect();
        let wz = mat(&mut tape, d, d);
        Fixture {
            tape,
            weights: TransformerWeights { positions, blocks, wz },
        }
    }

    fn encode(f: &mut Fixture, s: Tensor<f64>, mask: &[bool]) -> Tensor<f64> {
        let s = f.tape.constant(s).unwrap();
        let z = transformer_forward(&mut f.tape, s, mask, &f.weights).unwrap();
        f.tape.value(z).clone()
    }

    #[test]
    fn zero_projection_is_residual_identity() {
        let mut f = fixture(1, 4, 2, 1, 5, true);
        let mut rng = StreamRng::seed_from_u64(2);
        let s = Tensor::random_normal(5, 4, 1.0, &mut rng);
        let z = encode(&mut f, s.clone(), &[true; 5]);
        assert_eq!(z, s);
    }

    #[test]
    fn padded_slots_do_not_leak() {
        let mut f = fixture(3, 4, 2, 2, 4, false);
        let mut rng = StreamRng::seed_from_u64(4);
        let mut s1 = Tensor::random_normal(4, 4, 1.0, &mut rng);
        let mask = [false, false, false, true];
        let z1 = encode(&mut f, s1.clone(), &mask);
        // Garbage in the padded rows must not change anything.
        for r in 0..3 {
            for v in s1.row_mut(r) {
                *v = 7.5;
            }
        }
        let z2 = encode(&mut f, s1, &mask);
        assert_eq!(z1, z2);
        assert!(z1.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepending_padding_keeps_valid_outputs() {
        let mut rng = StreamRng::seed_from_u64(5);
        let s = Tensor::random_normal(3, 4, 1.0, &mut rng);
        let mut f = fixture(6, 4, 2, 1, 6, false);
        let z_short = encode(&mut f, s.clone(), &[true; 3]);
        let mut rows: Vec<Vec<f64>> = vec![vec![0.0; 4]; 3];
        rows.extend((0..3).map(|r| s.row(r).to_vec()));
        let z_long = encode(&mut f, Tensor::from_rows(&rows), &[false, false, false, true, true, true]);
        for r in 0..3 {
            for c in 0..4 {
                assert!((z_short.get(r, c) - z_long.get(r + 3, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let mut rng = StreamRng::seed_from_u64(8);
        let s = Tensor::random_normal(5, 4, 1.0, &mut rng);
        let mask = [false, true, true, true, true];
        let z1 = encode(&mut fixture(9, 4, 2, 1, 5, false), s.clone(), &mask);
        let z2 = encode(&mut fixture(9, 4, 2, 1, 5, false), s, &mask);
        assert_eq!(z1, z2);
    }
}
