use super::padding_fill_mask;
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Gate weights: `r` reset, `u` update, `n` candidate; `w*` act on the
/// input, `u*` on the previous hidden state.
pub struct GruWeights {
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_u: Var,
    pub u_u: Var,
    pub b_u: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
    /// Output projection `W^z`.
    pub wz: Var,
}

fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let sum = tape.add(xw, hu)?;
    Ok(tape.add(sum, b)?)
}

/// Recurrent pass; padded steps carry the previous hidden state forward.
/// `Z = H · W^z + S`, zero at padded rows.
pub fn gru_forward<T: Scalar>(tape: &mut Tape<T>, seq: Var, mask: &[bool], weights: &GruWeights) -> Result<Var> {
    let (m, d) = tape.value(seq).dims();
    assert_eq!(m, mask.len(), "mask length must equal window length");
    let fill = padding_fill_mask(mask, d);
    let s = tape.masked_fill(seq, &fill, T::zero())?;
    let mut h = tape.constant(Tensor::zeros(1, d))?;
    let mut states = Vec::with_capacity(m);
    for (t, &valid) in mask.iter().enumerate() {
        if valid {
            let x = tape.select_rows(s, &[t])?;
            let r = affine(tape, x, h, weights.w_r, weights.u_r, weights.b_r)?;
            let r = tape.sigmoid(r)?;
            let u = affine(tape, x, h, weights.w_u, weights.u_u, weights.b_u)?;
            let u = tape.sigmoid(u)?;
            let xn = tape.matmul(x, weights.w_n)?;
            let hn = tape.matmul(h, weights.u_n)?;
            let gated = tape.mul(r, hn)?;
            let n = tape.add(xn, gated)?;
            let n = tape.add(n, weights.b_n)?;
            let n = tape.tanh(n)?;
            // h' = (1 − u) ⊙ n + u ⊙ h = n + u ⊙ (h − n)
            let diff = tape.sub(h, n)?;
            let keep = tape.mul(u, diff)?;
            h = tape.add(n, keep)?;
        }
        states.push(h);
    }
    let hidden = tape.concat_rows(&states)?;
    let projected = tape.matmul(hidden, weights.wz)?;
    let z = tape.add(projected, s)?;
    Ok(tape.masked_fill(z, &fill, T::zero())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn weights_from(tape: &mut Tape<f64>, mats: &[Tensor<f64>]) -> GruWeights {
        let v: Vec<Var> = mats.iter().map(|m| tape.constant(m.clone()).unwrap()).collect();
        GruWeights {
            w_r: v[0],
            u_r: v[1],
            b_r: v[2],
            w_u: v[3],
            u_u: v[4],
            b_u: v[5],
            w_n: v[6],
            u_n: v[7],
            b_n: v[8],
            wz: v[9],
        }
    }

    fn shapes(d: usize) -> Vec<(usize, usize)> {
        vec![(d, d), (d, d), (1, d), (d, d), (d, d), (1, d), (d, d), (d, d), (1, d), (d, d)]
    }

    #[test]
    fn zero_weights_are_residual_identity() {
        let mut tape = Tape::new();
        let mats: Vec<Tensor<f64>> = shapes(3).iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        let w = weights_from(&mut tape, &mats);
        let s = Tensor::from_rows(&[vec![0.0; 3], vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 0.3]]);
        let sv = tape.constant(s.clone()).unwrap();
        let z = gru_forward(&mut tape, sv, &[false, true, true], &w).unwrap();
        assert_eq!(tape.value(z), &s);
    }

    #[test]
    fn single_step_matches_hand_arithmetic() {
        // d = 2, h0 = 0, so the recurrent matrices do not contribute.
        let x = [0.5, -1.0];
        let w_r = [[0.1, 0.2], [0.3, 0.4]];
        let w_u = [[-0.2, 0.1], [0.0, 0.5]];
        let w_n = [[0.6, -0.3], [0.2, 0.1]];
        let b_r = [0.05, -0.05];
        let b_u = [0.1, 0.0];
        let b_n = [0.0, 0.2];
        let wz = [[1.0, 0.5], [-0.5, 2.0]];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let lin = |w: [[f64; 2]; 2], b: [f64; 2], c: usize| x[0] * w[0][c] + x[1] * w[1][c] + b[c];
        let mut h = [0.0; 2];
        for c in 0..2 {
            let _r = sig(lin(w_r, b_r, c)); // multiplies U_n h0 = 0
            let u = sig(lin(w_u, b_u, c));
            let n = lin(w_n, b_n, c).tanh();
            h[c] = (1.0 - u) * n;
        }
        let want = [h[0] * wz[0][0] + h[1] * wz[1][0] + x[0], h[0] * wz[0][1] + h[1] * wz[1][1] + x[1]];

        let m2 = |a: [[f64; 2]; 2]| Tensor::from_rows(&[a[0].to_vec(), a[1].to_vec()]);
        let r1 = |b: [f64; 2]| Tensor::row_vector(b.to_vec());
        let rand_u = Tensor::from_rows(&[vec![0.9, -0.4], vec![0.7, 0.3]]);
        let mats = vec![
            m2(w_r),
            rand_u.clone(),
            r1(b_r),
            m2(w_u),
            rand_u.clone(),
            r1(b_u),
            m2(w_n),
            rand_u,
            r1(b_n),
            m2(wz),
        ];
        let mut tape = Tape::new();
        let w = weights_from(&mut tape, &mats);
        let s = tape.constant(Tensor::row_vector(x.to_vec())).unwrap();
        let z = gru_forward(&mut tape, s, &[true], &w).unwrap();
        for c in 0..2 {
            assert!((tape.value(z).get(0, c) - want[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn prepending_padding_keeps_valid_outputs() {
        let mut rng = StreamRng::seed_from_u64(3);
        let mats: Vec<Tensor<f64>> = shapes(3)
            .iter()
            .map(|&(r, c)| Tensor::random_uniform(r, c, 0.6, &mut rng))
            .collect();
        let s = Tensor::<f64>::random_normal(2, 3, 1.0, &mut rng);
        let mut tape = Tape::new();
        let w = weights_from(&mut tape, &mats);
        let short = tape.constant(s.clone()).unwrap();
        let z1 = gru_forward(&mut tape, short, &[true, true], &w).unwrap();
        let mut rows = vec![vec![4.0; 3], vec![-4.0; 3]];
        rows.extend((0..2).map(|r| s.row(r).to_vec()));
        let long = tape.constant(Tensor::from_rows(&rows)).unwrap();
        let z2 = gru_forward(&mut tape, long, &[false, false, true, true], &w).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(z1).row(r), tape.value(z2).row(r + 2));
        }
    }

    #[test]
    fn full_pass_passes_gradient_check() {
        let mut rng = StreamRng::seed_from_u64(12);
        for _ in 0..5 {
            let mut inputs: Vec<Tensor<f64>> = shapes(3)
                .iter()
                .map(|&(r, c)| Tensor::random_uniform(r, c, 0.6, &mut rng))
                .collect();
            inputs.push(Tensor::random_normal(4, 3, 1.0, &mut rng));
            let report = grad_check(
                |tape: &mut Tape<f64>, v: &[Var]| {
                    let w = GruWeights {
                        w_r: v[0],
                        u_r: v[1],
                        b_r: v[2],
                        w_u: v[3],
                        u_u: v[4],
                        b_u: v[5],
                        w_n: v[6],
                        u_n: v[7],
                        b_n: v[8],
                        wz: v[9],
                    };
                    let z = gru_forward(tape, v[10], &[false, true, true, true], &w)
                        .map_err(|e| match e {
                            crate::Error::Numeric(n) => n,
                            other => panic!("{other}"),
                        })?;
                    let sq = tape.mul(z, z)?;
                    tape.sum(sq)
                },
                &inputs,
                1e-4,
                1e-5,
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.max_rel_error);
        }
    }
}
