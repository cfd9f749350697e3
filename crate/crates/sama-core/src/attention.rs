//! Multi-head self-attention over a token matrix `[L][d]`.
//!
//! Full (non-causal) softmax attention; tokens are the joints of one frame
//! for the spatial axis and the frames of one joint trajectory for the
//! temporal axis. No positional embeddings anywhere.

use crate::tape::{matmul, matmul_nt, softmax_rows, Tape, Var};
use crate::tensor::Tensor;

/// Tape variables of one attention block.
#[derive(Clone, Copy)]
pub struct AttentionVars {
    /// `[d][d]` each.
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    /// `[d]` each.
    pub bq: Var,
    pub bk: Var,
    pub bv: Var,
    pub bo: Var,
}

/// Multi-head self-attention on the tape, `[L][d] -> [L][d]`.
pub fn attention_op(tape: &Tape, x: Var, w: &AttentionVars, heads: usize) -> Var {
    let d = tape.shape_of(x)[1];
    assert!(d % heads == 0, "dim not divisible by heads");
    let dh = d / heads;
    let q = tape.linear(x, w.wq, Some(w.bq));
    let k = tape.linear(x, w.wk, Some(w.bk));
    let v = tape.linear(x, w.wv, Some(w.bv));
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
        let att = tape.softmax_rows(scores);
        outputs.push(tape.matmul(att, vh));
    }
    let merged = if heads == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)
    };
    tape.linear(merged, w.wo, Some(w.bo))
}

/// Plain-tensor weights mirroring [`AttentionVars`], for the reference path.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
}

/// Reference attention returning the output and each head's attention
/// matrix (rows sum to one).
pub fn attention_reference(
    x: &Tensor,
    w: &AttentionWeights,
    heads: usize,
) -> (Tensor, Vec<Tensor>) {
    let l = x.rows();
    let d = x.cols();
    let dh = d / heads;
    let affine = |w: &Tensor, b: &Tensor| -> Tensor {
        let mut y = matmul_nt(x, w);
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % d];
        }
        y
    };
    let q = affine(&w.wq, &w.bq);
    let k = affine(&w.wk, &w.bk);
    let v = affine(&w.wv, &w.bv);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut merged = Tensor::zeros(&[l, d]);
    let mut mats = Vec::with_capacity(heads);
    for h in 0..heads {
        let col0 = h * dh;
        let slice = |m: &Tensor| -> Tensor {
            let mut out = Tensor::zeros(&[l, dh]);
            for r in 0..l {
                for c in 0..dh {
                    let val = m.at2(r, col0 + c);
                    out.data_mut()[r * dh + c] = val;
                }
            }
            out
        };
        let (qh, kh, vh) = (slice(&q), slice(&k), slice(&v));
        let mut scores = matmul_nt(&qh, &kh);
        for s in scores.data_mut() {
            *s *= scale;
        }
        let att = softmax_rows(&scores);
        let oh = matmul(&att, &vh);
        for r in 0..l {
            for c in 0..dh {
                merged.data_mut()[r * d + col0 + c] = oh.at2(r, c);
            }
        }
        mats.push(att);
    }
    let mut out = matmul_nt(&merged, &w.wo);
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += w.bo.data()[i % d];
    }
    (out, mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, random_tensor, DEFAULT_STEP, DEFAULT_TOL};
    use crate::rng::Rng;
    use crate::tensor::{max_abs, max_abs_diff};

    fn random_attention(d: usize, rng: &mut Rng) -> AttentionWeights {
        AttentionWeights {
            wq: random_tensor(&[d, d], rng),
            wk: random_tensor(&[d, d], rng),
            wv: random_tensor(&[d, d], rng),
            wo: random_tensor(&[d, d], rng),
            bq: random_tensor(&[d], rng),
            bk: random_tensor(&[d], rng),
            bv: random_tensor(&[d], rng),
            bo: random_tensor(&[d], rng),
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        // L = 1: the attention weight is 1 and the output is the projected value
        let mut rng = Rng::seed_from(1);
        let d = 4;
        let w = random_attention(d, &mut rng);
        let x = random_tensor(&[1, d], &mut rng);
        let (out, mats) = attention_reference(&x, &w, 2);
        for m in &mats {
            assert_eq!(m.data(), &[1.0]);
        }
        // value path: out = wo (wv x + bv) + bo
        let mut v = vec![0.0; d];
        for i in 0..d {
            v[i] = w.bv.data()[i]
                + (0..d).map(|j| w.wv.at2(i, j) * x.data()[j]).sum::<f64>();
        }
        for i in 0..d {
            let expect = w.bo.data()[i]
                + (0..d).map(|j| w.wo.at2(i, j) * v[j]).sum::<f64>();
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_uniform_attention() {
        let mut rng = Rng::seed_from(2);
        let d = 6;
        let l = 5;
        let w = random_attention(d, &mut rng);
        let row = random_tensor(&[1, d], &mut rng);
        let x = Tensor::from_vec(&[l, d], row.data().repeat(l));
        let (_, mats) = attention_reference(&x, &w, 3);
        for m in &mats {
            for entry in m.data() {
                assert!((entry - 1.0 / l as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::seed_from(3);
        let d = 8;
        let w = random_attention(d, &mut rng);
        let x = random_tensor(&[6, d], &mut rng);
        let (_, mats) = attention_reference(&x, &w, 2);
        for m in &mats {
            for r in 0..6 {
                let sum: f64 = (0..6).map(|c| m.at2(r, c)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_matches_reference() {
        let mut rng = Rng::seed_from(4);
        let d = 6;
        let w = random_attention(d, &mut rng);
        let x = random_tensor(&[5, d], &mut rng);
        let (expect, _) = attention_reference(&x, &w, 2);

        let tape = Tape::new();
        let xv = tape.constant(x);
        let av = AttentionVars {
            wq: tape.constant(w.wq.clone()),
            wk: tape.constant(w.wk.clone()),
            wv: tape.constant(w.wv.clone()),
            wo: tape.constant(w.wo.clone()),
            bq: tape.constant(w.bq.clone()),
            bk: tape.constant(w.bk.clone()),
            bv: tape.constant(w.bv.clone()),
            bo: tape.constant(w.bo.clone()),
        };
        let y = attention_op(&tape, xv, &av, 2);
        let scale = max_abs(expect.data()).max(1e-300);
        assert!(max_abs_diff(tape.value(y).data(), expect.data()) < 1e-12 * scale);
    }

    #[test]
    fn attention_gradcheck() {
        // weights at the fan-in init scale; saturated softmax rows would
        // push true gradients below the finite-difference noise floor
        let mut rng = Rng::seed_from(5);
        let d = 4;
        let s = 1.0 / (d as f64).sqrt();
        let scaled = |shape: &[usize], rng: &mut Rng| {
            let t = random_tensor(shape, rng);
            Tensor::from_vec(shape, t.data().iter().map(|v| v * s).collect())
        };
        let inputs = vec![
            random_tensor(&[3, d], &mut rng),
            scaled(&[d, d], &mut rng),
            scaled(&[d, d], &mut rng),
            scaled(&[d, d], &mut rng),
            scaled(&[d, d], &mut rng),
            scaled(&[d], &mut rng),
            scaled(&[d], &mut rng),
            scaled(&[d], &mut rng),
            scaled(&[d], &mut rng),
        ];
        let r = check_fn(
            "attention",
            &inputs,
            |t, v| {
                let av = AttentionVars {
                    wq: v[1],
                    wk: v[2],
                    wv: v[3],
                    wo: v[4],
                    bq: v[5],
                    bk: v[6],
                    bv: v[7],
                    bo: v[8],
                };
                t.sum_all(attention_op(t, v[0], &av, 2))
            },
            DEFAULT_STEP,
            DEFAULT_TOL,
            7,
        )
        .unwrap();
        assert!(r.pass, "max_rel_err = {}", r.max_rel_err);
    }
}
