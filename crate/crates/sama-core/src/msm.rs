//! Motion-adaptive state modulator: a temporal scan over one joint's
//! trajectory whose timescale is a function of adjacent-frame features.
//!
//! `delta_t = softplus(S(x_t, x_{t-1}))` with a zero frame padded on the
//! left, so `delta_0` depends on `x_0` alone. A larger timescale shrinks
//! `alpha_t = exp(delta_t * a)` (a < 0), weakening the previous state
//! relative to the current input. B and C remain functions of `x_t` alone.

use crate::config::MsmVariant;
use crate::error::SamaError;
use crate::ssi::SelectiveVars;
use crate::ssm::{
    observe_op, scan_recurrent, selective_project_with_delta, ssd_states_op, zoh_alpha_op,
    zoh_bbar_op, SelectiveWeights,
};
use crate::tape::{softplus, Tape, Var};
use crate::tensor::Tensor;

/// Weights of the motion-aware timescale function.
///
/// `w_prev` is the previous-frame tap (the first half of the linear
/// variant's matrix); `None` disables the motion path entirely, reducing
/// the timescale to the plain per-token form `softplus(w_curr x_t + bias)`.
#[derive(Clone, Debug)]
pub struct MotionWeights {
    pub variant: MsmVariant,
    /// `[1][d]` tap on `x_{t-1}`.
    pub w_prev: Option<Tensor>,
    /// `[1][d]` tap on `x_t`.
    pub w_curr: Tensor,
    pub bias: f64,
}

/// Timescales from adjacent-frame features, `[T][d] -> [T]`, all positive.
pub fn motion_delta(x: &Tensor, w: &MotionWeights) -> Result<Vec<f64>, SamaError> {
    let t_len = x.rows();
    let d = x.cols();
    if w.w_curr.numel() != d {
        return Err(SamaError::Shape("motion tap width disagrees with x".into()));
    }
    if let Some(wp) = &w.w_prev {
        if wp.numel() != d {
            return Err(SamaError::Shape("motion tap width disagrees with x".into()));
        }
    }
    let mut delta = vec![0.0; t_len];
    for t in 0..t_len {
        let xt = &x.data()[t * d..(t + 1) * d];
        let pre = match (&w.w_prev, w.variant) {
            (None, _) => {
                w.bias + w.w_curr.data().iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
            }
            (Some(wp), MsmVariant::PointwiseConv) => {
                // two depthwise taps summed over channels, zero left pad
                let prev_term = if t == 0 {
                    0.0
                } else {
                    let xp = &x.data()[(t - 1) * d..t * d];
                    wp.data().iter().zip(xp).map(|(a, b)| a * b).sum::<f64>()
                };
                let curr_term: f64 =
                    w.w_curr.data().iter().zip(xt).map(|(a, b)| a * b).sum();
                prev_term + curr_term + w.bias
            }
            (Some(wp), MsmVariant::Linear) => {
                // one row over the concatenated [x_{t-1} || x_t]
                let mut acc = 0.0;
                if t > 0 {
                    let xp = &x.data()[(t - 1) * d..t * d];
                    for (a, b) in wp.data().iter().zip(xp) {
                        acc += a * b;
                    }
                }
                for (a, b) in w.w_curr.data().iter().zip(xt) {
                    acc += a * b;
                }
                acc + w.bias
            }
        };
        delta[t] = softplus(pre);
    }
    Ok(delta)
}

/// Reference temporal scan of one joint trajectory, `x: [T][d]`.
pub fn msm_scan(
    x: &Tensor,
    motion: &MotionWeights,
    w: &SelectiveWeights,
) -> Result<Tensor, SamaError> {
    let delta = motion_delta(x, motion)?;
    let params = selective_project_with_delta(x, w, delta)?;
    scan_recurrent(x, &params)
}

/// Tape variables of the timescale function.
#[derive(Clone, Copy)]
pub struct MotionVars {
    pub variant: MsmVariant,
    /// `[1][d]`; `None` disables the motion path.
    pub w_prev: Option<Var>,
    /// `[1][d]`
    pub w_curr: Var,
    /// `[1]`
    pub bias: Var,
}

/// Motion-aware timescale on the tape, `[T][d] -> [T]`.
pub fn motion_delta_op(tape: &Tape, x: Var, mv: &MotionVars) -> Var {
    let rows = tape.shape_of(x)[0];
    let pre = match (mv.w_prev, mv.variant) {
        (None, _) => tape.linear(x, mv.w_curr, Some(mv.bias)),
        (Some(wp), MsmVariant::PointwiseConv) => {
            let prev = tape.shift_rows_down(x);
            let prev_term = tape.linear(prev, wp, None);
            let curr_term = tape.linear(x, mv.w_curr, Some(mv.bias));
            tape.add(prev_term, curr_term)
        }
        (Some(wp), MsmVariant::Linear) => {
            let prev = tape.shift_rows_down(x);
            let cat = tape.concat_cols(&[prev, x]);
            let w_full = tape.concat_cols(&[wp, mv.w_curr]);
            tape.linear(cat, w_full, Some(mv.bias))
        }
    };
    let flat = tape.reshape(pre, &[rows]);
    tape.softplus(flat)
}

/// Temporal scan of one trajectory on the tape; the `w_delta`/`delta_bias`
/// entries of `sv` are unused, the timescale comes from `mv`.
pub fn msm_scan_op(tape: &Tape, x: Var, mv: &MotionVars, sv: &SelectiveVars) -> Var {
    let delta = motion_delta_op(tape, x, mv);
    let alpha = zoh_alpha_op(tape, delta, sv.a_log);
    let b_raw = tape.linear(x, sv.wb, Some(sv.bb));
    let b_bar = zoh_bbar_op(tape, delta, sv.a_log, b_raw);
    let c = tape.linear(x, sv.wc, Some(sv.bc));
    let h = ssd_states_op(tape, x, alpha, b_bar);
    let y = observe_op(tape, h, c);
    match sv.d_skip {
        Some(ds) => tape.add(y, tape.mul_cols(x, ds)),
        None => y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, random_tensor, DEFAULT_STEP, DEFAULT_TOL};
    use crate::rng::Rng;
    use crate::ssm::{selective_project, SsdParams};
    use crate::tensor::{max_abs, max_abs_diff};

    fn random_scan_weights(d: usize, n: usize, rng: &mut Rng) -> SelectiveWeights {
        SelectiveWeights {
            wb: random_tensor(&[n, d], rng),
            bb: random_tensor(&[n], rng),
            wc: random_tensor(&[n, d], rng),
            bc: random_tensor(&[n], rng),
            w_delta: Tensor::zeros(&[1, d]),
            delta_bias: 0.0,
            a_log: rng.uniform_in(-0.5, 0.5),
            d_skip: None,
        }
    }

    #[test]
    fn zero_weights_give_constant_delta() {
        let mut rng = Rng::seed_from(1);
        let x = random_tensor(&[6, 3], &mut rng);
        for variant in [MsmVariant::PointwiseConv, MsmVariant::Linear] {
            let w = MotionWeights {
                variant,
                w_prev: Some(Tensor::zeros(&[1, 3])),
                w_curr: Tensor::zeros(&[1, 3]),
                bias: 0.4,
            };
            let delta = motion_delta(&x, &w).unwrap();
            for &d in &delta {
                assert!((d - softplus(0.4)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn first_step_ignores_future_and_uses_zero_pad() {
        let mut rng = Rng::seed_from(2);
        let d = 4;
        let w = MotionWeights {
            variant: MsmVariant::PointwiseConv,
            w_prev: Some(random_tensor(&[1, d], &mut rng)),
            w_curr: random_tensor(&[1, d], &mut rng),
            bias: -0.2,
        };
        let x1 = random_tensor(&[5, d], &mut rng);
        let mut x2 = x1.clone();
        for v in x2.data_mut()[d..].iter_mut() {
            *v += 1.0; // change every frame except the first
        }
        let d1 = motion_delta(&x1, &w).unwrap();
        let d2 = motion_delta(&x2, &w).unwrap();
        assert_eq!(d1[0], d2[0]);
        // and delta_0 is exactly the current-frame term
        let expect: f64 = w
            .w_curr
            .data()
            .iter()
            .zip(&x1.data()[..d])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + w.bias;
        assert!((d1[0] - softplus(expect)).abs() < 1e-15);
    }

    #[test]
    fn static_trajectory_with_opposed_taps_reduces_to_bias() {
        // constant x, w_prev = -w_curr: the motion terms cancel for t >= 1
        let mut rng = Rng::seed_from(3);
        let d = 3;
        let w_curr = random_tensor(&[1, d], &mut rng);
        let w_prev = Tensor::from_vec(&[1, d], w_curr.data().iter().map(|v| -v).collect());
        let w = MotionWeights {
            variant: MsmVariant::PointwiseConv,
            w_prev: Some(w_prev),
            w_curr,
            bias: 0.1,
        };
        let v = [0.7, -0.3, 1.9];
        let x = Tensor::from_vec(&[5, d], v.repeat(5));
        let delta = motion_delta(&x, &w).unwrap();
        for &dt in &delta[1..] {
            assert!((dt - softplus(0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_always_positive() {
        let mut rng = Rng::seed_from(4);
        for _ in 0..50 {
            let t_len = 1 + rng.below(8);
            let d = 1 + rng.below(6);
            let w = MotionWeights {
                variant: if rng.below(2) == 0 {
                    MsmVariant::PointwiseConv
                } else {
                    MsmVariant::Linear
                },
                w_prev: Some(random_tensor(&[1, d], &mut rng)),
                w_curr: random_tensor(&[1, d], &mut rng),
                bias: rng.uniform_in(-5.0, 5.0),
            };
            let x = random_tensor(&[t_len, d], &mut rng);
            for dt in motion_delta(&x, &w).unwrap() {
                assert!(dt > 0.0);
            }
        }
    }

    #[test]
    fn constant_delta_matches_plain_selective_scan() {
        // motion weights zeroed: output equals selective_project with the
        // same constant timescale
        let mut rng = Rng::seed_from(5);
        let (t_len, d, n) = (7, 4, 3);
        let mut w = random_scan_weights(d, n, &mut rng);
        w.delta_bias = 0.3;
        let motion = MotionWeights {
            variant: MsmVariant::PointwiseConv,
            w_prev: Some(Tensor::zeros(&[1, d])),
            w_curr: Tensor::zeros(&[1, d]),
            bias: 0.3,
        };
        let x = random_tensor(&[t_len, d], &mut rng);
        let y = msm_scan(&x, &motion, &w).unwrap();
        let params = selective_project(&x, &w).unwrap();
        let expect = scan_recurrent(&x, &params).unwrap();
        let scale = max_abs(expect.data()).max(1e-300);
        assert!(max_abs_diff(y.data(), expect.data()) < 1e-14 * scale);
    }

    #[test]
    fn single_frame_has_no_history_term() {
        let mut rng = Rng::seed_from(6);
        let (d, n) = (3, 2);
        let w = random_scan_weights(d, n, &mut rng);
        let motion = MotionWeights {
            variant: MsmVariant::PointwiseConv,
            w_prev: Some(random_tensor(&[1, d], &mut rng)),
            w_curr: random_tensor(&[1, d], &mut rng),
            bias: 0.2,
        };
        let x = random_tensor(&[1, d], &mut rng);
        let y = msm_scan(&x, &motion, &w).unwrap();
        // y_0 = c_0 . (x_0 (x) b_bar_0) per channel
        let delta = motion_delta(&x, &motion).unwrap();
        let params = selective_project_with_delta(&x, &w, delta).unwrap();
        for i in 0..d {
            let mut expect = 0.0;
            for j in 0..n {
                expect += x.data()[i] * params.b.at2(0, j) * params.c.at2(0, j);
            }
            assert!((y.data()[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_literal_per_step_oracle() {
        // transcribe the pipeline step by step for both variants
        let mut rng = Rng::seed_from(7);
        for trial in 0..20 {
            let t_len = 1 + rng.below(16);
            let d = 1 + rng.below(6);
            let n = 1 + rng.below(4);
            let variant = if trial % 2 == 0 {
                MsmVariant::PointwiseConv
            } else {
                MsmVariant::Linear
            };
            let motion = MotionWeights {
                variant,
                w_prev: Some(random_tensor(&[1, d], &mut rng)),
                w_curr: random_tensor(&[1, d], &mut rng),
                bias: rng.uniform_in(-1.0, 1.0),
            };
            let mut w = random_scan_weights(d, n, &mut rng);
            w.d_skip = Some((0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
            let x = random_tensor(&[t_len, d], &mut rng);
            let y = msm_scan(&x, &motion, &w).unwrap();

            // literal oracle
            let a = -w.a_log.exp();
            let mut h = vec![0.0; d * n];
            let mut expect = vec![0.0; t_len * d];
            for t in 0..t_len {
                let xt: Vec<f64> = (0..d).map(|i| x.at2(t, i)).collect();
                let xprev: Vec<f64> = if t == 0 {
                    vec![0.0; d]
                } else {
                    (0..d).map(|i| x.at2(t - 1, i)).collect()
                };
                let mut pre = motion.bias;
                for i in 0..d {
                    pre += motion.w_prev.as_ref().unwrap().data()[i] * xprev[i];
                    pre += motion.w_curr.data()[i] * xt[i];
                }
                let delta = softplus(pre);
                let alpha = (delta * a).exp();
                let phi = (alpha - 1.0) / a;
                for i in 0..d {
                    for j in 0..n {
                        let mut b_raw = w.bb.data()[j];
                        let mut c = w.bc.data()[j];
                        for k in 0..d {
                            b_raw += w.wb.at2(j, k) * xt[k];
                            c += w.wc.at2(j, k) * xt[k];
                        }
                        h[i * n + j] = alpha * h[i * n + j] + xt[i] * phi * b_raw;
                        expect[t * d + i] += h[i * n + j] * c;
                    }
                    expect[t * d + i] += w.d_skip.as_ref().unwrap()[i] * xt[i];
                }
            }
            let scale = max_abs(&expect).max(1e-300);
            assert!(
                max_abs_diff(y.data(), &expect) < 1e-12 * scale,
                "trial {trial} ({variant:?})"
            );
        }
    }

    #[test]
    fn larger_delta_strictly_lowers_alpha() {
        // d(alpha)/d(delta) = a * alpha < 0 for a < 0
        let mut rng = Rng::seed_from(8);
        for _ in 0..20 {
            let delta = rng.uniform_in(1e-3, 5.0);
            let a = -rng.uniform_in(0.1, 3.0);
            let grad = a * (delta * a).exp();
            assert!(grad < 0.0);
            // forward difference agrees in sign
            let alpha = (delta * a).exp();
            let alpha2 = ((delta + 1e-6) * a).exp();
            assert!(alpha2 < alpha);
        }
    }

    #[test]
    fn tape_version_matches_reference() {
        let mut rng = Rng::seed_from(9);
        for variant in [MsmVariant::PointwiseConv, MsmVariant::Linear] {
            let (t_len, d, n) = (8, 4, 2);
            let motion = MotionWeights {
                variant,
                w_prev: Some(random_tensor(&[1, d], &mut rng)),
                w_curr: random_tensor(&[1, d], &mut rng),
                bias: 0.15,
            };
            let w = random_scan_weights(d, n, &mut rng);
            let x = random_tensor(&[t_len, d], &mut rng);
            let reference = msm_scan(&x, &motion, &w).unwrap();

            let tape = Tape::new();
            let xv = tape.constant(x);
            let mv = MotionVars {
                variant,
                w_prev: Some(tape.constant(motion.w_prev.clone().unwrap())),
                w_curr: tape.constant(motion.w_curr.clone()),
                bias: tape.constant(Tensor::scalar(motion.bias)),
            };
            let sv = SelectiveVars {
                wb: tape.constant(w.wb.clone()),
                bb: tape.constant(w.bb.clone()),
                wc: tape.constant(w.wc.clone()),
                bc: tape.constant(w.bc.clone()),
                w_delta: tape.constant(Tensor::zeros(&[1, d])),
                delta_bias: tape.constant(Tensor::scalar(0.0)),
                a_log: tape.constant(Tensor::scalar(w.a_log)),
                d_skip: None,
            };
            let y = msm_scan_op(&tape, xv, &mv, &sv);
            let scale = max_abs(reference.data()).max(1e-300);
            assert!(
                max_abs_diff(tape.value(y).data(), reference.data()) < 1e-12 * scale,
                "{variant:?}"
            );
        }
    }

    #[test]
    fn disabled_motion_path_is_plain_token_delta() {
        // w_prev = None must equal the softplus(w_curr x_t + bias) path
        let mut rng = Rng::seed_from(10);
        let d = 5;
        let x = random_tensor(&[6, d], &mut rng);
        let w_curr = random_tensor(&[1, d], &mut rng);
        let disabled = MotionWeights {
            variant: MsmVariant::PointwiseConv,
            w_prev: None,
            w_curr: w_curr.clone(),
            bias: -0.3,
        };
        let delta = motion_delta(&x, &disabled).unwrap();
        for t in 0..6 {
            let pre: f64 = w_curr
                .data()
                .iter()
                .zip(&x.data()[t * d..(t + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                - 0.3;
            assert_eq!(delta[t], softplus(pre));
        }
    }

    #[test]
    fn msm_gradcheck_including_motion_weights() {
        let mut rng = Rng::seed_from(11);
        for (trial, variant) in [
            MsmVariant::PointwiseConv,
            MsmVariant::Linear,
            MsmVariant::PointwiseConv,
        ]
        .into_iter()
        .enumerate()
        {
            let (t_len, d, n) = (5, 3, 2);
            let inputs = vec![
                random_tensor(&[t_len, d], &mut rng), // x
                random_tensor(&[1, d], &mut rng),     // w_prev
                random_tensor(&[1, d], &mut rng),     // w_curr
                Tensor::scalar(0.1),                  // bias
                random_tensor(&[n, d], &mut rng),     // wb
                random_tensor(&[n], &mut rng),        // bb
                random_tensor(&[n, d], &mut rng),     // wc
                random_tensor(&[n], &mut rng),        // bc
                Tensor::scalar(-0.2),                 // a_log
                random_tensor(&[d], &mut rng),        // d_skip
            ];
            let r = check_fn(
                "msm_scan",
                &inputs,
                |t, v| {
                    let mv = MotionVars {
                        variant,
                        w_prev: Some(v[1]),
                        w_curr: v[2],
                        bias: v[3],
                    };
                    let sv = SelectiveVars {
                        wb: v[4],
                        bb: v[5],
                        wc: v[6],
                        bc: v[7],
                        w_delta: v[4], // unused by msm_scan_op
                        delta_bias: v[3],
                        a_log: v[8],
                        d_skip: Some(v[9]),
                    };
                    t.sum_all(msm_scan_op(t, v[0], &mv, &sv))
                },
                DEFAULT_STEP,
                DEFAULT_TOL,
                trial as u64,
            )
            .unwrap();
            assert!(r.pass, "trial {trial}: {}", r.max_rel_err);
            // the motion taps must receive real gradient signal; the check
            // above already probed them against finite differences
        }
    }

    #[test]
    fn scan_params_validate_after_motion_delta() {
        let mut rng = Rng::seed_from(12);
        let (t_len, d, n) = (9, 4, 3);
        let motion = MotionWeights {
            variant: MsmVariant::Linear,
            w_prev: Some(random_tensor(&[1, d], &mut rng)),
            w_curr: random_tensor(&[1, d], &mut rng),
            bias: 0.0,
        };
        let w = random_scan_weights(d, n, &mut rng);
        let x = random_tensor(&[t_len, d], &mut rng);
        let delta = motion_delta(&x, &motion).unwrap();
        let params: SsdParams = selective_project_with_delta(&x, &w, delta).unwrap();
        params.validate().unwrap();
    }
}
