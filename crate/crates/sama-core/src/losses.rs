//! Training objective and evaluation metrics.
//!
//! The loss is `L_w + lambda_m * L_m + lambda_n * L_n`: weighted position
//! error, velocity error and scale-normalized position error. Metrics add
//! the per-frame similarity-aligned error (Procrustes), PCK and AUC.
//! Millimeters throughout.

use crate::error::SamaError;
use crate::pose::PoseSeq;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Thresholds for AUC: 0..=150 mm in 5 mm steps, 31 points.
pub const AUC_STEPS: usize = 31;
pub const PCK_DEFAULT_THRESHOLD_MM: f64 = 150.0;

fn check_pair(pred: &PoseSeq, gt: &PoseSeq) -> Result<(), SamaError> {
    if pred.frames != gt.frames || pred.joints != gt.joints || pred.dim != gt.dim {
        return Err(SamaError::Shape(format!(
            "prediction [{}][{}][{}] does not match target [{}][{}][{}]",
            pred.frames, pred.joints, pred.dim, gt.frames, gt.joints, gt.dim
        )));
    }
    Ok(())
}

/// Mean weighted per-joint position error.
///
/// `sum_j w_j ||pred_tj - gt_tj|| / sum_j w_j`, averaged over frames.
pub fn weighted_mpjpe(
    pred: &PoseSeq,
    gt: &PoseSeq,
    joint_weights: &[f64],
) -> Result<f64, SamaError> {
    check_pair(pred, gt)?;
    if joint_weights.len() != pred.joints {
        return Err(SamaError::Shape("one weight per joint required".into()));
    }
    if joint_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(SamaError::Config("joint weights must be non-negative".into()));
    }
    let wsum: f64 = joint_weights.iter().sum();
    if wsum <= 0.0 {
        return Err(SamaError::Config("joint weights sum to zero".into()));
    }
    let mut total = 0.0;
    for t in 0..pred.frames {
        let mut frame = 0.0;
        for j in 0..pred.joints {
            let mut sq = 0.0;
            for c in 0..pred.dim {
                let dlt = pred.at(t, j, c) - gt.at(t, j, c);
                sq += dlt * dlt;
            }
            frame += joint_weights[j] * sq.sqrt();
        }
        total += frame / wsum;
    }
    Ok(total / pred.frames as f64)
}

/// Plain MPJPE: uniform weights.
pub fn mpjpe(pred: &PoseSeq, gt: &PoseSeq) -> Result<f64, SamaError> {
    weighted_mpjpe(pred, gt, &vec![1.0; pred.joints])
}

/// MPJPE of first-order temporal differences.
pub fn mpjve(pred: &PoseSeq, gt: &PoseSeq) -> Result<f64, SamaError> {
    check_pair(pred, gt)?;
    if pred.frames < 2 {
        return Err(SamaError::Shape("velocity error needs at least 2 frames".into()));
    }
    let mut total = 0.0;
    for t in 0..pred.frames - 1 {
        for j in 0..pred.joints {
            let mut sq = 0.0;
            for c in 0..pred.dim {
                let vp = pred.at(t + 1, j, c) - pred.at(t, j, c);
                let vg = gt.at(t + 1, j, c) - gt.at(t, j, c);
                sq += (vp - vg) * (vp - vg);
            }
            total += sq.sqrt();
        }
    }
    Ok(total / ((pred.frames - 1) * pred.joints) as f64)
}

/// MPJPE after the least-squares optimal global rescale of the prediction,
/// `s* = <pred, gt> / <pred, pred>` over the whole sequence.
pub fn n_mpjpe(pred: &PoseSeq, gt: &PoseSeq) -> Result<f64, SamaError> {
    check_pair(pred, gt)?;
    let pp: f64 = pred.data().iter().map(|v| v * v).sum();
    if pp <= 0.0 {
        return Err(SamaError::Config(
            "scale alignment undefined for an all-zero prediction".into(),
        ));
    }
    let pg: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| a * b)
        .sum();
    let s = pg / pp;
    let scaled = PoseSeq::new(
        pred.frames,
        pred.joints,
        pred.dim,
        pred.data().iter().map(|v| v * s).collect(),
    )?;
    mpjpe(&scaled, gt)
}

/// Outcome of the per-frame similarity alignment.
#[derive(Clone, Debug)]
pub struct PmpjpeResult {
    pub value: f64,
    /// Frames where the covariance was rank-deficient and alignment fell
    /// back to translation only.
    pub degenerate_frames: usize,
}

/// MPJPE after per-frame similarity alignment (rotation, scale,
/// translation) of the prediction onto the target.
///
/// Orthogonal Procrustes via SVD of the 3x3 cross-covariance, reflection
/// corrected by the determinant sign. Rank-deficient frames fall back to
/// translation-only alignment and are counted in the result.
pub fn p_mpjpe(pred: &PoseSeq, gt: &PoseSeq) -> Result<PmpjpeResult, SamaError> {
    check_pair(pred, gt)?;
    if pred.dim != 3 {
        return Err(SamaError::Shape("similarity alignment expects 3-D poses".into()));
    }
    let n = pred.joints;
    let mut total = 0.0;
    let mut degenerate = 0usize;
    for t in 0..pred.frames {
        let mut mx = [0.0; 3];
        let mut my = [0.0; 3];
        for j in 0..n {
            for c in 0..3 {
                mx[c] += pred.at(t, j, c) / n as f64;
                my[c] += gt.at(t, j, c) / n as f64;
            }
        }
        // cross-covariance H = sum_j (pred_j - mx)(gt_j - my)^T
        let mut h = nalgebra::Matrix3::<f64>::zeros();
        let mut var_p = 0.0;
        for j in 0..n {
            let px = [
                pred.at(t, j, 0) - mx[0],
                pred.at(t, j, 1) - mx[1],
                pred.at(t, j, 2) - mx[2],
            ];
            let gy = [
                gt.at(t, j, 0) - my[0],
                gt.at(t, j, 1) - my[1],
                gt.at(t, j, 2) - my[2],
            ];
            for r in 0..3 {
                for c in 0..3 {
                    h[(r, c)] += px[r] * gy[c];
                }
            }
            var_p += px.iter().map(|v| v * v).sum::<f64>();
        }
        let svd = nalgebra::SVD::new(h, true, true);
        let sigma = svd.singular_values;
        let rank_ok = var_p > 0.0 && sigma[0] > 0.0 && sigma[1] > 1e-12 * sigma[0];
        let mut frame_err = 0.0;
        if rank_ok {
            let u = svd.u.unwrap();
            let v_t = svd.v_t.unwrap();
            // rotation V D U^T maps centered pred onto centered gt;
            // D flips the weakest direction when U V^T is a reflection
            let det = (v_t.transpose() * u.transpose()).determinant();
            let mut d = nalgebra::Matrix3::<f64>::identity();
            if det < 0.0 {
                d[(2, 2)] = -1.0;
            }
            let r = v_t.transpose() * d * u.transpose();
            // optimal scale: trace(D Sigma) / var(pred)
            let trace = sigma[0] + sigma[1] + if det < 0.0 { -sigma[2] } else { sigma[2] };
            let s = trace / var_p;
            for j in 0..n {
                let px = nalgebra::Vector3::new(
                    pred.at(t, j, 0) - mx[0],
                    pred.at(t, j, 1) - mx[1],
                    pred.at(t, j, 2) - mx[2],
                );
                let aligned = r * px * s;
                let mut sq = 0.0;
                for c in 0..3 {
                    let dlt = aligned[c] + my[c] - gt.at(t, j, c);
                    sq += dlt * dlt;
                }
                frame_err += sq.sqrt();
            }
        } else {
            degenerate += 1;
            for j in 0..n {
                let mut sq = 0.0;
                for c in 0..3 {
                    let dlt = (pred.at(t, j, c) - mx[c]) + my[c] - gt.at(t, j, c);
                    sq += dlt * dlt;
                }
                frame_err += sq.sqrt();
            }
        }
        total += frame_err / n as f64;
    }
    Ok(PmpjpeResult {
        value: total / pred.frames as f64,
        degenerate_frames: degenerate,
    })
}

/// Fraction of joints within the threshold (percent) and the mean PCK over
/// thresholds 0..=150 mm in 5 mm steps.
pub fn pck_auc(pred: &PoseSeq, gt: &PoseSeq, threshold_mm: f64) -> Result<(f64, f64), SamaError> {
    check_pair(pred, gt)?;
    let mut errors = Vec::with_capacity(pred.frames * pred.joints);
    for t in 0..pred.frames {
        for j in 0..pred.joints {
            let mut sq = 0.0;
            for c in 0..pred.dim {
                let dlt = pred.at(t, j, c) - gt.at(t, j, c);
                sq += dlt * dlt;
            }
            errors.push(sq.sqrt());
        }
    }
    let frac_within = |thr: f64| -> f64 {
        errors.iter().filter(|&&e| e <= thr).count() as f64 / errors.len() as f64
    };
    let pck = 100.0 * frac_within(threshold_mm);
    let mut auc = 0.0;
    for k in 0..AUC_STEPS {
        auc += frac_within(5.0 * k as f64);
    }
    Ok((pck, 100.0 * auc / AUC_STEPS as f64))
}

/// Loss weights; `lambda_m` scales the velocity term, `lambda_n` the
/// scale-normalized term.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_m: 20.0,
            lambda_n: 0.5,
        }
    }
}

/// Total training loss on plain values.
pub fn total_loss(
    pred: &PoseSeq,
    gt: &PoseSeq,
    joint_weights: &[f64],
    w: LossWeights,
) -> Result<f64, SamaError> {
    let lw = weighted_mpjpe(pred, gt, joint_weights)?;
    let lm = mpjve(pred, gt)?;
    let ln = n_mpjpe(pred, gt)?;
    Ok(lw + w.lambda_m * lm + w.lambda_n * ln)
}

// ---- tape versions (differentiable w.r.t. the prediction) ----

/// Weighted position error on the tape. `pred: [T*N][3]` (a forward
/// output), `gt` the matching target.
pub fn weighted_mpjpe_loss(
    tape: &Tape,
    pred: Var,
    gt: &PoseSeq,
    joint_weights: &[f64],
) -> Var {
    let t_len = gt.frames;
    let n = gt.joints;
    let gt_var = tape.constant(Tensor::from_vec(&[t_len * n, 3], gt.data().to_vec()));
    let diff = tape.sub(pred, gt_var);
    let sq = tape.mul(diff, diff);
    let row_sq = tape.row_sums(sq);
    let errs = tape.sqrt(row_sq);
    let wsum: f64 = joint_weights.iter().sum();
    let tiled: Vec<f64> = (0..t_len * n)
        .map(|i| joint_weights[i % n] / wsum)
        .collect();
    let wv = tape.constant(Tensor::from_vec(&[t_len * n], tiled));
    let weighted = tape.dot(errs, wv);
    tape.scale(weighted, 1.0 / t_len as f64)
}

/// Velocity error on the tape.
pub fn mpjve_loss(tape: &Tape, pred: Var, gt: &PoseSeq) -> Var {
    let t_len = gt.frames;
    let n = gt.joints;
    assert!(t_len >= 2, "velocity loss needs at least 2 frames");
    let head = tape.slice_rows(pred, n, (t_len - 1) * n);
    let tail = tape.slice_rows(pred, 0, (t_len - 1) * n);
    let vel_pred = tape.sub(head, tail);
    let mut vel_gt = Vec::with_capacity((t_len - 1) * n * 3);
    for t in 0..t_len - 1 {
        for j in 0..n {
            for c in 0..3 {
                vel_gt.push(gt.at(t + 1, j, c) - gt.at(t, j, c));
            }
        }
    }
    let gt_var = tape.constant(Tensor::from_vec(&[(t_len - 1) * n, 3], vel_gt));
    let diff = tape.sub(vel_pred, gt_var);
    let sq = tape.mul(diff, diff);
    let errs = tape.sqrt(tape.row_sums(sq));
    tape.mean_all(errs)
}

/// Scale-normalized position error on the tape; the optimal scale is part
/// of the computation graph.
pub fn n_mpjpe_loss(tape: &Tape, pred: Var, gt: &PoseSeq) -> Var {
    let t_len = gt.frames;
    let n = gt.joints;
    let gt_var = tape.constant(Tensor::from_vec(&[t_len * n, 3], gt.data().to_vec()));
    let pg = tape.dot(pred, gt_var);
    let pp = tape.dot(pred, pred);
    let s = tape.div(pg, pp);
    let scaled = tape.mul_scalar(pred, s);
    let diff = tape.sub(scaled, gt_var);
    let sq = tape.mul(diff, diff);
    let errs = tape.sqrt(tape.row_sums(sq));
    tape.mean_all(errs)
}

/// `L_w + lambda_m L_m + lambda_n L_n` on the tape.
pub fn total_loss_on_tape(
    tape: &Tape,
    pred: Var,
    gt: &PoseSeq,
    joint_weights: &[f64],
    w: LossWeights,
) -> Var {
    let lw = weighted_mpjpe_loss(tape, pred, gt, joint_weights);
    let lm = mpjve_loss(tape, pred, gt);
    let ln = n_mpjpe_loss(tape, pred, gt);
    let lm_scaled = tape.scale(lm, w.lambda_m);
    let ln_scaled = tape.scale(ln, w.lambda_n);
    tape.add(tape.add(lw, lm_scaled), ln_scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, DEFAULT_STEP, DEFAULT_TOL};
    use crate::rng::Rng;

    fn random_pose(t_len: usize, n: usize, scale: f64, seed: u64) -> PoseSeq {
        let mut rng = Rng::seed_from(seed);
        PoseSeq::new(
            t_len,
            n,
            3,
            (0..t_len * n * 3)
                .map(|_| rng.uniform_in(-scale, scale))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_error_for_identical_poses() {
        let p = random_pose(4, 17, 100.0, 1);
        assert_eq!(mpjpe(&p, &p).unwrap(), 0.0);
        assert_eq!(mpjve(&p, &p).unwrap(), 0.0);
        assert!(n_mpjpe(&p, &p).unwrap() < 1e-12);
        assert!(p_mpjpe(&p, &p).unwrap().value < 1e-8);
        let (pck, auc) = pck_auc(&p, &p, PCK_DEFAULT_THRESHOLD_MM).unwrap();
        assert_eq!(pck, 100.0);
        assert_eq!(auc, 100.0);
        let w = vec![1.0; 17];
        assert_eq!(total_loss(&p, &p, &w, LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn single_offset_joint_hand_value() {
        // one of 17 joints off by (3,4,0): norm 5, uniform mean 5/17
        let gt = PoseSeq::zeros(1, 17, 3);
        let mut pred = gt.clone();
        pred.set(0, 4, 0, 3.0);
        pred.set(0, 4, 1, 4.0);
        let w = vec![1.0; 17];
        let v = weighted_mpjpe(&pred, &gt, &w).unwrap();
        assert!((v - 5.0 / 17.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_weights_equal_plain_mpjpe() {
        let pred = random_pose(5, 9, 50.0, 2);
        let gt = random_pose(5, 9, 50.0, 3);
        let w = vec![1.0; 9];
        let a = weighted_mpjpe(&pred, &gt, &w).unwrap();
        let b = mpjpe(&pred, &gt).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let p = random_pose(2, 3, 1.0, 4);
        let w = vec![1.0, -0.5, 1.0];
        assert!(weighted_mpjpe(&p, &p, &w).is_err());
    }

    #[test]
    fn velocity_error_ignores_constant_offset() {
        let gt = random_pose(6, 5, 80.0, 5);
        let mut pred = gt.clone();
        for v in pred.data_mut().iter_mut() {
            *v += 42.0;
        }
        assert!(mpjve(&pred, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn velocity_error_of_linear_drift() {
        // pred_t = gt_t + t * (1, 0, 0): every velocity differs by 1
        let gt = random_pose(5, 4, 30.0, 6);
        let mut pred = gt.clone();
        for t in 0..5 {
            for j in 0..4 {
                let v = pred.at(t, j, 0) + t as f64;
                pred.set(t, j, 0, v);
            }
        }
        assert!((mpjve(&pred, &gt).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn velocity_needs_two_frames() {
        let p = random_pose(1, 3, 1.0, 7);
        assert!(mpjve(&p, &p).is_err());
    }

    #[test]
    fn scale_error_removes_pure_scaling() {
        let gt = random_pose(3, 8, 60.0, 8);
        let pred = PoseSeq::new(
            3,
            8,
            3,
            gt.data().iter().map(|v| 2.0 * v).collect(),
        )
        .unwrap();
        assert!(n_mpjpe(&pred, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn scale_error_uses_optimal_scale() {
        // n_mpjpe <= mpjpe, and a 1-D sweep over scales never beats s*
        let pred = random_pose(4, 6, 40.0, 9);
        let gt = random_pose(4, 6, 40.0, 10);
        let nv = n_mpjpe(&pred, &gt).unwrap();
        assert!(nv <= mpjpe(&pred, &gt).unwrap() + 1e-12);
        let pp: f64 = pred.data().iter().map(|v| v * v).sum();
        let pg: f64 = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| a * b)
            .sum();
        let s_opt = pg / pp;
        // mean joint error is not quadratic in s, so scan the squared
        // objective that s* optimizes
        let sq_err = |s: f64| -> f64 {
            pred.data()
                .iter()
                .zip(gt.data())
                .map(|(p, g)| (s * p - g) * (s * p - g))
                .sum()
        };
        for k in -10..=10 {
            let s = s_opt + k as f64 * 0.05;
            assert!(sq_err(s_opt) <= sq_err(s) + 1e-9);
        }
    }

    #[test]
    fn procrustes_removes_similarity_transform() {
        // pred = s R gt + t must align back to gt exactly
        let gt = random_pose(3, 10, 70.0, 11);
        let angle = 0.83f64;
        let (sin, cos) = angle.sin_cos();
        // rotation about z, then a tilt about x
        let tilt = 0.4f64;
        let (st, ct) = tilt.sin_cos();
        let s = 1.7;
        let tr = [12.0, -33.0, 5.0];
        let mut pred = gt.clone();
        for t in 0..gt.frames {
            for j in 0..gt.joints {
                let x = gt.at(t, j, 0);
                let y = gt.at(t, j, 1);
                let z = gt.at(t, j, 2);
                let (x1, y1, z1) = (cos * x - sin * y, sin * x + cos * y, z);
                let (x2, y2, z2) = (x1, ct * y1 - st * z1, st * y1 + ct * z1);
                pred.set(t, j, 0, s * x2 + tr[0]);
                pred.set(t, j, 1, s * y2 + tr[1]);
                pred.set(t, j, 2, s * z2 + tr[2]);
            }
        }
        let r = p_mpjpe(&pred, &gt).unwrap();
        assert!(r.value < 1e-8, "residual = {}", r.value);
        assert_eq!(r.degenerate_frames, 0);
    }

    #[test]
    fn alignment_classes_nest() {
        // p_mpjpe <= n_mpjpe <= mpjpe on random pairs
        for seed in 0..100 {
            let pred = random_pose(2, 8, 55.0, 200 + seed);
            let gt = random_pose(2, 8, 55.0, 300 + seed);
            let m = mpjpe(&pred, &gt).unwrap();
            let nm = n_mpjpe(&pred, &gt).unwrap();
            let pm = p_mpjpe(&pred, &gt).unwrap().value;
            assert!(nm <= m + 1e-9, "seed {seed}: {nm} > {m}");
            assert!(pm <= nm + 1e-9, "seed {seed}: {pm} > {nm}");
        }
    }

    #[test]
    fn procrustes_invariant_under_extra_similarity() {
        let pred = random_pose(2, 9, 45.0, 12);
        let gt = random_pose(2, 9, 45.0, 13);
        let base = p_mpjpe(&pred, &gt).unwrap().value;
        // apply another similarity to pred; the aligned error is unchanged
        let mut pred2 = pred.clone();
        let (sin, cos) = 1.21f64.sin_cos();
        for t in 0..pred.frames {
            for j in 0..pred.joints {
                let x = pred.at(t, j, 0);
                let y = pred.at(t, j, 1);
                let z = pred.at(t, j, 2);
                pred2.set(t, j, 0, 0.6 * (cos * x - sin * z) + 7.0);
                pred2.set(t, j, 1, 0.6 * y - 3.0);
                pred2.set(t, j, 2, 0.6 * (sin * x + cos * z) + 11.0);
            }
        }
        let moved = p_mpjpe(&pred2, &gt).unwrap().value;
        assert!((base - moved).abs() < 1e-8);
    }

    #[test]
    fn degenerate_frame_falls_back_to_translation() {
        // all predicted joints coincide: rank-0 covariance
        let gt = random_pose(1, 6, 50.0, 14);
        let pred = PoseSeq::new(1, 6, 3, [1.0, 2.0, 3.0].repeat(6).to_vec()).unwrap();
        let r = p_mpjpe(&pred, &gt).unwrap();
        assert_eq!(r.degenerate_frames, 1);
        assert!(r.value.is_finite());
    }

    #[test]
    fn pck_auc_trivial_and_grid_cases() {
        let gt = PoseSeq::zeros(1, 4, 3);
        // all errors exactly 200 mm
        let far = PoseSeq::new(1, 4, 3, [200.0, 0.0, 0.0].repeat(4).to_vec()).unwrap();
        let (pck, auc) = pck_auc(&far, &gt, 150.0).unwrap();
        assert_eq!(pck, 0.0);
        assert_eq!(auc, 0.0);
        // all errors exactly 75 mm: PCK@150 = 100, AUC counts the grid
        // points at or above 75 (16 of 31)
        let mid = PoseSeq::new(1, 4, 3, [75.0, 0.0, 0.0].repeat(4).to_vec()).unwrap();
        let (pck, auc) = pck_auc(&mid, &gt, 150.0).unwrap();
        assert_eq!(pck, 100.0);
        assert!((auc - 100.0 * 16.0 / 31.0).abs() < 1e-12);
    }

    #[test]
    fn loss_weights_arithmetic() {
        // components (1.0, 0.1, 0.8) combine to 1.0 + 20*0.1 + 0.5*0.8 = 3.4
        let w = LossWeights::default();
        let combined = 1.0 + w.lambda_m * 0.1 + w.lambda_n * 0.8;
        assert!((combined - 3.4).abs() < 1e-12);
    }

    #[test]
    fn zero_lambdas_reduce_to_weighted_mpjpe() {
        let pred = random_pose(3, 5, 20.0, 15);
        let gt = random_pose(3, 5, 20.0, 16);
        let w = vec![1.0; 5];
        let total = total_loss(
            &pred,
            &gt,
            &w,
            LossWeights {
                lambda_m: 0.0,
                lambda_n: 0.0,
            },
        )
        .unwrap();
        assert!((total - weighted_mpjpe(&pred, &gt, &w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tape_losses_match_pure_values() {
        let pred = random_pose(4, 6, 30.0, 17);
        let gt = random_pose(4, 6, 30.0, 18);
        let w = vec![1.0; 6];
        let tape = Tape::new();
        let pv = tape.constant(Tensor::from_vec(&[24, 3], pred.data().to_vec()));
        let lw = tape.value(weighted_mpjpe_loss(&tape, pv, &gt, &w)).scalar_value();
        let lm = tape.value(mpjve_loss(&tape, pv, &gt)).scalar_value();
        let ln = tape.value(n_mpjpe_loss(&tape, pv, &gt)).scalar_value();
        let lt = tape
            .value(total_loss_on_tape(&tape, pv, &gt, &w, LossWeights::default()))
            .scalar_value();
        assert!((lw - weighted_mpjpe(&pred, &gt, &w).unwrap()).abs() < 1e-10);
        assert!((lm - mpjve(&pred, &gt).unwrap()).abs() < 1e-10);
        assert!((ln - n_mpjpe(&pred, &gt).unwrap()).abs() < 1e-10);
        assert!(
            (lt - total_loss(&pred, &gt, &w, LossWeights::default()).unwrap()).abs() < 1e-9
        );
    }

    #[test]
    fn total_loss_gradcheck_wrt_prediction() {
        let gt = random_pose(3, 4, 2.0, 19);
        let pred0 = random_pose(3, 4, 2.0, 20);
        let w = vec![1.0, 0.5, 2.0, 1.0];
        let r = check_fn(
            "total_loss",
            &[Tensor::from_vec(&[12, 3], pred0.data().to_vec())],
            |t, v| total_loss_on_tape(t, v[0], &gt, &w, LossWeights::default()),
            DEFAULT_STEP,
            DEFAULT_TOL,
            21,
        )
        .unwrap();
        assert!(r.pass, "max_rel_err = {}", r.max_rel_err);
    }
}
