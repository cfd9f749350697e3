//! Training loop, evaluation, and the per-joint linear reference model.

use crate::config::ModelConfig;
use crate::data::{random_clips, strided_clips, take_clip, Sequence};
use crate::error::SamaError;
use crate::losses::{self, LossWeights};
use crate::network::SamaModel;
use crate::optim::AdamW;
use crate::pose::PoseSeq;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_mpjpe: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Aggregate evaluation metrics over a dataset.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Metrics {
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub n_mpjpe: f64,
    pub mpjve: f64,
    pub pck: f64,
    pub auc: f64,
    pub degenerate_frames: usize,
    pub clips: usize,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs every strided clip through `predict` and averages the metrics.
pub fn evaluate_with<F>(
    dataset: &[Sequence],
    clip_len: usize,
    mut predict: F,
) -> Result<Metrics, SamaError>
where
    F: FnMut(&PoseSeq) -> Result<PoseSeq, SamaError>,
{
    let clips = strided_clips(dataset, clip_len, clip_len);
    if clips.is_empty() {
        return Err(SamaError::Data(format!(
            "no clips of length {clip_len} available for evaluation"
        )));
    }
    let mut v_mpjpe = Vec::new();
    let mut v_p = Vec::new();
    let mut v_n = Vec::new();
    let mut v_vel = Vec::new();
    let mut v_pck = Vec::new();
    let mut v_auc = Vec::new();
    let mut degenerate = 0;
    for clip in &clips {
        let (input, target) = take_clip(dataset, *clip, clip_len);
        let target =
            target.ok_or_else(|| SamaError::Data("evaluation needs 3-D targets".into()))?;
        let pred = predict(&input)?;
        v_mpjpe.push(losses::mpjpe(&pred, &target)?);
        let p = losses::p_mpjpe(&pred, &target)?;
        degenerate += p.degenerate_frames;
        v_p.push(p.value);
        v_n.push(losses::n_mpjpe(&pred, &target)?);
        if clip_len >= 2 {
            v_vel.push(losses::mpjve(&pred, &target)?);
        }
        let (pck, auc) = losses::pck_auc(&pred, &target, losses::PCK_DEFAULT_THRESHOLD_MM)?;
        v_pck.push(pck);
        v_auc.push(auc);
    }
    Ok(Metrics {
        mpjpe: mean(&v_mpjpe),
        p_mpjpe: mean(&v_p),
        n_mpjpe: mean(&v_n),
        mpjve: mean(&v_vel),
        pck: mean(&v_pck),
        auc: mean(&v_auc),
        degenerate_frames: degenerate,
        clips: clips.len(),
    })
}

/// Evaluates a model over a dataset.
pub fn evaluate_model(
    model: &SamaModel,
    dataset: &[Sequence],
    clip_len: usize,
) -> Result<Metrics, SamaError> {
    check_skeleton(model, dataset)?;
    evaluate_with(dataset, clip_len, |input| model.lift(input))
}

pub fn check_skeleton(model: &SamaModel, dataset: &[Sequence]) -> Result<(), SamaError> {
    for seq in dataset {
        if seq.pose2d.joints != model.graph.n_joints {
            return Err(SamaError::Data(format!(
                "sequence {:?} has {} joints, model expects {}",
                seq.id, seq.pose2d.joints, model.graph.n_joints
            )));
        }
    }
    Ok(())
}

/// Trains in place; per-epoch log carries train loss and held-out MPJPE.
///
/// Deterministic for a given config seed: the clip schedule derives from
/// it and batches are accumulated in order.
pub fn train_model(
    model: &mut SamaModel,
    train_data: &[Sequence],
    val_data: &[Sequence],
    mut on_epoch: Option<&mut dyn FnMut(&EpochLog)>,
) -> Result<TrainOutcome, SamaError> {
    check_skeleton(model, train_data)?;
    check_skeleton(model, val_data)?;
    let cfg = model.config.clone();
    let weights = LossWeights {
        lambda_m: cfg.lambda_m,
        lambda_n: cfg.lambda_n,
    };
    let joint_weights = vec![1.0; model.graph.n_joints];
    let mut opt = AdamW::new(&model.store, cfg.learning_rate, cfg.weight_decay);
    let mut clip_rng = Rng::derive(cfg.seed, "trainer.clips");
    let clips_per_epoch = if cfg.clips_per_epoch > 0 {
        cfg.clips_per_epoch
    } else {
        train_data.len().max(1)
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let clips = random_clips(train_data, cfg.clip_len, clips_per_epoch, &mut clip_rng)?;
        let mut epoch_losses = Vec::new();
        for batch in clips.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let mut batch_loss = None;
            for clip in batch {
                let (input, target) = take_clip(train_data, *clip, cfg.clip_len);
                let target = target
                    .ok_or_else(|| SamaError::Data("training needs 3-D targets".into()))?;
                let pred = model.forward_on_tape(&tape, &input)?;
                let loss =
                    losses::total_loss_on_tape(&tape, pred, &target, &joint_weights, weights);
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss),
                });
            }
            let total = tape.scale(batch_loss.expect("non-empty batch"), 1.0 / batch.len() as f64);
            let loss_value = tape.value(total).scalar_value();
            if !loss_value.is_finite() {
                return Err(SamaError::NonFinite(format!("loss at epoch {epoch}")));
            }
            epoch_losses.push(loss_value);
            model.store.zero_grads();
            let grads = tape.backward(total, Tensor::scalar(1.0))?;
            grads.accumulate_into(&mut model.store);
            opt.step(&mut model.store);
        }
        let train_loss = mean(&epoch_losses);
        if epoch == 0 {
            initial_loss = train_loss;
        }
        let eval_mpjpe = evaluate_model(model, val_data, cfg.clip_len)?.mpjpe;
        let entry = EpochLog {
            epoch,
            train_loss,
            eval_mpjpe,
        };
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&entry);
        }
        log.push(entry);
    }
    let final_loss = log.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    Ok(TrainOutcome {
        log,
        initial_loss,
        final_loss,
    })
}

/// Builds the four ablation variants of one base configuration.
pub fn ablation_variants(base: &ModelConfig) -> [(&'static str, ModelConfig); 4] {
    let mut vanilla = base.clone();
    vanilla.ssi_fusion = false;
    vanilla.msm_motion = false;
    let mut ssi_only = base.clone();
    ssi_only.msm_motion = false;
    let mut msm_only = base.clone();
    msm_only.ssi_fusion = false;
    [
        ("vanilla_ssd", vanilla),
        ("ssi_only", ssi_only),
        ("msm_only", msm_only),
        ("full", base.clone()),
    ]
}

/// Per-joint affine 2D-to-3D least-squares reference: fits
/// `[u, v, 1] -> (x, y, z)` per joint on the training clips and reports
/// its held-out MPJPE under the same evaluation protocol.
pub fn linear_baseline_mpjpe(
    train_data: &[Sequence],
    val_data: &[Sequence],
    clip_len: usize,
) -> Result<f64, SamaError> {
    let n_joints = train_data
        .first()
        .map(|s| s.pose2d.joints)
        .ok_or_else(|| SamaError::Data("empty training set".into()))?;
    // accumulate normal equations per joint
    let mut xtx = vec![nalgebra::Matrix3::<f64>::zeros(); n_joints];
    let mut xty = vec![nalgebra::Matrix3::<f64>::zeros(); n_joints];
    for clip in strided_clips(train_data, clip_len, clip_len) {
        let (input, target) = take_clip(train_data, clip, clip_len);
        let target = target.ok_or_else(|| SamaError::Data("baseline needs targets".into()))?;
        for t in 0..clip_len {
            for j in 0..n_joints {
                let row = nalgebra::Vector3::new(input.at(t, j, 0), input.at(t, j, 1), 1.0);
                xtx[j] += row * row.transpose();
                let y = nalgebra::Vector3::new(
                    target.at(t, j, 0),
                    target.at(t, j, 1),
                    target.at(t, j, 2),
                );
                xty[j] += row * y.transpose();
            }
        }
    }
    let wmap: Vec<nalgebra::Matrix3<f64>> = (0..n_joints)
        .map(|j| {
            // ridge floor keeps degenerate joints solvable
            let reg = xtx[j] + nalgebra::Matrix3::identity() * 1e-9;
            reg.try_inverse().unwrap_or_else(nalgebra::Matrix3::zeros) * xty[j]
        })
        .collect();
    let metrics = evaluate_with(val_data, clip_len, |input| {
        let mut pred = PoseSeq::zeros(input.frames, input.joints, 3);
        for t in 0..input.frames {
            for j in 0..input.joints {
                let row = nalgebra::Vector3::new(input.at(t, j, 0), input.at(t, j, 1), 1.0);
                let y = wmap[j].transpose() * row;
                for c in 0..3 {
                    pred.set(t, j, c, y[c]);
                }
            }
        }
        Ok(pred)
    })?;
    Ok(metrics.mpjpe)
}
