//! The full lifting network: input projection, K alternating spatial and
//! temporal scan layers, K spatial and temporal attention layers, output
//! head. Every sub-block is pre-norm residual: `x + Block(norm(x))`.
//! No positional embeddings anywhere; the scans carry token order.

use std::io::Read;
use std::path::Path;

use crate::attention::{attention_op, AttentionVars};
use crate::config::ModelConfig;
use crate::error::SamaError;
use crate::graph::JointGraph;
use crate::msm::{msm_scan_op, MotionVars};
use crate::param::{Init, ParamId, ParamStore};
use crate::pose::PoseSeq;
use crate::ssi::{adjacency_init, ssi_scan_op, SelectiveVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `softplus(delta_bias) = 0.1` at initialization.
pub const DELTA_BIAS_INIT: f64 = -2.2521684610440907; // ln(e^0.1 - 1)

/// The head works on unit-scale features while targets are root-relative
/// millimeters of magnitude ~1e2; this fixed gain puts the initial output
/// on the target scale so optimization starts in range.
pub const HEAD_OUTPUT_SCALE_MM: f64 = 100.0;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SAMA1";

#[derive(Clone, Debug)]
struct SsiLayerIds {
    gamma: ParamId,
    beta: ParamId,
    adjacency: Option<ParamId>,
    wb: ParamId,
    bb: ParamId,
    wc: ParamId,
    bc: ParamId,
    w_delta: ParamId,
    delta_bias: ParamId,
    a_log: ParamId,
    d_skip: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct MsmLayerIds {
    gamma: ParamId,
    beta: ParamId,
    w_prev: Option<ParamId>,
    w_curr: ParamId,
    m_bias: ParamId,
    wb: ParamId,
    bb: ParamId,
    wc: ParamId,
    bc: ParamId,
    a_log: ParamId,
    d_skip: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct AttnLayerIds {
    gamma1: ParamId,
    beta1: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    gamma2: ParamId,
    beta2: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Which optional paths run in a forward pass. Defaults follow the config;
/// the ablation hooks force paths off without rebuilding the model.
#[derive(Clone, Copy, Debug)]
pub struct ForwardFlags {
    pub ssi_fusion: bool,
    pub msm_motion: bool,
}

/// The assembled model: configuration, skeleton and parameter store.
#[derive(Clone, Debug)]
pub struct SamaModel {
    pub config: ModelConfig,
    pub graph: JointGraph,
    pub store: ParamStore,
    input_w: ParamId,
    input_b: ParamId,
    ssi_layers: Vec<SsiLayerIds>,
    msm_layers: Vec<MsmLayerIds>,
    attn_spatial: Vec<AttnLayerIds>,
    attn_temporal: Vec<AttnLayerIds>,
    head_w: ParamId,
    head_b: ParamId,
}

impl SamaModel {
    pub fn new(config: ModelConfig, graph: JointGraph) -> Result<Self, SamaError> {
        config.validate()?;
        let d = config.dim;
        let n = config.state;
        let mut store = ParamStore::new(config.seed);

        let input_w = store.register("input_proj.w", &[d, 2], Init::UniformFanIn { fan_in: 2 });
        let input_b = store.register("input_proj.b", &[d], Init::Zeros);

        let mut ssi_layers = Vec::with_capacity(config.depth);
        let mut msm_layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let p = format!("layers.{i}.ssi");
            ssi_layers.push(SsiLayerIds {
                gamma: store.register(&format!("{p}.norm.gamma"), &[d], Init::Constant(1.0)),
                beta: store.register(&format!("{p}.norm.beta"), &[d], Init::Zeros),
                adjacency: if config.ssi_fusion {
                    Some(store.register_with_value(&format!("{p}.adj"), adjacency_init(&graph)))
                } else {
                    None
                },
                wb: store.register(&format!("{p}.wb"), &[n, d], Init::UniformFanIn { fan_in: d }),
                bb: store.register(&format!("{p}.bb"), &[n], Init::Zeros),
                wc: store.register(&format!("{p}.wc"), &[n, d], Init::UniformFanIn { fan_in: d }),
                bc: store.register(&format!("{p}.bc"), &[n], Init::Zeros),
                w_delta: store.register(
                    &format!("{p}.w_delta"),
                    &[1, d],
                    Init::UniformFanIn { fan_in: d },
                ),
                delta_bias: store.register(
                    &format!("{p}.delta_bias"),
                    &[1],
                    Init::Constant(DELTA_BIAS_INIT),
                ),
                a_log: store.register(&format!("{p}.a_log"), &[1], Init::Zeros),
                d_skip: if config.d_skip {
                    Some(store.register(&format!("{p}.d_skip"), &[d], Init::Constant(1.0)))
                } else {
                    None
                },
            });
            let p = format!("layers.{i}.msm");
            msm_layers.push(MsmLayerIds {
                gamma: store.register(&format!("{p}.norm.gamma"), &[d], Init::Constant(1.0)),
                beta: store.register(&format!("{p}.norm.beta"), &[d], Init::Zeros),
                w_prev: if config.msm_motion {
                    Some(store.register(
                        &format!("{p}.w_prev"),
                        &[1, d],
                        Init::UniformFanIn { fan_in: 2 * d },
                    ))
                } else {
                    None
                },
                w_curr: store.register(
                    &format!("{p}.w_curr"),
                    &[1, d],
                    Init::UniformFanIn { fan_in: 2 * d },
                ),
                m_bias: store.register(
                    &format!("{p}.bias"),
                    &[1],
                    Init::Constant(DELTA_BIAS_INIT),
                ),
                wb: store.register(&format!("{p}.wb"), &[n, d], Init::UniformFanIn { fan_in: d }),
                bb: store.register(&format!("{p}.bb"), &[n], Init::Zeros),
                wc: store.register(&format!("{p}.wc"), &[n, d], Init::UniformFanIn { fan_in: d }),
                bc: store.register(&format!("{p}.bc"), &[n], Init::Zeros),
                a_log: store.register(&format!("{p}.a_log"), &[1], Init::Zeros),
                d_skip: if config.d_skip {
                    Some(store.register(&format!("{p}.d_skip"), &[d], Init::Constant(1.0)))
                } else {
                    None
                },
            });
        }

        let mut attn_spatial = Vec::with_capacity(config.depth);
        let mut attn_temporal = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            for (axis, layers) in [
                ("spatial", &mut attn_spatial),
                ("temporal", &mut attn_temporal),
            ] {
                let p = format!("attn.{i}.{axis}");
                layers.push(AttnLayerIds {
                    gamma1: store
                        .register(&format!("{p}.norm1.gamma"), &[d], Init::Constant(1.0)),
                    beta1: store.register(&format!("{p}.norm1.beta"), &[d], Init::Zeros),
                    wq: store.register(
                        &format!("{p}.wq"),
                        &[d, d],
                        Init::UniformFanIn { fan_in: d },
                    ),
                    bq: store.register(&format!("{p}.bq"), &[d], Init::Zeros),
                    wk: store.register(
                        &format!("{p}.wk"),
                        &[d, d],
                        Init::UniformFanIn { fan_in: d },
                    ),
                    bk: store.register(&format!("{p}.bk"), &[d], Init::Zeros),
                    wv: store.register(
                        &format!("{p}.wv"),
                        &[d, d],
                        Init::UniformFanIn { fan_in: d },
                    ),
                    bv: store.register(&format!("{p}.bv"), &[d], Init::Zeros),
                    wo: store.register(
                        &format!("{p}.wo"),
                        &[d, d],
                        Init::UniformFanIn { fan_in: d },
                    ),
                    bo: store.register(&format!("{p}.bo"), &[d], Init::Zeros),
                    gamma2: store
                        .register(&format!("{p}.norm2.gamma"), &[d], Init::Constant(1.0)),
                    beta2: store.register(&format!("{p}.norm2.beta"), &[d], Init::Zeros),
                    w1: store.register(
                        &format!("{p}.mlp.w1"),
                        &[2 * d, d],
                        Init::UniformFanIn { fan_in: d },
                    ),
                    b1: store.register(&format!("{p}.mlp.b1"), &[2 * d], Init::Zeros),
                    w2: store.register(
                        &format!("{p}.mlp.w2"),
                        &[d, 2 * d],
                        Init::UniformFanIn { fan_in: 2 * d },
                    ),
                    b2: store.register(&format!("{p}.mlp.b2"), &[d], Init::Zeros),
                });
            }
        }

        let head_w = store.register("head.w", &[3, d], Init::UniformFanIn { fan_in: d });
        let head_b = store.register("head.b", &[3], Init::Zeros);

        Ok(SamaModel {
            config,
            graph,
            store,
            input_w,
            input_b,
            ssi_layers,
            msm_layers,
            attn_spatial,
            attn_temporal,
            head_w,
            head_b,
        })
    }

    pub fn default_flags(&self) -> ForwardFlags {
        ForwardFlags {
            ssi_fusion: self.config.ssi_fusion,
            msm_motion: self.config.msm_motion,
        }
    }

    /// Records the forward pass on `tape`; returns the `[T*N][3]` output.
    pub fn forward_on_tape(
        &self,
        tape: &Tape,
        pose2d: &PoseSeq,
    ) -> Result<Var, SamaError> {
        self.forward_on_tape_with(tape, pose2d, self.default_flags())
    }

    /// Forward with explicit path flags (ablation and reduction testing).
    pub fn forward_on_tape_with(
        &self,
        tape: &Tape,
        pose2d: &PoseSeq,
        flags: ForwardFlags,
    ) -> Result<Var, SamaError> {
        if pose2d.dim != 2 {
            return Err(SamaError::Shape("forward expects 2-D input poses".into()));
        }
        if pose2d.joints != self.graph.n_joints {
            return Err(SamaError::Shape(format!(
                "input has {} joints, model expects {}",
                pose2d.joints, self.graph.n_joints
            )));
        }
        let t_len = pose2d.frames;
        let n_joints = pose2d.joints;
        let tokens = t_len * n_joints;

        let x0 = tape.constant(Tensor::from_vec(&[tokens, 2], pose2d.data().to_vec()));
        let iw = tape.param(&self.store, self.input_w);
        let ib = tape.param(&self.store, self.input_b);
        let mut x = tape.linear(x0, iw, Some(ib));

        // frame-major <-> joint-major permutations
        let to_joint_major: Vec<usize> = (0..tokens)
            .map(|i| {
                let j = i / t_len;
                let t = i % t_len;
                t * n_joints + j
            })
            .collect();
        let to_frame_major: Vec<usize> = (0..tokens)
            .map(|i| {
                let t = i / n_joints;
                let j = i % n_joints;
                j * t_len + t
            })
            .collect();

        for i in 0..self.config.depth {
            x = self.ssi_block(tape, x, i, t_len, n_joints, flags.ssi_fusion);
            x = self.msm_block(
                tape,
                x,
                i,
                t_len,
                n_joints,
                flags.msm_motion,
                &to_joint_major,
                &to_frame_major,
            );
        }
        for i in 0..self.config.depth {
            x = self.attn_block(tape, x, &self.attn_spatial[i], t_len, n_joints, None);
            x = self.attn_block(
                tape,
                x,
                &self.attn_temporal[i],
                t_len,
                n_joints,
                Some((&to_joint_major, &to_frame_major)),
            );
        }

        let hw = tape.param(&self.store, self.head_w);
        let hb = tape.param(&self.store, self.head_b);
        let out = tape.linear(x, hw, Some(hb));
        Ok(tape.scale(out, HEAD_OUTPUT_SCALE_MM))
    }

    fn selective_vars(
        &self,
        tape: &Tape,
        wb: ParamId,
        bb: ParamId,
        wc: ParamId,
        bc: ParamId,
        w_delta: ParamId,
        delta_bias: ParamId,
        a_log: ParamId,
        d_skip: Option<ParamId>,
    ) -> SelectiveVars {
        SelectiveVars {
            wb: tape.param(&self.store, wb),
            bb: tape.param(&self.store, bb),
            wc: tape.param(&self.store, wc),
            bc: tape.param(&self.store, bc),
            w_delta: tape.param(&self.store, w_delta),
            delta_bias: tape.param(&self.store, delta_bias),
            a_log: tape.param(&self.store, a_log),
            d_skip: d_skip.map(|id| tape.param(&self.store, id)),
        }
    }

    fn ssi_block(
        &self,
        tape: &Tape,
        x: Var,
        layer: usize,
        t_len: usize,
        n_joints: usize,
        fusion: bool,
    ) -> Var {
        let ids = &self.ssi_layers[layer];
        let gamma = tape.param(&self.store, ids.gamma);
        let beta = tape.param(&self.store, ids.beta);
        let z = tape.layer_norm(x, gamma, beta);
        let m = match (fusion, ids.adjacency) {
            (true, Some(adj)) => {
                let pre = tape.param(&self.store, adj);
                Some(tape.softmax_rows(pre))
            }
            _ => None,
        };
        let sv = self.selective_vars(
            tape,
            ids.wb,
            ids.bb,
            ids.wc,
            ids.bc,
            ids.w_delta,
            ids.delta_bias,
            ids.a_log,
            ids.d_skip,
        );
        let parts: Vec<Var> = (0..t_len)
            .map(|f| {
                let frame = tape.slice_rows(z, f * n_joints, n_joints);
                ssi_scan_op(tape, frame, m, &sv)
            })
            .collect();
        let r = tape.concat_rows(&parts);
        tape.add(x, r)
    }

    #[allow(clippy::too_many_arguments)]
    fn msm_block(
        &self,
        tape: &Tape,
        x: Var,
        layer: usize,
        t_len: usize,
        n_joints: usize,
        motion: bool,
        to_joint_major: &[usize],
        to_frame_major: &[usize],
    ) -> Var {
        let ids = &self.msm_layers[layer];
        let gamma = tape.param(&self.store, ids.gamma);
        let beta = tape.param(&self.store, ids.beta);
        let z = tape.layer_norm(x, gamma, beta);
        let zj = tape.permute_rows(z, to_joint_major.to_vec());
        let mv = MotionVars {
            variant: self.config.msm_variant,
            w_prev: match (motion, ids.w_prev) {
                (true, Some(id)) => Some(tape.param(&self.store, id)),
                _ => None,
            },
            w_curr: tape.param(&self.store, ids.w_curr),
            bias: tape.param(&self.store, ids.m_bias),
        };
        // msm has no separate delta projection; the w_delta/delta_bias
        // slots are never read by msm_scan_op
        let sv = SelectiveVars {
            wb: tape.param(&self.store, ids.wb),
            bb: tape.param(&self.store, ids.bb),
            wc: tape.param(&self.store, ids.wc),
            bc: tape.param(&self.store, ids.bc),
            w_delta: mv.w_curr,
            delta_bias: mv.bias,
            a_log: tape.param(&self.store, ids.a_log),
            d_skip: ids.d_skip.map(|id| tape.param(&self.store, id)),
        };
        let parts: Vec<Var> = (0..n_joints)
            .map(|j| {
                let traj = tape.slice_rows(zj, j * t_len, t_len);
                msm_scan_op(tape, traj, &mv, &sv)
            })
            .collect();
        let rj = tape.concat_rows(&parts);
        let r = tape.permute_rows(rj, to_frame_major.to_vec());
        tape.add(x, r)
    }

    fn attn_block(
        &self,
        tape: &Tape,
        x: Var,
        ids: &AttnLayerIds,
        t_len: usize,
        n_joints: usize,
        temporal: Option<(&[usize], &[usize])>,
    ) -> Var {
        let gamma1 = tape.param(&self.store, ids.gamma1);
        let beta1 = tape.param(&self.store, ids.beta1);
        let z = tape.layer_norm(x, gamma1, beta1);
        let av = AttentionVars {
            wq: tape.param(&self.store, ids.wq),
            wk: tape.param(&self.store, ids.wk),
            wv: tape.param(&self.store, ids.wv),
            wo: tape.param(&self.store, ids.wo),
            bq: tape.param(&self.store, ids.bq),
            bk: tape.param(&self.store, ids.bk),
            bv: tape.param(&self.store, ids.bv),
            bo: tape.param(&self.store, ids.bo),
        };
        let heads = self.config.heads;
        let r = match temporal {
            None => {
                let parts: Vec<Var> = (0..t_len)
                    .map(|f| {
                        let frame = tape.slice_rows(z, f * n_joints, n_joints);
                        attention_op(tape, frame, &av, heads)
                    })
                    .collect();
                tape.concat_rows(&parts)
            }
            Some((to_jm, to_fm)) => {
                let zj = tape.permute_rows(z, to_jm.to_vec());
                let parts: Vec<Var> = (0..n_joints)
                    .map(|j| {
                        let traj = tape.slice_rows(zj, j * t_len, t_len);
                        attention_op(tape, traj, &av, heads)
                    })
                    .collect();
                let rj = tape.concat_rows(&parts);
                tape.permute_rows(rj, to_fm.to_vec())
            }
        };
        let x = tape.add(x, r);

        let gamma2 = tape.param(&self.store, ids.gamma2);
        let beta2 = tape.param(&self.store, ids.beta2);
        let z2 = tape.layer_norm(x, gamma2, beta2);
        let w1 = tape.param(&self.store, ids.w1);
        let b1 = tape.param(&self.store, ids.b1);
        let w2 = tape.param(&self.store, ids.w2);
        let b2 = tape.param(&self.store, ids.b2);
        let hidden = tape.gelu(tape.linear(z2, w1, Some(b1)));
        let m = tape.linear(hidden, w2, Some(b2));
        tape.add(x, m)
    }

    /// Inference: lifts a 2-D sequence to root-relative 3-D millimeters.
    pub fn lift(&self, pose2d: &PoseSeq) -> Result<PoseSeq, SamaError> {
        let tape = Tape::new();
        let out = self.forward_on_tape(&tape, pose2d)?;
        let val = tape.value(out);
        PoseSeq::new(pose2d.frames, pose2d.joints, 3, val.into_data())
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }

    /// Per-joint mean timescale of every temporal layer on one sequence.
    ///
    /// Returns `[n_joints]`, averaged over frames and layers. The input
    /// runs through the same forward pass; deltas are recomputed from each
    /// temporal block's normalized input.
    pub fn mean_delta_per_joint(&self, pose2d: &PoseSeq) -> Result<Vec<f64>, SamaError> {
        use crate::msm::{motion_delta, MotionWeights};
        let t_len = pose2d.frames;
        let n_joints = pose2d.joints;
        let flags = self.default_flags();

        // replay the forward, capturing each msm block's input
        let tape = Tape::new();
        let x0 = tape.constant(Tensor::from_vec(
            &[t_len * n_joints, 2],
            pose2d.data().to_vec(),
        ));
        let iw = tape.param(&self.store, self.input_w);
        let ib = tape.param(&self.store, self.input_b);
        let mut x = tape.linear(x0, iw, Some(ib));
        let to_joint_major: Vec<usize> = (0..t_len * n_joints)
            .map(|i| (i % t_len) * n_joints + i / t_len)
            .collect();
        let to_frame_major: Vec<usize> = (0..t_len * n_joints)
            .map(|i| (i % n_joints) * t_len + i / n_joints)
            .collect();

        let mut sums = vec![0.0; n_joints];
        for i in 0..self.config.depth {
            x = self.ssi_block(&tape, x, i, t_len, n_joints, flags.ssi_fusion);
            // capture the normalized joint-major input of this msm block
            let ids = &self.msm_layers[i];
            let gamma = tape.param(&self.store, ids.gamma);
            let beta = tape.param(&self.store, ids.beta);
            let z = tape.layer_norm(x, gamma, beta);
            let zj_var = tape.permute_rows(z, to_joint_major.to_vec());
            let zj = tape.value(zj_var);
            let mw = MotionWeights {
                variant: self.config.msm_variant,
                w_prev: match (flags.msm_motion, ids.w_prev) {
                    (true, Some(id)) => Some(self.store.value(id).clone()),
                    _ => None,
                },
                w_curr: self.store.value(ids.w_curr).clone(),
                bias: self.store.value(ids.m_bias).scalar_value(),
            };
            for j in 0..n_joints {
                let traj = Tensor::from_vec(
                    &[t_len, self.config.dim],
                    zj.data()[j * t_len * self.config.dim..(j + 1) * t_len * self.config.dim]
                        .to_vec(),
                );
                let deltas = motion_delta(&traj, &mw)?;
                sums[j] += deltas.iter().sum::<f64>() / t_len as f64;
            }
            x = self.msm_block(
                &tape,
                x,
                i,
                t_len,
                n_joints,
                flags.msm_motion,
                &to_joint_major,
                &to_frame_major,
            );
        }
        for s in sums.iter_mut() {
            *s /= self.config.depth as f64;
        }
        Ok(sums)
    }

    /// The softmaxed adjacency of every spatial layer, `[N][N]` each.
    pub fn learned_adjacencies(&self) -> Vec<Tensor> {
        self.ssi_layers
            .iter()
            .filter_map(|l| l.adjacency)
            .map(|id| crate::ssi::adjacency_softmax(self.store.value(id)))
            .collect()
    }

    // ---- checkpointing ----

    /// Writes magic, config JSON, the skeleton and every named parameter
    /// as little-endian doubles.
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<(), SamaError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let cfg = self.config.to_json();
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(cfg.as_bytes());
        buf.extend_from_slice(&(self.graph.n_joints as u32).to_le_bytes());
        buf.extend_from_slice(&(self.graph.edges.len() as u32).to_le_bytes());
        for &(a, b) in &self.graph.edges {
            buf.extend_from_slice(&(a as u32).to_le_bytes());
            buf.extend_from_slice(&(b as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, p) in self.store.iter() {
            buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &s in p.value.shape() {
                buf.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`SamaModel::save_checkpoint`].
    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<SamaModel, SamaError> {
        let mut file = std::fs::File::open(path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], SamaError> {
            if *pos + n > data.len() {
                return Err(SamaError::Checkpoint("truncated checkpoint".into()));
            }
            let s = &data[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 5)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(SamaError::BadCheckpointMagic);
        }
        let read_u32 = |pos: &mut usize| -> Result<u32, SamaError> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes(b.try_into().unwrap()))
        };
        let cfg_len = read_u32(&mut pos)? as usize;
        let cfg_bytes = take(&mut pos, cfg_len)?;
        let cfg_text = std::str::from_utf8(cfg_bytes)
            .map_err(|_| SamaError::Checkpoint("config is not valid utf-8".into()))?;
        let config = ModelConfig::from_json(cfg_text)?;
        let n_joints = read_u32(&mut pos)? as usize;
        let n_edges = read_u32(&mut pos)? as usize;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let a = read_u32(&mut pos)? as usize;
            let b = read_u32(&mut pos)? as usize;
            edges.push((a, b));
        }
        let graph = JointGraph::new(n_joints, &edges)?;
        let mut model = SamaModel::new(config, graph)?;
        let n_params = read_u32(&mut pos)? as usize;
        if n_params != model.store.len() {
            return Err(SamaError::Checkpoint(format!(
                "checkpoint holds {n_params} parameters, model defines {}",
                model.store.len()
            )));
        }
        for _ in 0..n_params {
            let name_len = read_u32(&mut pos)? as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| SamaError::Checkpoint("parameter name is not utf-8".into()))?
                .to_string();
            let ndim = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let b = take(&mut pos, 8)?;
                shape.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let bytes = take(&mut pos, numel * 8)?;
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            model.load_value_checked(&name, Tensor::from_vec(&shape, values))?;
        }
        Ok(model)
    }

    fn load_value_checked(&mut self, name: &str, value: Tensor) -> Result<(), SamaError> {
        if !value.all_finite() {
            return Err(SamaError::NonFinite(format!("parameter {name:?}")));
        }
        self.store.load_value(name, value)
    }
}

/// Closed-form scalar parameter count of a configuration.
///
/// input: 2d + d
/// per scan layer pair:
///   spatial: 2d (norm) + N^2 (adjacency, if fusion) + 2(nd + n) (B/C)
///            + d + 1 (timescale) + 1 (a_log) + d (feed-through, if on)
///   temporal: 2d + 2(nd + n) + d (+ d if motion) + 1 + 1 + d
/// per attention layer (2K of them):
///   2d + 4(d^2 + d) + 2d + (2d*d + 2d) + (d*2d + d) = 4d^2 + 4d^2 + 11d
/// head: 3d + 3
pub fn count_params_formula(cfg: &ModelConfig, n_joints: usize) -> usize {
    let d = cfg.dim;
    let n = cfg.state;
    let k = cfg.depth;
    let input = 2 * d + d;
    let bc = 2 * (n * d + n);
    let skip = if cfg.d_skip { d } else { 0 };
    let ssi = 2 * d
        + if cfg.ssi_fusion { n_joints * n_joints } else { 0 }
        + bc
        + (d + 1)
        + 1
        + skip;
    let msm = 2 * d + bc + d + if cfg.msm_motion { d } else { 0 } + 1 + 1 + skip;
    let attn = 2 * d + 4 * (d * d + d) + 2 * d + (2 * d * d + 2 * d) + (d * 2 * d + d);
    let head = 3 * d + 3;
    input + k * (ssi + msm) + 2 * k * attn + head
}
