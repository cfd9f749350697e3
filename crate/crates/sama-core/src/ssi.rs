//! Structure-aware state integrator: a spatial scan over the joints of one
//! frame, augmented with a learnable adjacency that fuses joint features
//! before the scan and hidden states after it.
//!
//! The adjacency starts from the degree-normalized skeleton
//! `D^{-1/2} (M_o + I) D^{-1/2}` and is trained through a row-wise softmax,
//! so each joint aggregates others through a convex combination. Joints are
//! scanned in the preset's canonical index order (root outward); only the
//! fused terms are order-free.

use crate::error::SamaError;
use crate::graph::JointGraph;
use crate::ssm::{
    observe_op, scan_recurrent, selective_project, ssd_states_op, zoh_alpha_op, zoh_bbar_op,
    SelectiveWeights,
};
use crate::tape::{softmax_rows, Tape, Var};
use crate::tensor::Tensor;

/// Pre-softmax initialization of the learnable adjacency:
/// `(M_o + I)[a][k] / sqrt(degree[a] * degree[k])`.
pub fn adjacency_init(graph: &JointGraph) -> Tensor {
    let n = graph.n_joints;
    let mut m = vec![0.0; n * n];
    for a in 0..n {
        for k in 0..n {
            let conn = if a == k { 1.0 } else { graph.m_o[a * n + k] };
            if conn != 0.0 {
                m[a * n + k] = conn / ((graph.degree[a] * graph.degree[k]) as f64).sqrt();
            }
        }
    }
    Tensor::from_vec(&[n, n], m)
}

/// The effective adjacency: row-wise softmax of the learnable matrix.
pub fn adjacency_softmax(pre_softmax: &Tensor) -> Tensor {
    softmax_rows(pre_softmax)
}

/// Joint feature fusion: `x' = x + m x`.
pub fn fuse_features(x: &Tensor, m: &Tensor) -> Result<Tensor, SamaError> {
    let n = x.rows();
    if m.rows() != n || m.cols() != n {
        return Err(SamaError::Shape(format!(
            "adjacency {:?} does not match {n} joints",
            m.shape()
        )));
    }
    let mx = crate::tape::matmul(m, x);
    let mut out = x.clone();
    out.add_assign(&mx);
    Ok(out)
}

/// Reference spatial scan over one frame's joints, `x: [N][d]`, visiting
/// joints in canonical index order.
///
/// With fusion enabled: feature fusion, selective scan over joints, state
/// fusion over the final per-joint states, observation, optional
/// feed-through. With fusion disabled the function is exactly the plain
/// selective scan.
pub fn ssi_scan(
    x: &Tensor,
    pre_softmax: &Tensor,
    w: &SelectiveWeights,
    fusion: bool,
) -> Result<Tensor, SamaError> {
    if !fusion {
        let params = selective_project(x, w)?;
        return scan_recurrent(x, &params);
    }
    let n_joints = x.rows();
    let d = x.cols();
    let m = adjacency_softmax(pre_softmax);
    let xp = fuse_features(x, &m)?;
    let params = selective_project(&xp, w)?;
    let n = params.state_dim();

    // run the recurrence keeping every per-joint state
    let mut h_all = vec![0.0; n_joints * d * n];
    let mut h = vec![0.0; d * n];
    for a in 0..n_joints {
        let xa = &xp.data()[a * d..(a + 1) * d];
        let ba = &params.b.data()[a * n..(a + 1) * n];
        let al = params.alpha[a];
        for i in 0..d {
            let hrow = &mut h[i * n..(i + 1) * n];
            for j in 0..n {
                hrow[j] = al * hrow[j] + xa[i] * ba[j];
            }
        }
        h_all[a * d * n..(a + 1) * d * n].copy_from_slice(&h);
    }
    // state fusion over final states: H_a = h_a + sum_k m[a][k] h_k
    let h_t = Tensor::from_vec(&[n_joints, d * n], h_all);
    let fused = fuse_features(&h_t, &m)?;
    // observation plus feed-through
    let mut y = vec![0.0; n_joints * d];
    for a in 0..n_joints {
        let ca = &params.c.data()[a * n..(a + 1) * n];
        for i in 0..d {
            let hrow = &fused.data()[a * d * n + i * n..a * d * n + (i + 1) * n];
            y[a * d + i] = hrow.iter().zip(ca).map(|(hv, cv)| hv * cv).sum();
        }
        if let Some(ds) = &w.d_skip {
            for i in 0..d {
                y[a * d + i] += ds[i] * xp.data()[a * d + i];
            }
        }
    }
    Ok(Tensor::from_vec(&[n_joints, d], y))
}

/// [`ssi_scan`] with an explicit visiting order over the joints.
///
/// `order[k]` is the joint visited at scan position `k`; outputs are
/// returned in the original joint indexing. Relabeling joints together
/// with the adjacency and this order leaves outputs unchanged up to the
/// same relabeling; the raw scan order itself matters, only the fused
/// terms are order-free.
pub fn ssi_scan_ordered(
    x: &Tensor,
    pre_softmax: &Tensor,
    w: &SelectiveWeights,
    fusion: bool,
    order: &[usize],
) -> Result<Tensor, SamaError> {
    let n_joints = x.rows();
    let d = x.cols();
    if order.len() != n_joints {
        return Err(SamaError::Shape("scan order length mismatch".into()));
    }
    let mut seen = vec![false; n_joints];
    for &j in order {
        if j >= n_joints || seen[j] {
            return Err(SamaError::Shape("scan order is not a permutation".into()));
        }
        seen[j] = true;
    }
    // gather into scan order
    let mut xg = Tensor::zeros(&[n_joints, d]);
    let mut preg = Tensor::zeros(&[n_joints, n_joints]);
    for (k, &j) in order.iter().enumerate() {
        xg.data_mut()[k * d..(k + 1) * d].copy_from_slice(&x.data()[j * d..(j + 1) * d]);
        for (l, &j2) in order.iter().enumerate() {
            let v = pre_softmax.at2(j, j2);
            preg.data_mut()[k * n_joints + l] = v;
        }
    }
    let yg = ssi_scan(&xg, &preg, w, fusion)?;
    // scatter back to original labels
    let mut y = Tensor::zeros(&[n_joints, d]);
    for (k, &j) in order.iter().enumerate() {
        y.data_mut()[j * d..(j + 1) * d].copy_from_slice(&yg.data()[k * d..(k + 1) * d]);
    }
    Ok(y)
}

/// Tape variables of one selective parameterization.
#[derive(Clone, Copy)]
pub struct SelectiveVars {
    /// `[n][d]`
    pub wb: Var,
    /// `[n]`
    pub bb: Var,
    /// `[n][d]`
    pub wc: Var,
    /// `[n]`
    pub bc: Var,
    /// `[1][d]`
    pub w_delta: Var,
    /// `[1]`
    pub delta_bias: Var,
    /// `[1]`
    pub a_log: Var,
    /// `[d]`
    pub d_skip: Option<Var>,
}

/// `delta = softplus(w x + bias)` on the tape, `[L][d] -> [L]`.
pub fn selective_delta_op(tape: &Tape, x: Var, sv: &SelectiveVars) -> Var {
    let rows = tape.shape_of(x)[0];
    let pre = tape.linear(x, sv.w_delta, Some(sv.delta_bias));
    let flat = tape.reshape(pre, &[rows]);
    tape.softplus(flat)
}

/// Spatial scan of one frame on the tape. `m` is the already-softmaxed
/// adjacency when fusion is on.
pub fn ssi_scan_op(
    tape: &Tape,
    x: Var,
    m: Option<Var>,
    sv: &SelectiveVars,
) -> Var {
    let xp = match m {
        Some(mv) => tape.add(x, tape.matmul(mv, x)),
        None => x,
    };
    let delta = selective_delta_op(tape, xp, sv);
    let alpha = zoh_alpha_op(tape, delta, sv.a_log);
    let b_raw = tape.linear(xp, sv.wb, Some(sv.bb));
    let b_bar = zoh_bbar_op(tape, delta, sv.a_log, b_raw);
    let c = tape.linear(xp, sv.wc, Some(sv.bc));
    let h = ssd_states_op(tape, xp, alpha, b_bar);
    let fused = match m {
        Some(mv) => tape.add(h, tape.matmul(mv, h)),
        None => h,
    };
    let y = observe_op(tape, fused, c);
    match sv.d_skip {
        Some(ds) => tape.add(y, tape.mul_cols(xp, ds)),
        None => y,
    }
}
