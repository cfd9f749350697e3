//! Selective scan kernels: ZOH discretization, recurrent scan, quadratic
//! dual form and a chunked scan.
//!
//! The recurrence is `h_t = alpha_t * h_{t-1} + x_t (x) b_t`, `y_t = h_t c_t`
//! with a scalar decay per step, so the dual form is masked linear
//! attention: `y = (P o (C B^T)) x` where `P_ij = alpha_i * ... * alpha_{j+1}`
//! for i > j (product over positions j+1..=i), 1 on the diagonal, 0 above.
//! All kernels here are pure; the tape wrappers at the bottom register the
//! same computations with their adjoints for training.

use std::cell::Cell;

use crate::error::SamaError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Below this |delta * a| the ZOH input scaling switches to its
/// second-order Taylor expansion.
pub const ZOH_TAYLOR_THRESHOLD: f64 = 1e-4;

/// Guard for the O(T^2) dual form.
pub const QUADRATIC_MAX_T: usize = 4096;

/// Per-step selective parameters of one scan.
#[derive(Clone, Debug)]
pub struct SsdParams {
    /// Discrete decay per step, `exp(delta_t * a)`.
    pub alpha: Vec<f64>,
    /// Discretized input projections, `[T][n]`.
    pub b: Tensor,
    /// Output projections, `[T][n]`.
    pub c: Tensor,
    /// Timescales, `[T]`, positive.
    pub delta: Vec<f64>,
    /// Continuous decay is `a = -exp(a_log)`.
    pub a_log: f64,
    /// Optional per-channel input feed-through, `[d]`.
    pub d_skip: Option<Vec<f64>>,
}

impl SsdParams {
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn state_dim(&self) -> usize {
        self.b.cols()
    }

    /// Checks the invariants that hold for ZOH-produced parameters.
    pub fn validate(&self) -> Result<(), SamaError> {
        let t = self.alpha.len();
        if self.b.rows() != t || self.c.rows() != t || self.delta.len() != t {
            return Err(SamaError::Shape("ssd parameter lengths disagree".into()));
        }
        if self.b.cols() != self.c.cols() {
            return Err(SamaError::Shape("b and c state sizes disagree".into()));
        }
        if !self.delta.iter().all(|&d| d.is_finite() && d > 0.0) {
            return Err(SamaError::Config("delta must be positive".into()));
        }
        if !self
            .alpha
            .iter()
            .all(|&a| a.is_finite() && a > 0.0 && a <= 1.0)
        {
            return Err(SamaError::Config("alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// The lower-triangular decay mask of the dual form.
#[derive(Clone, Debug)]
pub struct SemiseparableMask {
    pub t: usize,
    /// Row-major `[T][T]`.
    pub p: Vec<f64>,
}

/// ZOH scaling factor `(exp(delta * a) - 1) / a`, with the Taylor branch
/// `delta * (1 + delta * a / 2)` once `|delta * a|` is tiny.
#[inline]
fn zoh_phi(delta: f64, a: f64) -> f64 {
    let da = delta * a;
    if da.abs() < ZOH_TAYLOR_THRESHOLD {
        delta * (1.0 + 0.5 * da)
    } else {
        (da.exp() - 1.0) / a
    }
}

/// d(phi)/d(delta); matches the branch used by the forward value.
#[inline]
fn zoh_phi_ddelta(delta: f64, a: f64) -> f64 {
    let da = delta * a;
    if da.abs() < ZOH_TAYLOR_THRESHOLD {
        1.0 + da
    } else {
        da.exp()
    }
}

/// d(phi)/d(a); matches the branch used by the forward value.
#[inline]
fn zoh_phi_da(delta: f64, a: f64) -> f64 {
    let da = delta * a;
    if da.abs() < ZOH_TAYLOR_THRESHOLD {
        0.5 * delta * delta
    } else {
        (delta * da.exp() - (da.exp() - 1.0) / a) / a
    }
}

/// Discretizes the continuous parameters: `alpha_t = exp(delta_t * a)` and
/// `b_bar_t = phi(delta_t) * b_raw_t` with `a = -exp(a_log)`.
pub fn zoh_discretize(
    delta: &[f64],
    a_log: f64,
    b_raw: &Tensor,
) -> Result<(Vec<f64>, Tensor), SamaError> {
    if b_raw.rows() != delta.len() {
        return Err(SamaError::Shape(
            "delta and b_raw step counts disagree".into(),
        ));
    }
    if !delta.iter().all(|&d| d.is_finite() && d > 0.0) {
        return Err(SamaError::Config(
            "zoh_discretize requires positive delta".into(),
        ));
    }
    let a = -a_log.exp();
    let n = b_raw.cols();
    let alpha: Vec<f64> = delta.iter().map(|&dt| (dt * a).exp()).collect();
    let mut b_bar = vec![0.0; b_raw.numel()];
    for (t, &dt) in delta.iter().enumerate() {
        let phi = zoh_phi(dt, a);
        for j in 0..n {
            b_bar[t * n + j] = phi * b_raw.data()[t * n + j];
        }
    }
    Ok((alpha, Tensor::from_vec(b_raw.shape(), b_bar)))
}

/// Builds the `[T][T]` decay mask from per-step alphas via cumulative
/// log sums.
pub fn build_mask(alpha: &[f64]) -> SemiseparableMask {
    let t = alpha.len();
    // cum[i] = sum of ln(alpha) over 1..=i
    let mut cum = vec![0.0; t];
    for i in 1..t {
        cum[i] = cum[i - 1] + alpha[i].ln();
    }
    let mut p = vec![0.0; t * t];
    for i in 0..t {
        p[i * t + i] = 1.0;
        for j in 0..i {
            p[i * t + j] = (cum[i] - cum[j]).exp();
        }
    }
    SemiseparableMask { t, p }
}

/// Sequential evaluation of the recurrence. `x` is `[T][d]`.
pub fn scan_recurrent(x: &Tensor, p: &SsdParams) -> Result<Tensor, SamaError> {
    let t_len = p.steps();
    let d = x.cols();
    let n = p.state_dim();
    if x.rows() != t_len {
        return Err(SamaError::Shape("x step count disagrees with params".into()));
    }
    if let Some(ds) = &p.d_skip {
        if ds.len() != d {
            return Err(SamaError::Shape("d_skip width disagrees with x".into()));
        }
    }
    let mut h = vec![0.0; d * n];
    let mut y = vec![0.0; t_len * d];
    for t in 0..t_len {
        let xa = &x.data()[t * d..(t + 1) * d];
        let bt = &p.b.data()[t * n..(t + 1) * n];
        let ct = &p.c.data()[t * n..(t + 1) * n];
        let at = p.alpha[t];
        for i in 0..d {
            let hrow = &mut h[i * n..(i + 1) * n];
            let xi = xa[i];
            let mut acc = 0.0;
            for j in 0..n {
                hrow[j] = at * hrow[j] + xi * bt[j];
                acc += hrow[j] * ct[j];
            }
            y[t * d + i] = acc;
        }
        if let Some(ds) = &p.d_skip {
            for i in 0..d {
                y[t * d + i] += ds[i] * xa[i];
            }
        }
    }
    Ok(Tensor::from_vec(&[t_len, d], y))
}

thread_local! {
    static QUAD_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Test hook: perturbs the next quadratic-form outputs by 1e-6 so the
/// dual-form equivalence check can prove it detects faults.
pub fn set_quadratic_fault_injection(on: bool) {
    QUAD_FAULT.with(|f| f.set(on));
}

/// Dual-form evaluation: `y = (P o (C B^T)) x`, computed row by row
/// without materializing the T x T factors. Guarded to `T <= 4096`.
pub fn scan_quadratic(x: &Tensor, p: &SsdParams) -> Result<Tensor, SamaError> {
    let t_len = p.steps();
    if t_len > QUADRATIC_MAX_T {
        return Err(SamaError::Config(format!(
            "quadratic form limited to T <= {QUADRATIC_MAX_T}, got {t_len}"
        )));
    }
    let d = x.cols();
    let n = p.state_dim();
    if x.rows() != t_len {
        return Err(SamaError::Shape("x step count disagrees with params".into()));
    }
    let mut cum = vec![0.0; t_len];
    for i in 1..t_len {
        cum[i] = cum[i - 1] + p.alpha[i].ln();
    }
    let mut y = vec![0.0; t_len * d];
    for i in 0..t_len {
        let ci = &p.c.data()[i * n..(i + 1) * n];
        let yrow = &mut y[i * d..(i + 1) * d];
        for j in 0..=i {
            let bj = &p.b.data()[j * n..(j + 1) * n];
            let mask = if i == j { 1.0 } else { (cum[i] - cum[j]).exp() };
            let w = mask * ci.iter().zip(bj).map(|(cv, bv)| cv * bv).sum::<f64>();
            if w == 0.0 {
                continue;
            }
            let xj = &x.data()[j * d..(j + 1) * d];
            for (o, xv) in yrow.iter_mut().zip(xj) {
                *o += w * xv;
            }
        }
    }
    if let Some(ds) = &p.d_skip {
        for t in 0..t_len {
            for i in 0..d {
                y[t * d + i] += ds[i] * x.data()[t * d + i];
            }
        }
    }
    if QUAD_FAULT.with(|f| f.get()) && !y.is_empty() {
        y[0] += 1e-6;
    }
    Ok(Tensor::from_vec(&[t_len, d], y))
}

/// Blocked evaluation: quadratic form inside each block, a carried
/// `[d][n]` state with block-level alpha products across blocks.
pub fn scan_chunked(x: &Tensor, p: &SsdParams, chunk: usize) -> Result<Tensor, SamaError> {
    if chunk == 0 {
        return Err(SamaError::Config("chunk must be at least 1".into()));
    }
    let t_len = p.steps();
    let d = x.cols();
    let n = p.state_dim();
    if x.rows() != t_len {
        return Err(SamaError::Shape("x step count disagrees with params".into()));
    }
    let mut y = vec![0.0; t_len * d];
    let mut h = vec![0.0; d * n];
    let mut start = 0;
    while start < t_len {
        let end = (start + chunk).min(t_len);
        // intra-block quadratic form
        let mut cum = vec![0.0; end - start];
        for i in 1..end - start {
            cum[i] = cum[i - 1] + p.alpha[start + i].ln();
        }
        for i in start..end {
            let ci = &p.c.data()[i * n..(i + 1) * n];
            let yrow = &mut y[i * d..(i + 1) * d];
            for j in start..=i {
                let bj = &p.b.data()[j * n..(j + 1) * n];
                let mask = if i == j {
                    1.0
                } else {
                    (cum[i - start] - cum[j - start]).exp()
                };
                let w = mask * ci.iter().zip(bj).map(|(cv, bv)| cv * bv).sum::<f64>();
                if w == 0.0 {
                    continue;
                }
                let xj = &x.data()[j * d..(j + 1) * d];
                for (o, xv) in yrow.iter_mut().zip(xj) {
                    *o += w * xv;
                }
            }
            // carried state: coefficient is the alpha product over start..=i
            let carry = (cum[i - start] + p.alpha[start].ln()).exp();
            if carry != 0.0 {
                for ch in 0..d {
                    let hrow = &h[ch * n..(ch + 1) * n];
                    let dotv: f64 = hrow.iter().zip(ci).map(|(hv, cv)| hv * cv).sum();
                    yrow[ch] += carry * dotv;
                }
            }
        }
        // advance the carried state through the block
        for t in start..end {
            let xa = &x.data()[t * d..(t + 1) * d];
            let bt = &p.b.data()[t * n..(t + 1) * n];
            let at = p.alpha[t];
            for i in 0..d {
                let hrow = &mut h[i * n..(i + 1) * n];
                let xi = xa[i];
                for j in 0..n {
                    hrow[j] = at * hrow[j] + xi * bt[j];
                }
            }
        }
        start = end;
    }
    if let Some(ds) = &p.d_skip {
        for t in 0..t_len {
            for i in 0..d {
                y[t * d + i] += ds[i] * x.data()[t * d + i];
            }
        }
    }
    Ok(Tensor::from_vec(&[t_len, d], y))
}

/// Weights of the per-step selective parameterization.
#[derive(Clone, Debug)]
pub struct SelectiveWeights {
    /// `[n][d]` input projection for the raw B.
    pub wb: Tensor,
    pub bb: Tensor,
    /// `[n][d]` projection for C.
    pub wc: Tensor,
    pub bc: Tensor,
    /// `[1][d]` projection for the timescale.
    pub w_delta: Tensor,
    pub delta_bias: f64,
    pub a_log: f64,
    pub d_skip: Option<Vec<f64>>,
}

/// Affine per-step parameters from the inputs:
/// `b_t, c_t` affine in `x_t`, `delta_t = softplus(w x_t + bias)`, then ZOH.
pub fn selective_project(x: &Tensor, w: &SelectiveWeights) -> Result<SsdParams, SamaError> {
    let t_len = x.rows();
    let d = x.cols();
    let mut delta = vec![0.0; t_len];
    for t in 0..t_len {
        let xt = &x.data()[t * d..(t + 1) * d];
        let pre: f64 =
            w.delta_bias + w.w_delta.data().iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
        delta[t] = crate::tape::softplus(pre);
    }
    selective_project_with_delta(x, w, delta)
}

/// [`selective_project`] with the timescales supplied by the caller; the
/// `w_delta`/`delta_bias` path is bypassed.
pub fn selective_project_with_delta(
    x: &Tensor,
    w: &SelectiveWeights,
    delta: Vec<f64>,
) -> Result<SsdParams, SamaError> {
    let t_len = x.rows();
    let d = x.cols();
    let n = w.wb.rows();
    if delta.len() != t_len {
        return Err(SamaError::Shape("delta length disagrees with x".into()));
    }
    let mut b_raw = vec![0.0; t_len * n];
    let mut c = vec![0.0; t_len * n];
    for t in 0..t_len {
        let xt = &x.data()[t * d..(t + 1) * d];
        for j in 0..n {
            let wrow = &w.wb.data()[j * d..(j + 1) * d];
            b_raw[t * n + j] =
                w.bb.data()[j] + wrow.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
            let crow = &w.wc.data()[j * d..(j + 1) * d];
            c[t * n + j] =
                w.bc.data()[j] + crow.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let b_raw = Tensor::from_vec(&[t_len, n], b_raw);
    let (alpha, b_bar) = zoh_discretize(&delta, w.a_log, &b_raw)?;
    Ok(SsdParams {
        alpha,
        b: b_bar,
        c: Tensor::from_vec(&[t_len, n], c),
        delta,
        a_log: w.a_log,
        d_skip: w.d_skip.clone(),
    })
}

// ---- tape ops ----

/// `alpha_t = exp(delta_t * a)` with `a = -exp(a_log)`; inputs `[T]`, `[1]`.
pub fn zoh_alpha_op(tape: &Tape, delta: Var, a_log: Var) -> Var {
    let out = {
        let dv = tape.value(delta);
        let av = tape.value(a_log).scalar_value();
        let a = -av.exp();
        let alpha: Vec<f64> = dv.data().iter().map(|&dt| (dt * a).exp()).collect();
        Tensor::from_vec(dv.shape(), alpha)
    };
    let (di_idx, ai_idx) = (delta.0, a_log.0);
    tape.push_node(
        out,
        vec![delta, a_log],
        Box::new(move |vals, g| {
            let dv = &vals[di_idx];
            let a = -vals[ai_idx].scalar_value().exp();
            let mut gd = vec![0.0; dv.numel()];
            let mut ga = 0.0;
            for (t, (&dt, gv)) in dv.data().iter().zip(g.data()).enumerate() {
                let alpha = (dt * a).exp();
                gd[t] = gv * a * alpha;
                // d(alpha)/d(a_log) = alpha * delta * da/da_log, da/da_log = a
                ga += gv * alpha * dt * a;
            }
            vec![
                Tensor::from_vec(dv.shape(), gd),
                Tensor::scalar(ga),
            ]
        }),
    )
}

/// `b_bar_t = phi(delta_t, a) * b_raw_t`; the Taylor branch of `phi` has a
/// matching adjoint so gradients stay continuous across the switch.
pub fn zoh_bbar_op(tape: &Tape, delta: Var, a_log: Var, b_raw: Var) -> Var {
    let out = {
        let dv = tape.value(delta);
        let av = tape.value(a_log).scalar_value();
        let bv = tape.value(b_raw);
        let a = -av.exp();
        let n = bv.cols();
        let mut data = vec![0.0; bv.numel()];
        for (t, &dt) in dv.data().iter().enumerate() {
            let phi = zoh_phi(dt, a);
            for j in 0..n {
                data[t * n + j] = phi * bv.data()[t * n + j];
            }
        }
        Tensor::from_vec(bv.shape(), data)
    };
    let (di, ai, bi) = (delta.0, a_log.0, b_raw.0);
    tape.push_node(
        out,
        vec![delta, a_log, b_raw],
        Box::new(move |vals, g| {
            let dv = &vals[di];
            let av = vals[ai].scalar_value();
            let bv = &vals[bi];
            let a = -av.exp();
            let n = bv.cols();
            let mut gd = vec![0.0; dv.numel()];
            let mut ga = 0.0;
            let mut gb = vec![0.0; bv.numel()];
            for (t, &dt) in dv.data().iter().enumerate() {
                let phi = zoh_phi(dt, a);
                let dphi_dd = zoh_phi_ddelta(dt, a);
                let dphi_da = zoh_phi_da(dt, a);
                let mut gdot = 0.0;
                for j in 0..n {
                    let gv = g.data()[t * n + j];
                    gb[t * n + j] = phi * gv;
                    gdot += gv * bv.data()[t * n + j];
                }
                gd[t] = dphi_dd * gdot;
                ga += dphi_da * gdot;
            }
            // chain to a_log: da/da_log = a
            ga *= a;
            vec![
                Tensor::from_vec(dv.shape(), gd),
                Tensor::scalar(ga),
                Tensor::from_vec(bv.shape(), gb),
            ]
        }),
    )
}

/// Runs the recurrence and exposes every state: `[T][d]`, `[T]`, `[T][n]`
/// to `[T][d*n]`. The adjoint replays the recursion backwards.
pub fn ssd_states_op(tape: &Tape, x: Var, alpha: Var, b: Var) -> Var {
    let out = {
        let xv = tape.value(x);
        let av = tape.value(alpha);
        let bv = tape.value(b);
        let t_len = xv.rows();
        let d = xv.cols();
        let n = bv.cols();
        assert_eq!(av.numel(), t_len, "alpha length mismatch");
        assert_eq!(bv.rows(), t_len, "b step count mismatch");
        let mut h_all = vec![0.0; t_len * d * n];
        let mut h = vec![0.0; d * n];
        for t in 0..t_len {
            let xa = &xv.data()[t * d..(t + 1) * d];
            let bt = &bv.data()[t * n..(t + 1) * n];
            let at = av.data()[t];
            for i in 0..d {
                let hrow = &mut h[i * n..(i + 1) * n];
                let xi = xa[i];
                for j in 0..n {
                    hrow[j] = at * hrow[j] + xi * bt[j];
                }
            }
            h_all[t * d * n..(t + 1) * d * n].copy_from_slice(&h);
        }
        Tensor::from_vec(&[t_len, d * n], h_all)
    };
    let (xi, ai, bi) = (x.0, alpha.0, b.0);
    let out_idx = tape.len();
    tape.push_node(
        out,
        vec![x, alpha, b],
        Box::new(move |vals, g| {
            let xv = &vals[xi];
            let av = &vals[ai];
            let bv = &vals[bi];
            let h_all = &vals[out_idx];
            let t_len = xv.rows();
            let d = xv.cols();
            let n = bv.cols();
            let mut gx = vec![0.0; xv.numel()];
            let mut galpha = vec![0.0; t_len];
            let mut gb = vec![0.0; bv.numel()];
            // acc holds dL/dh_t for the step being processed
            let mut acc = vec![0.0; d * n];
            for t in (0..t_len).rev() {
                let gh_t = &g.data()[t * d * n..(t + 1) * d * n];
                for (a, &gv) in acc.iter_mut().zip(gh_t) {
                    *a += gv;
                }
                let xa = &xv.data()[t * d..(t + 1) * d];
                let bt = &bv.data()[t * n..(t + 1) * n];
                // gradient w.r.t. alpha_t pairs acc with h_{t-1}
                if t > 0 {
                    let h_prev = &h_all.data()[(t - 1) * d * n..t * d * n];
                    galpha[t] = acc.iter().zip(h_prev).map(|(a, b)| a * b).sum();
                }
                for i in 0..d {
                    let arow = &acc[i * n..(i + 1) * n];
                    gx[t * d + i] += arow.iter().zip(bt).map(|(a, b)| a * b).sum::<f64>();
                    let xi_val = xa[i];
                    for j in 0..n {
                        gb[t * n + j] += arow[j] * xi_val;
                    }
                }
                // propagate to h_{t-1}
                let at = av.data()[t];
                for a in acc.iter_mut() {
                    *a *= at;
                }
            }
            vec![
                Tensor::from_vec(xv.shape(), gx),
                Tensor::from_vec(av.shape(), galpha),
                Tensor::from_vec(bv.shape(), gb),
            ]
        }),
    )
}

/// Observation: `y_t[i] = sum_j h_t[i][j] * c_t[j]`, `[T][d*n]` x `[T][n]`.
pub fn observe_op(tape: &Tape, h: Var, c: Var) -> Var {
    let out = {
        let hv = tape.value(h);
        let cv = tape.value(c);
        let t_len = hv.rows();
        let n = cv.cols();
        let d = hv.cols() / n;
        assert_eq!(hv.cols(), d * n, "state width not divisible by n");
        assert_eq!(cv.rows(), t_len, "c step count mismatch");
        let mut y = vec![0.0; t_len * d];
        for t in 0..t_len {
            let ct = &cv.data()[t * n..(t + 1) * n];
            for i in 0..d {
                let hrow = &hv.data()[t * d * n + i * n..t * d * n + (i + 1) * n];
                y[t * d + i] = hrow.iter().zip(ct).map(|(a, b)| a * b).sum();
            }
        }
        Tensor::from_vec(&[t_len, d], y)
    };
    let (hi, ci) = (h.0, c.0);
    tape.push_node(
        out,
        vec![h, c],
        Box::new(move |vals, g| {
            let hv = &vals[hi];
            let cv = &vals[ci];
            let t_len = hv.rows();
            let n = cv.cols();
            let d = hv.cols() / n;
            let mut gh = vec![0.0; hv.numel()];
            let mut gc = vec![0.0; cv.numel()];
            for t in 0..t_len {
                let ct = &cv.data()[t * n..(t + 1) * n];
                for i in 0..d {
                    let gy = g.data()[t * d + i];
                    if gy == 0.0 {
                        continue;
                    }
                    let base = t * d * n + i * n;
                    for j in 0..n {
                        gh[base + j] += gy * ct[j];
                        gc[t * n + j] += gy * hv.data()[base + j];
                    }
                }
            }
            vec![
                Tensor::from_vec(hv.shape(), gh),
                Tensor::from_vec(cv.shape(), gc),
            ]
        }),
    )
}

/// Full selective scan on the tape: ZOH, recurrence, observation, optional
/// input feed-through. `delta` must already be positive.
#[allow(clippy::too_many_arguments)]
pub fn ssd_scan_op(
    tape: &Tape,
    x: Var,
    delta: Var,
    a_log: Var,
    b_raw: Var,
    c: Var,
    d_skip: Option<Var>,
) -> Var {
    let alpha = zoh_alpha_op(tape, delta, a_log);
    let b_bar = zoh_bbar_op(tape, delta, a_log, b_raw);
    let h = ssd_states_op(tape, x, alpha, b_bar);
    let y = observe_op(tape, h, c);
    match d_skip {
        Some(ds) => {
            let skip = tape.mul_cols(x, ds);
            tape.add(y, skip)
        }
        None => y,
    }
}
