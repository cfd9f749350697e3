//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A forward pass pushes nodes onto the tape in topological order; each
//! node stores its input references and a vector-Jacobian product closure.
//! [`Tape::backward`] walks the nodes once in reverse, accumulating
//! cotangents. Leaves created with [`Tape::param`] remember which
//! [`ParamId`] they mirror so gradients can be scattered back into a
//! [`ParamStore`].

use std::cell::RefCell;

use crate::error::SamaError;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Reference to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product: (all tape values, output cotangent) ->
/// cotangents for each input, in input order.
pub type Vjp = Box<dyn Fn(&[Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    inputs: Vec<usize>,
    vjp: Option<Vjp>,
    param: Option<ParamId>,
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

/// Recorded computation of one forward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Cotangents produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf (or any node whose cotangent was kept).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter gradient into the store's grad slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.accumulate_grad(pid, g);
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an operation result. `vjp` receives all tape values and the
    /// output cotangent and must return one cotangent per input.
    pub fn push_node(&self, value: Tensor, inputs: Vec<Var>, vjp: Vjp) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(value);
        inner.nodes.push(Node {
            inputs: inputs.into_iter().map(|v| v.0).collect(),
            vjp: Some(vjp),
            param: None,
        });
        Var(id)
    }

    fn push_leaf(&self, value: Tensor, param: Option<ParamId>) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(value);
        inner.nodes.push(Node {
            inputs: Vec::new(),
            vjp: None,
            param,
        });
        Var(id)
    }

    /// A leaf holding a copy of `t`; gradients w.r.t. it are retained.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push_leaf(t, None)
    }

    /// A leaf mirroring a parameter; backward scatters into its grad slot.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), Some(id))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.inner.borrow().values[v.0].clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().values[v.0].shape().to_vec()
    }

    /// Reverse pass from `out` seeded with `cotangent`.
    ///
    /// Every node at or before `out` is visited exactly once in reverse
    /// topological order. Leaf cotangents are kept; interior ones are
    /// dropped once consumed.
    pub fn backward(&self, out: Var, cotangent: Tensor) -> Result<Gradients, SamaError> {
        let inner = self.inner.borrow();
        if inner.values[out.0].shape() != cotangent.shape() {
            return Err(SamaError::Shape(format!(
                "cotangent shape {:?} does not match output shape {:?}",
                cotangent.shape(),
                inner.values[out.0].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; inner.nodes.len()];
        grads[out.0] = Some(cotangent);
        let mut params = Vec::new();
        for id in (0..=out.0).rev() {
            let node = &inner.nodes[id];
            if node.vjp.is_none() {
                if let Some(pid) = node.param {
                    if grads[id].is_some() {
                        params.push((pid, id));
                    }
                }
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let vjp = node.vjp.as_ref().unwrap();
            let input_grads = vjp(&inner.values, &g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&inp, gi) in node.inputs.iter().zip(input_grads) {
                debug_assert_eq!(
                    inner.values[inp].shape(),
                    gi.shape(),
                    "vjp produced wrong shape for input {inp}"
                );
                match &mut grads[inp] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x + y)
                .collect();
            Tensor::from_vec(ta.shape(), data)
        };
        self.push_node(
            out,
            vec![a, b],
            Box::new(|_, g| vec![g.clone(), g.clone()]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x - y)
                .collect();
            Tensor::from_vec(ta.shape(), data)
        };
        self.push_node(
            out,
            vec![a, b],
            Box::new(|_, g| {
                let neg = Tensor::from_vec(g.shape(), g.data().iter().map(|v| -v).collect());
                vec![g.clone(), neg]
            }),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x * y)
                .collect();
            Tensor::from_vec(ta.shape(), data)
        };
        let (ai, bi) = (a.0, b.0);
        self.push_node(
            out,
            vec![a, b],
            Box::new(move |vals, g| {
                let (ta, tb) = (&vals[ai], &vals[bi]);
                let ga = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                );
                let gb = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                );
                vec![ga, gb]
            }),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(ta.shape(), tb.shape(), "div shape mismatch");
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x / y)
                .collect();
            Tensor::from_vec(ta.shape(), data)
        };
        let (ai, bi) = (a.0, b.0);
        self.push_node(
            out,
            vec![a, b],
            Box::new(move |vals, g| {
                let (ta, tb) = (&vals[ai], &vals[bi]);
                let ga = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().zip(tb.data()).map(|(x, y)| x / y).collect(),
                );
                let gb_data = g
                    .data()
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(gv, (av, bv))| -gv * av / (bv * bv))
                    .collect();
                vec![ga, Tensor::from_vec(g.shape(), gb_data)]
            }),
        )
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            Tensor::from_vec(ta.shape(), ta.data().iter().map(|v| v * k).collect())
        };
        self.push_node(
            out,
            vec![a],
            Box::new(move |_, g| {
                vec![Tensor::from_vec(
                    g.shape(),
                    g.data().iter().map(|v| v * k).collect(),
                )]
            }),
        )
    }

    /// Multiplies every entry by a scalar variable (shape `[1]`).
    pub fn mul_scalar(&self, x: Var, s: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let sv = inner.values[s.0].scalar_value();
            let tx = &inner.values[x.0];
            Tensor::from_vec(tx.shape(), tx.data().iter().map(|v| v * sv).collect())
        };
        let (xi, si) = (x.0, s.0);
        self.push_node(
            out,
            vec![x, s],
            Box::new(move |vals, g| {
                let sv = vals[si].scalar_value();
                let gx = Tensor::from_vec(
                    g.shape(),
                    g.data().iter().map(|v| v * sv).collect(),
                );
                let gs: f64 = g
                    .data()
                    .iter()
                    .zip(vals[xi].data())
                    .map(|(a, b)| a * b)
                    .sum();
                vec![gx, Tensor::scalar(gs)]
            }),
        )
    }

    /// Scales column `j` of `x` by `v[j]`.
    pub fn mul_cols(&self, x: Var, v: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let tx = &inner.values[x.0];
            let tv = &inner.values[v.0];
            let d = tx.cols();
            assert_eq!(tv.numel(), d, "mul_cols needs one factor per column");
            let mut data = tx.data().to_vec();
            for (i, val) in data.iter_mut().enumerate() {
                *val *= tv.data()[i % d];
            }
            Tensor::from_vec(tx.shape(), data)
        };
        let (xi, vi) = (x.0, v.0);
        self.push_node(
            out,
            vec![x, v],
            Box::new(move |vals, g| {
                let tx = &vals[xi];
                let tv = &vals[vi];
                let d = tx.cols();
                let mut gx = g.data().to_vec();
                for (i, val) in gx.iter_mut().enumerate() {
                    *val *= tv.data()[i % d];
                }
                let mut gv = vec![0.0; d];
                for (i, gval) in g.data().iter().enumerate() {
                    gv[i % d] += gval * tx.data()[i];
                }
                vec![
                    Tensor::from_vec(tx.shape(), gx),
                    Tensor::from_vec(vals[vi].shape(), gv),
                ]
            }),
        )
    }

    // ---- nonlinearities ----

    pub fn softplus(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            Tensor::from_vec(ta.shape(), ta.data().iter().map(|&v| softplus(v)).collect())
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let data = g
                    .data()
                    .iter()
                    .zip(vals[ai].data())
                    .map(|(gv, &x)| gv * sigmoid(x))
                    .collect();
                vec![Tensor::from_vec(g.shape(), data)]
            }),
        )
    }

    pub fn gelu(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            Tensor::from_vec(ta.shape(), ta.data().iter().map(|&v| gelu(v)).collect())
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let data = g
                    .data()
                    .iter()
                    .zip(vals[ai].data())
                    .map(|(gv, &x)| gv * gelu_grad(x))
                    .collect();
                vec![Tensor::from_vec(g.shape(), data)]
            }),
        )
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            Tensor::from_vec(ta.shape(), ta.data().iter().map(|v| v.sqrt()).collect())
        };
        let oi;
        {
            let inner = self.inner.borrow();
            oi = inner.values.len();
        }
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let data = g
                    .data()
                    .iter()
                    .zip(vals[oi].data())
                    .map(|(gv, &r)| gv / (2.0 * r))
                    .collect();
                vec![Tensor::from_vec(g.shape(), data)]
            }),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            matmul(ta, tb)
        };
        let (ai, bi) = (a.0, b.0);
        self.push_node(
            out,
            vec![a, b],
            Box::new(move |vals, g| {
                let (ta, tb) = (&vals[ai], &vals[bi]);
                let ga = matmul_nt(g, tb);
                let gb = matmul_tn(ta, g);
                vec![ga, gb]
            }),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            transpose(&inner.values[a.0])
        };
        self.push_node(out, vec![a], Box::new(|_, g| vec![transpose(g)]))
    }

    /// Affine map over the last axis: `y = x w^T (+ b)` with `x: [L][din]`,
    /// `w: [dout][din]`, `b: [dout]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (tx, tw) = (&inner.values[x.0], &inner.values[w.0]);
            let mut y = matmul_nt(tx, tw);
            if let Some(bv) = b {
                let tb = &inner.values[bv.0];
                let dout = tw.shape()[0];
                assert_eq!(tb.numel(), dout, "bias length mismatch");
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += tb.data()[i % dout];
                }
            }
            y
        };
        let (xi, wi) = (x.0, w.0);
        let mut inputs = vec![x, w];
        if let Some(bv) = b {
            inputs.push(bv);
        }
        let has_bias = b.is_some();
        self.push_node(
            out,
            inputs,
            Box::new(move |vals, g| {
                let (tx, tw) = (&vals[xi], &vals[wi]);
                let gx = matmul(g, tw);
                let gw = matmul_tn(g, tx);
                let mut outgrads = vec![gx, gw];
                if has_bias {
                    let dout = tw.shape()[0];
                    let mut gb = vec![0.0; dout];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % dout] += v;
                    }
                    outgrads.push(Tensor::from_vec(&[dout], gb));
                }
                outgrads
            }),
        )
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            softmax_rows(&inner.values[a.0])
        };
        let oi = self.inner.borrow().values.len();
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let s = &vals[oi];
                let cols = s.cols();
                let mut gx = vec![0.0; s.numel()];
                for r in 0..s.rows() {
                    let base = r * cols;
                    let srow = &s.data()[base..base + cols];
                    let grow = &g.data()[base..base + cols];
                    let dotv: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        gx[base + c] = srow[c] * (grow[c] - dotv);
                    }
                }
                vec![Tensor::from_vec(s.shape(), gx)]
            }),
        )
    }

    /// Per-row mean/variance normalization with learnable scale and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-8;
        let out = {
            let inner = self.inner.borrow();
            let tx = &inner.values[x.0];
            let tg = &inner.values[gamma.0];
            let tb = &inner.values[beta.0];
            let d = tx.cols();
            assert_eq!(tg.numel(), d, "layer_norm scale length mismatch");
            assert_eq!(tb.numel(), d, "layer_norm shift length mismatch");
            let mut y = vec![0.0; tx.numel()];
            for r in 0..tx.rows() {
                let row = &tx.data()[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + EPS).sqrt();
                for c in 0..d {
                    y[r * d + c] = (row[c] - mean) * inv * tg.data()[c] + tb.data()[c];
                }
            }
            Tensor::from_vec(tx.shape(), y)
        };
        let (xi, gi) = (x.0, gamma.0);
        self.push_node(
            out,
            vec![x, gamma, beta],
            Box::new(move |vals, g| {
                let tx = &vals[xi];
                let tg = &vals[gi];
                let d = tx.cols();
                let mut gx = vec![0.0; tx.numel()];
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for r in 0..tx.rows() {
                    let row = &tx.data()[r * d..(r + 1) * d];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let gxhat: Vec<f64> = grow
                        .iter()
                        .zip(tg.data())
                        .map(|(gv, gm)| gv * gm)
                        .collect();
                    let mean_gxhat = gxhat.iter().sum::<f64>() / d as f64;
                    let mean_gxhat_xhat =
                        gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        gx[r * d + c] =
                            inv * (gxhat[c] - mean_gxhat - xhat[c] * mean_gxhat_xhat);
                        ggamma[c] += grow[c] * xhat[c];
                        gbeta[c] += grow[c];
                    }
                }
                vec![
                    Tensor::from_vec(tx.shape(), gx),
                    Tensor::from_vec(&[d], ggamma),
                    Tensor::from_vec(&[d], gbeta),
                ]
            }),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            Tensor::scalar(inner.values[a.0].data().iter().sum())
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let gv = g.scalar_value();
                vec![Tensor::filled(vals[ai].shape(), gv)]
            }),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.inner.borrow().values[a.0].numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum over the last axis: `[L][k] -> [L]`.
    pub fn row_sums(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            let k = ta.cols();
            let data = (0..ta.rows())
                .map(|r| ta.data()[r * k..(r + 1) * k].iter().sum())
                .collect();
            Tensor::from_vec(&[ta.rows()], data)
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let ta = &vals[ai];
                let k = ta.cols();
                let mut gx = vec![0.0; ta.numel()];
                for r in 0..ta.rows() {
                    for c in 0..k {
                        gx[r * k + c] = g.data()[r];
                    }
                }
                vec![Tensor::from_vec(ta.shape(), gx)]
            }),
        )
    }

    pub fn dot(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(ta.numel(), tb.numel(), "dot length mismatch");
            Tensor::scalar(ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum())
        };
        let (ai, bi) = (a.0, b.0);
        self.push_node(
            out,
            vec![a, b],
            Box::new(move |vals, g| {
                let gv = g.scalar_value();
                let ga = Tensor::from_vec(
                    vals[ai].shape(),
                    vals[bi].data().iter().map(|v| v * gv).collect(),
                );
                let gb = Tensor::from_vec(
                    vals[bi].shape(),
                    vals[ai].data().iter().map(|v| v * gv).collect(),
                );
                vec![ga, gb]
            }),
        )
    }

    // ---- structural ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let out = {
            let inner = self.inner.borrow();
            inner.values[a.0].clone().reshaped(shape)
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                vec![g.clone().reshaped(vals[ai].shape())]
            }),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            let k = ta.cols();
            assert!(start + len <= ta.rows(), "slice_rows out of range");
            Tensor::from_vec(
                &[len, k],
                ta.data()[start * k..(start + len) * k].to_vec(),
            )
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let ta = &vals[ai];
                let k = ta.cols();
                let mut gx = vec![0.0; ta.numel()];
                gx[start * k..(start + len) * k].copy_from_slice(g.data());
                vec![Tensor::from_vec(ta.shape(), gx)]
            }),
        )
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (out, row_counts) = {
            let inner = self.inner.borrow();
            let k = inner.values[parts[0].0].cols();
            let mut data = Vec::new();
            let mut counts = Vec::new();
            for p in parts {
                let t = &inner.values[p.0];
                assert_eq!(t.cols(), k, "concat_rows column mismatch");
                counts.push(t.rows());
                data.extend_from_slice(t.data());
            }
            let rows: usize = counts.iter().sum();
            (Tensor::from_vec(&[rows, k], data), counts)
        };
        let k = out.cols();
        self.push_node(
            out,
            parts.to_vec(),
            Box::new(move |_, g| {
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for &rows in &row_counts {
                    grads.push(Tensor::from_vec(
                        &[rows, k],
                        g.data()[offset * k..(offset + rows) * k].to_vec(),
                    ));
                    offset += rows;
                }
                grads
            }),
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            let k = ta.cols();
            assert!(start + len <= k, "slice_cols out of range");
            let mut data = Vec::with_capacity(ta.rows() * len);
            for r in 0..ta.rows() {
                data.extend_from_slice(&ta.data()[r * k + start..r * k + start + len]);
            }
            Tensor::from_vec(&[ta.rows(), len], data)
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let ta = &vals[ai];
                let k = ta.cols();
                let mut gx = vec![0.0; ta.numel()];
                for r in 0..ta.rows() {
                    for c in 0..len {
                        gx[r * k + start + c] = g.data()[r * len + c];
                    }
                }
                vec![Tensor::from_vec(ta.shape(), gx)]
            }),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (out, widths) = {
            let inner = self.inner.borrow();
            let rows = inner.values[parts[0].0].rows();
            let mut widths = Vec::new();
            for p in parts {
                let t = &inner.values[p.0];
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                widths.push(t.cols());
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    let t = &inner.values[p.0];
                    data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            (Tensor::from_vec(&[rows, total], data), widths)
        };
        self.push_node(
            out,
            parts.to_vec(),
            Box::new(move |_, g| {
                let total: usize = widths.iter().sum();
                let rows = g.rows();
                let mut grads: Vec<Tensor> = widths
                    .iter()
                    .map(|&w| Tensor::zeros(&[rows, w]))
                    .collect();
                for r in 0..rows {
                    let mut off = 0;
                    for (gi, &w) in grads.iter_mut().zip(&widths) {
                        gi.data_mut()[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        off += w;
                    }
                }
                grads
            }),
        )
    }

    /// Gather rows: `out[i] = x[perm[i]]`.
    pub fn permute_rows(&self, a: Var, perm: Vec<usize>) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            let k = ta.cols();
            let mut data = Vec::with_capacity(perm.len() * k);
            for &src in &perm {
                data.extend_from_slice(&ta.data()[src * k..(src + 1) * k]);
            }
            Tensor::from_vec(&[perm.len(), k], data)
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let ta = &vals[ai];
                let k = ta.cols();
                let mut gx = vec![0.0; ta.numel()];
                for (i, &src) in perm.iter().enumerate() {
                    for c in 0..k {
                        gx[src * k + c] += g.data()[i * k + c];
                    }
                }
                vec![Tensor::from_vec(ta.shape(), gx)]
            }),
        )
    }

    /// Shifts rows down by one with a zero first row (previous-step view).
    pub fn shift_rows_down(&self, a: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            let ta = &inner.values[a.0];
            let k = ta.cols();
            let rows = ta.rows();
            let mut data = vec![0.0; ta.numel()];
            if rows > 1 {
                data[k..].copy_from_slice(&ta.data()[..(rows - 1) * k]);
            }
            Tensor::from_vec(ta.shape(), data)
        };
        let ai = a.0;
        self.push_node(
            out,
            vec![a],
            Box::new(move |vals, g| {
                let ta = &vals[ai];
                let k = ta.cols();
                let rows = ta.rows();
                let mut gx = vec![0.0; ta.numel()];
                if rows > 1 {
                    gx[..(rows - 1) * k].copy_from_slice(&g.data()[k..]);
                }
                vec![Tensor::from_vec(ta.shape(), gx)]
            }),
        )
    }
}

// ---- plain tensor helpers shared with non-tape code ----

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Tanh-form Gaussian error linear unit.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// `a [m][k] * b [k][n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a [m][k] * b^T` with `b [n][k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_nt inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data()[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a^T * b` with `a [k][m]`, `b [k][n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_tn inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data()[p * m..(p + 1) * m];
        let brow = &b.data()[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let cols = a.cols();
    let mut out = vec![0.0; a.numel()];
    for r in 0..a.rows() {
        let row = &a.data()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..cols {
            let e = (row[c] - max).exp();
            out[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            out[r * cols + c] /= sum;
        }
    }
    Tensor::from_vec(a.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_backward() {
        // f(x) = x with cotangent 1
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let grads = tape.backward(x, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.wrt(x).unwrap().scalar_value(), 1.0);
    }

    #[test]
    fn constant_has_zero_grad() {
        // f(x) = c: x never feeds the output, so its cotangent stays empty
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.scale(c, 2.0);
        let grads = tape.backward(y, Tensor::scalar(1.0)).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let y = tape.mul(x, x);
        assert_eq!(tape.value(y).scalar_value(), 9.0);
        let grads = tape.backward(y, Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.wrt(x).unwrap().scalar_value(), 6.0);
    }

    #[test]
    fn cotangent_shape_mismatch_is_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x, Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn backward_linearity() {
        // grad of (f + g) equals grad f + grad g computed separately
        let point = Tensor::from_vec(&[3], vec![0.3, -0.7, 1.1]);

        let t1 = Tape::new();
        let x1 = t1.constant(point.clone());
        let f = t1.sum_all(t1.mul(x1, x1));
        let gf = t1.backward(f, Tensor::scalar(1.0)).unwrap();

        let t2 = Tape::new();
        let x2 = t2.constant(point.clone());
        let g = t2.dot(x2, t2.softplus(x2));
        let gg = t2.backward(g, Tensor::scalar(1.0)).unwrap();

        let t3 = Tape::new();
        let x3 = t3.constant(point.clone());
        let both = t3.add(
            t3.sum_all(t3.mul(x3, x3)),
            t3.dot(x3, t3.softplus(x3)),
        );
        let gb = t3.backward(both, Tensor::scalar(1.0)).unwrap();

        for i in 0..3 {
            let summed = gf.wrt(x1).unwrap().data()[i] + gg.wrt(x2).unwrap().data()[i];
            assert!((gb.wrt(x3).unwrap().data()[i] - summed).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_hand_result() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![0.1, 2.0, -1.0, 5.0, 5.0, 5.0]);
        let s = softmax_rows(&x);
        for r in 0..2 {
            let sum: f64 = s.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // identical logits give the uniform row
        for c in 0..3 {
            assert!((s.at2(1, c) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn param_grads_scatter_into_store() {
        use crate::param::{Init, ParamStore};
        let mut store = ParamStore::new(0);
        let w = store.register("w", &[2], Init::Constant(2.0));
        let tape = Tape::new();
        let wv = tape.param(&store, w);
        let y = tape.dot(wv, wv);
        let grads = tape.backward(y, Tensor::scalar(1.0)).unwrap();
        grads.accumulate_into(&mut store);
        assert_eq!(store.grad(w).data(), &[4.0, 4.0]);
    }
}
