//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Ops append nodes in topological order, so the backward pass is a single
//! reverse sweep. Gradients accumulate; repeated `backward` calls without
//! zeroing add up, matching the usual autograd contract.

use super::kernels::{self, Dims5};
use super::optim::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        co: usize,
        k: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    },
    ConvTranspose3d {
        x: Var,
        w: Var,
        b: Var,
        co: usize,
        k: [usize; 3],
        stride: [usize; 3],
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<u32>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Silu(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
        din: usize,
        dout: usize,
    },
    AdaptiveAvgPool(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    MulChannel {
        x: Var,
        gate: Var,
    },
    SumAll(Var),
    Reshape(Var),
    Dropout3d {
        x: Var,
        keep: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims5(op: &'static str, shape: &[usize]) -> Result<Dims5> {
    if shape.len() != 5 {
        return Err(Error::invalid(op, format!("expected 5-d shape, got {:?}", shape)));
    }
    Ok(Dims5 {
        b: shape[0],
        c: shape[1],
        l: shape[2],
        h: shape[3],
        w: shape[4],
    })
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(&self.nodes[v.0].shape, self.nodes[v.0].data.clone()).expect("node shape")
    }

    /// External input; participates in gradients only if `track` is set.
    pub fn leaf(&mut self, t: &Tensor, track: bool) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), track, Op::Leaf)
    }

    pub fn leaf_owned(&mut self, shape: Vec<usize>, data: Vec<f64>, track: bool) -> Var {
        self.push(shape, data, track, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; its gradient flows back into the
    /// store via [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.tensor(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Param(id))
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let xd = dims5("conv3d", self.shape(x))?;
        let ws = self.shape(w);
        if ws.len() != 5 {
            return Err(Error::invalid("conv3d", format!("weight must be 5-d, got {:?}", ws)));
        }
        let (co, ci, k) = (ws[0], ws[1], [ws[2], ws[3], ws[4]]);
        if ci != xd.c {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                axis: 1,
                got: xd.c,
                expected: ci,
            });
        }
        if self.shape(b) != [co] {
            return Err(Error::invalid("conv3d", "bias extent must equal output channels"));
        }
        if stride.contains(&0) {
            return Err(Error::invalid("conv3d", "stride components must be >= 1"));
        }
        let ins = [xd.l, xd.h, xd.w];
        let mut outs = [0usize; 3];
        for a in 0..3 {
            outs[a] = kernels::conv_out_extent(ins[a], k[a], stride[a], pad[a]).ok_or(
                Error::ShapeMismatch {
                    op: "conv3d",
                    axis: 2 + a,
                    got: ins[a] + 2 * pad[a],
                    expected: k[a],
                },
            )?;
        }
        let od = Dims5 {
            b: xd.b,
            c: co,
            l: outs[0],
            h: outs[1],
            w: outs[2],
        };
        let mut out = vec![0.0; od.numel()];
        kernels::conv3d_fwd(
            self.value(x),
            xd,
            self.value(w),
            co,
            k,
            Some(self.value(b)),
            stride,
            pad,
            &mut out,
            od,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            vec![od.b, od.c, od.l, od.h, od.w],
            out,
            rg,
            Op::Conv3d {
                x,
                w,
                b,
                co,
                k,
                stride,
                pad,
            },
        ))
    }

    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3]) -> Result<Var> {
        let xd = dims5("conv_transpose3d", self.shape(x))?;
        let ws = self.shape(w);
        if ws.len() != 5 {
            return Err(Error::invalid(
                "conv_transpose3d",
                format!("weight must be 5-d, got {:?}", ws),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::invalid("conv_transpose3d", "stride components must be >= 1"));
        }
        let (ci, co, k) = (ws[0], ws[1], [ws[2], ws[3], ws[4]]);
        if ci != xd.c {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose3d",
                axis: 1,
                got: xd.c,
                expected: ci,
            });
        }
        if self.shape(b) != [co] {
            return Err(Error::invalid(
                "conv_transpose3d",
                "bias extent must equal output channels",
            ));
        }
        let od = Dims5 {
            b: xd.b,
            c: co,
            l: (xd.l - 1) * stride[0] + k[0],
            h: (xd.h - 1) * stride[1] + k[1],
            w: (xd.w - 1) * stride[2] + k[2],
        };
        let mut out = vec![0.0; od.numel()];
        kernels::conv_transpose3d_fwd(
            self.value(x),
            xd,
            self.value(w),
            co,
            k,
            Some(self.value(b)),
            stride,
            &mut out,
            od,
        );
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            vec![od.b, od.c, od.l, od.h, od.w],
            out,
            rg,
            Op::ConvTranspose3d { x, w, b, co, k, stride },
        ))
    }

    /// Max pooling with fixed kernel/stride `(1, 2, 2)`; H and W must be even.
    pub fn maxpool3d(&mut self, x: Var) -> Result<Var> {
        let xd = dims5("maxpool3d", self.shape(x))?;
        if xd.h % 2 != 0 {
            return Err(Error::invalid("maxpool3d", format!("H = {} is not divisible by 2", xd.h)));
        }
        if xd.w % 2 != 0 {
            return Err(Error::invalid("maxpool3d", format!("W = {} is not divisible by 2", xd.w)));
        }
        let od = Dims5 {
            h: xd.h / 2,
            w: xd.w / 2,
            ..xd
        };
        let mut out = vec![0.0; od.numel()];
        let mut argmax = vec![0u32; od.numel()];
        kernels::maxpool3d_fwd(self.value(x), xd, &mut out, od, &mut argmax);
        let rg = self.needs(x);
        Ok(self.push(
            vec![od.b, od.c, od.l, od.h, od.w],
            out,
            rg,
            Op::MaxPool3d { x, argmax },
        ))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let xd = dims5("group_norm", self.shape(x))?;
        if groups == 0 || xd.c % groups != 0 {
            return Err(Error::invalid(
                "group_norm",
                format!("{} channels not divisible into {} groups", xd.c, groups),
            ));
        }
        if self.shape(gamma) != [xd.c] || self.shape(beta) != [xd.c] {
            return Err(Error::invalid("group_norm", "affine params must have one entry per channel"));
        }
        let mut out = vec![0.0; xd.numel()];
        let mut mean = vec![0.0; xd.b * groups];
        let mut inv_std = vec![0.0; xd.b * groups];
        kernels::group_norm_fwd(
            self.value(x),
            xd,
            groups,
            eps,
            self.value(gamma),
            self.value(beta),
            &mut out,
            &mut mean,
            &mut inv_std,
        );
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            rg,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                inv_std,
            },
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| v * kernels::sigmoid(v)).collect();
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, data, rg, Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, data, rg, Op::Sigmoid(x))
    }

    /// `x: (B, D_in)`, `w: (D_out, D_in)`, `b: (D_out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::invalid("linear", "expects 2-d input and weight"));
        }
        let (rows, din) = (xs[0], xs[1]);
        let (dout, wdin) = (ws[0], ws[1]);
        if wdin != din {
            return Err(Error::ShapeMismatch {
                op: "linear",
                axis: 1,
                got: din,
                expected: wdin,
            });
        }
        if self.shape(b) != [dout] {
            return Err(Error::invalid("linear", "bias extent must equal output features"));
        }
        let mut out = vec![0.0; rows * dout];
        kernels::linear_fwd(self.value(x), rows, din, self.value(w), dout, Some(self.value(b)), &mut out);
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![rows, dout], out, rg, Op::Linear { x, w, b, din, dout }))
    }

    /// Global average over `(L, H, W)`, keeping `(B, C, 1, 1, 1)`.
    pub fn adaptive_avg_pool3d(&mut self, x: Var) -> Result<Var> {
        let xd = dims5("adaptive_avg_pool3d", self.shape(x))?;
        let plane = xd.plane();
        let mut out = vec![0.0; xd.b * xd.c];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.value(x)[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64;
        }
        let rg = self.needs(x);
        Ok(self.push(vec![xd.b, xd.c, 1, 1, 1], out, rg, Op::AdaptiveAvgPool(x)))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat", "needs at least one input"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {} out of range for rank {}", axis, first.len()),
            ));
        }
        let mut axis_total = 0usize;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() {
                return Err(Error::invalid("concat", "rank mismatch between inputs"));
            }
            for (a, (&x0, &x1)) in first.iter().zip(s).enumerate() {
                if a != axis && x0 != x1 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        axis: a,
                        got: x1,
                        expected: x0,
                    });
                }
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &v in xs {
            let s_axis = self.shape(v)[axis];
            let seg = s_axis * inner;
            for o in 0..outer {
                let src = &self.value(v)[o * seg..(o + 1) * seg];
                out[o * axis_total * inner + offset..][..seg].copy_from_slice(src);
            }
            offset += seg;
        }
        let rg = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        super::check_same_shape("add", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        super::check_same_shape("mul", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, rg, Op::Mul(a, b)))
    }

    /// Elementwise absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| v.abs()).collect();
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, data, rg, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|&v| c * v).collect();
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, data, rg, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|&v| v + c).collect();
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, data, rg, Op::AddScalar(x))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Adds `bias: (B, C)` to every spatial position of `x: (B, C, L, H, W)`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xd = dims5("add_channel_bias", self.shape(x))?;
        if self.shape(bias) != [xd.b, xd.c] {
            return Err(Error::invalid(
                "add_channel_bias",
                format!("bias shape {:?} does not match (B, C) = ({}, {})", self.shape(bias), xd.b, xd.c),
            ));
        }
        let spatial = xd.l * xd.h * xd.w;
        let mut data = self.value(x).to_vec();
        for bc in 0..xd.b * xd.c {
            let bv = self.value(bias)[bc];
            for v in &mut data[bc * spatial..(bc + 1) * spatial] {
                *v += bv;
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, rg, Op::AddChannelBias { x, bias }))
    }

    /// Multiplies every spatial position of channel `(b, c)` by `gate[b, c]`.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let xd = dims5("mul_channel", self.shape(x))?;
        let gs = self.shape(gate);
        let ok = gs == [xd.b, xd.c] || gs == [xd.b, xd.c, 1, 1, 1];
        if !ok {
            return Err(Error::invalid(
                "mul_channel",
                format!("gate shape {:?} does not match (B, C) = ({}, {})", gs, xd.b, xd.c),
            ));
        }
        let spatial = xd.l * xd.h * xd.w;
        let mut data = self.value(x).to_vec();
        for bc in 0..xd.b * xd.c {
            let gv = self.value(gate)[bc];
            for v in &mut data[bc * spatial..(bc + 1) * spatial] {
                *v *= gv;
            }
        }
        let rg = self.needs(x) || self.needs(gate);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, rg, Op::MulChannel { x, gate }))
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.needs(x);
        self.push(vec![1], vec![s], rg, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::invalid(
                "reshape",
                format!("cannot view {} elements as {:?}", self.value(x).len(), shape),
            ));
        }
        let data = self.value(x).to_vec();
        let rg = self.needs(x);
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape(x)))
    }

    /// Channel dropout: zeroes whole `(b, c)` channels with probability `p`
    /// and rescales survivors by `1/(1-p)`. `keep` carries the per-channel
    /// multiplier decided by the caller's rng.
    pub fn dropout3d(&mut self, x: Var, keep: Vec<f64>) -> Result<Var> {
        let xd = dims5("dropout3d", self.shape(x))?;
        if keep.len() != xd.b * xd.c {
            return Err(Error::invalid("dropout3d", "keep mask must have one entry per (b, c)"));
        }
        let spatial = xd.plane();
        let mut data = self.value(x).to_vec();
        for (bc, &kv) in keep.iter().enumerate() {
            if kv != 1.0 {
                for v in &mut data[bc * spatial..(bc + 1) * spatial] {
                    *v *= kv;
                }
            }
        }
        let rg = self.needs(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, data, rg, Op::Dropout3d { x, keep }))
    }

    fn ensure_grad(&mut self, v: usize) {
        if self.nodes[v].grad.is_none() {
            let n = self.nodes[v].data.len();
            self.nodes[v].grad = Some(vec![0.0; n]);
        }
    }

    fn add_to_grad(&mut self, v: Var, contrib: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        self.ensure_grad(v.0);
        let g = self.nodes[v.0].grad.as_mut().expect("grad allocated");
        for (gv, &c) in g.iter_mut().zip(contrib) {
            *gv += c;
        }
    }

    /// Reverse sweep from a scalar loss. Leaf and parameter gradients
    /// accumulate across calls; intermediate gradients are rebuilt each time.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got {} elements", self.nodes[loss.0].data.len()),
            ));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf | Op::Param(_)) {
                node.grad = None;
            }
        }
        self.ensure_grad(loss.0);
        self.nodes[loss.0].grad.as_mut().expect("allocated")[0] += 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            // Take grad and op out to appease the borrow checker; restored below.
            let go = self.nodes[i].grad.take().expect("present");
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_node(i, &go, &op);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(go);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, go: &[f64], op: &Op) {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv3d {
                x,
                w,
                b,
                co,
                k,
                stride,
                pad,
            } => {
                let xd = dims5("conv3d", self.shape(*x)).expect("validated");
                let od = dims5("conv3d", &self.nodes[i].shape).expect("validated");
                let mut gx = if self.needs(*x) {
                    Some(vec![0.0; self.value(*x).len()])
                } else {
                    None
                };
                let mut gw = if self.needs(*w) {
                    Some(vec![0.0; self.value(*w).len()])
                } else {
                    None
                };
                let mut gb = if self.needs(*b) {
                    Some(vec![0.0; self.value(*b).len()])
                } else {
                    None
                };
                kernels::conv3d_bwd(
                    self.value(*x),
                    xd,
                    self.value(*w),
                    *co,
                    *k,
                    *stride,
                    *pad,
                    go,
                    od,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gx {
                    self.add_to_grad(*x, &g);
                }
                if let Some(g) = gw {
                    self.add_to_grad(*w, &g);
                }
                if let Some(g) = gb {
                    self.add_to_grad(*b, &g);
                }
            }
            Op::ConvTranspose3d { x, w, b, co, k, stride } => {
                let xd = dims5("conv_transpose3d", self.shape(*x)).expect("validated");
                let od = dims5("conv_transpose3d", &self.nodes[i].shape).expect("validated");
                let mut gx = if self.needs(*x) {
                    Some(vec![0.0; self.value(*x).len()])
                } else {
                    None
                };
                let mut gw = if self.needs(*w) {
                    Some(vec![0.0; self.value(*w).len()])
                } else {
                    None
                };
                let mut gb = if self.needs(*b) {
                    Some(vec![0.0; self.value(*b).len()])
                } else {
                    None
                };
                kernels::conv_transpose3d_bwd(
                    self.value(*x),
                    xd,
                    self.value(*w),
                    *co,
                    *k,
                    *stride,
                    go,
                    od,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gx {
                    self.add_to_grad(*x, &g);
                }
                if let Some(g) = gw {
                    self.add_to_grad(*w, &g);
                }
                if let Some(g) = gb {
                    self.add_to_grad(*b, &g);
                }
            }
            Op::MaxPool3d { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                kernels::maxpool3d_bwd(go, argmax, &mut gx);
                self.add_to_grad(*x, &gx);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                inv_std,
            } => {
                let xd = dims5("group_norm", self.shape(*x)).expect("validated");
                let mut gx = if self.needs(*x) {
                    Some(vec![0.0; self.value(*x).len()])
                } else {
                    None
                };
                let mut gg = if self.needs(*gamma) {
                    Some(vec![0.0; self.value(*gamma).len()])
                } else {
                    None
                };
                let mut gb = if self.needs(*beta) {
                    Some(vec![0.0; self.value(*beta).len()])
                } else {
                    None
                };
                kernels::group_norm_bwd(
                    self.value(*x),
                    xd,
                    *groups,
                    self.value(*gamma),
                    mean,
                    inv_std,
                    go,
                    gx.as_deref_mut(),
                    gg.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gx {
                    self.add_to_grad(*x, &g);
                }
                if let Some(g) = gg {
                    self.add_to_grad(*gamma, &g);
                }
                if let Some(g) = gb {
                    self.add_to_grad(*beta, &g);
                }
            }
            Op::Silu(x) => {
                let gx: Vec<f64> = self
                    .value(*x)
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| {
                        let s = kernels::sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                self.add_to_grad(*x, &gx);
            }
            Op::Sigmoid(x) => {
                let gx: Vec<f64> = self.nodes[i]
                    .data
                    .iter()
                    .zip(go)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                self.add_to_grad(*x, &gx);
            }
            Op::Linear { x, w, b, din, dout } => {
                let rows = self.shape(*x)[0];
                let mut gx = if self.needs(*x) {
                    Some(vec![0.0; self.value(*x).len()])
                } else {
                    None
                };
                let mut gw = if self.needs(*w) {
                    Some(vec![0.0; self.value(*w).len()])
                } else {
                    None
                };
                let mut gb = if self.needs(*b) {
                    Some(vec![0.0; self.value(*b).len()])
                } else {
                    None
                };
                kernels::linear_bwd(
                    self.value(*x),
                    rows,
                    *din,
                    self.value(*w),
                    *dout,
                    go,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(g) = gx {
                    self.add_to_grad(*x, &g);
                }
                if let Some(g) = gw {
                    self.add_to_grad(*w, &g);
                }
                if let Some(g) = gb {
                    self.add_to_grad(*b, &g);
                }
            }
            Op::AdaptiveAvgPool(x) => {
                let xd = dims5("adaptive_avg_pool3d", self.shape(*x)).expect("validated");
                let plane = xd.plane();
                let mut gx = vec![0.0; self.value(*x).len()];
                for bc in 0..xd.b * xd.c {
                    let g = go[bc] / plane as f64;
                    for v in &mut gx[bc * plane..(bc + 1) * plane] {
                        *v += g;
                    }
                }
                self.add_to_grad(*x, &gx);
            }
            Op::Concat { xs, axis } => {
                let out_shape = self.nodes[i].shape.clone();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0usize;
                for &v in xs {
                    let s_axis = self.shape(v)[*axis];
                    let seg = s_axis * inner;
                    if self.needs(v) {
                        let mut gx = vec![0.0; self.value(v).len()];
                        for o in 0..outer {
                            gx[o * seg..(o + 1) * seg]
                                .copy_from_slice(&go[o * total * inner + offset..][..seg]);
                        }
                        self.add_to_grad(v, &gx);
                    }
                    offset += seg;
                }
            }
            Op::Add(a, b) => {
                self.add_to_grad(*a, go);
                self.add_to_grad(*b, go);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga: Vec<f64> = self.value(*b).iter().zip(go).map(|(&y, &g)| g * y).collect();
                    self.add_to_grad(*a, &ga);
                }
                if self.needs(*b) {
                    let gb: Vec<f64> = self.value(*a).iter().zip(go).map(|(&x, &g)| g * x).collect();
                    self.add_to_grad(*b, &gb);
                }
            }
            Op::Abs(x) => {
                let gx: Vec<f64> = self
                    .value(*x)
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.add_to_grad(*x, &gx);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = go.iter().map(|&g| g * c).collect();
                self.add_to_grad(*x, &gx);
            }
            Op::AddScalar(x) => {
                self.add_to_grad(*x, go);
            }
            Op::AddChannelBias { x, bias } => {
                if self.needs(*x) {
                    self.add_to_grad(*x, go);
                }
                if self.needs(*bias) {
                    let xd = dims5("add_channel_bias", self.shape(*x)).expect("validated");
                    let spatial = xd.plane();
                    let mut gb = vec![0.0; xd.b * xd.c];
                    for (bc, g) in gb.iter_mut().enumerate() {
                        *g = go[bc * spatial..(bc + 1) * spatial].iter().sum();
                    }
                    self.add_to_grad(*bias, &gb);
                }
            }
            Op::MulChannel { x, gate } => {
                let xd = dims5("mul_channel", self.shape(*x)).expect("validated");
                let spatial = xd.plane();
                if self.needs(*x) {
                    let mut gx = go.to_vec();
                    for bc in 0..xd.b * xd.c {
                        let gv = self.value(*gate)[bc];
                        for v in &mut gx[bc * spatial..(bc + 1) * spatial] {
                            *v *= gv;
                        }
                    }
                    self.add_to_grad(*x, &gx);
                }
                if self.needs(*gate) {
                    let mut gg = vec![0.0; xd.b * xd.c];
                    for (bc, g) in gg.iter_mut().enumerate() {
                        *g = go[bc * spatial..(bc + 1) * spatial]
                            .iter()
                            .zip(&self.value(*x)[bc * spatial..(bc + 1) * spatial])
                            .map(|(&a, &b)| a * b)
                            .sum();
                    }
                    self.add_to_grad(*gate, &gg);
                }
            }
            Op::SumAll(x) => {
                let g = go[0];
                let gx = vec![g; self.value(*x).len()];
                self.add_to_grad(*x, &gx);
            }
            Op::Reshape(x) => {
                self.add_to_grad(*x, go);
            }
            Op::Dropout3d { x, keep } => {
                let xd = dims5("dropout3d", self.shape(*x)).expect("validated");
                let spatial = xd.plane();
                let mut gx = go.to_vec();
                for (bc, &kv) in keep.iter().enumerate() {
                    if kv != 1.0 {
                        for v in &mut gx[bc * spatial..(bc + 1) * spatial] {
                            *v *= kv;
                        }
                    }
                }
                self.add_to_grad(*x, &gx);
            }
        }
    }

    /// Adds gradients of every param-bound leaf into the store's buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                store.add_grad(*id, g);
            }
        }
    }
}
