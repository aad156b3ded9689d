use super::conv::{self, ConvGeom};
use super::pool;
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    AvgPool {
        input: Var,
        k: usize,
        stride: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    PadReplicate {
        input: Var,
        pad: usize,
    },
    Tanh(Var),
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    ClampMin {
        input: Var,
        min: f64,
    },
    Sqrt(Var),
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
    },
    AddConst(Var),
    MulConst {
        input: Var,
        c: f64,
    },
    Sum(Var),
    Mean(Var),
    MaxNormalize {
        input: Var,
        floor: f64,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Values are computed eagerly as operations are
/// added; [`Graph::backward`] walks the tape once in reverse.
///
/// A graph is built per forward pass and dropped afterwards. It is `Send` but
/// must not be mutated from more than one thread.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant: no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf (a parameter, or an input under test).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) root w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Cross-correlation with `weight` of shape `[out_c, in_c, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::conv(self.shape(input), self.shape(weight), stride, pad)?;
        let value = conv::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        Ok(self.derived(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &deps,
        ))
    }

    /// Adjoint of [`conv2d`](Self::conv2d); `weight` is `[in_c, out_c, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::conv_transpose(self.shape(input), self.shape(weight), stride, pad)?;
        let value = conv::conv_transpose2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        )?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        Ok(self.derived(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            &deps,
        ))
    }

    pub fn avgpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let value = pool::avgpool(self.value(input), k, stride)?;
        Ok(self.derived(value, Op::AvgPool { input, k, stride }, &[input]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::concat_channels(self.value(a), self.value(b))?;
        Ok(self.derived(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(input).slice_channels(start, len)?;
        Ok(self.derived(value, Op::SliceChannels { input, start }, &[input]))
    }

    /// Pads every plane by `pad` on all sides, repeating the border values.
    pub fn pad_replicate(&mut self, input: Var, pad: usize) -> Result<Var> {
        let value = pool::pad_replicate(self.value(input), pad)?;
        Ok(self.derived(value, Op::PadReplicate { input, pad }, &[input]))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x.tanh());
        self.derived(value, Op::Tanh(input), &[input])
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let value = self
            .value(input)
            .map(|x| if x > T::zero() { x } else { s * x });
        self.derived(value, Op::LeakyRelu { input, slope }, &[input])
    }

    /// `max(x, min)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, input: Var, min: f64) -> Var {
        let m = T::lit(min);
        let value = self.value(input).map(|x| if x > m { x } else { m });
        self.derived(value, Op::ClampMin { input, min }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.clamp_min(input, 0.0)
    }

    /// Elementwise square root. The derivative at exactly zero is taken as 0.
    pub fn sqrt(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if let Some(bad) = x.data().iter().find(|v| **v < T::zero()) {
            return Err(Error::Numeric(format!("sqrt of negative value {bad}")));
        }
        let value = x.map(|v| v.sqrt());
        Ok(self.derived(value, Op::Sqrt(input), &[input]))
    }

    /// Elementwise `a ∘ b`. `b` must have `a`'s shape or be a single-element
    /// tensor, which is broadcast.
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && !sb.is_scalar() {
            return Err(Error::shape(format!(
                "elementwise {op:?} between {sa} and {sb}: shapes must match or the right side must be a scalar"
            )));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        if op == BinaryOp::Div {
            if let Some(i) = xb.iter().position(|v| *v == T::zero()) {
                return Err(Error::Numeric(format!(
                    "division by exact zero at element {i}"
                )));
            }
        }
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let data: Vec<T> = if sb.is_scalar() {
            xa.iter().map(|&x| f(x, xb[0])).collect()
        } else {
            xa.iter().zip(xb).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(sa, data)?;
        Ok(self.derived(value, Op::Binary { a, b, op }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Div)
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let c = T::lit(c);
        let value = self.value(input).map(|x| x + c);
        self.derived(value, Op::AddConst(input), &[input])
    }

    pub fn mul_scalar(&mut self, input: Var, c: f64) -> Var {
        let k = T::lit(c);
        let value = self.value(input).map(|x| x * k);
        self.derived(value, Op::MulConst { input, c }, &[input])
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, input: Var, scale: f64, offset: f64) -> Var {
        let scaled = self.mul_scalar(input, scale);
        self.add_scalar(scaled, offset)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.derived(Tensor::scalar(s), Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let s = x.data().iter().copied().sum::<T>() / T::from_usize(x.len()).unwrap();
        self.derived(Tensor::scalar(s), Op::Mean(input), &[input])
    }

    /// Divides each `(n, c)` plane by its maximum. Planes whose maximum does
    /// not exceed `floor` map to zeros.
    pub fn max_normalize(&mut self, input: Var, floor: f64) -> Var {
        let value = pool::max_normalize(self.value(input), T::lit(floor));
        self.derived(value, Op::MaxNormalize { input, floor }, &[input])
    }

    /// Populates gradients of the scalar `root` w.r.t. every recorded value
    /// that depends on a differentiable leaf. Previous gradients are cleared.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rs = self.shape(root);
        if rs.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {rs}"
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::full(rs, T::one()));
        for i in (0..=root.0).rev() {
            let (before, rest) = self.grads.split_at_mut(i);
            let Some(gy) = rest[0].as_ref() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: before,
            };
            propagate(&self.nodes[i], gy, &mut sink);
        }
        Ok(())
    }
}

struct GradSink<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn add_with(&mut self, v: Var, f: impl FnOnce() -> Tensor<T>) {
        if self.wants(v) {
            let g = f();
            self.add(v, g);
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn propagate<T: Scalar>(node: &Node<T>, gy: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let y = &node.value;
    let nodes = sink.nodes;
    let val = |v: Var| &nodes[v.0].value;
    match node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let need = [
                sink.wants(input),
                sink.wants(weight),
                bias.is_some_and(|b| sink.wants(b)),
            ];
            let (dx, dw, db) =
                conv::conv2d_backward(val(input), val(weight), gy, &geom, need);
            if let Some(g) = dx { sink.add(input, g) }
            if let Some(g) = dw { sink.add(weight, g) }
            if let (Some(b), Some(g)) = (bias, db) {
                sink.add(b, g);
            }
        }
        Op::ConvTranspose2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let need = [
                sink.wants(input),
                sink.wants(weight),
                bias.is_some_and(|b| sink.wants(b)),
            ];
            let (dx, dw, db) = conv::conv_transpose2d_backward(
                val(input),
                val(weight),
                gy,
                &geom,
                need,
            );
            if let Some(g) = dx { sink.add(input, g) }
            if let Some(g) = dw { sink.add(weight, g) }
            if let (Some(b), Some(g)) = (bias, db) {
                sink.add(b, g);
            }
        }
        Op::AvgPool { input, k, stride } => {
            let s = val(input).shape();
            sink.add_with(input, || pool::avgpool_backward(s, gy, k, stride));
        }
        Op::Concat { a, b } => {
            let ca = val(a).shape().c();
            let cb = val(b).shape().c();
            sink.add_with(a, || gy.slice_channels(0, ca).expect("concat split"));
            sink.add_with(b, || gy.slice_channels(ca, cb).expect("concat split"));
        }
        Op::SliceChannels { input, start } => {
            sink.add_with(input, || {
                let xs = val(input).shape();
                let ys = gy.shape();
                let mut g = Tensor::zeros(xs);
                let p = xs.plane();
                for n in 0..xs.n() {
                    let dst = ((n * xs.c()) + start) * p;
                    let src = n * ys.c() * p;
                    g.data_mut()[dst..dst + ys.c() * p]
                        .copy_from_slice(&gy.data()[src..src + ys.c() * p]);
                }
                g
            });
        }
        Op::PadReplicate { input, pad } => {
            let s = val(input).shape();
            sink.add_with(input, || pool::pad_replicate_backward(s, gy, pad));
        }
        Op::Tanh(input) => {
            sink.add_with(input, || zip_map(gy, y, |g, t| g * (T::one() - t * t)));
        }
        Op::LeakyRelu { input, slope } => {
            let s = T::lit(slope);
            sink.add_with(input, || {
                zip_map(gy, val(input), |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        g * s
                    }
                })
            });
        }
        Op::ClampMin { input, min } => {
            let m = T::lit(min);
            sink.add_with(input, || {
                zip_map(gy, val(input), |g, x| {
                    if x > m {
                        g
                    } else {
                        T::zero()
                    }
                })
            });
        }
        Op::Sqrt(input) => {
            let half = T::lit(0.5);
            sink.add_with(input, || {
                zip_map(gy, y, |g, r| {
                    if r > T::zero() {
                        g * half / r
                    } else {
                        T::zero()
                    }
                })
            });
        }
        Op::Binary { a, b, op } => binary_backward(a, b, op, y, gy, sink),
        Op::AddConst(input) => sink.add_with(input, || gy.clone()),
        Op::MulConst { input, c } => {
            let k = T::lit(c);
            sink.add_with(input, || gy.map(|g| g * k));
        }
        Op::Sum(input) => {
            let s = val(input).shape();
            sink.add_with(input, || Tensor::full(s, gy.data()[0]));
        }
        Op::Mean(input) => {
            let s = val(input).shape();
            let g = gy.data()[0] / T::from_usize(s.numel()).unwrap();
            sink.add_with(input, || Tensor::full(s, g));
        }
        Op::MaxNormalize { input, floor } => {
            sink.add_with(input, || {
                pool::max_normalize_backward(val(input), gy, T::lit(floor))
            });
        }
    }
}

fn binary_backward<T: Scalar>(
    a: Var,
    b: Var,
    op: BinaryOp,
    y: &Tensor<T>,
    gy: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let nodes = sink.nodes;
    let xa = &nodes[a.0].value;
    let xb = &nodes[b.0].value;
    let broadcast = xb.shape() != xa.shape();
    // Right operand expanded to the left operand's shape.
    let expanded;
    let xb_full = if broadcast {
        expanded = Tensor::full(xa.shape(), xb.data()[0]);
        &expanded
    } else {
        xb
    };
    let ga = match op {
        BinaryOp::Add | BinaryOp::Sub => gy.clone(),
        BinaryOp::Mul => zip_map(gy, xb_full, |g, v| g * v),
        BinaryOp::Div => zip_map(gy, xb_full, |g, v| g / v),
    };
    let gb_full = match op {
        BinaryOp::Add => gy.clone(),
        BinaryOp::Sub => gy.map(|g| -g),
        BinaryOp::Mul => zip_map(gy, xa, |g, v| g * v),
        // d(a/b)/db = -y/b
        BinaryOp::Div => {
            let t = zip_map(gy, y, |g, q| g * q);
            zip_map(&t, xb_full, |v, d| -v / d)
        }
    };
    sink.add_with(a, || ga);
    let bshape = xb.shape();
    sink.add_with(b, || {
        if broadcast {
            Tensor::full(bshape, gb_full.data().iter().copied().sum())
        } else {
            gb_full
        }
    });
}
