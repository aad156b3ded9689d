//! Dense NCHW tensors, a tape-based reverse-mode graph over them, and a
//! finite-difference gradient checker.

mod conv;
pub mod gradcheck;
mod graph;
mod pool;
mod scalar;

use std::fmt;

pub use graph::{BinaryOp, Graph, Var};
pub use scalar::Scalar;
pub(crate) use scalar::{gemm, MatRef};

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    /// Elements in one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::SCALAR
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}×{c}×{h}×{w}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense row-major 4-D array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values cannot fill a {shape} tensor",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [nn, cc, hh, ww] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..nn {
            for c in 0..cc {
                for h in 0..hh {
                    for w in 0..ww {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.shape.0;
        ((n * cc + c) * hh + h) * ww + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// The `(h, w)` plane of image `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() needs a single element, tensor is {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Channels `start..start + len` of every image.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape.0;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!(
                "channel slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let p = h * w;
        let mut data = Vec::with_capacity(n * len * p);
        for b in 0..n {
            let base = (b * c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor {
            shape: Shape::new(n, len, h, w),
            data,
        })
    }

    /// Channel-wise concatenation, `a`'s channels first.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (sa, sb) = (a.shape, b.shape);
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::shape(format!("cannot concatenate {sa} with {sb}")));
        }
        let p = sa.plane();
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..sa.n() {
            data.extend_from_slice(&a.data[n * sa.c() * p..(n + 1) * sa.c() * p]);
            data.extend_from_slice(&b.data[n * sb.c() * p..(n + 1) * sb.c() * p]);
        }
        Ok(Tensor {
            shape: Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w()),
            data,
        })
    }

    /// Stacks single images along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut batch = 0;
        for t in items {
            if t.shape.0[1..] != s.0[1..] {
                return Err(Error::shape(format!("cannot stack {} with {s}", t.shape)));
            }
            batch += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(batch, s.c(), s.h(), s.w()),
            data,
        })
    }

    /// Image `n` as a batch-of-one tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let per = self.shape.numel() / self.shape.n().max(1);
        Tensor {
            shape: Shape::new(1, self.shape.c(), self.shape.h(), self.shape.w()),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Zero-pads on the right and bottom to `h × w`.
    pub fn pad_bottom_right(&self, h: usize, w: usize) -> Result<Self> {
        let [n, c, sh, sw] = self.shape.0;
        if h < sh || w < sw {
            return Err(Error::shape(format!(
                "cannot pad {} down to {h}×{w}",
                self.shape
            )));
        }
        let mut out = Self::zeros(Shape::new(n, c, h, w));
        for b in 0..n {
            for ch in 0..c {
                for y in 0..sh {
                    let src = self.offset(b, ch, y, 0);
                    let dst = out.offset(b, ch, y, 0);
                    out.data[dst..dst + sw].copy_from_slice(&self.data[src..src + sw]);
                }
            }
        }
        Ok(out)
    }

    /// Keeps the top-left `h × w` region.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        let [n, c, sh, sw] = self.shape.0;
        if h > sh || w > sw {
            return Err(Error::shape(format!("cannot crop {} to {h}×{w}", self.shape)));
        }
        let mut out = Self::zeros(Shape::new(n, c, h, w));
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let src = self.offset(b, ch, y, 0);
                    let dst = out.offset(b, ch, y, 0);
                    out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
                }
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, ", {:?}", self.data)?;
        }
        write!(f, ")")
    }
}
