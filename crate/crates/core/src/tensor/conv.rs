//! im2col-based convolution kernels. Transposed convolution reuses the same
//! three primitives with the roles of input and output swapped.

use super::{gemm, MatRef, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Gradients for `(input, weight, bias)`, each present only when requested.
pub(crate) type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

/// Geometry of a cross-correlation from `in_c × in_h × in_w` to
/// `out_c × out_h × out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn conv(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [oc, ic, kh, kw] = weight.0;
        if input.c() != ic {
            return Err(Error::shape(format!(
                "conv2d input {input} has {} channels, weight {weight} expects {ic}",
                input.c()
            )));
        }
        check_hyper(stride, kh, kw)?;
        let out_dim = |len: usize, k: usize| {
            (len + 2 * pad)
                .checked_sub(k)
                .map(|d| d / stride + 1)
                .ok_or_else(|| {
                    Error::shape(format!(
                        "conv2d kernel {kh}×{kw} (pad {pad}) does not fit input {input}"
                    ))
                })
        };
        Ok(ConvGeom {
            in_c: ic,
            in_h: input.h(),
            in_w: input.w(),
            out_c: oc,
            out_h: out_dim(input.h(), kh)?,
            out_w: out_dim(input.w(), kw)?,
            kh,
            kw,
            stride,
            pad,
        })
    }

    /// Geometry of the convolution whose adjoint is the requested transposed
    /// convolution: its *output* is the transposed conv's input.
    pub fn conv_transpose(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        let [ic, oc, kh, kw] = weight.0;
        if input.c() != ic {
            return Err(Error::shape(format!(
                "conv_transpose2d input {input} has {} channels, weight {weight} expects {ic}",
                input.c()
            )));
        }
        check_hyper(stride, kh, kw)?;
        let out_dim = |len: usize, k: usize| {
            ((len.max(1) - 1) * stride + k)
                .checked_sub(2 * pad)
                .filter(|&d| d >= 1 && len >= 1)
                .ok_or_else(|| {
                    Error::shape(format!(
                        "conv_transpose2d with kernel {kh}×{kw}, stride {stride}, pad {pad} \
                         gives an empty output for input {input}"
                    ))
                })
        };
        Ok(ConvGeom {
            in_c: oc,
            in_h: out_dim(input.h(), kh)?,
            in_w: out_dim(input.w(), kw)?,
            out_c: ic,
            out_h: input.h(),
            out_w: input.w(),
            kh,
            kw,
            stride,
            pad,
        })
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }
}

fn check_hyper(stride: usize, kh: usize, kw: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    if kh == 0 || kw == 0 {
        return Err(Error::shape("kernel dimensions must be positive"));
    }
    Ok(())
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ohw = g.out_plane();
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch columns back into an input-shaped buffer.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let ohw = g.out_plane();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W · im2col(x)` for one image; `out` is `out_c × out_h·out_w`.
fn apply<T: Scalar>(x: &[T], weight: &[T], g: &ConvGeom, cols: &mut Vec<T>, out: &mut [T]) {
    let (k, ohw) = (g.patch_len(), g.out_plane());
    cols.resize(k * ohw, T::zero());
    im2col(x, g, cols);
    gemm(
        MatRef::new(weight, g.out_c, k),
        MatRef::new(cols, k, ohw),
        T::zero(),
        out,
    );
}

/// `dx += col2im(Wᵀ · dy)` for one image.
fn adjoint<T: Scalar>(dy: &[T], weight: &[T], g: &ConvGeom, cols: &mut Vec<T>, dx: &mut [T]) {
    let (k, ohw) = (g.patch_len(), g.out_plane());
    cols.resize(k * ohw, T::zero());
    gemm(
        MatRef::new(weight, g.out_c, k).t(),
        MatRef::new(dy, g.out_c, ohw),
        T::zero(),
        cols,
    );
    col2im(cols, g, dx);
}

/// `dw += dy · im2col(x)ᵀ` for one image.
fn weight_grad<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom, cols: &mut Vec<T>, dw: &mut [T]) {
    let (k, ohw) = (g.patch_len(), g.out_plane());
    cols.resize(k * ohw, T::zero());
    im2col(x, g, cols);
    gemm(
        MatRef::new(dy, g.out_c, ohw),
        MatRef::new(cols, k, ohw).t(),
        T::one(),
        dw,
    );
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let mut db = vec![T::zero(); s.c()];
    for (i, chunk) in dy.data().chunks(s.plane()).enumerate() {
        db[i % s.c()] = db[i % s.c()] + chunk.iter().copied().sum::<T>();
    }
    Tensor::new(Shape::new(s.c(), 1, 1, 1), db).expect("bias shape")
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::shape(format!(
            "bias {} does not match {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

pub(crate) fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    check_bias(bias, g.out_c)?;
    let n = x.shape().n();
    let out_shape = Shape::new(n, g.out_c, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let per_out = g.out_c * g.out_plane();
    let mut cols = Vec::new();
    for b in 0..n {
        let xi = &x.data()[b * g.in_len()..(b + 1) * g.in_len()];
        let oi = &mut out.data_mut()[b * per_out..(b + 1) * per_out];
        apply(xi, w.data(), g, &mut cols, oi);
        if let Some(bias) = bias {
            add_bias(oi, bias.data(), g.out_plane());
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` w.r.t. `(input, weight, bias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let n = x.shape().n();
    let per_out = g.out_c * g.out_plane();
    let mut cols = Vec::new();
    let dx = need[0].then(|| {
        let mut dx = Tensor::zeros(x.shape());
        for b in 0..n {
            adjoint(
                &dy.data()[b * per_out..(b + 1) * per_out],
                w.data(),
                g,
                &mut cols,
                &mut dx.data_mut()[b * g.in_len()..(b + 1) * g.in_len()],
            );
        }
        dx
    });
    let dw = need[1].then(|| {
        let mut dw = Tensor::zeros(w.shape());
        for b in 0..n {
            weight_grad(
                &x.data()[b * g.in_len()..(b + 1) * g.in_len()],
                &dy.data()[b * per_out..(b + 1) * per_out],
                g,
                &mut cols,
                dw.data_mut(),
            );
        }
        dw
    });
    let db = need[2].then(|| bias_grad(dy));
    (dx, dw, db)
}

/// `g` is the geometry from [`ConvGeom::conv_transpose`].
pub(crate) fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    check_bias(bias, g.in_c)?;
    let n = x.shape().n();
    let mut out = Tensor::zeros(Shape::new(n, g.in_c, g.in_h, g.in_w));
    let per_in = g.out_c * g.out_plane();
    let mut cols = Vec::new();
    for b in 0..n {
        let oi = &mut out.data_mut()[b * g.in_len()..(b + 1) * g.in_len()];
        adjoint(&x.data()[b * per_in..(b + 1) * per_in], w.data(), g, &mut cols, oi);
        if let Some(bias) = bias {
            add_bias(oi, bias.data(), g.in_h * g.in_w);
        }
    }
    Ok(out)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let n = x.shape().n();
    let per_x = g.out_c * g.out_plane();
    let mut cols = Vec::new();
    let dx = need[0].then(|| {
        let mut dx = Tensor::zeros(x.shape());
        for b in 0..n {
            apply(
                &dy.data()[b * g.in_len()..(b + 1) * g.in_len()],
                w.data(),
                g,
                &mut cols,
                &mut dx.data_mut()[b * per_x..(b + 1) * per_x],
            );
        }
        dx
    });
    let dw = need[1].then(|| {
        let mut dw = Tensor::zeros(w.shape());
        for b in 0..n {
            weight_grad(
                &dy.data()[b * g.in_len()..(b + 1) * g.in_len()],
                &x.data()[b * per_x..(b + 1) * per_x],
                g,
                &mut cols,
                dw.data_mut(),
            );
        }
        dw
    });
    let db = need[2].then(|| bias_grad(dy));
    (dx, dw, db)
}
