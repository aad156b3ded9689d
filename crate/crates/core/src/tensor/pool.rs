//! Window and border kernels: average pooling, replicate padding and
//! per-plane max normalization.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) fn pool_shape(input: Shape, k: usize, stride: usize) -> Result<Shape> {
    if k == 0 || stride == 0 {
        return Err(Error::shape("pooling window and stride must be positive"));
    }
    if k > input.h() || k > input.w() {
        return Err(Error::shape(format!(
            "pooling window {k}×{k} larger than input {input}"
        )));
    }
    Ok(Shape::new(
        input.n(),
        input.c(),
        (input.h() - k) / stride + 1,
        (input.w() - k) / stride + 1,
    ))
}

pub(crate) fn avgpool<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = pool_shape(s, k, stride)?;
    let scale = T::one() / T::from_usize(k * k).unwrap();
    let mut out = Tensor::zeros(os);
    let (w, oh, ow) = (s.w(), os.h(), os.w());
    let planes = s.n() * s.c();
    for p in 0..planes {
        let src = &x.data()[p * s.plane()..(p + 1) * s.plane()];
        let dst = &mut out.data_mut()[p * os.plane()..(p + 1) * os.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..k {
                    let row = &src[(oy * stride + ky) * w + ox * stride..][..k];
                    acc = acc + row.iter().copied().sum::<T>();
                }
                dst[oy * ow + ox] = acc * scale;
            }
        }
    }
    Ok(out)
}

pub(crate) fn avgpool_backward<T: Scalar>(
    input: Shape,
    dy: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Tensor<T> {
    let os = dy.shape();
    let scale = T::one() / T::from_usize(k * k).unwrap();
    let mut dx = Tensor::zeros(input);
    let (w, oh, ow) = (input.w(), os.h(), os.w());
    for p in 0..input.n() * input.c() {
        let g = &dy.data()[p * os.plane()..(p + 1) * os.plane()];
        let dst = &mut dx.data_mut()[p * input.plane()..(p + 1) * input.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[oy * ow + ox] * scale;
                for ky in 0..k {
                    let row = &mut dst[(oy * stride + ky) * w + ox * stride..][..k];
                    row.iter_mut().for_each(|r| *r = *r + v);
                }
            }
        }
    }
    dx
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

pub(crate) fn pad_replicate<T: Scalar>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h() == 0 || s.w() == 0 {
        return Err(Error::shape(format!("cannot replicate-pad empty {s}")));
    }
    let os = Shape::new(s.n(), s.c(), s.h() + 2 * pad, s.w() + 2 * pad);
    let mut out = Tensor::zeros(os);
    for p in 0..s.n() * s.c() {
        let src = &x.data()[p * s.plane()..(p + 1) * s.plane()];
        let dst = &mut out.data_mut()[p * os.plane()..(p + 1) * os.plane()];
        for y in 0..os.h() {
            let sy = clamp_index(y as isize - pad as isize, s.h());
            for xx in 0..os.w() {
                let sx = clamp_index(xx as isize - pad as isize, s.w());
                dst[y * os.w() + xx] = src[sy * s.w() + sx];
            }
        }
    }
    Ok(out)
}

pub(crate) fn pad_replicate_backward<T: Scalar>(
    input: Shape,
    dy: &Tensor<T>,
    pad: usize,
) -> Tensor<T> {
    let os = dy.shape();
    let mut dx = Tensor::zeros(input);
    for p in 0..input.n() * input.c() {
        let g = &dy.data()[p * os.plane()..(p + 1) * os.plane()];
        let dst = &mut dx.data_mut()[p * input.plane()..(p + 1) * input.plane()];
        for y in 0..os.h() {
            let sy = clamp_index(y as isize - pad as isize, input.h());
            for xx in 0..os.w() {
                let sx = clamp_index(xx as isize - pad as isize, input.w());
                let i = sy * input.w() + sx;
                dst[i] = dst[i] + g[y * os.w() + xx];
            }
        }
    }
    dx
}

/// Index of the first maximum in each `(n, c)` plane.
pub(crate) fn plane_argmax<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    x.data()
        .chunks(x.shape().plane())
        .map(|plane| {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Divides every plane by its maximum; planes whose maximum does not exceed
/// `floor` become all zeros.
pub(crate) fn max_normalize<T: Scalar>(x: &Tensor<T>, floor: T) -> Tensor<T> {
    let mut out = x.clone();
    let p = x.shape().plane();
    for (plane, arg) in out.data_mut().chunks_mut(p).zip(plane_argmax(x)) {
        let m = plane[arg];
        if m > floor {
            plane.iter_mut().for_each(|v| *v = *v / m);
        } else {
            plane.fill(T::zero());
        }
    }
    out
}

pub(crate) fn max_normalize_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    floor: T,
) -> Tensor<T> {
    let p = x.shape().plane();
    let mut dx = Tensor::zeros(x.shape());
    let args = plane_argmax(x);
    for (pi, arg) in args.into_iter().enumerate() {
        let xs = &x.data()[pi * p..(pi + 1) * p];
        let g = &dy.data()[pi * p..(pi + 1) * p];
        let m = xs[arg];
        if m <= floor {
            continue;
        }
        let dst = &mut dx.data_mut()[pi * p..(pi + 1) * p];
        // y_i = x_i / m, with m = x_arg.
        let mut through_max = T::zero();
        for i in 0..p {
            dst[i] = g[i] / m;
            through_max = through_max + g[i] * xs[i];
        }
        dst[arg] = dst[arg] - through_max / (m * m);
    }
    dx
}
