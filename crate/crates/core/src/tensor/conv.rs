use rand::Rng;
use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Square-kernel, stride-1, same-padded convolution weights.
///
/// `weight` has shape `(out_ch, in_ch, k, k)` with `k` odd; the zero padding
/// is always `(k - 1) / 2` so the spatial size is preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients with the same layout as [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w || s.h.is_multiple_of(2) {
            return shape_err(format!("kernel must be square with odd size, got {}x{}", s.h, s.w));
        }
        if bias.len() != s.n {
            return shape_err(format!("bias length {} != out_ch {}", bias.len(), s.n));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Result<Self> {
        Self::new(Tensor::zeros(Shape::new(out_ch, in_ch, k, k))?, vec![T::zero(); out_ch])
    }

    /// Fan-in scaled uniform init: weights and biases in `±sqrt(1 / (in_ch k^2))`.
    pub fn init_uniform(out_ch: usize, in_ch: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (1.0 / (in_ch * k * k) as f64).sqrt();
        let weight = Tensor::random_uniform(Shape::new(out_ch, in_ch, k, k), -bound, bound, rng)?;
        let bias = (0..out_ch).map(|_| T::of_f64(rng.gen_range(-bound..bound))).collect();
        Self::new(weight, bias)
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn padding(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    pub fn stride(&self) -> usize {
        1
    }

    pub fn num_scalars(&self) -> usize {
        self.weight.shape().len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams { weight: self.weight.cast(), bias: self.bias.iter().map(|b| U::of_f64(b.as_f64())).collect() }
    }

    fn check_input(&self, input: Shape) -> Result<()> {
        if input.c != self.in_ch() {
            return shape_err(format!(
                "conv2d expects {} input channels, got {} (input {input})",
                self.in_ch(),
                input.c
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(p: &ConvParams<T>) -> Self {
        Self {
            weight: Tensor::zeros(p.weight.shape()).expect("param shape is valid"),
            bias: vec![T::zero(); p.bias.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weight.data().iter().chain(self.bias.iter())
    }
}

/// Range of destination columns `x` for which `x + dx` lies in `[0, w)`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = ((-d).max(0) as usize).min(len);
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Same-padded cross-correlation plus bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    params.check_input(s)?;
    let (oc_n, ic_n, k) = (params.out_ch(), params.in_ch(), params.kernel());
    let pad = params.padding() as isize;
    let out_shape = Shape::new(s.n, oc_n, s.h, s.w);
    let plane = s.plane();
    let weights = params.weight.data();

    let mut out = vec![T::zero(); out_shape.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (n, oc) = (idx / oc_n, idx % oc_n);
        dst.iter_mut().for_each(|v| *v = params.bias[oc]);
        for ic in 0..ic_n {
            let src = input.plane(n, ic);
            let wbase = (oc * ic_n + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(s.h, dy);
                for kx in 0..k {
                    let wv = weights[wbase + ky * k + kx];
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(s.w, dx);
                    if x0 == x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let drow = &mut dst[y * s.w + x0..y * s.w + x1];
                        let sstart = (sy * s.w) as isize + x0 as isize + dx;
                        let srow = &src[sstart as usize..sstart as usize + (x1 - x0)];
                        for (d, &v) in drow.iter_mut().zip(srow) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Adjoint of [`conv2d`]: returns the gradient with respect to the input
/// and to every weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let s = input.shape();
    params.check_input(s)?;
    let (oc_n, ic_n, k) = (params.out_ch(), params.in_ch(), params.kernel());
    let expected = Shape::new(s.n, oc_n, s.h, s.w);
    if grad_out.shape() != expected {
        return shape_err(format!("conv2d_backward: grad_out shape {} != output shape {expected}", grad_out.shape()));
    }
    let pad = params.padding() as isize;
    let plane = s.plane();
    let weights = params.weight.data();

    // Input gradient: one task per (n, ic) plane, scattered from every output channel.
    let mut grad_in = vec![T::zero(); s.len()];
    grad_in.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (n, ic) = (idx / ic_n, idx % ic_n);
        for oc in 0..oc_n {
            let go = grad_out.plane(n, oc);
            let wbase = (oc * ic_n + ic) * k * k;
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(s.h, dy);
                for kx in 0..k {
                    let wv = weights[wbase + ky * k + kx];
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(s.w, dx);
                    if x0 == x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * s.w + x0..y * s.w + x1];
                        let dstart = ((sy * s.w) as isize + x0 as isize + dx) as usize;
                        let drow = &mut dst[dstart..dstart + (x1 - x0)];
                        for (d, &g) in drow.iter_mut().zip(grow) {
                            *d += wv * g;
                        }
                    }
                }
            }
        }
    });

    // Weight gradient: one task per (oc, ic) kernel, correlating grad_out with the input.
    let mut grad_w = vec![T::zero(); params.weight.shape().len()];
    grad_w.par_chunks_mut(k * k).enumerate().for_each(|(idx, dst)| {
        let (oc, ic) = (idx / ic_n, idx % ic_n);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = valid_range(s.h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = valid_range(s.w, dx);
                if x0 == x1 {
                    continue;
                }
                let mut acc = T::zero();
                for n in 0..s.n {
                    let go = grad_out.plane(n, oc);
                    let src = input.plane(n, ic);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &go[y * s.w + x0..y * s.w + x1];
                        let sstart = ((sy * s.w) as isize + x0 as isize + dx) as usize;
                        let srow = &src[sstart..sstart + (x1 - x0)];
                        for (&g, &v) in grow.iter().zip(srow) {
                            acc += g * v;
                        }
                    }
                }
                dst[ky * k + kx] = acc;
            }
        }
    });

    let grad_b = (0..oc_n)
        .map(|oc| {
            let mut acc = T::zero();
            for n in 0..s.n {
                for &g in grad_out.plane(n, oc) {
                    acc += g;
                }
            }
            acc
        })
        .collect();

    Ok((
        Tensor::from_vec(s, grad_in)?,
        ConvGrads { weight: Tensor::from_vec(params.weight.shape(), grad_w)?, bias: grad_b },
    ))
}
