//! Space-to-channel deshuffle and its inverse, the sub-pixel shuffle.
//!
//! Index convention: input site `(c, y*a + dy, x*a + dx)` maps to output
//! channel `c*a^2 + dy*a + dx` at `(y, x)`. Both operations are pure
//! permutations, so each one's backward pass is the other.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub fn deshuffle<T: Scalar>(input: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if alpha == 0 {
        return shape_err("deshuffle factor must be >= 1");
    }
    if !s.h.is_multiple_of(alpha) {
        return shape_err(format!("deshuffle: height {} not divisible by {alpha}", s.h));
    }
    if !s.w.is_multiple_of(alpha) {
        return shape_err(format!("deshuffle: width {} not divisible by {alpha}", s.w));
    }
    let out_shape = Shape::new(s.n, s.c * alpha * alpha, s.h / alpha, s.w / alpha);
    let src = input.data();
    let mut out = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..alpha {
                for dx in 0..alpha {
                    for y in 0..out_shape.h {
                        let row = s.index(n, c, y * alpha + dy, 0);
                        out.extend((0..out_shape.w).map(|x| src[row + x * alpha + dx]));
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn shuffle<T: Scalar>(input: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if alpha == 0 {
        return shape_err("shuffle factor must be >= 1");
    }
    let block = alpha * alpha;
    if !s.c.is_multiple_of(block) {
        return shape_err(format!("shuffle: {} channels not divisible by {block}", s.c));
    }
    let out_shape = Shape::new(s.n, s.c / block, s.h * alpha, s.w * alpha);
    let src = input.data();
    let mut out = vec![T::zero(); out_shape.len()];
    for n in 0..s.n {
        for c in 0..out_shape.c {
            for dy in 0..alpha {
                for dx in 0..alpha {
                    let ch = c * block + dy * alpha + dx;
                    for y in 0..s.h {
                        let srow = s.index(n, ch, y, 0);
                        let drow = out_shape.index(n, c, y * alpha + dy, 0);
                        for x in 0..s.w {
                            out[drow + x * alpha + dx] = src[srow + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradient of [`deshuffle`] with respect to its input.
pub fn deshuffle_backward<T: Scalar>(grad_out: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    shuffle(grad_out, alpha)
}

/// Gradient of [`shuffle`] with respect to its input.
pub fn shuffle_backward<T: Scalar>(grad_out: &Tensor<T>, alpha: usize) -> Result<Tensor<T>> {
    deshuffle(grad_out, alpha)
}
