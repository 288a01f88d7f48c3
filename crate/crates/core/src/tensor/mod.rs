//! Dense 4-D tensors in `(n, c, h, w)` order and the handful of
//! differentiable operations the network is built from.

mod conv;
mod sgd;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams};
pub use sgd::sgd_step;

use std::fmt;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return shape_err(format!("all dimensions must be >= 1, got {self}"));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Row-major `(n, c, h, w)` tensor with an optional gradient buffer of the
/// same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return shape_err(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            ));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn full(shape: Shape, value: T) -> Result<Self> {
        Self::from_vec(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self::from_vec(shape, data)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        let data = (0..shape.len()).map(|_| T::of_f64(rng.gen_range(lo..hi))).collect();
        Self::from_vec(shape, data)
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

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous `h*w` plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Allocates (or resets) the gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape != self.shape {
            return shape_err(format!("gradient shape {} != tensor shape {}", g.shape, self.shape));
        }
        let buf = self.grad.get_or_insert_with(|| vec![T::zero(); g.data.len()]);
        buf.iter_mut().zip(&g.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn try_map(&self, f: impl Fn(T) -> Result<T>) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect::<Result<Vec<_>>>()?;
        Ok(Self { shape: self.shape, data, grad: None })
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        same_shape(self, other, "elementwise")?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            grad: None,
        })
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// Converts element type, e.g. to run an `f32` network in `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(), grad: None }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return shape_err(format!("cannot reshape {} into {shape}", self.shape));
        }
        Tensor::from_vec(shape, self.data)
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if count == 0 || start + count > s.c {
            return shape_err(format!("channel slice {start}..{} out of range for {s}", start + count));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * count * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + count * p]);
        }
        Tensor::from_vec(Shape::new(s.n, count, s.h, s.w), data)
    }

    /// Copies batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if count == 0 || start + count > s.n {
            return shape_err(format!("batch slice {start}..{} out of range for {s}", start + count));
        }
        let item = s.c * s.plane();
        Tensor::from_vec(Shape::new(count, s.c, s.h, s.w), self.data[start * item..(start + count) * item].to_vec())
    }

    /// Spatial crop `[y0, y0 + h) x [x0, x0 + w)` over every batch item and channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || y0 + h > s.h || x0 + w > s.w {
            return shape_err(format!("crop {h}x{w} at ({y0},{x0}) exceeds {s}"));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in y0..y0 + h {
                    let row = s.index(n, c, y, x0);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Tensor::from_vec(Shape::new(s.n, s.c, h, w), data)
    }
}

pub(crate) fn same_shape<T>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return shape_err(format!("{what}: shape {} != {}", a.shape, b.shape));
    }
    Ok(())
}

/// Elementwise rectifier.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn add_assign<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    same_shape(a, b, "add")?;
    a.data.iter_mut().zip(&b.data).for_each(|(x, &y)| *x += y);
    Ok(())
}

/// Stacks along the channel axis, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_many(&[a, b])
}

pub fn concat_many<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat of zero tensors");
    };
    let s0 = first.shape;
    for t in parts {
        let s = t.shape;
        if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
            return shape_err(format!("concat: {s} incompatible with {s0}"));
        }
    }
    let c_total: usize = parts.iter().map(|t| t.shape.c).sum();
    let p = s0.plane();
    let mut data = Vec::with_capacity(s0.n * c_total * p);
    for n in 0..s0.n {
        for t in parts {
            let item = t.shape.c * p;
            data.extend_from_slice(&t.data[n * item..(n + 1) * item]);
        }
    }
    Tensor::from_vec(Shape::new(s0.n, c_total, s0.h, s0.w), data)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, counts: &[usize]) -> Result<Vec<Tensor<T>>> {
    if counts.iter().sum::<usize>() != t.shape.c {
        return shape_err(format!("split {counts:?} does not cover {} channels", t.shape.c));
    }
    let mut start = 0;
    counts
        .iter()
        .map(|&c| {
            let part = t.slice_channels(start, c);
            start += c;
            part
        })
        .collect()
}

/// Concatenates along the batch axis.
pub fn stack_batch<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = items.first() else {
        return shape_err("stack of zero tensors");
    };
    let s0 = first.shape;
    let mut data = Vec::with_capacity(items.len() * s0.len());
    let mut n = 0;
    for t in items {
        let s = t.shape;
        if (s.c, s.h, s.w) != (s0.c, s0.h, s0.w) {
            return shape_err(format!("stack: {s} incompatible with {s0}"));
        }
        n += s.n;
        data.extend_from_slice(&t.data);
    }
    Tensor::from_vec(Shape::new(n, s0.c, s0.h, s0.w), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: Shape, v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::zeros(Shape::new(1, 0, 2, 2)).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);

        let neg = t(Shape::new(1, 1, 2, 2), &[-1.0, -2.0, -0.5, -3.0]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let g = Tensor::full(neg.shape(), 1.0f32).unwrap();
        assert!(relu_backward(&neg, &g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn add_zero_is_identity() {
        let x = t(Shape::new(1, 2, 1, 2), &[1.0, -2.0, 3.5, 4.0]);
        let z = Tensor::zeros(x.shape()).unwrap();
        assert_eq!(add(&x, &z).unwrap(), x);
        assert!(add(&x, &Tensor::zeros(Shape::new(1, 1, 1, 2)).unwrap()).is_err());
    }

    #[test]
    fn concat_places_b_after_a() {
        let a = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, x| (c * 4 + y * 2 + x) as f32).unwrap();
        let b = t(Shape::new(1, 1, 2, 2), &[10.0, 11.0, 12.0, 13.0]);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), Shape::new(1, 4, 2, 2));
        assert_eq!(cat.plane(0, 3), b.plane(0, 0));
        assert!(concat_channels(&a, &t(Shape::new(1, 1, 1, 4), &[0.0; 4])).is_err());
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut x = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2)).unwrap();
        assert!(x.grad().is_none());
        x.accumulate_grad(&Tensor::full(x.shape(), 0.5).unwrap()).unwrap();
        x.accumulate_grad(&Tensor::full(x.shape(), 0.25).unwrap()).unwrap();
        assert_eq!(x.grad().unwrap().len(), x.shape().len());
        assert!(x.grad().unwrap().iter().all(|&g| g == 0.75));
        assert!(x.accumulate_grad(&Tensor::zeros(Shape::new(1, 1, 2, 2)).unwrap()).is_err());
        x.zero_grad();
        assert!(x.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    proptest! {
        #[test]
        fn concat_is_inverted_by_slicing(ca in 1usize..4, cb in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f32>::random_uniform(Shape::new(2, ca, h, w), -1.0, 1.0, &mut rng).unwrap();
            let b = Tensor::<f32>::random_uniform(Shape::new(2, cb, h, w), -1.0, 1.0, &mut rng).unwrap();
            let cat = concat_channels(&a, &b).unwrap();
            let parts = split_channels(&cat, &[ca, cb]).unwrap();
            prop_assert_eq!(&parts[0], &a);
            prop_assert_eq!(&parts[1], &b);
        }
    }
}
