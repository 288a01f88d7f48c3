use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Counts of scalar values per bin. Bins are `[e_i, e_{i+1})` except the
/// last, which also includes its right edge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub nonfinite: u64,
    pub total: u64,
    /// Share of all scalars lying in `[0, 10]`.
    pub fraction_0_10: f64,
}

pub fn pixel_histogram<T: Scalar>(imgs: &[&Tensor<T>], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 {
        return Err(Error::Config("need at least two bin edges".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing".into()));
    }
    let total: usize = imgs.iter().map(|t| t.data().len()).sum();
    if total == 0 {
        return Err(Error::Data("histogram of empty input".into()));
    }
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
        nonfinite: 0,
        total: total as u64,
        fraction_0_10: 0.0,
    };
    let last = *edges.last().expect("len >= 2");
    let mut in_range = 0u64;
    for img in imgs {
        for &v in img.data() {
            let v = v.as_f64();
            if !v.is_finite() {
                h.nonfinite += 1;
                continue;
            }
            if (0.0..=10.0).contains(&v) {
                in_range += 1;
            }
            if v < edges[0] {
                h.underflow += 1;
            } else if v > last {
                h.overflow += 1;
            } else {
                // first edge strictly greater than v, minus one; v == last lands in the final bin
                let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(h.counts.len() - 1);
                h.counts[idx] += 1;
            }
        }
    }
    h.fraction_0_10 = in_range as f64 / total as f64;
    Ok(h)
}

/// Parses `"0,1,2,...,200"`; a `...` token continues the arithmetic
/// progression of the two preceding edges up to the following one.
pub fn parse_bin_edges(text: &str) -> Result<Vec<f64>> {
    let tokens: Vec<&str> = text.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    let mut edges: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == "..." {
            let (n, next) = (edges.len(), tokens.get(i + 1));
            let (Some(next), true) = (next, n >= 2) else {
                return Err(Error::Config("\"...\" needs two edges before it and one after".into()));
            };
            let end: f64 = next.parse().map_err(|_| Error::Config(format!("bad bin edge \"{next}\"")))?;
            let (a, b) = (edges[n - 2], edges[n - 1]);
            let step = b - a;
            if !(step > 0.0) {
                return Err(Error::Config("bin edges must increase before \"...\"".into()));
            }
            let mut k = 1.0;
            loop {
                let v = b + k * step;
                if v >= end - step * 1e-9 {
                    break;
                }
                edges.push(v);
                k += 1.0;
            }
        } else {
            edges.push(tokens[i].parse().map_err(|_| Error::Config(format!("bad bin edge \"{}\"", tokens[i])))?);
        }
        i += 1;
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn single_value() {
        let h = pixel_histogram(&[&row(&[0.5])], &[0.0, 1.0, 10.0]).unwrap();
        assert_eq!(h.counts, vec![1, 0]);
        assert_eq!(h.fraction_0_10, 1.0);
    }

    #[test]
    fn counts_cover_every_scalar() {
        let a = row(&[-1.0, 0.0, 1.0, 9.99, 10.0, 10.5, f32::NAN, 3.0]);
        let h = pixel_histogram(&[&a, &a], &[0.0, 1.0, 10.0]).unwrap();
        assert_eq!(h.counts, vec![2, 8]);
        assert_eq!((h.underflow, h.overflow, h.nonfinite), (2, 2, 2));
        assert_eq!(h.counts.iter().sum::<u64>() + h.underflow + h.overflow + h.nonfinite, h.total);
        assert!(pixel_histogram::<f32>(&[], &[0.0, 1.0]).is_err());
        assert!(pixel_histogram(&[&a], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn long_tail_fractions_within_three_sigma() {
        // mixture: 99% uniform in [0, 10), 1% uniform in [10, 200)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let data: Vec<f32> = (0..n)
            .map(|_| if rng.gen_bool(0.99) { rng.gen_range(0.0..10.0) } else { rng.gen_range(10.0..200.0) })
            .collect();
        let img = Tensor::from_vec(Shape::new(1, 1, 1, n), data).unwrap();
        let h = pixel_histogram(&[&img], &[0.0, 10.0, 200.0]).unwrap();
        let p = 0.99;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let observed = h.counts[0] as f64 / n as f64;
        assert!((observed - p).abs() < 3.0 * sigma, "{observed}");
        assert!((h.fraction_0_10 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn parse_with_ellipsis() {
        let e = parse_bin_edges("0,1,2,...,200").unwrap();
        assert_eq!(e.len(), 201);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[200], 200.0);
        assert_eq!(parse_bin_edges("0, 0.5, 3").unwrap(), vec![0.0, 0.5, 3.0]);
        assert!(parse_bin_edges("0,...,5").is_err());
        assert!(parse_bin_edges("0,a").is_err());
    }
}
