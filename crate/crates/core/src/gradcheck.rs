//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Linear ops are probed through a random projection `<op(x), r>`, whose
//! exact gradient is `backward(r)`. Sites within one step of a kink (the
//! rectifier at zero, the losses at `pred == target`) are skipped and
//! counted; for the network a sample is skipped when the perturbation flips
//! any rectifier or loss sign.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{ForwardCache, NetworkConfig, NetworkParams};
use crate::objective::{l1_loss, robust_loss, LossConfig};
use crate::pixel_ops::{deshuffle, deshuffle_backward, shuffle, shuffle_backward};
use crate::tensor::{
    add, concat_channels, conv2d, conv2d_backward, relu, relu_backward, split_channels, ConvParams, Shape, Tensor,
};

pub const STEP: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const PERMUTATION_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Denominator floor so that two near-zero gradients do not count as a mismatch.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<28} max rel err {:.3e} (tol {:.0e}) over {} entries, {} skipped",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.checked,
            self.skipped
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Compares `analytic[i]` with the central difference of `eval_at(i, ±STEP)`
/// for every `i` in `indices`. `eval_at` returns `None` to skip a sample.
pub fn check_indices(
    name: impl Into<String>,
    tolerance: f64,
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    mut eval_at: impl FnMut(usize, f64) -> Result<Option<f64>>,
) -> Result<CheckResult> {
    let mut res = CheckResult { name: name.into(), checked: 0, skipped: 0, max_rel_err: 0.0, tolerance };
    for i in indices {
        match (eval_at(i, STEP)?, eval_at(i, -STEP)?) {
            (Some(fp), Some(fm)) => {
                let numeric = (fp - fm) / (2.0 * STEP);
                res.max_rel_err = res.max_rel_err.max(relative_error(analytic[i], numeric));
                res.checked += 1;
            }
            _ => res.skipped += 1,
        }
    }
    Ok(res)
}

fn perturbed(t: &Tensor<f64>, i: usize, delta: f64) -> Tensor<f64> {
    let mut t = t.clone();
    t.data_mut()[i] += delta;
    t
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::random_uniform(shape, -1.0, 1.0, rng).expect("valid shape")
}

/// Checks `<op(x), r>` against `backward(r)` with respect to `x`.
fn check_linear_op(
    name: &str,
    tolerance: f64,
    x: &Tensor<f64>,
    op: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    backward: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult> {
    let r = random(op(x)?.shape(), rng);
    let g = backward(&r)?;
    check_indices(name, tolerance, g.data(), 0..x.data().len(), |i, d| Ok(Some(dot(&op(&perturbed(x, i, d))?, &r))))
}

fn check_conv(k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let (ic, oc) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
    let x = random(Shape::new(2, ic, h, w), rng);
    let p: ConvParams<f64> =
        ConvParams::new(random(Shape::new(oc, ic, k, k), rng), (0..oc).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let r = random(Shape::new(2, oc, h, w), rng);
    let (gx, gp) = conv2d_backward(&x, &p, &r)?;
    let input = check_indices(format!("conv{k}x{k} input"), OP_TOLERANCE, gx.data(), 0..x.data().len(), |i, d| {
        Ok(Some(dot(&conv2d(&perturbed(&x, i, d), &p)?, &r)))
    })?;
    let weight = check_indices(
        format!("conv{k}x{k} weight"),
        OP_TOLERANCE,
        gp.weight.data(),
        0..p.weight.data().len(),
        |i, d| {
            let q = ConvParams::new(perturbed(&p.weight, i, d), p.bias.clone())?;
            Ok(Some(dot(&conv2d(&x, &q)?, &r)))
        },
    )?;
    let bias = check_indices(format!("conv{k}x{k} bias"), OP_TOLERANCE, &gp.bias, 0..oc, |i, d| {
        let mut b = p.bias.clone();
        b[i] += d;
        Ok(Some(dot(&conv2d(&x, &ConvParams::new(p.weight.clone(), b)?)?, &r)))
    })?;
    Ok(vec![input, weight, bias])
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let x = random(Shape::new(2, 3, 6, 5), rng);
    let r = random(x.shape(), rng);
    let g = relu_backward(&x, &r)?;
    check_indices("relu", OP_TOLERANCE, g.data(), 0..x.data().len(), |i, d| {
        if x.data()[i].abs() < STEP {
            return Ok(None);
        }
        Ok(Some(dot(&relu(&perturbed(&x, i, d)), &r)))
    })
}

fn check_add_concat(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let a = random(Shape::new(2, 2, 4, 3), rng);
    let b = random(Shape::new(2, 3, 4, 3), rng);
    let b_same = random(a.shape(), rng);
    let r_add = random(a.shape(), rng);
    let add_a = check_linear_op("add (lhs)", OP_TOLERANCE, &a, |x| add(x, &b_same), |r| Ok(r.clone()), rng)?;
    let add_b = check_indices("add (rhs)", OP_TOLERANCE, r_add.data(), 0..b_same.data().len(), |i, d| {
        Ok(Some(dot(&add(&a, &perturbed(&b_same, i, d))?, &r_add)))
    })?;
    let cat_a = check_linear_op(
        "concat (first)",
        OP_TOLERANCE,
        &a,
        |x| concat_channels(x, &b),
        |r| Ok(split_channels(r, &[2, 3])?.remove(0)),
        rng,
    )?;
    let cat_b = check_linear_op(
        "concat (second)",
        OP_TOLERANCE,
        &b,
        |x| concat_channels(&a, x),
        |r| Ok(split_channels(r, &[2, 3])?.remove(1)),
        rng,
    )?;
    Ok(vec![add_a, add_b, cat_a, cat_b])
}

fn check_permutations(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for alpha in [2usize, 4] {
        let x = random(Shape::new(1, 2, 2 * alpha, alpha), rng);
        out.push(check_linear_op(
            &format!("deshuffle x{alpha}"),
            PERMUTATION_TOLERANCE,
            &x,
            |t| deshuffle(t, alpha),
            |r| deshuffle_backward(r, alpha),
            rng,
        )?);
        let y = random(Shape::new(1, 2 * alpha * alpha, 2, 3), rng);
        out.push(check_linear_op(
            &format!("shuffle x{alpha}"),
            PERMUTATION_TOLERANCE,
            &y,
            |t| shuffle(t, alpha),
            |r| shuffle_backward(r, alpha),
            rng,
        )?);
    }
    Ok(out)
}

/// Loss gradients are checked away from `pred == target`; within 0.05 of it
/// the robust loss curvature makes the step-1e-3 truncation error dominate.
fn check_losses(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let pred = random(Shape::new(2, 3, 4, 4), rng);
    let target = random(pred.shape(), rng);
    let near_kink = |i: usize| (pred.data()[i] - target.data()[i]).abs() < 0.05;
    let cfg = LossConfig::default();
    let (_, g) = robust_loss(&pred, &target, cfg)?;
    let robust = check_indices("robust loss", OP_TOLERANCE, g.data(), 0..pred.data().len(), |i, d| {
        if near_kink(i) {
            return Ok(None);
        }
        Ok(Some(robust_loss(&perturbed(&pred, i, d), &target, cfg)?.0))
    })?;
    let (_, g) = l1_loss(&pred, &target)?;
    let l1 = check_indices("l1 loss", OP_TOLERANCE, g.data(), 0..pred.data().len(), |i, d| {
        if near_kink(i) {
            return Ok(None);
        }
        Ok(Some(l1_loss(&perturbed(&pred, i, d), &target)?.0))
    })?;
    Ok(vec![robust, l1])
}

/// Micro configuration used for the end-to-end check.
pub fn micro_config(scale: usize) -> NetworkConfig {
    NetworkConfig { scale, feat_ch: 4, groups: 1, blocks: 1, ..NetworkConfig::default() }
}

/// Robust loss of the full network on random inputs, against every parameter
/// and every input scalar.
pub fn check_network(cfg: &NetworkConfig, lr_size: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: NetworkParams<f64> = NetworkParams::init(cfg, seed)?;
    let s = cfg.scale;
    let lrhs = Tensor::random_uniform(Shape::new(1, cfg.lrhs_in_ch, lr_size, lr_size), 0.0, 1.0, &mut rng)?;
    let hrls = Tensor::random_uniform(Shape::new(1, cfg.hrls_in_ch, lr_size * s, lr_size * s), 0.0, 1.0, &mut rng)?;
    let loss_cfg = LossConfig::default();
    let mut cache = ForwardCache::new();
    let out = params.forward(Some(&lrhs), Some(&hrls), Some(&mut cache))?;
    // Targets sit 1 to 2 away from the prediction so the loss curvature
    // stays small relative to its slope.
    let target = out.map(|o| {
        let off = rng.gen_range(1.0..2.0);
        if rng.gen_bool(0.5) {
            o + off
        } else {
            o - off
        }
    });

    let signs = |out: &Tensor<f64>| -> Vec<bool> { out.data().iter().zip(target.data()).map(|(o, t)| o > t).collect() };
    let base_pattern = (cache.relu_pattern(), signs(&out));
    let (_, g_out) = robust_loss(&out, &target, loss_cfg)?;
    let grads = params.backward(&cache, &g_out)?;

    let eval = |p: &NetworkParams<f64>, l: &Tensor<f64>, h: &Tensor<f64>| -> Result<Option<f64>> {
        let mut c = ForwardCache::new();
        let out = p.forward(Some(l), Some(h), Some(&mut c))?;
        if (c.relu_pattern(), signs(&out)) != base_pattern {
            return Ok(None);
        }
        Ok(Some(robust_loss(&out, &target, loss_cfg)?.0))
    };

    let mut weight_analytic = Vec::new();
    let mut slots = Vec::new();
    for (li, g) in grads.layers.iter().enumerate() {
        for (pi, v) in g.iter().enumerate() {
            weight_analytic.push(*v);
            slots.push((li, pi));
        }
    }
    let tag = format!("network x{s}");
    let mut results = vec![check_indices(
        format!("{tag} parameters"),
        NETWORK_TOLERANCE,
        &weight_analytic,
        0..slots.len(),
        |i, d| {
            let (li, pi) = slots[i];
            let mut p = params.clone();
            let layer = &mut p.layers_mut()[li];
            let nw = layer.weight.data().len();
            if pi < nw {
                layer.weight.data_mut()[pi] += d;
            } else {
                layer.bias[pi - nw] += d;
            }
            eval(&p, &lrhs, &hrls)
        },
    )?];
    let g_l = grads.lrhs_input.as_ref().expect("lrhs branch");
    results.push(check_indices(
        format!("{tag} LRHS input"),
        NETWORK_TOLERANCE,
        g_l.data(),
        0..lrhs.data().len(),
        |i, d| eval(&params, &perturbed(&lrhs, i, d), &hrls),
    )?);
    let g_h = grads.hrls_input.as_ref().expect("hrls branch");
    results.push(check_indices(
        format!("{tag} HRLS input"),
        NETWORK_TOLERANCE,
        g_h.data(),
        0..hrls.data().len(),
        |i, d| eval(&params, &lrhs, &perturbed(&hrls, i, d)),
    )?);
    Ok(results)
}

/// Every op check plus the end-to-end network checks at scales 2 and 4.
pub fn run_suite(seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    results.extend(check_conv(3, &mut rng)?);
    results.extend(check_conv(1, &mut rng)?);
    results.push(check_relu(&mut rng)?);
    results.extend(check_add_concat(&mut rng)?);
    results.extend(check_permutations(&mut rng)?);
    results.extend(check_losses(&mut rng)?);
    results.extend(check_network(&micro_config(2), 4, seed)?);
    results.extend(check_network(&micro_config(4), 2, seed.wrapping_add(1))?);
    Ok(GradcheckReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) < 1e-3);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let r = check_indices("x^2", 1e-4, &[3.0], [0], |_, d| Ok(Some((1.0 + d) * (1.0 + d)))).unwrap();
        assert!(!r.passed());
        let r = check_indices("x^2", 1e-4, &[2.0], [0], |_, d| Ok(Some((1.0 + d) * (1.0 + d)))).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn all_skipped_is_a_failure() {
        let r = check_indices("none", 1.0, &[0.0], [0], |_, _| Ok(None)).unwrap();
        assert!(!r.passed());
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn suite_passes() {
        let report = run_suite(7).unwrap();
        assert!(report.passed(), "{report}");
    }
}
