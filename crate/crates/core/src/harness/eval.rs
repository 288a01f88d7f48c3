//! Inference and metric tables.

use std::fmt;
use std::path::Path;

use crate::data::layers::load_input_stack;
use crate::data::manifest::{DatasetManifest, Split};
use crate::data::sampling::{nearest_downsample, nearest_upsample, SppPair};
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::objective::{psnr_srgb, relmse, MetricPreset, RelMseConfig};
use crate::tensor::Tensor;

use super::dataset::{load_split, LoadedImage};

/// Default evaluation pair for a scale: LRHS at `scale^2` spp, HRLS at 1,
/// i.e. two samples per high-resolution pixel.
pub fn default_eval_pair(scale: usize) -> Result<SppPair> {
    SppPair::new(scale, (scale * scale) as u32, 1)
}

/// Runs the network on directories of layer files. An LRHS render at the
/// HRLS resolution is nearest-downsampled first, as in the dataset; one
/// already at low resolution is used as is. `variance_const` replaces the
/// HRLS variance layer.
pub fn infer(
    params: &NetworkParams<f32>,
    lrhs_dir: &Path,
    hrls_dir: &Path,
    variance_const: Option<f32>,
) -> Result<Tensor<f32>> {
    let cfg = params.config();
    let lrhs = if cfg.lrhs_in_ch > 0 { Some(load_input_stack(lrhs_dir, cfg.lrhs_in_ch, None)?) } else { None };
    let hrls =
        if cfg.hrls_in_ch > 0 { Some(load_input_stack(hrls_dir, cfg.hrls_in_ch, variance_const)?) } else { None };
    let lrhs = match (lrhs, &hrls) {
        (Some(l), Some(h)) if (l.shape().h, l.shape().w) == (h.shape().h, h.shape().w) => {
            Some(nearest_downsample(&l, cfg.scale)?)
        }
        (l, _) => l,
    };
    infer_tensors(params, lrhs.as_ref(), hrls.as_ref())
}

/// Forward pass on in-memory inputs, with mismatches reported as usage errors.
pub fn infer_tensors(
    params: &NetworkParams<f32>,
    lrhs: Option<&Tensor<f32>>,
    hrls: Option<&Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let cfg = params.config();
    if let (Some(l), Some(h)) = (lrhs, hrls) {
        let (ls, hs) = (l.shape(), h.shape());
        if hs.h != ls.h * cfg.scale || hs.w != ls.w * cfg.scale {
            return Err(Error::Usage(format!(
                "checkpoint is x{} but HRLS is {}x{} and LRHS is {}x{}",
                cfg.scale, hs.w, hs.h, ls.w, ls.h
            )));
        }
    }
    params.forward(lrhs, hrls, None).map_err(|e| match e {
        Error::Shape(m) => Error::Usage(format!("inputs do not match the checkpoint configuration: {m}")),
        other => other,
    })
}

/// Network prediction for a loaded image at one spp pair.
pub fn predict_image(params: &NetworkParams<f32>, img: &LoadedImage, pair: SppPair) -> Result<Tensor<f32>> {
    let (l, h) = img.full_inputs(params.config().scale, pair.spp_lrhs, pair.spp_hrls)?;
    infer_tensors(params, l.as_ref(), h.as_ref())
}

/// Nearest-upsampled LRHS render, the reference the network must beat.
pub fn upsampled_lrhs(img: &LoadedImage, scale: usize, spp_lrhs: u32) -> Result<Tensor<f32>> {
    let rgb = img.lrhs_full(spp_lrhs)?.slice_channels(0, 3)?;
    nearest_upsample(&nearest_downsample(&rgb, scale)?, scale)
}

/// Mean RelMSE of the network over `images`, one value per image averaged.
pub fn mean_relmse(
    params: &NetworkParams<f32>,
    images: &[LoadedImage],
    pair: SppPair,
    cfg: RelMseConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for img in images {
        sum += relmse(&predict_image(params, img, pair)?, &img.gt, cfg)?;
    }
    Ok(sum / images.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub view: String,
    pub relmse: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub preset: MetricPreset,
    pub pair: SppPair,
    pub rows: Vec<EvalRow>,
    pub mean_relmse: f64,
    pub mean_psnr: f64,
}

impl EvalTable {
    pub fn from_rows(preset: MetricPreset, pair: SppPair, rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_relmse = rows.iter().map(|r| r.relmse).sum::<f64>() / n;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        Self { preset, pair, rows, mean_relmse, mean_psnr }
    }

    /// `scene,view,relmse,psnr` rows followed by a `mean` row. Infinite PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,view,relmse,psnr\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.scene, r.view, r.relmse, r.psnr));
        }
        s.push_str(&format!("mean,,{},{}\n", self.mean_relmse, self.mean_psnr));
        s
    }
}

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "x{} at {}-{} spp (avg {:.4}), {:?} preset",
            self.pair.scale,
            self.pair.spp_lrhs,
            self.pair.spp_hrls,
            self.pair.avg_spp(),
            self.preset
        )?;
        writeln!(f, "{:<24} {:>12} {:>10}", "image", "RelMSE", "PSNR dB")?;
        for r in &self.rows {
            writeln!(f, "{:<24} {:>12.6} {:>10.3}", format!("{}/{}", r.scene, r.view), r.relmse, r.psnr)?;
        }
        write!(f, "{:<24} {:>12.6} {:>10.3}", "mean", self.mean_relmse, self.mean_psnr)
    }
}

/// Metric rows for already computed predictions.
pub fn metric_row(
    scene: &str,
    view: &str,
    pred: &Tensor<f32>,
    gt: &Tensor<f32>,
    preset: MetricPreset,
) -> Result<EvalRow> {
    Ok(EvalRow {
        scene: scene.to_string(),
        view: view.to_string(),
        relmse: relmse(pred, gt, preset.relmse())?,
        psnr: psnr_srgb(pred, gt, preset.srgb_rule())?,
    })
}

/// Evaluates a checkpoint on every image of `split` against its ground truth.
pub fn evaluate(
    params: &NetworkParams<f32>,
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    preset: MetricPreset,
    pair: SppPair,
    variance_const: Option<f32>,
) -> Result<EvalTable> {
    let cfg = params.config();
    if pair.scale != cfg.scale {
        return Err(Error::Usage(format!(
            "evaluation pair is for x{} but the checkpoint is x{}",
            pair.scale, cfg.scale
        )));
    }
    let images = load_split(manifest, root, split, cfg, &[pair.spp_lrhs], &[pair.spp_hrls], variance_const)?;
    let entries: Vec<_> = manifest.split(split).collect();
    let rows = images
        .iter()
        .zip(entries)
        .map(|(img, e)| metric_row(&e.scene_id, &e.view_id, &predict_image(params, img, pair)?, &img.gt, preset))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable::from_rows(preset, pair, rows))
}
