//! In-memory view of one manifest split, ready for patch sampling.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::layers::{load_input_stack, load_rgb};
use crate::data::manifest::{DatasetManifest, ManifestEntry, Split, GROUND_TRUTH_SPP};
use crate::data::sampling::{nearest_downsample, HRLS_SPP, LRHS_SPP};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::tensor::Tensor;

/// `(lrhs, hrls)` network inputs; a branch without channels is `None`.
pub type BranchInputs = (Option<Tensor<f32>>, Option<Tensor<f32>>);

/// Inputs and ground truth of one view, cropped so both sides divide by the scale.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub label: String,
    /// LRHS-branch input at full resolution, per spp (downsampled at use).
    pub lrhs: BTreeMap<u32, Tensor<f32>>,
    /// HRLS-branch input per spp.
    pub hrls: BTreeMap<u32, Tensor<f32>>,
    pub gt: Tensor<f32>,
}

impl LoadedImage {
    pub fn height(&self) -> usize {
        self.gt.shape().h
    }

    pub fn width(&self) -> usize {
        self.gt.shape().w
    }

    fn input<'a>(map: &'a BTreeMap<u32, Tensor<f32>>, spp: u32, what: &str, label: &str) -> Result<&'a Tensor<f32>> {
        map.get(&spp).ok_or_else(|| Error::Data(format!("{label}: no {spp} spp {what} input loaded")))
    }

    pub fn lrhs_full(&self, spp: u32) -> Result<&Tensor<f32>> {
        Self::input(&self.lrhs, spp, "LRHS", &self.label)
    }

    pub fn hrls_full(&self, spp: u32) -> Result<&Tensor<f32>> {
        Self::input(&self.hrls, spp, "HRLS", &self.label)
    }

    /// Whole-image network inputs for one spp pair: the LRHS render is
    /// nearest-downsampled, the HRLS render is used as is.
    pub fn full_inputs(
        &self,
        scale: usize,
        spp_lrhs: u32,
        spp_hrls: u32,
    ) -> Result<BranchInputs> {
        let l = if self.lrhs.is_empty() { None } else { Some(nearest_downsample(self.lrhs_full(spp_lrhs)?, scale)?) };
        let h = if self.hrls.is_empty() { None } else { Some(self.hrls_full(spp_hrls)?.clone()) };
        Ok((l, h))
    }
}

/// Spp levels present in every entry of `entries`.
pub fn common_spps<'a>(entries: impl IntoIterator<Item = &'a ManifestEntry>) -> Vec<u32> {
    let mut common: Option<Vec<u32>> = None;
    for e in entries {
        let have: Vec<u32> = e.spp_to_path.keys().copied().collect();
        common = Some(match common {
            None => have,
            Some(c) => c.into_iter().filter(|s| have.contains(s)).collect(),
        });
    }
    common.unwrap_or_default()
}

/// Candidate `(lrhs, hrls)` spp sets: the standard sets restricted to
/// levels every entry provides.
pub fn candidate_spps(available: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let pick = |set: &[u32]| set.iter().copied().filter(|s| available.contains(s)).collect();
    (pick(&LRHS_SPP), pick(&HRLS_SPP))
}

fn crop_to_multiple(t: Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let (h, w) = (s.h / scale * scale, s.w / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("image {}x{} is smaller than the scale {scale}", s.w, s.h)));
    }
    if (h, w) == (s.h, s.w) {
        Ok(t)
    } else {
        t.crop(0, 0, h, w)
    }
}

/// Loads `entry` with inputs at the requested spp levels.
pub fn load_image(
    root: &Path,
    entry: &ManifestEntry,
    net: &NetworkConfig,
    lrhs_spps: &[u32],
    hrls_spps: &[u32],
    variance_const: Option<f32>,
) -> Result<LoadedImage> {
    let label = entry.label();
    let gt_dir = entry
        .spp_dir(root, GROUND_TRUTH_SPP)
        .map_err(|_| Error::Data(format!("{label}: no ground-truth ({GROUND_TRUTH_SPP} spp) render in manifest")))?;
    if !gt_dir.is_dir() {
        return Err(Error::Data(format!("{label}: ground-truth directory {} is missing", gt_dir.display())));
    }
    let gt = crop_to_multiple(load_rgb(&gt_dir)?, net.scale)?;
    let mut img = LoadedImage { label, lrhs: BTreeMap::new(), hrls: BTreeMap::new(), gt };
    let size = (img.height(), img.width());
    let load = |spp: u32, ch: usize| -> Result<Tensor<f32>> {
        let t = crop_to_multiple(load_input_stack(&entry.spp_dir(root, spp)?, ch, variance_const)?, net.scale)?;
        if (t.shape().h, t.shape().w) != size {
            return Err(Error::Data(format!(
                "{}: {spp} spp render is {}x{}, ground truth is {}x{}",
                entry.label(),
                t.shape().w,
                t.shape().h,
                size.1,
                size.0
            )));
        }
        Ok(t)
    };
    if net.lrhs_in_ch > 0 {
        for &spp in lrhs_spps {
            img.lrhs.insert(spp, load(spp, net.lrhs_in_ch)?);
        }
    }
    if net.hrls_in_ch > 0 {
        for &spp in hrls_spps {
            img.hrls.insert(spp, load(spp, net.hrls_in_ch)?);
        }
    }
    Ok(img)
}

/// Loads every entry of `split`; an empty split is a configuration error.
pub fn load_split(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    net: &NetworkConfig,
    lrhs_spps: &[u32],
    hrls_spps: &[u32],
    variance_const: Option<f32>,
) -> Result<Vec<LoadedImage>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("manifest has no {split} entries")));
    }
    entries.into_iter().map(|e| load_image(root, e, net, lrhs_spps, hrls_spps, variance_const)).collect()
}
