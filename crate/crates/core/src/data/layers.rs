//! Reading layer directories and assembling network inputs from them.

use std::fs;
use std::path::Path;

use crate::colorspace::{clip_outliers, DEFAULT_CLIP};
use crate::compositor::{compose_final, RenderLayerSet, COMBINED};
use crate::error::{Error, IoContext, Result};
use crate::tensor::{concat_many, Tensor};

use super::pfm::{read_pfm, write_pfm};

/// Auxiliary layers stacked after RGB to form the 18-channel HRLS input.
pub const HRLS_AUX_LAYERS: [&str; 5] =
    ["Denoising Albedo", "Denoising Normal", "DiffCol", "GlossCol", "Denoising Variance"];
pub const VARIANCE_LAYER: &str = "Denoising Variance";

pub fn layer_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.pfm"))
}

/// Loads every `*.pfm` in `dir`, keyed by file stem.
pub fn load_layer_dir(dir: &Path) -> Result<RenderLayerSet<f32>> {
    let mut set = RenderLayerSet::new();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_path(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pfm"))
        .collect();
    paths.sort();
    for p in paths {
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("non-UTF-8 layer file name {}", p.display())))?
            .to_string();
        set.insert(stem, read_pfm(&p)?);
    }
    Ok(set)
}

/// Loads the named layers from `dir`; missing files are data errors.
pub fn load_layers(dir: &Path, names: &[&str]) -> Result<RenderLayerSet<f32>> {
    let mut set = RenderLayerSet::new();
    for name in names {
        let p = layer_path(dir, name);
        if !p.exists() {
            return Err(Error::Data(format!("missing layer \"{name}\" in {}", dir.display())));
        }
        set.insert(*name, read_pfm(&p)?);
    }
    Ok(set)
}

pub fn save_layers(dir: &Path, layers: &RenderLayerSet<f32>) -> Result<()> {
    fs::create_dir_all(dir).with_path(dir)?;
    for (name, t) in layers.iter() {
        write_pfm(layer_path(dir, name), t)?;
    }
    Ok(())
}

/// Beauty image: the `Combined` layer when present, else the composition.
pub fn rgb_of(layers: &RenderLayerSet<f32>) -> Result<Tensor<f32>> {
    match layers.get(COMBINED) {
        Some(t) => Ok(t.clone()),
        None => compose_final(layers),
    }
}

/// Beauty image of a directory, clipped for ingestion.
pub fn load_rgb(dir: &Path) -> Result<Tensor<f32>> {
    let p = layer_path(dir, COMBINED);
    let rgb = if p.exists() { read_pfm(&p)? } else { compose_final(&load_layer_dir(dir)?)? };
    clip_outliers(&rgb, DEFAULT_CLIP as f32)
}

/// Network input for a branch with `channels` inputs: 3 = RGB only,
/// 18 = RGB plus [`HRLS_AUX_LAYERS`]. Values are clipped at ingestion.
/// `variance_const` replaces the variance layer with a constant.
pub fn input_stack(layers: &RenderLayerSet<f32>, channels: usize, variance_const: Option<f32>) -> Result<Tensor<f32>> {
    let rgb = clip_outliers(&rgb_of(layers)?, DEFAULT_CLIP as f32)?;
    match channels {
        3 => Ok(rgb),
        18 => {
            let mut parts = vec![rgb];
            for name in HRLS_AUX_LAYERS {
                let t = match (name, variance_const) {
                    (VARIANCE_LAYER, Some(v)) => {
                        let s = parts[0].shape();
                        Tensor::full(s, v)?
                    }
                    _ => {
                        let t = layers.require(name)?;
                        if t.shape().c != 3 {
                            return Err(Error::Data(format!(
                                "layer \"{name}\" has {} channels, expected 3",
                                t.shape().c
                            )));
                        }
                        clip_outliers(t, DEFAULT_CLIP as f32)?
                    }
                };
                parts.push(t);
            }
            concat_many(&parts.iter().collect::<Vec<_>>())
        }
        other => Err(Error::Usage(format!(
            "unsupported input channel count {other}; use 3 (RGB) or 18 (RGB + auxiliary layers)"
        ))),
    }
}

/// Layers needed to build an input of `channels` channels.
pub fn input_layer_names(channels: usize) -> Vec<&'static str> {
    let mut names = vec![COMBINED];
    if channels == 18 {
        names.extend(HRLS_AUX_LAYERS);
    }
    names
}

/// Like [`input_stack`] but reads only the needed files from `dir`.
pub fn load_input_stack(dir: &Path, channels: usize, variance_const: Option<f32>) -> Result<Tensor<f32>> {
    let mut names = input_layer_names(channels);
    if variance_const.is_some() {
        names.retain(|n| *n != VARIANCE_LAYER);
    }
    let layers = if layer_path(dir, COMBINED).exists() { load_layers(dir, &names)? } else { load_layer_dir(dir)? };
    input_stack(&layers, channels, variance_const)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn full(v: f32) -> Tensor<f32> {
        Tensor::full(Shape::new(1, 3, 2, 2), v).unwrap()
    }

    #[test]
    fn stack_layout_and_clipping() {
        let mut set = RenderLayerSet::new();
        set.insert(COMBINED, full(250.0));
        for (i, n) in HRLS_AUX_LAYERS.iter().enumerate() {
            set.insert(*n, full(i as f32));
        }
        let s = input_stack(&set, 18, None).unwrap();
        assert_eq!(s.shape().c, 18);
        assert!(s.slice_channels(0, 3).unwrap().data().iter().all(|&v| v == 100.0));
        assert!(s.slice_channels(15, 3).unwrap().data().iter().all(|&v| v == 4.0));
        let s = input_stack(&set, 18, Some(1.0)).unwrap();
        assert!(s.slice_channels(15, 3).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(input_stack(&set, 3, None).unwrap().shape().c, 3);
        assert!(matches!(input_stack(&set, 7, None), Err(Error::Usage(_))));
        set.remove("DiffCol");
        assert!(input_stack(&set, 18, None).is_err());
    }

    #[test]
    fn directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = RenderLayerSet::new();
        set.insert("Noisy Image", full(0.5));
        set.insert("Depth", Tensor::full(Shape::new(1, 1, 2, 2), 3.0).unwrap());
        save_layers(dir.path(), &set).unwrap();
        assert!(dir.path().join("Noisy Image.pfm").exists());
        assert_eq!(load_layer_dir(dir.path()).unwrap(), set);
        assert!(load_layers(dir.path(), &["Mist"]).is_err());
    }
}
