//! Procedural stand-in for a rendered dataset.
//!
//! Each image is a smooth colour gradient modulated by a fine stripe texture
//! (the detail a low-resolution render loses), lit by a few soft blobs. The
//! lighting layers carry zero-mean noise with standard deviation proportional
//! to `1/sqrt(spp)`, so lower spp levels behave like noisier renders.
//! `Combined` is always the composition of the written layers.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::save_layers;
use super::manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};
use crate::compositor::{compose_final, RenderLayerSet, ADDITIVE, COMBINED, COMPONENTS};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Images per split, one view per scene.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub spps: Vec<u32>,
    /// Relative noise standard deviation at 1 spp.
    pub noise: f64,
    /// Amplitude of the fine stripe texture in the albedo, in `[0, 1)`.
    pub texture: f64,
    /// Multiplier on the lighting.
    pub exposure: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 48,
            height: 48,
            train: 12,
            val: 2,
            test: 2,
            spps: vec![1, 2, 4, 16, 4000],
            noise: 0.5,
            texture: 0.4,
            exposure: 1.0,
        }
    }
}

struct Scene {
    base: [[f64; 3]; 3],
    freq: (f64, f64),
    phase: f64,
    lights: Vec<(f64, f64, f64, f64)>,
    gloss: [f64; 3],
    texture: f64,
    exposure: f64,
}

impl Scene {
    fn random(texture: f64, exposure: f64, rng: &mut impl Rng) -> Self {
        let mut base = [[0.0; 3]; 3];
        for ch in base.iter_mut() {
            *ch = [rng.gen_range(0.2..0.8), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
        }
        let angle = rng.gen_range(0.0..PI);
        let period = rng.gen_range(2.5..5.0);
        let k = 2.0 * PI / period;
        let lights = (0..3)
            .map(|_| {
                (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.15..0.4), rng.gen_range(0.2..0.6))
            })
            .collect();
        Self {
            base,
            freq: (k * angle.cos(), k * angle.sin()),
            phase: rng.gen_range(0.0..2.0 * PI),
            lights,
            gloss: [rng.gen_range(0.05..0.2); 3],
            texture,
            exposure,
        }
    }

    fn albedo(&self, c: usize, u: f64, v: f64, x: f64, y: f64) -> f64 {
        let [a, bu, bv] = self.base[c];
        let smooth = (a + bu * (u - 0.5) + bv * (v - 0.5)).clamp(0.05, 1.0);
        let stripes = 1.0 - self.texture + self.texture * (self.freq.0 * x + self.freq.1 * y + self.phase).sin();
        smooth * stripes
    }

    fn light(&self, u: f64, v: f64) -> f64 {
        self.exposure
            * (0.3
                + self
                    .lights
                    .iter()
                    .map(|&(cu, cv, r, e)| e * (-((u - cu).powi(2) + (v - cv).powi(2)) / (2.0 * r * r)).exp())
                    .sum::<f64>())
    }
}

fn noisy(clean: &Tensor<f32>, rel_sigma: f64, rng: &mut impl Rng) -> Tensor<f32> {
    let data = clean
        .data()
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            ((v as f64) * (1.0 + rel_sigma * n)).max(0.0) as f32
        })
        .collect();
    Tensor::from_vec(clean.shape(), data).expect("same shape")
}

/// Clean and per-spp layer sets of one image.
fn render(
    scene: &Scene,
    w: usize,
    h: usize,
    spps: &[u32],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RenderLayerSet<f32>>> {
    let s3 = Shape::new(1, 3, h, w);
    let uv = |x: usize, y: usize| ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
    let diff_col = Tensor::from_fn(s3, |_, c, y, x| {
        let (u, v) = uv(x, y);
        scene.albedo(c, u, v, x as f64, y as f64) as f32
    })?;
    let diff_dir = Tensor::from_fn(s3, |_, _, y, x| {
        let (u, v) = uv(x, y);
        scene.light(u, v) as f32
    })?;
    let diff_ind = diff_dir.scale(0.25);
    let gloss_col = Tensor::from_fn(s3, |_, c, _, _| scene.gloss[c] as f32)?;
    let gloss_dir = diff_dir.map(|l| l * l * 0.5);
    let gloss_ind = Tensor::zeros(s3)?;
    let zero = Tensor::zeros(s3)?;
    let normal = Tensor::from_fn(s3, |_, c, y, x| {
        let (u, v) = uv(x, y);
        let (nx, ny) = ((2.0 * PI * u).sin() * 0.3, (2.0 * PI * v).cos() * 0.3);
        let len = (nx * nx + ny * ny + 1.0f64).sqrt();
        ([nx, ny, 1.0][c] / len) as f32
    })?;
    let albedo = diff_col.zip_map(&gloss_col, |a, b| a + b)?;

    let mut out = Vec::with_capacity(spps.len());
    for &spp in spps {
        let sigma = noise / (spp as f64).sqrt();
        let mut set = RenderLayerSet::new();
        set.insert("DiffCol", diff_col.clone());
        set.insert("DiffDir", noisy(&diff_dir, sigma, rng));
        set.insert("DiffInd", noisy(&diff_ind, sigma * 2.0, rng));
        set.insert("GlossCol", gloss_col.clone());
        set.insert("GlossDir", noisy(&gloss_dir, sigma * 2.0, rng));
        set.insert("GlossInd", gloss_ind.clone());
        for [col, dir, ind] in &COMPONENTS[2..] {
            for name in [col, dir, ind] {
                set.insert(*name, zero.clone());
            }
        }
        for name in ADDITIVE {
            set.insert(name, zero.clone());
        }
        let combined = compose_final(&set)?;
        let variance = combined.map(|v| ((v as f64 * sigma).powi(2)) as f32);
        set.insert(COMBINED, combined);
        set.insert("Denoising Albedo", albedo.clone());
        set.insert("Denoising Normal", normal.clone());
        set.insert("Denoising Variance", variance);
        out.push(set);
    }
    Ok(out)
}

/// Writes a synthetic dataset with its manifest under `root` and returns the manifest.
pub fn generate_dataset(root: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Config("synthetic image size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.texture) {
        return Err(Error::Config(format!("texture amplitude {} outside [0, 1)", cfg.texture)));
    }
    if !(cfg.exposure > 0.0 && cfg.exposure.is_finite()) {
        return Err(Error::Config(format!("exposure must be positive, got {}", cfg.exposure)));
    }
    if cfg.spps.is_empty() {
        return Err(Error::Config("no spp levels requested".into()));
    }
    let mut manifest = DatasetManifest::default();
    let splits = std::iter::repeat_n(Split::Train, cfg.train)
        .chain(std::iter::repeat_n(Split::Val, cfg.val))
        .chain(std::iter::repeat_n(Split::Test, cfg.test));
    for (i, split) in splits.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let scene = Scene::random(cfg.texture, cfg.exposure, &mut rng);
        let scene_id = format!("synth{i:03}");
        let entry = ManifestEntry::with_default_paths(&scene_id, "0", split, (cfg.width, cfg.height), &cfg.spps);
        let sets = render(&scene, cfg.width, cfg.height, &cfg.spps, cfg.noise, &mut rng)?;
        for (&spp, set) in cfg.spps.iter().zip(&sets) {
            save_layers(&entry.spp_dir(root, spp)?, set)?;
        }
        manifest.add_entry(entry)?;
    }
    manifest.save(root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::layers::load_layer_dir;

    fn tiny() -> SynthConfig {
        SynthConfig { width: 8, height: 6, train: 2, val: 1, test: 1, spps: vec![1, 4000], ..Default::default() }
    }

    #[test]
    fn writes_consistent_layers() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(dir.path(), &tiny()).unwrap();
        assert_eq!(m.entries.len(), 4);
        let back = DatasetManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        let set = load_layer_dir(&m.entries[0].spp_dir(dir.path(), 1).unwrap()).unwrap();
        assert_eq!(set.get(COMBINED).unwrap(), &compose_final(&set).unwrap());
        assert_eq!(set.get(COMBINED).unwrap().shape(), Shape::new(1, 3, 6, 8));
    }

    #[test]
    fn noise_shrinks_with_spp() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = Scene::random(0.4, 1.0, &mut rng);
        let sets = render(&scene, 32, 32, &[1, 16, 4000], 0.5, &mut rng).unwrap();
        let clean = render(&scene, 32, 32, &[1], 0.0, &mut rng).unwrap().remove(0);
        let err = |s: &RenderLayerSet<f32>| {
            let a = s.get(COMBINED).unwrap();
            let b = clean.get(COMBINED).unwrap();
            a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>()
        };
        let e: Vec<f64> = sets.iter().map(err).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_dataset(a.path(), &tiny()).unwrap();
        generate_dataset(b.path(), &tiny()).unwrap();
        let p = "synth002/0/1/Combined.pfm";
        assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());
    }
}
