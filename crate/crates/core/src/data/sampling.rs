//! Low-resolution synthesis, cropping and spp-pair rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Every spp level a dataset may contain, ground truth included.
pub const DATASET_SPP: [u32; 16] = [1, 2, 3, 4, 5, 6, 7, 8, 12, 16, 32, 64, 128, 250, 1000, 4000];

/// Candidate spp levels for the high-resolution low-spp input.
pub const HRLS_SPP: [u32; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 12, 16, 32];
/// Candidate spp levels for the low-resolution high-spp input.
pub const LRHS_SPP: [u32; 15] = [2, 3, 4, 5, 6, 7, 8, 12, 16, 32, 64, 128, 250, 1000, 4000];

pub const DEFAULT_TILE: usize = 300;

/// HR training patch edge per upscaling factor.
pub fn patch_size_for_scale(scale: usize) -> Result<usize> {
    match scale {
        2 => Ok(96),
        4 => Ok(192),
        8 => Ok(256),
        s => Err(Error::Config(format!("no patch size for scale {s}"))),
    }
}

/// Keeps the top-left sample of every `s x s` block.
pub fn nearest_downsample<T: Scalar>(img: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let sh = img.shape();
    if s == 0 {
        return shape_err("downsample factor must be >= 1");
    }
    if !sh.h.is_multiple_of(s) {
        return shape_err(format!("downsample: height {} not divisible by {s}", sh.h));
    }
    if !sh.w.is_multiple_of(s) {
        return shape_err(format!("downsample: width {} not divisible by {s}", sh.w));
    }
    Tensor::from_fn(Shape::new(sh.n, sh.c, sh.h / s, sh.w / s), |n, c, y, x| img.at(n, c, y * s, x * s))
}

/// Replicates every pixel into an `s x s` block.
pub fn nearest_upsample<T: Scalar>(img: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if s == 0 {
        return shape_err("upsample factor must be >= 1");
    }
    let sh = img.shape();
    Tensor::from_fn(Shape::new(sh.n, sh.c, sh.h * s, sh.w * s), |n, c, y, x| img.at(n, c, y / s, x / s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppPair {
    pub scale: usize,
    pub spp_lrhs: u32,
    pub spp_hrls: u32,
}

impl SppPair {
    pub fn new(scale: usize, spp_lrhs: u32, spp_hrls: u32) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        if spp_hrls >= spp_lrhs {
            return Err(Error::Config(format!("HRLS spp {spp_hrls} must be smaller than LRHS spp {spp_lrhs}")));
        }
        Ok(Self { scale, spp_lrhs, spp_hrls })
    }

    /// Samples per high-resolution pixel, averaged over both renders.
    pub fn avg_spp(&self) -> f64 {
        let s = self.scale as f64;
        self.spp_lrhs as f64 / (s * s) + self.spp_hrls as f64
    }
}

pub fn avg_spp(pair: &SppPair) -> f64 {
    pair.avg_spp()
}

/// All `(lrhs, hrls)` combinations with `hrls < lrhs`.
pub fn valid_pairs(lrhs: &[u32], hrls: &[u32]) -> Vec<(u32, u32)> {
    lrhs.iter().flat_map(|&l| hrls.iter().filter(move |&&h| h < l).map(move |&h| (l, h))).collect()
}

/// Uniform over every valid combination of the standard spp sets.
pub fn sample_spp_pair(scale: usize, rng: &mut impl Rng) -> SppPair {
    sample_spp_pair_from(scale, &LRHS_SPP, &HRLS_SPP, rng).expect("standard sets have valid pairs")
}

/// Uniform over valid combinations drawn from the given candidate sets.
pub fn sample_spp_pair_from(scale: usize, lrhs: &[u32], hrls: &[u32], rng: &mut impl Rng) -> Result<SppPair> {
    let pairs = valid_pairs(lrhs, hrls);
    if pairs.is_empty() {
        return Err(Error::Config(format!("no spp pair with HRLS < LRHS from LRHS {lrhs:?} and HRLS {hrls:?}")));
    }
    let (l, h) = pairs[rng.gen_range(0..pairs.len())];
    SppPair::new(scale, l, h)
}

/// Top-left origins of the non-overlapping `tile x tile` grid; remainders are dropped.
pub fn tile_origins(h: usize, w: usize, tile: usize) -> Result<Vec<(usize, usize)>> {
    if tile == 0 {
        return Err(Error::Config("tile size must be >= 1".into()));
    }
    if h < tile || w < tile {
        return Err(Error::Data(format!("image {w}x{h} is smaller than the {tile}x{tile} tile")));
    }
    Ok((0..h / tile).flat_map(|ty| (0..w / tile).map(move |tx| (ty * tile, tx * tile))).collect())
}

/// Cuts every layer of an image into congruent tiles. Returns one layer
/// list per tile, in row-major tile order.
pub fn pre_crop<T: Scalar>(layers: &[&Tensor<T>], tile: usize) -> Result<Vec<Vec<Tensor<T>>>> {
    let Some(first) = layers.first() else {
        return Err(Error::Data("pre_crop needs at least one layer".into()));
    };
    let s = first.shape();
    for l in layers {
        if (l.shape().h, l.shape().w) != (s.h, s.w) {
            return shape_err(format!("layer {} does not match {}", l.shape(), s));
        }
    }
    tile_origins(s.h, s.w, tile)?
        .into_iter()
        .map(|(y, x)| layers.iter().map(|l| l.crop(y, x, tile, tile)).collect())
        .collect()
}

/// Random patch origin inside an `h x w` region, aligned to the LR grid.
pub fn patch_origin(h: usize, w: usize, patch: usize, scale: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if !patch.is_multiple_of(scale) {
        return Err(Error::Config(format!("patch {patch} not divisible by scale {scale}")));
    }
    if h < patch || w < patch {
        return Err(Error::Data(format!("{w}x{h} region is smaller than the {patch}x{patch} patch")));
    }
    let y = rng.gen_range(0..=(h - patch) / scale) * scale;
    let x = rng.gen_range(0..=(w - patch) / scale) * scale;
    Ok((y, x))
}

/// HR crop of the per-scale patch size and its aligned LR counterpart.
pub fn random_patch<T: Scalar>(tile: &Tensor<T>, scale: usize, rng: &mut impl Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    random_patch_sized(tile, scale, patch_size_for_scale(scale)?, rng)
}

pub fn random_patch_sized<T: Scalar>(
    tile: &Tensor<T>,
    scale: usize,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = tile.shape();
    let (y, x) = patch_origin(s.h, s.w, patch, scale, rng)?;
    let hr = tile.crop(y, x, patch, patch)?;
    let lr = nearest_downsample(&hr, scale)?;
    Ok((hr, lr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 2, h, w), |_, c, y, x| (c * 10000 + y * 100 + x) as f32).unwrap()
    }

    #[test]
    fn downsample_examples() {
        let img = ramp(4, 6);
        assert_eq!(nearest_downsample(&img, 1).unwrap(), img);
        let block = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(nearest_downsample(&block, 2).unwrap().data(), &[1.0]);
        let c = Tensor::full(Shape::new(1, 3, 8, 8), 0.7f32).unwrap();
        assert!(nearest_downsample(&c, 4).unwrap().data().iter().all(|&v| v == 0.7));
        assert!(nearest_downsample(&img, 4).is_err());
    }

    #[test]
    fn downsample_composes() {
        let img = ramp(16, 24);
        for (a, b) in [(2, 2), (2, 4), (4, 2)] {
            let two = nearest_downsample(&nearest_downsample(&img, a).unwrap(), b).unwrap();
            assert_eq!(two, nearest_downsample(&img, a * b).unwrap());
        }
        assert_eq!(nearest_downsample(&nearest_upsample(&img, 4).unwrap(), 4).unwrap(), img);
    }

    #[test]
    fn avg_spp_table_values() {
        assert_eq!(SppPair::new(2, 4, 1).unwrap().avg_spp(), 2.0);
        assert_eq!(SppPair::new(4, 16, 1).unwrap().avg_spp(), 2.0);
        assert_eq!(SppPair::new(8, 64, 1).unwrap().avg_spp(), 2.0);
        assert!(SppPair::new(2, 4, 4).is_err());
    }

    #[test]
    fn spp_pair_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut seen_l = std::collections::BTreeSet::new();
        let mut seen_h = std::collections::BTreeSet::new();
        for _ in 0..100_000 {
            let p = sample_spp_pair(4, &mut rng);
            assert!(p.spp_hrls < p.spp_lrhs);
            seen_l.insert(p.spp_lrhs);
            seen_h.insert(p.spp_hrls);
        }
        assert_eq!(seen_l.into_iter().collect::<Vec<_>>(), LRHS_SPP.to_vec());
        assert_eq!(seen_h.into_iter().collect::<Vec<_>>(), HRLS_SPP.to_vec());

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_spp_pair(2, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(sample_spp_pair_from(2, &[1], &[1, 2], &mut rng).is_err());
    }

    #[test]
    fn tile_counts() {
        assert_eq!(tile_origins(600, 600, 300).unwrap().len(), 4);
        assert_eq!(tile_origins(1080, 1920, 300).unwrap().len(), 18);
        assert!(matches!(tile_origins(299, 299, 300), Err(Error::Data(_))));
    }

    #[test]
    fn pre_crop_is_congruent() {
        let a = ramp(9, 13);
        let b = a.map(|v| -v);
        let tiles = pre_crop(&[&a, &b], 4).unwrap();
        assert_eq!(tiles.len(), 2 * 3);
        for t in &tiles {
            assert_eq!(t[1], t[0].map(|v| -v));
        }
        assert_eq!(tiles[4][0].at(0, 0, 0, 0), a.at(0, 0, 4, 4));
    }

    #[test]
    fn patch_sizes_per_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tile = ramp(300, 300);
        let (hr, lr) = random_patch(&tile, 2, &mut rng).unwrap();
        assert_eq!((hr.shape().h, lr.shape().h), (96, 48));
        let (hr, lr) = random_patch(&tile, 8, &mut rng).unwrap();
        assert_eq!((hr.shape().w, lr.shape().w), (256, 32));
        assert!(random_patch(&ramp(100, 100), 4, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn lr_patch_is_downsampled_hr(seed in any::<u64>(), scale in prop::sample::select(vec![2usize, 4, 8])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tile = ramp(40, 48);
            let (hr, lr) = random_patch_sized(&tile, scale, 16, &mut rng).unwrap();
            prop_assert_eq!(nearest_downsample(&hr, scale).unwrap(), lr.clone());
            // alignment: the LR patch is also a crop of the downsampled tile
            let down = nearest_downsample(&tile, scale).unwrap();
            let found = (0..=down.shape().h - lr.shape().h).any(|y| (0..=down.shape().w - lr.shape().w)
                .any(|x| down.crop(y, x, lr.shape().h, lr.shape().w).unwrap() == lr));
            prop_assert!(found);
        }

        #[test]
        fn avg_spp_increasing(s in prop::sample::select(vec![2usize, 4, 8]), l in 2u32..5000, h in 1u32..1000) {
            prop_assume!(h + 1 < l);
            let p = SppPair::new(s, l, h).unwrap().avg_spp();
            prop_assert!(SppPair::new(s, l + 1, h).unwrap().avg_spp() > p);
            prop_assert!(SppPair::new(s, l, h + 1).unwrap().avg_spp() > p);
        }
    }
}
