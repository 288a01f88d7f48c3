//! Mini-batch SGD training with per-epoch validation and checkpointing.
//!
//! All randomness comes from `seed`: the tile order of epoch `e` and the
//! spp pair and crops of step `k` each use their own ChaCha stream, so a run
//! can resume at any step and continue bit-identically.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{dataset_root, DatasetManifest, Split};
use crate::data::sampling::{
    nearest_downsample, patch_origin, patch_size_for_scale, sample_spp_pair_from, tile_origins, valid_pairs, SppPair,
    DEFAULT_TILE,
};
use crate::error::{Error, IoContext, Result};
use crate::network::{load_checkpoint, save_checkpoint, ForwardCache, NetworkConfig, NetworkParams};
use crate::objective::{robust_loss, LossConfig, RelMseConfig};
use crate::tensor::{stack_batch, Tensor};

use super::dataset::{candidate_spps, common_spps, load_split, LoadedImage};
use super::eval::{default_eval_pair, mean_relmse};
use super::log::{read_log, truncate_log, LogRecord, LogWriter};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub net: NetworkConfig,
    pub epochs: u64,
    /// Stop after this many optimizer steps in total, even mid-epoch.
    pub max_steps: Option<u64>,
    pub batch: usize,
    pub lr: f64,
    pub beta: f64,
    /// HR patch side; defaults to the per-scale size.
    pub patch: Option<usize>,
    pub tile: usize,
    /// Spp pair used for validation; defaults to [`default_eval_pair`].
    pub val_pair: Option<(u32, u32)>,
    pub variance_const: Option<f32>,
    /// Continue from `state.json` and `last.ckpt` in `out_dir` when present.
    pub resume: bool,
}

impl TrainConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, scale: usize, seed: u64) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            seed,
            net: NetworkConfig::with_scale(scale),
            epochs: 500,
            max_steps: None,
            batch: 16,
            lr: 1e-4,
            beta: LossConfig::default().beta,
            patch: None,
            tile: DEFAULT_TILE,
            val_pair: None,
            variance_const: None,
            resume: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        let patch = self.patch_size()?;
        if patch == 0 || patch % self.net.scale != 0 {
            return Err(Error::Config(format!(
                "patch {patch} must be a positive multiple of the scale {}",
                self.net.scale
            )));
        }
        if self.tile < patch {
            return Err(Error::Config(format!("tile {} is smaller than the patch {patch}", self.tile)));
        }
        Ok(())
    }

    pub fn patch_size(&self) -> Result<usize> {
        match self.patch {
            Some(p) => Ok(p),
            None => patch_size_for_scale(self.net.scale),
        }
    }
}

/// Progress persisted next to `last.ckpt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps completed.
    pub step: u64,
    pub best_val: Option<f64>,
    pub best_epoch: Option<u64>,
    pub best_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs_completed: u64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub best_val: Option<f64>,
    pub best_epoch: Option<u64>,
    /// Present once an epoch has been validated.
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
}

const STREAM_EPOCH: u64 = 0;
const STREAM_STEP: u64 = 1;

fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index * 2 + purpose);
    rng
}

/// One training crop location: image, tile origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TileRef {
    image: usize,
    y: usize,
    x: usize,
}

fn tiles_of(images: &[LoadedImage], tile: usize) -> Result<Vec<TileRef>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for (y, x) in tile_origins(img.height(), img.width(), tile)? {
            out.push(TileRef { image: i, y, x });
        }
    }
    Ok(out)
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_EPOCH, epoch));
    order
}

/// Everything a step consumes, reconstructible from the step index.
struct StepBatch {
    pair: SppPair,
    lrhs: Option<Tensor<f32>>,
    hrls: Option<Tensor<f32>>,
    target: Tensor<f32>,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    images: Vec<LoadedImage>,
    tiles: Vec<TileRef>,
    lrhs_spps: Vec<u32>,
    hrls_spps: Vec<u32>,
    patch: usize,
}

impl Trainer<'_> {
    fn steps_per_epoch(&self) -> u64 {
        self.tiles.len().div_ceil(self.cfg.batch) as u64
    }

    fn batch(&self, step: u64) -> Result<StepBatch> {
        let (seed, s) = (self.cfg.seed, self.cfg.net.scale);
        let spe = self.steps_per_epoch();
        let (epoch, within) = (step / spe, (step % spe) as usize);
        let order = epoch_order(seed, epoch, self.tiles.len());
        let start = within * self.cfg.batch;
        let picked = &order[start..(start + self.cfg.batch).min(order.len())];

        let mut rng = rng_for(seed, STREAM_STEP, step);
        let pair = sample_spp_pair_from(s, &self.lrhs_spps, &self.hrls_spps, &mut rng)?;
        let (mut ls, mut hs, mut ts) = (Vec::new(), Vec::new(), Vec::new());
        for &ti in picked {
            let t = self.tiles[ti];
            let img = &self.images[t.image];
            let (py, px) = patch_origin(self.cfg.tile, self.cfg.tile, self.patch, s, &mut rng)?;
            let (y, x, p) = (t.y + py, t.x + px, self.patch);
            ts.push(img.gt.crop(y, x, p, p)?);
            if self.cfg.net.lrhs_in_ch > 0 {
                ls.push(nearest_downsample(&img.lrhs_full(pair.spp_lrhs)?.crop(y, x, p, p)?, s)?);
            }
            if self.cfg.net.hrls_in_ch > 0 {
                hs.push(img.hrls_full(pair.spp_hrls)?.crop(y, x, p, p)?);
            }
        }
        let stack = |v: Vec<Tensor<f32>>| {
            if v.is_empty() {
                Ok(None)
            } else {
                stack_batch(&v).map(Some)
            }
        };
        Ok(StepBatch { pair, lrhs: stack(ls)?, hrls: stack(hs)?, target: stack_batch(&ts)? })
    }
}

fn write_state(dir: &Path, state: &TrainState) -> Result<()> {
    let p = dir.join(STATE_FILE);
    fs::write(&p, serde_json::to_string_pretty(state)? + "\n").with_path(&p)
}

pub fn read_state(dir: &Path) -> Result<TrainState> {
    let p = dir.join(STATE_FILE);
    Ok(serde_json::from_str(&fs::read_to_string(&p).with_path(&p)?)?)
}

/// Trains from the manifest's `train` split, validating on `val` after every epoch.
pub fn train(cfg: &TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let root = dataset_root(&cfg.manifest);
    let net = &cfg.net;

    let train_entries: Vec<_> = manifest.split(Split::Train).collect();
    if train_entries.is_empty() {
        return Err(Error::Config("manifest has no train entries".into()));
    }
    if manifest.split(Split::Val).next().is_none() {
        return Err(Error::Config("manifest has no val entries".into()));
    }
    let (lrhs_spps, hrls_spps) = candidate_spps(&common_spps(train_entries.iter().copied()));
    if valid_pairs(&lrhs_spps, &hrls_spps).is_empty() {
        return Err(Error::Config(format!(
            "training renders offer no spp pair with HRLS < LRHS (LRHS candidates {lrhs_spps:?}, HRLS candidates {hrls_spps:?})"
        )));
    }
    let val_pair = match cfg.val_pair {
        Some((l, h)) => SppPair::new(net.scale, l, h)?,
        None => default_eval_pair(net.scale)?,
    };

    let images = load_split(&manifest, &root, Split::Train, net, &lrhs_spps, &hrls_spps, cfg.variance_const)?;
    let val_images =
        load_split(&manifest, &root, Split::Val, net, &[val_pair.spp_lrhs], &[val_pair.spp_hrls], cfg.variance_const)?;
    let trainer =
        Trainer { cfg, tiles: tiles_of(&images, cfg.tile)?, images, lrhs_spps, hrls_spps, patch: cfg.patch_size()? };
    let spe = trainer.steps_per_epoch();
    let total = cfg.max_steps.unwrap_or(u64::MAX).min(cfg.epochs.saturating_mul(spe));

    fs::create_dir_all(&cfg.out_dir).with_path(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let last_path = cfg.out_dir.join(LAST_CHECKPOINT);
    let best_path = cfg.out_dir.join(BEST_CHECKPOINT);
    let resuming = cfg.resume && cfg.out_dir.join(STATE_FILE).exists();
    let (mut params, mut state) = if resuming {
        let state = read_state(&cfg.out_dir)?;
        let params = load_checkpoint(&last_path)?;
        if params.config() != net {
            return Err(Error::Usage(format!(
                "checkpoint {} was trained with a different network configuration",
                last_path.display()
            )));
        }
        truncate_log(&log_path, state.step)?;
        (params, state)
    } else {
        (
            NetworkParams::<f32>::init(net, cfg.seed)?,
            TrainState { step: 0, best_val: None, best_epoch: None, best_step: None },
        )
    };
    let mut log = LogWriter::open(&log_path, resuming)?;
    let loss_cfg = LossConfig { beta: cfg.beta };
    let lr = cfg.lr as f32;
    let (mut first_loss, mut last_loss) = (None, None);

    while state.step < total {
        let step = state.step;
        let b = trainer.batch(step)?;
        let mut cache = ForwardCache::new();
        let out = params.forward(b.lrhs.as_ref(), b.hrls.as_ref(), Some(&mut cache))?;
        let (loss, grad) = robust_loss(&out, &b.target, loss_cfg)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss} at step {step}")));
        }
        let grads = params.backward(&cache, &grad)?;
        params.sgd_step(&grads, lr).map_err(|e| Error::Training(format!("step {step}: {e}")))?;
        first_loss.get_or_insert(loss);
        last_loss = Some(loss);
        log.write(&LogRecord::Train {
            step,
            epoch: step / spe,
            loss,
            lr: cfg.lr,
            spp_lrhs: b.pair.spp_lrhs,
            spp_hrls: b.pair.spp_hrls,
            wall_time: started.elapsed().as_secs_f64(),
        })?;
        state.step += 1;

        if state.step % spe == 0 {
            let epoch = state.step / spe - 1;
            let relmse = mean_relmse(&params, &val_images, val_pair, RelMseConfig::BCR)?;
            let best = state.best_val.is_none_or(|b| relmse < b);
            if best {
                state.best_val = Some(relmse);
                state.best_epoch = Some(epoch);
                state.best_step = Some(state.step);
                save_checkpoint(&best_path, &params)?;
            }
            log.write(&LogRecord::Val {
                step: state.step,
                epoch,
                relmse,
                best,
                wall_time: started.elapsed().as_secs_f64(),
            })?;
            save_checkpoint(&last_path, &params)?;
            write_state(&cfg.out_dir, &state)?;
        }
    }
    save_checkpoint(&last_path, &params)?;
    write_state(&cfg.out_dir, &state)?;

    Ok(TrainSummary {
        steps: state.step,
        epochs_completed: state.step / spe,
        first_loss,
        last_loss,
        best_val: state.best_val,
        best_epoch: state.best_epoch,
        best_checkpoint: state.best_val.map(|_| best_path),
        last_checkpoint: last_path,
        log: log_path,
    })
}

/// Epoch with the lowest validation RelMSE according to a log (earliest on ties).
pub fn best_epoch_from_log(path: &Path) -> Result<Option<(u64, f64)>> {
    let mut best: Option<(u64, f64)> = None;
    for r in read_log(path)? {
        if let LogRecord::Val { epoch, relmse, .. } = r {
            if best.is_none_or(|(_, b)| relmse < b) {
                best = Some((epoch, relmse));
            }
        }
    }
    Ok(best)
}
