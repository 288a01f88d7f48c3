//! Two-encoder-one-decoder super-resolution network.
//!
//! Data flow (every conv except the last is followed by a rectifier):
//!
//! ```text
//! LRHS (h x w)   -> conv3x3 --------------------------------------+
//! HRLS (sh x sw) -> conv3x3 -> D x [deshuffle(2) -> conv3x3] -----+-> concat -> fuse 1x1 = F0
//! F0 -> G x RDG (B x RDB + group skip) + F0 = F_DF
//! F_DF -> D x [conv3x3 to 4f -> shuffle(2)] -> reconstruction conv3x3 -> RGB (sh x sw)
//! ```
//!
//! An RDB holds `convs_per_rdb` densely connected 3x3 convs (each sees the
//! block input and all previous outputs), then a 1x1 local fusion back to
//! `feat_ch` and a local skip.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::pixel_ops::{deshuffle, deshuffle_backward, shuffle, shuffle_backward};
use crate::scalar::Scalar;
use crate::tensor::{
    add, add_assign, concat_many, conv2d, conv2d_backward, relu, relu_backward, sgd_step, split_channels, ConvGrads,
    ConvParams, Shape, Tensor,
};

/// RGB + Albedo + Normal + Diffuse color + Specular color + Variance.
pub const DEFAULT_HRLS_CHANNELS: usize = 18;
pub const DEFAULT_LRHS_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub scale: usize,
    pub feat_ch: usize,
    pub groups: usize,
    pub blocks: usize,
    pub convs_per_rdb: usize,
    pub lrhs_in_ch: usize,
    pub hrls_in_ch: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            feat_ch: 64,
            groups: 3,
            blocks: 5,
            convs_per_rdb: 4,
            lrhs_in_ch: DEFAULT_LRHS_CHANNELS,
            hrls_in_ch: DEFAULT_HRLS_CHANNELS,
        }
    }
}

impl NetworkConfig {
    pub fn with_scale(scale: usize) -> Self {
        Self { scale, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(Error::Config(format!("scale must be 2, 4 or 8, got {}", self.scale)));
        }
        for (name, v) in [
            ("feat_ch", self.feat_ch),
            ("groups", self.groups),
            ("blocks", self.blocks),
            ("convs_per_rdb", self.convs_per_rdb),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.lrhs_in_ch == 0 && self.hrls_in_ch == 0 {
            return Err(Error::Config("at least one input branch must have channels".into()));
        }
        Ok(())
    }

    /// Number of stride-2 deshuffle (and shuffle) stages, `log2(scale)`.
    pub fn stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    fn branches(&self) -> usize {
        usize::from(self.lrhs_in_ch > 0) + usize::from(self.hrls_in_ch > 0)
    }

    /// `(name, out_ch, in_ch, kernel)` for every conv, in declaration order.
    pub fn layer_specs(&self) -> Vec<(String, usize, usize, usize)> {
        let f = self.feat_ch;
        let mut specs = Vec::new();
        if self.lrhs_in_ch > 0 {
            specs.push(("lrhs_shallow".to_string(), f, self.lrhs_in_ch, 3));
        }
        if self.hrls_in_ch > 0 {
            specs.push(("hrls_shallow".to_string(), f, self.hrls_in_ch, 3));
            for d in 0..self.stages() {
                specs.push((format!("down.{d}"), f, 4 * f, 3));
            }
        }
        specs.push(("fuse".to_string(), f, self.branches() * f, 1));
        for g in 0..self.groups {
            for b in 0..self.blocks {
                for i in 0..self.convs_per_rdb {
                    specs.push((format!("rdg.{g}.rdb.{b}.conv.{i}"), f, (i + 1) * f, 3));
                }
                specs.push((format!("rdg.{g}.rdb.{b}.lff"), f, (self.convs_per_rdb + 1) * f, 1));
            }
        }
        for d in 0..self.stages() {
            specs.push((format!("up.{d}"), 4 * f, f, 3));
        }
        specs.push(("recon".to_string(), OUTPUT_CHANNELS, f, 3));
        specs
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_specs().iter().map(|(_, o, i, k)| o * i * k * k + o).sum()
    }
}

#[derive(Clone, Debug)]
struct BlockIdx {
    convs: Vec<usize>,
    lff: usize,
}

/// Positions of each role inside the flat layer list.
#[derive(Clone, Debug)]
struct Layout {
    lrhs: Option<usize>,
    hrls: Option<usize>,
    down: Vec<usize>,
    fuse: usize,
    groups: Vec<Vec<BlockIdx>>,
    up: Vec<usize>,
    recon: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let mut next = 0usize;
        let mut take = || {
            next += 1;
            next - 1
        };
        let lrhs = (cfg.lrhs_in_ch > 0).then(&mut take);
        let (hrls, down) = if cfg.hrls_in_ch > 0 {
            let h = take();
            (Some(h), (0..cfg.stages()).map(|_| take()).collect())
        } else {
            (None, Vec::new())
        };
        let fuse = take();
        let groups = (0..cfg.groups)
            .map(|_| {
                (0..cfg.blocks)
                    .map(|_| BlockIdx { convs: (0..cfg.convs_per_rdb).map(|_| take()).collect(), lff: take() })
                    .collect()
            })
            .collect();
        let up = (0..cfg.stages()).map(|_| take()).collect();
        let recon = take();
        Self { lrhs, hrls, down, fuse, groups, up, recon }
    }
}

/// Learnable weights of the network, one [`ConvParams`] per conv in
/// declaration order (see [`NetworkConfig::layer_specs`]).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    config: NetworkConfig,
    names: Vec<String>,
    layers: Vec<ConvParams<T>>,
}

/// Per-layer gradients plus optional input gradients.
#[derive(Clone, Debug)]
pub struct NetworkGrads<T> {
    names: Vec<String>,
    pub layers: Vec<ConvGrads<T>>,
    pub lrhs_input: Option<Tensor<T>>,
    pub hrls_input: Option<Tensor<T>>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn get(&self, name: &str) -> Option<&ConvGrads<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.layers[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter_scalars(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|g| g.iter())
    }
}

#[derive(Clone, Debug)]
struct ConvRecord<T> {
    input: Tensor<T>,
    /// Post-rectifier output; `None` for the linear reconstruction layer.
    output: Option<Tensor<T>>,
}

/// Activations saved by a caching forward pass, consumed by
/// [`NetworkParams::backward`]. Also exposes the intermediate features.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    records: Vec<Option<ConvRecord<T>>>,
    lrhs_shape: Option<Shape>,
    hrls_shape: Option<Shape>,
    /// `(input, output)` of each RDB, group-major.
    pub block_io: Vec<(Tensor<T>, Tensor<T>)>,
    /// `(input, output)` of each RDG.
    pub group_io: Vec<(Tensor<T>, Tensor<T>)>,
    pub fused: Option<Tensor<T>>,
    pub dense: Option<Tensor<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            lrhs_shape: None,
            hrls_shape: None,
            block_io: Vec::new(),
            group_io: Vec::new(),
            fused: None,
            dense: None,
        }
    }

    pub fn is_populated(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(Option::is_some)
    }

    /// Which rectifier outputs were active, over all cached layers in order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.records
            .iter()
            .flatten()
            .filter_map(|r| r.output.as_ref())
            .flat_map(|o| o.data().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

impl<T: Scalar> NetworkParams<T> {
    /// Deterministic fan-in uniform initialisation from `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, layers) = config
            .layer_specs()
            .into_iter()
            .map(|(name, o, i, k)| Ok((name, ConvParams::init_uniform(o, i, k, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { config: config.clone(), names, layers })
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let (names, layers) = config
            .layer_specs()
            .into_iter()
            .map(|(name, o, i, k)| Ok((name, ConvParams::zeros(o, i, k)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { config: config.clone(), names, layers })
    }

    /// Rebuilds a parameter set from layers in declaration order, checking
    /// every shape against `config`.
    pub fn from_layers(config: &NetworkConfig, layers: Vec<ConvParams<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return shape_err(format!("expected {} layers, got {}", specs.len(), layers.len()));
        }
        for ((name, o, i, k), l) in specs.iter().zip(&layers) {
            if l.weight.shape() != Shape::new(*o, *i, *k, *k) {
                return shape_err(format!("layer {name}: expected {o}x{i}x{k}x{k}, got {}", l.weight.shape()));
            }
        }
        Ok(Self { config: config.clone(), names: specs.into_iter().map(|s| s.0).collect(), layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.layers
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&ConvParams<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.layers[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ConvParams<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.layers[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(ConvParams::num_scalars).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            names: self.names.clone(),
            layers: self.layers.iter().map(ConvParams::cast).collect(),
        }
    }

    pub fn sgd_step(&mut self, grads: &NetworkGrads<T>, lr: T) -> Result<()> {
        sgd_step(&mut self.layers, &grads.layers, &self.names, lr)
    }

    fn check_inputs(&self, lrhs: Option<&Tensor<T>>, hrls: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
        let cfg = &self.config;
        let s = cfg.scale;
        for (label, t, ch) in [("LRHS", lrhs, cfg.lrhs_in_ch), ("HRLS", hrls, cfg.hrls_in_ch)] {
            match (t, ch) {
                (Some(t), ch) if ch > 0 && t.shape().c != ch => {
                    return shape_err(format!("{label} input has {} channels, network expects {ch}", t.shape().c))
                }
                (Some(_), 0) => return shape_err(format!("{label} input given but the network has no {label} branch")),
                (None, ch) if ch > 0 => return shape_err(format!("{label} input missing")),
                _ => {}
            }
        }
        match (lrhs, hrls) {
            (Some(l), Some(h)) => {
                let (ls, hs) = (l.shape(), h.shape());
                if ls.n != hs.n {
                    return shape_err(format!("batch sizes differ: LRHS {ls}, HRLS {hs}"));
                }
                if hs.h != ls.h * s || hs.w != ls.w * s {
                    return shape_err(format!(
                        "HRLS spatial size {}x{} is not {s}x the LRHS size {}x{}",
                        hs.h, hs.w, ls.h, ls.w
                    ));
                }
                Ok((ls.n, ls.h, ls.w))
            }
            (Some(l), None) => Ok((l.shape().n, l.shape().h, l.shape().w)),
            (None, Some(h)) => {
                let hs = h.shape();
                if hs.h % s != 0 || hs.w % s != 0 {
                    return shape_err(format!("HRLS size {}x{} not divisible by scale {s}", hs.h, hs.w));
                }
                Ok((hs.n, hs.h / s, hs.w / s))
            }
            (None, None) => shape_err("no inputs"),
        }
    }

    fn conv_act(
        &self,
        idx: usize,
        input: Tensor<T>,
        rectify: bool,
        cache: &mut Option<&mut ForwardCache<T>>,
    ) -> Result<Tensor<T>> {
        let pre = conv2d(&input, &self.layers[idx])?;
        let out = if rectify { relu(&pre) } else { pre };
        if let Some(c) = cache.as_deref_mut() {
            c.records[idx] = Some(ConvRecord { input, output: rectify.then(|| out.clone()) });
        }
        Ok(out)
    }

    /// Inference forward pass for networks with both branches.
    pub fn predict(&self, lrhs: &Tensor<T>, hrls: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(Some(lrhs), Some(hrls), None)
    }

    /// Forward pass. A branch whose configured channel count is zero must be
    /// passed as `None`. When `cache` is given, activations are recorded for
    /// [`NetworkParams::backward`].
    pub fn forward(
        &self,
        lrhs: Option<&Tensor<T>>,
        hrls: Option<&Tensor<T>>,
        mut cache: Option<&mut ForwardCache<T>>,
    ) -> Result<Tensor<T>> {
        self.check_inputs(lrhs, hrls)?;
        let layout = Layout::new(&self.config);
        if let Some(c) = cache.as_deref_mut() {
            *c = ForwardCache::new();
            c.records = vec![None; self.layers.len()];
            c.lrhs_shape = lrhs.map(Tensor::shape);
            c.hrls_shape = hrls.map(Tensor::shape);
        }

        let mut branches = Vec::with_capacity(2);
        if let (Some(idx), Some(x)) = (layout.lrhs, lrhs) {
            branches.push(self.conv_act(idx, x.clone(), true, &mut cache)?);
        }
        if let (Some(idx), Some(x)) = (layout.hrls, hrls) {
            let mut f = self.conv_act(idx, x.clone(), true, &mut cache)?;
            for &d in &layout.down {
                f = self.conv_act(d, deshuffle(&f, 2)?, true, &mut cache)?;
            }
            branches.push(f);
        }
        let refs: Vec<&Tensor<T>> = branches.iter().collect();
        let f0 = self.conv_act(layout.fuse, concat_many(&refs)?, true, &mut cache)?;
        drop(branches);

        let mut group_in = f0.clone();
        for blocks in &layout.groups {
            let mut x = group_in.clone();
            for block in blocks {
                let y = self.rdb_forward(block, &x, &mut cache)?;
                if let Some(c) = cache.as_deref_mut() {
                    c.block_io.push((x.clone(), y.clone()));
                }
                x = y;
            }
            let group_out = add(&x, &group_in)?;
            if let Some(c) = cache.as_deref_mut() {
                c.group_io.push((group_in.clone(), group_out.clone()));
            }
            group_in = group_out;
        }
        let dense = add(&group_in, &f0)?;
        if let Some(c) = cache.as_deref_mut() {
            c.fused = Some(f0);
            c.dense = Some(dense.clone());
        }

        // conv -> rectifier -> shuffle; the rectifier commutes with the permutation.
        let mut f = dense;
        for &u in &layout.up {
            f = shuffle(&self.conv_act(u, f, true, &mut cache)?, 2)?;
        }
        self.conv_act(layout.recon, f, false, &mut cache)
    }

    fn rdb_forward(
        &self,
        block: &BlockIdx,
        x: &Tensor<T>,
        cache: &mut Option<&mut ForwardCache<T>>,
    ) -> Result<Tensor<T>> {
        let mut feats = vec![x.clone()];
        for &ci in &block.convs {
            let inp = concat_many(&feats.iter().collect::<Vec<_>>())?;
            let o = self.conv_act(ci, inp, true, cache)?;
            feats.push(o);
        }
        let cat = concat_many(&feats.iter().collect::<Vec<_>>())?;
        let local = self.conv_act(block.lff, cat, true, cache)?;
        add(x, &local)
    }

    fn conv_act_back(
        &self,
        idx: usize,
        cache: &ForwardCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Option<ConvGrads<T>>],
    ) -> Result<Tensor<T>> {
        let rec = cache.records[idx]
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("no cached activation for {}", self.names[idx])))?;
        let g_pre = match &rec.output {
            Some(out) => relu_backward(out, grad_out)?,
            None => grad_out.clone(),
        };
        let (g_in, g_params) = conv2d_backward(&rec.input, &self.layers[idx], &g_pre)?;
        grads[idx] = Some(g_params);
        Ok(g_in)
    }

    /// Analytic gradients of every parameter (and of the inputs) given the
    /// gradient of the loss with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<NetworkGrads<T>> {
        if !cache.is_populated() || cache.records.len() != self.layers.len() {
            return Err(Error::Usage(
                "backward requires a forward pass run with activation caching on this network".into(),
            ));
        }
        let layout = Layout::new(&self.config);
        let f = self.config.feat_ch;
        let mut grads: Vec<Option<ConvGrads<T>>> = vec![None; self.layers.len()];

        let mut g = self.conv_act_back(layout.recon, cache, grad_out, &mut grads)?;
        for &u in layout.up.iter().rev() {
            g = self.conv_act_back(u, cache, &shuffle_backward(&g, 2)?, &mut grads)?;
        }

        // F_DF = groups(F0) + F0
        let mut g_f0 = g.clone();
        let mut g_group = g;
        for blocks in layout.groups.iter().rev() {
            // group_out = blocks(group_in) + group_in
            let mut g_in = g_group.clone();
            let mut g_x = g_group;
            for block in blocks.iter().rev() {
                g_x = self.rdb_backward(block, cache, &g_x, &mut grads)?;
            }
            add_assign(&mut g_in, &g_x)?;
            g_group = g_in;
        }
        add_assign(&mut g_f0, &g_group)?;

        let g_cat = self.conv_act_back(layout.fuse, cache, &g_f0, &mut grads)?;
        let parts = split_channels(&g_cat, &vec![f; self.config.branches()])?;
        let mut parts = parts.into_iter();

        let lrhs_input = match layout.lrhs {
            Some(idx) => {
                let g_l = parts.next().expect("lrhs part");
                Some(self.conv_act_back(idx, cache, &g_l, &mut grads)?)
            }
            None => None,
        };
        let hrls_input = match layout.hrls {
            Some(idx) => {
                let mut g_h = parts.next().expect("hrls part");
                for &d in layout.down.iter().rev() {
                    g_h = deshuffle_backward(&self.conv_act_back(d, cache, &g_h, &mut grads)?, 2)?;
                }
                Some(self.conv_act_back(idx, cache, &g_h, &mut grads)?)
            }
            None => None,
        };
        debug_assert_eq!(lrhs_input.as_ref().map(Tensor::shape), cache.lrhs_shape);
        debug_assert_eq!(hrls_input.as_ref().map(Tensor::shape), cache.hrls_shape);

        Ok(NetworkGrads {
            names: self.names.clone(),
            layers: grads
                .into_iter()
                .zip(&self.names)
                .map(|(g, n)| g.ok_or_else(|| Error::Usage(format!("no gradient produced for {n}"))))
                .collect::<Result<_>>()?,
            lrhs_input,
            hrls_input,
        })
    }

    fn rdb_backward(
        &self,
        block: &BlockIdx,
        cache: &ForwardCache<T>,
        g_out: &Tensor<T>,
        grads: &mut [Option<ConvGrads<T>>],
    ) -> Result<Tensor<T>> {
        let f = self.config.feat_ch;
        let c = block.convs.len();
        // out = x + lff(concat(x, o_0 .. o_{c-1}))
        let g_cat = self.conv_act_back(block.lff, cache, g_out, grads)?;
        let mut g_feats = split_channels(&g_cat, &vec![f; c + 1])?;
        add_assign(&mut g_feats[0], g_out)?;
        for i in (0..c).rev() {
            let g_o = g_feats[i + 1].clone();
            let g_inp = self.conv_act_back(block.convs[i], cache, &g_o, grads)?;
            for (j, part) in split_channels(&g_inp, &vec![f; i + 1])?.iter().enumerate() {
                add_assign(&mut g_feats[j], part)?;
            }
        }
        Ok(g_feats.swap_remove(0))
    }
}
