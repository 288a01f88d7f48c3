//! Render-layer sets and beauty-image reconstruction.
//!
//! The beauty image is the sum of four lobe components, each
//! `Col * (Dir + Ind)`, plus the environment and emission layers.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{same_shape, Tensor};

pub const COMBINED: &str = "Combined";

/// Every recognised layer name, spelled exactly as the renderer writes them.
pub const LAYER_NAMES: [&str; 34] = [
    "AO",
    "Debug Render Time",
    "Denoising Albedo",
    "Denoising Depth",
    "Denoising Intensity",
    "Denoising Normal",
    "Denoising Shadowing",
    "Denoising Variance",
    "Depth",
    "DiffCol",
    "DiffDir",
    "DiffInd",
    "Emit",
    "Env",
    "GlossCol",
    "GlossDir",
    "GlossInd",
    "IndexMA",
    "IndexOB",
    "Mist",
    "Noisy Image",
    "Normal",
    "Shadow",
    "SubsurfaceCol",
    "SubsurfaceDir",
    "SubsurfaceInd",
    "TransCol",
    "TransDir",
    "TransInd",
    "UV",
    "Vector",
    "VolumeDir",
    "VolumeInd",
    COMBINED,
];

/// `(Col, Dir, Ind)` triples of the four lobes, in summation order.
pub const COMPONENTS: [[&str; 3]; 4] = [
    ["DiffCol", "DiffDir", "DiffInd"],
    ["GlossCol", "GlossDir", "GlossInd"],
    ["SubsurfaceCol", "SubsurfaceDir", "SubsurfaceInd"],
    ["TransCol", "TransDir", "TransInd"],
];

pub const ADDITIVE: [&str; 2] = ["Env", "Emit"];

const SINGLE_CHANNEL: [&str; 4] = ["Depth", "Mist", "IndexMA", "IndexOB"];
const VOLUME: [&str; 2] = ["VolumeDir", "VolumeInd"];

pub fn is_known_layer(name: &str) -> bool {
    LAYER_NAMES.contains(&name)
}

fn required_channels(name: &str) -> Option<usize> {
    if SINGLE_CHANNEL.contains(&name) {
        return Some(1);
    }
    let three = COMPONENTS.iter().flatten().any(|n| *n == name)
        || ADDITIVE.contains(&name)
        || matches!(name, "Combined" | "Noisy Image" | "AO" | "Shadow" | "VolumeDir" | "VolumeInd");
    three.then_some(3)
}

/// Named per-pixel layers of one rendered view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderLayerSet<T> {
    layers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> RenderLayerSet<T> {
    pub fn new() -> Self {
        Self { layers: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, layer: Tensor<T>) -> Option<Tensor<T>> {
        self.layers.insert(name.into(), layer)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layers.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.layers.get(name).ok_or_else(|| Error::Data(format!("missing render layer \"{name}\"")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.layers.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for RenderLayerSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        Self { layers: iter.into_iter().collect() }
    }
}

/// `col * (dir + ind)` elementwise.
pub fn compose_component<T: Scalar>(col: &Tensor<T>, dir: &Tensor<T>, ind: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(col, dir, "compose_component")?;
    same_shape(col, ind, "compose_component")?;
    let light = dir.zip_map(ind, |d, i| d + i)?;
    col.zip_map(&light, |c, l| c * l)
}

/// Reconstructs the beauty image from the lobe, environment and emission layers.
pub fn compose_final<T: Scalar>(layers: &RenderLayerSet<T>) -> Result<Tensor<T>> {
    for name in COMPONENTS.iter().flatten().chain(ADDITIVE.iter()) {
        layers.require(name)?;
    }
    let mut acc: Option<Tensor<T>> = None;
    for [col, dir, ind] in COMPONENTS {
        let part = compose_component(layers.require(col)?, layers.require(dir)?, layers.require(ind)?)?;
        acc = Some(match acc {
            None => part,
            Some(a) => a.zip_map(&part, |x, y| x + y)?,
        });
    }
    let mut acc = acc.expect("four components");
    for name in ADDITIVE {
        acc = acc.zip_map(layers.require(name)?, |x, y| x + y)?;
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    UnknownName(String),
    MissingDependency(String),
    SpatialMismatch {
        layer: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    ChannelCount {
        layer: String,
        expected: usize,
        got: usize,
    },
    /// First non-finite value of a layer, with the total count.
    NonFinite {
        layer: String,
        n: usize,
        c: usize,
        y: usize,
        x: usize,
        count: usize,
    },
    /// Volume light is present but excluded from the composition.
    VolumeNonzero(String),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownName(n) => write!(f, "unknown layer name \"{n}\""),
            Finding::MissingDependency(n) => write!(f, "missing layer \"{n}\" needed for composition"),
            Finding::SpatialMismatch { layer, expected, got } => {
                write!(f, "layer \"{layer}\" is {}x{}, expected {}x{}", got.1, got.0, expected.1, expected.0)
            }
            Finding::ChannelCount { layer, expected, got } => {
                write!(f, "layer \"{layer}\" has {got} channels, expected {expected}")
            }
            Finding::NonFinite { layer, n, c, y, x, count } => write!(
                f,
                "layer \"{layer}\" has {count} non-finite value(s), first at item {n} channel {c} (x={x}, y={y})"
            ),
            Finding::VolumeNonzero(n) => {
                write!(f, "warning: volume layer \"{n}\" is nonzero but not part of the composition")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl Finding {
    /// Warnings do not prevent composition.
    pub fn is_warning(&self) -> bool {
        matches!(self, Finding::VolumeNonzero(_))
    }
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| !f.is_warning())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "ok: no findings");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

pub fn validate<T: Scalar>(layers: &RenderLayerSet<T>) -> ValidationReport {
    let mut findings = Vec::new();
    for name in layers.names() {
        if !is_known_layer(name) {
            findings.push(Finding::UnknownName(name.to_string()));
        }
    }
    for name in COMPONENTS.iter().flatten().chain(ADDITIVE.iter()) {
        if layers.get(name).is_none() {
            findings.push(Finding::MissingDependency(name.to_string()));
        }
    }

    // Reference size: the first composition layer present, else any layer.
    let reference = COMPONENTS
        .iter()
        .flatten()
        .chain(ADDITIVE.iter())
        .find_map(|n| layers.get(n))
        .or_else(|| layers.iter().next().map(|(_, t)| t))
        .map(|t| (t.shape().h, t.shape().w));

    for (name, t) in layers.iter() {
        let s = t.shape();
        if let Some(expected) = reference {
            if (s.h, s.w) != expected {
                findings.push(Finding::SpatialMismatch { layer: name.to_string(), expected, got: (s.h, s.w) });
            }
        }
        if let Some(expected) = required_channels(name) {
            if s.c != expected {
                findings.push(Finding::ChannelCount { layer: name.to_string(), expected, got: s.c });
            }
        }
        let count = t.data().iter().filter(|v| !v.is_finite()).count();
        if let Some(pos) = t.data().iter().position(|v| !v.is_finite()) {
            let (x, rest) = (pos % s.w, pos / s.w);
            let (y, rest) = (rest % s.h, rest / s.h);
            let (c, n) = (rest % s.c, rest / s.c);
            findings.push(Finding::NonFinite { layer: name.to_string(), n, c, y, x, count });
        }
        if VOLUME.contains(&name) && t.data().iter().any(|&v| v != T::zero()) {
            findings.push(Finding::VolumeNonzero(name.to_string()));
        }
    }
    ValidationReport { findings }
}
