//! Feature, mask and episode containers shared by every stage of the pipeline.
//!
//! All containers validate their invariants on construction and are immutable
//! afterwards, so downstream code never has to re-check shapes or finiteness.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Label reserved for void pixels. Never counted, never collected.
pub const IGNORE_LABEL: u8 = 255;

/// Label of the background class.
pub const BACKGROUND: u8 = 0;

/// Dense patch features of one layer, channel-last and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidShape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "feature map {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map at offset {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_positions(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector at patch `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        self.position(row * self.width + col)
    }

    /// Feature vector at flat patch index `row * width + col`.
    pub fn position(&self, index: usize) -> &[f32] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn positions(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }
}

/// Non-spatial auxiliary tokens of one layer. `count` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterTokens {
    count: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RegisterTokens {
    pub fn new(count: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidShape(
                "register channels must be positive".into(),
            ));
        }
        if data.len() != count * channels {
            return Err(Error::InvalidShape(format!(
                "{count} registers of dimension {channels} need {} values, got {}",
                count * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("register tokens at offset {pos}")));
        }
        Ok(Self {
            count,
            channels,
            data,
        })
    }

    pub fn empty(channels: usize) -> Result<Self> {
        Self::new(0, channels, Vec::new())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub features: FeatureMap,
    pub registers: RegisterTokens,
}

impl Layer {
    pub fn new(features: FeatureMap, registers: RegisterTokens) -> Result<Self> {
        if features.channels() != registers.channels() {
            return Err(Error::DimensionMismatch(format!(
                "patch channels {} vs register channels {}",
                features.channels(),
                registers.channels()
            )));
        }
        Ok(Self {
            features,
            registers,
        })
    }
}

/// Per-layer features of one image. Layers are addressed 1-based; layer `L` is the last.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
    image_size: (usize, usize),
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, image_size: (usize, usize)) -> Result<Self> {
        let first = layers.first().ok_or_else(|| {
            Error::InvalidShape("layer stack must hold at least one layer".into())
        })?;
        let shape = layer_shape(first);
        for (i, layer) in layers.iter().enumerate().skip(1) {
            if layer_shape(layer) != shape {
                return Err(Error::InvalidShape(format!(
                    "layer {} has shape {:?}, layer 1 has {:?}",
                    i + 1,
                    layer_shape(layer),
                    shape
                )));
            }
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::InvalidShape("image size must be positive".into()));
        }
        Ok(Self { layers, image_size })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer by 1-based index.
    pub fn layer(&self, index: usize) -> Result<&Layer> {
        if index == 0 || index > self.layers.len() {
            return Err(Error::InvalidLayer {
                index,
                count: self.layers.len(),
            });
        }
        Ok(&self.layers[index - 1])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Source image size `(H, W)` in pixels.
    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// `(h, w, d, registers)` shared by every layer.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        layer_shape(&self.layers[0])
    }
}

fn layer_shape(layer: &Layer) -> (usize, usize, usize, usize) {
    let f = &layer.features;
    (f.height(), f.width(), f.channels(), layer.registers.count())
}

/// Integer label grid: 0 background, 1..=C foreground, 255 ignore.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(
                "mask dimensions must be positive".into(),
            ));
        }
        if labels.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Distinct labels present, excluding the ignore label.
    pub fn classes_present(&self) -> BTreeSet<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0u8..IGNORE_LABEL).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Maps every non-ignore label outside `keep` to background.
    pub fn restrict_to(&self, keep: &[u8]) -> ClassMask {
        let mut allowed = [false; 256];
        for &c in keep {
            allowed[c as usize] = true;
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == IGNORE_LABEL || allowed[l as usize] {
                    l
                } else {
                    BACKGROUND
                }
            })
            .collect();
        ClassMask {
            height: self.height,
            width: self.width,
            labels,
        }
    }
}

/// Per-class membership planes at feature resolution, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: usize,
    pub width: usize,
    pub class_id: u8,
    pub values: Vec<f64>,
}

/// One few-shot task: K labeled supports and one query over `class_list`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub supports: Vec<(LayerStack, ClassMask)>,
    pub query: LayerStack,
    pub query_gt: Option<ClassMask>,
    pub class_list: Vec<u8>,
}

impl Episode {
    /// Number of shots K.
    pub fn k_shot(&self) -> usize {
        self.supports.len()
    }

    pub fn num_layers(&self) -> usize {
        self.query.num_layers()
    }

    /// Background followed by the episode's foreground classes.
    pub fn all_classes(&self) -> Vec<u8> {
        std::iter::once(BACKGROUND)
            .chain(self.class_list.iter().copied())
            .collect()
    }

    /// Largest label id the episode can produce.
    pub fn max_class(&self) -> usize {
        self.class_list.iter().copied().max().unwrap_or(0) as usize
    }
}

/// Checks every cross-object invariant of an episode and hands it back unchanged.
pub fn validate_episode(ep: Episode) -> Result<Episode> {
    if ep.supports.is_empty() {
        return Err(Error::InvalidArgument(
            "episode needs at least one support".into(),
        ));
    }
    if ep.class_list.is_empty() {
        return Err(Error::InvalidArgument("episode class list is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for &c in &ep.class_list {
        if c == BACKGROUND || c == IGNORE_LABEL {
            return Err(Error::InvalidArgument(format!(
                "class list may only hold foreground ids, found {c}"
            )));
        }
        if !seen.insert(c) {
            return Err(Error::InvalidArgument(format!("class {c} listed twice")));
        }
    }

    let layers = ep.query.num_layers();
    let shape = ep.query.shape();
    for (stack, mask) in &ep.supports {
        if stack.num_layers() != layers {
            return Err(Error::LayerCountMismatch {
                expected: layers,
                found: stack.num_layers(),
            });
        }
        if stack.shape() != shape {
            return Err(Error::InvalidShape(format!(
                "support feature shape {:?} differs from query {:?}",
                stack.shape(),
                shape
            )));
        }
        if mask.size() != stack.image_size() {
            return Err(Error::MaskSizeMismatch {
                expected: stack.image_size(),
                found: mask.size(),
            });
        }
    }
    if let Some(gt) = &ep.query_gt {
        if gt.size() != ep.query.image_size() {
            return Err(Error::MaskSizeMismatch {
                expected: ep.query.image_size(),
                found: gt.size(),
            });
        }
    }
    for &c in &ep.class_list {
        if !ep.supports.iter().any(|(_, m)| m.labels().contains(&c)) {
            return Err(Error::ClassAbsent(c));
        }
    }
    Ok(ep)
}
