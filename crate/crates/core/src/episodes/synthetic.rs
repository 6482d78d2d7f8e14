//! Synthetic episodes and datasets with known answers.
//!
//! Every class (background included) owns one direction from a random
//! orthonormal set. Images are split into bands of whole patches, one band per
//! class, so every image contains every class. A patch feature is its class
//! direction plus Gaussian noise; the noise grows with the distance from the
//! peak layer, which makes the peak layer the most separable one.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::format::write_feature_file;
use super::manifest::{split_seed, DatasetManifest, ManifestRecord};
use super::mask::write_mask;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized};
use crate::types::{
    validate_episode, ClassMask, Episode, FeatureMap, Layer, LayerStack, RegisterTokens,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub layers: usize,
    /// Patch rows.
    pub h: usize,
    /// Patch columns.
    pub w: usize,
    pub d: usize,
    /// Noise standard deviation at the peak layer.
    pub noise_sigma: f64,
    /// 1-based layer with the least noise.
    pub peak_layer: usize,
    pub seed: u64,
    /// Pixels per patch side.
    pub patch_size: usize,
    /// Extra noise per layer of distance from the peak.
    pub off_peak_sigma: f64,
    pub registers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_way: 2,
            k_shot: 1,
            layers: 12,
            h: 16,
            w: 16,
            d: 64,
            noise_sigma: 0.0,
            peak_layer: 12,
            seed: 0,
            patch_size: 4,
            off_peak_sigma: 0.25,
            registers: 4,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.n_way + 1
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.h * self.patch_size, self.w * self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        if self.n_way == 0 || self.k_shot == 0 || self.layers == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_way, k_shot, layers and patch_size must be positive".into(),
            ));
        }
        if self.d < n {
            return Err(Error::InvalidArgument(format!(
                "d = {} cannot hold {n} orthogonal class directions",
                self.d
            )));
        }
        if self.h.min(self.w) < n {
            return Err(Error::InvalidArgument(format!(
                "a {}x{} patch grid cannot hold {n} class bands",
                self.h, self.w
            )));
        }
        if self.n_way > 254 {
            return Err(Error::InvalidArgument(
                "at most 254 foreground classes".into(),
            ));
        }
        if self.peak_layer == 0 || self.peak_layer > self.layers {
            return Err(Error::InvalidArgument(format!(
                "peak layer {} outside 1..={}",
                self.peak_layer, self.layers
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.off_peak_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise levels must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Noise standard deviation at 1-based `layer`.
    pub fn layer_sigma(&self, layer: usize) -> f64 {
        self.noise_sigma + self.off_peak_sigma * layer.abs_diff(self.peak_layer) as f64
    }
}

/// Random orthonormal directions, one per class id `0..n`.
fn class_directions(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while dirs.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &dirs {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        if let Some(u) = normalized(&v).filter(|_| v.iter().map(|x| x * x).sum::<f64>() > 1e-6) {
            dirs.push(u);
        }
    }
    dirs
}

/// Class per patch: bands of random thickness in random class order.
fn band_labels(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = cfg.num_classes();
    let horizontal = rng.random_bool(0.5);
    let extent = if horizontal { cfg.h } else { cfg.w };
    let mut order: Vec<u8> = (0..n as u8).collect();
    order.shuffle(rng);
    let mut cuts: Vec<usize> = (1..extent).collect();
    cuts.shuffle(rng);
    let mut cuts = cuts[..n - 1].to_vec();
    cuts.sort_unstable();
    let band_of = |pos: usize| cuts.iter().filter(|&&c| c <= pos).count();
    (0..cfg.h * cfg.w)
        .map(|i| {
            let pos = if horizontal { i / cfg.w } else { i % cfg.w };
            order[band_of(pos)]
        })
        .collect()
}

fn image(cfg: &SynthConfig, dirs: &[Vec<f64>], seed: u64) -> Result<(LayerStack, ClassMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch_labels = band_labels(cfg, &mut rng);
    let (height, width) = cfg.image_size();
    let p = cfg.patch_size;
    let pixels = (0..height * width)
        .map(|i| patch_labels[(i / width / p) * cfg.w + (i % width) / p])
        .collect();
    let mask = ClassMask::new(height, width, pixels)?;

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let sigma = cfg.layer_sigma(l);
        let mut data = Vec::with_capacity(cfg.h * cfg.w * cfg.d);
        for &c in &patch_labels {
            for &x in &dirs[c as usize] {
                let noise: f64 = if sigma > 0.0 {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((x + noise) as f32);
            }
        }
        let reg_scale = 0.5 + 0.1 * l.abs_diff(cfg.peak_layer) as f64;
        let regs = (0..cfg.registers * cfg.d)
            .map(|_| (reg_scale * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        layers.push(Layer::new(
            FeatureMap::new(cfg.h, cfg.w, cfg.d, data)?,
            RegisterTokens::new(cfg.registers, cfg.d, regs)?,
        )?);
    }
    Ok((LayerStack::new(layers, (height, width))?, mask))
}

/// A fully-determined episode over classes `1..=n_way` with query ground truth.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dirs = class_directions(cfg.d, cfg.num_classes(), &mut rng);
    let supports = (0..cfg.k_shot)
        .map(|k| image(cfg, &dirs, split_seed(cfg.seed, k as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let (query, gt) = image(cfg, &dirs, split_seed(cfg.seed, 0))?;
    validate_episode(Episode {
        supports,
        query,
        query_gt: Some(gt),
        class_list: (1..=cfg.n_way as u8).collect(),
    })
}

/// Writes `images` synthetic images sharing one set of class directions, plus
/// `manifest.json`, under `dir`. Returns the manifest path.
pub fn write_synthetic_dataset(cfg: &SynthConfig, images: usize, dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    std::fs::create_dir_all(dir.join("features"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dirs = class_directions(cfg.d, cfg.num_classes(), &mut rng);
    let mut records = Vec::with_capacity(images);
    for i in 0..images {
        let (stack, mask) = image(cfg, &dirs, split_seed(cfg.seed, i as u64))?;
        let id = format!("img_{i:04}");
        let feature_path = PathBuf::from("features").join(format!("{id}.fssd"));
        let mask_path = PathBuf::from("masks").join(format!("{id}.png"));
        write_feature_file(&stack, dir.join(&feature_path))?;
        write_mask(&mask, dir.join(&mask_path))?;
        records.push(ManifestRecord {
            image_id: id,
            feature_path,
            mask_path,
            classes_present: mask.classes_present().into_iter().collect(),
            image_size: stack.image_size(),
        });
    }
    let manifest = DatasetManifest::new(records, dir)?;
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
