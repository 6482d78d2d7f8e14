//! Support feature collection, prototype clustering and class Gram matrices.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::interp::soft_class_plane;
use crate::kmeans::{self, KMeansParams};
use crate::linalg::{normalized, widen, GramMatrix};
use crate::types::{ClassMask, Episode, FeatureMap, LayerStack};

/// Support features of one class, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureSet {
    class_id: u8,
    dim: usize,
    features: Vec<Vec<f64>>,
}

impl ClassFeatureSet {
    pub fn new(class_id: u8, features: Vec<Vec<f64>>) -> Result<Self> {
        let dim = features.first().map(Vec::len).ok_or_else(|| {
            Error::InvalidArgument(format!("class {class_id} feature set is empty"))
        })?;
        if dim == 0 {
            return Err(Error::InvalidShape(
                "feature dimension must be positive".into(),
            ));
        }
        for f in &features {
            if f.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature of length {} in a set of dimension {dim}",
                    f.len()
                )));
            }
            if normalized(f).is_none() || f.iter().any(|x| !x.is_finite()) {
                return Err(Error::DegenerateFeature);
            }
        }
        Ok(Self {
            class_id,
            dim,
            features,
        })
    }

    pub fn class_id(&self) -> u8 {
        self.class_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }
}

/// Clustered descriptors of one class plus its Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub class_id: u8,
    /// Unit-norm prototypes; at most `n_clusters` of them.
    pub prototypes: Vec<Vec<f64>>,
    pub gram: GramMatrix,
    /// Number of support features the set was built from.
    pub num_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrototypeParams {
    pub n_clusters: usize,
    /// Minimum soft-mask membership for a patch to count toward a class.
    pub threshold: f64,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for PrototypeParams {
    fn default() -> Self {
        Self {
            n_clusters: 5,
            threshold: 0.5,
            seed: 0,
            max_iter: 50,
        }
    }
}

impl PrototypeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.n_clusters == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "n_clusters and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }

    fn class_seed(&self, class_id: u8) -> u64 {
        self.seed ^ (class_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Features at every patch whose downsampled membership in `class_id` reaches
/// `threshold`, concatenated over `pairs`. Zero-norm patches carry no direction
/// and are skipped.
pub(crate) fn gather(
    pairs: &[(&FeatureMap, &ClassMask)],
    class_id: u8,
    threshold: f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (fm, mask) in pairs {
        let soft = soft_class_plane(mask, class_id, fm.height(), fm.width());
        for (idx, &m) in soft.values.iter().enumerate() {
            if m >= threshold {
                let f = widen(fm.position(idx));
                if f.iter().any(|&x| x != 0.0) {
                    out.push(f);
                }
            }
        }
    }
    out
}

pub fn collect_class_features(
    supports: &[(LayerStack, ClassMask)],
    layer: usize,
    class_id: u8,
    threshold: f64,
) -> Result<ClassFeatureSet> {
    let pairs = layer_pairs(supports, layer)?;
    let features = gather(&pairs, class_id, threshold);
    if features.is_empty() {
        return Err(Error::ClassEmpty {
            class: class_id,
            layer,
        });
    }
    ClassFeatureSet::new(class_id, features)
}

fn layer_pairs(
    supports: &[(LayerStack, ClassMask)],
    layer: usize,
) -> Result<Vec<(&FeatureMap, &ClassMask)>> {
    supports
        .iter()
        .map(|(stack, mask)| Ok((&stack.layer(layer)?.features, mask)))
        .collect()
}

/// Unit-norm cluster centroids of a class feature set under cosine distance.
pub fn spherical_kmeans(
    features: &ClassFeatureSet,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    Ok(kmeans::fit(features.features(), KMeansParams { k, max_iter, seed })?.centroids)
}

/// Mean outer product of the unit-normalized class features.
pub fn class_gram(features: &ClassFeatureSet) -> Result<GramMatrix> {
    let units = features
        .features()
        .iter()
        .map(|f| normalized(f).ok_or(Error::DegenerateFeature))
        .collect::<Result<Vec<_>>>()?;
    Ok(GramMatrix::mean_outer(
        features.dim(),
        units.iter().map(Vec::as_slice),
    ))
}

fn prototype_set(features: &ClassFeatureSet, params: &PrototypeParams) -> Result<PrototypeSet> {
    let prototypes = spherical_kmeans(
        features,
        params.n_clusters,
        params.max_iter,
        params.class_seed(features.class_id()),
    )?;
    Ok(PrototypeSet {
        class_id: features.class_id(),
        prototypes,
        gram: class_gram(features)?,
        num_features: features.len(),
    })
}

/// Prototype sets for each of `classes` that has features in `pairs`.
///
/// `layer` only labels the error when every class comes up empty.
pub(crate) fn build_from_pairs(
    pairs: &[(&FeatureMap, &ClassMask)],
    classes: &[u8],
    params: &PrototypeParams,
    layer: usize,
) -> Result<BTreeMap<u8, PrototypeSet>> {
    params.validate()?;
    let mut sets = BTreeMap::new();
    for &c in classes {
        let features = gather(pairs, c, params.threshold);
        if features.is_empty() {
            continue;
        }
        let set = ClassFeatureSet::new(c, features)?;
        sets.insert(c, prototype_set(&set, params)?);
    }
    if sets.is_empty() {
        return Err(Error::EpisodeUnusable(layer));
    }
    Ok(sets)
}

/// Prototype sets for background and every episode class at `layer`.
///
/// Classes with no patch above the membership threshold are left out.
pub fn build_prototypes(
    ep: &Episode,
    layer: usize,
    params: &PrototypeParams,
) -> Result<BTreeMap<u8, PrototypeSet>> {
    let pairs = layer_pairs(&ep.supports, layer)?;
    build_from_pairs(&pairs, &ep.all_classes(), params, layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Layer, RegisterTokens};

    fn stack_from(h: usize, w: usize, d: usize, data: Vec<f32>, px: usize) -> LayerStack {
        let layer = Layer::new(
            FeatureMap::new(h, w, d, data).unwrap(),
            RegisterTokens::empty(d).unwrap(),
        )
        .unwrap();
        LayerStack::new(vec![layer], (h * px, w * px)).unwrap()
    }

    #[test]
    fn saturated_mask_collects_every_patch() {
        let s = stack_from(2, 3, 2, (1..=12).map(|x| x as f32).collect(), 4);
        let m = ClassMask::filled(8, 12, 4).unwrap();
        let set = collect_class_features(&[(s, m)], 1, 4, 0.9).unwrap();
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn background_only_mask_has_no_foreground() {
        let s = stack_from(2, 2, 2, vec![1.0; 8], 4);
        let m = ClassMask::filled(8, 8, 0).unwrap();
        let err = collect_class_features(&[(s, m)], 1, 1, 0.5).unwrap_err();
        assert!(matches!(err, Error::ClassEmpty { class: 1, layer: 1 }));
        assert!(err.to_string().contains("class empty"));
    }

    #[test]
    fn single_block_yields_single_feature() {
        let s = stack_from(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0], 4);
        let labels = (0..64)
            .map(|i| if i / 8 >= 4 && i % 8 >= 4 { 1 } else { 0 })
            .collect();
        let m = ClassMask::new(8, 8, labels).unwrap();
        let set = collect_class_features(&[(s, m)], 1, 1, 0.5).unwrap();
        assert_eq!(set.features(), &[vec![2.0, 1.0]]);
    }

    #[test]
    fn gram_of_single_feature() {
        let set = ClassFeatureSet::new(1, vec![vec![3.0, 4.0]]).unwrap();
        let g = class_gram(&set).unwrap();
        let expect = [0.36, 0.48, 0.48, 0.64];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_of_orthonormal_pair() {
        let set = ClassFeatureSet::new(1, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = class_gram(&set).unwrap();
        assert_eq!(g.data(), &[0.5, 0.0, 0.0, 0.5]);
        assert!((g.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_feature_is_degenerate() {
        assert!(matches!(
            ClassFeatureSet::new(1, vec![vec![0.0, 0.0]]),
            Err(Error::DegenerateFeature)
        ));
    }

    #[test]
    fn threshold_outside_unit_interval_is_rejected() {
        let p = PrototypeParams {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
