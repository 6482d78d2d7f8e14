//! Layer-quality heuristics computed without query ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interp::nearest_resize;
use crate::linalg::{cosine, widen, GramMatrix};
use crate::matching::{segment_features, SegmentParams, SimilarityMap};
use crate::metrics::episode_miou;
use crate::prototypes::{build_from_pairs, gather, ClassFeatureSet, PrototypeSet};
use crate::types::{ClassMask, Episode, FeatureMap, Layer, BACKGROUND, IGNORE_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Heuristic {
    Fisher,
    ReverseMiou,
    SelfIou,
    GramDist,
    RegRatio,
    Entropy,
}

impl Heuristic {
    pub const ALL: [Heuristic; 6] = [
        Heuristic::Fisher,
        Heuristic::ReverseMiou,
        Heuristic::SelfIou,
        Heuristic::GramDist,
        Heuristic::RegRatio,
        Heuristic::Entropy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name in heuristic tables.
    pub fn column(self) -> &'static str {
        match self {
            Heuristic::Fisher => "fisher",
            Heuristic::ReverseMiou => "rev_miou",
            Heuristic::SelfIou => "self_iou",
            Heuristic::GramDist => "gram_dist",
            Heuristic::RegRatio => "reg_ratio",
            Heuristic::Entropy => "entropy",
        }
    }

    /// +1 when larger values should favor a layer.
    pub fn default_direction(self) -> f64 {
        match self {
            Heuristic::Fisher | Heuristic::ReverseMiou | Heuristic::SelfIou => 1.0,
            Heuristic::GramDist | Heuristic::RegRatio | Heuristic::Entropy => -1.0,
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.column() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown heuristic {s:?}")))
    }
}

/// Heuristic values of one layer; `None` marks an unavailable entry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeuristicRow {
    pub values: [Option<f64>; 6],
}

impl HeuristicRow {
    pub fn get(&self, h: Heuristic) -> Option<f64> {
        self.values[h.index()]
    }

    pub fn set(&mut self, h: Heuristic, v: Option<f64>) {
        self.values[h.index()] = v.filter(|x| x.is_finite());
    }
}

/// Per-layer heuristic rows of one episode, layer `l` at index `l - 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeuristicVector {
    pub rows: Vec<HeuristicRow>,
}

impl HeuristicVector {
    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, h: Heuristic) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.get(h)).collect()
    }
}

/// Cosine Fisher ratio of the predicted partition of `query`.
///
/// `pred` is resampled to the feature grid by nearest neighbor; class means are
/// taken over raw features. A single predicted class scores 0.
pub fn fisher_score(query: &FeatureMap, pred: &ClassMask, eps: f64) -> f64 {
    let labels = nearest_resize(pred, query.height(), query.width());
    let dim = query.channels();
    let mut groups: BTreeMap<u8, Vec<Vec<f64>>> = BTreeMap::new();
    for (idx, &l) in labels.labels().iter().enumerate() {
        if l != IGNORE_LABEL {
            groups
                .entry(l)
                .or_default()
                .push(widen(query.position(idx)));
        }
    }
    if groups.len() < 2 {
        return 0.0;
    }

    let mean = |fs: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        for f in fs {
            for (a, b) in m.iter_mut().zip(f) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= fs.len() as f64);
        m
    };
    let all: Vec<Vec<f64>> = groups.values().flatten().cloned().collect();
    let global = mean(&all);

    let mut between = 0.0;
    let mut within = 0.0;
    for fs in groups.values() {
        let mu = mean(fs);
        between += fs.len() as f64 * (1.0 - cosine(&mu, &global));
        within += fs.iter().map(|f| 1.0 - cosine(f, &mu)).sum::<f64>();
    }
    between / (within + eps)
}

fn support_pairs(ep: &Episode, layer: usize) -> Result<Vec<(&FeatureMap, ClassMask)>> {
    ep.supports
        .iter()
        .map(|(stack, mask)| {
            Ok((
                &stack.layer(layer)?.features,
                mask.restrict_to(&ep.class_list),
            ))
        })
        .collect()
}

/// Mean mIoU of segmenting each support with `sets`, skipping supports where
/// the score is undefined.
fn mean_support_miou(
    ep: &Episode,
    layer: usize,
    sets: &BTreeMap<u8, PrototypeSet>,
    params: &SegmentParams,
) -> Result<Option<f64>> {
    let num_classes = ep.max_class();
    let mut scores = Vec::new();
    for (stack, mask) in &ep.supports {
        let fm = &stack.layer(layer)?.features;
        let seg = segment_features(fm, stack.image_size(), sets, params.mode)?;
        let gt = mask.restrict_to(&ep.class_list);
        match episode_miou(&seg.prediction, &gt, num_classes) {
            Ok(v) => scores.push(v),
            Err(Error::UndefinedMiou) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// How well prototypes built from the supports re-segment those same supports.
pub fn support_self_iou(ep: &Episode, layer: usize, params: &SegmentParams) -> Result<Option<f64>> {
    let pairs = support_pairs(ep, layer)?;
    let refs: Vec<(&FeatureMap, &ClassMask)> = pairs.iter().map(|(f, m)| (*f, m)).collect();
    let sets = build_from_pairs(&refs, &ep.all_classes(), &params.prototypes, layer)?;
    mean_support_miou(ep, layer, &sets, params)
}

/// Segments the supports with prototypes built from the query's own prediction.
///
/// Unavailable when the prediction holds fewer than two classes or no foreground.
pub fn reverse_miou(
    ep: &Episode,
    layer: usize,
    query_pred: &ClassMask,
    params: &SegmentParams,
) -> Result<Option<f64>> {
    let query = &ep.query.layer(layer)?.features;
    let pseudo = nearest_resize(query_pred, query.height(), query.width());
    let classes: Vec<u8> = pseudo
        .classes_present()
        .into_iter()
        .filter(|c| *c == BACKGROUND || ep.class_list.contains(c))
        .collect();
    if classes.len() < 2 || !classes.iter().any(|&c| c != BACKGROUND) {
        return Ok(None);
    }
    let sets = match build_from_pairs(&[(query, &pseudo)], &classes, &params.prototypes, layer) {
        Ok(s) => s,
        Err(Error::EpisodeUnusable(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if sets.len() < 2 {
        return Ok(None);
    }
    mean_support_miou(ep, layer, &sets, params)
}

fn gram_of(class_id: u8, features: Vec<Vec<f64>>) -> Result<Option<GramMatrix>> {
    if features.is_empty() {
        return Ok(None);
    }
    let set = ClassFeatureSet::new(class_id, features)?;
    crate::prototypes::class_gram(&set).map(Some)
}

/// Mean Frobenius distance between support and predicted-query class Grams.
///
/// Averages over classes (background included) that have features on both sides.
pub fn gram_consistency(
    ep: &Episode,
    layer: usize,
    query_pred: &ClassMask,
    params: &SegmentParams,
) -> Result<Option<f64>> {
    let pairs = support_pairs(ep, layer)?;
    let refs: Vec<(&FeatureMap, &ClassMask)> = pairs.iter().map(|(f, m)| (*f, m)).collect();
    let query = &ep.query.layer(layer)?.features;
    let pseudo = nearest_resize(query_pred, query.height(), query.width());
    let threshold = params.prototypes.threshold;

    let mut dists = Vec::new();
    for c in ep.all_classes() {
        let support = gram_of(c, gather(&refs, c, threshold))?;
        let query = gram_of(c, gather(&[(query, &pseudo)], c, threshold))?;
        if let (Some(gs), Some(gq)) = (support, query) {
            dists.push(gs.frobenius_distance(&gq));
        }
    }
    Ok((!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64))
}

/// Norm of the register block over the norm of the patch block.
pub fn register_patch_ratio(layer: &Layer, eps: f64) -> Option<f64> {
    if layer.registers.count() == 0 {
        return None;
    }
    let energy = |v: &[f32]| {
        v.iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    };
    Some(energy(layer.registers.data()) / (energy(layer.features.data()) + eps))
}

/// Mean per-pixel entropy of the softmax over class scores.
pub fn map_entropy(per_class_scores: &BTreeMap<u8, SimilarityMap>) -> Option<f64> {
    if per_class_scores.len() < 2 {
        return None;
    }
    let maps: Vec<&SimilarityMap> = per_class_scores.values().collect();
    let n = maps[0].values.len();
    if n == 0 || maps.iter().any(|m| m.values.len() != n) {
        return None;
    }
    let mut total = 0.0;
    let mut exps = vec![0.0; maps.len()];
    for i in 0..n {
        let top = maps
            .iter()
            .map(|m| m.values[i])
            .fold(f64::NEG_INFINITY, f64::max);
        for (e, m) in exps.iter_mut().zip(&maps) {
            *e = (m.values[i] - top).exp();
        }
        let z: f64 = exps.iter().sum();
        total -= exps
            .iter()
            .map(|&e| e / z)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
    }
    Some(total / n as f64)
}
