//! Query scoring against class prototypes and Gram matrices, and the final
//! per-pixel class assignment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::bilinear_resize;
use crate::linalg::{dot, norm, widen, GramMatrix};
use crate::prototypes::{build_prototypes, PrototypeParams, PrototypeSet};
use crate::types::{ClassMask, Episode, FeatureMap};

/// One real value per grid position, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SimilarityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "map {height}x{width} with {} values",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Which maps enter a class's similarity set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    #[default]
    Combined,
    PrototypeOnly,
    GramOnly,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(Self::Combined),
            "prototype_only" | "prototype-only" => Ok(Self::PrototypeOnly),
            "gram_only" | "gram-only" => Ok(Self::GramOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected combined, prototype_only or gram_only)"
            ))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Combined => "combined",
            Self::PrototypeOnly => "prototype_only",
            Self::GramOnly => "gram_only",
        })
    }
}

/// Cosine similarity of every query position with `prototype`.
/// Zero-norm query features score 0.
pub fn prototype_similarity(query: &FeatureMap, prototype: &[f64]) -> Result<SimilarityMap> {
    check_dim(query, prototype.len())?;
    let pn = norm(prototype);
    let values = query
        .positions()
        .map(|q| {
            let q = widen(q);
            let denom = norm(&q) * pn;
            if denom > 0.0 {
                (dot(&q, prototype) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    SimilarityMap::new(query.height(), query.width(), values)
}

/// Raw channel energy `q^T G q` at every query position, with `q` taken as is.
pub fn gram_energy(query: &FeatureMap, gram: &GramMatrix) -> Result<SimilarityMap> {
    check_dim(query, gram.dim())?;
    let values = query
        .positions()
        .map(|q| gram.quadratic_form(&widen(q)))
        .collect();
    SimilarityMap::new(query.height(), query.width(), values)
}

/// Gram energy min-max normalized to `[0, 1]`; a constant map becomes all zeros.
pub fn gram_similarity(query: &FeatureMap, gram: &GramMatrix) -> Result<SimilarityMap> {
    let mut map = gram_energy(query, gram)?;
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    for v in &mut map.values {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    Ok(map)
}

fn check_dim(query: &FeatureMap, dim: usize) -> Result<()> {
    if query.channels() != dim {
        return Err(Error::DimensionMismatch(format!(
            "query has {} channels, class descriptor has {dim}",
            query.channels()
        )));
    }
    Ok(())
}

/// The similarity set of one class at feature resolution.
pub fn assemble_class_stack(
    query: &FeatureMap,
    ps: &PrototypeSet,
    mode: MatchMode,
) -> Result<Vec<SimilarityMap>> {
    let mut maps = Vec::with_capacity(ps.prototypes.len() + 1);
    if mode != MatchMode::GramOnly {
        for p in &ps.prototypes {
            maps.push(prototype_similarity(query, p)?);
        }
    }
    if mode != MatchMode::PrototypeOnly {
        maps.push(gram_similarity(query, &ps.gram)?);
    }
    Ok(maps)
}

pub fn upsample_bilinear(
    map: &SimilarityMap,
    height: usize,
    width: usize,
) -> Result<SimilarityMap> {
    if height < map.height || width < map.width {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample {}x{} to smaller {height}x{width}",
            map.height, map.width
        )));
    }
    if (height, width) == map.size() {
        return Ok(map.clone());
    }
    let values = bilinear_resize(&map.values, map.height, map.width, height, width);
    SimilarityMap::new(height, width, values)
}

/// Elementwise mean, max and their product over a class's maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub mean: SimilarityMap,
    pub max: SimilarityMap,
    pub score: SimilarityMap,
}

pub fn aggregate_scores(stack: &[SimilarityMap]) -> Result<ScoreMaps> {
    let first = stack.first().ok_or(Error::NoMaps)?;
    let (h, w) = first.size();
    if stack.iter().any(|m| m.size() != (h, w)) {
        return Err(Error::InvalidShape(
            "maps in one class stack differ in size".into(),
        ));
    }
    let n = stack.len() as f64;
    let mut sum = vec![0.0; h * w];
    let mut max = vec![f64::NEG_INFINITY; h * w];
    for m in stack {
        for ((s, mx), &v) in sum.iter_mut().zip(max.iter_mut()).zip(&m.values) {
            *s += v;
            *mx = mx.max(v);
        }
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    let score = mean.iter().zip(&max).map(|(a, b)| a * b).collect();
    Ok(ScoreMaps {
        mean: SimilarityMap::new(h, w, mean)?,
        max: SimilarityMap::new(h, w, max)?,
        score: SimilarityMap::new(h, w, score)?,
    })
}

/// Per-pixel argmax over class score maps; exact ties go to the lowest class id.
pub fn assign_classes(per_class_scores: &BTreeMap<u8, SimilarityMap>) -> Result<ClassMask> {
    let (_, first) = per_class_scores
        .iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("no class competes in the assignment".into()))?;
    let (h, w) = first.size();
    if per_class_scores.values().any(|m| m.size() != (h, w)) {
        return Err(Error::InvalidShape(
            "class score maps differ in size".into(),
        ));
    }
    let labels = (0..h * w)
        .map(|i| {
            let mut best = None::<(u8, f64)>;
            for (&c, m) in per_class_scores {
                let v = m.values[i];
                match best {
                    Some((_, bv)) if bv >= v => {}
                    _ => best = Some((c, v)),
                }
            }
            best.map(|(c, _)| c).unwrap_or(0)
        })
        .collect();
    ClassMask::new(h, w, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentParams {
    pub prototypes: PrototypeParams,
    pub mode: MatchMode,
}

/// A prediction together with the per-class score maps that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub prediction: ClassMask,
    pub scores: BTreeMap<u8, SimilarityMap>,
}

/// Scores `query` against every prototype set and assigns pixels at `image_size`.
pub fn segment_features(
    query: &FeatureMap,
    image_size: (usize, usize),
    sets: &BTreeMap<u8, PrototypeSet>,
    mode: MatchMode,
) -> Result<Segmentation> {
    let (height, width) = image_size;
    let scores = sets
        .par_iter()
        .map(|(&c, ps)| {
            let stack = assemble_class_stack(query, ps, mode)?
                .iter()
                .map(|m| upsample_bilinear(m, height, width))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, aggregate_scores(&stack)?.score))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(Segmentation {
        prediction: assign_classes(&scores)?,
        scores,
    })
}

/// Full pipeline at one layer, keeping the score maps.
pub fn segment_episode_detailed(
    ep: &Episode,
    layer: usize,
    params: &SegmentParams,
) -> Result<Segmentation> {
    let sets = build_prototypes(ep, layer, &params.prototypes)?;
    let query = &ep.query.layer(layer)?.features;
    segment_features(query, ep.query.image_size(), &sets, params.mode)
}

/// Predicted class mask of the query at `layer`.
pub fn segment_episode(ep: &Episode, layer: usize, params: &SegmentParams) -> Result<ClassMask> {
    Ok(segment_episode_detailed(ep, layer, params)?.prediction)
}
