//! Per-layer evaluation: oracle layer selection, layer-quality heuristics and
//! the weighted heuristic search.

pub mod heuristics;
pub mod selection;
pub mod table;

use crate::error::{Error, Result};
use crate::matching::{segment_episode_detailed, SegmentParams};
use crate::metrics::{confusion, miou, ConfusionMatrix};
use crate::types::{ClassMask, Episode};

pub use heuristics::{
    fisher_score, gram_consistency, map_entropy, register_patch_ratio, reverse_miou,
    support_self_iou, Heuristic, HeuristicRow, HeuristicVector,
};
pub use selection::{
    grid_search, selection_score, EpisodeTable, GridSearchParams, GridSearchResult, Objective,
    Transform, WeightConfig, WeightTerm,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub segment: SegmentParams,
    /// Size of the label space used for confusion matrices.
    pub num_classes: usize,
    pub eps: f64,
}

impl AnalysisParams {
    pub fn for_episode(ep: &Episode, segment: SegmentParams) -> Self {
        Self {
            segment,
            num_classes: ep.max_class(),
            eps: 1e-8,
        }
    }
}

/// Prediction at one layer and, when ground truth exists, its score.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutcome {
    pub layer: usize,
    pub prediction: ClassMask,
    pub miou: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
}

fn outcome(
    ep: &Episode,
    layer: usize,
    prediction: ClassMask,
    num_classes: usize,
) -> Result<LayerOutcome> {
    let (miou, confusion) = match &ep.query_gt {
        Some(gt) => {
            let cm = confusion(&prediction, gt, num_classes)?;
            let m = match miou(&cm) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMiou) => None,
                Err(e) => return Err(e),
            };
            (m, Some(cm))
        }
        None => (None, None),
    };
    Ok(LayerOutcome {
        layer,
        prediction,
        miou,
        confusion,
    })
}

/// Segments the query at every layer `1..=L`.
pub fn per_layer_outcomes(ep: &Episode, params: &AnalysisParams) -> Result<Vec<LayerOutcome>> {
    (1..=ep.num_layers())
        .map(|l| {
            let seg = segment_episode_detailed(ep, l, &params.segment)?;
            outcome(ep, l, seg.prediction, params.num_classes)
        })
        .collect()
}

/// Layer with the highest mIoU; ties go to the lowest layer.
pub fn oracle_select(outcomes: &[LayerOutcome]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for o in outcomes {
        let m = o
            .miou
            .ok_or_else(|| Error::MissingGroundTruth(format!("layer {} has no mIoU", o.layer)))?;
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((o.layer, m));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::InvalidArgument("no layer outcomes".into()))
}

/// Everything measured about one episode across its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub outcomes: Vec<LayerOutcome>,
    pub heuristics: HeuristicVector,
    pub oracle_layer: Option<usize>,
}

/// Heuristics of one layer, given the query prediction and score maps there.
fn layer_heuristics(
    ep: &Episode,
    layer: usize,
    seg: &crate::matching::Segmentation,
    params: &AnalysisParams,
) -> Result<HeuristicRow> {
    let entry = ep.query.layer(layer)?;
    let mut row = HeuristicRow::default();
    row.set(
        Heuristic::Fisher,
        Some(fisher_score(&entry.features, &seg.prediction, params.eps)),
    );
    row.set(
        Heuristic::ReverseMiou,
        reverse_miou(ep, layer, &seg.prediction, &params.segment)?,
    );
    row.set(
        Heuristic::SelfIou,
        support_self_iou(ep, layer, &params.segment)?,
    );
    row.set(
        Heuristic::GramDist,
        gram_consistency(ep, layer, &seg.prediction, &params.segment)?,
    );
    row.set(Heuristic::RegRatio, register_patch_ratio(entry, params.eps));
    row.set(Heuristic::Entropy, map_entropy(&seg.scores));
    Ok(row)
}

/// Segments every layer, scores it against ground truth when available and
/// computes all six heuristics.
pub fn analyze_episode(ep: &Episode, params: &AnalysisParams) -> Result<EpisodeReport> {
    let mut outcomes = Vec::with_capacity(ep.num_layers());
    let mut rows = Vec::with_capacity(ep.num_layers());
    for l in 1..=ep.num_layers() {
        let seg = segment_episode_detailed(ep, l, &params.segment)?;
        rows.push(layer_heuristics(ep, l, &seg, params)?);
        outcomes.push(outcome(ep, l, seg.prediction, params.num_classes)?);
    }
    let oracle_layer = if outcomes.iter().all(|o| o.miou.is_some()) {
        Some(oracle_select(&outcomes)?)
    } else {
        None
    };
    Ok(EpisodeReport {
        outcomes,
        heuristics: HeuristicVector { rows },
        oracle_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(mious: &[f64]) -> Vec<LayerOutcome> {
        mious
            .iter()
            .enumerate()
            .map(|(i, &m)| LayerOutcome {
                layer: i + 1,
                prediction: ClassMask::filled(1, 1, 0).unwrap(),
                miou: Some(m),
                confusion: None,
            })
            .collect()
    }

    #[test]
    fn oracle_is_argmax_with_low_tie_break() {
        assert_eq!(oracle_select(&outcomes(&[0.3, 0.5, 0.4])).unwrap(), 2);
        assert_eq!(oracle_select(&outcomes(&[0.7; 4])).unwrap(), 1);
        assert_eq!(oracle_select(&outcomes(&[0.1, 0.2, 0.3, 0.4])).unwrap(), 4);
    }

    #[test]
    fn oracle_needs_scores() {
        let mut o = outcomes(&[0.1, 0.2]);
        o[1].miou = None;
        assert!(matches!(
            oracle_select(&o),
            Err(Error::MissingGroundTruth(_))
        ));
    }
}
