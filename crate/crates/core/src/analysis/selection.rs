//! Weighted heuristic selection scores and the exhaustive weight-lattice search.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::heuristics::{Heuristic, HeuristicVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// `ln(1 + x)`
    Log1p,
}

impl Transform {
    pub fn default_for(h: Heuristic) -> Self {
        if h == Heuristic::Fisher {
            Transform::Log1p
        } else {
            Transform::Identity
        }
    }

    pub fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            Transform::Identity => x,
            Transform::Log1p => x.ln_1p(),
        };
        y.is_finite().then_some(y)
    }
}

/// One heuristic's participation in the selection score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightTerm {
    pub heuristic: Heuristic,
    pub weight: f64,
    /// +1 or -1.
    pub direction: f64,
    pub transform: Transform,
}

impl WeightTerm {
    pub fn new(heuristic: Heuristic, weight: f64) -> Self {
        Self {
            heuristic,
            weight,
            direction: heuristic.default_direction(),
            transform: Transform::default_for(heuristic),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub terms: Vec<WeightTerm>,
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.terms.iter().any(|t| t.weight != 0.0) {
            return Err(Error::InvalidArgument(
                "weight config has no nonzero weight".into(),
            ));
        }
        if let Some(t) = self
            .terms
            .iter()
            .find(|t| t.direction != 1.0 && t.direction != -1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "direction of {} must be +1 or -1, got {}",
                t.heuristic, t.direction
            )));
        }
        Ok(())
    }
}

impl fmt::Display for WeightConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| format!("{}={:.2}", t.heuristic, t.weight))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// A heuristic's per-layer values after the transform and min-max scaling to
/// `[0, 1]`. Unavailable layers take the worst value for the direction. A
/// constant column maps to all zeros. `None` when no layer has a value.
pub fn normalized_column(
    hv: &HeuristicVector,
    heuristic: Heuristic,
    direction: f64,
    transform: Transform,
) -> Option<Vec<f64>> {
    let raw: Vec<Option<f64>> = hv
        .column(heuristic)
        .into_iter()
        .map(|v| v.and_then(|x| transform.apply(x)))
        .collect();
    let (lo, hi) = raw
        .iter()
        .flatten()
        .fold(None::<(f64, f64)>, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })?;
    let span = hi - lo;
    let worst = if direction > 0.0 { 0.0 } else { 1.0 };
    Some(
        raw.into_iter()
            .map(|v| match v {
                Some(x) if span > 0.0 => (x - lo) / span,
                Some(_) => 0.0,
                None if span > 0.0 => worst,
                None => 0.0,
            })
            .collect(),
    )
}

fn accumulate(scores: &mut [f64], weight: f64, direction: f64, column: &[f64]) {
    for (s, n) in scores.iter_mut().zip(column) {
        *s += weight * direction * n;
    }
}

/// Per-layer selection scores (index `l - 1` for layer `l`).
pub fn selection_score(hv: &HeuristicVector, cfg: &WeightConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut scores = vec![0.0; hv.num_layers()];
    let mut any = false;
    for t in cfg.terms.iter().filter(|t| t.weight != 0.0) {
        if let Some(col) = normalized_column(hv, t.heuristic, t.direction, t.transform) {
            accumulate(&mut scores, t.weight, t.direction, &col);
            any = true;
        }
    }
    if !any {
        return Err(Error::NoSignal);
    }
    Ok(scores)
}

/// Index of the first maximum.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Heuristics and ground-truth mIoU of every layer of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTable {
    pub heuristics: HeuristicVector,
    pub miou: Vec<f64>,
}

impl EpisodeTable {
    pub fn oracle_layer_index(&self) -> usize {
        argmax_first(&self.miou)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Mean per-episode mIoU of the selected layers.
    #[default]
    MeanMiou,
    /// Fraction of episodes whose selected layer is the oracle layer.
    OracleAgreement,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "miou" | "mean_miou" => Ok(Objective::MeanMiou),
            "agreement" | "oracle_agreement" => Ok(Objective::OracleAgreement),
            other => Err(Error::InvalidArgument(format!(
                "unknown objective {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchParams {
    /// Participating heuristics with their direction and transform.
    pub terms: Vec<(Heuristic, f64, Transform)>,
    pub step: f64,
    pub objective: Objective,
}

impl GridSearchParams {
    /// All six heuristics with their default directions and transforms.
    pub fn all_heuristics(step: f64) -> Self {
        Self::for_heuristics(&Heuristic::ALL, step)
    }

    pub fn for_heuristics(hs: &[Heuristic], step: f64) -> Self {
        Self {
            terms: hs
                .iter()
                .map(|&h| (h, h.default_direction(), Transform::default_for(h)))
                .collect(),
            step,
            objective: Objective::MeanMiou,
        }
    }

    /// Number of weight levels per heuristic, `1 / step + 1`.
    pub fn levels(&self) -> Result<usize> {
        let inv = 1.0 / self.step;
        if !(self.step > 0.0 && self.step <= 1.0) || (inv - inv.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "grid step must divide 1 evenly, got {}",
                self.step
            )));
        }
        Ok(inv.round() as usize + 1)
    }

    /// Lattice size excluding the all-zero point.
    pub fn lattice_size(&self) -> Result<usize> {
        let levels = self.levels()?;
        Ok(levels.pow(self.terms.len() as u32) - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: WeightConfig,
    /// Mean per-episode mIoU of the layers the best config selects.
    pub achieved_miou: f64,
    pub objective_value: f64,
    pub selected_layers: Vec<usize>,
    pub oracle_miou: f64,
    pub last_layer_miou: f64,
    pub regret: f64,
    pub configs_evaluated: usize,
}

/// Per episode and term: the normalized column, or `None` if unavailable.
type Prepared = Vec<Vec<Option<Vec<f64>>>>;

fn prepare(tables: &[EpisodeTable], params: &GridSearchParams) -> Prepared {
    tables
        .iter()
        .map(|t| {
            params
                .terms
                .iter()
                .map(|&(h, d, tr)| normalized_column(&t.heuristics, h, d, tr))
                .collect()
        })
        .collect()
}

fn weights_of(mut index: usize, levels: usize, m: usize) -> Vec<usize> {
    let mut w = vec![0; m];
    for slot in w.iter_mut().rev() {
        *slot = index % levels;
        index /= levels;
    }
    w
}

/// Layer chosen in each episode under integer weight levels `w`.
fn select_layers(
    prepared: &Prepared,
    tables: &[EpisodeTable],
    params: &GridSearchParams,
    w: &[usize],
    levels: usize,
) -> Vec<usize> {
    let denom = (levels - 1) as f64;
    prepared
        .iter()
        .zip(tables)
        .map(|(cols, t)| {
            let mut scores = vec![0.0; t.miou.len()];
            for ((col, &wi), &(_, d, _)) in cols.iter().zip(w).zip(&params.terms) {
                if wi == 0 {
                    continue;
                }
                if let Some(col) = col {
                    accumulate(&mut scores, wi as f64 / denom, d, col);
                }
            }
            argmax_first(&scores)
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Exhaustive search over the weight lattice `{0, step, ..., 1}^M` minus the origin.
///
/// Ties in the objective go to the lexicographically smallest weight vector.
pub fn grid_search(tables: &[EpisodeTable], params: &GridSearchParams) -> Result<GridSearchResult> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument(
            "grid search needs at least one episode".into(),
        ));
    }
    if params.terms.is_empty() {
        return Err(Error::InvalidArgument(
            "grid search needs at least one heuristic".into(),
        ));
    }
    for t in tables {
        if t.miou.len() < 2 || t.heuristics.num_layers() != t.miou.len() {
            return Err(Error::InvalidArgument(
                "every episode needs >= 2 layers with one heuristic row per layer".into(),
            ));
        }
    }
    let levels = params.levels()?;
    let m = params.terms.len();
    let total = params.lattice_size()?;
    let prepared = prepare(tables, params);
    let oracle: Vec<usize> = tables
        .iter()
        .map(EpisodeTable::oracle_layer_index)
        .collect();

    let evaluate = |index: usize| -> (f64, usize) {
        let w = weights_of(index, levels, m);
        let sel = select_layers(&prepared, tables, params, &w, levels);
        let value = match params.objective {
            Objective::MeanMiou => mean(sel.iter().zip(tables).map(|(&l, t)| t.miou[l])),
            Objective::OracleAgreement => {
                mean(
                    sel.iter()
                        .zip(&oracle)
                        .map(|(a, b)| if a == b { 1.0 } else { 0.0 }),
                )
            }
        };
        (value, index)
    };
    let better = |a: (f64, usize), b: (f64, usize)| -> (f64, usize) {
        if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let (best_value, best_index) = (1..=total)
        .into_par_iter()
        .map(evaluate)
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);

    let w = weights_of(best_index, levels, m);
    let selected = select_layers(&prepared, tables, params, &w, levels);
    let achieved = mean(selected.iter().zip(tables).map(|(&l, t)| t.miou[l]));
    let oracle_miou = mean(tables.iter().zip(&oracle).map(|(t, &l)| t.miou[l]));
    let last_layer_miou = mean(tables.iter().map(|t| *t.miou.last().expect("non-empty")));
    let best = WeightConfig {
        terms: params
            .terms
            .iter()
            .zip(&w)
            .map(|(&(heuristic, direction, transform), &wi)| WeightTerm {
                heuristic,
                weight: wi as f64 / (levels - 1) as f64,
                direction,
                transform,
            })
            .collect(),
    };
    Ok(GridSearchResult {
        best,
        achieved_miou: achieved,
        objective_value: best_value,
        selected_layers: selected.iter().map(|l| l + 1).collect(),
        oracle_miou,
        last_layer_miou,
        regret: oracle_miou - achieved,
        configs_evaluated: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::heuristics::HeuristicRow;

    fn hv(cols: &[(Heuristic, &[Option<f64>])]) -> HeuristicVector {
        let n = cols[0].1.len();
        let mut rows = vec![HeuristicRow::default(); n];
        for (h, vals) in cols {
            for (r, v) in rows.iter_mut().zip(vals.iter()) {
                r.set(*h, *v);
            }
        }
        HeuristicVector { rows }
    }

    #[test]
    fn single_heuristic_follows_its_argmax() {
        let v = hv(&[(Heuristic::SelfIou, &[Some(0.2), Some(0.9), Some(0.4)])]);
        let cfg = WeightConfig {
            terms: vec![WeightTerm::new(Heuristic::SelfIou, 1.0)],
        };
        assert_eq!(argmax_first(&selection_score(&v, &cfg).unwrap()), 1);
    }

    #[test]
    fn equal_rows_score_equally() {
        let v = hv(&[
            (Heuristic::SelfIou, &[Some(0.5), Some(0.5)]),
            (Heuristic::Entropy, &[Some(1.0), Some(1.0)]),
        ]);
        let cfg = WeightConfig {
            terms: vec![
                WeightTerm::new(Heuristic::SelfIou, 0.3),
                WeightTerm::new(Heuristic::Entropy, 0.7),
            ],
        };
        let s = selection_score(&v, &cfg).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn hand_computed_scores() {
        // self_iou (d=+1): 0.2, 0.6, 1.0 -> 0, 0.5, 1
        // entropy (d=-1): 1.0, 3.0, 2.0 -> 0, 1, 0.5
        let v = hv(&[
            (Heuristic::SelfIou, &[Some(0.2), Some(0.6), Some(1.0)]),
            (Heuristic::Entropy, &[Some(1.0), Some(3.0), Some(2.0)]),
        ]);
        let cfg = WeightConfig {
            terms: vec![
                WeightTerm::new(Heuristic::SelfIou, 0.5),
                WeightTerm::new(Heuristic::Entropy, 1.0),
            ],
        };
        let s = selection_score(&v, &cfg).unwrap();
        let expect = [0.0, 0.25 - 1.0, 0.5 - 0.5];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn unavailable_entries_take_the_worst_value() {
        let v = hv(&[(Heuristic::RegRatio, &[None, Some(2.0), Some(4.0)])]);
        let col = normalized_column(&v, Heuristic::RegRatio, -1.0, Transform::Identity).unwrap();
        assert_eq!(col, vec![1.0, 0.0, 1.0]);
        let col = normalized_column(&v, Heuristic::RegRatio, 1.0, Transform::Identity).unwrap();
        assert_eq!(col, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn no_signal_when_everything_is_missing() {
        let v = hv(&[(Heuristic::Fisher, &[None, None])]);
        let cfg = WeightConfig {
            terms: vec![WeightTerm::new(Heuristic::Fisher, 1.0)],
        };
        assert!(matches!(selection_score(&v, &cfg), Err(Error::NoSignal)));
        let zero = WeightConfig {
            terms: vec![WeightTerm::new(Heuristic::Fisher, 0.0)],
        };
        assert!(selection_score(&v, &zero).is_err());
    }

    #[test]
    fn lattice_sizes() {
        let p = GridSearchParams::all_heuristics(0.5);
        assert_eq!(p.lattice_size().unwrap(), 3usize.pow(6) - 1);
        let p = GridSearchParams::all_heuristics(0.1);
        assert_eq!(p.levels().unwrap(), 11);
        assert!(GridSearchParams::all_heuristics(0.3).levels().is_err());
    }

    #[test]
    fn lexicographic_weight_order() {
        assert_eq!(weights_of(1, 11, 3), vec![0, 0, 1]);
        assert_eq!(weights_of(11, 11, 3), vec![0, 1, 0]);
        assert_eq!(weights_of(11 * 11 * 11 - 1, 11, 3), vec![10, 10, 10]);
    }

    #[test]
    fn constant_heuristics_fall_back_to_first_layer() {
        let tables = vec![EpisodeTable {
            heuristics: hv(&[
                (Heuristic::SelfIou, &[Some(0.3); 3]),
                (Heuristic::Fisher, &[Some(2.0); 3]),
            ]),
            miou: vec![0.1, 0.9, 0.5],
        }];
        let params =
            GridSearchParams::for_heuristics(&[Heuristic::SelfIou, Heuristic::Fisher], 0.1);
        let r = grid_search(&tables, &params).unwrap();
        assert_eq!(r.achieved_miou, 0.1);
        assert_eq!(r.selected_layers, vec![1]);
        let weights: Vec<f64> = r.best.terms.iter().map(|t| t.weight).collect();
        assert_eq!(weights, vec![0.0, 0.1]);
    }
}
