use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;

use super::{EvaluateArgs, GridArgs, RunConfig, SynthArgs};
use crate::analysis::table::{episode_tables, read_table, write_table, TableRow};
use crate::analysis::{
    analyze_episode, grid_search, oracle_select, per_layer_outcomes, AnalysisParams,
    GridSearchParams, Heuristic, Objective,
};
use crate::episodes::{
    load_episode, read_feature_file, read_mask, sample_episodes, split_seed, write_mask,
    write_synthetic_dataset, DatasetManifest, EpisodeDescriptor, EpisodePlan, EpisodeSpec,
};
use crate::error::Error;
use crate::matching::{segment_episode, SegmentParams};
use crate::metrics::{confusion, merge, miou, write_iou_csv, ConfusionMatrix};
use crate::prototypes::PrototypeParams;
use crate::types::Episode;

/// Invalid command-line input, as opposed to a failure while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Episodes that could not be processed; outputs cover the rest.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CmdOutcome {
    pub failed: Vec<usize>,
}

const PLAN_FILE: &str = "episodes.json";
const PREDICTIONS_DIR: &str = "predictions";

fn prediction_path(dir: &Path, episode: usize, layer: usize) -> PathBuf {
    dir.join(PREDICTIONS_DIR)
        .join(format!("episode_{episode:04}_layer_{layer:02}.png"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Layer count of the first query in the plan.
fn stack_depth(manifest: &DatasetManifest, plan: &EpisodePlan) -> anyhow::Result<usize> {
    let first = plan
        .sampled
        .first()
        .ok_or_else(|| usage("no episodes requested"))?;
    let rec = manifest.record(&first.query_id)?;
    Ok(read_feature_file(manifest.resolve(&rec.feature_path), rec.image_size)?.num_layers())
}

struct Setup {
    manifest: DatasetManifest,
    plan: EpisodePlan,
    num_classes: usize,
    layers: Vec<usize>,
    depth: usize,
}

fn setup(cfg: &RunConfig) -> anyhow::Result<Setup> {
    if cfg.episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    base_params(cfg, 0)
        .prototypes
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    if cfg.eps.is_nan() || cfg.eps <= 0.0 {
        return Err(usage("--eps must be positive"));
    }
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let spec = EpisodeSpec {
        n_way: cfg.n_way,
        k_shot: cfg.k_shot,
        seed: cfg.seed,
        episodes: cfg.episodes,
    };
    let sampled = sample_episodes(&manifest, &spec)?;
    let plan = EpisodePlan { spec, sampled };
    let depth = stack_depth(&manifest, &plan)?;
    let layers = cfg.layer.resolve(depth).map_err(usage)?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(Setup {
        num_classes: manifest.num_classes(),
        manifest,
        plan,
        layers,
        depth,
    })
}

/// Per-episode segmentation parameters; clustering seeds split from the root seed.
fn base_params(cfg: &RunConfig, episode: usize) -> SegmentParams {
    SegmentParams {
        prototypes: PrototypeParams {
            n_clusters: cfg.n_clusters,
            threshold: cfg.mask_threshold,
            seed: split_seed(split_seed(cfg.seed, u64::MAX), episode as u64),
            ..Default::default()
        },
        mode: cfg.mode,
    }
}

/// Runs `f` on every episode on a bounded pool; results keep plan order.
fn run_episodes<T, F>(
    cfg: &RunConfig,
    s: &Setup,
    f: F,
) -> anyhow::Result<Vec<(usize, Result<T, Error>)>>
where
    T: Send,
    F: Fn(&EpisodeDescriptor, &Episode, SegmentParams) -> Result<T, Error> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| {
        s.plan
            .sampled
            .par_iter()
            .map(|d| {
                let r = load_episode(&s.manifest, d)
                    .and_then(|ep| f(d, &ep, base_params(cfg, d.episode_id)));
                (d.episode_id, r)
            })
            .collect()
    }))
}

/// Splits successes from failures, reporting each failure.
fn partition<T>(
    results: Vec<(usize, Result<T, Error>)>,
    out: &mut dyn Write,
) -> anyhow::Result<(Vec<(usize, T)>, CmdOutcome)> {
    let mut ok = Vec::with_capacity(results.len());
    let mut outcome = CmdOutcome::default();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => {
                writeln!(out, "episode {id} failed: {e}")?;
                outcome.failed.push(id);
            }
        }
    }
    Ok((ok, outcome))
}

fn write_plan(dir: &Path, plan: &EpisodePlan) -> anyhow::Result<()> {
    let path = dir.join(PLAN_FILE);
    serde_json::to_writer_pretty(create(&path)?, plan)
        .with_context(|| format!("writing {}", path.display()))
}

fn write_layer_iou(
    dir: &Path,
    stem: &str,
    layer: usize,
    cm: &ConfusionMatrix,
) -> anyhow::Result<()> {
    let path = dir.join(format!("{stem}_layer_{layer:02}.csv"));
    write_iou_csv(cm, create(&path)?).with_context(|| format!("writing {}", path.display()))
}

/// Merged-confusion mIoU over a set of per-episode matrices.
fn aggregate(cms: &[ConfusionMatrix]) -> anyhow::Result<(Option<f64>, Option<ConfusionMatrix>)> {
    if cms.is_empty() {
        return Ok((None, None));
    }
    let cm = merge(cms)?;
    let m = match miou(&cm) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMiou) => None,
        Err(e) => return Err(e.into()),
    };
    Ok((m, Some(cm)))
}

fn optional_miou(cm: &ConfusionMatrix) -> Result<Option<f64>, Error> {
    match miou(cm) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMiou) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn cmd_segment(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let s = setup(cfg)?;
    let results = run_episodes(cfg, &s, |_, ep, params| {
        s.layers
            .iter()
            .map(|&l| {
                let pred = segment_episode(ep, l, &params)?;
                let gt = ep
                    .query_gt
                    .as_ref()
                    .ok_or_else(|| Error::MissingGroundTruth("query has no mask".into()))?;
                let cm = confusion(&pred, gt, s.num_classes)?;
                Ok((l, pred, cm))
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let (done, outcome) = partition(results, out)?;

    write_plan(&cfg.output_dir, &s.plan)?;
    fs::create_dir_all(cfg.output_dir.join(PREDICTIONS_DIR))?;
    let query_of: BTreeMap<usize, &str> = s
        .plan
        .sampled
        .iter()
        .map(|d| (d.episode_id, d.query_id.as_str()))
        .collect();
    let mut csv = csv::Writer::from_writer(create(&cfg.output_dir.join("episode_miou.csv"))?);
    csv.write_record(["episode_id", "query_id", "layer", "miou"])?;
    let mut per_layer: BTreeMap<usize, Vec<ConfusionMatrix>> = BTreeMap::new();
    for (id, layers) in &done {
        for (l, pred, cm) in layers {
            write_mask(pred, prediction_path(&cfg.output_dir, *id, *l))?;
            csv.write_record([
                id.to_string(),
                query_of[id].to_string(),
                l.to_string(),
                fmt_opt(optional_miou(cm)?),
            ])?;
            per_layer.entry(*l).or_default().push(cm.clone());
        }
    }
    csv.flush()?;

    for (l, cms) in &per_layer {
        let (m, cm) = aggregate(cms)?;
        if let Some(cm) = cm {
            write_layer_iou(&cfg.output_dir, "iou", *l, &cm)?;
        }
        writeln!(
            out,
            "layer {l}: aggregated mIoU {} over {} episodes",
            fmt_opt(m),
            cms.len()
        )?;
    }
    Ok(outcome)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let plan_path = args.output_dir.join(PLAN_FILE);
    let plan: EpisodePlan = serde_json::from_reader(
        File::open(&plan_path).with_context(|| format!("opening {}", plan_path.display()))?,
    )
    .with_context(|| format!("parsing {}", plan_path.display()))?;
    let depth = stack_depth(&manifest, &plan)?;
    let layers = args.layer.resolve(depth).map_err(usage)?;
    let num_classes = manifest.num_classes();

    let mut outcome = CmdOutcome::default();
    let mut per_layer: BTreeMap<usize, Vec<ConfusionMatrix>> = BTreeMap::new();
    for d in &plan.sampled {
        let score = || -> Result<Vec<(usize, ConfusionMatrix)>, Error> {
            let rec = manifest.record(&d.query_id)?;
            let gt = read_mask(manifest.resolve(&rec.mask_path), rec.image_size)?
                .restrict_to(&d.class_list);
            layers
                .iter()
                .map(|&l| {
                    let pred = read_mask(
                        prediction_path(&args.output_dir, d.episode_id, l),
                        gt.size(),
                    )?;
                    Ok((l, confusion(&pred, &gt, num_classes)?))
                })
                .collect()
        };
        match score() {
            Ok(cms) => {
                for (l, cm) in cms {
                    per_layer.entry(l).or_default().push(cm);
                }
            }
            Err(e) => {
                writeln!(out, "episode {} failed: {e}", d.episode_id)?;
                outcome.failed.push(d.episode_id);
            }
        }
    }
    for (l, cms) in &per_layer {
        let (m, cm) = aggregate(cms)?;
        if let Some(cm) = cm {
            write_layer_iou(&args.output_dir, "evaluate_iou", *l, &cm)?;
        }
        writeln!(
            out,
            "layer {l}: aggregated mIoU {} over {} episodes",
            fmt_opt(m),
            cms.len()
        )?;
    }
    Ok(outcome)
}

struct OracleEpisode {
    /// Per layer `1..=L`: mIoU and confusion.
    layers: Vec<(Option<f64>, ConfusionMatrix)>,
    oracle: usize,
}

pub fn cmd_oracle(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let s = setup(cfg)?;
    let results = run_episodes(cfg, &s, |_, ep, segment| {
        let params = AnalysisParams {
            segment,
            num_classes: s.num_classes,
            eps: cfg.eps,
        };
        let outcomes = per_layer_outcomes(ep, &params)?;
        let oracle = oracle_select(&outcomes)?;
        let layers = outcomes
            .into_iter()
            .map(|o| {
                let cm = o
                    .confusion
                    .ok_or_else(|| Error::MissingGroundTruth("query has no mask".into()))?;
                Ok((o.miou, cm))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(OracleEpisode { layers, oracle })
    })?;
    let (done, outcome) = partition(results, out)?;
    write_plan(&cfg.output_dir, &s.plan)?;
    if done.is_empty() {
        bail!("every episode failed");
    }

    let depth = s.depth;
    let mut layer_csv =
        csv::Writer::from_writer(create(&cfg.output_dir.join("oracle_layers.csv"))?);
    layer_csv.write_record([
        "layer",
        "aggregated_miou",
        "mean_episode_miou",
        "oracle_count",
    ])?;
    for l in 1..=depth {
        let cms: Vec<ConfusionMatrix> = done
            .iter()
            .map(|(_, e)| e.layers[l - 1].1.clone())
            .collect();
        let (m, _) = aggregate(&cms)?;
        let defined: Vec<f64> = done.iter().filter_map(|(_, e)| e.layers[l - 1].0).collect();
        let mean =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let count = done.iter().filter(|(_, e)| e.oracle == l).count();
        layer_csv.write_record([l.to_string(), fmt_opt(m), fmt_opt(mean), count.to_string()])?;
    }
    layer_csv.flush()?;

    let mut ep_csv = csv::Writer::from_writer(create(&cfg.output_dir.join("oracle_episodes.csv"))?);
    ep_csv.write_record([
        "episode_id",
        "oracle_layer",
        "oracle_miou",
        "last_layer_miou",
    ])?;
    for (id, e) in &done {
        ep_csv.write_record([
            id.to_string(),
            e.oracle.to_string(),
            fmt_opt(e.layers[e.oracle - 1].0),
            fmt_opt(e.layers[depth - 1].0),
        ])?;
    }
    ep_csv.flush()?;

    let oracle_cms: Vec<ConfusionMatrix> = done
        .iter()
        .map(|(_, e)| e.layers[e.oracle - 1].1.clone())
        .collect();
    let last_cms: Vec<ConfusionMatrix> = done
        .iter()
        .map(|(_, e)| e.layers[depth - 1].1.clone())
        .collect();
    let (oracle_miou, _) = aggregate(&oracle_cms)?;
    let (last_miou, _) = aggregate(&last_cms)?;
    let mut counts = vec![0usize; depth + 1];
    for (_, e) in &done {
        counts[e.oracle] += 1;
    }
    let dominant = (1..=depth).fold(1, |best, l| if counts[l] > counts[best] { l } else { best });
    let gap = oracle_miou.zip(last_miou).map(|(a, b)| a - b);

    let report = format!(
        "oracle aggregated mIoU {}\nlast-layer aggregated mIoU {}\ngap {}\ndominant layer {dominant} ({} of {} episodes)\n",
        fmt_opt(oracle_miou),
        fmt_opt(last_miou),
        fmt_opt(gap),
        counts[dominant],
        done.len()
    );
    fs::write(cfg.output_dir.join("oracle_report.txt"), &report)?;
    out.write_all(report.as_bytes())?;
    Ok(outcome)
}

pub fn cmd_heuristics(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let s = setup(cfg)?;
    let results = run_episodes(cfg, &s, |_, ep, segment| {
        let params = AnalysisParams {
            segment,
            num_classes: s.num_classes,
            eps: cfg.eps,
        };
        analyze_episode(ep, &params)
    })?;
    let (done, outcome) = partition(results, out)?;
    write_plan(&cfg.output_dir, &s.plan)?;

    let rows: Vec<TableRow> = done
        .iter()
        .flat_map(|(id, report)| {
            report
                .outcomes
                .iter()
                .zip(&report.heuristics.rows)
                .map(move |(o, h)| TableRow {
                    episode_id: id.to_string(),
                    layer: o.layer,
                    heuristics: *h,
                    miou: o.miou,
                })
        })
        .collect();
    let path = cfg.output_dir.join("heuristics.csv");
    write_table(&rows, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    writeln!(
        out,
        "wrote {} rows for {} episodes to {}",
        rows.len(),
        done.len(),
        path.display()
    )?;
    Ok(outcome)
}

pub fn cmd_gridsearch(args: &GridArgs, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let rows = read_table(
        File::open(&args.table).with_context(|| format!("opening {}", args.table.display()))?,
    )
    .with_context(|| format!("reading {}", args.table.display()))?;
    let tables = episode_tables(&rows).with_context(|| format!("in {}", args.table.display()))?;
    let heuristics: Vec<Heuristic> = if args.heuristics.is_empty() {
        Heuristic::ALL.to_vec()
    } else {
        args.heuristics
            .iter()
            .map(|h| h.trim().parse().map_err(|e: Error| usage(e.to_string())))
            .collect::<anyhow::Result<_>>()?
    };
    let objective: Objective = args
        .objective
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let mut params = GridSearchParams::for_heuristics(&heuristics, args.step);
    params.objective = objective;
    let total = params.lattice_size().map_err(|e| usage(e.to_string()))?;
    writeln!(
        out,
        "evaluating {total} weight configurations over {} episodes",
        tables.len()
    )?;

    let plain: Vec<_> = tables.iter().map(|(_, t)| t.clone()).collect();
    let r = grid_search(&plain, &params)?;
    writeln!(out, "best weights: {}", r.best)?;
    writeln!(out, "objective {:.6}", r.objective_value)?;
    writeln!(out, "achieved mIoU {:.6}", r.achieved_miou)?;
    writeln!(out, "oracle mIoU {:.6}", r.oracle_miou)?;
    writeln!(out, "last-layer mIoU {:.6}", r.last_layer_miou)?;
    writeln!(out, "regret {:.6}", r.regret)?;

    if let Some(dir) = &args.output_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(create(&dir.join("gridsearch_selection.csv"))?);
        w.write_record(["episode_id", "selected_layer", "oracle_layer"])?;
        for ((id, t), sel) in tables.iter().zip(&r.selected_layers) {
            w.write_record([
                id.clone(),
                sel.to_string(),
                (t.oracle_layer_index() + 1).to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create(&dir.join("gridsearch_weights.csv"))?);
        w.write_record(["heuristic", "weight", "direction", "transform"])?;
        for t in &r.best.terms {
            w.write_record([
                t.heuristic.to_string(),
                t.weight.to_string(),
                t.direction.to_string(),
                format!("{:?}", t.transform),
            ])?;
        }
        w.flush()?;
    }
    Ok(CmdOutcome::default())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> anyhow::Result<CmdOutcome> {
    let cfg = args.config();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if args.images < 2 {
        return Err(usage("--images must be at least 2"));
    }
    let path = write_synthetic_dataset(&cfg, args.images, &args.output_dir)?;
    writeln!(
        out,
        "wrote {} images; manifest at {}",
        args.images,
        path.display()
    )?;
    Ok(CmdOutcome::default())
}
