//! Dataset manifests, episode specs and deterministic episode sampling.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::read_feature_file;
use super::mask::read_mask;
use crate::error::{Error, Result};
use crate::types::{validate_episode, Episode, BACKGROUND, IGNORE_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub feature_path: PathBuf,
    pub mask_path: PathBuf,
    pub classes_present: Vec<u8>,
    /// `[H, W]` in pixels.
    pub image_size: (usize, usize),
}

impl ManifestRecord {
    fn foreground(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes_present
            .iter()
            .copied()
            .filter(|&c| c != BACKGROUND && c != IGNORE_LABEL)
    }

    fn has_any(&self, classes: &[u8]) -> bool {
        self.foreground().any(|c| classes.contains(&c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            records,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.image_id.as_str()) {
                return Err(Error::BadManifest(format!(
                    "duplicate image_id {:?}",
                    r.image_id
                )));
            }
            if r.classes_present.is_empty() {
                return Err(Error::BadManifest(format!(
                    "image {:?} lists no classes",
                    r.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let load = || -> Result<Self> {
            let mut m: Self = serde_json::from_slice(&fs::read(path)?)?;
            m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            m.validate()?;
            Ok(m)
        };
        load().map_err(|e| e.at_path(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::from(e).at_path(path))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn record(&self, id: &str) -> Result<&ManifestRecord> {
        self.records
            .iter()
            .find(|r| r.image_id == id)
            .ok_or_else(|| Error::BadManifest(format!("unknown image_id {id:?}")))
    }

    /// Sorted foreground classes over the whole dataset.
    pub fn foreground_classes(&self) -> Vec<u8> {
        self.records
            .iter()
            .flat_map(ManifestRecord::foreground)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Largest foreground class id, which sizes dataset-wide confusion matrices.
    pub fn num_classes(&self) -> usize {
        self.foreground_classes().last().copied().unwrap_or(0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
    /// Number of episodes to draw.
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeDescriptor {
    pub episode_id: usize,
    pub class_list: Vec<u8>,
    pub support_ids: Vec<String>,
    pub query_id: String,
}

/// A spec together with the episodes drawn from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub spec: EpisodeSpec,
    pub sampled: Vec<EpisodeDescriptor>,
}

/// SplitMix64 step; derives independent per-episode seeds from one root seed.
pub fn split_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ATTEMPTS: usize = 100;

/// Draws `spec.episodes` episodes.
///
/// Each episode picks `n_way` classes, a query containing at least one of
/// them, and `k_shot` other images that together cover every picked class.
pub fn sample_episodes(
    manifest: &DatasetManifest,
    spec: &EpisodeSpec,
) -> Result<Vec<EpisodeDescriptor>> {
    if spec.n_way == 0 || spec.k_shot == 0 {
        return Err(Error::InfeasibleEpisodeSpec(
            "n_way and k_shot must be positive".into(),
        ));
    }
    let classes = manifest.foreground_classes();
    if spec.n_way > classes.len() {
        return Err(Error::InfeasibleEpisodeSpec(format!(
            "n_way = {} but the manifest has {} foreground classes",
            spec.n_way,
            classes.len()
        )));
    }
    if manifest.records.len() < spec.k_shot + 1 {
        return Err(Error::InfeasibleEpisodeSpec(format!(
            "{} images cannot host {} supports plus a query",
            manifest.records.len(),
            spec.k_shot
        )));
    }
    (0..spec.episodes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, i as u64));
            (0..ATTEMPTS)
                .find_map(|_| try_episode(manifest, spec, &classes, &mut rng))
                .map(|(class_list, support_ids, query_id)| EpisodeDescriptor {
                    episode_id: i,
                    class_list,
                    support_ids,
                    query_id,
                })
                .ok_or_else(|| {
                    Error::InfeasibleEpisodeSpec(format!(
                        "episode {i}: no valid draw in {ATTEMPTS} attempts"
                    ))
                })
        })
        .collect()
}

fn try_episode(
    manifest: &DatasetManifest,
    spec: &EpisodeSpec,
    classes: &[u8],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<u8>, Vec<String>, String)> {
    let mut class_list: Vec<u8> = classes.choose_multiple(rng, spec.n_way).copied().collect();
    class_list.sort_unstable();

    let candidates: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| manifest.records[i].has_any(&class_list))
        .collect();
    let &query = candidates.choose(rng)?;

    let mut chosen: Vec<usize> = Vec::with_capacity(spec.k_shot);
    let mut uncovered = class_list.clone();
    uncovered.shuffle(rng);
    while let Some(&c) = uncovered.first() {
        if chosen.len() == spec.k_shot {
            return None;
        }
        let pool: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| i != query && !chosen.contains(&i))
            .filter(|&i| manifest.records[i].foreground().any(|x| x == c))
            .collect();
        let &pick = pool.choose(rng)?;
        chosen.push(pick);
        let present: Vec<u8> = manifest.records[pick].foreground().collect();
        uncovered.retain(|x| !present.contains(x));
    }
    let rest: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| i != query && !chosen.contains(&i))
        .collect();
    let need = spec.k_shot - chosen.len();
    if rest.len() < need {
        return None;
    }
    chosen.extend(rest.choose_multiple(rng, need));

    let ids = chosen
        .iter()
        .map(|&i| manifest.records[i].image_id.clone())
        .collect();
    Some((class_list, ids, manifest.records[query].image_id.clone()))
}

/// Reads features and masks for one sampled episode.
///
/// Labels outside the episode's class list become background in every mask.
pub fn load_episode(manifest: &DatasetManifest, desc: &EpisodeDescriptor) -> Result<Episode> {
    let load = |id: &str| -> Result<_> {
        let rec = manifest.record(id)?;
        let stack = read_feature_file(manifest.resolve(&rec.feature_path), rec.image_size)?;
        let mask = read_mask(manifest.resolve(&rec.mask_path), rec.image_size)?
            .restrict_to(&desc.class_list);
        Ok((stack, mask))
    };
    let supports = desc
        .support_ids
        .iter()
        .map(|id| load(id))
        .collect::<Result<Vec<_>>>()?;
    let (query, gt) = load(&desc.query_id)?;
    validate_episode(Episode {
        supports,
        query,
        query_gt: Some(gt),
        class_list: desc.class_list.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(classes: &[&[u8]]) -> DatasetManifest {
        let records = classes
            .iter()
            .enumerate()
            .map(|(i, cs)| ManifestRecord {
                image_id: format!("img{i}"),
                feature_path: format!("f{i}.fssd").into(),
                mask_path: format!("m{i}.png").into(),
                classes_present: cs.to_vec(),
                image_size: (8, 8),
            })
            .collect();
        DatasetManifest::new(records, "/tmp").unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_well_formed() {
        let m = manifest(&[
            &[0, 1, 2],
            &[0, 2, 3],
            &[1, 3],
            &[0, 1],
            &[2, 3],
            &[0, 1, 2, 3],
        ]);
        let spec = EpisodeSpec {
            n_way: 2,
            k_shot: 3,
            seed: 7,
            episodes: 25,
        };
        let a = sample_episodes(&m, &spec).unwrap();
        assert_eq!(a, sample_episodes(&m, &spec).unwrap());
        for ep in &a {
            assert_eq!(ep.support_ids.len(), 3);
            assert_eq!(ep.class_list.len(), 2);
            assert!(!ep.support_ids.contains(&ep.query_id));
            let uniq: HashSet<_> = ep.support_ids.iter().collect();
            assert_eq!(uniq.len(), 3);
            for c in &ep.class_list {
                assert!(ep.support_ids.iter().any(|id| m
                    .record(id)
                    .unwrap()
                    .classes_present
                    .contains(c)));
            }
            let q = m.record(&ep.query_id).unwrap();
            assert!(q.has_any(&ep.class_list));
        }
    }

    #[test]
    fn too_many_ways_is_infeasible() {
        let m = manifest(&[&[0, 1], &[0, 2], &[1, 2]]);
        let spec = EpisodeSpec {
            n_way: 3,
            k_shot: 1,
            seed: 0,
            episodes: 1,
        };
        let err = sample_episodes(&m, &spec).unwrap_err();
        assert!(err.to_string().contains("cannot satisfy episode spec"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut m = manifest(&[&[1], &[2]]);
        m.records[1].image_id = "img0".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn seeds_split_apart() {
        assert_ne!(split_seed(1, 0), split_seed(1, 1));
        assert_ne!(split_seed(1, 0), split_seed(2, 0));
    }
}
