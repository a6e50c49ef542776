use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{read_image, resize_image};
use super::{derive_seed, view_dir};
use crate::error::{Error, Result};
use crate::geometry::{io, resample_to};
use crate::model::train::TrainSample;
use crate::model::{ModelConfig, Task};

pub const MODELNET40: [&str; 40] = [
    "airplane", "bathtub", "bed", "bench", "bookshelf", "bottle", "bowl", "car", "chair", "cone", "cup", "curtain",
    "desk", "door", "dresser", "flower_pot", "glass_box", "guitar", "keyboard", "lamp", "laptop", "mantel", "monitor",
    "night_stand", "person", "piano", "plant", "radio", "range_hood", "sink", "sofa", "stairs", "stool", "table",
    "tent", "toilet", "tv_stand", "vase", "wardrobe", "xbox",
];

/// Categories held out of zero-shot training.
pub const UNSEEN_CATEGORIES: [&str; 10] = [
    "bowl", "cup", "curtain", "keyboard", "radio", "sink", "stairs", "stool", "tent", "wardrobe",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Seen,
    Unseen,
}

/// One (model, viewpoint) sample. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub model_id: String,
    pub category: String,
    pub viewpoint_id: usize,
    pub complete: PathBuf,
    pub partial: PathBuf,
    pub partial_noisy: PathBuf,
    pub image: PathBuf,
    /// Cloud fed to the network for the active task.
    pub input: PathBuf,
    pub partial_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub config_hash: String,
    pub points: usize,
    pub viewpoints: usize,
    pub image_side: usize,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn pair_count(&self) -> usize {
        self.records.len()
    }

    pub fn model_ids(&self) -> BTreeSet<(&str, &str)> {
        self.records
            .iter()
            .map(|r| (r.category.as_str(), r.model_id.as_str()))
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }
}

/// Model-level partition: within each category the lexicographically first
/// `ceil(n / 2)` model ids train, the rest test.
pub fn model_partition(records: &[SampleRecord]) -> BTreeMap<(String, String), Split> {
    let mut per_cat: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        per_cat.entry(&r.category).or_default().insert(&r.model_id);
    }
    let mut out = BTreeMap::new();
    for (cat, ids) in per_cat {
        let n_train = ids.len().div_ceil(2);
        for (i, id) in ids.into_iter().enumerate() {
            let s = if i < n_train { Split::Train } else { Split::Test };
            out.insert((cat.to_string(), id.to_string()), s);
        }
    }
    out
}

/// Tags every record for `task`. Zero-shot drops unseen-category training
/// records and tags test records seen/unseen.
pub fn make_splits(manifest: &Manifest, task: Task, unseen: &[String]) -> Result<Manifest> {
    let known: BTreeSet<&str> = MODELNET40
        .iter()
        .copied()
        .chain(manifest.categories.iter().map(String::as_str))
        .collect();
    if let Some(bad) = unseen.iter().find(|c| !known.contains(c.as_str())) {
        return Err(Error::Config(format!("unknown category `{bad}` in unseen list")));
    }
    let unseen: BTreeSet<&str> = unseen.iter().map(String::as_str).collect();
    let part = model_partition(&manifest.records);
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let split = part[&(r.category.clone(), r.model_id.clone())];
        let mut r = r.clone();
        r.split = Some(split);
        r.group = None;
        r.input = r.partial.clone();
        match task {
            Task::Supervised => {}
            Task::Denoising => r.input = r.partial_noisy.clone(),
            Task::Zeroshot => {
                let is_unseen = unseen.contains(r.category.as_str());
                if split == Split::Train && is_unseen {
                    continue;
                }
                if split == Split::Test {
                    r.group = Some(if is_unseen { Group::Unseen } else { Group::Seen });
                }
            }
        }
        records.push(r);
    }
    Ok(Manifest {
        task: Some(task),
        records,
        ..manifest.clone()
    })
}

/// A partial cloud paired with an image of the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<'m> {
    pub record: &'m SampleRecord,
    pub image: PathBuf,
    pub image_viewpoint: usize,
}

/// Endless, seeded walk over a split; each partial gets an image drawn
/// uniformly from its model's viewpoints.
#[derive(Debug, Clone)]
pub struct PairSampler<'m> {
    records: Vec<&'m SampleRecord>,
    viewpoints: usize,
    rng: ChaCha8Rng,
    pos: usize,
}

pub fn pair_sampler(manifest: &Manifest, split: Split, seed: u64) -> Result<PairSampler<'_>> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(Error::Argument(format!("split {split:?} is empty")));
    }
    Ok(PairSampler {
        records,
        viewpoints: manifest.viewpoints,
        rng: ChaCha8Rng::seed_from_u64(seed),
        pos: 0,
    })
}

impl<'m> PairSampler<'m> {
    pub fn split_len(&self) -> usize {
        self.records.len()
    }
}

impl<'m> Iterator for PairSampler<'m> {
    type Item = Pair<'m>;

    fn next(&mut self) -> Option<Pair<'m>> {
        let record = self.records[self.pos % self.records.len()];
        self.pos += 1;
        let k = self.rng.gen_range(0..self.viewpoints);
        Some(Pair {
            record,
            image: view_dir(&record.category, &record.model_id, k).join("image.pgm"),
            image_viewpoint: k,
        })
    }
}

/// Loads one pass over `split` as network-ready samples: inputs and targets
/// brought to `cfg.n` points, images resized to `cfg.image_side`.
pub fn load_samples(root: &Path, manifest: &Manifest, split: Split, cfg: &ModelConfig, seed: u64) -> Result<Vec<TrainSample>> {
    let sampler = pair_sampler(manifest, split, seed)?;
    let n = sampler.split_len();
    let pairs: Vec<Pair> = sampler.take(n).collect();
    pairs
        .par_iter()
        .map(|pair| {
            let r = pair.record;
            let s = derive_seed(seed, &[&r.category, &r.model_id, &r.viewpoint_id.to_string()]);
            let input = io::read_cloud_ply(&root.join(&r.input))?;
            let target = io::read_cloud_ply(&root.join(&r.complete))?;
            let image = resize_image(&read_image(&root.join(&pair.image))?, cfg.image_side)?;
            Ok(TrainSample {
                input: resample_to(&input, cfg.n, s)?.points,
                image,
                target: resample_to(&target, cfg.n, s)?.points,
                category: r.category.clone(),
            })
        })
        .collect()
}
