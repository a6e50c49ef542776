//! Training loop, checkpoints and loss curves.
//!
//! Each sample of a batch is differentiated on its own tape (in parallel);
//! gradients, losses and batch-norm statistics are then reduced in sample
//! order, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, LossMode};
use super::nn::{BnStat, Ctx, ParamStore};
use super::optim::{Adam, LrSchedule};
use super::DuInNet;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::{read_archive, write_archive, Precision, Tape, Tensor};

/// One training example: network input (already `N` points), image and target.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Vec<Point3>,
    pub image: Tensor,
    pub target: Vec<Point3>,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub mode: LossMode,
    pub precision: Precision,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Flat-rate desk-scale run.
    pub fn mini(steps: usize) -> Self {
        Self {
            steps,
            batch_size: 8,
            schedule: LrSchedule::constant(1e-3),
            mode: LossMode::Standard,
            precision: Precision::F32,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// Full-scale schedule: 1e-4 decayed by 0.1 at epochs 25 and 75.
    pub fn paper(steps: usize) -> Self {
        Self {
            steps,
            batch_size: 8,
            schedule: LrSchedule {
                base: 1e-4,
                milestones: vec![25, 75],
                factor: 0.1,
            },
            mode: LossMode::Standard,
            precision: Precision::F32,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

struct SampleGrad {
    loss: f64,
    grads: BTreeMap<String, Tensor>,
    stats: Vec<BnStat>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.dnt";
pub const CURVE_FILE: &str = "loss.tsv";
const STEP_NAME: &str = "train.step";

pub struct Trainer {
    pub model: DuInNet,
    pub store: ParamStore,
    pub adam: Adam,
    /// Completed steps.
    pub step: usize,
    /// (step, mean batch loss), steps counted from 1.
    pub curve: Vec<(usize, f64)>,
}

fn sample_grad(model: &DuInNet, store: &ParamStore, s: &TrainSample, mode: LossMode, precision: Precision) -> Result<SampleGrad> {
    let tape = Tape::new(precision);
    let cx = Ctx::train(&tape, store);
    let out = model.forward(&cx, &s.input, &s.image)?;
    let gt = tape.constant(Tensor::new([s.target.len(), 3], s.target.iter().flatten().copied().collect())?);
    let l = loss(out.gen1, out.gen2, gt, mode)?;
    let value = l.value().data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value}")));
    }
    let g = tape.backward(l)?;
    let grads = cx
        .bound()
        .into_iter()
        .filter_map(|(name, v)| g.get(v).map(|t| (name, t.clone())))
        .collect();
    Ok(SampleGrad {
        loss: value,
        grads,
        stats: cx.take_stats(),
    })
}

impl Trainer {
    pub fn new(model: DuInNet, seed: u64) -> Self {
        let store = model.init(seed);
        Self {
            model,
            store,
            adam: Adam::default(),
            step: 0,
            curve: Vec::new(),
        }
    }

    /// Mean loss of `batch` without updating anything (training-mode norms).
    pub fn batch_loss(&self, batch: &[&TrainSample], mode: LossMode, precision: Precision) -> Result<f64> {
        let losses: Vec<f64> = batch
            .par_iter()
            .map(|s| {
                let tape = Tape::new(precision);
                let cx = Ctx::train(&tape, &self.store);
                let out = self.model.forward(&cx, &s.input, &s.image)?;
                let gt = tape.constant(Tensor::new([s.target.len(), 3], s.target.iter().flatten().copied().collect())?);
                Ok(loss(out.gen1, out.gen2, gt, mode)?.value().data()[0])
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// One optimizer step on `batch`; returns the mean loss before the update.
    pub fn train_step(&mut self, batch: &[&TrainSample], lr: f64, mode: LossMode, precision: Precision) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty training batch".into()));
        }
        let (model, store) = (&self.model, &self.store);
        let per: Vec<SampleGrad> = batch
            .par_iter()
            .map(|s| sample_grad(model, store, s, mode, precision))
            .collect::<Result<_>>()?;
        let inv = 1.0 / per.len() as f64;
        let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for p in &per {
            loss_sum += p.loss;
            for (name, g) in &p.grads {
                match total.get_mut(name) {
                    Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b * inv),
                    None => {
                        total.insert(name.clone(), g.map(|x| x * inv));
                    }
                }
            }
        }
        self.adam.step(&mut self.store, &total, lr)?;
        for p in &per {
            self.store.update_running(&p.stats);
        }
        self.step += 1;
        let mean = loss_sum * inv;
        self.curve.push((self.step, mean));
        Ok(mean)
    }

    /// Runs until `cfg.steps` total steps. Batches walk a per-epoch seeded
    /// shuffle of `data`; the learning rate follows the epoch schedule.
    pub fn run(&mut self, data: &[TrainSample], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Argument("no training samples".into()));
        }
        let bs = cfg.batch_size.clamp(1, data.len());
        let per_epoch = data.len().div_ceil(bs);
        let mut order_epoch = usize::MAX;
        let mut order: Vec<usize> = Vec::new();
        while self.step < cfg.steps {
            let epoch = self.step / per_epoch;
            if epoch != order_epoch {
                order = (0..data.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9)));
                order_epoch = epoch;
            }
            let b = self.step % per_epoch;
            let batch: Vec<&TrainSample> = order[b * bs..((b + 1) * bs).min(data.len())]
                .iter()
                .map(|&i| &data[i])
                .collect();
            self.train_step(&batch, cfg.schedule.at(epoch), cfg.mode, cfg.precision)?;
            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && self.step % cfg.checkpoint_every == 0 {
                    self.save(dir)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save(dir)?;
        }
        Ok(())
    }

    /// Writes the checkpoint archive and the loss curve into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = self.store.to_entries();
        entries.extend(self.adam.to_entries());
        entries.insert(STEP_NAME.to_string(), Tensor::scalar(self.step as f64));
        write_archive(&dir.join(CHECKPOINT_FILE), &entries)?;
        let curve = dir.join(CURVE_FILE);
        fs::write(&curve, format_curve(&self.curve)).map_err(|e| Error::io(&curve, e))
    }

    /// Restores parameters, optimizer state, step and curve from `dir`.
    pub fn resume(model: DuInNet, dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        let entries = read_archive(&path)?;
        let store = load_store(&model, &entries)?;
        let step = entries.get(STEP_NAME).map(|t| t.data()[0] as usize).unwrap_or(0);
        let curve_path = dir.join(CURVE_FILE);
        let curve = match fs::read_to_string(&curve_path) {
            Ok(text) => parse_curve(&text, &curve_path)?
                .into_iter()
                .filter(|&(s, _)| s <= step)
                .collect(),
            Err(_) => Vec::new(),
        };
        Ok(Self {
            model,
            store,
            adam: Adam::from_entries(&entries),
            step,
            curve,
        })
    }
}

/// Model parameters from archived entries; extra (optimizer) entries are ignored.
pub fn load_store(model: &DuInNet, entries: &BTreeMap<String, Tensor>) -> Result<ParamStore> {
    ParamStore::from_entries(&model.specs(), entries)
}

pub fn load_checkpoint(model: &DuInNet, path: &Path) -> Result<ParamStore> {
    load_store(model, &read_archive(path)?)
}

pub fn format_curve(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("step\tloss\n");
    for (step, l) in curve {
        s.push_str(&format!("{step}\t{l:.9e}\n"));
    }
    s
}

pub fn parse_curve(text: &str, path: &Path) -> Result<Vec<(usize, f64)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split('\t');
            let s = it.next().and_then(|x| x.parse().ok());
            let v = it.next().and_then(|x| x.parse().ok());
            s.zip(v).ok_or_else(|| Error::parse(path, format!("bad loss curve row `{l}`")))
        })
        .collect()
}
