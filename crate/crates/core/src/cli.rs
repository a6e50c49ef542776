//! Command-line front end: `gen`, `train`, `eval`, `ablate`, `gradcheck`.
//!
//! Settings resolve as flag > `DUINNET_*` environment variable > TOML file
//! given by `--config` > built-in default.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::datasetgen::{
    self, load_samples, make_splits, scan_mesh_dir, GenConfig, Manifest, Split, MANIFEST_FILE, UNSEEN_CATEGORIES,
};
use crate::error::{Error, Result};
use crate::geometry::{CloudMeta, Point3, PointCloud};
use crate::metrics::{evaluate_batch, BatchReport, MetricConfig, MetricReport};
use crate::model::gradsuite;
use crate::model::train::{load_checkpoint, TrainConfig, TrainSample, Trainer, CHECKPOINT_FILE};
use crate::model::{Ctx, DuInNet, LossMode, ModelConfig, ParamStore, Profile, Task};
use crate::tensor::{Precision, Tape};

pub const RUN_FILE: &str = "run.json";
pub const METRICS_TSV: &str = "metrics.tsv";
pub const METRICS_JSON: &str = "metrics.json";
pub const ABLATION_TSV: &str = "ablation.tsv";
pub const ABLATION_JSON: &str = "ablation.json";

/// Block partitions (image, point) swept by `ablate` by default.
pub const DEFAULT_PARTITIONS: [(usize, usize); 5] = [(0, 16), (4, 12), (8, 8), (12, 4), (16, 0)];

#[derive(Debug, Parser)]
#[command(name = "duinnet", version, about = "Multimodal point cloud completion toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML settings file.
    #[arg(long, global = true, env = "DUINNET_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "DUINNET_SEED")]
    pub seed: Option<u64>,
    /// paper or mini.
    #[arg(long, global = true, env = "DUINNET_PROFILE", value_parser = parse_profile)]
    pub profile: Option<Profile>,
    /// supervised, denoising or zeroshot.
    #[arg(long, global = true, env = "DUINNET_TASK", value_parser = parse_task)]
    pub task: Option<Task>,
    /// Output directory (dataset root for `gen`).
    #[arg(long, global = true, env = "DUINNET_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true, env = "DUINNET_THREADS")]
    pub threads: Option<usize>,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Synthesize a dataset from a ModelNet-style mesh tree.
    Gen {
        /// Directory of `<category>/**/<model>.off` meshes.
        #[arg(long, env = "DUINNET_MESHES")]
        meshes: Option<PathBuf>,
    },
    /// Train on a generated dataset (or the built-in shapes).
    Train {
        #[arg(long, env = "DUINNET_DATASET")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Train on the eight procedural shapes instead of a dataset.
        #[arg(long)]
        fixture: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long, env = "DUINNET_DATASET")]
        dataset: Option<PathBuf>,
        /// Training output directory or checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score ground truth against itself (harness self-check).
        #[arg(long)]
        ground_truth: bool,
    },
    /// Train and evaluate a sweep of image/point block partitions.
    Ablate {
        #[arg(long, env = "DUINNET_DATASET")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// `N_img:N_pc`, repeatable.
        #[arg(long = "partition")]
        partitions: Vec<String>,
    },
    /// Finite-difference gradient suite.
    Gradcheck {
        /// Entries checked per parameter tensor in the full-loss checks.
        #[arg(long, default_value_t = 2)]
        entries: usize,
        /// Only primitives and modules.
        #[arg(long)]
        skip_full: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub milestones: Option<Vec<usize>>,
    pub factor: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub partitions: Option<Vec<(usize, usize)>>,
    pub steps: Option<usize>,
}

/// Contents of the `--config` file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub task: Option<Task>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub meshes: Option<PathBuf>,
    pub threads: Option<usize>,
    pub unseen: Option<Vec<String>>,
    pub gen: Option<GenConfig>,
    pub model: Option<ModelConfig>,
    pub train: TrainSection,
    pub eval: Option<MetricConfig>,
    pub ablate: AblateSection,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub task: Task,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub unseen: Vec<String>,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: MetricConfig,
}

impl RunConfig {
    pub fn resolve(g: &GlobalArgs) -> Result<(Self, FileConfig)> {
        let file = match &g.config {
            Some(p) => FileConfig::read(p)?,
            None => FileConfig::default(),
        };
        let seed = g.seed.or(file.seed).unwrap_or(0);
        let profile = g.profile.or(file.profile).unwrap_or_default();
        let task = g.task.or(file.task).unwrap_or_default();
        let model = match file.model {
            Some(m) => m,
            None => ModelConfig::for_task(profile, task),
        };
        model.validate()?;
        let mut gen = file.gen.clone().unwrap_or_default();
        gen.seed = seed;
        let t = &file.train;
        let mut train = match profile {
            Profile::Mini => TrainConfig::mini(500),
            Profile::Paper => TrainConfig::paper(0),
        };
        train.seed = seed;
        train.mode = if task == Task::Denoising { LossMode::Denoising } else { LossMode::Standard };
        if let Some(s) = t.steps {
            train.steps = s;
        }
        if let Some(b) = t.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = t.lr {
            train.schedule.base = lr;
        }
        if let Some(m) = &t.milestones {
            train.schedule.milestones = m.clone();
        }
        if let Some(f) = t.factor {
            train.schedule.factor = f;
        }
        if let Some(c) = t.checkpoint_every {
            train.checkpoint_every = c;
        }
        if let Some(p) = t.precision {
            train.precision = p;
        }
        let cfg = Self {
            seed,
            profile,
            task,
            out: g.out.clone().or(file.out.clone()),
            threads: g.threads.or(file.threads),
            unseen: file
                .unseen
                .clone()
                .unwrap_or_else(|| UNSEEN_CATEGORIES.iter().map(|s| s.to_string()).collect()),
            gen,
            model,
            train,
            eval: file.eval.unwrap_or_default(),
        };
        Ok((cfg, file))
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("an output directory is required (--out or DUINNET_OUT)".into()))
    }
}

fn existing_dir(flag: Option<PathBuf>, file: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = flag
        .or(file)
        .ok_or_else(|| Error::Config(format!("--{what} is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} path `{}` does not exist", p.display())));
    }
    Ok(p)
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (cfg, file) = RunConfig::resolve(&cli.global)?;
    if let Some(n) = cfg.threads {
        // a pool may already exist when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Gen { meshes } => {
            let meshes = existing_dir(meshes, file.meshes, "meshes")?;
            cmd_gen(&cfg, &meshes)
        }
        Command::Train {
            dataset,
            steps,
            batch_size,
            resume,
            fixture,
        } => {
            let mut cfg = cfg;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            let dataset = if fixture {
                None
            } else {
                Some(existing_dir(dataset, file.dataset, "dataset")?)
            };
            cmd_train(&cfg, dataset.as_deref(), resume)
        }
        Command::Eval {
            dataset,
            checkpoint,
            ground_truth,
        } => {
            let dataset = existing_dir(dataset, file.dataset, "dataset")?;
            let checkpoint = match (ground_truth, checkpoint) {
                (true, _) => None,
                (false, Some(c)) => Some(existing_dir(Some(c), None, "checkpoint")?),
                (false, None) => {
                    return Err(Error::Config("--checkpoint is required unless --ground-truth is set".into()))
                }
            };
            cmd_eval(&cfg, &dataset, checkpoint.as_deref())
        }
        Command::Ablate {
            dataset,
            steps,
            partitions,
        } => {
            let dataset = existing_dir(dataset, file.dataset, "dataset")?;
            let parts = if partitions.is_empty() {
                file.ablate.partitions.unwrap_or_else(|| DEFAULT_PARTITIONS.to_vec())
            } else {
                partitions.iter().map(|p| parse_partition(p)).collect::<Result<_>>()?
            };
            let steps = steps.or(file.ablate.steps).unwrap_or(cfg.train.steps);
            let base = file.model.unwrap_or_else(|| ablation_base(cfg.profile));
            cmd_ablate(&cfg, &dataset, base, &parts, steps)
        }
        Command::Gradcheck { entries, skip_full } => cmd_gradcheck(&cfg, entries, skip_full),
    }
}

pub fn parse_partition(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("partition `{s}` must look like N_img:N_pc"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Profile dimensions re-blocked into 16 generator blocks so that the
/// sixteen-block partitions apply directly.
pub fn ablation_base(profile: Profile) -> ModelConfig {
    let mut m = ModelConfig::for_profile(profile);
    m.n_blocks = 16;
    m.block_points = m.n / 16;
    m.n_img_blocks = m.n_img_blocks.min(16);
    m
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn cmd_gen(cfg: &RunConfig, meshes: &Path) -> Result<()> {
    let root = cfg.out_dir()?;
    let sources = scan_mesh_dir(meshes)?;
    if sources.is_empty() {
        return Err(Error::Data(format!("no .off or .ply meshes under {}", meshes.display())));
    }
    let (manifest, report) = datasetgen::generate(&sources, root, &cfg.gen)?;
    println!(
        "models\t{}\nmodels_ok\t{}\nrecords\t{}\nexclusions\t{}",
        report.models,
        report.models_ok,
        manifest.pair_count(),
        report.exclusions.len()
    );
    for e in &report.exclusions {
        eprintln!(
            "excluded {}/{}{}: {}",
            e.category,
            e.model_id,
            e.viewpoint_id.map(|v| format!(" vp_{v}")).unwrap_or_default(),
            e.reason
        );
    }
    Ok(())
}

fn task_manifest(cfg: &RunConfig, dataset: &Path) -> Result<Manifest> {
    let manifest = Manifest::read(&dataset.join(MANIFEST_FILE))?;
    make_splits(&manifest, cfg.task, &cfg.unseen)
}

pub fn cmd_train(cfg: &RunConfig, dataset: Option<&Path>, resume: bool) -> Result<()> {
    let out = cfg.out_dir()?;
    let data = match dataset {
        Some(root) => {
            let m = task_manifest(cfg, root)?;
            load_samples(root, &m, Split::Train, &cfg.model, cfg.seed)?
        }
        None => datasetgen::fixtures::overfit_samples(&cfg.model, cfg.seed)?,
    };
    let mut tc = cfg.train.clone();
    if tc.steps == 0 {
        // full schedule: 120 epochs
        tc.steps = 120 * data.len().div_ceil(tc.batch_size.max(1));
    }
    let net = DuInNet::new(cfg.model)?;
    let mut trainer = if resume && out.join(CHECKPOINT_FILE).exists() {
        Trainer::resume(net, out)?
    } else {
        Trainer::new(net, cfg.seed)
    };
    let resolved = RunConfig { train: tc.clone(), ..cfg.clone() };
    write_text(&out.join(RUN_FILE), &to_json(&resolved))?;
    trainer.run(&data, &tc, Some(out))?;
    if let (Some(first), Some(last)) = (trainer.curve.first(), trainer.curve.last()) {
        println!("steps\t{}\nfirst_loss\t{:.6e}\nlast_loss\t{:.6e}", trainer.step, first.1, last.1);
    }
    Ok(())
}

/// Inference on prepared samples with running statistics.
pub fn predict(net: &DuInNet, store: &ParamStore, sample: &TrainSample) -> Result<Vec<Point3>> {
    let tape = Tape::new(Precision::F32);
    let cx = Ctx::eval(&tape, store);
    let out = net.forward(&cx, &sample.input, &sample.image)?;
    Ok(out.gen2.value().data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn cloud(points: Vec<Point3>, category: &str) -> Result<PointCloud> {
    PointCloud::with_meta(
        points,
        CloudMeta {
            category: category.to_string(),
            ..Default::default()
        },
    )
}

/// Machine-readable evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: Task,
    pub samples: usize,
    pub per_category: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_seen: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_unseen: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unseen_categories: Vec<String>,
}

/// Table and summary of a scored batch; zero-shot adds seen/unseen means.
pub fn summarize_eval(report: &BatchReport, task: Task, unseen: &[String]) -> (String, EvalSummary) {
    let mut extra = Vec::new();
    let mut summary = EvalSummary {
        task,
        samples: report.samples.len(),
        per_category: report.per_category.iter().map(|c| (c.category.clone(), c.mean)).collect(),
        mean: report.overall,
        mean_seen: None,
        mean_unseen: None,
        unseen_categories: Vec::new(),
    };
    if task == Task::Zeroshot {
        let seen: Vec<String> = report
            .per_category
            .iter()
            .map(|c| c.category.clone())
            .filter(|c| !unseen.contains(c))
            .collect();
        summary.mean_seen = report.group_mean(&seen);
        summary.mean_unseen = report.group_mean(unseen);
        summary.unseen_categories = unseen.to_vec();
        if let Some(m) = summary.mean_seen {
            extra.push(("Mean(seen)".to_string(), m));
        }
        if let Some(m) = summary.mean_unseen {
            extra.push(("Mean(unseen)".to_string(), m));
        }
    }
    (report.table(&extra), summary)
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(DuInNet, ParamStore)> {
    load_trained(checkpoint, cfg.model)
}

/// Loads a network from a run directory or checkpoint file. Dimensions come
/// from the run's `run.json` when present, otherwise from `fallback`.
pub fn load_trained(checkpoint: &Path, fallback: ModelConfig) -> Result<(DuInNet, ParamStore)> {
    let (dir, file) = if checkpoint.is_dir() {
        (checkpoint.to_path_buf(), checkpoint.join(CHECKPOINT_FILE))
    } else {
        (checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(), checkpoint.to_path_buf())
    };
    let run_file = dir.join(RUN_FILE);
    let model_cfg = match fs::read_to_string(&run_file) {
        Ok(text) => {
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::parse(&run_file, e.to_string()))?
                .model
        }
        Err(_) => fallback,
    };
    let net = DuInNet::new(model_cfg)?;
    let store = load_checkpoint(&net, &file)?;
    Ok((net, store))
}

fn evaluate_samples(net: Option<(&DuInNet, &ParamStore)>, samples: &[TrainSample], metric: &MetricConfig) -> Result<BatchReport> {
    use rayon::prelude::*;
    let preds: Vec<PointCloud> = samples
        .par_iter()
        .map(|s| {
            let pts = match net {
                Some((n, st)) => predict(n, st, s)?,
                None => s.target.clone(),
            };
            cloud(pts, &s.category)
        })
        .collect::<Result<_>>()?;
    let gts: Vec<PointCloud> = samples
        .iter()
        .map(|s| cloud(s.target.clone(), &s.category))
        .collect::<Result<_>>()?;
    evaluate_batch(&preds, &gts, metric)
}

pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let out = cfg.out_dir()?;
    let m = task_manifest(cfg, dataset)?;
    let loaded = checkpoint.map(|c| load_model(cfg, c)).transpose()?;
    let model_cfg = loaded.as_ref().map(|(n, _)| n.cfg).unwrap_or(cfg.model);
    let samples = load_samples(dataset, &m, Split::Test, &model_cfg, cfg.seed)?;
    let report = evaluate_samples(loaded.as_ref().map(|(n, s)| (n, s)), &samples, &cfg.eval)?;
    let (table, summary) = summarize_eval(&report, cfg.task, &cfg.unseen);
    write_text(&out.join(METRICS_TSV), &table)?;
    write_text(&out.join(METRICS_JSON), &to_json(&summary))?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n_img: usize,
    pub n_pc: usize,
    pub task: Task,
    pub metrics: MetricReport,
}

pub const ABLATION_HEADER: &str = "N_img\tN_pc\ttask\tCD-l1(x1e-3)\tCD-l2(x1e-3)\tFS";

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\n",
            r.n_img,
            r.n_pc,
            r.task.name(),
            r.metrics.cd_l1 * 1e3,
            r.metrics.cd_l2 * 1e3,
            r.metrics.fscore
        ));
    }
    s
}

pub fn cmd_ablate(cfg: &RunConfig, dataset: &Path, base: ModelConfig, parts: &[(usize, usize)], steps: usize) -> Result<()> {
    let out = cfg.out_dir()?;
    let models = parts
        .iter()
        .map(|&(i, p)| base.with_partition(i, p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::read(&dataset.join(MANIFEST_FILE))?;
    let mut rows = Vec::new();
    for model in &models {
        for task in Task::ALL {
            let m = make_splits(&manifest, task, &cfg.unseen)?;
            let train = load_samples(dataset, &m, Split::Train, model, cfg.seed)?;
            let test = load_samples(dataset, &m, Split::Test, model, cfg.seed)?;
            let mut tc = cfg.train.clone();
            tc.steps = steps;
            tc.mode = if task == Task::Denoising { LossMode::Denoising } else { LossMode::Standard };
            let mut trainer = Trainer::new(DuInNet::new(*model)?, cfg.seed);
            trainer.run(&train, &tc, None)?;
            let report = evaluate_samples(Some((&trainer.model, &trainer.store)), &test, &cfg.eval)?;
            rows.push(AblationRow {
                n_img: model.n_img_blocks,
                n_pc: model.n_pc_blocks(),
                task,
                metrics: report.overall,
            });
        }
    }
    let table = format_ablation(&rows);
    write_text(&out.join(ABLATION_TSV), &table)?;
    write_text(&out.join(ABLATION_JSON), &to_json(&rows))?;
    print!("{table}");
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig, entries: usize, skip_full: bool) -> Result<()> {
    let mut rows = gradsuite::primitives(cfg.seed)?;
    rows.push(gradsuite::cross_attention(cfg.seed)?);
    rows.push(gradsuite::generator_block(cfg.seed)?);
    if !skip_full {
        rows.push(gradsuite::full_loss(cfg.seed, LossMode::Standard, true, entries)?);
        rows.push(gradsuite::full_loss(cfg.seed, LossMode::Standard, false, entries)?);
    }
    let table = gradsuite::format_rows(&rows);
    if let Some(out) = &cfg.out {
        write_text(&out.join("gradcheck.tsv"), &table)?;
    }
    print!("{table}");
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient checks failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn globals() -> GlobalArgs {
        GlobalArgs {
            config: None,
            seed: None,
            profile: None,
            task: None,
            out: None,
            threads: None,
        }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 7\ntask = \"denoising\"\n[train]\nsteps = 12\n").unwrap();
        let mut g = globals();
        g.config = Some(path);
        let (cfg, _) = RunConfig::resolve(&g).unwrap();
        assert_eq!((cfg.seed, cfg.task, cfg.train.steps), (7, Task::Denoising, 12));
        assert_eq!(cfg.train.mode, LossMode::Denoising);
        assert_eq!(cfg.model.n_img_blocks, 0);
        g.seed = Some(9);
        assert_eq!(RunConfig::resolve(&g).unwrap().0.seed, 9);
        let (d, _) = RunConfig::resolve(&globals()).unwrap();
        assert_eq!((d.seed, d.profile, d.task), (0, Profile::Mini, Task::Supervised));
    }

    #[test]
    fn unknown_file_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "sede = 7\n").unwrap();
        let mut g = globals();
        g.config = Some(path);
        assert!(matches!(RunConfig::resolve(&g), Err(Error::Config(_))));
    }

    #[test]
    fn partitions_parse_and_validate() {
        assert_eq!(parse_partition("4:12").unwrap(), (4, 12));
        assert!(parse_partition("4-12").is_err());
        let base = ablation_base(Profile::Mini);
        for (i, p) in DEFAULT_PARTITIONS {
            assert!(base.with_partition(i, p).is_ok());
            assert!(ModelConfig::paper().with_partition(i, p).is_ok());
        }
        let err = base.with_partition(5, 12).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("sums to 17")), "{err}");
    }

    #[test]
    fn ablation_table_has_one_row_per_partition_and_task() {
        let rows: Vec<AblationRow> = DEFAULT_PARTITIONS
            .iter()
            .flat_map(|&(i, p)| {
                Task::ALL.into_iter().map(move |task| AblationRow {
                    n_img: i,
                    n_pc: p,
                    task,
                    metrics: MetricReport::default(),
                })
            })
            .collect();
        let t = format_ablation(&rows);
        assert_eq!(t.lines().count(), 1 + 15);
        assert!(t.starts_with(ABLATION_HEADER));
    }
}
