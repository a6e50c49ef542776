//! Benchmark synthesis: complete, partial and noisy clouds plus depth images
//! for every model under a fixed set of viewpoints.
//!
//! Dataset tree:
//!
//! ```text
//! root/manifest.json
//! root/report.json
//! root/<category>/<model_id>/complete.ply
//! root/<category>/<model_id>/vp_<k>/{partial.ply, partial_noisy.ply, image.pgm}
//! ```

pub mod fixtures;
pub mod manifest;
pub mod render;
pub mod viewpoints;

pub use manifest::{
    load_samples, make_splits, model_partition, pair_sampler, Group, Manifest, Pair, PairSampler, SampleRecord, Split, MODELNET40,
    UNSEEN_CATEGORIES,
};
pub use render::{read_image, render_depth_image, resize_image, write_image};
pub use viewpoints::{make_viewpoints, Viewpoint};

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    add_gaussian_noise, fps, hidden_point_removal, io, norm, poisson_disk_sample, scale, CloudMeta, HprConfig,
    PointCloud, SeedRule, TriMesh,
};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub dataset: String,
    pub points: usize,
    pub viewpoints: usize,
    pub image_side: usize,
    /// Noise standard deviation as a fraction of the partial's bbox diagonal.
    pub noise_sigma: f64,
    /// Camera distance from the origin for rendering and visibility.
    pub view_distance: f64,
    pub hpr: HprConfig,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            dataset: "ModelNet-MPC".into(),
            points: 2048,
            viewpoints: 32,
            image_side: 224,
            noise_sigma: 0.01,
            view_distance: 4.0,
            hpr: HprConfig::default(),
            min_ratio: 0.10,
            max_ratio: 0.40,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.image_side == 0 || self.viewpoints < 2 {
            return Err(Error::Config("points, image_side must be positive and viewpoints >= 2".into()));
        }
        if !(0.0 < self.min_ratio && self.min_ratio <= self.max_ratio && self.max_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "ratio band [{}, {}] must satisfy 0 < min <= max <= 1",
                self.min_ratio, self.max_ratio
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.view_distance > 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0 and view_distance > 0".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Smallest and largest admissible partial sizes.
    pub fn ratio_bounds(&self) -> (usize, usize) {
        let n = self.points as f64;
        let lo = (self.min_ratio * n).ceil() as usize;
        let hi = ((self.max_ratio * n).floor() as usize).max(lo);
        (lo, hi)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable per-purpose seed: the first 8 bytes of SHA-256 over the base seed
/// and the labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for l in labels {
        h.update([0]);
        h.update(l.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Relative directory of one model.
pub fn model_dir(category: &str, model_id: &str) -> PathBuf {
    Path::new(category).join(model_id)
}

pub fn view_dir(category: &str, model_id: &str, viewpoint: usize) -> PathBuf {
    model_dir(category, model_id).join(format!("vp_{viewpoint}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSource {
    pub model_id: String,
    pub category: String,
    pub path: PathBuf,
}

/// Meshes under a ModelNet-style tree: `dir/<category>/**/<model>.{off,ply}`,
/// sorted by category then model id.
pub fn scan_mesh_dir(dir: &Path) -> Result<Vec<MeshSource>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let cat_path = entry.path();
        if !cat_path.is_dir() {
            continue;
        }
        let category = entry.file_name().to_string_lossy().into_owned();
        collect_meshes(&cat_path, &category, &mut out)?;
    }
    out.sort_by(|a, b| (&a.category, &a.model_id).cmp(&(&b.category, &b.model_id)));
    if let Some(w) = out.windows(2).find(|w| w[0].model_id == w[1].model_id && w[0].category == w[1].category) {
        return Err(Error::Data(format!("duplicate model id `{}` in `{}`", w[0].model_id, w[0].category)));
    }
    Ok(out)
}

fn collect_meshes(dir: &Path, category: &str, out: &mut Vec<MeshSource>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_meshes(&path, category, out)?;
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("off" | "ply")) {
            let model_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push(MeshSource {
                model_id,
                category: category.to_string(),
                path,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub viewpoint_id: usize,
    /// Fraction of the complete cloud visible before band enforcement.
    pub visible_ratio: f64,
    pub partial: PointCloud,
    pub noisy: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSamples {
    pub model_id: String,
    pub category: String,
    pub complete: PointCloud,
    /// Views that passed the visibility floor.
    pub views: Vec<ViewSample>,
    /// One depth image per viewpoint, including excluded ones.
    pub images: Vec<Tensor>,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionKind {
    /// Mesh could not be read or sampled; the whole model is dropped.
    Mesh,
    /// Too few points visible from one viewpoint.
    LowVisibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub kind: ExclusionKind,
    pub model_id: String,
    pub category: String,
    pub viewpoint_id: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub config_hash: String,
    pub models: usize,
    pub models_ok: usize,
    pub records: usize,
    pub exclusions: Vec<Exclusion>,
}

/// Samples a complete cloud, per-view partials, noisy partials and images
/// for one mesh. The mesh is normalized first.
pub fn synthesize_model(
    mesh: &TriMesh,
    model_id: &str,
    category: &str,
    viewpoints: &[Viewpoint],
    cfg: &GenConfig,
) -> Result<ModelSamples> {
    let mesh = mesh.normalized()?;
    let meta = CloudMeta {
        model_id: model_id.to_string(),
        category: category.to_string(),
        viewpoint_id: None,
        noisy: false,
    };
    let pds_seed = derive_seed(cfg.seed, &[category, model_id, "pds"]);
    let mut complete = poisson_disk_sample(&mesh, cfg.points, pds_seed)?;
    complete.meta = meta.clone();
    let max_r = complete.points.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    let distance = cfg.view_distance.max(1.25 * max_r);
    let (lo, hi) = cfg.ratio_bounds();

    let per_view: Vec<Result<(Tensor, std::result::Result<ViewSample, Exclusion>)>> = viewpoints
        .par_iter()
        .map(|vp| {
            let image = render_depth_image(&mesh, vp, distance, cfg.image_side)?;
            let eye = scale(vp.position, distance);
            let visible = hidden_point_removal(&complete.points, eye, &cfg.hpr)?.visible;
            let ratio = visible.len() as f64 / cfg.points as f64;
            if visible.len() < lo {
                return Ok((
                    image,
                    Err(Exclusion {
                        kind: ExclusionKind::LowVisibility,
                        model_id: model_id.to_string(),
                        category: category.to_string(),
                        viewpoint_id: Some(vp.id),
                        reason: format!("{} of {} points visible", visible.len(), cfg.points),
                    }),
                ));
            }
            let vp_label = vp.id.to_string();
            let mut keep = visible;
            if keep.len() > hi {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[category, model_id, &vp_label, "ratio"]));
                let target = (rng.gen_range(cfg.min_ratio..=cfg.max_ratio) * cfg.points as f64).round() as usize;
                let target = target.clamp(lo, hi);
                let sub: Vec<_> = keep.iter().map(|&i| complete.points[i]).collect();
                let mut picked: Vec<usize> = fps(&sub, target, SeedRule::FirstIndex)?.into_iter().map(|j| keep[j]).collect();
                picked.sort_unstable();
                keep = picked;
            }
            let mut partial = complete.select(&keep);
            partial.meta.viewpoint_id = Some(vp.id);
            let noise_seed = derive_seed(cfg.seed, &[category, model_id, &vp_label, "noise"]);
            let noisy = add_gaussian_noise(&partial, cfg.noise_sigma, noise_seed)?;
            Ok((
                image,
                Ok(ViewSample {
                    viewpoint_id: vp.id,
                    visible_ratio: ratio,
                    partial,
                    noisy,
                }),
            ))
        })
        .collect();

    let mut out = ModelSamples {
        model_id: model_id.to_string(),
        category: category.to_string(),
        complete,
        views: Vec::new(),
        images: Vec::new(),
        excluded: Vec::new(),
    };
    for r in per_view {
        let (image, view) = r?;
        out.images.push(image);
        match view {
            Ok(v) => out.views.push(v),
            Err(e) => out.excluded.push(e),
        }
    }
    Ok(out)
}

/// Writes one model's files under `root` and returns its records.
pub fn write_model(root: &Path, samples: &ModelSamples) -> Result<Vec<SampleRecord>> {
    let (cat, id) = (samples.category.as_str(), samples.model_id.as_str());
    let mdir = model_dir(cat, id);
    let abs = root.join(&mdir);
    fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
    let complete = mdir.join("complete.ply");
    io::write_cloud_ply(&root.join(&complete), &samples.complete)?;
    for (k, img) in samples.images.iter().enumerate() {
        let vdir = root.join(view_dir(cat, id, k));
        fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        write_image(&vdir.join("image.pgm"), img)?;
    }
    let mut records = Vec::with_capacity(samples.views.len());
    for v in &samples.views {
        let vdir = view_dir(cat, id, v.viewpoint_id);
        let partial = vdir.join("partial.ply");
        let noisy = vdir.join("partial_noisy.ply");
        io::write_cloud_ply(&root.join(&partial), &v.partial)?;
        io::write_cloud_ply(&root.join(&noisy), &v.noisy)?;
        records.push(SampleRecord {
            model_id: id.to_string(),
            category: cat.to_string(),
            viewpoint_id: v.viewpoint_id,
            complete: complete.clone(),
            partial: partial.clone(),
            partial_noisy: noisy,
            image: vdir.join("image.pgm"),
            input: partial,
            partial_points: v.partial.len(),
            split: None,
            group: None,
        });
    }
    Ok(records)
}

/// Full pipeline over `sources`. Unreadable or degenerate meshes are
/// reported and skipped. Writes the manifest and report into `root`.
pub fn generate(sources: &[MeshSource], root: &Path, cfg: &GenConfig) -> Result<(Manifest, GenerationReport)> {
    cfg.validate()?;
    let vps = make_viewpoints(cfg.viewpoints)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let results: Vec<std::result::Result<(Vec<SampleRecord>, Vec<Exclusion>), Exclusion>> = sources
        .par_iter()
        .map(|src| {
            let fail = |e: Error| Exclusion {
                kind: ExclusionKind::Mesh,
                model_id: src.model_id.clone(),
                category: src.category.clone(),
                viewpoint_id: None,
                reason: e.to_string(),
            };
            let mesh = io::read_mesh(&src.path).map_err(fail)?;
            let samples = synthesize_model(&mesh, &src.model_id, &src.category, &vps, cfg).map_err(fail)?;
            let records = write_model(root, &samples).map_err(fail)?;
            Ok((records, samples.excluded))
        })
        .collect();

    let mut report = GenerationReport {
        config_hash: cfg.hash(),
        models: sources.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok((recs, excl)) => {
                report.models_ok += 1;
                records.extend(recs);
                report.exclusions.extend(excl);
            }
            Err(e) => report.exclusions.push(e),
        }
    }
    report.records = records.len();
    let mut categories: Vec<String> = sources.iter().map(|s| s.category.clone()).collect();
    categories.sort();
    categories.dedup();
    let manifest = Manifest {
        dataset: cfg.dataset.clone(),
        config_hash: report.config_hash.clone(),
        points: cfg.points,
        viewpoints: cfg.viewpoints,
        image_side: cfg.image_side,
        categories,
        task: None,
        records,
    };
    manifest.write(&root.join(MANIFEST_FILE))?;
    let path = root.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((manifest, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::{icosphere, uv_box};

    fn small_cfg() -> GenConfig {
        GenConfig {
            points: 256,
            viewpoints: 8,
            image_side: 16,
            ..Default::default()
        }
    }

    #[test]
    fn seeds_are_stable_and_label_sensitive() {
        assert_eq!(derive_seed(1, &["a", "b"]), derive_seed(1, &["a", "b"]));
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
    }

    #[test]
    fn band_bounds_for_default_size() {
        assert_eq!(GenConfig::default().ratio_bounds(), (205, 819));
        let bad = GenConfig {
            min_ratio: 0.5,
            max_ratio: 0.4,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sphere_views_are_clamped_into_band() {
        let cfg = small_cfg();
        let vps = make_viewpoints(cfg.viewpoints).unwrap();
        let s = synthesize_model(&icosphere(3), "s", "bowl", &vps, &cfg).unwrap();
        assert_eq!(s.complete.len(), 256);
        assert_eq!(s.images.len(), 8);
        assert_eq!(s.views.len(), 8);
        let (lo, hi) = cfg.ratio_bounds();
        for v in &s.views {
            assert!(v.visible_ratio > cfg.max_ratio, "{}", v.visible_ratio);
            assert!((lo..=hi).contains(&v.partial.len()));
            assert_eq!(v.noisy.len(), v.partial.len());
            assert!(v.noisy.meta.noisy);
            for p in &v.partial.points {
                assert!(s.complete.points.contains(p));
            }
        }
    }

    #[test]
    fn written_tree_matches_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let vps = make_viewpoints(cfg.viewpoints).unwrap();
        let s = synthesize_model(&uv_box([0.5, 0.3, 0.2]), "b1", "desk", &vps, &cfg).unwrap();
        let recs = write_model(dir.path(), &s).unwrap();
        assert_eq!(recs.len() + s.excluded.len(), 8);
        for r in &recs {
            let p = io::read_cloud_ply(&dir.path().join(&r.partial)).unwrap();
            assert_eq!(p.len(), r.partial_points);
            let img = read_image(&dir.path().join(&r.image)).unwrap();
            assert_eq!(img.shape(), &[16, 16, 3]);
        }
    }
}
