use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duinnet::cli::{EvalSummary, METRICS_JSON, METRICS_TSV};
use duinnet::datasetgen::{GenerationReport, Manifest, MANIFEST_FILE, REPORT_FILE};
use duinnet::geometry::io::encode_off;
use duinnet::geometry::shapes::{cone, icosphere, uv_box};
use duinnet::model::train::{parse_curve, CURVE_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_duinnet"));
    for (k, _) in std::env::vars() {
        if k.starts_with("DUINNET_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four meshes in two categories plus one mesh with no area.
fn mesh_tree(dir: &Path) {
    let shapes = [
        ("chair", "chair_0001", icosphere(2)),
        ("chair", "chair_0002", uv_box([0.5, 0.3, 0.2])),
        ("bowl", "bowl_0001", cone(0.5, 1.0, 16)),
        ("bowl", "bowl_0002", uv_box([0.2, 0.4, 0.5])),
    ];
    for (cat, id, mesh) in shapes {
        let d = dir.join(cat);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join(format!("{id}.off")), encode_off(&mesh)).unwrap();
    }
    // three collinear vertices: every face is dropped
    fs::write(dir.join("chair/chair_0003.off"), "OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n").unwrap();
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, "seed = 3\n[gen]\npoints = 256\nviewpoints = 8\nimage_side = 32\n").unwrap();
    p
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn generate(work: &Path, name: &str) -> PathBuf {
    let meshes = work.join("meshes");
    if !meshes.exists() {
        mesh_tree(&meshes);
    }
    let cfg = small_config(work);
    let root = work.join(name);
    let o = run(&["gen", "--meshes", s(&meshes), "--out", s(&root), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    root
}

#[test]
fn gen_reports_exclusions_and_is_reproducible() {
    let work = tempfile::tempdir().unwrap();
    let a = generate(work.path(), "a");
    let b = generate(work.path(), "b");
    let m = Manifest::read(&a.join(MANIFEST_FILE)).unwrap();
    let report: GenerationReport = serde_json::from_str(&fs::read_to_string(a.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report.models, 5);
    assert_eq!(report.models_ok, 4);
    let mesh_failures: Vec<_> = report.exclusions.iter().filter(|e| e.viewpoint_id.is_none()).collect();
    assert_eq!(mesh_failures.len(), 1);
    assert_eq!(mesh_failures[0].model_id, "chair_0003");
    assert_eq!(m.pair_count() + report.exclusions.len() - 1, 4 * 8);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn train_resume_and_eval() {
    let work = tempfile::tempdir().unwrap();
    let root = generate(work.path(), "data");
    let out = work.path().join("run");
    let o = run(&["train", "--dataset", s(&root), "--out", s(&out), "--steps", "2", "--batch-size", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["train", "--dataset", s(&root), "--out", s(&out), "--steps", "4", "--batch-size", "4", "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = parse_curve(&fs::read_to_string(out.join(CURVE_FILE)).unwrap(), &out).unwrap();
    assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

    let ev = work.path().join("eval");
    let o = run(&["eval", "--dataset", s(&root), "--checkpoint", s(&out), "--out", s(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(ev.join(METRICS_TSV)).unwrap();
    assert!(table.starts_with("category\tCD-l1(x1e-3)\tCD-l2(x1e-3)\tFS\n"));
    assert!(table.lines().last().unwrap().starts_with("Mean\t"));
}

#[test]
fn ground_truth_eval_is_perfect_and_zeroshot_lists_unseen() {
    let work = tempfile::tempdir().unwrap();
    let root = generate(work.path(), "data");
    let ev = work.path().join("eval");
    let o = run(&["eval", "--dataset", s(&root), "--ground-truth", "--task", "zeroshot", "--out", s(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(ev.join(METRICS_JSON)).unwrap()).unwrap();
    assert_eq!(summary.unseen_categories.len(), 10);
    for (_, r) in &summary.per_category {
        assert_eq!((r.cd_l1, r.cd_l2, r.fscore), (0.0, 0.0, 1.0));
    }
    assert!(summary.mean_seen.is_some() && summary.mean_unseen.is_some());
    let table = fs::read_to_string(ev.join(METRICS_TSV)).unwrap();
    assert!(table.contains("\nMean(seen)\t0.000\t0.000\t1.000\n"));
    assert!(table.contains("\nMean(unseen)\t0.000\t0.000\t1.000\n"));
}

#[test]
fn train_on_fixture_writes_checkpoint_and_curve() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("fx");
    let o = run(&["train", "--fixture", "--steps", "2", "--out", s(&out), "--task", "denoising"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoint.dnt").exists());
    assert!(fs::read_to_string(out.join(CURVE_FILE)).unwrap().starts_with("step\tloss\n"));
}

#[test]
fn exit_codes() {
    let work = tempfile::tempdir().unwrap();
    let missing = work.path().join("nope");
    // missing dataset path is a configuration error
    let o = run(&["eval", "--dataset", s(&missing), "--ground-truth", "--out", s(work.path())]);
    assert_eq!(code(&o), 2);
    let o = run(&["ablate", "--dataset", s(work.path()), "--partition", "5:12", "--out", s(work.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sums to 17"));
    let o = run(&["train", "--fixture", "--profile", "huge"]);
    assert_eq!(code(&o), 2);
    // a dataset directory without a manifest is a data error
    let o = run(&["eval", "--dataset", s(work.path()), "--ground-truth", "--out", s(work.path())]);
    assert_eq!(code(&o), 3);
    let o = run(&["gradcheck", "--skip-full"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn env_overrides_file_and_flag_overrides_env() {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("c.toml");
    fs::write(&cfg, "task = \"zeroshot\"\n").unwrap();
    let out = work.path().join("o");
    let o = bin()
        .args(["train", "--fixture", "--steps", "1", "--config", s(&cfg), "--out", s(&out)])
        .env("DUINNET_TASK", "denoising")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run_json = fs::read_to_string(out.join("run.json")).unwrap();
    assert!(run_json.contains("\"task\": \"denoising\""));
    let o = bin()
        .args(["train", "--fixture", "--steps", "1", "--task", "supervised", "--out", s(&out)])
        .env("DUINNET_TASK", "denoising")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let run_json = fs::read_to_string(out.join("run.json")).unwrap();
    assert!(run_json.contains("\"task\": \"supervised\""));
}

#[test]
fn ablate_emits_partition_by_task_grid() {
    let work = tempfile::tempdir().unwrap();
    let root = generate(work.path(), "data");
    let out = work.path().join("abl");
    let o = run(&[
        "ablate", "--dataset", s(&root), "--out", s(&out), "--steps", "1", "--partition", "0:16", "--partition", "16:0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = t.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows[0].starts_with("0\t16\tsupervised\t"));
    assert!(rows[5].starts_with("16\t0\tzeroshot\t"));
}
