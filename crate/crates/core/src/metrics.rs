//! Completion metrics: Chamfer distances, precision/recall and F-Score.
//!
//! Nearest-neighbour queries go through a k-d tree; sums are taken in index
//! order so batch results are reproducible regardless of thread count.
//!
//! Distance conventions (see [`ChamferConvention`] and [`FscoreScale`]): by
//! default CD-ℓ1 averages Euclidean nearest-neighbour distances with a ½
//! weight per direction, CD-ℓ2 averages squared distances without halving,
//! and the F-Score threshold is compared against squared distances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, Point3};

/// How the inner norm of the Chamfer formulas is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferConvention {
    /// The inner norm is the squared Euclidean distance: CD-ℓ1 averages
    /// Euclidean distances, CD-ℓ2 averages squared distances.
    #[default]
    SquaredNorm,
    /// The inner norm is the Euclidean distance: CD-ℓ1 averages square
    /// roots of Euclidean distances, CD-ℓ2 averages Euclidean distances.
    EuclideanNorm,
}

/// Scale on which the F-Score threshold is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FscoreScale {
    #[default]
    Squared,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub threshold: f64,
    pub chamfer: ChamferConvention,
    pub fscore_scale: FscoreScale,
}

pub const DEFAULT_THRESHOLD: f64 = 0.001;

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            chamfer: ChamferConvention::default(),
            fscore_scale: FscoreScale::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold_d: f64,
}

/// Squared distance from every point of `from` to its nearest point in `to`.
pub fn nearest_sq_dists(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|&p| tree.nearest(p).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        .collect()
}

fn nonempty(p: &[Point3], q: &[Point3]) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Argument("metrics need two nonempty clouds".into()));
    }
    Ok(())
}

fn mean_of(d: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    d.iter().map(|&x| f(x)).sum::<f64>() / d.len() as f64
}

fn cd_l1_from(pq: &[f64], qp: &[f64], conv: ChamferConvention) -> f64 {
    let f = match conv {
        ChamferConvention::SquaredNorm => |d: f64| d.sqrt(),
        ChamferConvention::EuclideanNorm => |d: f64| d.sqrt().sqrt(),
    };
    0.5 * mean_of(pq, f) + 0.5 * mean_of(qp, f)
}

fn cd_l2_from(pq: &[f64], qp: &[f64], conv: ChamferConvention) -> f64 {
    let f = match conv {
        ChamferConvention::SquaredNorm => |d: f64| d,
        ChamferConvention::EuclideanNorm => |d: f64| d.sqrt(),
    };
    mean_of(pq, f) + mean_of(qp, f)
}

fn within(d_sq: f64, threshold: f64, scale: FscoreScale) -> bool {
    match scale {
        FscoreScale::Squared => d_sq < threshold,
        FscoreScale::Euclidean => d_sq.sqrt() < threshold,
    }
}

fn prf(pq: &[f64], qp: &[f64], threshold: f64, scale: FscoreScale) -> (f64, f64, f64) {
    let frac = |d: &[f64]| d.iter().filter(|&&x| within(x, threshold, scale)).count() as f64 / d.len() as f64;
    let p = frac(pq);
    let r = frac(qp);
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn chamfer_l1(p: &[Point3], q: &[Point3]) -> Result<f64> {
    chamfer_l1_with(p, q, ChamferConvention::default())
}

pub fn chamfer_l1_with(p: &[Point3], q: &[Point3], conv: ChamferConvention) -> Result<f64> {
    nonempty(p, q)?;
    Ok(cd_l1_from(&nearest_sq_dists(p, q), &nearest_sq_dists(q, p), conv))
}

pub fn chamfer_l2(p: &[Point3], q: &[Point3]) -> Result<f64> {
    chamfer_l2_with(p, q, ChamferConvention::default())
}

pub fn chamfer_l2_with(p: &[Point3], q: &[Point3], conv: ChamferConvention) -> Result<f64> {
    nonempty(p, q)?;
    Ok(cd_l2_from(&nearest_sq_dists(p, q), &nearest_sq_dists(q, p), conv))
}

/// (precision, recall, F-Score) of `p` against reference `q` at threshold `d`.
pub fn fscore(p: &[Point3], q: &[Point3], d: f64) -> Result<(f64, f64, f64)> {
    fscore_with(p, q, d, FscoreScale::default())
}

pub fn fscore_with(p: &[Point3], q: &[Point3], d: f64, scale: FscoreScale) -> Result<(f64, f64, f64)> {
    nonempty(p, q)?;
    if !(d > 0.0) {
        return Err(Error::Argument(format!("F-Score threshold must be > 0, got {d}")));
    }
    Ok(prf(&nearest_sq_dists(p, q), &nearest_sq_dists(q, p), d, scale))
}

/// All metrics for one prediction/ground-truth pair, sharing the two
/// nearest-neighbour sweeps.
pub fn evaluate_pair(pred: &[Point3], gt: &[Point3], cfg: &MetricConfig) -> Result<MetricReport> {
    nonempty(pred, gt)?;
    if !(cfg.threshold > 0.0) {
        return Err(Error::Argument("F-Score threshold must be > 0".into()));
    }
    let pq = nearest_sq_dists(pred, gt);
    let qp = nearest_sq_dists(gt, pred);
    let (precision, recall, fscore) = prf(&pq, &qp, cfg.threshold, cfg.fscore_scale);
    Ok(MetricReport {
        cd_l1: cd_l1_from(&pq, &qp, cfg.chamfer),
        cd_l2: cd_l2_from(&pq, &qp, cfg.chamfer),
        fscore,
        precision,
        recall,
        threshold_d: cfg.threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub count: usize,
    pub mean: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Sorted by category name.
    pub per_category: Vec<CategoryReport>,
    /// Mean over all samples.
    pub overall: MetricReport,
    pub samples: Vec<(String, MetricReport)>,
}

pub fn mean_report(items: &[MetricReport]) -> MetricReport {
    let n = items.len().max(1) as f64;
    let mut m = MetricReport::default();
    for r in items {
        m.cd_l1 += r.cd_l1;
        m.cd_l2 += r.cd_l2;
        m.fscore += r.fscore;
        m.precision += r.precision;
        m.recall += r.recall;
    }
    m.cd_l1 /= n;
    m.cd_l2 /= n;
    m.fscore /= n;
    m.precision /= n;
    m.recall /= n;
    m.threshold_d = items.first().map(|r| r.threshold_d).unwrap_or(0.0);
    m
}

/// Per-sample metrics, per-category means and the overall sample mean.
/// Categories come from the ground-truth metadata; a prediction that carries
/// a category must agree with its ground truth.
pub fn evaluate_batch(preds: &[PointCloud], gts: &[PointCloud], cfg: &MetricConfig) -> Result<BatchReport> {
    if preds.len() != gts.len() {
        return Err(Error::Argument(format!(
            "evaluate_batch: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("evaluate_batch on an empty batch".into()));
    }
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if !p.meta.category.is_empty() && p.meta.category != g.meta.category {
            return Err(Error::Argument(format!(
                "sample {i}: prediction category `{}` vs ground truth `{}`",
                p.meta.category, g.meta.category
            )));
        }
    }
    let samples: Vec<(String, MetricReport)> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| evaluate_pair(&p.points, &g.points, cfg).map(|r| (g.meta.category.clone(), r)))
        .collect::<Result<_>>()?;
    Ok(summarize(samples))
}

pub fn summarize(samples: Vec<(String, MetricReport)>) -> BatchReport {
    let mut groups: BTreeMap<&str, Vec<MetricReport>> = BTreeMap::new();
    for (c, r) in &samples {
        groups.entry(c.as_str()).or_default().push(*r);
    }
    let per_category = groups
        .into_iter()
        .map(|(c, rs)| CategoryReport {
            category: c.to_string(),
            count: rs.len(),
            mean: mean_report(&rs),
        })
        .collect();
    let all: Vec<MetricReport> = samples.iter().map(|(_, r)| *r).collect();
    BatchReport {
        per_category,
        overall: mean_report(&all),
        samples,
    }
}

impl BatchReport {
    /// Sample mean over the listed categories (None when none of them occur).
    pub fn group_mean(&self, categories: &[String]) -> Option<MetricReport> {
        let rs: Vec<MetricReport> = self
            .samples
            .iter()
            .filter(|(c, _)| categories.contains(c))
            .map(|(_, r)| *r)
            .collect();
        (!rs.is_empty()).then(|| mean_report(&rs))
    }

    /// Delimiter-separated table: one row per category then the mean rows.
    /// CDs are scaled by 10³.
    pub fn table(&self, extra_means: &[(String, MetricReport)]) -> String {
        let mut rows: Vec<(String, MetricReport)> = self
            .per_category
            .iter()
            .map(|c| (c.category.clone(), c.mean))
            .collect();
        rows.extend(extra_means.iter().cloned());
        rows.push(("Mean".into(), self.overall));
        format_table(&rows)
    }
}

pub const TABLE_HEADER: &str = "category\tCD-l1(x1e-3)\tCD-l2(x1e-3)\tFS";

pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!(
            "{label}\t{:.3}\t{:.3}\t{:.3}\n",
            r.cd_l1 * 1e3,
            r.cd_l2 * 1e3,
            r.fscore
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist2;
    use crate::geometry::fixtures::deterministic_points;

    fn brute_min(from: &[Point3], to: &[Point3]) -> Vec<f64> {
        from.iter()
            .map(|&p| to.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .collect()
    }

    #[test]
    fn identity_is_zero() {
        let p = deterministic_points(50, 1);
        assert_eq!(chamfer_l1(&p, &p).unwrap(), 0.0);
        assert_eq!(chamfer_l2(&p, &p).unwrap(), 0.0);
        assert_eq!(fscore(&p, &p, 0.001).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_pair_values() {
        let a = [[0.0, 0.0, 0.0]];
        assert_eq!(chamfer_l1(&a, &[[3.0, 4.0, 0.0]]).unwrap(), 5.0);
        assert_eq!(chamfer_l2(&a, &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        // Euclidean-norm reading of the same pairs
        assert_eq!(chamfer_l2_with(&a, &[[3.0, 4.0, 0.0]], ChamferConvention::EuclideanNorm).unwrap(), 10.0);
        assert!((chamfer_l1_with(&a, &[[4.0, 0.0, 0.0]], ChamferConvention::EuclideanNorm).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_clouds_score_zero() {
        let p = [[0.0, 0.0, 0.0], [0.0, 0.1, 0.0]];
        let q = [[1.0, 0.0, 0.0], [1.0, 0.1, 0.0]];
        assert_eq!(fscore(&p, &q, 0.001).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn errors() {
        let p = deterministic_points(3, 1);
        assert!(chamfer_l1(&p, &[]).is_err());
        assert!(chamfer_l2(&[], &p).is_err());
        assert!(fscore(&p, &p, 0.0).is_err());
        let a = PointCloud::new(p.clone()).unwrap();
        assert!(evaluate_batch(&[a.clone()], &[a.clone(), a], &MetricConfig::default()).is_err());
    }

    #[test]
    fn matches_double_loop_oracle() {
        for seed in 0..10 {
            let p = deterministic_points(64, seed);
            let q: Vec<Point3> = deterministic_points(96, seed + 100)
                .into_iter()
                .map(|x| [x[0] * 0.5, x[1] * 0.5, x[2] * 0.5])
                .collect();
            let pq = brute_min(&p, &q);
            let qp = brute_min(&q, &p);
            let l1 = 0.5 * pq.iter().map(|d| d.sqrt()).sum::<f64>() / 64.0
                + 0.5 * qp.iter().map(|d| d.sqrt()).sum::<f64>() / 96.0;
            let l2 = pq.iter().sum::<f64>() / 64.0 + qp.iter().sum::<f64>() / 96.0;
            assert!((chamfer_l1(&p, &q).unwrap() - l1).abs() <= 1e-9 * l1);
            assert!((chamfer_l2(&p, &q).unwrap() - l2).abs() <= 1e-9 * l2);
            let d = 0.02;
            let prec = pq.iter().filter(|&&x| x < d).count() as f64 / 64.0;
            let rec = qp.iter().filter(|&&x| x < d).count() as f64 / 96.0;
            let (fp, fr, _) = fscore(&p, &q, d).unwrap();
            assert_eq!((fp, fr), (prec, rec));
        }
    }

    #[test]
    fn batch_means_and_categories() {
        let mk = |pts: Vec<Point3>, cat: &str| {
            let mut c = PointCloud::new(pts).unwrap();
            c.meta.category = cat.into();
            c
        };
        let gts = vec![
            mk(vec![[0.0; 3]], "a"),
            mk(vec![[0.0; 3]], "a"),
            mk(vec![[0.0; 3]], "b"),
        ];
        let preds = vec![
            mk(vec![[1.0, 0.0, 0.0]], ""),
            mk(vec![[3.0, 0.0, 0.0]], "a"),
            mk(vec![[0.0; 3]], "b"),
        ];
        let rep = evaluate_batch(&preds, &gts, &MetricConfig::default()).unwrap();
        assert_eq!(rep.per_category.len(), 2);
        assert_eq!(rep.per_category[0].mean.cd_l1, 2.0);
        assert_eq!(rep.per_category[1].mean.fscore, 1.0);
        assert!((rep.overall.cd_l1 - 4.0 / 3.0).abs() < 1e-15);
        assert!(rep.table(&[]).ends_with("Mean\t1333.333\t6666.667\t0.333\n"));

        let bad = vec![mk(vec![[0.0; 3]], "z")];
        assert!(evaluate_batch(&bad, &gts[..1], &MetricConfig::default()).is_err());
    }
}
