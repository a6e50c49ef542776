use proptest::prelude::*;

use duinnet::geometry::{dist2, fps, hidden_point_removal, icosphere, knn, poisson_disk_sample, HprConfig, Point3, SeedRule};
use duinnet::metrics::{chamfer_l1, chamfer_l2, fscore};
use duinnet::tensor::gradcheck::check;
use duinnet::tensor::{Precision, Tape, Tensor, Var};

fn point() -> impl Strategy<Value = Point3> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..max)
}

fn brute_nn(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    from.iter()
        .map(|&p| to.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Greedy replay: start at 0, take the lowest index among the farthest.
fn fps_replay(pts: &[Point3], m: usize, first: usize) -> Vec<usize> {
    let mut out = vec![first];
    while out.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..pts.len() {
            if out.contains(&i) {
                continue;
            }
            let d = out.iter().map(|&j| dist2(pts[i], pts[j])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        out.push(best.1);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_matches_double_loop(p in cloud(80), q in cloud(80)) {
        let (pq, qp) = (brute_nn(&p, &q), brute_nn(&q, &p));
        let mean = |d: &[f64], f: fn(f64) -> f64| d.iter().map(|&x| f(x)).sum::<f64>() / d.len() as f64;
        let l1 = 0.5 * mean(&pq, f64::sqrt) + 0.5 * mean(&qp, f64::sqrt);
        let l2 = mean(&pq, |x| x) + mean(&qp, |x| x);
        prop_assert!(rel(chamfer_l1(&p, &q).unwrap(), l1) < 1e-9);
        prop_assert!(rel(chamfer_l2(&p, &q).unwrap(), l2) < 1e-9);
    }

    #[test]
    fn metrics_are_symmetric(p in cloud(60), q in cloud(60), d in 0.001f64..0.5) {
        prop_assert_eq!(chamfer_l1(&p, &q).unwrap(), chamfer_l1(&q, &p).unwrap());
        prop_assert_eq!(chamfer_l2(&p, &q).unwrap(), chamfer_l2(&q, &p).unwrap());
        let (pr, rc, f) = fscore(&p, &q, d).unwrap();
        let (pr2, rc2, f2) = fscore(&q, &p, d).unwrap();
        prop_assert_eq!((pr, rc), (rc2, pr2));
        prop_assert!((f - f2).abs() < 1e-15);
    }

    #[test]
    fn identical_clouds_score_perfectly(p in cloud(60)) {
        prop_assert_eq!(chamfer_l1(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(chamfer_l2(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(fscore(&p, &p, 0.001).unwrap().2, 1.0);
    }

    #[test]
    fn fscore_grows_with_threshold(p in cloud(60), q in cloud(60), d1 in 0.0001f64..1.0, d2 in 0.0001f64..1.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(fscore(&p, &q, lo).unwrap().2 <= fscore(&p, &q, hi).unwrap().2);
    }

    #[test]
    fn fps_matches_greedy_replay(p in prop::collection::vec(point(), 2..128), frac in 0.05f64..1.0) {
        let m = ((p.len() as f64 * frac).ceil() as usize).clamp(1, p.len());
        prop_assert_eq!(fps(&p, m, SeedRule::FirstIndex).unwrap(), fps_replay(&p, m, 0));
    }

    #[test]
    fn fps_centroid_rule_ignores_input_order(p in prop::collection::vec(point(), 4..100), seed in any::<u64>()) {
        let m = p.len() / 3 + 1;
        let base: std::collections::BTreeSet<usize> = fps(&p, m, SeedRule::FarthestFromCentroid).unwrap().into_iter().collect();
        let mut perm: Vec<usize> = (0..p.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Point3> = perm.iter().map(|&i| p[i]).collect();
        let sel: std::collections::BTreeSet<usize> = fps(&shuffled, m, SeedRule::FarthestFromCentroid)
            .unwrap()
            .into_iter()
            .map(|i| perm[i])
            .collect();
        prop_assert_eq!(base, sel);
    }

    #[test]
    fn knn_of_self_is_self(p in prop::collection::vec(point(), 1..100)) {
        let nn = knn(&p, &p, 1).unwrap();
        for (i, row) in nn.iter().enumerate() {
            prop_assert_eq!(row[0], i);
        }
    }

    #[test]
    fn hpr_returns_sorted_subset(p in prop::collection::vec(point(), 8..200), vp in point()) {
        let vp = [vp[0] * 3.0 + 4.0, vp[1] * 3.0, vp[2] * 3.0];
        let r = hidden_point_removal(&p, vp, &HprConfig::default()).unwrap();
        prop_assert!(!r.visible.is_empty());
        prop_assert!(r.visible.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.visible.iter().all(|&i| i < p.len()));
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), spread in 0.1f64..50.0) {
        let mut s = seed;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * spread
            })
            .collect();
        let tape = Tape::new(Precision::F64);
        let y = tape.constant(Tensor::new([rows, cols], data).unwrap()).softmax(1).unwrap();
        for r in 0..rows {
            let sum: f64 = y.value().row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_op_chains_pass_gradcheck(ops in prop::collection::vec(0usize..7, 1..10), seed in any::<u64>()) {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let x = Tensor::new([3, 4], (0..12).map(|_| next()).collect()).unwrap();
        let w = Tensor::new([4, 4], (0..16).map(|_| next() * 0.5).collect()).unwrap();
        let r = Tensor::new([3, 4], (0..12).map(|_| next()).collect()).unwrap();
        let rep = check(&[x, w, r], 1e-5, 12, |tape, v| {
            let mut h: Var = v[0];
            for &op in &ops {
                h = match op {
                    0 => h.matmul(v[1])?,
                    1 => h.scale(0.7),
                    2 => h.mul(h)?.scale(0.5),
                    3 => h.softmax(1)?,
                    4 => h.add(v[2])?,
                    5 => h.mul(h)?.add(tape.constant(Tensor::full([3, 4], 0.1)))?.sqrt()?,
                    _ => h.sub(v[2])?.scale(-1.0),
                };
            }
            h.mul(v[2])
        })
        .unwrap();
        prop_assert!(rep.passes(1e-4), "{:?} {:?}", ops, rep);
    }

    #[test]
    fn forward_is_bitwise_deterministic(seed in any::<u64>()) {
        let mut s = seed;
        let data: Vec<f64> = (0..20)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let run = || {
            let tape = Tape::new(Precision::F32);
            let a = tape.leaf(Tensor::new([4, 5], data.clone()).unwrap());
            a.matmul(a.transpose().unwrap()).unwrap().softmax(1).unwrap().value().data().to_vec()
        };
        let (x, y) = (run(), run());
        prop_assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pds_count_is_exact_and_on_surface(n in 1usize..300, seed in any::<u64>()) {
        let mesh = icosphere(1);
        let c = poisson_disk_sample(&mesh, n, seed).unwrap();
        prop_assert_eq!(c.len(), n);
        for p in &c.points {
            prop_assert!(mesh.min_barycentric_residual(*p) < 1e-6);
        }
    }
}
