//! Hidden point removal by spherical flipping and a convex hull.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hull::{convex_hull, HullError};
use super::{dist2, norm, scale, sub, Point3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HprConfig {
    /// Flip radius is `max |p - viewpoint| * 10^radius_exponent`.
    pub radius_exponent: f64,
}

impl Default for HprConfig {
    fn default() -> Self {
        Self { radius_exponent: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HprResult {
    /// Sorted indices of visible points.
    pub visible: Vec<usize>,
    /// Whether the input had to be jittered to escape a degenerate hull.
    pub jittered: bool,
}

const JITTER: f64 = 1e-9;

/// Points of `points` visible from `viewpoint`.
pub fn hidden_point_removal(points: &[Point3], viewpoint: Point3, cfg: &HprConfig) -> Result<HprResult> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Argument("hidden_point_removal on an empty cloud".into()));
    }
    if n > 1 && points.iter().all(|p| dist2(*p, points[0]) == 0.0) {
        return Err(Error::Geometry("all points coincide".into()));
    }
    if n <= 3 {
        return Ok(HprResult {
            visible: (0..n).collect(),
            jittered: false,
        });
    }
    let rel: Vec<Point3> = points.iter().map(|&p| sub(p, viewpoint)).collect();
    if rel.iter().any(|&q| norm(q) == 0.0) {
        return Err(Error::Geometry("viewpoint coincides with a cloud point".into()));
    }

    match flip_and_hull(&rel, cfg) {
        Ok(visible) => Ok(HprResult {
            visible,
            jittered: false,
        }),
        Err(HullError::Degenerate) => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x4850_5200);
            let jittered: Vec<Point3> = rel
                .iter()
                .map(|q| {
                    [
                        q[0] + rng.gen_range(-JITTER..JITTER),
                        q[1] + rng.gen_range(-JITTER..JITTER),
                        q[2] + rng.gen_range(-JITTER..JITTER),
                    ]
                })
                .collect();
            let visible = flip_and_hull(&jittered, cfg)
                .map_err(|_| Error::Geometry("hull stays degenerate after jitter".into()))?;
            Ok(HprResult {
                visible,
                jittered: true,
            })
        }
    }
}

fn flip_and_hull(rel: &[Point3], cfg: &HprConfig) -> std::result::Result<Vec<usize>, HullError> {
    let max_norm = rel.iter().map(|&q| norm(q)).fold(0.0, f64::max);
    let radius = max_norm * 10f64.powf(cfg.radius_exponent);
    let mut flipped: Vec<Point3> = rel
        .iter()
        .map(|&q| {
            let l = norm(q);
            scale(q, 1.0 + 2.0 * (radius - l) / l)
        })
        .collect();
    let origin = flipped.len();
    flipped.push([0.0; 3]);
    let hull = convex_hull(&flipped)?;
    Ok(hull.vertices.into_iter().filter(|&i| i != origin).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;

    fn sphere(n: usize, seed: u64) -> Vec<Point3> {
        deterministic_points(n * 3, seed)
            .into_iter()
            .filter(|p| norm(*p) > 0.1 && norm(*p) <= 1.0)
            .take(n)
            .map(|p| scale(p, 1.0 / norm(p)))
            .collect()
    }

    #[test]
    fn single_point_is_visible() {
        let r = hidden_point_removal(&[[0.0; 3]], [0.0, 0.0, 3.0], &HprConfig::default()).unwrap();
        assert_eq!(r.visible, vec![0]);
    }

    #[test]
    fn coincident_points_are_an_error() {
        let pts = vec![[0.5; 3]; 6];
        assert!(matches!(
            hidden_point_removal(&pts, [0.0, 0.0, 3.0], &HprConfig::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn sphere_front_cap_is_visible() {
        let pts = sphere(500, 17);
        let vp = [0.0, 0.0, 3.0];
        let r = hidden_point_removal(&pts, vp, &HprConfig::default()).unwrap();
        // the tangent cone from the viewpoint touches the sphere at z = 1/3
        let cap: Vec<usize> = (0..pts.len()).filter(|&i| pts[i][2] > 0.5).collect();
        assert!(cap.len() > 50);
        let missed: Vec<usize> = cap.iter().copied().filter(|i| r.visible.binary_search(i).is_err()).collect();
        assert!(missed.is_empty(), "{missed:?}");
        assert!(r.visible.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn larger_radius_never_shrinks_the_visible_set() {
        let pts = sphere(400, 3);
        let vp = [0.0, 2.5, 1.0];
        let mut prev: Vec<usize> = Vec::new();
        for gamma in [0.5, 1.0, 2.0, 3.0] {
            let v = hidden_point_removal(&pts, vp, &HprConfig { radius_exponent: gamma })
                .unwrap()
                .visible;
            assert!(prev.iter().all(|i| v.contains(i)), "gamma {gamma}");
            prev = v;
        }
    }

    #[test]
    fn occluded_cluster_contributes_little() {
        // a dense near plate hides a small far blob along the view axis
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push([-0.5 + i as f64 / 19.0, -0.5 + j as f64 / 19.0, 0.5]);
            }
        }
        let near = pts.len();
        for p in deterministic_points(100, 4) {
            pts.push([p[0] * 0.1, p[1] * 0.1, -0.5 + p[2] * 0.1]);
        }
        let r = hidden_point_removal(&pts, [0.0, 0.0, 3.0], &HprConfig::default()).unwrap();
        let far_visible = r.visible.iter().filter(|&&i| i >= near).count();
        assert!(
            (far_visible as f64) <= 0.1 * r.visible.len() as f64,
            "{far_visible} of {}",
            r.visible.len()
        );
    }

    #[test]
    fn coplanar_cloud_through_viewpoint_is_jittered() {
        // points and viewpoint share the plane z = 0
        let pts: Vec<Point3> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.2;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        let r = hidden_point_removal(&pts, [3.0, 0.0, 0.0], &HprConfig::default()).unwrap();
        assert!(r.jittered);
        assert!(!r.visible.is_empty());
    }
}
