//! Procedural shapes for smoke runs, overfitting checks and demos.

use super::{derive_seed, make_viewpoints, render_depth_image};
use crate::error::Result;
use crate::geometry::shapes::{cone, cylinder, icosphere, torus, uv_box};
use crate::geometry::{hidden_point_removal, poisson_disk_sample, resample_to, scale, HprConfig, TriMesh};
use crate::model::train::TrainSample;
use crate::model::ModelConfig;

/// Eight named shapes covering round, boxy, thin and genus-one geometry.
pub fn shape_meshes() -> Vec<(&'static str, TriMesh)> {
    let mut ellipsoid = icosphere(2);
    for v in ellipsoid.vertices.iter_mut() {
        v[0] *= 1.0;
        v[1] *= 0.6;
        v[2] *= 0.35;
    }
    vec![
        ("sphere", icosphere(2)),
        ("box", uv_box([0.5, 0.5, 0.5])),
        ("slab", uv_box([0.5, 0.4, 0.08])),
        ("cylinder", cylinder(0.4, 1.0, 24)),
        ("cone", cone(0.5, 1.0, 24)),
        ("torus", torus(0.35, 0.12, 24, 12)),
        ("tower", uv_box([0.15, 0.15, 0.5])),
        ("ellipsoid", ellipsoid),
    ]
}

/// One sample per fixture shape, sized for `cfg`: target is a Poisson-disk
/// cloud of `cfg.n` points, input its visible part from one viewpoint
/// resampled to `cfg.n`, image a depth render from that viewpoint.
pub fn overfit_samples(cfg: &ModelConfig, seed: u64) -> Result<Vec<TrainSample>> {
    let vps = make_viewpoints(32)?;
    let distance = 4.0;
    shape_meshes()
        .into_iter()
        .enumerate()
        .map(|(i, (name, mesh))| {
            let mesh = mesh.normalized()?;
            let vp = &vps[(5 * i + 3) % vps.len()];
            let target = poisson_disk_sample(&mesh, cfg.n, derive_seed(seed, &[name, "pds"]))?;
            let visible = hidden_point_removal(&target.points, scale(vp.position, distance), &HprConfig::default())?;
            let partial = target.select(&visible.visible);
            let input = resample_to(&partial, cfg.n, derive_seed(seed, &[name, "input"]))?;
            Ok(TrainSample {
                input: input.points,
                image: render_depth_image(&mesh, vp, distance, cfg.image_side)?,
                target: target.points,
                category: name.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_match_the_mini_profile() {
        let cfg = ModelConfig::mini();
        let s = overfit_samples(&cfg, 0).unwrap();
        assert_eq!(s.len(), 8);
        for t in &s {
            assert_eq!(t.input.len(), cfg.n);
            assert_eq!(t.target.len(), cfg.n);
            assert_eq!(t.image.shape(), &[32, 32, 3]);
            assert!(t.image.data().iter().any(|&x| x > 0.0), "{}", t.category);
        }
    }
}
