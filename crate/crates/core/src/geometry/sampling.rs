use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{fps, PointCloud, SeedRule};
use crate::error::{Error, Result};

/// Perturbs every coordinate with i.i.d. normal noise of standard deviation
/// `sigma * bbox_diagonal`.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = cloud.clone();
    out.meta.noisy = true;
    let std = sigma * cloud.bbox_diagonal();
    if std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in out.points.iter_mut() {
        for c in p.iter_mut() {
            *c += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Brings a cloud to exactly `n` points: farthest point subsampling when it
/// has at least `n`, otherwise the original points followed by seeded
/// duplicates drawn uniformly with replacement.
pub fn resample_to(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Argument("resample_to needs n >= 1".into()));
    }
    let len = cloud.len();
    if len >= n {
        let idx = fps(&cloud.points, n, SeedRule::FirstIndex)?;
        return Ok(cloud.select(&idx));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cloud.clone();
    out.points
        .extend((len..n).map(|_| cloud.points[rng.gen_range(0..len)]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;

    #[test]
    fn zero_sigma_is_identity() {
        let c = PointCloud::new(deterministic_points(20, 1)).unwrap();
        assert_eq!(add_gaussian_noise(&c, 0.0, 5).unwrap().points, c.points);
        assert!(add_gaussian_noise(&c, -1.0, 5).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let c = PointCloud::new(deterministic_points(2048, 2)).unwrap();
        let a = add_gaussian_noise(&c, 0.01, 9).unwrap();
        let b = add_gaussian_noise(&c, 0.01, 9).unwrap();
        assert_eq!(a.points, b.points);
        let expected = 0.01 * c.bbox_diagonal();
        for axis in 0..3 {
            let d: Vec<f64> = a.points.iter().zip(&c.points).map(|(p, q)| p[axis] - q[axis]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((std / expected - 1.0).abs() < 0.1, "axis {axis}: {std} vs {expected}");
        }
    }

    #[test]
    fn upsampling_only_duplicates() {
        let c = PointCloud::new(deterministic_points(100, 3)).unwrap();
        let up = resample_to(&c, 2048, 1).unwrap();
        assert_eq!(up.len(), 2048);
        assert!(up.points.iter().all(|p| c.points.contains(p)));
        assert_eq!(resample_to(&c, 100, 1).unwrap().len(), 100);
        assert!(resample_to(&c, 0, 1).is_err());
    }

    #[test]
    fn downsampling_is_fps() {
        let c = PointCloud::new(deterministic_points(300, 4)).unwrap();
        let down = resample_to(&c, 64, 1).unwrap();
        let idx = fps(&c.points, 64, SeedRule::FirstIndex).unwrap();
        assert_eq!(down.points, c.select(&idx).points);
    }
}
