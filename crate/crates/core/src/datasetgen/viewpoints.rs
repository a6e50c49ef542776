use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, norm, scale, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: usize,
    /// Unit direction from the origin to the camera.
    pub position: Point3,
}

impl Viewpoint {
    /// Camera basis `(right, up, back)`: `back` points from the origin to
    /// the camera. The canonical up is +z, falling back to +y near the poles.
    pub fn basis(&self) -> (Point3, Point3, Point3) {
        let w = self.position;
        let up = if w[2].abs() > 0.99 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let u = cross(up, w);
        let u = scale(u, 1.0 / norm(u));
        let v = cross(w, u);
        (u, v, w)
    }
}

/// Spherical Fibonacci lattice of `n` unit directions.
pub fn make_viewpoints(n: usize) -> Result<Vec<Viewpoint>> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 viewpoints, got {n}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    Ok((0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Viewpoint {
                id: i,
                position: [r * phi.cos(), r * phi.sin(), z],
            }
        })
        .collect())
}

/// Smallest angle (degrees) between two of the 32 default viewpoints.
pub const MIN_ANGLE_32_DEG: f64 = 31.67;
