//! Point-set and mesh algorithms shared by the model and the dataset pipeline.

mod fps;
mod hpr;
pub mod hull;
pub mod io;
mod kdtree;
mod pds;
mod sampling;

pub use fps::{fps, SeedRule};
pub use hpr::{hidden_point_removal, HprConfig, HprResult};
pub use kdtree::{knn, KdTree};
pub use pds::{poisson_disk_sample, target_radius};
pub use sampling::{add_gaussian_noise, resample_to};
pub use shapes::{cone, cylinder, icosphere, torus, uv_box};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Provenance carried alongside a cloud.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub model_id: String,
    pub category: String,
    pub viewpoint_id: Option<usize>,
    pub noisy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub meta: CloudMeta,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::with_meta(points, CloudMeta::default())
    }

    pub fn with_meta(points: Vec<Point3>, meta: CloudMeta) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("point cloud must contain at least one point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("point cloud has a non-finite coordinate".into()));
        }
        Ok(Self { points, meta })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounds(&self) -> (Point3, Point3) {
        bounds(&self.points)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        norm(sub(hi, lo))
    }

    /// Flattened row-major `N×3` coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::Argument(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                data.len()
            )));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len().max(1) as f64)
}

pub fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Validates indices and drops zero-area faces.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for f in &faces {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::Index { index: bad, len: n });
            }
        }
        let mut mesh = Self { vertices, faces };
        mesh.faces.retain(|f| {
            let a = mesh.vertices[f[0]];
            let b = mesh.vertices[f[1]];
            let c = mesh.vertices[f[2]];
            norm(cross(sub(b, a), sub(c, a))) > 0.0
        });
        Ok(mesh)
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Centers at the vertex centroid and scales the longest bounding-box
    /// axis to 1.
    pub fn normalized(&self) -> Result<Self> {
        if self.vertices.is_empty() {
            return Err(Error::Geometry("mesh has no vertices".into()));
        }
        let c = centroid(&self.vertices);
        let (lo, hi) = bounds(&self.vertices);
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        if extent <= 0.0 || !extent.is_finite() {
            return Err(Error::Geometry("mesh has zero extent".into()));
        }
        Ok(Self {
            vertices: self.vertices.iter().map(|&v| scale(sub(v, c), 1.0 / extent)).collect(),
            faces: self.faces.clone(),
        })
    }

    /// Reconstruction residual of `p` from its barycentric coordinates on face
    /// `f`, combined with any negative-coordinate excess. Zero iff `p` lies on
    /// the triangle.
    pub fn barycentric_residual(&self, f: usize, p: Point3) -> f64 {
        let [a, b, c] = self.triangle(f);
        let (u, v, w) = barycentric(a, b, c, p);
        let mut out_of_range = 0.0f64;
        for t in [u, v, w] {
            if t < 0.0 {
                out_of_range = out_of_range.max(-t);
            }
        }
        let q = add(add(scale(a, u), scale(b, v)), scale(c, w));
        norm(sub(p, q)).max(out_of_range)
    }

    /// Distance-like residual of `p` against the closest face.
    pub fn min_barycentric_residual(&self, p: Point3) -> f64 {
        (0..self.faces.len())
            .map(|f| self.barycentric_residual(f, p))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn barycentric(a: Point3, b: Point3, c: Point3, p: Point3) -> (f64, f64, f64) {
    let v0 = sub(b, a);
    let v1 = sub(c, a);
    let v2 = sub(p, a);
    let d00 = dot(v0, v0);
    let d01 = dot(v0, v1);
    let d11 = dot(v1, v1);
    let d20 = dot(v2, v0);
    let d21 = dot(v2, v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    (1.0 - v - w, v, w)
}

/// Normalizes a cloud the same way meshes are normalized.
pub fn normalize_cloud(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let (lo, hi) = cloud.bounds();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let s = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    PointCloud {
        points: cloud.points.iter().map(|&p| scale(sub(p, c), s)).collect(),
        meta: cloud.meta.clone(),
    }
}


pub mod shapes {
    //! Procedural meshes used by fixtures, tests and demos.

    use super::{norm, scale, Point3, TriMesh};

    /// Subdivided icosahedron projected onto the unit sphere.
    pub fn icosphere(subdivisions: usize) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Point3> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        for v in vertices.iter_mut() {
            *v = scale(*v, 1.0 / norm(*v));
        }
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache = std::collections::HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point3>| -> usize {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let m = scale(super::add(verts[a], verts[b]), 0.5);
                    verts.push(scale(m, 1.0 / norm(m)));
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        TriMesh { vertices, faces }
    }

    /// Axis-aligned box with the given half extents, 12 triangles.
    pub fn uv_box(half: Point3) -> TriMesh {
        let [x, y, z] = half;
        let vertices = vec![
            [-x, -y, -z],
            [x, -y, -z],
            [x, y, -z],
            [-x, y, -z],
            [-x, -y, z],
            [x, -y, z],
            [x, y, z],
            [-x, y, z],
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [0, 4, 7],
            [0, 7, 3],
        ];
        TriMesh { vertices, faces }
    }

    /// Closed cylinder along z with capped ends.
    pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriMesh {
        frustum(radius, radius, height, segments)
    }

    /// Closed cone along z, apex up.
    pub fn cone(radius: f64, height: f64, segments: usize) -> TriMesh {
        frustum(radius, 0.0, height, segments)
    }

    fn frustum(r0: f64, r1: f64, height: f64, segments: usize) -> TriMesh {
        let s = segments.max(3);
        let h = height / 2.0;
        let mut vertices = vec![[0.0, 0.0, -h], [0.0, 0.0, h]];
        for (r, z) in [(r0, -h), (r1, h)] {
            for i in 0..s {
                let t = std::f64::consts::TAU * i as f64 / s as f64;
                vertices.push([r * t.cos(), r * t.sin(), z]);
            }
        }
        let ring = |k: usize, i: usize| 2 + k * s + i % s;
        let mut faces = Vec::new();
        for i in 0..s {
            faces.push([0, ring(0, i + 1), ring(0, i)]);
            faces.push([1, ring(1, i), ring(1, i + 1)]);
            faces.push([ring(0, i), ring(0, i + 1), ring(1, i + 1)]);
            faces.push([ring(0, i), ring(1, i + 1), ring(1, i)]);
        }
        // a zero top radius collapses the top ring; drop the resulting slivers
        TriMesh::new(vertices, faces).expect("valid indices")
    }

    /// Torus around z with major radius `r_major` and tube radius `r_minor`.
    pub fn torus(r_major: f64, r_minor: f64, segments: usize, sides: usize) -> TriMesh {
        let (s, k) = (segments.max(3), sides.max(3));
        let mut vertices = Vec::with_capacity(s * k);
        for i in 0..s {
            let u = std::f64::consts::TAU * i as f64 / s as f64;
            for j in 0..k {
                let v = std::f64::consts::TAU * j as f64 / k as f64;
                let r = r_major + r_minor * v.cos();
                vertices.push([r * u.cos(), r * u.sin(), r_minor * v.sin()]);
            }
        }
        let at = |i: usize, j: usize| (i % s) * k + j % k;
        let mut faces = Vec::with_capacity(2 * s * k);
        for i in 0..s {
            for j in 0..k {
                faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        TriMesh { vertices, faces }
    }
}
