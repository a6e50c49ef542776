//! Incremental 3-D convex hull (quickhull-style conflict lists).

use std::collections::HashMap;

use super::{cross, dist2, dot, norm, sub, Point3};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HullError {
    /// Fewer than four affinely independent points.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct Hull {
    /// Outward-oriented triangles (counter-clockwise seen from outside).
    pub faces: Vec<[usize; 3]>,
    /// Sorted indices of points that are hull vertices.
    pub vertices: Vec<usize>,
}

struct Face {
    v: [usize; 3],
    normal: Point3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(points: &[Point3], v: [usize; 3]) -> Self {
        let [a, b, c] = v.map(|i| points[i]);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        let normal = if len > 0.0 { [n[0] / len, n[1] / len, n[2] / len] } else { [0.0; 3] };
        Face {
            v,
            normal,
            offset: dot(normal, a),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn distance(&self, p: Point3) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

pub fn convex_hull(points: &[Point3]) -> Result<Hull, HullError> {
    if points.len() < 4 {
        return Err(HullError::Degenerate);
    }
    let scale = points
        .iter()
        .flatten()
        .fold(0.0f64, |m, c| m.max(c.abs()))
        .max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale;

    let simplex = initial_simplex(points, eps).ok_or(HullError::Degenerate)?;
    let [i0, i1, i2, i3] = simplex;
    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();

    let interior = {
        let s = [i0, i1, i2, i3].map(|i| points[i]);
        [
            (s[0][0] + s[1][0] + s[2][0] + s[3][0]) / 4.0,
            (s[0][1] + s[1][1] + s[2][1] + s[3][1]) / 4.0,
            (s[0][2] + s[1][2] + s[2][2] + s[3][2]) / 4.0,
        ]
    };
    for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let mut f = Face::new(points, tri);
        if f.distance(interior) > 0.0 {
            f = Face::new(points, [tri[0], tri[2], tri[1]]);
        }
        add_face(&mut faces, &mut edges, f);
    }

    let in_simplex = |i: usize| simplex.contains(&i);
    let initial: Vec<usize> = (0..points.len()).filter(|&i| !in_simplex(i)).collect();
    assign(points, &mut faces, &[0, 1, 2, 3], initial, eps);

    loop {
        let Some(seed) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) else {
            break;
        };
        let apex = *faces[seed]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                faces[seed]
                    .distance(points[a])
                    .total_cmp(&faces[seed].distance(points[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        let p = points[apex];

        // visible region: flood fill from the seed face
        let mut visible = vec![seed];
        let mut mark: HashMap<usize, bool> = HashMap::from([(seed, true)]);
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            let v = faces[f].v;
            for e in 0..3 {
                let (a, b) = (v[e], v[(e + 1) % 3]);
                if let Some(&g) = edges.get(&(b, a)) {
                    if mark.contains_key(&g) {
                        continue;
                    }
                    let vis = faces[g].distance(p) > eps;
                    mark.insert(g, vis);
                    if vis {
                        visible.push(g);
                    }
                }
            }
        }

        let mut horizon = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for e in 0..3 {
                let (a, b) = (v[e], v[(e + 1) % 3]);
                let across = edges.get(&(b, a)).copied();
                if across.map_or(true, |g| !mark.get(&g).copied().unwrap_or(false)) {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            let face = &mut faces[f];
            face.alive = false;
            orphans.append(&mut face.outside);
            let v = face.v;
            for e in 0..3 {
                edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        orphans.retain(|&i| i != apex);

        let mut created = Vec::with_capacity(horizon.len());
        for (a, b) in horizon {
            let f = Face::new(points, [a, b, apex]);
            created.push(add_face(&mut faces, &mut edges, f));
        }
        assign(points, &mut faces, &created, orphans, eps);
    }

    let alive: Vec<[usize; 3]> = faces.iter().filter(|f| f.alive).map(|f| f.v).collect();
    let mut vertices: Vec<usize> = alive.iter().flatten().copied().collect();
    vertices.sort_unstable();
    vertices.dedup();
    Ok(Hull {
        faces: alive,
        vertices,
    })
}

fn add_face(faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, f: Face) -> usize {
    let id = faces.len();
    let v = f.v;
    for e in 0..3 {
        edges.insert((v[e], v[(e + 1) % 3]), id);
    }
    faces.push(f);
    id
}

/// Gives each point to the first candidate face it lies strictly above.
fn assign(points: &[Point3], faces: &mut [Face], candidates: &[usize], pts: Vec<usize>, eps: f64) {
    for i in pts {
        let p = points[i];
        let mut best: Option<(usize, f64)> = None;
        for &f in candidates {
            let d = faces[f].distance(p);
            if d > eps && best.map_or(true, |(_, bd)| d > bd) {
                best = Some((f, d));
            }
        }
        if let Some((f, _)) = best {
            faces[f].outside.push(i);
        }
    }
}

fn initial_simplex(points: &[Point3], eps: f64) -> Option<[usize; 4]> {
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)))?;
    let i1 = argmax(points, |p| dist2(p, points[i0]));
    if dist2(points[i1], points[i0]).sqrt() <= eps {
        return None;
    }
    let d01 = sub(points[i1], points[i0]);
    let i2 = argmax(points, |p| norm(cross(d01, sub(p, points[i0]))));
    let n = cross(d01, sub(points[i2], points[i0]));
    let nl = norm(n);
    if nl <= eps * norm(d01) {
        return None;
    }
    let i3 = argmax(points, |p| (dot(n, sub(p, points[i0])) / nl).abs());
    if (dot(n, sub(points[i3], points[i0])) / nl).abs() <= eps {
        return None;
    }
    Some([i0, i1, i2, i3])
}

fn argmax(points: &[Point3], f: impl Fn(Point3) -> f64) -> usize {
    let mut best = 0;
    let mut bv = f64::NEG_INFINITY;
    for (i, &p) in points.iter().enumerate() {
        let v = f(p);
        if v > bv {
            bv = v;
            best = i;
        }
    }
    best
}
