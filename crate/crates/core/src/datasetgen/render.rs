//! Orthographic depth rendering and the raster image file format.
//!
//! Image files hold a short text header followed by three 8-bit planes:
//!
//! ```text
//! MPCI\n
//! <width> <height> 3\n
//! 255\n
//! plane 0: width*height bytes, row-major
//! plane 1: ...
//! plane 2: ...
//! ```

use std::fs;
use std::path::Path;

use super::viewpoints::Viewpoint;
use crate::error::{Error, Result};
use crate::geometry::{dot, TriMesh};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: &str = "MPCI";

/// Half-width of the square orthographic view volume, in model units.
pub const VIEW_HALF_EXTENT: f64 = 1.0;

/// Renders `mesh` from a camera at `viewpoint.position * distance` looking at
/// the origin. Foreground pixels hold `min_depth / depth` (nearest surface
/// is 1), replicated to three channels; background is 0. Triangles with a
/// vertex at or behind the camera plane are skipped.
pub fn render_depth_image(mesh: &TriMesh, vp: &Viewpoint, distance: f64, side: usize) -> Result<Tensor> {
    if mesh.faces.is_empty() {
        return Err(Error::Geometry("cannot render an empty mesh".into()));
    }
    if side == 0 {
        return Err(Error::Argument("image side must be positive".into()));
    }
    let (u, v, w) = vp.basis();
    let px = 2.0 * VIEW_HALF_EXTENT / side as f64;
    let proj: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .map(|&p| {
            // continuous pixel coordinates (column, row) and depth
            let col = (dot(p, u) + VIEW_HALF_EXTENT) / px;
            let row = (VIEW_HALF_EXTENT - dot(p, v)) / px;
            (col, row, distance - dot(p, w))
        })
        .collect();
    let mut zbuf = vec![f64::INFINITY; side * side];
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| proj[i]);
        if a.2 <= 0.0 || b.2 <= 0.0 || c.2 <= 0.0 {
            continue;
        }
        let area = edge(a, b, c.0, c.1);
        if area == 0.0 {
            continue;
        }
        let lo_c = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let hi_c = (a.0.max(b.0).max(c.0).ceil().max(0.0) as usize).min(side);
        let lo_r = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let hi_r = (a.1.max(b.1).max(c.1).ceil().max(0.0) as usize).min(side);
        for r in lo_r..hi_r {
            let y = r as f64 + 0.5;
            for col in lo_c..hi_c {
                let x = col as f64 + 0.5;
                let w0 = edge(b, c, x, y) / area;
                let w1 = edge(c, a, x, y) / area;
                let w2 = edge(a, b, x, y) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
                let slot = &mut zbuf[r * side + col];
                if z < *slot {
                    *slot = z;
                }
            }
        }
    }
    let zmin = zbuf.iter().copied().fold(f64::INFINITY, f64::min);
    let mut data = vec![0.0; side * side * 3];
    if zmin.is_finite() {
        for (i, &z) in zbuf.iter().enumerate() {
            if z.is_finite() {
                let val = zmin / z;
                data[3 * i..3 * i + 3].fill(val);
            }
        }
    }
    Tensor::new([side, side, 3], data)
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}

/// Box-filter (or nearest, when enlarging) resize of a `[h, w, 3]` image to
/// `[side, side, 3]`.
pub fn resize_image(img: &Tensor, side: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 || side == 0 {
        return Err(Error::Argument(format!("cannot resize image of shape {s:?} to {side}")));
    }
    let (h, w) = (s[0], s[1]);
    if h == side && w == side {
        return Ok(img.clone());
    }
    let span = |i: usize, src: usize| {
        let a = i * src / side;
        let b = ((i + 1) * src / side).max(a + 1).min(src);
        (a.min(src - 1), b)
    };
    let mut data = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        let (r0, r1) = span(r, h);
        for c in 0..side {
            let (c0, c1) = span(c, w);
            for ch in 0..3 {
                let mut sum = 0.0;
                for y in r0..r1 {
                    for x in c0..c1 {
                        sum += img.data()[(y * w + x) * 3 + ch];
                    }
                }
                data.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
    }
    Tensor::new([side, side, 3], data)
}

pub fn encode_image(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Argument(format!("image must be [h, w, 3], got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    let mut out = format!("{IMAGE_MAGIC}\n{w} {h} 3\n255\n").into_bytes();
    for ch in 0..3 {
        for i in 0..h * w {
            let x = img.data()[i * 3 + ch].clamp(0.0, 1.0);
            out.push((x * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut line = || -> Result<&str> {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, "truncated image header"))?;
        let s = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| Error::parse(path, "bad image header"))?;
        pos += end + 1;
        Ok(s)
    };
    if line()? != IMAGE_MAGIC {
        return Err(Error::parse(path, "bad image magic"));
    }
    let dims: Vec<usize> = line()?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, "bad image size")))
        .collect::<Result<_>>()?;
    let [w, h, 3] = dims[..] else {
        return Err(Error::parse(path, "image must have 3 planes"));
    };
    if line()? != "255" {
        return Err(Error::parse(path, "image max value must be 255"));
    }
    let body = &bytes[pos..];
    if body.len() != w * h * 3 || w == 0 || h == 0 {
        return Err(Error::parse(path, format!("expected {} pixel bytes, got {}", w * h * 3, body.len())));
    }
    let mut data = vec![0.0; w * h * 3];
    for ch in 0..3 {
        for i in 0..w * h {
            data[i * 3 + ch] = body[ch * w * h + i] as f64 / 255.0;
        }
    }
    Tensor::new([h, w, 3], data)
}

pub fn write_image(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_image(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}
