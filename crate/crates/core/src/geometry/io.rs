//! ASCII OFF / PLY mesh ingestion and ASCII PLY point cloud output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, Point3, TriMesh};
use crate::error::{Error, Result};

/// Loads a mesh by extension (`.off` or `.ply`). Polygons are fan-triangulated.
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("off") => parse_off(&text, path),
        Some("ply") => {
            let ply = parse_ply(&text, path)?;
            TriMesh::new(ply.vertices, ply.faces)
        }
        _ => Err(Error::parse(path, "unsupported mesh extension")),
    }
}

fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn parse_off(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(path, "missing OFF header"))?
        .trim();
    // some ModelNet files glue the counts onto the header line
    let counts_line = if rest.is_empty() {
        lines.next().ok_or_else(|| Error::parse(path, "missing counts line"))?
    } else {
        rest
    };
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, format!("bad count `{t}`"))))
        .collect::<Result<_>>()?;
    let (nv, nf) = match counts[..] {
        [v, f, ..] => (v, f),
        _ => return Err(Error::parse(path, "counts line needs vertex and face counts")),
    };

    let mut tokens = lines.flat_map(|l| l.split_whitespace());
    let mut next_f64 = |what: &str| -> Result<f64> {
        let t = tokens
            .next()
            .ok_or_else(|| Error::parse(path, format!("unexpected end of file reading {what}")))?;
        t.parse::<f64>()
            .map_err(|_| Error::parse(path, format!("bad number `{t}` in {what}")))
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push([next_f64("vertex")?, next_f64("vertex")?, next_f64("vertex")?]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k = next_f64("face")? as usize;
        let poly = (0..k)
            .map(|_| next_f64("face").map(|x| x as usize))
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces);
    }
    if vertices.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::parse(path, "non-finite vertex coordinate"));
    }
    TriMesh::new(vertices, faces)
}

pub struct PlyData {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

enum Prop {
    Scalar(String),
    List(String),
}

/// Parses ASCII PLY with a `vertex` element (x, y, z among its properties)
/// and an optional `face` element.
pub fn parse_ply(text: &str, path: &Path) -> Result<PlyData> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(path, "missing ply magic"));
    }
    let mut elements: Vec<(String, usize, Vec<Prop>)> = Vec::new();
    let mut ascii = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", ..] => ascii = true,
            ["format", other, ..] => {
                return Err(Error::parse(path, format!("unsupported PLY format `{other}`")))
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad element count `{count}`")))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", _, _, name] => match elements.last_mut() {
                Some(e) => e.2.push(Prop::List(name.to_string())),
                None => return Err(Error::parse(path, "property before element")),
            },
            ["property", _, name] => match elements.last_mut() {
                Some(e) => e.2.push(Prop::Scalar(name.to_string())),
                None => return Err(Error::parse(path, "property before element")),
            },
            ["end_header"] => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::parse(path, "missing ascii format line"));
    }

    let mut body = lines.map(str::trim).filter(|l| !l.is_empty());
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (name, count, props) in &elements {
        for _ in 0..*count {
            let line = body
                .next()
                .ok_or_else(|| Error::parse(path, format!("truncated `{name}` element")))?;
            let mut toks = line.split_whitespace();
            let mut xyz = [f64::NAN; 3];
            for prop in props {
                match prop {
                    Prop::Scalar(p) => {
                        let v: f64 = toks
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::parse(path, format!("bad `{p}` value")))?;
                        match p.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Prop::List(p) => {
                        let k: usize = toks
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::parse(path, format!("bad `{p}` list length")))?;
                        let items = (0..k)
                            .map(|_| toks.next().and_then(|t| t.parse::<usize>().ok()))
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| Error::parse(path, format!("bad `{p}` list item")))?;
                        if name == "face" {
                            fan(&items, &mut faces);
                        }
                    }
                }
            }
            if name == "vertex" {
                if xyz.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(path, "vertex without finite x/y/z"));
                }
                vertices.push(xyz);
            }
        }
    }
    Ok(PlyData { vertices, faces })
}

/// ASCII PLY text for a point cloud, coordinates stored as 32-bit floats.
pub fn encode_cloud_ply(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(32 * cloud.len() + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
    }
    s
}

pub fn write_cloud_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_cloud_ply(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ply = parse_ply(&text, path)?;
    PointCloud::new(ply.vertices).map_err(|e| Error::parse(path, e.to_string()))
}

/// OFF text for a mesh (used by fixtures and the demo generator).
pub fn encode_off(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uv_box;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn off_with_quads_and_glued_header() {
        let text = "OFF4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_off(text, p()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        let text = "OFF\n# comment\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_off(text, p()).unwrap().faces.len(), 1);
    }

    #[test]
    fn off_errors() {
        assert!(parse_off("", p()).is_err());
        assert!(parse_off("PLY\n", p()).is_err());
        assert!(parse_off("OFF\n3 1 0\n0 0 0\n1 0\n", p()).is_err());
        assert!(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", p()).is_err());
    }

    #[test]
    fn off_round_trip() {
        let m = uv_box([1.0, 2.0, 0.5]);
        assert_eq!(parse_off(&encode_off(&m), p()).unwrap(), m);
    }

    #[test]
    fn ply_mesh_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 0 0 255\n0 1 0 255\n3 0 1 2\n";
        let ply = parse_ply(text, p()).unwrap();
        assert_eq!(ply.vertices.len(), 3);
        assert_eq!(ply.faces, vec![[0, 1, 2]]);
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n", p()).is_err());
    }

    #[test]
    fn cloud_ply_layout() {
        let c = PointCloud::new(vec![[0.5, -1.0, 0.1]]).unwrap();
        assert_eq!(
            encode_cloud_ply(&c),
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 -1 0.1\n"
        );
        let back = parse_ply(&encode_cloud_ply(&c), p()).unwrap();
        assert_eq!(back.vertices[0][2] as f32, 0.1f32);
    }
}
