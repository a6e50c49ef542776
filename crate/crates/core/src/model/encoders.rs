//! Point-cloud and image encoders.

use std::rc::Rc;

use super::nn::{lbr_stack, run_stack, BatchNorm, Ctx, Lbr, Linear, ParamSpec};
use crate::error::{Error, Result};
use crate::geometry::{fps, knn, sub, Point3, SeedRule};
use crate::tensor::{Tensor, Var};

fn relative_coords(coords: &[Point3], centres: &[Point3], groups: &[Vec<usize>]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(groups.len() * groups.first().map_or(0, Vec::len) * 3);
    for (c, g) in centres.iter().zip(groups) {
        for &j in g {
            data.extend_from_slice(&sub(coords[j], *c));
        }
    }
    let rows = data.len() / 3;
    Tensor::new([rows, 3], data)
}

/// FPS centres, kNN groups, a shared MLP on (relative position, feature) and
/// a max-pool per group.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub c_in: usize,
    pub k: usize,
    mlp: Vec<Lbr>,
}

impl SetAbstraction {
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            c_in,
            k,
            mlp: lbr_stack(&format!("{name}.mlp"), &[3 + c_in, c_out, c_out]),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.mlp.iter().for_each(|l| l.specs(out));
    }

    /// Downsamples `coords` to `m` centres. `feats` (`[n × c_in]`) is
    /// required exactly when `c_in > 0`.
    pub fn forward<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        coords: &[Point3],
        feats: Option<Var<'t>>,
        m: usize,
    ) -> Result<(Vec<Point3>, Var<'t>)> {
        let idx = fps(coords, m, SeedRule::FarthestFromCentroid)?;
        let centres: Vec<Point3> = idx.iter().map(|&i| coords[i]).collect();
        let groups = knn(coords, &centres, self.k)?;
        let rel = cx.tape.constant(relative_coords(coords, &centres, &groups)?);
        let input = match (feats, self.c_in) {
            (None, 0) => rel,
            (Some(f), c) if c > 0 => {
                let flat: Vec<usize> = groups.iter().flatten().copied().collect();
                Var::concat(&[rel, f.gather_rows(&flat)?], 1)?
            }
            _ => return Err(Error::Argument("set abstraction feature/width mismatch".into())),
        };
        let h = run_stack(&self.mlp, cx, input)?;
        let c_out = h.shape()[1];
        let (pooled, _) = h.reshape([m, self.k, c_out])?.max_axis(1)?;
        Ok((centres, pooled))
    }
}

/// Vector self-attention over kNN neighbourhoods with a learned encoding of
/// relative positions, wrapped in input/output projections and a residual.
#[derive(Debug, Clone)]
pub struct PointTransformer {
    pub k: usize,
    lin_in: Linear,
    q: Linear,
    key: Linear,
    value: Linear,
    pos1: Linear,
    pos2: Linear,
    attn1: Linear,
    attn2: Linear,
    lin_out: Linear,
}

impl PointTransformer {
    pub fn new(name: &str, c: usize, k: usize) -> Self {
        let l = |s: &str, a, b| Linear::new(format!("{name}.{s}"), a, b);
        Self {
            k,
            lin_in: l("lin_in", c, c),
            q: l("q_proj", c, c),
            key: l("k_proj", c, c),
            value: l("v_proj", c, c),
            pos1: l("pos.0", 3, c),
            pos2: l("pos.1", c, c),
            attn1: l("attn.0", c, c),
            attn2: l("attn.1", c, c),
            lin_out: l("lin_out", c, c),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for l in [
            &self.lin_in,
            &self.q,
            &self.key,
            &self.value,
            &self.pos1,
            &self.pos2,
            &self.attn1,
            &self.attn2,
            &self.lin_out,
        ] {
            l.specs(out);
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, coords: &[Point3], x: Var<'t>) -> Result<Var<'t>> {
        let m = coords.len();
        let k = self.k;
        let groups = knn(coords, coords, k)?;
        let flat: Vec<usize> = groups.iter().flatten().copied().collect();
        let centre_rep: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat(i).take(k)).collect();
        // p_i - p_j
        let rel = relative_coords(coords, coords, &groups)?.map(|v| -v);
        let rel = cx.tape.constant(rel);

        let h = self.lin_in.forward(cx, x)?;
        let c = h.shape()[1];
        let q = self.q.forward(cx, h)?.gather_rows(&centre_rep)?;
        let kf = self.key.forward(cx, h)?.gather_rows(&flat)?;
        let v = self.value.forward(cx, h)?.gather_rows(&flat)?;
        let delta = self.pos2.forward(cx, self.pos1.forward(cx, rel)?.relu())?;
        let logits = self
            .attn2
            .forward(cx, self.attn1.forward(cx, q.sub(kf)?.add(delta)?)?.relu())?;
        let w = logits.reshape([m, k, c])?.softmax(1)?;
        let y = w.mul(v.add(delta)?.reshape([m, k, c])?)?.sum_axis(1)?;
        self.lin_out.forward(cx, y)?.add(x)
    }
}

/// SAb → PT → SAb → PT: `N × 3` to `N/16 × C`.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    sab1: SetAbstraction,
    pt1: PointTransformer,
    sab2: SetAbstraction,
    pt2: PointTransformer,
    n: usize,
}

impl PointEncoder {
    pub fn new(name: &str, n: usize, c: usize, k: usize) -> Self {
        Self {
            sab1: SetAbstraction::new(&format!("{name}.sab1"), 0, c / 2, k),
            pt1: PointTransformer::new(&format!("{name}.pt1"), c / 2, k),
            sab2: SetAbstraction::new(&format!("{name}.sab2"), c / 2, c, k),
            pt2: PointTransformer::new(&format!("{name}.pt2"), c, k),
            n,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.sab1.specs(out);
        self.pt1.specs(out);
        self.sab2.specs(out);
        self.pt2.specs(out);
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, points: &[Point3]) -> Result<Var<'t>> {
        if points.len() != self.n {
            return Err(Error::Argument(format!(
                "point encoder expects {} points, got {}",
                self.n,
                points.len()
            )));
        }
        let (c1, f1) = self.sab1.forward(cx, points, None, self.n / 4)?;
        let f1 = self.pt1.forward(cx, &c1, f1)?;
        let (c2, f2) = self.sab2.forward(cx, &c1, Some(f1), self.n / 16)?;
        self.pt2.forward(cx, &c2, f2)
    }
}

/// Gather index for a 3×3 convolution with edge-replicate padding over a
/// row-major `[h·w × c]` feature map. Returns the index and output size.
fn conv3x3_index(h: usize, w: usize, c: usize, stride: usize) -> (Vec<usize>, usize, usize) {
    let ho = h.div_ceil(stride);
    let wo = w.div_ceil(stride);
    let mut idx = Vec::with_capacity(ho * wo * 9 * c);
    for oy in 0..ho {
        for ox in 0..wo {
            for dy in 0..3 {
                let sy = (oy * stride + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let sx = (ox * stride + dx).saturating_sub(1).min(w - 1);
                    let base = (sy * w + sx) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    (idx, ho, wo)
}

fn subsample_rows(h: usize, w: usize, stride: usize) -> Vec<usize> {
    let mut rows = Vec::new();
    for oy in (0..h).step_by(stride) {
        for ox in (0..w).step_by(stride) {
            rows.push(oy * w + ox);
        }
    }
    rows
}

#[derive(Debug, Clone)]
struct Conv3x3 {
    lin: Linear,
    c_in: usize,
    stride: usize,
}

impl Conv3x3 {
    fn new(name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            lin: Linear::new(name, 9 * c_in, c_out),
            c_in,
            stride,
        }
    }

    fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>, h: usize, w: usize) -> Result<(Var<'t>, usize, usize)> {
        let (idx, ho, wo) = conv3x3_index(h, w, self.c_in, self.stride);
        let cols = x.gather_flat(Rc::new(idx), vec![ho * wo, 9 * self.c_in])?;
        Ok((self.lin.forward(cx, cols)?, ho, wo))
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv3x3,
    bn1: BatchNorm,
    conv2: Conv3x3,
    bn2: BatchNorm,
    down: Option<(Linear, BatchNorm)>,
    stride: usize,
}

impl ResBlock {
    fn new(name: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        let down = (stride != 1 || c_in != c_out).then(|| {
            (
                Linear::new(format!("{name}.down"), c_in, c_out),
                BatchNorm::new(format!("{name}.down_bn"), c_out),
            )
        });
        Self {
            conv1: Conv3x3::new(&format!("{name}.conv1"), c_in, c_out, stride),
            bn1: BatchNorm::new(format!("{name}.bn1"), c_out),
            conv2: Conv3x3::new(&format!("{name}.conv2"), c_out, c_out, 1),
            bn2: BatchNorm::new(format!("{name}.bn2"), c_out),
            down,
            stride,
        }
    }

    fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.lin.specs(out);
        self.bn1.specs(out);
        self.conv2.lin.specs(out);
        self.bn2.specs(out);
        if let Some((l, b)) = &self.down {
            l.specs(out);
            b.specs(out);
        }
    }

    fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>, h: usize, w: usize) -> Result<(Var<'t>, usize, usize)> {
        let (y, ho, wo) = self.conv1.forward(cx, x, h, w)?;
        let y = self.bn1.forward(cx, y)?.relu();
        let (y, _, _) = self.conv2.forward(cx, y, ho, wo)?;
        let y = self.bn2.forward(cx, y)?;
        let shortcut = match &self.down {
            Some((lin, bn)) => {
                let s = x.gather_rows(&subsample_rows(h, w, self.stride))?;
                bn.forward(cx, lin.forward(cx, s)?)?
            }
            None => x,
        };
        Ok((y.add(shortcut)?.relu(), ho, wo))
    }
}

/// Four stride-2 stages of two residual blocks each, widths C/8, C/4, C/2, C:
/// `side × side × 3` to `(side/16)² × C`.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    blocks: Vec<ResBlock>,
    side: usize,
}

impl ImageEncoder {
    pub fn new(name: &str, side: usize, c: usize) -> Self {
        let widths = [3, c / 8, c / 4, c / 2, c];
        let mut blocks = Vec::new();
        for s in 0..4 {
            blocks.push(ResBlock::new(&format!("{name}.stage{s}.block0"), widths[s], widths[s + 1], 2));
            blocks.push(ResBlock::new(&format!("{name}.stage{s}.block1"), widths[s + 1], widths[s + 1], 1));
        }
        Self { blocks, side }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.blocks.iter().for_each(|b| b.specs(out));
    }

    /// `image` is `[side, side, 3]`, row-major, channels last.
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, image: &Tensor) -> Result<Var<'t>> {
        if image.shape() != [self.side, self.side, 3] {
            return Err(Error::Argument(format!(
                "image encoder expects [{s}, {s}, 3], got {:?}",
                image.shape(),
                s = self.side
            )));
        }
        let mut x = cx.tape.constant(image.clone().reshape([self.side * self.side, 3])?);
        let (mut h, mut w) = (self.side, self.side);
        for b in &self.blocks {
            (x, h, w) = b.forward(cx, x, h, w)?;
        }
        Ok(x)
    }
}
