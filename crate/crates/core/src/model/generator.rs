//! Block-wise point generator and output assembly.

use super::nn::{lbr_stack, run_stack, Ctx, Lbr, Linear, ParamSpec};
use crate::error::{Error, Result};
use crate::geometry::{fps, Point3, SeedRule};
use crate::tensor::{Tensor, Var};

/// One generator block: features `[rows × C]` to `block_points × 3`.
///
/// A feature map `[rows × C/4]` from four LBR layers is mixed by a learned
/// shape weight `[block_points × rows]` and projected to coordinates.
#[derive(Debug, Clone)]
pub struct GeneratorBlock {
    map: Vec<Lbr>,
    weight: Vec<Lbr>,
    weight_out: Linear,
    coords: Linear,
}

impl GeneratorBlock {
    pub fn new(name: &str, c: usize, block_points: usize) -> Self {
        let q = c / 4;
        Self {
            map: lbr_stack(&format!("{name}.map"), &[c, 2 * c, 2 * c, 2 * c, q]),
            weight: lbr_stack(&format!("{name}.weight"), &[q, q, block_points]),
            weight_out: Linear::new(format!("{name}.weight_out"), block_points, block_points),
            coords: Linear::new(format!("{name}.coords"), q, 3),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.map.iter().for_each(|l| l.specs(out));
        self.weight.iter().for_each(|l| l.specs(out));
        self.weight_out.specs(out);
        self.coords.specs(out);
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, f: Var<'t>) -> Result<Var<'t>> {
        let fmap = run_stack(&self.map, cx, f)?;
        let w = run_stack(&self.weight, cx, fmap)?;
        let w = self.weight_out.forward(cx, w)?.transpose()?;
        self.coords.forward(cx, w.matmul(fmap)?)
    }
}

/// Point-path blocks followed by image-path blocks.
#[derive(Debug, Clone)]
pub struct AdaptivePointGenerator {
    pub pc_blocks: Vec<GeneratorBlock>,
    pub img_blocks: Vec<GeneratorBlock>,
}

impl AdaptivePointGenerator {
    pub fn new(name: &str, c: usize, block_points: usize, n_pc: usize, n_img: usize) -> Self {
        Self {
            pc_blocks: (0..n_pc)
                .map(|i| GeneratorBlock::new(&format!("{name}.pc_block{i}"), c, block_points))
                .collect(),
            img_blocks: (0..n_img)
                .map(|i| GeneratorBlock::new(&format!("{name}.img_block{i}"), c, block_points))
                .collect(),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.pc_blocks.iter().chain(&self.img_blocks).for_each(|b| b.specs(out));
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, f_pc: Var<'t>, f_img: Var<'t>) -> Result<Var<'t>> {
        let mut parts = Vec::with_capacity(self.pc_blocks.len() + self.img_blocks.len());
        for b in &self.pc_blocks {
            parts.push(b.forward(cx, f_pc)?);
        }
        for b in &self.img_blocks {
            parts.push(b.forward(cx, f_img)?);
        }
        Var::concat(&parts, 0)
    }
}

/// FPS over the partial input followed by the generated points, down to the
/// generated count. Selection indices are constants; gradients reach the
/// selected generated points only.
pub fn assemble_outputs<'t>(gen1: Var<'t>, partial: &[Point3]) -> Result<Var<'t>> {
    let shape = gen1.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Dimension {
            op: "assemble_outputs",
            lhs: shape,
            rhs: vec![0, 3],
        });
    }
    let n = shape[0];
    let all = if partial.is_empty() {
        gen1
    } else {
        let p = Tensor::new([partial.len(), 3], partial.iter().flatten().copied().collect())?;
        Var::concat(&[gen1.tape().constant(p), gen1], 0)?
    };
    let v = all.value();
    let pts: Vec<Point3> = v.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let idx = fps(&pts, n, SeedRule::FirstIndex)?;
    all.gather_rows(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;
    use crate::model::nn::ParamStore;
    use crate::tensor::{gradcheck, Precision, Tape};

    fn rand_feats(rows: usize, c: usize, seed: u64) -> Tensor {
        let pts = deterministic_points(rows * c, seed);
        Tensor::new([rows, c], pts.iter().take(rows * c).map(|p| p[0]).collect()).unwrap()
    }

    #[test]
    fn block_count_and_order() {
        let apg = AdaptivePointGenerator::new("apg", 16, 8, 2, 1);
        let mut specs = Vec::new();
        apg.specs(&mut specs);
        let store = ParamStore::init(&specs, 3);
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::train(&tape, &store);
        let f_pc = tape.constant(rand_feats(6, 16, 1));
        let f_img = tape.constant(rand_feats(4, 16, 2));
        let out = apg.forward(&cx, f_pc, f_img).unwrap();
        assert_eq!(out.shape(), vec![24, 3]);
        let only_img = apg.img_blocks[0].forward(&cx, f_img).unwrap();
        assert_eq!(&out.value().data()[48..], only_img.value().data());
    }

    #[test]
    fn point_only_generator_ignores_image_features() {
        let apg = AdaptivePointGenerator::new("apg", 16, 8, 2, 0);
        let mut specs = Vec::new();
        apg.specs(&mut specs);
        let store = ParamStore::init(&specs, 3);
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::train(&tape, &store);
        let f_pc = tape.constant(rand_feats(6, 16, 1));
        let a = apg.forward(&cx, f_pc, tape.constant(rand_feats(4, 16, 2))).unwrap();
        let b = apg.forward(&cx, f_pc, tape.constant(rand_feats(4, 16, 9))).unwrap();
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let blk = GeneratorBlock::new("b", 8, 6);
        let mut specs = Vec::new();
        blk.specs(&mut specs);
        let store = ParamStore::init(&specs, 8);
        let names: Vec<String> = specs.iter().filter(|s| !s.buffer).map(|s| s.name.clone()).collect();
        let mut inputs = vec![rand_feats(5, 8, 4)];
        inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
        let rep = gradcheck::check(&inputs, 1e-5, 30, |tape, vars| {
            let cx = Ctx::train(tape, &store);
            for (n, v) in names.iter().zip(&vars[1..]) {
                cx.bind(n, *v);
            }
            // a nonlinear readout keeps the check sensitive to every coordinate
            let y = blk.forward(&cx, vars[0])?;
            Ok(y.mul(y)?)
        })
        .unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
    }

    #[test]
    fn assembly_size_and_selection() {
        let tape = Tape::new(Precision::F64);
        let gen: Vec<f64> = deterministic_points(20, 1).into_iter().flatten().collect();
        let g = tape.leaf(Tensor::new([20, 3], gen.clone()).unwrap());
        let partial = deterministic_points(7, 2);
        let out = assemble_outputs(g, &partial).unwrap();
        assert_eq!(out.shape(), vec![20, 3]);
        // greedy replay over the concatenation
        let mut all = partial.clone();
        all.extend(gen.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        let idx = fps(&all, 20, SeedRule::FirstIndex).unwrap();
        for (r, &i) in idx.iter().enumerate() {
            assert_eq!(out.value().row(r), &all[i]);
        }
        let alone = assemble_outputs(g, &[]).unwrap();
        let gen_pts: Vec<Point3> = gen.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let idx = fps(&gen_pts, 20, SeedRule::FirstIndex).unwrap();
        assert_eq!(alone.value().row(1), &gen_pts[idx[1]]);
    }
}
