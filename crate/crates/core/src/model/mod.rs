//! The dual-modality completion network.
//!
//! A partial cloud and a rendered image are encoded separately, exchanged
//! through two attention paths, decoded block-wise into a coarse cloud and
//! finally merged with the input by farthest point sampling.
//!
//! Parameters are addressed by dotted paths such as
//! `dfi.pc_path.ca1.q_proj.weight` or `apg.img_block3.map.0.bn.gain`.

pub mod attention;
pub mod config;
pub mod encoders;
pub mod generator;
pub mod gradsuite;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod train;

pub use attention::{CrossAttention, DualFeatureInteractor};
pub use config::{ModelConfig, Profile, Task};
pub use encoders::{ImageEncoder, PointEncoder};
pub use generator::{assemble_outputs, AdaptivePointGenerator};
pub use loss::{chamfer_l1_var, loss, LossMode};
pub use nn::{Ctx, ParamSpec, ParamStore};

use crate::error::Result;
use crate::geometry::{resample_to, Point3, PointCloud};
use crate::tensor::{Precision, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct DuInNet {
    pub cfg: ModelConfig,
    pub point_encoder: PointEncoder,
    pub image_encoder: ImageEncoder,
    pub dfi: DualFeatureInteractor,
    pub apg: AdaptivePointGenerator,
}

pub struct ForwardOut<'t> {
    pub f_pc: Var<'t>,
    pub f_img: Var<'t>,
    /// Generator output, `N × 3`.
    pub gen1: Var<'t>,
    /// Generator output merged with the input, `N × 3`.
    pub gen2: Var<'t>,
}

impl DuInNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            point_encoder: PointEncoder::new("point_encoder", cfg.n, cfg.c, cfg.k),
            image_encoder: ImageEncoder::new("image_encoder", cfg.image_side, cfg.c),
            dfi: DualFeatureInteractor::new("dfi", cfg.c, cfg.heads, cfg.ffn_mult),
            apg: AdaptivePointGenerator::new("apg", cfg.c, cfg.block_points, cfg.n_pc_blocks(), cfg.n_img_blocks),
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.point_encoder.specs(&mut out);
        self.image_encoder.specs(&mut out);
        self.dfi.specs(&mut out);
        self.apg.specs(&mut out);
        out
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        ParamStore::init(&self.specs(), seed)
    }

    /// `input` must hold exactly `N` points (see [`prepare_input`]); `image`
    /// is `[side, side, 3]`.
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, input: &[Point3], image: &Tensor) -> Result<ForwardOut<'t>> {
        let f_pc = self.point_encoder.forward(cx, input)?;
        let f_img = self.image_encoder.forward(cx, image)?;
        let (pc_fu, img_fu) = self.dfi.forward(cx, f_pc, f_img)?;
        let gen1 = self.apg.forward(cx, pc_fu, img_fu)?;
        let gen2 = assemble_outputs(gen1, input)?;
        Ok(ForwardOut {
            f_pc,
            f_img,
            gen1,
            gen2,
        })
    }

    /// Inference with running statistics; returns the assembled cloud.
    pub fn complete(&self, store: &ParamStore, partial: &PointCloud, image: &Tensor, seed: u64) -> Result<PointCloud> {
        let input = prepare_input(partial, self.cfg.n, seed)?;
        let tape = Tape::new(Precision::F32);
        let cx = Ctx::eval(&tape, store);
        let out = self.forward(&cx, &input, image)?;
        let mut cloud = PointCloud::from_flat(out.gen2.value().data())?;
        cloud.meta = partial.meta.clone();
        Ok(cloud)
    }
}

/// Resamples a partial cloud to the network's input size.
pub fn prepare_input(partial: &PointCloud, n: usize, seed: u64) -> Result<Vec<Point3>> {
    Ok(resample_to(partial, n, seed)?.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;

    #[test]
    fn mini_forward_shapes_and_block_independence() {
        let cfg = ModelConfig::mini();
        let net = DuInNet::new(cfg).unwrap();
        let mut store = net.init(0);
        let input = deterministic_points(cfg.n, 1);
        let image = Tensor::full([32, 32, 3], 0.25);
        let run = |store: &ParamStore| {
            let tape = Tape::new(Precision::F64);
            let cx = Ctx::train(&tape, store);
            let o = net.forward(&cx, &input, &image).unwrap();
            assert_eq!(o.f_pc.shape(), vec![16, 32]);
            assert_eq!(o.f_img.shape(), vec![4, 32]);
            assert_eq!(o.gen2.shape(), vec![cfg.n, 3]);
            o.gen1.value().as_ref().clone()
        };
        let before = run(&store);
        assert_eq!(before.shape(), &[cfg.n, 3]);
        // perturb block 1 only
        store.get_mut("apg.pc_block1.coords.bias").unwrap().data_mut()[0] += 0.5;
        let after = run(&store);
        let bp = cfg.block_points;
        for r in 0..cfg.n {
            let changed = before.row(r) != after.row(r);
            assert_eq!(changed, (bp..2 * bp).contains(&r), "row {r}");
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = DuInNet::new(ModelConfig::mini()).unwrap();
        let specs = net.specs();
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        let n = names.len();
        names.dedup();
        assert_eq!(n, names.len());
        assert!(names.contains(&"dfi.pc_path.ca1.q_proj.weight"));
    }
}
