//! Multi-head cross attention and the dual feature interactor.

use super::nn::{Ctx, LayerNorm, Linear, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Attention with queries from one feature set and keys/values from another,
/// followed by residual + norm and a feed-forward residual + norm.
///
/// Heads split the projected width evenly; each head is scaled by
/// `1/√(C/heads)` and head outputs are concatenated without a merge
/// projection.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub c: usize,
    pub heads: usize,
    q_proj: Linear,
    k_proj: Linear,
    v_proj: Linear,
    norm1: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    norm2: LayerNorm,
}

pub struct AttentionOutput<'t> {
    pub out: Var<'t>,
    /// Per head, `[M × L]` attention weights.
    pub weights: Vec<Tensor>,
}

impl CrossAttention {
    pub fn new(name: &str, c: usize, heads: usize, ffn_mult: usize) -> Self {
        let l = |s: &str, a, b| Linear::new(format!("{name}.{s}"), a, b);
        Self {
            c,
            heads,
            q_proj: l("q_proj", c, c),
            k_proj: l("k_proj", c, c),
            v_proj: l("v_proj", c, c),
            norm1: LayerNorm::new(format!("{name}.norm1"), c),
            ffn1: l("ffn.0", c, ffn_mult * c),
            ffn2: l("ffn.1", ffn_mult * c, c),
            norm2: LayerNorm::new(format!("{name}.norm2"), c),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for l in [&self.q_proj, &self.k_proj, &self.v_proj] {
            l.specs(out);
        }
        self.norm1.specs(out);
        self.ffn1.specs(out);
        self.ffn2.specs(out);
        self.norm2.specs(out);
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, q_src: Var<'t>, kv_src: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(cx, q_src, kv_src)?.out)
    }

    pub fn forward_with_weights<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        q_src: Var<'t>,
        kv_src: Var<'t>,
    ) -> Result<AttentionOutput<'t>> {
        let (qs, ks) = (q_src.shape(), kv_src.shape());
        if qs.len() != 2 || ks.len() != 2 || qs[1] != self.c || ks[1] != self.c {
            return Err(Error::Dimension {
                op: "cross_attention",
                lhs: qs,
                rhs: ks,
            });
        }
        if self.c % self.heads != 0 {
            return Err(Error::Config(format!("width {} not divisible by {} heads", self.c, self.heads)));
        }
        let q = self.q_proj.forward(cx, q_src)?;
        let k = self.k_proj.forward(cx, kv_src)?;
        let v = self.v_proj.forward(cx, kv_src)?;
        let dh = self.c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(a, b)?;
            let kh = k.slice_cols(a, b)?;
            let vh = v.slice_cols(a, b)?;
            let w = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
            weights.push(w.value().as_ref().clone());
            heads.push(w.matmul(vh)?);
        }
        let attn = if heads.len() == 1 { heads[0] } else { Var::concat(&heads, 1)? };
        let mid = self.norm1.forward(cx, q.add(attn)?)?;
        let ff = self.ffn2.forward(cx, self.ffn1.forward(cx, mid)?.relu())?;
        let out = self.norm2.forward(cx, mid.add(ff)?)?;
        Ok(AttentionOutput { out, weights })
    }
}

/// One interaction path: cross attention to the other modality, self
/// attention, then cross attention back to the path's own input.
#[derive(Debug, Clone)]
pub struct InteractionPath {
    ca1: CrossAttention,
    sa: CrossAttention,
    ca2: CrossAttention,
}

impl InteractionPath {
    pub fn new(name: &str, c: usize, heads: usize, ffn_mult: usize) -> Self {
        Self {
            ca1: CrossAttention::new(&format!("{name}.ca1"), c, heads, ffn_mult),
            sa: CrossAttention::new(&format!("{name}.sa"), c, heads, ffn_mult),
            ca2: CrossAttention::new(&format!("{name}.ca2"), c, heads, ffn_mult),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.ca1.specs(out);
        self.sa.specs(out);
        self.ca2.specs(out);
    }

    /// Every attention layer's weights, in layer order then head order.
    pub fn forward_with_weights<'t>(
        &self,
        cx: &Ctx<'t, '_>,
        own: Var<'t>,
        other: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Tensor>)> {
        let a = self.ca1.forward_with_weights(cx, own, other)?;
        let b = self.sa.forward_with_weights(cx, a.out, a.out)?;
        let c = self.ca2.forward_with_weights(cx, b.out, own)?;
        let weights = [a.weights, b.weights, c.weights].concat();
        Ok((c.out, weights))
    }
}

/// Two interaction paths with separate parameters, one per modality.
#[derive(Debug, Clone)]
pub struct DualFeatureInteractor {
    pub pc_path: InteractionPath,
    pub img_path: InteractionPath,
}

pub const PC_PATH: &str = "pc_path";
pub const IMG_PATH: &str = "img_path";

impl DualFeatureInteractor {
    pub fn new(name: &str, c: usize, heads: usize, ffn_mult: usize) -> Self {
        Self {
            pc_path: InteractionPath::new(&format!("{name}.{PC_PATH}"), c, heads, ffn_mult),
            img_path: InteractionPath::new(&format!("{name}.{IMG_PATH}"), c, heads, ffn_mult),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.pc_path.specs(out);
        self.img_path.specs(out);
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, f_pc: Var<'t>, f_img: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (pc, _) = self.pc_path.forward_with_weights(cx, f_pc, f_img)?;
        let (img, _) = self.img_path.forward_with_weights(cx, f_img, f_pc)?;
        Ok((pc, img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nn::ParamStore;
    use crate::tensor::gradcheck;
    use crate::tensor::{Precision, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new([rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn block(c: usize, heads: usize) -> (CrossAttention, ParamStore, Vec<ParamSpec>) {
        let ca = CrossAttention::new("ca", c, heads, 2);
        let mut specs = Vec::new();
        ca.specs(&mut specs);
        let store = ParamStore::init(&specs, 11);
        (ca, store, specs)
    }

    #[test]
    fn single_key_reduces_to_value_residual() {
        let (ca, store, _) = block(8, 2);
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::eval(&tape, &store);
        let q = tape.constant(rand_t(3, 8, 1));
        let kv = tape.constant(rand_t(1, 8, 2));
        let r = ca.forward_with_weights(&cx, q, kv).unwrap();
        assert!(r.weights.iter().all(|w| w.data().iter().all(|&x| x == 1.0)));
        // reference: norm2(mid + ffn(mid)), mid = norm1(Q + V_row)
        let qp = ca.q_proj.forward(&cx, q).unwrap();
        let vrow = ca.v_proj.forward(&cx, kv).unwrap();
        let mid = ca.norm1.forward(&cx, qp.add(vrow.reshape([8]).unwrap()).unwrap()).unwrap();
        let ff = ca.ffn2.forward(&cx, ca.ffn1.forward(&cx, mid).unwrap().relu()).unwrap();
        let want = ca.norm2.forward(&cx, mid.add(ff).unwrap()).unwrap();
        assert!(r.out.value().max_abs_diff(&want.value()) < 1e-12);
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let (ca, store, _) = block(8, 2);
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::eval(&tape, &store);
        let r = ca.forward(&cx, tape.constant(rand_t(3, 8, 1)), tape.constant(rand_t(2, 6, 1)));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (ca, store, specs) = block(8, 2);
        let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
        let mut inputs = vec![rand_t(5, 8, 3), rand_t(7, 8, 4)];
        inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
        let rep = gradcheck::check(&inputs, 1e-5, 40, |tape, vars| {
            let cx = Ctx::train(tape, &store);
            for (n, v) in names.iter().zip(&vars[2..]) {
                cx.bind(n, *v);
            }
            ca.forward(&cx, vars[0], vars[1])
        })
        .unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
    }

    #[test]
    fn tied_paths_swap_outputs() {
        let dfi = DualFeatureInteractor::new("dfi", 8, 2, 2);
        let mut specs = Vec::new();
        dfi.specs(&mut specs);
        let mut store = ParamStore::init(&specs, 5);
        store.tie("dfi.pc_path.", "dfi.img_path.");
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::eval(&tape, &store);
        let a = tape.constant(rand_t(4, 8, 6));
        let b = tape.constant(rand_t(6, 8, 7));
        let (x1, y1) = dfi.forward(&cx, a, b).unwrap();
        let (x2, y2) = dfi.forward(&cx, b, a).unwrap();
        assert_eq!(x1.shape(), vec![4, 8]);
        assert_eq!(y1.shape(), vec![6, 8]);
        assert!(x1.value().max_abs_diff(&y2.value()) < 1e-12);
        assert!(y1.value().max_abs_diff(&x2.value()) < 1e-12);
    }

    #[test]
    fn zero_image_features_leave_no_value_contribution() {
        // with zero biases, V projected from zeros is zero, so CA1 output is
        // the norm/FFN pipeline applied to the query projection alone
        let (ca, mut store, specs) = block(8, 2);
        for s in &specs {
            if s.name.ends_with(".bias") {
                store.get_mut(&s.name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::eval(&tape, &store);
        let q = tape.constant(rand_t(4, 8, 8));
        let zeros = tape.constant(Tensor::zeros([6, 8]));
        let out = ca.forward(&cx, q, zeros).unwrap();
        let qp = ca.q_proj.forward(&cx, q).unwrap();
        let mid = ca.norm1.forward(&cx, qp).unwrap();
        let ff = ca.ffn2.forward(&cx, ca.ffn1.forward(&cx, mid).unwrap().relu()).unwrap();
        let want = ca.norm2.forward(&cx, mid.add(ff).unwrap()).unwrap();
        assert!(out.value().max_abs_diff(&want.value()) < 1e-12);
    }
}
