//! Finite-difference checks over every differentiable primitive and the
//! main network pieces, shared by the `gradcheck` command and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::CrossAttention;
use super::generator::GeneratorBlock;
use super::nn::{Ctx, ParamStore, NORM_EPS};
use super::{loss, DuInNet, LossMode, ModelConfig};
use crate::datasetgen::fixtures::overfit_samples;
use crate::error::Result;
use crate::tensor::gradcheck::{check, GradCheck};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Looser bound for the full loss, whose nearest-neighbour terms are only
/// piecewise smooth.
pub const TOL_FULL_LOSS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    pub report: GradCheck,
    pub tol: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tol)
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

fn run_case(inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>) -> Result<GradCheck> {
    check(inputs, STEP, 64, f)
}

/// Checks each tensor primitive on small random inputs.
pub fn primitives(seed: u64) -> Result<Vec<SuiteRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| rand_t(s, &mut rng, -1.0, 1.0);
    let a34 = r(&[3, 4]);
    let b34 = r(&[3, 4]);
    let b4 = r(&[4]);
    let b45 = r(&[4, 5]);
    let c24 = r(&[2, 4]);
    let g4 = r(&[4]);
    let h4 = r(&[4]);
    let q53 = r(&[5, 3]);
    let pos: Tensor = a34.map(|x| x.abs() + 0.5);
    // a readout weight keeps sums of normalized outputs from being constant
    let w34 = r(&[3, 4]);
    let w54 = r(&[5, 4]);

    let mut rows = Vec::new();
    let mut push = |name: &str, rep: GradCheck| {
        rows.push(SuiteRow {
            name: format!("primitive/{name}"),
            report: rep,
            tol: TOL,
        })
    };
    push("add_broadcast", run_case(&[a34.clone(), b4.clone()], |_, v| v[0].add(v[1]))?);
    push("sub", run_case(&[a34.clone(), b34.clone()], |_, v| v[0].sub(v[1]))?);
    push("mul", run_case(&[a34.clone(), b34.clone()], |_, v| v[0].mul(v[1]))?);
    push("scale", run_case(&[a34.clone()], |_, v| Ok(v[0].scale(-2.5)))?);
    push("matmul", run_case(&[a34.clone(), b45.clone()], |_, v| v[0].matmul(v[1]))?);
    push("transpose", run_case(&[a34.clone()], |t, v| {
        let w = t.constant(Tensor::new([4, 3], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect())?);
        v[0].transpose()?.mul(w)
    })?);
    push("reshape", run_case(&[a34.clone()], |t, v| {
        let w = t.constant(Tensor::new([6, 2], (0..12).map(|i| i as f64 * 0.2 - 1.0).collect())?);
        v[0].reshape([6, 2])?.mul(w)
    })?);
    push("concat", run_case(&[a34.clone(), c24.clone(), w54.clone()], |_, v| {
        Var::concat(&[v[0], v[1]], 0)?.mul(v[2])
    })?);
    push("relu", run_case(&[a34.clone()], |_, v| Ok(v[0].relu()))?);
    push("sqrt", run_case(&[pos.clone()], |_, v| v[0].sqrt())?);
    push("softmax", run_case(&[a34.clone(), w34.clone()], |_, v| v[0].softmax(1)?.mul(v[1]))?);
    push("layer_norm", run_case(&[a34.clone(), g4.clone(), h4.clone(), w34.clone()], |_, v| {
        v[0].layer_norm(v[1], v[2], NORM_EPS)?.mul(v[3])
    })?);
    push("batch_norm_train", run_case(&[a34.clone(), g4.clone(), h4.clone(), w34.clone()], |_, v| {
        v[0].batch_norm_train(v[1], v[2], NORM_EPS)?.0.mul(v[3])
    })?);
    push("gather_rows", run_case(&[a34.clone()], |_, v| {
        let g = v[0].gather_rows(&[2, 0, 2, 1])?;
        g.mul(g)
    })?);
    push("gather_flat", run_case(&[a34.clone()], |_, v| {
        let g = v[0].gather_flat(std::rc::Rc::new(vec![11, 0, 5, 5, 3, 7]), vec![2, 3])?;
        g.mul(g)
    })?);
    push("slice_cols", run_case(&[a34.clone()], |_, v| {
        let s = v[0].slice_cols(1, 3)?;
        s.mul(s)
    })?);
    push("sum_axis", run_case(&[a34.clone()], |_, v| {
        let s = v[0].sum_axis(0)?;
        s.mul(s)
    })?);
    push("mean_axis", run_case(&[a34.clone()], |_, v| {
        let s = v[0].mean_axis(1)?;
        s.mul(s)
    })?);
    push("mean_all", run_case(&[a34.clone()], |_, v| {
        let s = v[0].mean_all();
        s.mul(s)
    })?);
    push("max_axis", run_case(&[a34.clone()], |_, v| {
        let s = v[0].max_axis(0)?.0;
        s.mul(s)
    })?);
    push("min_axis", run_case(&[a34.clone()], |_, v| {
        let s = v[0].min_axis(1)?.0;
        s.mul(s)
    })?);
    push("pairwise_sq_dist", run_case(&[q53.clone(), r(&[4, 3])], |_, v| v[0].pairwise_sq_dist(v[1]))?);
    push("chamfer_l1", run_case(&[q53, r(&[6, 3])], |_, v| super::chamfer_l1_var(v[0], v[1]))?);
    Ok(rows)
}

/// Checks a module's output against all of its trainable parameters and the
/// given feature inputs.
fn module_check<F>(store: &ParamStore, train: bool, features: Vec<Tensor>, max_entries: usize, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&Ctx<'t, '_>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let names: Vec<String> = store.params().keys().cloned().collect();
    let nf = features.len();
    let mut inputs = features;
    inputs.extend(names.iter().map(|n| store.get(n).expect("listed param").clone()));
    check(&inputs, STEP, max_entries, |tape, vars| {
        let cx = if train { Ctx::train(tape, store) } else { Ctx::eval(tape, store) };
        for (n, v) in names.iter().zip(&vars[nf..]) {
            cx.bind(n, *v);
        }
        f(&cx, &vars[..nf])
    })
}

pub fn cross_attention(seed: u64) -> Result<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ca = CrossAttention::new("ca", 8, 2, 2);
    let mut specs = Vec::new();
    ca.specs(&mut specs);
    let store = ParamStore::init(&specs, seed);
    let feats = vec![rand_t(&[5, 8], &mut rng, -1.0, 1.0), rand_t(&[7, 8], &mut rng, -1.0, 1.0)];
    let w = rand_t(&[5, 8], &mut rng, -1.0, 1.0);
    let rep = module_check(&store, true, feats, 40, |cx, v| {
        let w = cx.tape.constant(w.clone());
        ca.forward(cx, v[0], v[1])?.mul(w)
    })?;
    Ok(SuiteRow {
        name: "module/cross_attention".into(),
        report: rep,
        tol: TOL,
    })
}

pub fn generator_block(seed: u64) -> Result<SuiteRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blk = GeneratorBlock::new("blk", 8, 6);
    let mut specs = Vec::new();
    blk.specs(&mut specs);
    let store = ParamStore::init(&specs, seed);
    let feats = vec![rand_t(&[5, 8], &mut rng, -1.0, 1.0)];
    let rep = module_check(&store, true, feats, 30, |cx, v| {
        let y = blk.forward(cx, v[0])?;
        y.mul(y)
    })?;
    Ok(SuiteRow {
        name: "module/generator_block".into(),
        report: rep,
        tol: TOL,
    })
}

/// The complete mini-profile loss on one fixture shape, differentiated
/// with respect to every trainable parameter. `train` selects batch
/// statistics (the training objective) or running statistics in the norms.
pub fn full_loss(seed: u64, mode: LossMode, train: bool, max_entries: usize) -> Result<SuiteRow> {
    let cfg = ModelConfig::mini();
    let net = DuInNet::new(cfg)?;
    let store = net.init(seed);
    let sample = overfit_samples(&cfg, seed)?.swap_remove(0);
    let gt = Tensor::new([sample.target.len(), 3], sample.target.iter().flatten().copied().collect())?;
    let rep = module_check(&store, train, Vec::new(), max_entries, |cx, _| {
        let out = net.forward(cx, &sample.input, &sample.image)?;
        let gt = cx.tape.constant(gt.clone());
        loss(out.gen1, out.gen2, gt, mode)
    })?;
    Ok(SuiteRow {
        name: format!(
            "model/full_loss_{}_{}",
            if mode == LossMode::Denoising { "denoising" } else { "standard" },
            if train { "batch_stats" } else { "running_stats" }
        ),
        report: rep,
        tol: TOL_FULL_LOSS,
    })
}

/// Everything: primitives, cross-attention, one generator block and the
/// full loss under both norm modes.
pub fn run(seed: u64, full_entries: usize) -> Result<Vec<SuiteRow>> {
    let mut rows = primitives(seed)?;
    rows.push(cross_attention(seed)?);
    rows.push(generator_block(seed)?);
    rows.push(full_loss(seed, LossMode::Standard, true, full_entries)?);
    rows.push(full_loss(seed, LossMode::Standard, false, full_entries)?);
    Ok(rows)
}

pub fn format_rows(rows: &[SuiteRow]) -> String {
    let mut s = String::from("check\tmax_rel_err\ttol\tentries\tresult\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.3e}\t{:.0e}\t{}\t{}\n",
            r.name,
            r.report.max_rel_err,
            r.tol,
            r.report.checked,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    s
}
