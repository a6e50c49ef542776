//! Parameter storage, the forward context and basic layers.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Buffers (running statistics) are stored but never optimized.
    pub buffer: bool,
}

/// Named parameters and buffers of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ParamStore {
    /// Initializes every spec; each tensor draws from its own stream keyed by
    /// name, so adding a layer never changes the others.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut store = Self::default();
        for s in specs {
            let numel: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::Uniform { fan_in } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&s.name));
                    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..numel).map(|_| rng.gen_range(-b..b)).collect()
                }
            };
            let t = Tensor::new(s.shape.clone(), data).expect("spec shape");
            if s.buffer {
                store.buffers.insert(s.name.clone(), t);
            } else {
                store.params.insert(s.name.clone(), t);
            }
        }
        store
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.params.get_mut(name) {
            Some(t) => Some(t),
            None => self.buffers.get_mut(name),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Copies every tensor under prefix `from` onto the same path under `to`.
    pub fn tie(&mut self, from: &str, to: &str) {
        for map in [&mut self.params, &mut self.buffers] {
            let copies: Vec<(String, Tensor)> = map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(from).map(|rest| (format!("{to}{rest}"), v.clone())))
                .collect();
            for (k, v) in copies {
                if map.contains_key(&k) {
                    map.insert(k, v);
                }
            }
        }
    }

    /// Everything, parameters and buffers, for archiving.
    pub fn to_entries(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Rebuilds a store from archived entries, checking them against the
    /// model's specs. Fails on the first (sorted) missing or mis-shaped name.
    pub fn from_entries(specs: &[ParamSpec], entries: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut store = Self::default();
        for s in sorted {
            let t = entries.get(&s.name).ok_or_else(|| Error::Checkpoint {
                name: s.name.clone(),
                reason: "missing from checkpoint".into(),
            })?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Checkpoint {
                    name: s.name.clone(),
                    reason: format!("shape {:?} in checkpoint, model expects {:?}", t.shape(), s.shape),
                });
            }
            let map = if s.buffer { &mut store.buffers } else { &mut store.params };
            map.insert(s.name.clone(), t.clone());
        }
        Ok(store)
    }

    /// Folds batch statistics into running buffers with momentum.
    pub fn update_running(&mut self, stats: &[BnStat]) {
        for s in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                if let Some(buf) = self.buffers.get_mut(&format!("{}.{suffix}", s.prefix)) {
                    for (r, b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                    }
                }
            }
        }
    }
}

/// Batch statistics observed by one batch-norm layer during a forward pass.
#[derive(Debug, Clone)]
pub struct BnStat {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Forward-pass context: binds parameters to tape variables.
pub struct Ctx<'t, 'p> {
    pub tape: &'t Tape,
    store: &'p ParamStore,
    train: bool,
    vars: RefCell<BTreeMap<String, Var<'t>>>,
    stats: RefCell<Vec<BnStat>>,
}

impl<'t, 'p> Ctx<'t, 'p> {
    /// Parameters become gradient leaves; batch norm uses batch statistics.
    pub fn train(tape: &'t Tape, store: &'p ParamStore) -> Self {
        Self::build(tape, store, true)
    }

    /// Parameters are constants; batch norm uses running statistics.
    pub fn eval(tape: &'t Tape, store: &'p ParamStore) -> Self {
        Self::build(tape, store, false)
    }

    fn build(tape: &'t Tape, store: &'p ParamStore, train: bool) -> Self {
        Self {
            tape,
            store,
            train,
            vars: RefCell::new(BTreeMap::new()),
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Uses `var` for parameter `name` instead of the stored value.
    pub fn bind(&self, name: &str, var: Var<'t>) {
        self.vars.borrow_mut().insert(name.to_string(), var);
    }

    pub fn param(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(*v);
        }
        let t = self
            .store
            .params
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))?
            .clone();
        let v = if self.train { self.tape.leaf(t) } else { self.tape.constant(t) };
        self.vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'p Tensor> {
        self.store
            .buffers
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown buffer `{name}`")))
    }

    /// Parameters touched so far, by name.
    pub fn bound(&self) -> BTreeMap<String, Var<'t>> {
        self.vars.borrow().clone()
    }

    pub fn take_stats(&self) -> Vec<BnStat> {
        std::mem::take(&mut self.stats.borrow_mut())
    }

    fn push_stat(&self, s: BnStat) {
        self.stats.borrow_mut().push(s);
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = self.fan_in;
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: vec![self.fan_in, self.fan_out],
            init: Init::Uniform { fan_in },
            buffer: false,
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: vec![self.fan_out],
            init: Init::Uniform { fan_in },
            buffer: false,
        });
    }

    /// `x [rows × fan_in] → [rows × fan_out]`.
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let w = cx.param(&format!("{}.weight", self.name))?;
        let b = cx.param(&format!("{}.bias", self.name))?;
        x.matmul(w)?.add(b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub c: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        Self { name: name.into(), c }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for (suffix, init, buffer) in [
            ("gain", Init::Ones, false),
            ("bias", Init::Zeros, false),
            ("running_mean", Init::Zeros, true),
            ("running_var", Init::Ones, true),
        ] {
            out.push(ParamSpec {
                name: format!("{}.{suffix}", self.name),
                shape: vec![self.c],
                init,
                buffer,
            });
        }
    }

    /// Normalizes over the rows of `x [rows × c]`.
    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let g = cx.param(&format!("{}.gain", self.name))?;
        let b = cx.param(&format!("{}.bias", self.name))?;
        if cx.is_train() {
            let (y, mean, var) = x.batch_norm_train(g, b, NORM_EPS)?;
            cx.push_stat(BnStat {
                prefix: self.name.clone(),
                mean,
                var,
            });
            Ok(y)
        } else {
            let m = cx.buffer(&format!("{}.running_mean", self.name))?;
            let v = cx.buffer(&format!("{}.running_var", self.name))?;
            x.batch_norm_eval(g, b, m.data(), v.data(), NORM_EPS)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub c: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        Self { name: name.into(), c }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for (suffix, init) in [("gain", Init::Ones), ("bias", Init::Zeros)] {
            out.push(ParamSpec {
                name: format!("{}.{suffix}", self.name),
                shape: vec![self.c],
                init,
                buffer: false,
            });
        }
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let g = cx.param(&format!("{}.gain", self.name))?;
        let b = cx.param(&format!("{}.bias", self.name))?;
        x.layer_norm(g, b, NORM_EPS)
    }
}

/// Linear, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct Lbr {
    pub linear: Linear,
    pub bn: BatchNorm,
}

impl Lbr {
    pub fn new(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            linear: Linear::new(format!("{name}.linear"), fan_in, fan_out),
            bn: BatchNorm::new(format!("{name}.bn"), fan_out),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.linear.specs(out);
        self.bn.specs(out);
    }

    pub fn forward<'t>(&self, cx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.linear.forward(cx, x)?;
        Ok(self.bn.forward(cx, y)?.relu())
    }
}

/// A chain of LBR layers with the given widths.
pub fn lbr_stack(name: &str, widths: &[usize]) -> Vec<Lbr> {
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Lbr::new(&format!("{name}.{i}"), w[0], w[1]))
        .collect()
}

pub fn run_stack<'t>(layers: &[Lbr], cx: &Ctx<'t, '_>, mut x: Var<'t>) -> Result<Var<'t>> {
    for l in layers {
        x = l.forward(cx, x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    #[test]
    fn init_is_keyed_by_name() {
        let a = Linear::new("a", 4, 3);
        let b = Linear::new("b", 4, 3);
        let mut s1 = Vec::new();
        a.specs(&mut s1);
        let mut s2 = Vec::new();
        b.specs(&mut s2);
        a.specs(&mut s2);
        let p1 = ParamStore::init(&s1, 7);
        let p2 = ParamStore::init(&s2, 7);
        assert_eq!(p1.get("a.weight"), p2.get("a.weight"));
        assert_ne!(p2.get("a.weight"), p2.get("b.weight"));
        // fan_in 4 bounds weights by 1/2
        assert!(p1.get("a.weight").unwrap().data().iter().all(|x| x.abs() < 0.5));
    }

    #[test]
    fn checkpoint_mismatch_names_the_parameter() {
        let mut specs = Vec::new();
        Lbr::new("l", 2, 3).specs(&mut specs);
        let store = ParamStore::init(&specs, 0);
        let mut entries = store.to_entries();
        assert_eq!(ParamStore::from_entries(&specs, &entries).unwrap(), store);
        entries.insert("l.linear.weight".into(), Tensor::zeros([3, 3]));
        match ParamStore::from_entries(&specs, &entries) {
            Err(Error::Checkpoint { name, .. }) => assert_eq!(name, "l.linear.weight"),
            other => panic!("{other:?}"),
        }
        entries.remove("l.bn.bias");
        match ParamStore::from_entries(&specs, &entries) {
            Err(Error::Checkpoint { name, .. }) => assert_eq!(name, "l.bn.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut specs = Vec::new();
        let bn = BatchNorm::new("bn", 2);
        bn.specs(&mut specs);
        let mut store = ParamStore::init(&specs, 0);
        let tape = Tape::new(Precision::F64);
        let cx = Ctx::train(&tape, &store);
        let x = tape.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        bn.forward(&cx, x).unwrap();
        let stats = cx.take_stats();
        store.update_running(&stats);
        assert_eq!(store.get("bn.running_mean").unwrap().data(), &[0.2, 0.4]);
        let rv = store.get("bn.running_var").unwrap().data();
        assert!((rv[0] - (0.9 + 0.1)).abs() < 1e-12 && (rv[1] - (0.9 + 0.4)).abs() < 1e-12);

        let tape = Tape::new(Precision::F64);
        let cx = Ctx::eval(&tape, &store);
        let y = bn.forward(&cx, tape.constant(Tensor::new([1, 2], vec![0.2, 0.4]).unwrap())).unwrap();
        assert!(y.value().data().iter().all(|v| v.abs() < 1e-12));
    }
}
