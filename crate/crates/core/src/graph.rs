//! Minimal reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! enough cached state to run its backward pass. Parameters live outside the
//! tape in a [`ParamSet`]; they are bound into a graph as leaves and their
//! gradients are copied back with [`Graph::accumulate_param_grads`].
//!
//! The bidirectional gated recurrent layer is a single fused node with a
//! hand-written backpropagation-through-time pass.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{gemm, matvec_acc, vecmat_acc, Matrix};
use crate::scalar::Scalar;

/// Bounds applied to encoder log-variances.
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 6.0;

/// A named parameter tensor with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 || n != values.len() {
            return Err(Error::input(format!(
                "tensor shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("tensor values must be finite"));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    /// `(rows, cols)`, with 1-D tensors viewed as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("tensors are rank 1 or 2"),
        }
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        let (r, c) = self.dims2();
        Matrix::from_vec(r, c, self.values.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameters with a deterministic (insertion) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::input(format!("duplicate parameter name `{name}`")));
        }
        tensor.grad = Some(vec![T::zero(); tensor.values.len()]);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Adds a tensor initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut RngState,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| T::of(rng.uniform(-scale, scale))).collect();
        self.add(name, Tensor::new(shape, values)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, Tensor::new(shape, vec![T::zero(); n])?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Ids of every parameter whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            match &mut t.grad {
                Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
                None => t.grad = Some(vec![T::zero(); t.values.len()]),
            }
        }
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        self.tensors[id.0].grad.as_deref().unwrap_or(&[])
    }

    /// Versioned binary: magic `VCPS`, `u32` version, `u32` count, then per
    /// parameter its name, rank, dims and `f32` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::format(pos as u64, "truncated parameter payload"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != PARAM_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"VCPS\""));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != PARAM_VERSION {
            return Err(Error::format(4, format!("unsupported parameter version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let nlen = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(nlen)?.to_vec())
                .map_err(|_| Error::format(0, "parameter name is not utf-8"))?;
            let rank = u32_at(take(4)?) as usize;
            if rank == 0 || rank > 2 {
                return Err(Error::format(0, format!("parameter `{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_at(take(4)?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(4 * n)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            set.add(name, Tensor::new(shape, values)?)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const PARAM_MAGIC: &[u8; 4] = b"VCPS";
const PARAM_VERSION: u32 = 1;

/// Seedable counter-based generator (ChaCha8).
#[derive(Clone, Debug)]
pub struct RngState {
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for sub-stream `stream` of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState { inner }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        use rand::Rng;
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.inner.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Supplies the standard-normal draws used by reparameterized sampling.
pub trait NoiseSource<T: Scalar> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix<T>;
}

impl<T: Scalar> NoiseSource<T> for RngState {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::of(self.normal()))
    }
}

/// All-zero noise: sampling returns the posterior mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl<T: Scalar> NoiseSource<T> for ZeroNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::zeros(rows, cols)
    }
}

/// Replays a fixed list of draws, in order.
#[derive(Clone, Debug, Default)]
pub struct FrozenNoise<T> {
    queue: VecDeque<Matrix<T>>,
}

impl<T: Scalar> FrozenNoise<T> {
    pub fn new(draws: Vec<Matrix<T>>) -> Self {
        FrozenNoise {
            queue: draws.into(),
        }
    }
}

impl<T: Scalar> NoiseSource<T> for FrozenNoise<T> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        let m = self.queue.pop_front().expect("frozen noise exhausted");
        assert_eq!(m.shape(), (rows, cols), "frozen noise shape mismatch");
        m
    }
}

/// Draws from an inner source and keeps a copy of every draw.
pub struct RecordingNoise<'a, T> {
    pub inner: &'a mut dyn NoiseSource<T>,
    pub draws: Vec<Matrix<T>>,
}

impl<'a, T: Scalar> RecordingNoise<'a, T> {
    pub fn new(inner: &'a mut dyn NoiseSource<T>) -> Self {
        RecordingNoise {
            inner,
            draws: Vec::new(),
        }
    }
}

impl<T: Scalar> NoiseSource<T> for RecordingNoise<'_, T> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        let m = self.inner.standard_normal(rows, cols);
        self.draws.push(m.clone());
        m
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Parameter handles for one bidirectional recurrent layer.
#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub fwd: [ParamId; 3],
    pub bwd: [ParamId; 3],
}

impl BiGruParams {
    /// Registers `W (I×3H)`, `U (H×3H)`, `b (3H)` for both directions.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let scale = 1.0 / (hidden as f64).sqrt();
        let mut dir = |d: &str| -> Result<[ParamId; 3]> {
            Ok([
                params.add_uniform(format!("{prefix}.{d}.w"), vec![input, 3 * hidden], scale, rng)?,
                params.add_uniform(format!("{prefix}.{d}.u"), vec![hidden, 3 * hidden], scale, rng)?,
                params.add_uniform(format!("{prefix}.{d}.b"), vec![3 * hidden], scale, rng)?,
            ])
        };
        Ok(BiGruParams {
            fwd: dir("fwd")?,
            bwd: dir("bwd")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AffineParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl AffineParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let scale = 1.0 / (input as f64).sqrt();
        Ok(AffineParams {
            w: params.add_uniform(format!("{prefix}.w"), vec![input, output], scale, rng)?,
            b: params.add_zeros(format!("{prefix}.b"), vec![output])?,
        })
    }
}

struct GruCache<T> {
    xproj: Matrix<T>,
    hprev: Matrix<T>,
    z: Matrix<T>,
    r: Matrix<T>,
    n: Matrix<T>,
    hun: Matrix<T>,
}

enum Op<T> {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Clamp { x: Var, lo: T, hi: T },
    Sum(Var),
    SqErr { x: Var, target: Matrix<T> },
    Kl { mean: Var, log_var: Var },
    Sample { mean: Var, log_var: Var, eps: Matrix<T> },
    BiGru { x: Var, w: [Var; 6], cache: Box<[GruCache<T>; 2]> },
}

struct Node<T> {
    value: Matrix<T>,
    grad: Option<Matrix<T>>,
    op: Op<T>,
}

/// Computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Binds a parameter as a leaf; repeated binds return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(params.get(id).to_matrix(), Op::Leaf);
        self.bound.push((id, v));
        v
    }

    /// Parameters bound into this graph so far.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.bound.iter().map(|&(p, _)| p).collect()
    }

    /// `x W + b` for `x: T×I`, `W: I×O`, `b: 1×O`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || bv.shape() != (1, wv.cols()) {
            return Err(Error::input(format!(
                "affine shapes do not conform: x {:?}, W {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), wv.cols());
        for i in 0..out.rows() {
            out.row_mut(i).copy_from_slice(bv.row(0));
        }
        gemm(T::one(), xv, false, wv, false, T::one(), &mut out);
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn affine_params(&mut self, params: &ParamSet<T>, p: AffineParams, x: Var) -> Result<Var> {
        let w = self.param(params, p.w);
        let b = self.param(params, p.b);
        self.affine(x, w, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::input("add: shape mismatch"));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x: a, lo, hi })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).as_slice().iter().copied().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// `Σ (x − target)²` as a `1×1` node; `target` is a constant.
    pub fn sq_err(&mut self, x: Var, target: &Matrix<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(Error::input(format!(
                "sq_err shape mismatch: {:?} vs {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let s: T = xv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![s]),
            Op::SqErr {
                x,
                target: target.clone(),
            },
        ))
    }

    /// `KL(N(mean, exp(log_var)) || N(0, I))` summed over all elements.
    pub fn kl_to_standard_normal(&mut self, mean: Var, log_var: Var) -> Result<Var> {
        let (m, lv) = (self.value(mean), self.value(log_var));
        if m.shape() != lv.shape() {
            return Err(Error::input("kl: mean and log_var shapes differ"));
        }
        let half = T::of(0.5);
        let s: T = m
            .as_slice()
            .iter()
            .zip(lv.as_slice())
            .map(|(&mu, &l)| half * (l.exp() + mu * mu - T::one() - l))
            .sum();
        Ok(self.push(Matrix::from_vec(1, 1, vec![s]), Op::Kl { mean, log_var }))
    }

    /// `mean + exp(log_var / 2) ⊙ ε` with `ε` drawn from `noise`. Gradients
    /// reach `mean` and `log_var`, never `ε`.
    pub fn gaussian_sample(&mut self, mean: Var, log_var: Var, noise: &mut dyn NoiseSource<T>) -> Result<Var> {
        let (r, c) = self.value(mean).shape();
        if self.value(log_var).shape() != (r, c) {
            return Err(Error::input("sample: mean and log_var shapes differ"));
        }
        let eps = noise.standard_normal(r, c);
        let half = T::of(0.5);
        let (m, lv) = (self.value(mean), self.value(log_var));
        let out = Matrix::from_fn(r, c, |i, j| m[(i, j)] + (half * lv[(i, j)]).exp() * eps[(i, j)]);
        Ok(self.push(out, Op::Sample { mean, log_var, eps }))
    }

    /// Bidirectional gated recurrent layer: `x: T×I` to `T×2H`, forward
    /// hidden states in the first `H` columns, backward in the rest.
    pub fn birnn(&mut self, params: &ParamSet<T>, p: BiGruParams, x: Var) -> Result<Var> {
        let w = [
            self.param(params, p.fwd[0]),
            self.param(params, p.fwd[1]),
            self.param(params, p.fwd[2]),
            self.param(params, p.bwd[0]),
            self.param(params, p.bwd[1]),
            self.param(params, p.bwd[2]),
        ];
        let xv = self.value(x);
        let (t, input) = xv.shape();
        let hidden = self.value(w[1]).rows();
        for d in 0..2 {
            let (wv, uv, bv) = (self.value(w[3 * d]), self.value(w[3 * d + 1]), self.value(w[3 * d + 2]));
            if wv.shape() != (input, 3 * hidden) || uv.shape() != (hidden, 3 * hidden) || bv.shape() != (1, 3 * hidden) {
                return Err(Error::input("birnn parameter shapes do not conform"));
            }
        }
        if t == 0 {
            return Err(Error::input("birnn needs at least one frame"));
        }
        let (hf, cf) = gru_forward(xv, self.value(w[0]), self.value(w[1]), self.value(w[2]), false);
        let (hb, cb) = gru_forward(xv, self.value(w[3]), self.value(w[4]), self.value(w[5]), true);
        let mut out = Matrix::zeros(t, 2 * hidden);
        for i in 0..t {
            out.row_mut(i)[..hidden].copy_from_slice(hf.row(i));
            out.row_mut(i)[hidden..].copy_from_slice(hb.row(i));
        }
        Ok(self.push(
            out,
            Op::BiGru {
                x,
                w,
                cache: Box::new([cf, cb]),
            },
        ))
    }

    fn acc_grad(&mut self, v: Var, g: Matrix<T>) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backprop_node(idx, &op, &g);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(g);
        }
    }

    fn backprop_node(&mut self, idx: usize, op: &Op<T>, g: &Matrix<T>) {
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let mut dx = Matrix::zeros(self.value(*x).rows(), self.value(*x).cols());
                gemm(T::one(), g, false, self.value(*w), true, T::zero(), &mut dx);
                let mut dw = Matrix::zeros(self.value(*w).rows(), self.value(*w).cols());
                gemm(T::one(), self.value(*x), true, g, false, T::zero(), &mut dw);
                let db = Matrix::from_vec(1, g.cols(), g.column_sums());
                self.acc_grad(*x, dx);
                self.acc_grad(*w, dw);
                self.acc_grad(*b, db);
            }
            Op::Add(a, b) => {
                self.acc_grad(*a, g.clone());
                self.acc_grad(*b, g.clone());
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.scale(*s);
                self.acc_grad(*a, d);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * (T::one() - y[(i, j)] * y[(i, j)]));
                self.acc_grad(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * y[(i, j)] * (T::one() - y[(i, j)]));
                self.acc_grad(*a, d);
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    let v = xv[(i, j)];
                    if v >= *lo && v <= *hi {
                        g[(i, j)]
                    } else {
                        T::zero()
                    }
                });
                self.acc_grad(*x, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.acc_grad(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::SqErr { x, target } => {
                let s = g[(0, 0)] * T::of(2.0);
                let xv = self.value(*x);
                let d = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| s * (xv[(i, j)] - target[(i, j)]));
                self.acc_grad(*x, d);
            }
            Op::Kl { mean, log_var } => {
                let s = g[(0, 0)];
                let half = T::of(0.5);
                let dm = self.value(*mean).map(|m| s * m);
                let dl = self.value(*log_var).map(|l| s * half * (l.exp() - T::one()));
                self.acc_grad(*mean, dm);
                self.acc_grad(*log_var, dl);
            }
            Op::Sample { mean, log_var, eps } => {
                let half = T::of(0.5);
                let lv = self.value(*log_var);
                let dl = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    g[(i, j)] * eps[(i, j)] * half * (half * lv[(i, j)]).exp()
                });
                self.acc_grad(*mean, g.clone());
                self.acc_grad(*log_var, dl);
            }
            Op::BiGru { x, w, cache } => {
                let hidden = self.value(w[1]).rows();
                let t = g.rows();
                let mut dx = Matrix::zeros(t, self.value(*x).cols());
                for d in 0..2 {
                    let dout = Matrix::from_fn(t, hidden, |i, j| g[(i, d * hidden + j)]);
                    let (dw, du, db) = gru_backward(
                        self.value(*x),
                        self.value(w[3 * d]),
                        self.value(w[3 * d + 1]),
                        &cache[d],
                        &dout,
                        d == 1,
                        &mut dx,
                    );
                    self.acc_grad(w[3 * d], dw);
                    self.acc_grad(w[3 * d + 1], du);
                    self.acc_grad(w[3 * d + 2], db);
                }
                self.acc_grad(*x, dx);
            }
        }
    }

    /// Adds the gradients of every bound parameter into `params`.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet<T>) {
        for &(id, v) in &self.bound {
            if let Some(g) = &self.nodes[v.0].grad {
                let t = params.get_mut(id);
                let acc = t.grad.get_or_insert_with(|| vec![T::zero(); t.values.len()]);
                for (a, &b) in acc.iter_mut().zip(g.as_slice()) {
                    *a += b;
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// One direction of a gated recurrent layer with zero initial state:
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// n = tanh(x W_n + b_n + r ⊙ (h U_n))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
fn gru_forward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    u: &Matrix<T>,
    b: &Matrix<T>,
    reverse: bool,
) -> (Matrix<T>, GruCache<T>) {
    let t_len = x.rows();
    let h = u.rows();
    let mut xproj = Matrix::zeros(t_len, 3 * h);
    for i in 0..t_len {
        xproj.row_mut(i).copy_from_slice(b.row(0));
    }
    gemm(T::one(), x, false, w, false, T::one(), &mut xproj);
    let mut cache = GruCache {
        xproj,
        hprev: Matrix::zeros(t_len, h),
        z: Matrix::zeros(t_len, h),
        r: Matrix::zeros(t_len, h),
        n: Matrix::zeros(t_len, h),
        hun: Matrix::zeros(t_len, h),
    };
    let mut out = Matrix::zeros(t_len, h);
    let mut hcur = vec![T::zero(); h];
    let mut hu = vec![T::zero(); 3 * h];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        cache.hprev.row_mut(t).copy_from_slice(&hcur);
        hu.iter_mut().for_each(|v| *v = T::zero());
        vecmat_acc(&hcur, u, &mut hu);
        let xp = cache.xproj.row(t);
        for j in 0..h {
            let z = sigmoid(xp[j] + hu[j]);
            let r = sigmoid(xp[h + j] + hu[h + j]);
            let hun = hu[2 * h + j];
            let n = (xp[2 * h + j] + r * hun).tanh();
            cache.z[(t, j)] = z;
            cache.r[(t, j)] = r;
            cache.n[(t, j)] = n;
            cache.hun[(t, j)] = hun;
            hcur[j] = (T::one() - z) * n + z * hcur[j];
        }
        out.row_mut(t).copy_from_slice(&hcur);
    }
    (out, cache)
}

/// Backpropagation through time for one direction. Adds the input gradient
/// into `dx` and returns `(dW, dU, db)`.
#[allow(clippy::too_many_arguments)]
fn gru_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    u: &Matrix<T>,
    c: &GruCache<T>,
    dout: &Matrix<T>,
    reverse: bool,
    dx: &mut Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let t_len = x.rows();
    let h = u.rows();
    let one = T::one();
    let mut da = Matrix::zeros(t_len, 3 * h);
    let mut dhu = Matrix::zeros(t_len, 3 * h);
    let mut dh_next = vec![T::zero(); h];
    let mut dh_prev = vec![T::zero(); h];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let dar = da.row_mut(t);
        for j in 0..h {
            let dh = dout[(t, j)] + dh_next[j];
            let (z, r, n, hun, hp) = (c.z[(t, j)], c.r[(t, j)], c.n[(t, j)], c.hun[(t, j)], c.hprev[(t, j)]);
            let dn = dh * (one - z);
            let dz = dh * (hp - n);
            dh_prev[j] = dh * z;
            let dan = dn * (one - n * n);
            let dr = dan * hun;
            dar[j] = dz * z * (one - z);
            dar[h + j] = dr * r * (one - r);
            dar[2 * h + j] = dan;
        }
        let hrow = dhu.row_mut(t);
        let arow = da.row(t);
        for j in 0..h {
            hrow[j] = arow[j];
            hrow[h + j] = arow[h + j];
            hrow[2 * h + j] = arow[2 * h + j] * c.r[(t, j)];
        }
        matvec_acc(u, dhu.row(t), &mut dh_prev);
        std::mem::swap(&mut dh_next, &mut dh_prev);
    }
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    gemm(one, x, true, &da, false, T::zero(), &mut dw);
    let mut du = Matrix::zeros(h, 3 * h);
    gemm(one, &c.hprev, true, &dhu, false, T::zero(), &mut du);
    let db = Matrix::from_vec(1, 3 * h, da.column_sums());
    gemm(one, &da, false, w, true, one, dx);
    (dw, du, db)
}

/// Adaptive-moment optimizer state with global-norm clipping.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: u64,
    /// Updates rejected because of a non-finite gradient.
    pub skipped: u64,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
            skipped: 0,
        }
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// One optimizer update: global-norm clip, then an Adam step in parameter
/// order. Gradients are zeroed afterwards. A non-finite gradient skips the
/// update and bumps `state.skipped`.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>, lr: f64) {
    if state.m.len() != params.len() {
        state.m = params.tensors.iter().map(|t| vec![T::zero(); t.values.len()]).collect();
        state.v = state.m.clone();
    }
    let mut sq = 0.0f64;
    let mut finite = true;
    for t in &params.tensors {
        for &g in t.grad.as_deref().unwrap_or(&[]) {
            let g = g.as_f64();
            finite &= g.is_finite();
            sq += g * g;
        }
    }
    if !finite || !sq.is_finite() {
        state.skipped += 1;
        params.zero_grad();
        return;
    }
    let norm = sq.sqrt();
    let clip = if norm > state.clip_norm {
        state.clip_norm / norm
    } else {
        1.0
    };
    state.steps += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.steps as i32);
    let bc2 = 1.0 - b2.powi(state.steps as i32);
    let step = T::of(lr * bc2.sqrt() / bc1);
    let eps = T::of(state.eps * bc2.sqrt());
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let clip = T::of(clip);
    for (i, t) in params.tensors.iter_mut().enumerate() {
        let Some(grad) = t.grad.as_mut() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..t.values.len() {
            let g = grad[k] * clip;
            m[k] = tb1 * m[k] + ob1 * g;
            v[k] = tb2 * v[k] + ob2 * g * g;
            t.values[k] -= step * m[k] / (v[k].sqrt() + eps);
            grad[k] = T::zero();
        }
    }
}

/// Central finite-difference gradient of `f` with respect to every value of
/// every parameter in `ids`.
pub fn numeric_gradient<T: Scalar>(
    params: &ParamSet<T>,
    ids: &[ParamId],
    step: f64,
    mut f: impl FnMut(&ParamSet<T>) -> T,
) -> Vec<Vec<T>> {
    let mut work = params.clone();
    ids.iter()
        .map(|&id| {
            (0..params.get(id).values.len())
                .map(|k| {
                    let orig = work.get(id).values[k];
                    work.get_mut(id).values[k] = orig + T::of(step);
                    let up = f(&work);
                    work.get_mut(id).values[k] = orig - T::of(step);
                    let down = f(&work);
                    work.get_mut(id).values[k] = orig;
                    (up - down) / T::of(2.0 * step)
                })
                .collect()
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from amplifying rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FD_STEP: f64 = 1e-4;
    const FD_FLOOR: f64 = 1e-3;

    fn rand_matrix(rng: &mut RngState, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    /// Analytic vs numeric gradient over every parameter; returns the max
    /// relative error.
    fn check(params: &ParamSet<f64>, build: impl Fn(&mut Graph<f64>, &ParamSet<f64>) -> Var) -> f64 {
        let mut g = Graph::new();
        let loss = build(&mut g, params);
        g.backward(loss);
        let mut with_grad = params.clone();
        with_grad.zero_grad();
        g.accumulate_param_grads(&mut with_grad);
        let ids: Vec<ParamId> = params.iter().map(|(id, _, _)| id).collect();
        let numeric = numeric_gradient(params, &ids, FD_STEP, |p| {
            let mut g = Graph::new();
            let l = build(&mut g, p);
            g.scalar(l)
        });
        let mut worst: f64 = 0.0;
        for (i, &id) in ids.iter().enumerate() {
            for (a, n) in with_grad.grad(id).iter().zip(&numeric[i]) {
                worst = worst.max(relative_error(*a, *n, FD_FLOOR));
            }
        }
        worst
    }

    /// Projects a node onto a fixed random direction so every output
    /// coordinate contributes to the scalar under test.
    fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
        let (r, c) = g.value(v).shape();
        let mut rng = RngState::new(seed);
        let target = rand_matrix(&mut rng, r, c);
        g.sq_err(v, &target).unwrap()
    }

    #[test]
    fn affine_identity_and_bias_grad() {
        let mut ps = ParamSet::<f64>::new();
        let w = ps.add("w", Tensor::new(vec![3, 3], Matrix::<f64>::identity(3).into_vec()).unwrap()).unwrap();
        let b = ps.add_zeros("b", vec![3]).unwrap();
        let mut g = Graph::new();
        let x = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let xv = g.input(x.clone());
        let y = g.affine_params(&ps, AffineParams { w, b }, xv).unwrap();
        assert_eq!(g.value(y), &x);
        let s = g.sum(y);
        g.backward(s);
        ps.zero_grad();
        g.accumulate_param_grads(&mut ps);
        assert_eq!(ps.grad(b), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Matrix::zeros(2, 3));
        let w = g.input(Matrix::zeros(4, 2));
        let b = g.input(Matrix::zeros(1, 2));
        assert!(matches!(g.affine(x, w, b), Err(Error::Input(_))));
    }

    #[test]
    fn affine_and_elementwise_gradients() {
        for (seed, (t, i, o)) in [(1u64, (3usize, 4usize, 2usize)), (2, (1, 2, 5)), (3, (5, 3, 3))] {
            let mut rng = RngState::new(seed);
            let mut ps = ParamSet::new();
            let a = AffineParams::register(&mut ps, "a", i, o, &mut rng).unwrap();
            let bias = ps.get(a.b).values.len();
            ps.get_mut(a.b).values = (0..bias).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let xin = ps.add_uniform("x", vec![t, i], 1.0, &mut rng).unwrap();
            let err = check(&ps, |g, p| {
                let x = g.param(p, xin);
                let y = g.affine_params(p, a, x).unwrap();
                let th = g.tanh(y);
                let sg = g.sigmoid(y);
                let sc = g.scale(sg, 0.7);
                let c = g.clamp(th, -0.5, 0.5);
                let s = g.add(sc, c).unwrap();
                project(g, s, seed + 100)
            });
            assert!(err < 1e-4, "max rel err {err}");
        }
    }

    fn gru_setup(seed: u64, t: usize, i: usize, h: usize) -> (ParamSet<f64>, BiGruParams, ParamId) {
        let mut rng = RngState::new(seed);
        let mut ps = ParamSet::new();
        let p = BiGruParams::register(&mut ps, "rnn", i, h, &mut rng).unwrap();
        let x = ps.add_uniform("x", vec![t, i], 1.0, &mut rng).unwrap();
        (ps, p, x)
    }

    #[test]
    fn birnn_gradient_check() {
        let (ps, p, xin) = gru_setup(4, 4, 3, 2);
        let err = check(&ps, |g, params| {
            let x = g.param(params, xin);
            let y = g.birnn(params, p, x).unwrap();
            project(g, y, 9)
        });
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn stacked_birnn_gradient_check() {
        let mut rng = RngState::new(21);
        let mut ps = ParamSet::new();
        let l1 = BiGruParams::register(&mut ps, "l1", 2, 3, &mut rng).unwrap();
        let l2 = BiGruParams::register(&mut ps, "l2", 6, 2, &mut rng).unwrap();
        let xin = ps.add_uniform("x", vec![5, 2], 1.0, &mut rng).unwrap();
        let err = check(&ps, |g, params| {
            let x = g.param(params, xin);
            let a = g.birnn(params, l1, x).unwrap();
            let b = g.birnn(params, l2, a).unwrap();
            project(g, b, 3)
        });
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn birnn_single_frame_sees_same_input_both_ways() {
        let (mut ps, p, _) = gru_setup(5, 1, 3, 2);
        // copy forward weights into the backward direction
        for k in 0..3 {
            let v = ps.get(p.fwd[k]).values.clone();
            ps.get_mut(p.bwd[k]).values = v;
        }
        let mut g = Graph::new();
        let x = g.input(Matrix::from_vec(1, 3, vec![0.2, -0.1, 0.4]));
        let y = g.birnn(&ps, p, x).unwrap();
        let v = g.value(y);
        assert_eq!(&v.row(0)[..2], &v.row(0)[2..]);
    }

    #[test]
    fn birnn_constant_input_without_recurrence_is_constant() {
        let (mut ps, p, _) = gru_setup(6, 5, 3, 2);
        for id in [p.fwd[1], p.bwd[1]] {
            ps.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        // U = 0 and a saturated-closed update gate make every step identical
        for id in [p.fwd[0], p.bwd[0]] {
            let vals = &mut ps.get_mut(id).values;
            for r in 0..3 {
                for j in 0..2 {
                    vals[r * 6 + j] = 0.0;
                }
            }
        }
        for id in [p.fwd[2], p.bwd[2]] {
            ps.get_mut(id).values[0] = -1e3;
            ps.get_mut(id).values[1] = -1e3;
        }
        let mut g = Graph::new();
        let x = g.input(Matrix::filled(5, 3, 0.3));
        let y = g.birnn(&ps, p, x).unwrap();
        let v = g.value(y);
        for t in 1..5 {
            assert!(v.row(t).iter().zip(v.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn birnn_full_sequence_receptive_field() {
        let (ps, p, _) = gru_setup(7, 6, 2, 3);
        let mut rng = RngState::new(1);
        let base = rand_matrix(&mut rng, 6, 2);
        let run = |x: Matrix<f64>| {
            let mut g = Graph::new();
            let xv = g.input(x);
            let y = g.birnn(&ps, p, xv).unwrap();
            g.value(y).clone()
        };
        let y0 = run(base.clone());
        for tp in 0..6 {
            let mut x = base.clone();
            x[(tp, 0)] += 0.5;
            let y1 = run(x);
            for t in 0..6 {
                let changed = y0.row(t).iter().zip(y1.row(t)).any(|(a, b)| (a - b).abs() > 1e-12);
                assert!(changed, "output {t} ignores input {tp}");
            }
        }
    }

    #[test]
    fn sample_and_kl_gradients() {
        let mut rng = RngState::new(8);
        let mut ps = ParamSet::new();
        let m = ps.add_uniform("m", vec![3, 2], 1.0, &mut rng).unwrap();
        let l = ps.add_uniform("l", vec![3, 2], 1.0, &mut rng).unwrap();
        let eps = rand_matrix(&mut rng, 3, 2);
        let err = check(&ps, |g, p| {
            let mv = g.param(p, m);
            let lv = g.param(p, l);
            let mut noise = FrozenNoise::new(vec![eps.clone()]);
            let z = g.gaussian_sample(mv, lv, &mut noise).unwrap();
            let kl = g.kl_to_standard_normal(mv, lv).unwrap();
            let r = project(g, z, 2);
            g.add(r, kl).unwrap()
        });
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn sample_limits_and_determinism() {
        let mut g = Graph::<f64>::new();
        let m = g.input(Matrix::filled(2, 2, 1.5));
        let raw = g.input(Matrix::filled(2, 2, -1e4));
        let lv = g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
        let mut rng = RngState::new(3);
        let z = g.gaussian_sample(m, lv, &mut rng).unwrap();
        assert!(g.value(z).as_slice().iter().all(|v| (v - 1.5).abs() < 1e-3));

        let a: Matrix<f64> = RngState::new(9).standard_normal(3, 3);
        let b: Matrix<f64> = RngState::new(9).standard_normal(3, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments() {
        let n = 100_000;
        let mut g = Graph::<f64>::new();
        let m = g.input(Matrix::zeros(n, 1));
        let lv = g.input(Matrix::zeros(n, 1));
        let z = g.gaussian_sample(m, lv, &mut RngState::new(17)).unwrap();
        let v = g.value(z).as_slice();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn kl_values() {
        let mut g = Graph::<f64>::new();
        let m = g.input(Matrix::zeros(3, 2));
        let l = g.input(Matrix::zeros(3, 2));
        let k = g.kl_to_standard_normal(m, l).unwrap();
        assert_eq!(g.scalar(k), 0.0);
        let m = g.input(Matrix::filled(1, 1, 1.0));
        let l = g.input(Matrix::zeros(1, 1));
        let k = g.kl_to_standard_normal(m, l).unwrap();
        assert_eq!(g.scalar(k), 0.5);
    }

    #[test]
    fn kl_is_non_negative() {
        let mut rng = RngState::new(44);
        for _ in 0..200 {
            let mut g = Graph::<f64>::new();
            let m = g.input(Matrix::from_fn(2, 3, |_, _| rng.uniform(-3.0, 3.0)));
            let l = g.input(Matrix::from_fn(2, 3, |_, _| rng.uniform(-10.0, 4.0)));
            let k = g.kl_to_standard_normal(m, l).unwrap();
            assert!(g.scalar(k) >= 0.0);
        }
    }

    fn scalar_param(w0: f64) -> (ParamSet<f64>, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::new(vec![1], vec![w0]).unwrap()).unwrap();
        (ps, id)
    }

    #[test]
    fn optimizer_zero_gradient_is_noop() {
        let (mut ps, id) = scalar_param(0.7);
        let mut st = AdamState::default();
        sgd_step(&mut ps, &mut st, 0.1);
        assert_eq!(ps.get(id).values, vec![0.7]);
    }

    #[test]
    fn optimizer_quadratic_bowl() {
        let (mut ps, id) = scalar_param(1.0);
        let mut st = AdamState::default();
        for _ in 0..200 {
            let w = ps.get(id).values[0];
            ps.get_mut(id).grad = Some(vec![2.0 * w]);
            sgd_step(&mut ps, &mut st, 0.05);
        }
        assert!(ps.get(id).values[0].abs() < 0.01, "{}", ps.get(id).values[0]);
    }

    #[test]
    fn optimizer_skips_nan() {
        let (mut ps, id) = scalar_param(1.0);
        let mut st = AdamState::default();
        ps.get_mut(id).grad = Some(vec![f64::NAN]);
        sgd_step(&mut ps, &mut st, 0.05);
        assert_eq!(ps.get(id).values, vec![1.0]);
        assert_eq!(st.skipped, 1);
        assert_eq!(ps.grad(id), &[0.0]);
    }

    #[test]
    fn optimizer_clips_global_norm() {
        // with clipping the first Adam step is still lr in magnitude, but the
        // moment estimates see the clipped gradient
        let (mut ps, id) = scalar_param(0.0);
        let mut st = AdamState::default();
        ps.get_mut(id).grad = Some(vec![1e6]);
        sgd_step(&mut ps, &mut st, 0.1);
        assert!((ps.get(id).values[0] + 0.1).abs() < 1e-6);
        assert!((st.m[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn param_set_round_trip_and_names() {
        let mut rng = RngState::new(1);
        let mut ps = ParamSet::<f32>::new();
        BiGruParams::register(&mut ps, "enc.l0", 3, 2, &mut rng).unwrap();
        AffineParams::register(&mut ps, "head", 4, 5, &mut rng).unwrap();
        assert!(ps.add_zeros("head.w", vec![1]).is_err());
        let back = ParamSet::<f32>::from_bytes(&ps.to_bytes()).unwrap();
        assert_eq!(back, ps);
        assert_eq!(ps.ids_with_prefix("enc.").len(), 6);
        let mut bytes = ps.to_bytes();
        bytes[0] = b'X';
        assert!(ParamSet::<f32>::from_bytes(&bytes).is_err());
        let bytes = ps.to_bytes();
        assert!(ParamSet::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn forward_backward_is_deterministic() {
        let (ps, p, xin) = gru_setup(12, 5, 3, 4);
        let run = || {
            let mut g = Graph::new();
            let x = g.param(&ps, xin);
            let y = g.birnn(&ps, p, x).unwrap();
            let mut rng = RngState::new(4);
            let z = g.gaussian_sample(y, y, &mut rng).unwrap();
            let s = g.sum(z);
            g.backward(s);
            let mut q = ps.clone();
            q.zero_grad();
            g.accumulate_param_grads(&mut q);
            (g.scalar(s), q)
        };
        let (a, qa) = run();
        let (b, qb) = run();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(qa, qb);
    }
}
