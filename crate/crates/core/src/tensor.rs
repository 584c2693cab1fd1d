//! Dense row-major `f64` tensors and a small reverse-mode tape covering the
//! layers used by the convolutional, locally connected and dense models.

use crate::error::{invalid, shape_err, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return shape_err(format!("zero extent in shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frob(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Strided convolution: output `j` is the dot product of patch `j` of `v` with `w`.
pub fn conv_stride(v: &[f64], w: &[f64], s: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return invalid("stride must be positive");
    }
    if w.len() != s {
        return shape_err(format!("filter length {} differs from stride {s}", w.len()));
    }
    if v.len() % s != 0 {
        return shape_err(format!("input length {} not divisible by stride {s}", v.len()));
    }
    Ok(v.chunks(s).map(|p| dot(p, w)).collect())
}

/// Convolution without stride (valid positions only).
pub fn conv_plain(v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() || v.len() < w.len() {
        return shape_err(format!("input length {} shorter than filter {}", v.len(), w.len()));
    }
    Ok((0..=v.len() - w.len()).map(|i| dot(&v[i..i + w.len()], w)).collect())
}

/// Patchwise dot product with an unshared filter.
pub fn local_op(v: &[f64], w: &[f64], s: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return invalid("patch size must be positive");
    }
    if v.len() != w.len() || v.len() % s != 0 {
        return shape_err(format!("lengths {} and {} with patch {s}", v.len(), w.len()));
    }
    Ok(v.chunks(s).zip(w.chunks(s)).map(|(a, b)| dot(a, b)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Relu2,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => relu(x),
            Activation::Relu2 => relu2(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu2 => 2.0 * relu(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Relu2 => "relu2",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "id" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "relu2" => Ok(Activation::Relu2),
            other => invalid(format!("unknown activation '{other}'")),
        }
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu2(x: f64) -> f64 {
    let r = relu(x);
    r * r
}

/// Clamp to `[-a, a]`.
pub fn truncate(x: f64, a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return invalid(format!("truncation level {a} must be nonnegative"));
    }
    Ok(x.clamp(-a, a))
}

pub fn truncate_tensor(t: &Tensor, a: f64) -> Result<Tensor> {
    if !(a >= 0.0) {
        return invalid(format!("truncation level {a} must be nonnegative"));
    }
    Ok(t.map(|v| v.clamp(-a, a)))
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct ConvGeom {
    n: usize,
    d_in: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    step: usize,
    d_out: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: bool },
    Conv { z: Var, w: Var, b: Option<Var>, g: ConvGeom },
    Local { z: Var, w: Var, b: Option<Var>, g: ConvGeom },
    Act { x: Var, kind: Activation },
    Truncate { x: Var, a: f64 },
    Readout { z: Var, w: Var, n: usize, m: usize },
    LossB { pred: Var, y: Vec<f64>, b: f64 },
    Frob { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Dot { a: Var, b: Var },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for reverse-mode differentiation. A tape belongs to a
/// single evaluation; reading adjoints does not mutate it, so repeated calls to
/// [`Tape::gradient`] give identical results.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Reorders a `[c_out, c_in, width]` kernel to `[c_out, width, c_in]`, the
/// order of a contiguous input patch.
fn kernel_patch_major(w: &[f64], c_out: usize, c_in: usize, width: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for o in 0..c_out {
        for c in 0..c_in {
            for k in 0..width {
                t[(o * width + k) * c_in + c] = w[(o * c_in + c) * width + k];
            }
        }
    }
    t
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::NotOnTape(v.0))
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: true })
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: false })
    }

    /// Multi-channel convolution over a batch.
    ///
    /// `z` has shape `[n, d_in, c_in]`, `w` has shape `[c_out, c_in, width]`
    /// (or `[c_out, c_in]` for width 1) and `b` has length `c_out`.
    pub fn conv(&mut self, z: Var, w: Var, b: Option<Var>, step: usize) -> Result<Var> {
        self.check(z)?;
        self.check(w)?;
        let zs = self.value(z).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if zs.len() != 3 {
            return shape_err(format!("conv input must be [n, d, c], got {zs:?}"));
        }
        let (n, d_in, c_in) = (zs[0], zs[1], zs[2]);
        let (c_out, wc_in, width) = match ws.len() {
            2 => (ws[0], ws[1], 1),
            3 => (ws[0], ws[1], ws[2]),
            _ => return shape_err(format!("conv kernel shape {ws:?}")),
        };
        if wc_in != c_in {
            return shape_err(format!("kernel expects {wc_in} channels, input has {c_in}"));
        }
        if step == 0 || width > d_in || (d_in - width) % step != 0 {
            return shape_err(format!("width {width} and step {step} do not tile {d_in}"));
        }
        let d_out = (d_in - width) / step + 1;
        if let Some(b) = b {
            self.check(b)?;
            if self.value(b).len() != c_out {
                return shape_err(format!("bias length {} for {c_out} channels", self.value(b).len()));
            }
        }
        let g = ConvGeom { n, d_in, c_in, c_out, width, step, d_out };
        let zv = self.value(z).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let wt = kernel_patch_major(wv, c_out, c_in, width);
        let patch = width * c_in;
        let mut out = vec![0.0; n * d_out * c_out];
        for (i, orow) in out.chunks_exact_mut(d_out * c_out).enumerate() {
            for (j, ocell) in orow.chunks_exact_mut(c_out).enumerate() {
                let start = (i * d_in + j * step) * c_in;
                let zp = &zv[start..start + patch];
                for (o, (slot, wrow)) in ocell.iter_mut().zip(wt.chunks_exact(patch)).enumerate() {
                    let acc: f64 = zp.iter().zip(wrow).map(|(a, b)| a * b).sum();
                    *slot = acc + bv.map_or(0.0, |bv| bv[o]);
                }
            }
        }
        let t = Tensor { shape: vec![n, d_out, c_out], data: out };
        Ok(self.push(t, Op::Conv { z, w, b, g }))
    }

    /// Locally connected layer: like [`Tape::conv`] with `width == step == s`
    /// but with a separate filter per position. `w` has shape `[c_out, c_in, d_in]`
    /// and `b` has shape `[d_out, c_out]`.
    pub fn local(&mut self, z: Var, w: Var, b: Option<Var>, s: usize) -> Result<Var> {
        self.check(z)?;
        self.check(w)?;
        let zs = self.value(z).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if zs.len() != 3 || ws.len() != 3 {
            return shape_err(format!("local layer shapes {zs:?} and {ws:?}"));
        }
        let (n, d_in, c_in) = (zs[0], zs[1], zs[2]);
        let c_out = ws[0];
        if ws[1] != c_in || ws[2] != d_in {
            return shape_err(format!("kernel {ws:?} does not match input {zs:?}"));
        }
        if s == 0 || d_in % s != 0 {
            return shape_err(format!("patch size {s} does not tile {d_in}"));
        }
        let d_out = d_in / s;
        if let Some(b) = b {
            self.check(b)?;
            if self.value(b).len() != d_out * c_out {
                return shape_err("local bias must be [d_out, c_out]");
            }
        }
        let g = ConvGeom { n, d_in, c_in, c_out, width: s, step: s, d_out };
        let zv = self.value(z).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * d_out * c_out];
        for i in 0..n {
            for j in 0..d_out {
                for o in 0..c_out {
                    // Same summation order as `conv`, so a shared-filter LCN
                    // reproduces the CNN bit for bit.
                    let mut acc = 0.0;
                    for k in 0..s {
                        let p = j * s + k;
                        for c in 0..c_in {
                            acc += wv[(o * c_in + c) * d_in + p] * zv[(i * d_in + p) * c_in + c];
                        }
                    }
                    if let Some(bv) = bv {
                        acc += bv[j * c_out + o];
                    }
                    out[(i * d_out + j) * c_out + o] = acc;
                }
            }
        }
        let t = Tensor { shape: vec![n, d_out, c_out], data: out };
        Ok(self.push(t, Op::Local { z, w, b, g }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| kind.apply(v));
        Ok(self.push(t, Op::Act { x, kind }))
    }

    pub fn truncate(&mut self, x: Var, a: f64) -> Result<Var> {
        self.check(x)?;
        let t = truncate_tensor(self.value(x), a)?;
        Ok(self.push(t, Op::Truncate { x, a }))
    }

    /// Per-sample linear read-out: `z` holds `n` rows of `m` values, `w` has length `m`.
    pub fn readout(&mut self, z: Var, w: Var) -> Result<Var> {
        self.check(z)?;
        self.check(w)?;
        let m = self.value(w).len();
        let zt = self.value(z);
        let n = zt.shape()[0];
        if zt.len() != n * m {
            return shape_err(format!("read-out of {} values per row with {m} weights", zt.len() / n));
        }
        let (zv, wv) = (zt.data(), self.value(w).data());
        let out: Vec<f64> = (0..n).map(|i| dot(&zv[i * m..(i + 1) * m], wv)).collect();
        Ok(self.push(Tensor::vector(out), Op::Readout { z, w, n, m }))
    }

    /// Mean capped squared loss `(1/n) Σ min(½(p−y)², ½B²)`; `b = ∞` disables the cap.
    pub fn loss_capped(&mut self, pred: Var, y: &[f64], b: f64) -> Result<Var> {
        self.check(pred)?;
        let p = self.value(pred).data();
        if p.len() != y.len() {
            return shape_err(format!("{} predictions for {} labels", p.len(), y.len()));
        }
        if !(b > 0.0) {
            return invalid("loss cap must be positive");
        }
        let cap = 0.5 * b * b;
        let mut acc = 0.0;
        for (pi, yi) in p.iter().zip(y) {
            let r = pi - yi;
            acc += (0.5 * r * r).min(cap);
        }
        let t = Tensor::scalar(acc / y.len() as f64);
        Ok(self.push(t, Op::LossB { pred, y: y.to_vec(), b }))
    }

    pub fn frob(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = Tensor::scalar(self.value(x).frob());
        Ok(self.push(t, Op::Frob { x }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return shape_err(format!("elementwise op on {:?} and {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape: ta.shape().to_vec(), data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| c * v);
        Ok(self.push(t, Op::Scale { x, c }))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| v + c);
        Ok(self.push(t, Op::AddConst { x }))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| v * v);
        Ok(self.push(t, Op::Square { x }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        Ok(self.push(t, Op::Sum { x }))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return shape_err(format!("dot of lengths {} and {}", ta.len(), tb.len()));
        }
        let t = Tensor::scalar(dot(ta.data(), tb.data()));
        Ok(self.push(t, Op::Dot { a, b }))
    }

    /// Adjoints of the scalar `out` with respect to every node.
    fn adjoints(&self, out: Var) -> Result<Vec<Option<Vec<f64>>>> {
        self.check(out)?;
        if self.value(out).len() != 1 {
            return shape_err("gradient requires a scalar objective");
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::Conv { z, w, b, g: geo } => {
                    let zv = self.value(*z).data();
                    let wv = self.value(*w).data();
                    let ConvGeom { n, d_in, c_in, c_out, width, step, d_out } = *geo;
                    let wt = kernel_patch_major(wv, c_out, c_in, width);
                    let patch = width * c_in;
                    // Constant inputs never need an adjoint.
                    let need_z = !matches!(self.nodes[z.0].op, Op::Leaf { param: false });
                    let mut gz = if need_z { vec![0.0; zv.len()] } else { Vec::new() };
                    let mut gwt = vec![0.0; wv.len()];
                    let mut gb = vec![0.0; c_out];
                    for i in 0..n {
                        for j in 0..d_out {
                            let start = (i * d_in + j * step) * c_in;
                            let zp = &zv[start..start + patch];
                            let gcell = &g[(i * d_out + j) * c_out..(i * d_out + j + 1) * c_out];
                            for (o, &go) in gcell.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                gb[o] += go;
                                let wrow = &wt[o * patch..(o + 1) * patch];
                                for (gwk, zk) in gwt[o * patch..(o + 1) * patch].iter_mut().zip(zp) {
                                    *gwk += go * zk;
                                }
                                if need_z {
                                    for (gzk, wk) in gz[start..start + patch].iter_mut().zip(wrow) {
                                        *gzk += go * wk;
                                    }
                                }
                            }
                        }
                    }
                    let mut gw = vec![0.0; wv.len()];
                    for o in 0..c_out {
                        for c in 0..c_in {
                            for k in 0..width {
                                gw[(o * c_in + c) * width + k] = gwt[(o * width + k) * c_in + c];
                            }
                        }
                    }
                    if need_z {
                        accumulate(&mut adj, *z, gz);
                    }
                    accumulate(&mut adj, *w, gw);
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Local { z, w, b, g: geo } => {
                    let zv = self.value(*z).data();
                    let wv = self.value(*w).data();
                    let mut gz = vec![0.0; zv.len()];
                    let mut gw = vec![0.0; wv.len()];
                    let ConvGeom { n, d_in, c_in, c_out, width: s, d_out, .. } = *geo;
                    let mut gb = vec![0.0; d_out * c_out];
                    for i in 0..n {
                        for j in 0..d_out {
                            for o in 0..c_out {
                                let go = g[(i * d_out + j) * c_out + o];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[j * c_out + o] += go;
                                for c in 0..c_in {
                                    for k in 0..s {
                                        let p = j * s + k;
                                        let wi = (o * c_in + c) * d_in + p;
                                        let zi = (i * d_in + p) * c_in + c;
                                        gw[wi] += go * zv[zi];
                                        gz[zi] += go * wv[wi];
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, *z, gz);
                    accumulate(&mut adj, *w, gw);
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x).data();
                    let gx = g.iter().zip(xv).map(|(gi, &xi)| gi * kind.derivative(xi)).collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Truncate { x, a } => {
                    let xv = self.value(*x).data();
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(gi, xi)| if xi.abs() <= *a { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Readout { z, w, n, m } => {
                    let zv = self.value(*z).data();
                    let wv = self.value(*w).data();
                    let mut gz = vec![0.0; zv.len()];
                    let mut gw = vec![0.0; *m];
                    for i in 0..*n {
                        let gi = g[i];
                        for j in 0..*m {
                            gw[j] += gi * zv[i * m + j];
                            gz[i * m + j] = gi * wv[j];
                        }
                    }
                    accumulate(&mut adj, *z, gz);
                    accumulate(&mut adj, *w, gw);
                }
                Op::LossB { pred, y, b } => {
                    let p = self.value(*pred).data();
                    let scale = g[0] / y.len() as f64;
                    let gp = p
                        .iter()
                        .zip(y)
                        .map(|(pi, yi)| {
                            let r = pi - yi;
                            if r.abs() < *b {
                                scale * r
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut adj, *pred, gp);
                }
                Op::Frob { x } => {
                    let xt = self.value(*x);
                    let norm = node.value.data()[0];
                    let gx = if norm > 0.0 {
                        xt.data().iter().map(|v| g[0] * v / norm).collect()
                    } else {
                        vec![0.0; xt.len()]
                    };
                    accumulate(&mut adj, *x, gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj, *b, g.iter().map(|v| -v).collect());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul { a, b } => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let gb = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut adj, *x, g.iter().map(|v| c * v).collect());
                }
                Op::AddConst { x, .. } => accumulate(&mut adj, *x, g),
                Op::Square { x } => {
                    let xv = self.value(*x).data();
                    accumulate(&mut adj, *x, g.iter().zip(xv).map(|(gi, xi)| 2.0 * gi * xi).collect());
                }
                Op::Sum { x } => {
                    let n = self.value(*x).len();
                    accumulate(&mut adj, *x, vec![g[0]; n]);
                }
                Op::Dot { a, b } => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    accumulate(&mut adj, *a, bv.iter().map(|v| g[0] * v).collect());
                    accumulate(&mut adj, *b, av.iter().map(|v| g[0] * v).collect());
                }
            }
        }
        Ok(adj)
    }

    /// Gradient of the scalar `out` with respect to each parameter in `params`.
    /// Parameters that do not influence `out` receive zeros.
    pub fn gradient(&self, out: Var, params: &[Var]) -> Result<Vec<Tensor>> {
        for p in params {
            match self.nodes.get(p.0) {
                Some(Node { op: Op::Leaf { param: true }, .. }) => {}
                _ => return Err(Error::NotOnTape(p.0)),
            }
        }
        let adj = self.adjoints(out)?;
        Ok(params
            .iter()
            .map(|p| {
                let v = &self.nodes[p.0].value;
                let data = adj.get(p.0).cloned().flatten().unwrap_or_else(|| vec![0.0; v.len()]);
                Tensor { shape: v.shape().to_vec(), data }
            })
            .collect())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
