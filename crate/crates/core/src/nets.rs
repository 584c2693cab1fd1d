//! CNN, LCN and FCN models: configuration, parameters, forward passes,
//! parameter norms and counts.

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Shared filters applied with stride equal to the filter size.
    Cnn,
    /// Unshared filters, one per position, with stride equal to the filter size.
    Lcn,
    /// Dense layers.
    Fcn,
    /// Shared filters applied at every position (stride one). Only used for
    /// depth arguments; not a training target.
    CnnNoStride,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Family::Cnn),
            "lcn" => Ok(Family::Lcn),
            "fcn" => Ok(Family::Fcn),
            "cnn-nostride" | "nostride" => Ok(Family::CnnNoStride),
            other => invalid(format!("unknown family '{other}'")),
        }
    }
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Lcn => "lcn",
            Family::Fcn => "fcn",
            Family::CnnNoStride => "cnn-nostride",
        }
    }
}

/// Architecture description. `channels` has `L + 1` entries; for FCN these
/// are the layer widths and `channels[0]` equals `input_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub family: Family,
    pub input_dim: usize,
    /// Filter size. Equals the stride for CNN and LCN; unused for FCN.
    pub stride: usize,
    pub channels: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl ArchConfig {
    pub fn new(
        family: Family,
        input_dim: usize,
        stride: usize,
        channels: Vec<usize>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        let cfg = Self { family, input_dim, stride, channels, activations };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cnn(input_dim: usize, s: usize, channels: Vec<usize>, acts: Vec<Activation>) -> Result<Self> {
        Self::new(Family::Cnn, input_dim, s, channels, acts)
    }

    pub fn lcn(input_dim: usize, s: usize, channels: Vec<usize>, acts: Vec<Activation>) -> Result<Self> {
        Self::new(Family::Lcn, input_dim, s, channels, acts)
    }

    /// Dense network with the given hidden widths; `widths` excludes the input.
    pub fn fcn(input_dim: usize, widths: &[usize], acts: Vec<Activation>) -> Result<Self> {
        let mut channels = vec![input_dim];
        channels.extend_from_slice(widths);
        Self::new(Family::Fcn, input_dim, 1, channels, acts)
    }

    pub fn cnn_nostride(input_dim: usize, width: usize, channels: Vec<usize>, acts: Vec<Activation>) -> Result<Self> {
        Self::new(Family::CnnNoStride, input_dim, width, channels, acts)
    }

    /// The same shape with a different family (CNN <-> LCN).
    pub fn with_family(&self, family: Family) -> Result<Self> {
        Self::new(family, self.input_dim, self.stride, self.channels.clone(), self.activations.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.depth();
        if l == 0 {
            return invalid("depth must be at least one");
        }
        if self.activations.len() != l {
            return invalid(format!("{} activations for depth {l}", self.activations.len()));
        }
        if self.input_dim == 0 || self.channels.iter().any(|&c| c == 0) {
            return invalid("dimensions must be positive");
        }
        match self.family {
            Family::Fcn => {
                if self.channels[0] != self.input_dim {
                    return invalid("FCN channels[0] must equal input_dim");
                }
            }
            Family::Cnn | Family::Lcn => {
                if self.channels[0] != 1 {
                    return invalid("CNN/LCN input has one channel");
                }
                if self.stride == 0 {
                    return invalid("stride must be positive");
                }
                let mut d = self.input_dim;
                for _ in 0..l {
                    if d % self.stride != 0 {
                        return invalid(format!(
                            "stride {} does not divide spatial size {d} (input_dim {}, depth {l})",
                            self.stride, self.input_dim
                        ));
                    }
                    d /= self.stride;
                }
            }
            Family::CnnNoStride => {
                if self.channels[0] != 1 {
                    return invalid("CNN input has one channel");
                }
                if self.stride == 0 || (self.stride - 1) * l >= self.input_dim {
                    return invalid("filter too wide for the depth");
                }
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }

    /// Spatial sizes `D_0..D_L` (all ones for FCN).
    pub fn dims(&self) -> Vec<usize> {
        let l = self.depth();
        match self.family {
            Family::Fcn => vec![1; l + 1],
            Family::Cnn | Family::Lcn => {
                let mut v = vec![self.input_dim];
                for i in 0..l {
                    v.push(v[i] / self.stride);
                }
                v
            }
            Family::CnnNoStride => (0..=l).map(|i| self.input_dim - i * (self.stride - 1)).collect(),
        }
    }

    /// Kernel shape of layer `l` (1-based).
    pub fn kernel_shape(&self, l: usize) -> Vec<usize> {
        let (co, ci) = (self.channels[l], self.channels[l - 1]);
        match self.family {
            Family::Fcn => vec![co, ci],
            Family::Cnn | Family::CnnNoStride => vec![co, ci, self.stride],
            Family::Lcn => vec![co, ci, self.dims()[l - 1]],
        }
    }

    /// Bias shape of layer `l` (1-based).
    pub fn bias_shape(&self, l: usize) -> Vec<usize> {
        match self.family {
            Family::Lcn => vec![self.dims()[l], self.channels[l]],
            _ => vec![self.channels[l]],
        }
    }

    pub fn output_len(&self) -> usize {
        self.channels[self.depth()] * self.dims()[self.depth()]
    }

    /// Weight applied to `‖b^(l)‖` in the parameter norm.
    pub fn bias_weight(&self, l: usize) -> f64 {
        match self.family {
            Family::Cnn | Family::CnnNoStride => (self.dims()[l] as f64).sqrt(),
            Family::Lcn | Family::Fcn => 1.0,
        }
    }

    /// Number of trainable scalars. For CNN/LCN layer `l` contributes
    /// `(s·C_{l−1} + 1)·C_l`, times `D_l` for LCN.
    pub fn param_count(&self) -> usize {
        let dims = self.dims();
        let mut n = self.output_len();
        for l in 1..=self.depth() {
            let (co, ci) = (self.channels[l], self.channels[l - 1]);
            n += match self.family {
                Family::Fcn => (ci + 1) * co,
                Family::Cnn | Family::CnnNoStride => (self.stride * ci + 1) * co,
                Family::Lcn => (self.stride * ci + 1) * co * dims[l],
            };
        }
        n
    }

    /// Shape of the input batch tensor for `n` samples.
    fn input_shape(&self, n: usize) -> Vec<usize> {
        match self.family {
            Family::Fcn => vec![n, 1, self.input_dim],
            _ => vec![n, self.input_dim, 1],
        }
    }
}

/// Trainable weights. Layer `l` (1-based) lives at index `l − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub output: Tensor,
}

impl Params {
    pub fn zeros(cfg: &ArchConfig) -> Self {
        let l = cfg.depth();
        Self {
            kernels: (1..=l).map(|i| Tensor::zeros(&cfg.kernel_shape(i))).collect(),
            biases: (1..=l).map(|i| Tensor::zeros(&cfg.bias_shape(i))).collect(),
            output: Tensor::zeros(&[cfg.output_len()]),
        }
    }

    pub fn check(&self, cfg: &ArchConfig) -> Result<()> {
        let l = cfg.depth();
        if self.kernels.len() != l || self.biases.len() != l {
            return shape_err(format!("expected {l} layers"));
        }
        for i in 1..=l {
            if self.kernels[i - 1].shape() != cfg.kernel_shape(i).as_slice() {
                return shape_err(format!("kernel {i} has shape {:?}", self.kernels[i - 1].shape()));
            }
            if self.biases[i - 1].shape() != cfg.bias_shape(i).as_slice() {
                return shape_err(format!("bias {i} has shape {:?}", self.biases[i - 1].shape()));
            }
        }
        if self.output.len() != cfg.output_len() {
            return shape_err("output weights length");
        }
        Ok(())
    }

    /// Every entry i.i.d. `N(0, beta²)`.
    pub fn gaussian<R: Rng>(cfg: &ArchConfig, beta: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, beta.abs()).expect("finite scale");
        let mut p = Self::zeros(cfg);
        p.for_each_mut(|v| *v = normal.sample(rng));
        p
    }

    /// Kernels `U(±√(3/fan_in))`, biases zero, output `U(±√(3/C_L D_L))`.
    pub fn uniform_fan_in<R: Rng>(cfg: &ArchConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        for (i, k) in p.kernels.iter_mut().enumerate() {
            let fan_in = match cfg.family {
                Family::Fcn => cfg.channels[i],
                _ => cfg.channels[i] * cfg.stride,
            };
            let a = (3.0 / fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("valid range");
            k.data_mut().iter_mut().for_each(|v| *v = u.sample(rng));
        }
        let a = (3.0 / cfg.output_len() as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a).expect("valid range");
        p.output.data_mut().iter_mut().for_each(|v| *v = u.sample(rng));
        p
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for (k, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            k.data_mut().iter_mut().for_each(&mut f);
            b.data_mut().iter_mut().for_each(&mut f);
        }
        self.output.data_mut().iter_mut().for_each(&mut f);
    }

    /// Layer-ordered flat view: kernel 1, bias 1, …, kernel L, bias L, output.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.extend_from_slice(k.data());
            v.extend_from_slice(b.data());
        }
        v.extend_from_slice(self.output.data());
        v
    }

    pub fn from_flat(cfg: &ArchConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let total = cfg.param_count();
        if flat.len() != total {
            return shape_err(format!("{} values for {total} parameters", flat.len()));
        }
        let mut it = flat.iter();
        p.for_each_mut(|v| *v = *it.next().expect("length checked"));
        Ok(p)
    }

    pub fn sub(&self, other: &Params) -> Result<Params> {
        let a = self.to_flat();
        let b = other.to_flat();
        if a.len() != b.len() {
            return shape_err("parameter sets differ in size");
        }
        let mut out = self.clone();
        let mut it = a.iter().zip(&b).map(|(x, y)| x - y);
        out.for_each_mut(|v| *v = it.next().expect("same length"));
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Little-endian binary layout: magic `CNLP`, `u32` version, `u32` length
    /// of the JSON config echo, the echo, `u64` value count, then the
    /// layer-ordered `f64` values.
    pub fn to_bytes(&self, cfg: &ArchConfig) -> Vec<u8> {
        let echo = serde_json::to_vec(cfg).expect("config serializes");
        let flat = self.to_flat();
        let mut out = Vec::with_capacity(20 + echo.len() + 8 * flat.len());
        out.extend_from_slice(b"CNLP");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(&echo);
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ArchConfig, Params)> {
        let bad = |m: &str| Error::Parse(format!("params file: {m}"));
        if bytes.len() < 12 || &bytes[..4] != b"CNLP" {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let elen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let cfg_end = 12 + elen;
        if bytes.len() < cfg_end + 8 {
            return Err(bad("truncated header"));
        }
        let cfg: ArchConfig = serde_json::from_slice(&bytes[12..cfg_end]).map_err(|e| bad(&e.to_string()))?;
        cfg.validate()?;
        let count = u64::from_le_bytes(bytes[cfg_end..cfg_end + 8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[cfg_end + 8..];
        if body.len() != 8 * count {
            return Err(bad("body length"));
        }
        let flat: Vec<f64> = body.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let p = Params::from_flat(&cfg, &flat)?;
        Ok((cfg, p))
    }

    pub fn to_json(&self, cfg: &ArchConfig) -> String {
        serde_json::json!({ "config": cfg, "params": self }).to_string()
    }

    pub fn from_json(s: &str) -> Result<(ArchConfig, Params)> {
        #[derive(Deserialize)]
        struct Doc {
            config: ArchConfig,
            params: Params,
        }
        let doc: Doc = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        doc.config.validate()?;
        doc.params.check(&doc.config)?;
        Ok((doc.config, doc.params))
    }
}

/// Tape handles for a [`Params`] set.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub kernels: Vec<Var>,
    pub biases: Vec<Var>,
    pub output: Var,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, p: &Params) -> Self {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (k, b) in p.kernels.iter().zip(&p.biases) {
            kernels.push(tape.param(k.clone()));
            biases.push(tape.param(b.clone()));
        }
        let output = tape.param(p.output.clone());
        Self { kernels, biases, output }
    }

    /// In the same order as [`Params::to_flat`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.push(*k);
            v.push(*b);
        }
        v.push(self.output);
        v
    }
}

/// Records the hidden states `z^(1)..z^(L)` of a batch on the tape and
/// returns them (index `l − 1` holds layer `l`).
pub fn record_hidden(tape: &mut Tape, cfg: &ArchConfig, pv: &ParamVars, x: Var) -> Result<Vec<Var>> {
    Ok(record_layers(tape, cfg, pv, x)?.into_iter().map(|(_, post)| post).collect())
}

/// Like [`record_hidden`] but also returns each layer's pre-activation.
pub fn record_layers(tape: &mut Tape, cfg: &ArchConfig, pv: &ParamVars, x: Var) -> Result<Vec<(Var, Var)>> {
    let mut z = x;
    let mut out = Vec::with_capacity(cfg.depth());
    for l in 0..cfg.depth() {
        let (w, b) = (pv.kernels[l], Some(pv.biases[l]));
        let pre = match cfg.family {
            Family::Cnn => tape.conv(z, w, b, cfg.stride)?,
            Family::CnnNoStride => tape.conv(z, w, b, 1)?,
            Family::Fcn => tape.conv(z, w, b, 1)?,
            Family::Lcn => tape.local(z, w, b, cfg.stride)?,
        };
        z = tape.activation(pre, cfg.activations[l])?;
        out.push((pre, z));
    }
    Ok(out)
}

/// Records `h_θ` on a batch of `n` inputs stored row-major in `xs`.
pub fn record_forward(tape: &mut Tape, cfg: &ArchConfig, pv: &ParamVars, xs: &[f64], n: usize) -> Result<Var> {
    if xs.len() != n * cfg.input_dim {
        return shape_err(format!("{} input values for {n} rows of {}", xs.len(), cfg.input_dim));
    }
    let x = tape.constant(Tensor::new(cfg.input_shape(n), xs.to_vec())?);
    let hs = record_hidden(tape, cfg, pv, x)?;
    tape.readout(*hs.last().expect("depth ≥ 1"), pv.output)
}

/// Records `‖θ‖_P` on the tape.
pub fn record_norm_p(tape: &mut Tape, cfg: &ArchConfig, pv: &ParamVars) -> Result<Var> {
    let mut acc = tape.frob(pv.output)?;
    for l in 0..cfg.depth() {
        let k = tape.frob(pv.kernels[l])?;
        let b = tape.frob(pv.biases[l])?;
        let bw = tape.scale(b, cfg.bias_weight(l + 1))?;
        acc = tape.add(acc, k)?;
        acc = tape.add(acc, bw)?;
    }
    Ok(acc)
}

const CHUNK: usize = 512;

/// `h_θ` on each row of `xs`.
pub fn forward_batch(cfg: &ArchConfig, p: &Params, xs: &[f64]) -> Result<Vec<f64>> {
    p.check(cfg)?;
    let d = cfg.input_dim;
    if xs.len() % d != 0 {
        return shape_err(format!("input length {} is not a multiple of {d}", xs.len()));
    }
    let mut out = Vec::with_capacity(xs.len() / d);
    for chunk in xs.chunks(CHUNK * d) {
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, p);
        let y = record_forward(&mut tape, cfg, &pv, chunk, chunk.len() / d)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(out)
}

pub fn forward(cfg: &ArchConfig, p: &Params, x: &[f64]) -> Result<f64> {
    if x.len() != cfg.input_dim {
        return shape_err(format!("input of length {} for input_dim {}", x.len(), cfg.input_dim));
    }
    Ok(forward_batch(cfg, p, x)?[0])
}

/// Smallest pre-activation magnitude over all layers and rows of `xs`.
pub fn min_abs_preactivation(cfg: &ArchConfig, p: &Params, xs: &[f64]) -> Result<f64> {
    p.check(cfg)?;
    let n = xs.len() / cfg.input_dim;
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, p);
    let x = tape.constant(Tensor::new(cfg.input_shape(n), xs.to_vec())?);
    let layers = record_layers(&mut tape, cfg, &pv, x)?;
    Ok(layers
        .iter()
        .flat_map(|(pre, _)| tape.value(*pre).data().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min))
}

/// `z^(l)(x)` as a `[D_l, C_l]` tensor; `l = 0` returns the input layout.
pub fn hidden_state(cfg: &ArchConfig, p: &Params, x: &[f64], l: usize) -> Result<Tensor> {
    p.check(cfg)?;
    if x.len() != cfg.input_dim {
        return shape_err("input length");
    }
    if l > cfg.depth() {
        return invalid(format!("layer {l} beyond depth {}", cfg.depth()));
    }
    let dims = cfg.dims();
    let shape = match cfg.family {
        Family::Fcn if l == 0 => vec![1, cfg.input_dim],
        _ => vec![dims[l], cfg.channels[l]],
    };
    if l == 0 {
        return Tensor::new(shape, x.to_vec());
    }
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, p);
    let xv = tape.constant(Tensor::new(cfg.input_shape(1), x.to_vec())?);
    let hs = record_hidden(&mut tape, cfg, &pv, xv)?;
    Tensor::new(shape, tape.value(hs[l - 1]).data().to_vec())
}

/// `‖θ‖_P = ‖W_o‖ + Σ_l (‖W^(l)‖_F + α_l ‖b^(l)‖_F)`.
pub fn param_norm_p(cfg: &ArchConfig, p: &Params) -> f64 {
    let mut acc = p.output.frob();
    for l in 0..cfg.depth() {
        acc += p.kernels[l].frob() + cfg.bias_weight(l + 1) * p.biases[l].frob();
    }
    acc
}

/// The `C_l × (s·C_{l−1})` matrix acting on one patch (column `(k, c)` is
/// offset `k`, input channel `c`). For LCN, `patch` selects the position.
fn patch_matrix(cfg: &ArchConfig, p: &Params, l: usize, patch: usize) -> DMatrix<f64> {
    let (co, ci) = (cfg.channels[l], cfg.channels[l - 1]);
    let w = p.kernels[l - 1].data();
    match cfg.family {
        Family::Fcn => DMatrix::from_fn(co, ci, |o, c| w[o * ci + c]),
        Family::Cnn | Family::CnnNoStride => {
            let s = cfg.stride;
            DMatrix::from_fn(co, s * ci, |o, col| w[(o * ci + col % ci) * s + col / ci])
        }
        Family::Lcn => {
            let s = cfg.stride;
            let d_in = cfg.dims()[l - 1];
            DMatrix::from_fn(co, s * ci, |o, col| w[(o * ci + col % ci) * d_in + patch * s + col / ci])
        }
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Sum of layer operator norms `‖W_o‖ + Σ_l (‖K^(l)‖ + ‖s^(l)‖)` where `K^(l)`
/// is the block matrix acting on the flattened hidden state and `s^(l)` the
/// bias broadcast over positions.
pub fn param_norm_op(cfg: &ArchConfig, p: &Params) -> Result<f64> {
    if cfg.family == Family::CnnNoStride {
        return Err(Error::Unsupported("operator norm for overlapping filters".into()));
    }
    let dims = cfg.dims();
    let mut acc = p.output.frob();
    for l in 1..=cfg.depth() {
        let k = match cfg.family {
            Family::Lcn => (0..dims[l]).map(|j| spectral_norm(&patch_matrix(cfg, p, l, j))).fold(0.0, f64::max),
            _ => spectral_norm(&patch_matrix(cfg, p, l, 0)),
        };
        let s = match cfg.family {
            Family::Cnn => (dims[l] as f64).sqrt() * p.biases[l - 1].frob(),
            _ => p.biases[l - 1].frob(),
        };
        acc += k + s;
    }
    Ok(acc)
}

/// Forward pass through the explicit block-diagonal matrices `K^(l)` acting on
/// the position-major flattening of each hidden state.
pub fn forward_patch_form(cfg: &ArchConfig, p: &Params, x: &[f64]) -> Result<f64> {
    if !matches!(cfg.family, Family::Cnn | Family::Lcn) {
        return Err(Error::Unsupported("patch form needs a strided family".into()));
    }
    p.check(cfg)?;
    if x.len() != cfg.input_dim {
        return shape_err("input length");
    }
    let dims = cfg.dims();
    let mut z = nalgebra::DVector::from_column_slice(x);
    for l in 1..=cfg.depth() {
        let (co, ci, s) = (cfg.channels[l], cfg.channels[l - 1], cfg.stride);
        let mut k = DMatrix::zeros(dims[l] * co, dims[l - 1] * ci);
        let mut bias = nalgebra::DVector::zeros(dims[l] * co);
        for j in 0..dims[l] {
            let block = patch_matrix(cfg, p, l, j);
            k.view_mut((j * co, j * s * ci), (co, s * ci)).copy_from(&block);
            for o in 0..co {
                bias[j * co + o] = match cfg.family {
                    Family::Lcn => p.biases[l - 1].data()[j * co + o],
                    _ => p.biases[l - 1].data()[o],
                };
            }
        }
        let act = cfg.activations[l - 1];
        z = (k * z + bias).map(|v| act.apply(v));
    }
    Ok(z.iter().zip(p.output.data()).map(|(a, b)| a * b).sum())
}

/// Replicate CNN filters and biases across every patch of an LCN of the same shape.
pub fn embed_cnn_in_lcn(cfg: &ArchConfig, p: &Params) -> Result<(ArchConfig, Params)> {
    if cfg.family != Family::Cnn {
        return invalid("embedding needs a CNN");
    }
    p.check(cfg)?;
    let lcfg = cfg.with_family(Family::Lcn)?;
    let dims = cfg.dims();
    let mut q = Params::zeros(&lcfg);
    for l in 1..=cfg.depth() {
        let (co, ci, s) = (cfg.channels[l], cfg.channels[l - 1], cfg.stride);
        let d_in = dims[l - 1];
        let w = p.kernels[l - 1].data();
        let lw = q.kernels[l - 1].data_mut();
        for o in 0..co {
            for c in 0..ci {
                for pos in 0..d_in {
                    lw[(o * ci + c) * d_in + pos] = w[(o * ci + c) * s + pos % s];
                }
            }
        }
        let b = p.biases[l - 1].data();
        let lb = q.biases[l - 1].data_mut();
        for j in 0..dims[l] {
            lb[j * co..(j + 1) * co].copy_from_slice(b);
        }
    }
    q.output = p.output.clone();
    Ok((lcfg, q))
}

/// Activation-dependent factor `Q̄_σ(x)` in the Lipschitz gap bound, for
/// parameters with `‖θ‖_P ≤ j`. Equals `2^L` when every activation is ReLU or
/// the identity; otherwise it also covers the growth of the quadratic layers.
pub fn q_bar(cfg: &ArchConfig, x: &[f64], j: f64) -> Result<f64> {
    if cfg.family == Family::CnnNoStride {
        return Err(Error::Unsupported("Lipschitz bound for overlapping filters".into()));
    }
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r = xnorm;
    let mut e = 0.0;
    let mut prod = 1.0;
    for act in &cfg.activations {
        let y = j * (r + 1.0);
        let (q, r_next) = match act {
            Activation::Identity | Activation::Relu => (1.0, y),
            Activation::Relu2 => (2.0 * y, y * y),
        };
        e = q * (j * e + r + 1.0);
        prod *= q + 1.0;
        r = r_next;
    }
    let l = cfg.depth() as i32;
    let rec = (j * e + r) / ((xnorm + 1.0) * (1.0 + j).powi(l));
    Ok(prod.max(rec))
}

/// Upper bound on `|h_θ(x) − h_θ'(x)|` given `‖θ‖_P, ‖θ'‖_P ≤ j`:
/// `Q̄_σ(x)(‖x‖+1)(1+j)^L ‖θ−θ'‖_P`.
pub fn lipschitz_gap_bound(cfg: &ArchConfig, a: &Params, b: &Params, x: &[f64], j: f64) -> Result<f64> {
    let (na, nb) = (param_norm_p(cfg, a), param_norm_p(cfg, b));
    if na > j || nb > j {
        return Err(Error::Precondition(format!("parameter norms {na} and {nb} exceed J = {j}")));
    }
    let diff = param_norm_p(cfg, &a.sub(b)?);
    let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(q_bar(cfg, x, j)? * (xnorm + 1.0) * (1.0 + j).powi(cfg.depth() as i32) * diff)
}
