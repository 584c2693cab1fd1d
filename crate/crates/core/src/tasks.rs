//! Input distributions, target functions and noisy regression datasets.
//! Coordinates in public APIs are 1-based.

use crate::constructor::{IndexSet, TwoLayerNet};
use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputDist {
    /// Uniform on `[0, 1]^dim`.
    UniformCube,
    /// Standard Gaussian `N(0, I)`.
    StdGaussian,
}

impl std::str::FromStr for InputDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_cube" | "uniform" => Ok(InputDist::UniformCube),
            "std_gaussian" | "gaussian" => Ok(InputDist::StdGaussian),
            other => invalid(format!("unknown input distribution '{other}'")),
        }
    }
}

impl InputDist {
    pub fn name(self) -> &'static str {
        match self {
            InputDist::UniformCube => "uniform_cube",
            InputDist::StdGaussian => "std_gaussian",
        }
    }
}

/// `n` i.i.d. rows of length `dim`, row-major. Row `i` is drawn from its own
/// stream so the result does not depend on the thread count.
pub fn sample_inputs(dist: InputDist, dim: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || dim == 0 {
        return invalid("need at least one row and one column");
    }
    let mut out = vec![0.0; n * dim];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let mut r = stream(seed, "inputs", i as u64);
        match dist {
            InputDist::UniformCube => row.iter_mut().for_each(|v| *v = r.random::<f64>()),
            InputDist::StdGaussian => row.iter_mut().for_each(|v| *v = r.sample(StandardNormal)),
        }
    });
    Ok(out)
}

pub type TargetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum TargetKind {
    /// `g(x_I)` with `g` a two-layer ReLU network over `|I|` inputs.
    Sparse { net: TwoLayerNet, idx: IndexSet },
    /// The product of two coordinates `x_i x_j`.
    Product(usize, usize),
    /// `(1/d)(Σ_{i≤d} x_{2i−1}² − x_{2i}²)(Σ_{i≤d} x_{2d+2i−1}² − x_{2d+2i}²)` on `4d` inputs.
    Separation,
    /// The separation target clamped to `[−a0, a0]`.
    TruncatedSeparation(f64),
    Custom(TargetFn),
}

impl fmt::Debug for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Sparse { net, idx } => write!(f, "Sparse(m={}, I={:?})", net.width(), idx.as_slice()),
            TargetKind::Product(i, j) => write!(f, "Product({i}, {j})"),
            TargetKind::Separation => write!(f, "Separation"),
            TargetKind::TruncatedSeparation(a) => write!(f, "TruncatedSeparation({a})"),
            TargetKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub input_dim: usize,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, input_dim: usize) -> Result<Self> {
        match &kind {
            TargetKind::Sparse { net, idx } => {
                if idx.max() > input_dim {
                    return invalid("index set exceeds input_dim");
                }
                if net.input_dim() != idx.len() {
                    return shape_err("sparse network input size differs from |I|");
                }
            }
            TargetKind::Product(i, j) => {
                if *i == 0 || *j == 0 || *i > input_dim || *j > input_dim {
                    return invalid(format!("coordinates ({i}, {j}) outside 1..={input_dim}"));
                }
            }
            TargetKind::Separation => {
                if input_dim % 4 != 0 {
                    return invalid("separation target needs input_dim = 4d");
                }
            }
            TargetKind::TruncatedSeparation(a) => {
                if input_dim % 4 != 0 {
                    return invalid("separation target needs input_dim = 4d");
                }
                if !(*a > 0.0) {
                    return invalid("truncation level must be positive");
                }
            }
            TargetKind::Custom(_) => {}
        }
        Ok(Self { kind, input_dim })
    }

    pub fn separation(d: usize) -> Self {
        Self { kind: TargetKind::Separation, input_dim: 4 * d }
    }

    pub fn truncated_separation(d: usize, a0: f64) -> Result<Self> {
        Self::new(TargetKind::TruncatedSeparation(a0), 4 * d)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return shape_err(format!("input of length {} for target of dim {}", x.len(), self.input_dim));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Sparse { net, idx } => net.eval(&idx.gather(x)),
            TargetKind::Product(i, j) => x[i - 1] * x[j - 1],
            TargetKind::Separation => separation(x),
            TargetKind::TruncatedSeparation(a) => separation(x).clamp(-a, *a),
            TargetKind::Custom(f) => f(x),
        }
    }

    pub fn eval_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if xs.len() % self.input_dim != 0 {
            return shape_err("batch length is not a multiple of input_dim");
        }
        Ok(xs.par_chunks(self.input_dim).map(|x| self.eval_unchecked(x)).collect())
    }
}

/// `q(v) = Σ_i v_{2i−1}² − v_{2i}²`.
pub fn pair_contrast(v: &[f64]) -> f64 {
    v.chunks(2).map(|p| p[0] * p[0] - p[1] * p[1]).sum()
}

/// The separation target on `4d` inputs.
pub fn separation(x: &[f64]) -> f64 {
    let d = x.len() / 4;
    pair_contrast(&x[..2 * d]) * pair_contrast(&x[2 * d..]) / d as f64
}

pub fn eval_target(spec: &TargetSpec, x: &[f64]) -> Result<f64> {
    spec.eval(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `n × input_dim`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub input_dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, input_dim: usize) -> Result<Self> {
        if y.is_empty() || x.len() != y.len() * input_dim {
            return shape_err(format!("{} inputs for {} labels of dim {input_dim}", x.len(), y.len()));
        }
        Ok(Self { x, y, input_dim, sigma: 0.0, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows selected by `idx`, concatenated.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(idx.len() * self.input_dim);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            xs.extend_from_slice(self.row(i));
            ys.push(self.y[i]);
        }
        (xs, ys)
    }

    /// CSV with columns `x1..x{dim},y`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (1..=self.input_dim).map(|i| format!("x{i}")).chain(["y".into()]).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for i in 0..self.len() {
            let cells: Vec<String> = self.row(i).iter().chain([&self.y[i]]).map(|v| format!("{v:?}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Little-endian layout: magic `CNLD`, `u32` version, `u64` n, `u64` dim,
    /// `f64` sigma, `u64` seed, then `x` and `y` as `f64` arrays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"CNLD");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&self.sigma.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.x.iter().chain(&self.y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = || Error::Parse("dataset file".into());
        if b.len() < 40 || &b[..4] != b"CNLD" {
            return Err(bad());
        }
        let u = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let (n, dim) = (u(8) as usize, u(16) as usize);
        let sigma = f64::from_bits(u(24));
        let seed = u(32);
        let body = &b[40..];
        if body.len() != 8 * n * (dim + 1) {
            return Err(bad());
        }
        let vals: Vec<f64> = body.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let (x, y) = vals.split_at(n * dim);
        Ok(Self { x: x.to_vec(), y: y.to_vec(), input_dim: dim, sigma, seed })
    }
}

/// Samples inputs, evaluates the target and adds `N(0, σ²)` label noise.
pub fn make_dataset(spec: &TargetSpec, dist: InputDist, n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return invalid("noise level must be nonnegative");
    }
    let x = sample_inputs(dist, spec.input_dim, n, seed)?;
    let mut y = spec.eval_batch(&x)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi += stream(seed, "noise", i as u64).sample(normal);
        });
    }
    Ok(Dataset { x, y, input_dim: spec.input_dim, sigma, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_means() {
        let n = 100_000;
        let dim = 3;
        let x = sample_inputs(InputDist::UniformCube, dim, n, 11).unwrap();
        let tol = 4.0 * (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        for c in 0..dim {
            let m: f64 = x.iter().skip(c).step_by(dim).sum::<f64>() / n as f64;
            assert!((m - 0.5).abs() < tol, "coordinate {c} mean {m}");
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gaussian_variances() {
        let n = 100_000;
        let dim = 4;
        let x = sample_inputs(InputDist::StdGaussian, dim, n, 12).unwrap();
        for c in 0..dim {
            let col: Vec<f64> = x.iter().skip(c).step_by(dim).cloned().collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((v - 1.0).abs() < 0.05, "variance {v}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_inputs(InputDist::StdGaussian, 5, 50, 3).unwrap();
        let b = sample_inputs(InputDist::StdGaussian, 5, 50, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_inputs(InputDist::StdGaussian, 5, 50, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn separation_examples() {
        let spec = TargetSpec::separation(1);
        assert_eq!(spec.eval(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 1.0);
        let s2 = TargetSpec::separation(3);
        assert_eq!(s2.eval(&[0.7; 12]).unwrap(), 0.0);
        let t = TargetSpec::truncated_separation(1, 0.5).unwrap();
        assert_eq!(t.eval(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert!(TargetSpec::new(TargetKind::Separation, 6).is_err());
        assert!(TargetSpec::new(TargetKind::Product(0, 1), 6).is_err());
    }

    #[test]
    fn noiseless_and_noisy_datasets() {
        let spec = TargetSpec::new(TargetKind::Product(1, 2), 3).unwrap();
        let ds = make_dataset(&spec, InputDist::StdGaussian, 100, 0.0, 5).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.y[i], spec.eval(ds.row(i)).unwrap());
        }
        let n = 100_000;
        let noisy = make_dataset(&spec, InputDist::StdGaussian, n, 1.0, 6).unwrap();
        let r: Vec<f64> = (0..n).map(|i| noisy.y[i] - spec.eval(noisy.row(i)).unwrap()).collect();
        let m = r.iter().sum::<f64>() / n as f64;
        let v = r.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - 1.0).abs() < 0.03, "residual variance {v}");
        assert_eq!(noisy, make_dataset(&spec, InputDist::StdGaussian, n, 1.0, 6).unwrap());
    }

    #[test]
    fn dataset_bytes_round_trip() {
        let spec = TargetSpec::separation(1);
        let ds = make_dataset(&spec, InputDist::StdGaussian, 7, 0.5, 9).unwrap();
        assert_eq!(Dataset::from_bytes(&ds.to_bytes()).unwrap(), ds);
        assert!(ds.to_csv().starts_with("x1,x2,x3,x4,y\n"));
    }

    // Brute-force check of E[h*(X)²] = 16 at d = 1 by a tensor trapezoid rule;
    // the rule is spectrally accurate for Gaussian-weighted polynomials.
    #[test]
    fn second_moment_quadrature_d1() {
        let h = 0.4;
        let pts: Vec<(f64, f64)> = (-20..=20)
            .map(|k| {
                let t = k as f64 * h;
                (t, h * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let mut acc = 0.0;
        for (a, wa) in &pts {
            for (b, wb) in &pts {
                for (c, wc) in &pts {
                    for (e, we) in &pts {
                        acc += wa * wb * wc * we * separation(&[*a, *b, *c, *e]).powi(2);
                    }
                }
            }
        }
        assert!((acc - 16.0).abs() < 1e-9, "{acc}");
    }

    #[test]
    fn second_moment_monte_carlo() {
        for d in [4usize, 16] {
            let n = 40_000;
            let x = sample_inputs(InputDist::StdGaussian, 4 * d, n, 21).unwrap();
            let v: Vec<f64> = x.chunks(4 * d).map(|r| separation(r).powi(2)).collect();
            let m = v.iter().sum::<f64>() / n as f64;
            let se = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
            assert!((m - 16.0).abs() < 3.0 * se, "d={d}: {m} ± {se}");
        }
    }
}
