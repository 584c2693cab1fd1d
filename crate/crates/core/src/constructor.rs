//! Explicit CNN weights: coordinate selectors, the ReLU feature extractor,
//! two-layer network simulation, and exact networks for the separation target.
//! All stride-2 constructions index coordinates from 1.

use crate::error::{invalid, shape_err, Result};
use crate::nets::{embed_cnn_in_lcn, ArchConfig, Family, Params};
use crate::tensor::{relu, Activation};
use serde::{Deserialize, Serialize};

/// Constant used in norm-budget checks; the constructions only promise
/// bounds up to an unspecified constant.
pub const NORM_BUDGET_C: f64 = 10.0;

/// Strictly increasing 1-based coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(idx: Vec<usize>) -> Result<Self> {
        if idx.is_empty() {
            return invalid("index set must be nonempty");
        }
        if idx[0] == 0 {
            return invalid("coordinates are 1-based");
        }
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("index set {idx:?} must be strictly increasing"));
        }
        Ok(Self(idx))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&i| x[i - 1]).collect()
    }
}

/// `f(x) = Σ_j a_j σ(u_j·x + c_j)` with ReLU `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    pub a: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl TwoLayerNet {
    pub fn new(a: Vec<f64>, u: Vec<Vec<f64>>, c: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != u.len() || a.len() != c.len() {
            return shape_err("two-layer net needs matching a, u, c");
        }
        let k = u[0].len();
        if k == 0 || u.iter().any(|r| r.len() != k) {
            return shape_err("all u_j must share one positive length");
        }
        Ok(Self { a, u, c })
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn input_dim(&self) -> usize {
        self.u[0].len()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.c)
            .map(|(u, c)| relu(u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.features(x).iter().zip(&self.a).map(|(f, a)| f * a).sum()
    }

    /// Reads a one-hidden-layer ReLU FCN as a two-layer net.
    pub fn from_fcn(cfg: &ArchConfig, p: &Params) -> Result<Self> {
        if cfg.family != Family::Fcn || cfg.depth() != 1 || cfg.activations[0] != Activation::Relu {
            return invalid("need a one-hidden-layer ReLU FCN");
        }
        let (m, k) = (cfg.channels[1], cfg.channels[0]);
        let w = p.kernels[0].data();
        Self::new(
            p.output.data().to_vec(),
            (0..m).map(|j| w[j * k..(j + 1) * k].to_vec()).collect(),
            p.biases[0].data().to_vec(),
        )
    }
}

fn log2_exact(n: usize) -> Result<usize> {
    if n == 0 || !n.is_power_of_two() {
        return invalid(format!("{n} is not a power of two"));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Binary digits `a_0..a_{L−1}` of `i − 1`.
fn digits(i: usize, l: usize) -> Vec<usize> {
    (0..l).map(|b| ((i - 1) >> b) & 1).collect()
}

fn filter(bit: usize) -> [f64; 2] {
    if bit == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

fn set(w: &mut [f64], ci: usize, o: usize, c: usize, f: [f64; 2], scale: f64) {
    let base = (o * ci + c) * 2;
    w[base] = scale * f[0];
    w[base + 1] = scale * f[1];
}

/// Identity-activation CNN on `d` inputs with `k = |I|` channels whose last
/// hidden state is `(x_{i_1}, …, x_{i_k})`. Read-out weights are zero.
pub fn build_linear_selector(d: usize, idx: &IndexSet) -> Result<(ArchConfig, Params)> {
    let l = log2_exact(d)?;
    if l == 0 {
        return invalid("input dimension must be at least 2");
    }
    if idx.max() > d {
        return invalid(format!("coordinate {} exceeds {d}", idx.max()));
    }
    let k = idx.len();
    let mut ch = vec![1];
    ch.extend(std::iter::repeat(k).take(l));
    let cfg = ArchConfig::cnn(d, 2, ch, vec![Activation::Identity; l])?;
    let mut p = Params::zeros(&cfg);
    for (r, &i) in idx.as_slice().iter().enumerate() {
        let a = digits(i, l);
        for layer in 1..=l {
            let ci = cfg.channels[layer - 1];
            let src = if layer == 1 { 0 } else { r };
            set(p.kernels[layer - 1].data_mut(), ci, r, src, filter(a[layer - 1]), 1.0);
        }
    }
    Ok((cfg, p))
}

/// ReLU CNN on `4d` inputs whose last hidden state is
/// `(σ(u_j·x_I + c_j))_j`; read-out weights are the net's `a_j`.
pub fn build_relu_selector(d: usize, idx: &IndexSet, feats: &TwoLayerNet) -> Result<(ArchConfig, Params)> {
    let input = 4 * d;
    let l = log2_exact(input)?;
    if idx.max() > input {
        return invalid(format!("coordinate {} exceeds {input}", idx.max()));
    }
    let k = idx.len();
    if feats.input_dim() != k {
        return shape_err(format!("features take {} inputs, |I| = {k}", feats.input_dim()));
    }
    let m = feats.width();
    let mut ch = vec![1];
    ch.extend(std::iter::repeat(2 * k).take(l - 1));
    ch.push(m);
    let cfg = ArchConfig::cnn(input, 2, ch, vec![Activation::Relu; l])?;
    let mut p = Params::zeros(&cfg);
    for (r, &i) in idx.as_slice().iter().enumerate() {
        let a = digits(i, l);
        for layer in 1..l {
            let ci = cfg.channels[layer - 1];
            let f = filter(a[layer - 1]);
            let w = p.kernels[layer - 1].data_mut();
            if layer == 1 {
                set(w, ci, 2 * r, 0, f, 1.0);
                set(w, ci, 2 * r + 1, 0, f, -1.0);
            } else {
                set(w, ci, 2 * r, 2 * r, f, 1.0);
                set(w, ci, 2 * r, 2 * r + 1, f, -1.0);
                set(w, ci, 2 * r + 1, 2 * r, f, -1.0);
                set(w, ci, 2 * r + 1, 2 * r + 1, f, 1.0);
            }
        }
        let f = filter(a[l - 1]);
        let ci = cfg.channels[l - 1];
        let w = p.kernels[l - 1].data_mut();
        for j in 0..m {
            set(w, ci, j, 2 * r, f, feats.u[j][r]);
            set(w, ci, j, 2 * r + 1, f, -feats.u[j][r]);
        }
    }
    p.biases[l - 1].data_mut().copy_from_slice(&feats.c);
    p.output.data_mut().copy_from_slice(&feats.a);
    Ok((cfg, p))
}

/// Bound `C(√k·L + √Σ‖u_j‖² + √Σc_j² + ‖W_o‖)` for [`build_relu_selector`],
/// with `L = log₂(4d)`.
pub fn relu_selector_norm_budget(d: usize, idx: &IndexSet, feats: &TwoLayerNet, w_o: &[f64]) -> f64 {
    let l = (4.0 * d as f64).log2();
    let u2: f64 = feats.u.iter().flatten().map(|v| v * v).sum();
    let c2: f64 = feats.c.iter().map(|v| v * v).sum();
    let o2: f64 = w_o.iter().map(|v| v * v).sum();
    NORM_BUDGET_C * ((idx.len() as f64).sqrt() * l + u2.sqrt() + c2.sqrt() + o2.sqrt())
}

/// The first `L − 1 = log₂(4d) − 1` layers of a ReLU CNN whose hidden state
/// `z^(L−1)` is the `2 × 4d` array in which position `p` (0 or 1), channel
/// pair `t` holds `(σ(x_{t+2dp}), σ(−x_{t+2dp}))`.
pub fn build_universal_feature_extractor(d: usize) -> Result<(ArchConfig, Params)> {
    let input = 4 * d;
    let l = log2_exact(input)?;
    if l < 2 {
        return invalid("need d ≥ 1");
    }
    let ch: Vec<usize> = (0..l).map(|i| if i == 0 { 1 } else { 1 << (i + 1) }).collect();
    let cfg = ArchConfig::cnn(input, 2, ch, vec![Activation::Relu; l - 1])?;
    let mut p = Params::zeros(&cfg);
    for layer in 1..l {
        let ci = cfg.channels[layer - 1];
        let half = 1usize << (layer - 1);
        let w = p.kernels[layer - 1].data_mut();
        for t in 0..2 * half {
            let f = if t < half { [1.0, 0.0] } else { [0.0, 1.0] };
            if layer == 1 {
                set(w, ci, 2 * t, 0, f, 1.0);
                set(w, ci, 2 * t + 1, 0, f, -1.0);
            } else {
                let src = t % half;
                set(w, ci, 2 * t, 2 * src, f, 1.0);
                set(w, ci, 2 * t, 2 * src + 1, f, -1.0);
                set(w, ci, 2 * t + 1, 2 * src, f, -1.0);
                set(w, ci, 2 * t + 1, 2 * src + 1, f, 1.0);
            }
        }
    }
    Ok((cfg, p))
}

/// Full-depth CNN equal to `Σ_j a_j σ(u_j·x + c_j)` on `4d` inputs.
pub fn build_two_layer_sim(d: usize, net: &TwoLayerNet) -> Result<(ArchConfig, Params)> {
    let input = 4 * d;
    if net.input_dim() != input {
        return shape_err(format!("net takes {} inputs, expected {input}", net.input_dim()));
    }
    let (pcfg, pp) = build_universal_feature_extractor(d)?;
    let l = pcfg.depth() + 1;
    let m = net.width();
    let mut ch = pcfg.channels.clone();
    ch.push(m);
    let cfg = ArchConfig::cnn(input, 2, ch, vec![Activation::Relu; l])?;
    let mut p = Params::zeros(&cfg);
    for i in 0..l - 1 {
        p.kernels[i] = pp.kernels[i].clone();
        p.biases[i] = pp.biases[i].clone();
    }
    let ci = cfg.channels[l - 1];
    let half = 2 * d;
    let w = p.kernels[l - 1].data_mut();
    for j in 0..m {
        for t in 0..half {
            let f = [net.u[j][t], net.u[j][t + half]];
            set(w, ci, j, 2 * t, f, 1.0);
            set(w, ci, j, 2 * t + 1, f, -1.0);
        }
    }
    p.biases[l - 1].data_mut().copy_from_slice(&net.c);
    p.output.data_mut().copy_from_slice(&net.a);
    Ok((cfg, p))
}

/// CNN on `4d` inputs computing the separation target exactly, with channels
/// `C_1 = C_L = 4`, `C_l = 2` otherwise, quadratic first and last layers and
/// zero biases.
pub fn build_separation_cnn(d: usize) -> Result<(ArchConfig, Params)> {
    let input = 4 * d;
    let l = log2_exact(input)?;
    let mut ch = vec![1, 4];
    ch.extend(std::iter::repeat(2).take(l.saturating_sub(2)));
    ch.push(4);
    let mut acts = vec![Activation::Relu2];
    acts.extend(std::iter::repeat(Activation::Relu).take(l - 2));
    acts.push(Activation::Relu2);
    let cfg = ArchConfig::cnn(input, 2, ch, acts)?;
    let mut p = Params::zeros(&cfg);
    let w1 = p.kernels[0].data_mut();
    set(w1, 1, 0, 0, [1.0, 0.0], 1.0);
    set(w1, 1, 1, 0, [1.0, 0.0], -1.0);
    set(w1, 1, 2, 0, [0.0, 1.0], 1.0);
    set(w1, 1, 3, 0, [0.0, 1.0], -1.0);
    // signs turning the four quadratic channels into x_odd² − x_even²
    let sq = [1.0, 1.0, -1.0, -1.0];
    let final_rows = [([1.0, 1.0], 1.0), ([1.0, 1.0], -1.0), ([1.0, -1.0], 1.0), ([1.0, -1.0], -1.0)];
    if l == 2 {
        let w = p.kernels[1].data_mut();
        for (o, (f, sign)) in final_rows.iter().enumerate() {
            for (c, s) in sq.iter().enumerate() {
                set(w, 4, o, c, *f, sign * s);
            }
        }
    } else {
        let w = p.kernels[1].data_mut();
        for (c, s) in sq.iter().enumerate() {
            set(w, 4, 0, c, [1.0, 1.0], *s);
            set(w, 4, 1, c, [1.0, 1.0], -s);
        }
        for layer in 3..l {
            let w = p.kernels[layer - 1].data_mut();
            set(w, 2, 0, 0, [1.0, 1.0], 1.0);
            set(w, 2, 0, 1, [1.0, 1.0], -1.0);
            set(w, 2, 1, 0, [1.0, 1.0], -1.0);
            set(w, 2, 1, 1, [1.0, 1.0], 1.0);
        }
        let w = p.kernels[l - 1].data_mut();
        for (o, (f, sign)) in final_rows.iter().enumerate() {
            set(w, 2, o, 0, *f, *sign);
            set(w, 2, o, 1, *f, -sign);
        }
    }
    let scale = 1.0 / (4.0 * d as f64);
    p.output.data_mut().copy_from_slice(&[scale, scale, -scale, -scale]);
    Ok((cfg, p))
}

/// The separation network as an LCN with the CNN filters replicated per patch.
pub fn build_separation_lcn(d: usize) -> Result<(ArchConfig, Params)> {
    let (cfg, p) = build_separation_cnn(d)?;
    embed_cnn_in_lcn(&cfg, &p)
}

/// CNN on `4d` inputs equal to `(1/m) Σ_j a_j σ(u_j·x_I + c_j)`.
pub fn assemble_sparse_cnn(d: usize, idx: &IndexSet, g: &TwoLayerNet) -> Result<(ArchConfig, Params)> {
    let (cfg, mut p) = build_relu_selector(d, idx, g)?;
    let m = g.width() as f64;
    p.output.data_mut().iter_mut().for_each(|v| *v /= m);
    Ok((cfg, p))
}

/// Bound `C(√k·L + m + Σ|a_j|/m)` for [`assemble_sparse_cnn`] with
/// `L = log₂(4d)`, valid when every `‖u_j‖, |c_j| ≤ 1`.
pub fn sparse_cnn_norm_budget(d: usize, k: usize, g: &TwoLayerNet) -> f64 {
    let l = (4.0 * d as f64).log2();
    let m = g.width() as f64;
    NORM_BUDGET_C * ((k as f64).sqrt() * l + m + g.a.iter().map(|a| a.abs()).sum::<f64>() / m)
}

/// One line of a construction verification report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstructionCheck {
    pub builder: String,
    pub d: usize,
    pub max_gap: f64,
    pub tolerance: f64,
    pub norm_p: f64,
    pub param_count: usize,
    pub passed: bool,
}

/// Builds every construction at `d` and compares it with a direct oracle on
/// `probes` Gaussian inputs.
pub fn verification_report(d: usize, probes: usize, seed: u64) -> Result<Vec<ConstructionCheck>> {
    use crate::nets::{forward_batch, hidden_state, param_norm_p};
    use crate::rng::stream;
    use crate::tasks::{sample_inputs, separation, InputDist};
    use rand::Rng;
    use rand_distr::StandardNormal;

    let input = 4 * d;
    let xs = sample_inputs(InputDist::StdGaussian, input, probes, seed)?;
    let mut r = stream(seed, "verify", 0);
    let mut out = Vec::new();
    let mut push = |name: &str, cfg: &ArchConfig, p: &Params, gap: f64, tol: f64| {
        out.push(ConstructionCheck {
            builder: name.into(),
            d,
            max_gap: gap,
            tolerance: tol,
            norm_p: param_norm_p(cfg, p),
            param_count: cfg.param_count(),
            passed: gap <= tol,
        });
    };

    // linear selector on the full 4d-dimensional input
    let k = 3.min(input);
    let mut picks: Vec<usize> = (0..k).map(|_| r.random_range(1..=input)).collect();
    picks.sort_unstable();
    picks.dedup();
    let idx = IndexSet::new(picks)?;
    let (cfg, p) = build_linear_selector(input, &idx)?;
    let mut gap: f64 = 0.0;
    for x in xs.chunks(input).take(200) {
        let z = hidden_state(&cfg, &p, x, cfg.depth())?;
        for (a, b) in z.data().iter().zip(idx.gather(x)) {
            gap = gap.max((a - b).abs());
        }
    }
    push("linear_selector", &cfg, &p, gap, 0.0);

    let rand_net = |r: &mut rand_chacha::ChaCha20Rng, m: usize, k: usize| {
        let scale = 1.0 / (k as f64).sqrt();
        TwoLayerNet::new(
            (0..m).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
            (0..m).map(|_| (0..k).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()).collect(),
            (0..m).map(|_| 0.5 * r.sample::<f64, _>(StandardNormal)).collect(),
        )
    };

    let g = rand_net(&mut r, 8, idx.len())?;
    let (cfg, p) = build_relu_selector(d, &idx, &g)?;
    let pred = forward_batch(&cfg, &p, &xs)?;
    let gap = xs.chunks(input).zip(&pred).map(|(x, h)| (h - g.eval(&idx.gather(x))).abs()).fold(0.0, f64::max);
    push("relu_selector", &cfg, &p, gap, 1e-12);

    let (cfg, p) = build_universal_feature_extractor(d)?;
    let mut gap: f64 = 0.0;
    for x in xs.chunks(input).take(200) {
        let z = hidden_state(&cfg, &p, x, cfg.depth())?;
        gap = gap.max(extractor_pattern_gap(d, x, z.data()));
    }
    push("feature_extractor", &cfg, &p, gap, 0.0);

    let net = rand_net(&mut r, 16, input)?;
    let (cfg, p) = build_two_layer_sim(d, &net)?;
    let pred = forward_batch(&cfg, &p, &xs)?;
    let gap = xs.chunks(input).zip(&pred).map(|(x, h)| (h - net.eval(x)).abs()).fold(0.0, f64::max);
    push("two_layer_sim", &cfg, &p, gap, 1e-10);

    let (cfg, p) = build_separation_cnn(d)?;
    let pred = forward_batch(&cfg, &p, &xs)?;
    let gap = relative_gap(&xs, &pred, input, separation);
    push("separation_cnn", &cfg, &p, gap, 1e-8);

    let (cfg, p) = build_separation_lcn(d)?;
    let pred = forward_batch(&cfg, &p, &xs)?;
    let gap = relative_gap(&xs, &pred, input, separation);
    push("separation_lcn", &cfg, &p, gap, 1e-8);

    let g = rand_net(&mut r, 16, idx.len())?;
    let (cfg, p) = assemble_sparse_cnn(d, &idx, &g)?;
    let pred = forward_batch(&cfg, &p, &xs)?;
    let m = g.width() as f64;
    let gap = xs.chunks(input).zip(&pred).map(|(x, h)| (h - g.eval(&idx.gather(x)) / m).abs()).fold(0.0, f64::max);
    push("sparse_cnn", &cfg, &p, gap, 1e-12);
    Ok(out)
}

/// Largest relative gap `|h − f| / max(1, |f|)`.
pub fn relative_gap(xs: &[f64], pred: &[f64], dim: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    xs.chunks(dim)
        .zip(pred)
        .map(|(x, h)| {
            let t = f(x);
            (h - t).abs() / t.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Largest deviation of an extractor output (`[2, 4d]` row-major) from the
/// expected `σ(±x)` layout.
pub fn extractor_pattern_gap(d: usize, x: &[f64], z: &[f64]) -> f64 {
    let c = 4 * d;
    let mut gap: f64 = 0.0;
    for p in 0..2 {
        for t in 0..2 * d {
            let xi = x[t + 2 * d * p];
            gap = gap.max((z[p * c + 2 * t] - relu(xi)).abs());
            gap = gap.max((z[p * c + 2 * t + 1] - relu(-xi)).abs());
        }
    }
    gap
}
