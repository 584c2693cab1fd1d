//! Packing and covering calculators, Fano lower bounds, sample-complexity
//! sweeps, the excess-risk formula and depth decomposition checks.

use crate::error::{invalid, Error, Result};
use crate::nets::{forward, q_bar, ArchConfig, Family, Params};
use crate::rng::stream;
use crate::symmetry::{f_u, sample_haar_orthogonal, semi_local_with_flips, separation_distance, GroupElement};
use crate::tasks::InputDist;
use crate::training::Estimate;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// One named output of a calculator together with the formula that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundEntry {
    pub name: String,
    pub value: f64,
    pub formula: &'static str,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundReport {
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64, formula: &'static str) -> Result<()> {
        if !value.is_finite() {
            return invalid(format!("non-finite bound value for {}", formula));
        }
        self.entries.push(BoundEntry { name: name.into(), value, formula });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,value,formula\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{:e},{}", e.name, e.value, e.formula);
        }
        s
    }
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `Σ_{k≤m} C(n, k)` exactly.
pub fn binom_sum(n: u64, m: u64) -> BigUint {
    (0..=m.min(n)).map(|k| binomial(n, k)).sum()
}

/// Natural log of a big integer, usable beyond the `f64` range.
pub fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    (x >> shift).to_f64().expect("64-bit value").ln() + shift as f64 * std::f64::consts::LN_2
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinomSum {
    pub exact: BigUint,
    /// `(en/m)^m`
    pub bound: f64,
}

impl BinomSum {
    pub fn holds(&self) -> bool {
        ln_big(&self.exact) <= self.bound.ln() + 1e-12
    }
}

pub fn binom_sum_bound(n: u64, m: u64) -> Result<BinomSum> {
    if m == 0 || m > n {
        return invalid(format!("need 1 <= m <= n, got m = {m}, n = {n}"));
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(BinomSum { exact: binom_sum(n, m), bound: (std::f64::consts::E * nf / mf).powf(mf) })
}

/// Volume lower bound `2^n / Σ_{k≤⌊m⌋} C(n,k)` on the size of a packing of the
/// Hamming cube with pairwise distances above `m`, as a log.
pub fn hamming_packing_ln(n: u64, m: f64) -> Result<f64> {
    if !(m > 0.0) || m > n as f64 {
        return invalid("need 0 < m <= n");
    }
    Ok(n as f64 * std::f64::consts::LN_2 - ln_big(&binom_sum(n, m.floor() as u64)))
}

pub fn hamming_packing_lb(n: u64, m: f64) -> Result<f64> {
    Ok(hamming_packing_ln(n, m)?.exp())
}

/// Lexicographic greedy packing: every codeword differs from all earlier
/// ones in more than `m` positions. The result is maximal.
pub fn greedy_packing(n: u32, m: u32) -> Result<Vec<u32>> {
    if n == 0 || n > 16 {
        return invalid("greedy packing is limited to 1 <= n <= 16");
    }
    let mut code: Vec<u32> = Vec::new();
    for w in 0..(1u32 << n) {
        if code.iter().all(|c| (c ^ w).count_ones() > m) {
            code.push(w);
        }
    }
    Ok(code)
}

/// Checks pairwise separation and maximality of a packing by brute force.
pub fn verify_packing(code: &[u32], n: u32, m: u32) -> bool {
    let separated = code.iter().enumerate().all(|(i, a)| code[i + 1..].iter().all(|b| (a ^ b).count_ones() > m));
    let maximal = (0..(1u32 << n)).all(|w| code.iter().any(|c| (c ^ w).count_ones() <= m));
    separated && maximal
}

/// Base of the exponential packing bound for semi-local groups, `2/(5e)^{1/4}`.
pub fn semiloc_base() -> f64 {
    2.0 / (5.0 * std::f64::consts::E).powf(0.25)
}

/// `|μ1 − μ2|² / (2σ²)`.
pub fn gaussian_kl(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return invalid("sigma must be positive");
    }
    Ok((mu1 - mu2).powi(2) / (2.0 * sigma * sigma))
}

/// Fano lower bound from `M` hypotheses with squared `L²` distances
/// `pairwise` (row-major `M × M`).
pub fn fano_bound(m: usize, a: f64, pairwise: &[f64], n: f64, sigma: f64) -> Result<f64> {
    if m < 2 {
        return invalid("Fano's bound needs at least two hypotheses");
    }
    if pairwise.len() != m * m {
        return invalid("pairwise matrix must be M x M");
    }
    let mut total = 0.0;
    let mut min_off = f64::INFINITY;
    for i in 0..m {
        if pairwise[i * m + i] != 0.0 {
            return invalid("pairwise matrix must have a zero diagonal");
        }
        for j in 0..m {
            if (pairwise[i * m + j] - pairwise[j * m + i]).abs() > 1e-12 * pairwise[i * m + j].abs().max(1.0) {
                return invalid("pairwise matrix must be symmetric");
            }
            if i != j {
                min_off = min_off.min(pairwise[i * m + j]);
            }
            total += pairwise[i * m + j];
        }
    }
    if 4.0 * a > min_off + 1e-12 {
        return Err(Error::Precondition(format!("separation {min_off} is below 4A = {}", 4.0 * a)));
    }
    let mean_off = total / (m * (m - 1)) as f64;
    fano_bound_uniform((m as f64).ln(), a, mean_off, n, sigma)
}

/// Fano bound given `log M` and the mean off-diagonal distance, for packings
/// too large to enumerate.
pub fn fano_bound_uniform(log_m: f64, a: f64, mean_dist: f64, n: f64, sigma: f64) -> Result<f64> {
    if !(log_m > 0.0) || !(sigma > 0.0) {
        return invalid("need log M > 0 and sigma > 0");
    }
    // Σ_{j,j'} d / M² = (1 − 1/M) · mean, with 1/M negligible once log M is large
    let frac = 1.0 - (-log_m).exp();
    let mid = n * frac * mean_dist / (2.0 * sigma * sigma * log_m);
    Ok((a * (1.0 - mid - std::f64::consts::LN_2 / log_m)).max(0.0))
}

/// Smallest integer `n` with `fano_bound_uniform < eps0`, and the real-valued
/// crossing point.
pub fn fano_threshold(log_m: f64, a: f64, mean_dist: f64, sigma: f64, eps0: f64) -> Result<(u64, f64)> {
    if !(eps0 > 0.0) || eps0 >= a * (1.0 - std::f64::consts::LN_2 / log_m) {
        return invalid("eps0 must be positive and below the n = 0 bound");
    }
    let frac = 1.0 - (-log_m).exp();
    let real = (1.0 - std::f64::consts::LN_2 / log_m - eps0 / a) * 2.0 * sigma * sigma * log_m / (frac * mean_dist);
    let mut n = real.floor().max(0.0) as u64;
    while fano_bound_uniform(log_m, a, mean_dist, n as f64, sigma)? >= eps0 {
        n += 1;
    }
    Ok((n, real))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepFamily {
    Lcn,
    Fcn,
}

/// Distance-law constants `c_lo, c_hi` with `c_lo ρ/d ≤ dist ≤ c_hi ρ/d`
/// (`ρ` the local-permutation distance, or `‖U−U′‖²_F` for FCN).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub c_lo: f64,
    pub c_hi: f64,
}

/// Calibrates the LCN distance law at `d_ref` by Monte Carlo: the upper
/// constant from untruncated distances at `ρ = d`, the lower from truncated
/// distances at `ρ = d/4`.
pub fn calibrate_lcn(d_ref: usize, a0: f64, n: usize, seed: u64) -> Result<Calibration> {
    let id = GroupElement::identity_local(2 * d_ref);
    let quarter = semi_local_with_flips(d_ref, d_ref / 4, seed)?;
    let full = semi_local_with_flips(d_ref, d_ref, seed)?;
    let hi = separation_distance(&full, &id, None, n, seed)?;
    let lo = separation_distance(&quarter, &id, Some(a0), n, seed + 1)?;
    let quarter_raw = separation_distance(&quarter, &id, None, n, seed + 2)?;
    // the untruncated law must be linear in ρ for the constants to mean anything
    let predicted = hi.value * (d_ref / 4) as f64 / d_ref as f64;
    if (quarter_raw.value - predicted).abs() > 5.0 * (quarter_raw.se + hi.se / 4.0) {
        return Err(Error::Calibration(format!("distance law not linear: {} vs {}", quarter_raw.value, predicted)));
    }
    Ok(Calibration { c_lo: lo.value * d_ref as f64 / (d_ref / 4) as f64, c_hi: hi.value })
}

/// Calibrates `c` in `dist(f_U, f_U′) ≈ c ‖U − U′‖²_F / d` from pairs of Haar
/// matrices at `d_ref`, truncated (`c_lo`) and not (`c_hi`).
pub fn calibrate_fcn(d_ref: usize, a0: f64, n: usize, seed: u64) -> Result<Calibration> {
    let u = sample_haar_orthogonal(d_ref, seed)?.matrix();
    let v = sample_haar_orthogonal(d_ref, seed + 1)?.matrix();
    let frob = (&u - &v).norm_squared();
    let dist = |cap: f64, s: u64| -> Result<Estimate> {
        crate::symmetry::mc_l2_distance(
            |x| f_u(&u, x).clamp(-cap, cap),
            |x| f_u(&v, x).clamp(-cap, cap),
            InputDist::StdGaussian,
            4 * d_ref,
            n,
            s,
        )
    };
    let hi = dist(f64::INFINITY, seed + 2)?;
    let lo = dist(a0, seed + 3)?;
    let scale = d_ref as f64 / frob;
    if !(lo.value > 0.0) {
        return Err(Error::Calibration("truncated FCN distance vanished".into()));
    }
    Ok(Calibration { c_lo: lo.value * scale, c_hi: hi.value * scale })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub d: usize,
    pub log_m: f64,
    pub a: f64,
    pub mean_dist: f64,
    pub n_star: u64,
    pub n_star_real: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub family: SweepFamily,
    pub points: Vec<SweepPoint>,
    pub slope: f64,
}

/// Packing radius for the FCN packing of `O(d)`: `‖U − U′‖_F ≥ FCN_EPS √d`,
/// with `log M = d(d−1)/2 · log(1/FCN_EPS)`.
pub const FCN_EPS: f64 = 0.25;

/// Minimal `n` per `d` at which the Fano bound drops below `eps0 · A`, where
/// `A` is a quarter of the minimum packing distance.
pub fn lower_bound_sweep(family: SweepFamily, ds: &[usize], sigma: f64, eps0_rel: f64, cal: Calibration) -> Result<SweepResult> {
    if ds.len() < 2 {
        return invalid("a sweep needs at least two dimensions");
    }
    let points: Result<Vec<SweepPoint>> = ds
        .par_iter()
        .map(|&d| {
            let (log_m, min_dist, mean_dist) = match family {
                SweepFamily::Lcn => {
                    let m = (d / 4).max(1);
                    (hamming_packing_ln(d as u64, m as f64)?, cal.c_lo * m as f64 / d as f64, cal.c_hi)
                }
                SweepFamily::Fcn => {
                    let df = d as f64;
                    (df * (df - 1.0) / 2.0 * (1.0 / FCN_EPS).ln(), cal.c_lo * FCN_EPS * FCN_EPS, 4.0 * cal.c_hi)
                }
            };
            let a = min_dist / 4.0;
            let (n_star, n_star_real) = fano_threshold(log_m, a, mean_dist, sigma, eps0_rel * a)?;
            Ok(SweepPoint { d, log_m, a, mean_dist, n_star, n_star_real })
        })
        .collect();
    let points = points?;
    let xs: Vec<f64> = points.iter().map(|p| (p.d as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.n_star as f64).ln()).collect();
    Ok(SweepResult { family, points, slope: fit_slope(&xs, &ys) })
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `M̂_n = √((1/n) Σ Q̄(x_i)² (‖x_i‖ + 1)²)`.
pub fn m_hat(cfg: &ArchConfig, xs: &[f64], j: f64) -> Result<f64> {
    let dim = cfg.input_dim;
    let rows: Result<Vec<f64>> = xs
        .chunks(dim)
        .map(|x| {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((q_bar(cfg, x, j)? * (norm + 1.0)).powi(2))
        })
        .collect();
    let rows = rows?;
    Ok((rows.iter().sum::<f64>() / rows.len() as f64).sqrt())
}

/// Log of the covering bound `(3 M̂_n J (1+J)^L / t)^N` for the class
/// `‖θ‖ ≤ J`, with `N` the parameter count.
pub fn covering_bound_ln(cfg: &ArchConfig, j: f64, t: f64, xs: &[f64]) -> Result<f64> {
    if !(j > 0.0) {
        return invalid("J must be positive");
    }
    let gamma = m_hat(cfg, xs, j)? * j * (1.0 + j).powi(cfg.depth() as i32);
    if !(t > 0.0) || t > gamma {
        return invalid(format!("t = {t} outside (0, {gamma}]"));
    }
    Ok(cfg.param_count() as f64 * (3.0 * gamma / t).ln())
}

pub struct ExcessRiskInputs<'a> {
    pub eps_star: f64,
    pub m_star: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub delta: f64,
    pub n: f64,
    pub p_h: f64,
    /// Covering scale `γ(·)` of the hypothesis class.
    pub gamma: &'a dyn Fn(f64) -> f64,
    pub alpha_h: f64,
    pub sigma: f64,
}

/// `U_λ = (ε* + σ² + B² √(2 log(2/δ)/n)) / (2λ) + M*`.
pub fn u_lambda(x: &ExcessRiskInputs) -> f64 {
    (x.eps_star + x.sigma * x.sigma + x.b * x.b * (2.0 * (2.0 / x.delta).ln() / x.n).sqrt()) / (2.0 * x.lambda) + x.m_star
}

/// Four-term right-hand side of the excess-risk bound. Returns the total and
/// the terms (truncation, regularization, capacity, confidence).
pub fn excess_risk_bound(x: &ExcessRiskInputs) -> Result<(f64, [f64; 4])> {
    if !(x.b > 2.0 * x.a) {
        return invalid("need B > 2A");
    }
    if !(x.delta > 0.0 && x.delta < 0.5) || !(x.n >= 1.0) || !(x.lambda > 0.0) || !(x.sigma > 0.0) {
        return invalid("need delta in (0, 1/2), n >= 1, lambda > 0, sigma > 0");
    }
    let gap = x.b - 2.0 * x.a;
    let trunc = x.sigma.powi(3) * x.b / (gap * gap) * (-(gap * gap) / (2.0 * x.sigma * x.sigma)).exp();
    let reg = x.lambda * x.m_star;
    let cap = x.b * x.b * (x.p_h * (x.b * (x.gamma)(u_lambda(x) / x.alpha_h) + 3.0).ln() / x.n).sqrt();
    let conf = x.b * x.b * ((4.0 / x.delta).ln() / x.n).sqrt();
    let terms = [trunc, reg, cap, conf];
    Ok((terms.iter().sum(), terms))
}

/// `h(x⁺⁺) − h(x⁺⁰) − h(x⁰⁺) + h(x⁰⁰)` where coordinates `i, j` (1-based) of `x`
/// take the values `(a1, b1)` and `(a0, b0)`.
#[allow(clippy::too_many_arguments)]
pub fn mixed_difference(cfg: &ArchConfig, p: &Params, x: &[f64], i: usize, j: usize, a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    let mut y = x.to_vec();
    let mut h = |va: f64, vb: f64| -> Result<f64> {
        y[i - 1] = va;
        y[j - 1] = vb;
        forward(cfg, p, &y)
    };
    Ok(h(a.0, b.0)? - h(a.0, b.1)? - h(a.1, b.0)? + h(a.1, b.1)?)
}

/// Coordinates probed by the depth test: `(1, 2d+1)` with downsampling,
/// `(1, 4d)` without, for a `4d` input.
pub fn decomposition_coords(cfg: &ArchConfig) -> (usize, usize) {
    match cfg.family {
        Family::CnnNoStride => (1, cfg.input_dim),
        _ => (1, cfg.input_dim / 2 + 1),
    }
}

/// Kernels `N(0, 2/fan_in)`, biases `N(0, 0.1²)`, read-out `N(0, 1)`, so
/// hidden states stay of order one at any depth.
fn he_gaussian<R: Rng>(cfg: &ArchConfig, r: &mut R) -> Params {
    let mut p = Params::zeros(cfg);
    for l in 1..=cfg.depth() {
        let fan_in = match cfg.family {
            Family::Fcn => cfg.channels[l - 1],
            _ => cfg.channels[l - 1] * cfg.stride,
        };
        let sd = (2.0 / fan_in as f64).sqrt();
        p.kernels[l - 1].data_mut().iter_mut().for_each(|v| *v = sd * r.sample::<f64, _>(StandardNormal));
        p.biases[l - 1].data_mut().iter_mut().for_each(|v| *v = 0.1 * r.sample::<f64, _>(StandardNormal));
    }
    p.output.data_mut().iter_mut().for_each(|v| *v = r.sample::<f64, _>(StandardNormal));
    p
}

/// Largest `|mixed difference|` over `trials` random Gaussian parameter sets
/// and probes. Rejects depths at which the receptive field could cover both
/// probed coordinates.
pub fn depth_decomposition_test(cfg: &ArchConfig, trials: usize, seed: u64) -> Result<f64> {
    let dim = cfg.input_dim;
    let l = cfg.depth();
    let allowed = match cfg.family {
        Family::Cnn | Family::Lcn => cfg.stride.pow(l as u32) <= dim / 2,
        Family::CnnNoStride => l * (cfg.stride - 1) < dim - 1,
        Family::Fcn => false,
    };
    if !allowed {
        return Err(Error::Precondition(format!("depth {l} is too large for the decomposition test at input {dim}")));
    }
    let (i, j) = decomposition_coords(cfg);
    let worst: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(seed, "decomposition", t as u64);
            let p = he_gaussian(cfg, &mut r);
            let x: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
            let a = (r.sample(StandardNormal), r.sample(StandardNormal));
            let b = (r.sample(StandardNormal), r.sample(StandardNormal));
            Ok(mixed_difference(cfg, &p, &x, i, j, a, b)?.abs())
        })
        .collect();
    Ok(worst?.into_iter().fold(0.0, f64::max))
}
