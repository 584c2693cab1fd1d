//! Group actions on inputs and first-layer parameters, coupled-trajectory
//! equivariance checks and Monte Carlo `L²` distance laws.

use crate::error::{invalid, shape_err, Error, Result};
use crate::nets::{param_norm_p, ArchConfig, Family, Params};
use crate::rng::stream;
use crate::tasks::{pair_contrast, sample_inputs, separation, Dataset, InputDist};
use crate::training::{mean_se, Estimate, TrainConfig, Trainer};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement {
    /// Block-diagonal swap/identity on consecutive coordinate pairs; bit `i`
    /// swaps coordinates `2i` and `2i+1` (0-based).
    LocalPerm(Vec<bool>),
    /// A local permutation on `2d` pairs acting only on the first `d` of them.
    SemiLocalPerm(Vec<bool>),
    Orthogonal(DMatrix<f64>),
    /// `τ` on the leading `τ.nrows()` coordinates, identity on the rest.
    BlockOrtho { tau: DMatrix<f64>, dim: usize },
}

fn check_orthogonal(q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != q.ncols() {
        return shape_err("orthogonal matrix must be square");
    }
    let gap = (q * q.transpose() - DMatrix::identity(q.nrows(), q.nrows())).amax();
    if gap > 1e-10 {
        return invalid(format!("matrix is not orthogonal (gap {gap:.2e})"));
    }
    Ok(())
}

impl GroupElement {
    pub fn identity_local(pairs: usize) -> Self {
        GroupElement::LocalPerm(vec![false; pairs])
    }

    pub fn orthogonal(q: DMatrix<f64>) -> Result<Self> {
        check_orthogonal(&q)?;
        Ok(GroupElement::Orthogonal(q))
    }

    /// Semi-local permutation: `bits` has one entry per pair, and those past
    /// the first half must be unset.
    pub fn semi_local(bits: Vec<bool>) -> Result<Self> {
        if bits.len() % 2 != 0 || bits[bits.len() / 2..].iter().any(|&b| b) {
            return invalid("semi-local permutations only act on the first half of the pairs");
        }
        Ok(GroupElement::SemiLocalPerm(bits))
    }

    pub fn block_ortho(tau: DMatrix<f64>, dim: usize) -> Result<Self> {
        check_orthogonal(&tau)?;
        if tau.nrows() > dim {
            return shape_err("block larger than the ambient dimension");
        }
        Ok(GroupElement::BlockOrtho { tau, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            GroupElement::LocalPerm(b) | GroupElement::SemiLocalPerm(b) => 2 * b.len(),
            GroupElement::Orthogonal(q) => q.nrows(),
            GroupElement::BlockOrtho { dim, .. } => *dim,
        }
    }

    fn bits(&self) -> Option<&[bool]> {
        match self {
            GroupElement::LocalPerm(b) | GroupElement::SemiLocalPerm(b) => Some(b),
            _ => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return shape_err(format!("input of length {} for group element on {}", x.len(), self.dim()));
        }
        Ok(match self {
            GroupElement::LocalPerm(b) | GroupElement::SemiLocalPerm(b) => {
                let mut y = x.to_vec();
                for (i, &flip) in b.iter().enumerate() {
                    if flip {
                        y.swap(2 * i, 2 * i + 1);
                    }
                }
                y
            }
            GroupElement::Orthogonal(q) => matvec(q, x),
            GroupElement::BlockOrtho { tau, .. } => {
                let k = tau.nrows();
                let mut y = matvec(tau, &x[..k]);
                y.extend_from_slice(&x[k..]);
                y
            }
        })
    }

    /// Applies the element to every row of a row-major batch.
    pub fn apply_rows(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        if xs.len() % dim != 0 {
            return shape_err("batch length is not a multiple of the group dimension");
        }
        let rows: Result<Vec<Vec<f64>>> = xs.par_chunks(dim).map(|x| self.apply(x)).collect();
        Ok(rows?.concat())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            GroupElement::Orthogonal(q) => q.clone(),
            GroupElement::BlockOrtho { tau, dim } => {
                let mut m = DMatrix::identity(*dim, *dim);
                m.view_mut((0, 0), (tau.nrows(), tau.nrows())).copy_from(tau);
                m
            }
            GroupElement::LocalPerm(_) | GroupElement::SemiLocalPerm(_) => {
                let n = self.dim();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("dimension matches");
                    m.set_column(j, &nalgebra::DVector::from_vec(col));
                }
                m
            }
        }
    }

    /// `self ∘ other`, i.e. `other` acts first.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.dim() != other.dim() {
            return shape_err("composing elements of different dimension");
        }
        Ok(match (self, other) {
            (GroupElement::SemiLocalPerm(a), GroupElement::SemiLocalPerm(b)) => GroupElement::SemiLocalPerm(xor(a, b)),
            (a, b) if a.bits().is_some() && b.bits().is_some() => GroupElement::LocalPerm(xor(a.bits().unwrap(), b.bits().unwrap())),
            _ => GroupElement::Orthogonal(self.matrix() * other.matrix()),
        })
    }

    pub fn inverse(&self) -> GroupElement {
        match self {
            GroupElement::LocalPerm(_) | GroupElement::SemiLocalPerm(_) => self.clone(),
            GroupElement::Orthogonal(q) => GroupElement::Orthogonal(q.transpose()),
            GroupElement::BlockOrtho { tau, dim } => GroupElement::BlockOrtho { tau: tau.transpose(), dim: *dim },
        }
    }
}

fn xor(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

fn matvec(q: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..q.nrows()).map(|i| (0..q.ncols()).map(|j| q[(i, j)] * x[j]).sum()).collect()
}

/// Number of blocks on which two local permutations differ.
pub fn rho_loc(a: &GroupElement, b: &GroupElement) -> Result<usize> {
    match (a.bits(), b.bits()) {
        (Some(x), Some(y)) if x.len() == y.len() => Ok(x.iter().zip(y).filter(|(p, q)| p != q).count()),
        (Some(_), Some(_)) => shape_err("local permutations of different size"),
        _ => Err(Error::Unsupported("rho_loc is defined for local permutations only".into())),
    }
}

pub fn random_local_perm(pairs: usize, seed: u64) -> GroupElement {
    let mut r = stream(seed, "local_perm", 0);
    GroupElement::LocalPerm((0..pairs).map(|_| r.random::<bool>()).collect())
}

/// Local permutation on `2d` pairs flipping exactly `s` of the first `d`.
pub fn semi_local_with_flips(d: usize, s: usize, seed: u64) -> Result<GroupElement> {
    if s > d {
        return invalid("cannot flip more than d blocks");
    }
    let mut r = stream(seed, "semi_local", 0);
    let mut bits = vec![false; 2 * d];
    for i in sample(&mut r, d, s) {
        bits[i] = true;
    }
    GroupElement::semi_local(bits)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `diag(R)` moved into `Q`.
pub fn sample_haar_orthogonal(dim: usize, seed: u64) -> Result<GroupElement> {
    if dim == 0 {
        return invalid("dimension must be positive");
    }
    let mut r = stream(seed, "haar", 0);
    let g = DMatrix::from_fn(dim, dim, |_, _| r.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, rr) = (qr.q(), qr.r());
    for j in 0..dim {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    GroupElement::orthogonal(q)
}

/// 45° construction on `2d` coordinates: with `u = x_{1:d}`, `v = x_{d+1:2d}`
/// the output pairs are `((u_i + (Uv)_i)/√2, (u_i − (Uv)_i)/√2)`.
pub fn tau_u_construct(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_orthogonal(u)?;
    let d = u.nrows();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut t = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        t[(2 * i, i)] = h;
        t[(2 * i + 1, i)] = h;
        for j in 0..d {
            t[(2 * i, d + j)] = h * u[(i, j)];
            t[(2 * i + 1, d + j)] = -h * u[(i, j)];
        }
    }
    Ok(t)
}

/// `g_U(x) = x_{1:d}ᵀ U x_{d+1:2d}`.
pub fn g_u(u: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = u.nrows();
    (0..d).map(|i| x[i] * (0..d).map(|j| u[(i, j)] * x[d + j]).sum::<f64>()).sum()
}

/// Ratio `q∘τ_U / g_U` measured on Gaussian probes: `(mean, max deviation)`.
pub fn tau_u_constant(u: &DMatrix<f64>, probes: usize, seed: u64) -> Result<(f64, f64)> {
    let t = tau_u_construct(u)?;
    let d = u.nrows();
    let xs = sample_inputs(InputDist::StdGaussian, 2 * d, probes, seed)?;
    let ratios: Vec<f64> = xs
        .chunks(2 * d)
        .map(|x| pair_contrast(&matvec(&t, x)) / g_u(u, x))
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let dev = ratios.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    Ok((mean, dev))
}

/// `f_U(x) = (1/d) g_U(x_{1:2d}) q(x_{2d+1:4d})` on `4d` inputs.
pub fn f_u(u: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = u.nrows();
    g_u(u, &x[..2 * d]) * pair_contrast(&x[2 * d..4 * d]) / d as f64
}

/// Image of first-layer parameters under the input map `τ`, so that
/// `h_{Q(τ)θ}(τ(x)) = h_θ(x)`.
pub fn param_action(cfg: &ArchConfig, p: &Params, elem: &GroupElement) -> Result<Params> {
    if elem.dim() != cfg.input_dim {
        return shape_err(format!("group acts on {} coordinates, model input is {}", elem.dim(), cfg.input_dim));
    }
    let mut out = p.clone();
    match (cfg.family, elem) {
        (Family::Lcn, GroupElement::LocalPerm(bits) | GroupElement::SemiLocalPerm(bits)) => {
            if cfg.stride != 2 {
                return Err(Error::Unsupported("local permutations act on LCN parameters only for stride 2".into()));
            }
            let shape = cfg.kernel_shape(1);
            let (co, ci, width) = (shape[0], shape[1], shape[2]);
            let w = out.kernels[0].data_mut();
            for c in 0..co * ci {
                for (i, &flip) in bits.iter().enumerate() {
                    if flip {
                        w.swap(c * width + 2 * i, c * width + 2 * i + 1);
                    }
                }
            }
        }
        (Family::Fcn, _) => {
            let m = elem.matrix();
            let shape = cfg.kernel_shape(1);
            let w = DMatrix::from_row_slice(shape[0], shape[1], p.kernels[0].data());
            let moved = w * m.transpose();
            let data = out.kernels[0].data_mut();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    data[i * shape[1] + j] = moved[(i, j)];
                }
            }
        }
        (fam, _) => {
            return Err(Error::Unsupported(format!("no parameter action for {} under this group", fam.name())));
        }
    }
    Ok(out)
}

/// Scaled deviation `max |a − b| / (1 + ‖θ‖_P)`.
pub fn scaled_deviation(cfg: &ArchConfig, theta: &Params, other: &Params) -> f64 {
    theta.max_abs_diff(other) / (1.0 + param_norm_p(cfg, theta))
}

/// Runs `θ_t` on `S` and `θ′_t` on `τ(S)` from `Q(τ)θ_0` with shared minibatch
/// indices and returns `max_t` of the scaled deviation between `Q(τ)θ_t` and
/// `θ′_t`.
pub fn coupled_equivariance_test(
    cfg: &ArchConfig,
    elem: &GroupElement,
    data: &Dataset,
    tc: &TrainConfig,
    theta0: &Params,
) -> Result<f64> {
    let moved = Dataset::new(elem.apply_rows(&data.x)?, data.y.clone(), data.input_dim)?;
    let mut a = Trainer::new(cfg, theta0, tc)?;
    let mut b = Trainer::new(cfg, &param_action(cfg, theta0, elem)?, tc)?;
    let mut worst: f64 = 0.0;
    for t in 0..=tc.steps {
        let pa = a.params();
        let image = param_action(cfg, &pa, elem)?;
        let dev = scaled_deviation(cfg, &image, &b.params());
        if !dev.is_finite() {
            return Err(Error::Diverged { step: t });
        }
        worst = worst.max(dev);
        if t < tc.steps {
            a.step(data)?;
            b.step(&moved)?;
        }
    }
    Ok(worst)
}

/// Monte Carlo estimate of `‖f − g‖²_{L²(P)}`.
pub fn mc_l2_distance<F, G>(f: F, g: G, dist: InputDist, dim: usize, n: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if n < 100 {
        return invalid("need at least 100 samples");
    }
    let xs = sample_inputs(dist, dim, n, seed)?;
    let sq: Vec<f64> = xs.par_chunks(dim).map(|x| (f(x) - g(x)).powi(2)).collect();
    Ok(mean_se(&sq))
}

/// `‖h*∘τ − h*∘τ′‖²` (optionally truncated at `a0`) for two local permutations
/// of a `4d` input.
pub fn separation_distance(a: &GroupElement, b: &GroupElement, a0: Option<f64>, n: usize, seed: u64) -> Result<Estimate> {
    let dim = a.dim();
    if dim % 4 != 0 || b.dim() != dim {
        return shape_err("separation distances need two elements on 4d coordinates");
    }
    let cap = a0.unwrap_or(f64::INFINITY);
    let h = |e: &GroupElement, x: &[f64]| separation(&e.apply(x).expect("dimension checked")).clamp(-cap, cap);
    mc_l2_distance(|x| h(a, x), |x| h(b, x), InputDist::StdGaussian, dim, n, seed)
}

/// Fraction of Gaussian inputs with `|h*(x)| > a0`.
pub fn truncation_rate(d: usize, a0: f64, n: usize, seed: u64) -> Result<Estimate> {
    let xs = sample_inputs(InputDist::StdGaussian, 4 * d, n, seed)?;
    let hits: Vec<f64> = xs.par_chunks(4 * d).map(|x| f64::from(u8::from(separation(x).abs() > a0))).collect();
    Ok(mean_se(&hits))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Two-sample KS critical value at level 1%.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Largest per-coordinate KS statistic between `τ(X)` and an independent
/// Gaussian sample `X′`.
pub fn invariance_ks(elem: &GroupElement, n: usize, seed: u64) -> Result<f64> {
    let dim = elem.dim();
    let x = sample_inputs(InputDist::StdGaussian, dim, n, seed)?;
    let y = sample_inputs(InputDist::StdGaussian, dim, n, seed.wrapping_add(0x5eed))?;
    let tx = elem.apply_rows(&x)?;
    let stats: Vec<f64> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let a: Vec<f64> = tx.iter().skip(j).step_by(dim).copied().collect();
            let b: Vec<f64> = y.iter().skip(j).step_by(dim).copied().collect();
            ks_statistic(&a, &b)
        })
        .collect();
    Ok(stats.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::forward;
    use crate::tasks::{make_dataset, TargetSpec};
    use crate::tensor::Activation;
    use crate::training::{Init, Optimizer};
    use proptest::prelude::*;

    fn probe(dim: usize, seed: u64) -> Vec<f64> {
        sample_inputs(InputDist::StdGaussian, dim, 1, seed).unwrap()
    }

    #[test]
    fn identity_and_involution() {
        let e = GroupElement::identity_local(4);
        let x = probe(8, 1);
        assert_eq!(e.apply(&x).unwrap(), x);
        assert_eq!(rho_loc(&e, &e).unwrap(), 0);
        let all = GroupElement::LocalPerm(vec![true; 4]);
        assert_eq!(all.apply(&all.apply(&x).unwrap()).unwrap(), x);
        assert!(e.apply(&x[..6]).is_err());
    }

    #[test]
    fn group_axioms() {
        for seed in 0..20 {
            let a = random_local_perm(5, seed);
            let b = random_local_perm(5, seed + 100);
            let c = random_local_perm(5, seed + 200);
            let x = probe(10, seed);
            let ab_c = a.compose(&b).unwrap().compose(&c).unwrap();
            let a_bc = a.compose(&b.compose(&c).unwrap()).unwrap();
            assert_eq!(ab_c, a_bc);
            assert_eq!(a.compose(&b).unwrap().apply(&x).unwrap(), a.apply(&b.apply(&x).unwrap()).unwrap());
            assert_eq!(a.compose(&a.inverse()).unwrap(), GroupElement::identity_local(5));

            let q = sample_haar_orthogonal(6, seed).unwrap();
            let r = sample_haar_orthogonal(6, seed + 1).unwrap();
            let s = sample_haar_orthogonal(6, seed + 2).unwrap();
            let lhs = q.compose(&r).unwrap().compose(&s).unwrap().matrix();
            let rhs = q.compose(&r.compose(&s).unwrap()).unwrap().matrix();
            assert!((lhs - rhs).amax() < 1e-12);
            let id = q.compose(&q.inverse()).unwrap().matrix();
            assert!((id - DMatrix::identity(6, 6)).amax() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rho_loc_is_hamming(a in proptest::collection::vec(any::<bool>(), 12), b in proptest::collection::vec(any::<bool>(), 12)) {
            let ham = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert_eq!(rho_loc(&GroupElement::LocalPerm(a), &GroupElement::LocalPerm(b)).unwrap(), ham);
        }

        #[test]
        fn rho_loc_triangle(a in proptest::collection::vec(any::<bool>(), 9), b in proptest::collection::vec(any::<bool>(), 9), c in proptest::collection::vec(any::<bool>(), 9)) {
            let (a, b, c) = (GroupElement::LocalPerm(a), GroupElement::LocalPerm(b), GroupElement::LocalPerm(c));
            prop_assert!(rho_loc(&a, &c).unwrap() <= rho_loc(&a, &b).unwrap() + rho_loc(&b, &c).unwrap());
            prop_assert_eq!(rho_loc(&a, &b).unwrap(), rho_loc(&b, &a).unwrap());
        }
    }

    #[test]
    fn semi_local_rejects_second_half() {
        assert!(GroupElement::semi_local(vec![false, false, true, false]).is_err());
        assert!(GroupElement::semi_local(vec![true, false, false, false]).is_ok());
        let e = semi_local_with_flips(8, 3, 1).unwrap();
        assert_eq!(rho_loc(&e, &GroupElement::identity_local(16)).unwrap(), 3);
    }

    #[test]
    fn haar_properties() {
        let q = sample_haar_orthogonal(8, 3).unwrap().matrix();
        assert!((q.transpose() * &q - DMatrix::identity(8, 8)).amax() < 1e-10);
        let signs: Vec<f64> = (0..10_000).map(|s| sample_haar_orthogonal(1, s).unwrap().matrix()[(0, 0)]).collect();
        assert!(signs.iter().all(|v| (v.abs() - 1.0).abs() < 1e-12));
        let est = mean_se(&signs);
        assert!(est.value.abs() < 3.0 * est.se);
        let traces: Vec<f64> = (0..10_000).map(|s| sample_haar_orthogonal(8, s).unwrap().matrix().trace()).collect();
        let est = mean_se(&traces);
        assert!(est.value.abs() < 3.0 * est.se, "{est:?}");
        assert!(GroupElement::orthogonal(DMatrix::from_element(2, 2, 1.0)).is_err());
    }

    #[test]
    fn tau_u_has_constant_two() {
        let id = DMatrix::<f64>::identity(3, 3);
        let t = tau_u_construct(&id).unwrap();
        let x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert!((pair_contrast(&matvec(&t, &x)) - 2.0 * 14.0).abs() < 1e-12);
        let u = sample_haar_orthogonal(5, 9).unwrap().matrix();
        let t = tau_u_construct(&u).unwrap();
        check_orthogonal(&t).unwrap();
        let (c, dev) = tau_u_constant(&u, 10_000, 2).unwrap();
        assert!((c - 2.0).abs() < 1e-8, "{c}");
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn param_actions_are_exact() {
        let lcn = ArchConfig::lcn(16, 2, vec![1, 3, 2, 2, 2], vec![Activation::Relu; 4]).unwrap();
        let fcn = ArchConfig::fcn(16, &[5, 3], vec![Activation::Relu; 2]).unwrap();
        for t in 0..1000u64 {
            let x = probe(16, t);
            let perm = random_local_perm(8, t);
            let p = Params::gaussian(&lcn, 1.0, &mut stream(t, "pa", 0));
            let lhs = forward(&lcn, &param_action(&lcn, &p, &perm).unwrap(), &perm.apply(&x).unwrap()).unwrap();
            assert_eq!(lhs, forward(&lcn, &p, &x).unwrap());

            let q = sample_haar_orthogonal(16, t).unwrap();
            let p = Params::gaussian(&fcn, 1.0, &mut stream(t, "pa", 1));
            let lhs = forward(&fcn, &param_action(&fcn, &p, &q).unwrap(), &q.apply(&x).unwrap()).unwrap();
            assert!((lhs - forward(&fcn, &p, &x).unwrap()).abs() < 1e-10);
        }
        let cnn = ArchConfig::cnn(16, 2, vec![1, 2, 2, 2, 2], vec![Activation::Relu; 4]).unwrap();
        let p = Params::zeros(&cnn);
        assert!(matches!(param_action(&cnn, &p, &random_local_perm(8, 0)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn identity_coupling_has_zero_deviation() {
        let cfg = ArchConfig::lcn(16, 2, vec![1, 2, 2, 2, 2], vec![Activation::Relu; 4]).unwrap();
        let spec = TargetSpec::separation(4);
        let data = make_dataset(&spec, InputDist::StdGaussian, 32, 0.1, 1).unwrap();
        let tc = TrainConfig { optimizer: Optimizer::adam(1e-2), steps: 20, batch: Some(8), ..Default::default() };
        let p0 = Params::gaussian(&cfg, 0.5, &mut stream(0, "c", 0));
        let dev = coupled_equivariance_test(&cfg, &GroupElement::identity_local(8), &data, &tc, &p0).unwrap();
        assert_eq!(dev, 0.0);
        let _ = Init::UniformFanIn;
    }

    #[test]
    fn distance_basics() {
        let e = mc_l2_distance(|x| x[0], |x| x[0], InputDist::StdGaussian, 3, 1000, 1).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(mc_l2_distance(|x| x[0], |x| x[0], InputDist::StdGaussian, 3, 10, 1).is_err());
        // untruncated law at small size
        let d = 8;
        let a = semi_local_with_flips(d, 2, 4).unwrap();
        let est = separation_distance(&a, &GroupElement::identity_local(2 * d), None, 40_000, 5).unwrap();
        let want = 64.0 * 2.0 / d as f64;
        assert!((est.value - want).abs() < 3.0 * est.se, "{est:?} vs {want}");
    }

    #[test]
    fn ks_statistic_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[1.0, 2.0]), 1.0);
        let e = random_local_perm(4, 2);
        assert!(invariance_ks(&e, 20_000, 3).unwrap() < ks_critical_1pct(20_000, 20_000));
    }
}
