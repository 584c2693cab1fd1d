//! The subcommands. Each declares its keys, reads a [`Resolved`] config and
//! records output files and assertions in a [`Run`].

use crate::config::{key, Key, Resolved};
use crate::error::CliError;
use cnnlab::bounds::{
    binom_sum_bound, calibrate_fcn, calibrate_lcn, covering_bound_ln, excess_risk_bound, hamming_packing_ln, ln_big, lower_bound_sweep,
    m_hat, semiloc_base, BoundReport, ExcessRiskInputs, SweepFamily,
};
use cnnlab::constructor::{build_separation_cnn, verification_report};
use cnnlab::experiments::{figure2, Figure2Config};
use cnnlab::nets::{param_norm_p, ArchConfig, Family, Params};
use cnnlab::rng::stream;
use cnnlab::symmetry::{
    coupled_equivariance_test, f_u, mc_l2_distance, random_local_perm, sample_haar_orthogonal, semi_local_with_flips,
    separation_distance, truncation_rate, GroupElement,
};
use cnnlab::tasks::{make_dataset, InputDist, TargetKind, TargetSpec};
use cnnlab::tensor::Activation;
use cnnlab::training::{test_error, train, Init, LrSchedule, Optimizer, RegForm, TrainConfig};
use std::path::{Path, PathBuf};

pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Output directory, seed and what a subcommand produced.
pub struct Run {
    pub out: PathBuf,
    pub seed: u64,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
}

impl Run {
    pub fn new(out: &Path, seed: u64) -> Self {
        Self { out: out.to_path_buf(), seed, files: Vec::new(), checks: Vec::new() }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    /// CSV from serializable rows.
    fn csv_rows<T: serde::Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| CliError::Io { path: name.into(), source: e })?;
        Ok(())
    }

    /// CSV from a header and string records.
    fn csv_records(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| CliError::Io { path: name.into(), source: e })?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| CliError::Io { path: p.display().to_string(), source: e })
    }
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

pub const CHECK_CONSTRUCTIONS: &[Key] = &[
    key("d", "256", "separation dimension (inputs have 4d coordinates)"),
    key("probes", "1000", "Gaussian probe points per builder"),
];

pub fn check_constructions(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let d: usize = cfg.get("d")?;
    let rows = verification_report(d, cfg.get("probes")?, run.seed)?;
    for r in &rows {
        run.check(format!("{} d={}", r.builder, r.d), r.passed, format!("gap {:e} tol {:e}", r.max_gap, r.tolerance));
    }
    run.csv_rows("constructions.csv", &rows)
}

pub const TRAIN: &[Key] = &[
    key("family", "cnn", "cnn | lcn | fcn"),
    key("target", "separation", "separation | truncated_separation | short | long"),
    key("d", "4", "separation: inputs have 4d coordinates; short/long: d inputs"),
    key("a0", "10", "clamp level of truncated_separation"),
    key("s", "2", "filter size and stride (cnn, lcn)"),
    key("channels", "4,4,4,4", "channels per layer (cnn, lcn) or hidden widths (fcn)"),
    key("act", "relu", "hidden activation: identity | relu | relu2"),
    key("top_act", "", "activation of the last layer; empty means act"),
    key("dist", "std_gaussian", "std_gaussian | uniform_cube"),
    key("n", "256", "training samples"),
    key("sigma", "0.1", "label noise standard deviation"),
    key("optimizer", "adam", "adam | sgd"),
    key("lr", "1e-3", "initial step size"),
    key("lr_decay", "0", "step size eta0 / (1 + t)^decay"),
    key("adam_alpha", "0.999", "second-moment decay"),
    key("adam_beta", "0.9", "first-moment decay"),
    key("adam_eps", "1e-8", "denominator offset"),
    key("batch", "0", "minibatch size, 0 for full batch"),
    key("steps", "1000", "optimizer steps"),
    key("lambda", "0", "regularization weight"),
    key("reg", "identity", "identity | square, applied to the path norm"),
    key("trunc_a", "inf", "model output clamp A"),
    key("loss_b", "inf", "loss cap B"),
    key("restarts", "1", "independent runs, best objective kept"),
    key("init", "uniform", "uniform | gaussian"),
    key("init_scale", "0.1", "standard deviation for gaussian init"),
    key("early_stop", "0", "stop when the training loss drops below this; 0 disables"),
    key("n_test", "10000", "fresh samples for the test error"),
];

fn target_spec(cfg: &Resolved) -> Result<TargetSpec, CliError> {
    let d: usize = cfg.get("d")?;
    let spec = match cfg.str("target") {
        "separation" => TargetSpec::new(TargetKind::Separation, 4 * d)?,
        "truncated_separation" => TargetSpec::truncated_separation(d, cfg.get("a0")?)?,
        "short" => TargetSpec::new(TargetKind::Product(1, 2), d)?,
        "long" => TargetSpec::new(TargetKind::Product(1, d), d)?,
        _ => return Err(cfg.bad("target", "expected separation, truncated_separation, short or long")),
    };
    Ok(spec)
}

fn arch(cfg: &Resolved, input_dim: usize) -> Result<ArchConfig, CliError> {
    let family: Family = cfg.get("family")?;
    let widths: Vec<usize> = cfg.list("channels")?;
    if widths.is_empty() {
        return Err(cfg.bad("channels", "need at least one layer"));
    }
    let act: Activation = cfg.get("act")?;
    let mut acts = vec![act; widths.len()];
    if !cfg.str("top_act").is_empty() {
        *acts.last_mut().expect("nonempty") = cfg.get("top_act")?;
    }
    let a = match family {
        Family::Fcn => ArchConfig::fcn(input_dim, &widths, acts)?,
        Family::Cnn | Family::Lcn => {
            let mut ch = vec![1];
            ch.extend(widths);
            ArchConfig::new(family, input_dim, cfg.get("s")?, ch, acts)?
        }
        Family::CnnNoStride => return Err(cfg.bad("family", "the no-stride mode is not trainable")),
    };
    Ok(a)
}

fn optimizer(cfg: &Resolved) -> Result<Optimizer, CliError> {
    let lr = LrSchedule { eta0: cfg.get("lr")?, decay: cfg.get("lr_decay")? };
    match cfg.str("optimizer") {
        "adam" => Ok(Optimizer::Adam { alpha: cfg.get("adam_alpha")?, beta: cfg.get("adam_beta")?, eps: cfg.get("adam_eps")?, lr }),
        "sgd" => Ok(Optimizer::Sgd { lr }),
        _ => Err(cfg.bad("optimizer", "expected adam or sgd")),
    }
}

pub fn train_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let spec = target_spec(cfg)?;
    let arch = arch(cfg, spec.input_dim)?;
    let dist: InputDist = cfg.get("dist")?;
    let data = make_dataset(&spec, dist, cfg.get("n")?, cfg.get("sigma")?, run.seed)?;
    let batch: usize = cfg.get("batch")?;
    let early: f64 = cfg.get("early_stop")?;
    let tc = TrainConfig {
        optimizer: optimizer(cfg)?,
        batch: (batch > 0).then_some(batch),
        steps: cfg.get("steps")?,
        lambda: cfg.get("lambda")?,
        reg: match cfg.str("reg") {
            "identity" => RegForm::Identity,
            "square" => RegForm::Square,
            _ => return Err(cfg.bad("reg", "expected identity or square")),
        },
        trunc_a: cfg.get("trunc_a")?,
        loss_b: cfg.get("loss_b")?,
        restarts: cfg.get("restarts")?,
        seed: run.seed,
        early_stop: (early > 0.0).then_some(early),
        snapshots: Vec::new(),
    };
    let init = match cfg.str("init") {
        "uniform" => Init::UniformFanIn,
        "gaussian" => Init::Gaussian(cfg.get("init_scale")?),
        _ => return Err(cfg.bad("init", "expected uniform or gaussian")),
    };
    let out = train(&arch, &init, &data, &tc)?;
    let rec = &out.record;
    let rows: Vec<Vec<String>> = rec
        .train_loss
        .iter()
        .zip(&rec.param_norm)
        .enumerate()
        .map(|(t, (l, p))| vec![t.to_string(), fmt(*l), fmt(*p)])
        .collect();
    run.csv_records("trajectory.csv", &["step", "train_loss", "param_norm"], &rows)?;
    run.text("params.json", &out.params.to_json(&arch))?;
    let test = test_error(&arch, &out.params, &spec, dist, cfg.get("n_test")?, run.seed.wrapping_add(1), tc.trunc_a)?;
    let summary = vec![
        vec!["restart".into(), out.restart.to_string()],
        vec!["steps_run".into(), (rec.train_loss.len().saturating_sub(1)).to_string()],
        vec!["final_train_loss".into(), fmt(*rec.train_loss.last().unwrap_or(&f64::NAN))],
        vec!["objective".into(), fmt(out.objective)],
        vec!["param_norm".into(), fmt(param_norm_p(&arch, &out.params))],
        vec!["test_mse".into(), fmt(test.value)],
        vec!["test_se".into(), fmt(test.se)],
        vec!["param_count".into(), arch.param_count().to_string()],
    ];
    run.csv_records("summary.csv", &["quantity", "value"], &summary)?;
    let detail = match rec.diverged_at {
        Some(t) => format!("non-finite loss at step {t}"),
        None => format!("final loss {:e}", rec.train_loss.last().unwrap_or(&f64::NAN)),
    };
    run.check("no divergence", rec.diverged_at.is_none(), detail);
    Ok(())
}

pub const FIGURE2: &[Key] = &[
    key("d", "1024", "input dimension, a power of s"),
    key("n", "400", "training samples"),
    key("s", "4", "filter size"),
    key("L", "", "CNN depth; must equal log_s d when given"),
    key("C", "4", "CNN channels"),
    key("sigma", "0", "label noise"),
    key("fcn_width", "10", "hidden width of the two-layer FCN"),
    key("dist", "std_gaussian", "std_gaussian | uniform_cube"),
    key("n_test", "4000", "test samples"),
    key("steps", "4000", "maximal Adam steps"),
    key("lr", "3e-3", "Adam step size"),
    key("restarts", "4", "independent runs per model, best training loss kept"),
    key("early_stop", "1e-5", "stop when the training loss drops below this"),
    key("curve_every", "100", "steps between learning-curve points"),
    key("hidden_act", "identity", "CNN activation below the top layer"),
    key("top_act", "relu2", "CNN activation of the top layer"),
    key("fcn_act", "relu", "FCN hidden activation"),
    key("ols_ridge", "1e-10", "ridge added to the least-squares normal equations"),
    key("check", "true", "assert CNN < 0.05 Var and FCN, OLS > 0.5 Var"),
];

pub fn figure2_config(cfg: &Resolved, seed: u64) -> Result<Figure2Config, CliError> {
    let fc = Figure2Config {
        d: cfg.get("d")?,
        n: cfg.get("n")?,
        s: cfg.get("s")?,
        channels: cfg.get("C")?,
        fcn_width: cfg.get("fcn_width")?,
        dist: cfg.get::<InputDist>("dist")?.name().into(),
        sigma: cfg.get("sigma")?,
        n_test: cfg.get("n_test")?,
        steps: cfg.get("steps")?,
        lr: cfg.get("lr")?,
        restarts: cfg.get("restarts")?,
        early_stop: cfg.get("early_stop")?,
        curve_every: cfg.get("curve_every")?,
        hidden_act: cfg.get("hidden_act")?,
        top_act: cfg.get("top_act")?,
        fcn_act: cfg.get("fcn_act")?,
        ols_ridge: cfg.get("ols_ridge")?,
        seed,
    };
    let depth = fc.depth()?;
    if !cfg.str("L").is_empty() && cfg.get::<usize>("L")? != depth {
        return Err(cfg.bad("L", format!("log_{} {} = {depth}", fc.s, fc.d)));
    }
    Ok(fc)
}

pub fn figure2_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let fc = figure2_config(cfg, run.seed)?;
    let res = figure2(&fc)?;
    run.csv_rows("figure2_curves.csv", &res.curves)?;
    run.csv_rows("figure2_summary.csv", &res.rows)?;
    if cfg.get::<bool>("check")? {
        for r in &res.rows {
            let (pass, want) = if r.model == "cnn" { (r.relative < 0.05, "< 0.05") } else { (r.relative > 0.5, "> 0.5") };
            run.check(format!("{} {}", r.model, r.target), pass, format!("test MSE / Var = {:.4} (want {want})", r.relative));
        }
    }
    Ok(())
}

pub const EQUIVARIANCE: &[Key] = &[
    key("d", "4", "separation dimension (inputs have 4d coordinates)"),
    key("n", "64", "training samples"),
    key("sigma", "0.1", "label noise"),
    key("trials", "20", "random group elements per case"),
    key("steps", "200", "optimizer steps"),
    key("batch", "16", "minibatch size"),
    key("adam_lr", "1e-2", "Adam step size"),
    key("sgd_lr", "1e-3", "SGD step size"),
    key("tol", "1e-6", "maximal scaled deviation for equivariant pairs"),
    key("control_min", "1e-2", "minimal deviation of the FCN + Adam control"),
];

pub fn equivariance_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let d: usize = cfg.get("d")?;
    let spec = TargetSpec::separation(d);
    let data = make_dataset(&spec, InputDist::StdGaussian, cfg.get("n")?, cfg.get("sigma")?, run.seed)?;
    let lcn = ArchConfig::lcn(4 * d, 2, vec![1, 4, 4, 4, 4], vec![Activation::Relu; 4]);
    let lcn = lcn.map_err(|_| cfg.bad("d", "LCN needs 4d = 2^k with k >= 4"))?;
    let fcn = ArchConfig::fcn(4 * d, &[8, 8], vec![Activation::Relu; 2])?;
    let adam = TrainConfig {
        optimizer: Optimizer::adam(cfg.get("adam_lr")?),
        steps: cfg.get("steps")?,
        batch: Some(cfg.get("batch")?),
        seed: run.seed,
        ..Default::default()
    };
    let sgd = TrainConfig { optimizer: Optimizer::sgd(cfg.get("sgd_lr")?), ..adam.clone() };
    let (tol, control): (f64, f64) = (cfg.get("tol")?, cfg.get("control_min")?);
    let mut rows = Vec::new();
    let (mut lw, mut fw, mut cm) = (0.0f64, 0.0f64, f64::INFINITY);
    for t in 0..cfg.get::<u64>("trials")? {
        let perm = random_local_perm(2 * d, run.seed.wrapping_add(1000 + t));
        let p0 = Params::gaussian(&lcn, 0.5, &mut stream(run.seed, "equivariance-lcn", t));
        let a = coupled_equivariance_test(&lcn, &perm, &data, &adam, &p0)?;
        let q = sample_haar_orthogonal(4 * d, run.seed.wrapping_add(2000 + t))?;
        let p0 = Params::gaussian(&fcn, 0.3, &mut stream(run.seed, "equivariance-fcn", t));
        let b = coupled_equivariance_test(&fcn, &q, &data, &sgd, &p0)?;
        let c = coupled_equivariance_test(&fcn, &q, &data, &adam, &p0)?;
        (lw, fw, cm) = (lw.max(a), fw.max(b), cm.min(c));
        for (case, v) in [("lcn_adam_local", a), ("fcn_sgd_orthogonal", b), ("fcn_adam_orthogonal", c)] {
            rows.push(vec![t.to_string(), case.into(), fmt(v)]);
        }
    }
    run.csv_records("equivariance.csv", &["trial", "case", "deviation"], &rows)?;
    run.check("lcn adam local permutations", lw <= tol, format!("max deviation {lw:e}"));
    run.check("fcn sgd orthogonal maps", fw <= tol, format!("max deviation {fw:e}"));
    run.check("fcn adam control", cm >= control, format!("min deviation {cm:e}"));
    Ok(())
}

pub const DISTANCES: &[Key] = &[
    key("d", "64", "separation dimension"),
    key("n", "100000", "Monte Carlo samples per estimate"),
    key("s_list", "1,8,32", "numbers of flipped pairs"),
    key("a0", "10", "truncation level of the target"),
    key("fcn_d", "16", "dimension of the orthogonal-map law"),
    key("assert_truncated", "false", "also assert the truncated sandwich"),
];

pub fn distances_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let d: usize = cfg.get("d")?;
    let n: usize = cfg.get("n")?;
    let a0: f64 = cfg.get("a0")?;
    let strict: bool = cfg.get("assert_truncated")?;
    let id = GroupElement::identity_local(2 * d);
    let header = ["law", "s", "estimate", "se", "lower", "upper", "within"];
    let mut rows = Vec::new();
    let seed = run.seed;
    for (k, s) in cfg.list::<usize>("s_list")?.into_iter().enumerate() {
        let k = k as u64;
        let tau = semi_local_with_flips(d, s, seed.wrapping_add(10 + k))?;
        let want = 64.0 * s as f64 / d as f64;
        let raw = separation_distance(&tau, &id, None, n, seed.wrapping_add(100 + k))?;
        let ok = (raw.value - want).abs() <= 3.0 * raw.se;
        rows.push(vec!["untruncated".into(), s.to_string(), fmt(raw.value), fmt(raw.se), fmt(want), fmt(want), ok.to_string()]);
        run.check(format!("untruncated s={s}"), ok, format!("{:.4} ± {:.4} vs {want:.4}", raw.value, raw.se));
        let tr = separation_distance(&tau, &id, Some(a0), n, seed.wrapping_add(200 + k))?;
        let lo = 63.0 * s as f64 / d as f64;
        let ok = tr.value >= lo - 3.0 * tr.se && tr.value <= want + 3.0 * tr.se;
        rows.push(vec!["truncated".into(), s.to_string(), fmt(tr.value), fmt(tr.se), fmt(lo), fmt(want), ok.to_string()]);
        if strict {
            run.check(format!("truncated s={s}"), ok, format!("{:.4} ± {:.4} vs [{lo:.4}, {want:.4}]", tr.value, tr.se));
        }
    }
    let fd: usize = cfg.get("fcn_d")?;
    let u = sample_haar_orthogonal(fd, seed.wrapping_add(300))?.matrix();
    let v = sample_haar_orthogonal(fd, seed.wrapping_add(301))?.matrix();
    let want = 4.0 * (&u - &v).norm_squared() / fd as f64;
    let est = mc_l2_distance(|x| f_u(&u, x), |x| f_u(&v, x), InputDist::StdGaussian, 4 * fd, n, seed.wrapping_add(302))?;
    let ok = (est.value - want).abs() <= 3.0 * est.se;
    rows.push(vec!["orthogonal".into(), String::new(), fmt(est.value), fmt(est.se), fmt(want), fmt(want), ok.to_string()]);
    run.check("orthogonal law", ok, format!("{:.4} ± {:.4} vs {want:.4}", est.value, est.se));
    let rate = truncation_rate(d, a0, n, seed.wrapping_add(400))?;
    rows.push(vec!["truncation_rate".into(), String::new(), fmt(rate.value), fmt(rate.se), String::new(), String::new(), String::new()]);
    run.csv_records("distances.csv", &header, &rows)
}

pub const BOUNDS: &[Key] = &[
    key("binom_n", "30", "n of the binomial tail sum"),
    key("binom_m", "7", "m of the binomial tail sum"),
    key("d", "16", "separation dimension of the CNN used for the covering bounds"),
    key("sample", "200", "inputs used for the empirical scale M_n"),
    key("t", "1", "covering radius"),
    key("n", "1000", "sample size in the excess-risk bound"),
    key("sigma", "1", "noise level"),
    key("a0", "10", "truncation level A"),
    key("delta", "0.1", "confidence level"),
];

pub fn bounds_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let mut rep = BoundReport::default();
    let (bn, bm): (u64, u64) = (cfg.get("binom_n")?, cfg.get("binom_m")?);
    let bs = binom_sum_bound(bn, bm)?;
    let (exact, bound) = (ln_big(&bs.exact), bs.bound.ln());
    rep.push("ln_binom_sum", exact, "ln sum_{k<=m} C(n,k)")?;
    rep.push("ln_binom_sum_bound", bound, "m ln(en/m)")?;
    run.check("binomial tail bound", bs.holds(), format!("{exact:.4} <= {bound:.4}"));
    rep.push("ln_hamming_packing", hamming_packing_ln(bn, bm as f64)?, "Gilbert-Varshamov packing of {0,1}^n at distance m")?;
    rep.push("semiloc_base", semiloc_base(), "2 / (5e)^(1/4)")?;

    let d: usize = cfg.get("d")?;
    let (arch, theta) = build_separation_cnn(d)?;
    let xs = cnnlab::tasks::sample_inputs(InputDist::StdGaussian, arch.input_dim, cfg.get("sample")?, run.seed)?;
    let j = param_norm_p(&arch, &theta);
    rep.push("norm_p", j, "||theta*||_P of the separation CNN")?;
    rep.push("m_hat", m_hat(&arch, &xs, j)?, "sqrt(mean Qbar(x)^2 (||x|| + 1)^2)")?;
    rep.push("ln_covering", covering_bound_ln(&arch, j, cfg.get("t")?, &xs)?, "N ln(3 M_n J (1+J)^L / t)")?;

    let n: f64 = cfg.get("n")?;
    let (sigma, a): (f64, f64) = (cfg.get("sigma")?, cfg.get("a0")?);
    let gamma = |jj: f64| m_hat(&arch, &xs, jj).unwrap_or(f64::NAN) * jj * (1.0 + jj).powi(arch.depth() as i32);
    let inputs = ExcessRiskInputs {
        eps_star: 0.0,
        m_star: j,
        a,
        b: 2.0 * a + sigma * n.ln().sqrt(),
        lambda: 1.0 / n.sqrt(),
        delta: cfg.get("delta")?,
        n,
        p_h: arch.param_count() as f64,
        gamma: &gamma,
        alpha_h: 1.0,
        sigma,
    };
    let (total, terms) = excess_risk_bound(&inputs)?;
    for (name, v) in ["excess_truncation", "excess_regularization", "excess_capacity", "excess_confidence"].iter().zip(terms) {
        rep.push(*name, v, "excess-risk term with B = 2A + sigma sqrt(ln n), lambda = 1/sqrt(n)")?;
    }
    rep.push("excess_total", total, "sum of the four terms")?;
    run.text("bounds.csv", &rep.to_csv())
}

pub const LOWERBOUND_SWEEP: &[Key] = &[
    key("ds", "16,32,64,128,256,512", "dimensions of the sweep"),
    key("sigma", "30", "noise level"),
    key("eps0", "0.25", "target accuracy as a fraction of the packing separation"),
    key("a0", "10", "truncation level used in calibration"),
    key("lcn_ref", "64", "reference dimension of the LCN calibration"),
    key("fcn_ref", "16", "reference dimension of the FCN calibration"),
    key("n_cal", "100000", "Monte Carlo samples per calibration estimate"),
    key("lcn_slope", "0.8,1.2", "accepted range of the LCN log-log slope"),
    key("fcn_slope", "1.8,2.2", "accepted range of the FCN log-log slope"),
];

pub fn lowerbound_sweep_cmd(cfg: &Resolved, run: &mut Run) -> Result<(), CliError> {
    let ds: Vec<usize> = cfg.list("ds")?;
    let (sigma, eps0, a0): (f64, f64, f64) = (cfg.get("sigma")?, cfg.get("eps0")?, cfg.get("a0")?);
    let n_cal: usize = cfg.get("n_cal")?;
    let lcal = calibrate_lcn(cfg.get("lcn_ref")?, a0, n_cal, run.seed.wrapping_add(1))?;
    let fcal = calibrate_fcn(cfg.get("fcn_ref")?, a0, n_cal, run.seed.wrapping_add(2))?;
    let mut rows = Vec::new();
    let mut cal_rows = Vec::new();
    for (family, cal, key) in [(SweepFamily::Lcn, lcal, "lcn_slope"), (SweepFamily::Fcn, fcal, "fcn_slope")] {
        let name = if family == SweepFamily::Lcn { "lcn" } else { "fcn" };
        cal_rows.push(vec![name.to_string(), fmt(cal.c_lo), fmt(cal.c_hi)]);
        let res = lower_bound_sweep(family, &ds, sigma, eps0, cal)?;
        for p in &res.points {
            rows.push(vec![
                name.to_string(),
                p.d.to_string(),
                fmt(p.log_m),
                fmt(p.a),
                fmt(p.mean_dist),
                p.n_star.to_string(),
                fmt(p.n_star_real),
            ]);
        }
        let range: Vec<f64> = cfg.list(key)?;
        if range.len() != 2 {
            return Err(cfg.bad(key, "expected lo,hi"));
        }
        run.check(
            format!("{name} slope"),
            (range[0]..=range[1]).contains(&res.slope),
            format!("slope {:.3} (want [{}, {}])", res.slope, range[0], range[1]),
        );
    }
    run.csv_records("sweep.csv", &["family", "d", "log_m", "a", "mean_dist", "n_star", "n_star_real"], &rows)?;
    run.csv_records("calibration.csv", &["family", "c_lo", "c_hi"], &cal_rows)
}
