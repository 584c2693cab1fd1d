//! The sparse-interaction experiment: a deep CNN, a width-10 two-layer FCN and
//! ordinary least squares fitted to a short-range and a long-range product
//! target from a few hundred noiseless samples.

use crate::error::{invalid, Result};
use crate::nets::{forward_batch, ArchConfig};
use crate::tasks::{make_dataset, sample_inputs, InputDist, TargetKind, TargetSpec};
use crate::tensor::Activation;
use crate::training::{mean_se, ols_predict, ols_ridge, train, Init, Optimizer, TrainConfig};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure2Config {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub channels: usize,
    pub fcn_width: usize,
    pub dist: String,
    pub sigma: f64,
    pub n_test: usize,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub early_stop: f64,
    /// Steps between points of the recorded test curve.
    pub curve_every: usize,
    pub hidden_act: Activation,
    pub top_act: Activation,
    pub fcn_act: Activation,
    pub ols_ridge: f64,
    pub seed: u64,
}

impl Default for Figure2Config {
    fn default() -> Self {
        Self {
            d: 1024,
            n: 400,
            s: 4,
            channels: 4,
            fcn_width: 10,
            dist: "std_gaussian".into(),
            sigma: 0.0,
            n_test: 4000,
            steps: 4000,
            lr: 3e-3,
            restarts: 4,
            early_stop: 1e-5,
            curve_every: 100,
            hidden_act: Activation::Identity,
            top_act: Activation::Relu2,
            fcn_act: Activation::Relu,
            ols_ridge: 1e-10,
            seed: 0,
        }
    }
}

impl Figure2Config {
    /// Depth `log_s d`; `d` must be an exact power of `s`.
    pub fn depth(&self) -> Result<usize> {
        if self.s < 2 {
            return invalid("filter size must be at least 2");
        }
        let (mut m, mut l) = (self.d, 0);
        while m > 1 && m % self.s == 0 {
            m /= self.s;
            l += 1;
        }
        if m != 1 || l == 0 {
            return invalid(format!("d = {} is not a power of s = {}", self.d, self.s));
        }
        Ok(l)
    }

    pub fn cnn(&self) -> Result<ArchConfig> {
        let l = self.depth()?;
        let mut ch = vec![1];
        ch.extend(std::iter::repeat_n(self.channels, l));
        let mut acts = vec![self.hidden_act; l - 1];
        acts.push(self.top_act);
        ArchConfig::cnn(self.d, self.s, ch, acts)
    }

    pub fn fcn(&self) -> Result<ArchConfig> {
        ArchConfig::fcn(self.d, &[self.fcn_width], vec![self.fcn_act])
    }

    /// `x_1 x_2` and `x_1 x_d`.
    pub fn targets(&self) -> Result<[(&'static str, TargetSpec); 2]> {
        Ok([
            ("short", TargetSpec::new(TargetKind::Product(1, 2), self.d)?),
            ("long", TargetSpec::new(TargetKind::Product(1, self.d), self.d)?),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub target: String,
    pub model: String,
    pub step: usize,
    pub train_loss: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure2Row {
    pub target: String,
    pub model: String,
    pub train_loss: f64,
    pub test_mse: f64,
    pub test_se: f64,
    pub var_y: f64,
    /// `test_mse / var_y`.
    pub relative: f64,
    pub steps: usize,
    pub reached_stop: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Figure2Result {
    pub rows: Vec<Figure2Row>,
    pub curves: Vec<CurvePoint>,
}

impl Figure2Result {
    pub fn get(&self, target: &str, model: &str) -> Option<&Figure2Row> {
        self.rows.iter().find(|r| r.target == target && r.model == model)
    }
}

fn sq_errors(pred: &[f64], y: &[f64]) -> Vec<f64> {
    pred.iter().zip(y).map(|(a, b)| (a - b).powi(2)).collect()
}

pub fn figure2(fc: &Figure2Config) -> Result<Figure2Result> {
    let dist: InputDist = fc.dist.parse()?;
    let cnn = fc.cnn()?;
    let fcn = fc.fcn()?;
    let test_x = sample_inputs(dist, fc.d, fc.n_test, fc.seed.wrapping_add(1))?;
    let mut out = Figure2Result::default();
    for (ti, (tname, spec)) in fc.targets()?.into_iter().enumerate() {
        let data = make_dataset(&spec, dist, fc.n, fc.sigma, fc.seed.wrapping_add(100 + ti as u64))?;
        let test_y = spec.eval_batch(&test_x)?;
        let var_y = mean_se(&sq_errors(&test_y, &vec![mean_se(&test_y).value; test_y.len()])).value;

        for (mname, arch) in [("cnn", &cnn), ("fcn", &fcn)] {
            let tc = TrainConfig {
                optimizer: Optimizer::adam(fc.lr),
                steps: fc.steps,
                restarts: fc.restarts,
                seed: fc.seed,
                early_stop: Some(fc.early_stop),
                snapshots: (0..=fc.steps).step_by(fc.curve_every.max(1)).collect(),
                ..TrainConfig::default()
            };
            let res = train(arch, &Init::UniformFanIn, &data, &tc)?;
            for (step, p) in &res.record.snapshots {
                let Some(&train_loss) = res.record.train_loss.get(*step) else { continue };
                let mse = mean_se(&sq_errors(&forward_batch(arch, p, &test_x)?, &test_y)).value;
                out.curves.push(CurvePoint {
                    target: tname.into(),
                    model: mname.into(),
                    step: *step,
                    train_loss,
                    test_mse: mse,
                });
            }
            let err = mean_se(&sq_errors(&forward_batch(arch, &res.params, &test_x)?, &test_y));
            let last = res.record.train_loss.len() - 1;
            out.curves.push(CurvePoint {
                target: tname.into(),
                model: mname.into(),
                step: last,
                train_loss: res.record.train_loss[last],
                test_mse: err.value,
            });
            out.rows.push(Figure2Row {
                target: tname.into(),
                model: mname.into(),
                train_loss: res.record.train_loss[last],
                test_mse: err.value,
                test_se: err.se,
                var_y,
                relative: err.value / var_y,
                steps: last,
                reached_stop: res.record.train_loss[last] < fc.early_stop,
            });
        }

        let (w, c) = ols_ridge(&data.x, &data.y, fc.d, fc.ols_ridge)?;
        let fit = ols_predict(&w, c, &data.x);
        let train_loss = 0.5 * mean_se(&sq_errors(&fit, &data.y)).value;
        let err = mean_se(&sq_errors(&ols_predict(&w, c, &test_x), &test_y));
        out.rows.push(Figure2Row {
            target: tname.into(),
            model: "ols".into(),
            train_loss,
            test_mse: err.value,
            test_se: err.se,
            var_y,
            relative: err.value / var_y,
            steps: 0,
            reached_stop: train_loss < fc.early_stop,
        });
    }
    Ok(out)
}
