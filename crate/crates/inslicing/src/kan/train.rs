//! Gradient-descent fitting of a model to a sample set.
//!
//! Full-batch MSE on standardized targets, minimized with adaptive moment
//! estimates. The trace records train/test RMSE (in performance units) per
//! logging interval; the parameters with the best train loss seen are the
//! ones left in the model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::{InputNormalization, KanModel, OutputScale, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub steps: usize,
    pub learning_rate: f64,
    /// Held-out fraction for the test RMSE.
    pub test_fraction: f64,
    /// Seed of the train/test shuffle; fixed per dataset for reproducibility.
    pub shuffle_seed: u64,
    /// RMSE is recorded every this many steps (and at the final step).
    pub log_interval: usize,
    /// Input box mapped onto the grid range; data min/max when absent.
    pub input_bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-2,
            test_fraction: 0.2,
            shuffle_seed: 0,
            log_interval: 10,
            input_bounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub steps: Vec<TraceStep>,
}

impl TrainingTrace {
    pub fn final_train_rmse(&self) -> f64 {
        self.steps.last().map(|s| s.train_rmse).unwrap_or(f64::NAN)
    }

    pub fn final_test_rmse(&self) -> f64 {
        self.steps.last().map(|s| s.test_rmse).unwrap_or(f64::NAN)
    }

    /// RMSE at the first recorded step at or after `step`.
    pub fn rmse_at(&self, step: usize) -> Option<f64> {
        self.steps.iter().find(|s| s.step >= step).map(|s| s.train_rmse)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_rmse,test_rmse\n");
        for s in &self.steps {
            out.push_str(&format!("{},{:.6},{:.6}\n", s.step, s.train_rmse, s.test_rmse));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
}

impl Adam {
    fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * grad[k];
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            params[k] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Fits `model` to `data`. Returns the RMSE trace; on divergence the model
/// is left at the last finite-loss parameters and an error is returned.
pub fn train(model: &mut KanModel, data: &TrainingSet, opts: &TrainOptions) -> Result<TrainingTrace> {
    if data.is_empty() {
        return Err(Error::InvalidSpec("training set is empty".into()));
    }
    if data.input_dim() != model.input_dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", model.input_dim),
            got: format!("{}", data.input_dim()),
        });
    }
    if opts.steps == 0 {
        return Err(Error::InvalidSpec("steps must be >= 1".into()));
    }

    // Train/test split with a fixed shuffle.
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    order.shuffle(&mut rng);
    let n_test = ((data.len() as f64) * opts.test_fraction).floor() as usize;
    let n_test = n_test.min(data.len().saturating_sub(1));
    let (test_idx, train_idx) = order.split_at(n_test);

    // Input normalization into the grid range.
    let (lo, hi) = match &opts.input_bounds {
        Some((lo, hi)) => (lo.clone(), hi.clone()),
        None => data.input_bounds(),
    };
    model.normalization = InputNormalization::from_bounds(&lo, &hi);

    // Target standardization from the training split.
    let train_targets: Vec<f64> = train_idx.iter().map(|&i| data.targets[i]).collect();
    let mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    let var = train_targets
        .iter()
        .map(|t| (t - mean) * (t - mean))
        .sum::<f64>()
        / train_targets.len() as f64;
    let std = var.sqrt();
    let std = if std > 1e-12 { std } else { 1.0 };
    model.output_scale = OutputScale { mean, std };

    // Cache normalized inputs and standardized targets.
    let norm = model.normalization.clone();
    let z_of = |i: usize| -> Vec<f64> {
        data.inputs[i]
            .iter()
            .enumerate()
            .map(|(d, v)| (v - norm.offsets[d]) * norm.scales[d])
            .collect()
    };
    let train_z: Vec<Vec<f64>> = train_idx.iter().map(|&i| z_of(i)).collect();
    let train_t: Vec<f64> = train_idx.iter().map(|&i| (data.targets[i] - mean) / std).collect();
    let test_z: Vec<Vec<f64>> = test_idx.iter().map(|&i| z_of(i)).collect();
    let test_t: Vec<f64> = test_idx.iter().map(|&i| (data.targets[i] - mean) / std).collect();

    let rmse_std = |model: &KanModel, zs: &[Vec<f64>], ts: &[f64]| -> f64 {
        if zs.is_empty() {
            return f64::NAN;
        }
        let sse: f64 = zs
            .iter()
            .zip(ts)
            .map(|(z, t)| {
                let e = model.forward_normalized(z) - t;
                e * e
            })
            .sum();
        (sse / zs.len() as f64).sqrt()
    };

    let n_params = model.param_count();
    let mut params = model.params_flat();
    let mut adam = Adam::new(n_params, opts.learning_rate);
    let mut grad = vec![0.0; n_params];
    let mut trace = TrainingTrace::default();

    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut last_stable_loss = f64::INFINITY;

    let record = |model: &KanModel, step: usize, trace: &mut TrainingTrace| {
        let train = rmse_std(model, &train_z, &train_t) * std;
        let test = if test_z.is_empty() {
            train
        } else {
            rmse_std(model, &test_z, &test_t) * std
        };
        trace.steps.push(TraceStep {
            step,
            train_rmse: train,
            test_rmse: test,
        });
    };

    record(model, 0, &mut trace);

    let n_train = train_z.len() as f64;
    for step in 1..=opts.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sse = 0.0;
        for (z, t) in train_z.iter().zip(&train_t) {
            // One forward to get the residual, one backward scaled by it.
            let pred = model.forward_normalized(z);
            let err = pred - t;
            sse += err * err;
            model.backward_params(z, 2.0 * err / n_train, &mut grad);
        }
        let loss = sse / n_train;

        if !loss.is_finite() {
            model.set_params_flat(&best_params);
            return Err(Error::TrainingDiverged {
                step,
                last_loss: last_stable_loss,
            });
        }
        last_stable_loss = loss;
        if loss < best_loss {
            best_loss = loss;
            best_params.copy_from_slice(&params);
        }

        adam.update(&mut params, &grad);
        model.set_params_flat(&params);

        if step % opts.log_interval == 0 || step == opts.steps {
            record(model, step, &mut trace);
        }
    }

    // Leave the model at the best parameters seen.
    let final_loss = {
        let r = rmse_std(model, &train_z, &train_t);
        r * r
    };
    if final_loss > best_loss {
        model.set_params_flat(&best_params);
        record(model, opts.steps, &mut trace);
    }

    Ok(trace)
}
