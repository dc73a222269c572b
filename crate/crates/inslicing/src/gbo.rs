//! Bayesian-optimization baseline over the penalized objective.
//!
//! A Gaussian process with a squared-exponential kernel surrogates the
//! blackbox objective; expected improvement picks each next configuration
//! from a random candidate set plus a local polish around the winner. The
//! baseline queries the environment directly (no slice surrogates), so each
//! evaluation is a ground-truth probe.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ConfigMatrix, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    /// Length-scale in normalized (unit-box) coordinates.
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyperParams {
    fn default() -> Self {
        Self {
            lengthscale: 0.2,
            signal_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

/// A fitted GP posterior with cached Cholesky factorization.
pub struct GpModel {
    x_train: Vec<Vec<f64>>,
    cholesky: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyperParams,
}

/// Squared-exponential kernel over the per-dimension RMS distance
/// `r² = (1/d)·Σ (a_i - b_i)²`, so one length-scale stays meaningful from
/// the 1-D tests up to the 54-dimensional slice problems.
fn sq_exp_kernel(a: &[f64], b: &[f64], hyper: &GpHyperParams) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    d2 /= a.len().max(1) as f64;
    hyper.signal_variance * (-0.5 * d2 / (hyper.lengthscale * hyper.lengthscale)).exp()
}

/// Fits the GP to `(inputs, values)`. On a failed factorization the jitter
/// escalates an order of magnitude at a time before giving up.
pub fn gp_fit(inputs: &[Vec<f64>], values: &[f64], hyper: &GpHyperParams) -> Result<GpModel> {
    if inputs.is_empty() || inputs.len() != values.len() {
        return Err(Error::InvalidSpec("GP needs at least one observation".into()));
    }
    let n = inputs.len();

    let y_mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let y_standardized = DVector::from_iterator(n, values.iter().map(|y| (y - y_mean) / y_std));

    let base = DMatrix::from_fn(n, n, |i, j| {
        let k = sq_exp_kernel(&inputs[i], &inputs[j], hyper);
        if i == j {
            k + hyper.noise_variance
        } else {
            k
        }
    });

    let mut jitter = 0.0;
    loop {
        let k = if jitter > 0.0 {
            &base + DMatrix::identity(n, n) * jitter
        } else {
            base.clone()
        };
        if let Some(cholesky) = Cholesky::new(k) {
            let alpha = cholesky.solve(&y_standardized);
            return Ok(GpModel {
                x_train: inputs.to_vec(),
                cholesky,
                alpha,
                y_mean,
                y_std,
                hyper: *hyper,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-2 * hyper.signal_variance.max(1.0) {
            return Err(Error::IllConditioned { jitter });
        }
    }
}

impl GpModel {
    /// Posterior mean and standard deviation at `x`, in the original units
    /// of the fitted values.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k_star = DVector::from_iterator(
            self.x_train.len(),
            self.x_train.iter().map(|xi| sq_exp_kernel(x, xi, &self.hyper)),
        );
        let mean_std = k_star.dot(&self.alpha);
        let v = self.cholesky.solve(&k_star);
        let var_std = (self.hyper.signal_variance - k_star.dot(&v)).max(0.0);
        (
            self.y_mean + self.y_std * mean_std,
            self.y_std * var_std.sqrt(),
        )
    }

    /// Posterior variance in standardized (internal) units.
    pub fn latent_variance(&self, x: &[f64]) -> f64 {
        let k_star = DVector::from_iterator(
            self.x_train.len(),
            self.x_train.iter().map(|xi| sq_exp_kernel(x, xi, &self.hyper)),
        );
        let v = self.cholesky.solve(&k_star);
        (self.hyper.signal_variance - k_star.dot(&v)).max(0.0)
    }

    /// Posterior mean/std for a whole candidate batch via one triangular
    /// solve instead of a per-candidate system.
    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let n = self.x_train.len();
        let m = xs.len();
        let k_star = DMatrix::from_fn(n, m, |i, j| sq_exp_kernel(&xs[j], &self.x_train[i], &self.hyper));
        let v = self
            .cholesky
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor is non-singular");
        let means = k_star.transpose() * &self.alpha;
        (0..m)
            .map(|j| {
                let var_std = (self.hyper.signal_variance - v.column(j).norm_squared()).max(0.0);
                (
                    self.y_mean + self.y_std * means[j],
                    self.y_std * var_std.sqrt(),
                )
            })
            .collect()
    }
}

/// Standard normal PDF.
fn norm_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.3989422804014327;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (absolute error below 1.5e-7).
fn norm_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let erf = if x >= 0.0 { erf } else { -erf };
    0.5 * (1.0 + erf)
}

/// Expected improvement for minimization:
/// `EI = (best - μ)·Φ(z) + σ·φ(z)` with `z = (best - μ)/σ`.
pub fn expected_improvement(mean: f64, std: f64, best_so_far: f64) -> f64 {
    if std <= 0.0 {
        return (best_so_far - mean).max(0.0);
    }
    let z = (best_so_far - mean) / std;
    ((best_so_far - mean) * norm_cdf(z) + std * norm_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GboParams {
    pub initial_samples: usize,
    /// Total evaluation budget, the initial design included.
    pub budget: usize,
    /// Random candidates scored per acquisition round.
    pub candidates: usize,
    /// Gaussian perturbations polished around the best candidate.
    pub polish_samples: usize,
    /// Perturbations proposed around the best observation so far, so the
    /// acquisition can work outward from the incumbent like a restarted
    /// local EI maximizer.
    pub incumbent_samples: usize,
    /// GP training window: most recent observations kept, plus the incumbent.
    pub max_train_points: usize,
    pub kernel: GpHyperParams,
    pub rng_seed: u64,
}

impl Default for GboParams {
    fn default() -> Self {
        Self {
            initial_samples: 30,
            budget: 300,
            candidates: 2048,
            polish_samples: 16,
            incumbent_samples: 16,
            max_train_points: 128,
            kernel: GpHyperParams::default(),
            rng_seed: 0,
        }
    }
}

impl GboParams {
    pub fn validate(&self) -> Result<()> {
        if self.initial_samples == 0 || self.budget < self.initial_samples {
            return Err(Error::InvalidSpec("budget must cover the initial design".into()));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidSpec("need at least one candidate".into()));
        }
        Ok(())
    }
}

/// What one blackbox evaluation reports back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub penalized: f64,
    pub cost: f64,
    pub feasible: bool,
}

/// One row of the per-evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GboEval {
    pub index: usize,
    pub penalized: f64,
    pub cost: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct GboRun {
    pub best_config: ConfigMatrix,
    pub best_cost: f64,
    /// False when the budget ran out without a feasible point; the returned
    /// configuration is then the best penalized one.
    pub best_feasible: bool,
    pub evals: Vec<GboEval>,
    pub evaluations: u64,
}

fn normalize(flat: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    flat.iter()
        .enumerate()
        .map(|(k, v)| {
            let span = hi[k] - lo[k];
            if span > 1e-15 {
                (v - lo[k]) / span
            } else {
                0.5
            }
        })
        .collect()
}

/// Runs the full loop: random design, then fit-acquire-evaluate until the
/// budget is spent.
pub fn gbo_optimize<F>(spec: &ProblemSpec, objective: F, params: &GboParams) -> Result<GboRun>
where
    F: Fn(&ConfigMatrix) -> Result<EvalOutcome>,
{
    params.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (lo, hi) = spec.flat_bounds();
    let dim = spec.dim();

    let draw_uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|k| {
                if hi[k] > lo[k] {
                    rng.gen_range(lo[k]..=hi[k])
                } else {
                    lo[k]
                }
            })
            .collect()
    };

    let mut observed_x: Vec<Vec<f64>> = Vec::new(); // normalized
    let mut observed_flat: Vec<Vec<f64>> = Vec::new();
    let mut observed_y: Vec<f64> = Vec::new(); // penalized
    let mut evals: Vec<GboEval> = Vec::new();

    let eval_point = |flat: Vec<f64>,
                          observed_x: &mut Vec<Vec<f64>>,
                          observed_flat: &mut Vec<Vec<f64>>,
                          observed_y: &mut Vec<f64>,
                          evals: &mut Vec<GboEval>|
     -> Result<()> {
        let x = ConfigMatrix::from_flat(spec, &flat)?;
        let outcome = objective(&x)?;
        observed_x.push(normalize(&flat, &lo, &hi));
        observed_flat.push(flat);
        observed_y.push(outcome.penalized);
        evals.push(GboEval {
            index: evals.len(),
            penalized: outcome.penalized,
            cost: outcome.cost,
            feasible: outcome.feasible,
        });
        Ok(())
    };

    for _ in 0..params.initial_samples.min(params.budget) {
        let flat = draw_uniform(&mut rng);
        eval_point(flat, &mut observed_x, &mut observed_flat, &mut observed_y, &mut evals)?;
    }

    while evals.len() < params.budget {
        // Training window: the most recent observations plus the incumbent.
        let best_idx = observed_y
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let start = observed_y.len().saturating_sub(params.max_train_points);
        let mut window: Vec<usize> = (start..observed_y.len()).collect();
        if best_idx < start {
            window[0] = best_idx;
        }
        let xs: Vec<Vec<f64>> = window.iter().map(|&i| observed_x[i].clone()).collect();
        let ys: Vec<f64> = window.iter().map(|&i| observed_y[i]).collect();
        let best_y = observed_y[best_idx];
        let incumbent_flat = observed_flat[best_idx].clone();

        let next_flat = match gp_fit(&xs, &ys, &params.kernel) {
            Ok(model) => {
                let candidates: Vec<Vec<f64>> =
                    (0..params.candidates).map(|_| draw_uniform(&mut rng)).collect();
                let zs: Vec<Vec<f64>> =
                    candidates.iter().map(|f| normalize(f, &lo, &hi)).collect();
                let scored = model.predict_batch(&zs);
                let (mut best_idx, mut best_ei) = (0usize, f64::NEG_INFINITY);
                for (j, (mu, sigma)) in scored.iter().enumerate() {
                    let ei = expected_improvement(*mu, *sigma, best_y);
                    if ei > best_ei {
                        best_ei = ei;
                        best_idx = j;
                    }
                }
                let mut best_candidate = candidates[best_idx].clone();

                // Local polish: perturbation rings around the EI winner and
                // around the incumbent best observation.
                let mut ring: Vec<Vec<f64>> = Vec::new();
                let noise = Normal::new(0.0, 0.05).unwrap();
                let perturb = |center: &[f64], count: usize, rng: &mut ChaCha8Rng| {
                    (0..count)
                        .map(|_| {
                            center
                                .iter()
                                .enumerate()
                                .map(|(k, v)| {
                                    (v + noise.sample(rng) * (hi[k] - lo[k]))
                                        .clamp(lo[k], hi[k])
                                })
                                .collect::<Vec<f64>>()
                        })
                        .collect::<Vec<_>>()
                };
                ring.extend(perturb(&best_candidate, params.polish_samples, &mut rng));
                ring.extend(perturb(&incumbent_flat, params.incumbent_samples, &mut rng));
                if !ring.is_empty() {
                    let zs: Vec<Vec<f64>> = ring.iter().map(|f| normalize(f, &lo, &hi)).collect();
                    for (flat, (mu, sigma)) in ring.iter().zip(model.predict_batch(&zs)) {
                        let ei = expected_improvement(mu, sigma, best_y);
                        if ei > best_ei {
                            best_ei = ei;
                            best_candidate = flat.clone();
                        }
                    }
                }
                best_candidate
            }
            Err(Error::IllConditioned { .. }) => draw_uniform(&mut rng),
            Err(e) => return Err(e),
        };

        eval_point(next_flat, &mut observed_x, &mut observed_flat, &mut observed_y, &mut evals)?;
    }

    // Best feasible by cost; otherwise best penalized, flagged.
    let feasible_best = evals
        .iter()
        .filter(|e| e.feasible)
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
        .map(|e| e.index);
    let (chosen, best_feasible) = match feasible_best {
        Some(idx) => (idx, true),
        None => {
            let idx = evals
                .iter()
                .min_by(|a, b| a.penalized.partial_cmp(&b.penalized).unwrap())
                .map(|e| e.index)
                .unwrap();
            (idx, false)
        }
    };

    Ok(GboRun {
        best_config: ConfigMatrix::from_flat(spec, &observed_flat[chosen])?,
        best_cost: evals[chosen].cost,
        best_feasible,
        evaluations: evals.len() as u64,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Bounds, ThresholdSense};

    fn spec1() -> ProblemSpec {
        ProblemSpec {
            num_slices: 1,
            resource_names: vec!["bandwidth_ul".into()],
            cost_weights: vec![1.0],
            bounds: Bounds {
                lower: vec![0.0],
                upper: vec![1.0],
                overrides: vec![],
            },
            thresholds: vec![1.0],
            threshold_sense: vec![ThresholdSense::LatencyBelow],
        }
    }

    #[test]
    fn single_observation_is_interpolated() {
        let hyper = GpHyperParams {
            noise_variance: 1e-12,
            ..GpHyperParams::default()
        };
        let model = gp_fit(&[vec![0.3, 0.7]], &[5.0], &hyper).unwrap();
        let (mu, _) = model.predict(&[0.3, 0.7]);
        assert!((mu - 5.0).abs() < 1e-6, "mu {}", mu);
    }

    #[test]
    fn posterior_variance_at_observed_points_is_noise_level() {
        let hyper = GpHyperParams::default();
        // Standardized-scale data so internal units match the hyperparams.
        let xs = vec![vec![0.1], vec![0.5], vec![0.9]];
        let ys = vec![-1.0, 0.0, 1.0];
        let model = gp_fit(&xs, &ys, &hyper).unwrap();
        for x in &xs {
            let var = model.latent_variance(x);
            assert!(
                var <= hyper.noise_variance + 1e-8,
                "latent variance {} at {:?}",
                var,
                x
            );
        }
    }

    #[test]
    fn posterior_matches_dense_linear_algebra_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hyper = GpHyperParams::default();
        let n = 40;
        let dim = 3;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (4.0 * x[0]).sin() + x[1] - 0.5 * x[2])
            .collect();
        let model = gp_fit(&xs, &ys, &hyper).unwrap();

        // Independent path: explicit inverse on the same standardized system.
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = var.sqrt();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let v = sq_exp_kernel(&xs[i], &xs[j], &hyper);
            if i == j {
                v + hyper.noise_variance
            } else {
                v
            }
        });
        let k_inv = k.try_inverse().unwrap();
        let y_vec = DVector::from_iterator(n, ys.iter().map(|y| (y - y_mean) / y_std));

        for _ in 0..50 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let k_star = DVector::from_iterator(n, xs.iter().map(|xi| sq_exp_kernel(&x, xi, &hyper)));
            let mu_oracle = y_mean + y_std * k_star.dot(&(&k_inv * &y_vec));
            let var_oracle =
                (hyper.signal_variance - k_star.dot(&(&k_inv * &k_star))).max(0.0);
            let (mu, sigma) = model.predict(&x);
            assert!((mu - mu_oracle).abs() < 1e-8, "mean {} vs {}", mu, mu_oracle);
            assert!(
                (sigma - y_std * var_oracle.sqrt()).abs() < 1e-8,
                "std {} vs {}",
                sigma,
                y_std * var_oracle.sqrt()
            );
        }
    }

    #[test]
    fn gp_reverts_to_prior_far_from_data() {
        let hyper = GpHyperParams::default();
        let xs = vec![vec![0.5], vec![0.55]];
        let ys = vec![10.0, 12.0];
        let model = gp_fit(&xs, &ys, &hyper).unwrap();
        // 40 lengthscales away.
        let (mu, sigma) = model.predict(&[8.5]);
        let y_mean = 11.0;
        let y_std = 1.0; // std of {10, 12}
        assert!((mu - y_mean).abs() < 1e-6, "mu {}", mu);
        assert!(
            (sigma - y_std * hyper.signal_variance.sqrt()).abs() < 1e-6,
            "sigma {}",
            sigma
        );
    }

    #[test]
    fn ei_is_zero_at_an_uninformative_point() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
    }

    #[test]
    fn ei_at_unit_z_matches_normal_tables() {
        // μ = best - σ, so z = 1: EI/σ = Φ(1) + φ(1) = 1.0833154…
        let sigma = 0.7;
        let ei = expected_improvement(1.0 - sigma, sigma, 1.0);
        assert!(
            (ei / sigma - 1.0833154705876863).abs() < 1e-5,
            "EI/σ = {}",
            ei / sigma
        );
    }

    #[test]
    fn ei_is_never_negative() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let mu = rng.gen_range(-100.0..100.0);
            let sigma = rng.gen_range(0.0..10.0);
            let best = rng.gen_range(-100.0..100.0);
            assert!(expected_improvement(mu, sigma, best) >= 0.0);
        }
    }

    #[test]
    fn one_dimensional_quadratic_is_located() {
        let spec = spec1();
        let params = GboParams {
            initial_samples: 8,
            budget: 30,
            candidates: 256,
            polish_samples: 8,
            rng_seed: 5,
            ..GboParams::default()
        };
        let objective = |x: &ConfigMatrix| -> Result<EvalOutcome> {
            let v = x.get(0, 0);
            let penalized = (v - 0.37) * (v - 0.37);
            Ok(EvalOutcome {
                penalized,
                cost: penalized,
                feasible: true,
            })
        };
        let run = gbo_optimize(&spec, objective, &params).unwrap();
        assert!(
            (run.best_config.get(0, 0) - 0.37).abs() < 0.05,
            "best x {}",
            run.best_config.get(0, 0)
        );
        assert_eq!(run.evaluations, 30);
    }

    #[test]
    fn fixed_seed_reproduces_the_trace() {
        let spec = spec1();
        let params = GboParams {
            initial_samples: 5,
            budget: 15,
            candidates: 64,
            polish_samples: 4,
            rng_seed: 9,
            ..GboParams::default()
        };
        let objective = |x: &ConfigMatrix| -> Result<EvalOutcome> {
            let v = x.get(0, 0);
            Ok(EvalOutcome {
                penalized: (v - 0.6).powi(2),
                cost: v,
                feasible: v >= 0.1,
            })
        };
        let a = gbo_optimize(&spec, objective, &params).unwrap();
        let b = gbo_optimize(&spec, objective, &params).unwrap();
        assert_eq!(a.evals, b.evals);
        assert_eq!(a.best_config, b.best_config);
    }

    #[test]
    fn infeasible_budget_returns_flagged_best_penalized() {
        let spec = spec1();
        let params = GboParams {
            initial_samples: 4,
            budget: 10,
            candidates: 32,
            polish_samples: 2,
            rng_seed: 2,
            ..GboParams::default()
        };
        let objective = |x: &ConfigMatrix| -> Result<EvalOutcome> {
            let v = x.get(0, 0);
            Ok(EvalOutcome {
                penalized: 5.0 + v,
                cost: v,
                feasible: false,
            })
        };
        let run = gbo_optimize(&spec, objective, &params).unwrap();
        assert!(!run.best_feasible);
        let min_penalized = run
            .evals
            .iter()
            .map(|e| e.penalized)
            .fold(f64::INFINITY, f64::min);
        let chosen_penalized = 5.0 + run.best_config.get(0, 0);
        assert!((chosen_penalized - min_penalized).abs() < 1e-12);
    }

    #[test]
    fn every_evaluated_point_stays_in_the_box() {
        let mut spec = spec1();
        spec.bounds.lower = vec![0.2];
        spec.bounds.upper = vec![0.8];
        let params = GboParams {
            initial_samples: 5,
            budget: 25,
            candidates: 64,
            polish_samples: 8,
            rng_seed: 7,
            ..GboParams::default()
        };
        let seen = std::cell::RefCell::new(Vec::new());
        let objective = |x: &ConfigMatrix| -> Result<EvalOutcome> {
            seen.borrow_mut().push(x.get(0, 0));
            Ok(EvalOutcome {
                penalized: x.get(0, 0),
                cost: x.get(0, 0),
                feasible: true,
            })
        };
        gbo_optimize(&spec, objective, &params).unwrap();
        for v in seen.borrow().iter() {
            assert!(*v >= 0.2 && *v <= 0.8, "out of box: {}", v);
        }
    }
}
