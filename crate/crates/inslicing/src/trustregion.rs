//! Gradient-based local refinement.
//!
//! Around the current iterate a quadratic model
//! `m_k(s) = f_k + g_kᵀ s + ½ sᵀ B_k s` is minimized inside the ball
//! `‖s‖ ≤ Δ_k`, with the dogleg path when the curvature allows a Newton
//! step and the Cauchy point otherwise. The ratio of actual to predicted
//! reduction drives step acceptance and the radius schedule. `B_k` is a
//! symmetric secant (BFGS) approximation built from accepted steps,
//! starting at the identity; exact Hessians of the spline surrogates are
//! never formed.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrmParams {
    pub initial_radius: f64,
    pub max_iterations: usize,
    pub shrink_factor: f64,
    pub expand_factor: f64,
    pub max_radius: f64,
    /// Steps with a gain ratio below this are rejected.
    pub acceptance_threshold: f64,
    /// Central-difference step when no analytic gradient is available.
    pub fd_step: f64,
    /// Gradient norm below which the iterate counts as stationary.
    pub gradient_tolerance: f64,
}

impl Default for TrmParams {
    fn default() -> Self {
        Self {
            initial_radius: 0.2,
            max_iterations: 25,
            shrink_factor: 0.25,
            expand_factor: 2.0,
            max_radius: 1.0,
            acceptance_threshold: 0.05,
            fd_step: 1e-5,
            gradient_tolerance: 1e-10,
        }
    }
}

impl TrmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.shrink_factor && self.shrink_factor < 1.0 && self.expand_factor > 1.0) {
            return Err(Error::InvalidSpec("need 0 < shrink < 1 < expand".into()));
        }
        if !(0.0 < self.acceptance_threshold && self.acceptance_threshold < 1.0) {
            return Err(Error::InvalidSpec("acceptance threshold must lie in (0, 1)".into()));
        }
        if self.initial_radius <= 0.0 || self.max_radius < self.initial_radius {
            return Err(Error::InvalidSpec("need 0 < initial radius <= max radius".into()));
        }
        Ok(())
    }
}

/// Current iterate of the refinement loop.
#[derive(Debug, Clone)]
pub struct TrustRegionState {
    pub x: Vec<f64>,
    pub radius: f64,
    pub hessian: DMatrix<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// One row of the verbose per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrmIteration {
    pub k: usize,
    pub value: f64,
    pub radius: f64,
    pub rho: f64,
    pub accepted: bool,
}

/// Outcome of a refinement run.
#[derive(Debug, Clone)]
pub struct RefineResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub trace: Vec<TrmIteration>,
    /// Final curvature approximation, reusable as a warm start.
    pub hessian: DMatrix<f64>,
}

/// A smooth objective with an optional analytic gradient; gradient-free
/// objectives fall back to central differences. Evaluation counts are
/// tracked for budget accounting.
pub struct Objective<'a> {
    value_fn: Box<dyn Fn(&[f64]) -> Result<f64> + 'a>,
    gradient_fn: Option<Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>>,
    evals: Cell<u64>,
}

impl<'a> Objective<'a> {
    pub fn new(value: impl Fn(&[f64]) -> Result<f64> + 'a) -> Self {
        Self {
            value_fn: Box::new(value),
            gradient_fn: None,
            evals: Cell::new(0),
        }
    }

    pub fn with_gradient(
        value: impl Fn(&[f64]) -> Result<f64> + 'a,
        gradient: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a,
    ) -> Self {
        Self {
            value_fn: Box::new(value),
            gradient_fn: Some(Box::new(gradient)),
            evals: Cell::new(0),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.evals.set(self.evals.get() + 1);
        (self.value_fn)(x)
    }

    /// Analytic gradient when present, else central differences with `h`.
    pub fn gradient(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        if let Some(g) = &self.gradient_fn {
            self.evals.set(self.evals.get() + 1);
            return g(x);
        }
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            probe[k] = x[k] + h;
            let up = self.value(&probe)?;
            probe[k] = x[k] - h;
            let down = self.value(&probe)?;
            probe[k] = x[k];
            grad[k] = (up - down) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Objective evaluations consumed so far (gradients count once when
    /// analytic, per probe when finite-differenced).
    pub fn evals(&self) -> u64 {
        self.evals.get()
    }
}

/// Evaluates `f` and its gradient at `x`. The Hessian approximation is
/// carried in the state and updated by [`secant_update`], not rebuilt here.
pub fn build_model(f: &Objective, x: &[f64], fd_step: f64) -> Result<(f64, DVector<f64>)> {
    let value = f.value(x)?;
    if !value.is_finite() {
        return Err(Error::Evaluation("objective not finite at model center".into()));
    }
    let grad = DVector::from_vec(f.gradient(x, fd_step)?);
    Ok((value, grad))
}

/// BFGS update `B ← B + yyᵀ/(yᵀs) − (Bs)(Bs)ᵀ/(sᵀBs)`, skipped when the
/// curvature pairing `yᵀs` is below 1e-12.
pub fn secant_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let sy = s.dot(y);
    if sy <= 1e-12 {
        return;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    *b += y * y.transpose() / sy;
    if sbs > 1e-12 {
        *b -= &bs * bs.transpose() / sbs;
    }
}

/// Quadratic model value `gᵀs + ½ sᵀBs` (relative to `m(0)`).
fn model_decrease(grad: &DVector<f64>, b: &DMatrix<f64>, s: &DVector<f64>) -> f64 {
    -(grad.dot(s) + 0.5 * s.dot(&(b * s)))
}

/// Approximately minimizes the quadratic model inside the ball: dogleg when
/// the Hessian approximation is positive definite, otherwise the Cauchy
/// point. A zero gradient yields a zero step.
pub fn solve_subproblem(grad: &DVector<f64>, b: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    let gnorm = grad.norm();
    if gnorm == 0.0 {
        return DVector::zeros(grad.len());
    }

    let gbg = grad.dot(&(b * grad));
    // Steepest-descent minimizer (Cauchy point), clipped to the boundary.
    let cauchy = if gbg > 0.0 {
        let t = (gnorm * gnorm / gbg).min(radius / gnorm);
        grad * (-t)
    } else {
        grad * (-radius / gnorm)
    };

    let newton = nalgebra::Cholesky::new(b.clone()).map(|chol| -chol.solve(grad));
    let Some(newton) = newton else {
        return cauchy;
    };

    if newton.norm() <= radius {
        return newton;
    }
    if cauchy.norm() >= radius - 1e-14 {
        return grad * (-radius / gnorm);
    }

    // Dogleg leg: ‖cauchy + τ (newton − cauchy)‖ = radius, τ ∈ [0, 1].
    let d = &newton - &cauchy;
    let a = d.norm_squared();
    let bq = 2.0 * cauchy.dot(&d);
    let c = cauchy.norm_squared() - radius * radius;
    let disc = (bq * bq - 4.0 * a * c).max(0.0).sqrt();
    let tau = ((-bq + disc) / (2.0 * a)).clamp(0.0, 1.0);
    &cauchy + d * tau
}

/// Radius schedule and acceptance from the gain ratio.
pub fn update_radius(
    rho: f64,
    step_norm: f64,
    radius: f64,
    params: &TrmParams,
) -> (f64, bool) {
    let accepted = rho >= params.acceptance_threshold;
    let new_radius = if rho < 0.25 {
        radius * params.shrink_factor
    } else if rho > 0.75 && step_norm >= radius * (1.0 - 1e-9) {
        (radius * params.expand_factor).min(params.max_radius)
    } else {
        radius
    };
    (new_radius, accepted)
}

fn clip_to_box(x: &mut [f64], bounds: &(Vec<f64>, Vec<f64>)) {
    for (k, v) in x.iter_mut().enumerate() {
        *v = v.clamp(bounds.0[k], bounds.1[k]);
    }
}

/// Runs up to `max_iterations` of build/solve/update from `x_start`, keeping
/// every iterate inside the box. Returns the best iterate found; the value
/// never exceeds `f(x_start)`.
pub fn refine(
    f: &Objective,
    x_start: &[f64],
    params: &TrmParams,
    bounds: &(Vec<f64>, Vec<f64>),
) -> Result<RefineResult> {
    refine_warm(f, x_start, params, bounds, None)
}

/// [`refine`] with an optional curvature warm start. Callers that refine
/// the same smooth objective repeatedly can carry the secant approximation
/// across calls instead of rebuilding it from the identity each time.
pub fn refine_warm(
    f: &Objective,
    x_start: &[f64],
    params: &TrmParams,
    bounds: &(Vec<f64>, Vec<f64>),
    hessian: Option<DMatrix<f64>>,
) -> Result<RefineResult> {
    params.validate()?;
    let dim = x_start.len();
    if bounds.0.len() != dim || bounds.1.len() != dim {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bounds", dim),
            got: format!("{}/{}", bounds.0.len(), bounds.1.len()),
        });
    }
    let hessian = match hessian {
        Some(h) if h.nrows() == dim && h.ncols() == dim => h,
        _ => DMatrix::identity(dim, dim),
    };

    let mut x = x_start.to_vec();
    clip_to_box(&mut x, bounds);
    let (value, gradient) = build_model(f, &x, params.fd_step)?;
    let mut state = TrustRegionState {
        x,
        radius: params.initial_radius,
        hessian,
        value,
        gradient,
    };
    let mut trace = Vec::new();

    let mut k = 0;
    while k < params.max_iterations {
        if state.gradient.norm() < params.gradient_tolerance {
            break;
        }
        let step = solve_subproblem(&state.gradient, &state.hessian, state.radius);
        if step.norm() < 1e-15 {
            break;
        }

        // Clip the trial point; the effective step is what remains.
        let mut x_trial: Vec<f64> = state
            .x
            .iter()
            .zip(step.iter())
            .map(|(a, s)| a + s)
            .collect();
        clip_to_box(&mut x_trial, bounds);
        let s_eff = DVector::from_iterator(dim, x_trial.iter().zip(&state.x).map(|(a, b)| a - b));
        let predicted = model_decrease(&state.gradient, &state.hessian, &s_eff);
        if predicted <= 0.0 {
            // The model promises nothing inside the box; iteration ends.
            break;
        }

        let f_trial = f.value(&x_trial)?;
        let rho = if f_trial.is_finite() {
            (state.value - f_trial) / predicted
        } else {
            f64::NEG_INFINITY
        };
        let (new_radius, accepted) = update_radius(rho, s_eff.norm(), state.radius, params);
        trace.push(TrmIteration {
            k,
            value: state.value,
            radius: state.radius,
            rho,
            accepted,
        });
        state.radius = new_radius;

        if accepted {
            let grad_new = DVector::from_vec(f.gradient(&x_trial, params.fd_step)?);
            let y = &grad_new - &state.gradient;
            secant_update(&mut state.hessian, &s_eff, &y);
            state.x = x_trial;
            state.value = f_trial;
            state.gradient = grad_new;
        }

        if state.radius < 1e-12 {
            break;
        }
        k += 1;
    }

    Ok(RefineResult {
        x: state.x,
        value: state.value,
        iterations: k,
        trace,
        hessian: state.hessian,
    })
}

/// Verbose trace rows in the experiment CSV format.
pub fn trace_csv(rows: &[TrmIteration]) -> String {
    let mut out = String::from("k,f_k,delta_k,rho_k,accepted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.k, r.value, r.radius, r.rho, r.accepted
        ));
    }
    out
}
