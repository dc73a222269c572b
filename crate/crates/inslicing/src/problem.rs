//! The slice-configuration optimization problem.
//!
//! Minimize the total resource cost `C = Σ_i Σ_r w_r · x_{i,r}` subject to:
//!
//! - C1: every slice meets its performance threshold,
//! - C2: every allocation stays inside its box `[L, H]`,
//! - C3: per-resource totals stay within the shared capacity `H_r`.
//!
//! Performance functions are supplied by a [`PerfEvaluator`] (trained
//! surrogate or ground truth), so feasibility checks are evaluator-agnostic.
//! The penalized scalarization ([`penalized_objective`]) is what the
//! gradient-based optimizers and the Bayesian baseline minimize; it equals
//! the raw cost exactly on the feasible set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance in normalized units. A violation at or below this
/// counts as zero, so boundary configurations are not rejected for
/// floating-point noise.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

/// Performance shortfalls enter the penalty relative to this fraction of
/// their threshold. The scale balances two needs: the penalty must dominate
/// any cost saved by sub-resolution threshold violations (pushing the scale
/// down), and the penalized surface must stay well-conditioned enough for
/// secant-based refinement (pushing it up).
pub const C1_PENALTY_SCALE: f64 = 1.0;

/// Canonical resource labels from the testbed this problem models.
pub const CANONICAL_RESOURCES: [&str; 6] = [
    "bandwidth_ul",
    "bandwidth_dl",
    "mcs_offset_ul",
    "mcs_offset_dl",
    "backhaul_bw",
    "cpu_ratio",
];

/// How a slice's raw performance metric relates to its threshold.
///
/// Constraint C1 is written uniformly as "satisfaction score ≥ 0"; the sense
/// records how the score is derived from the raw metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSense {
    /// Metric is a latency-like quantity; meeting the requirement means
    /// `metric ≤ threshold`. Score = `Q - P(X)`.
    LatencyBelow,
    /// Metric is a throughput-like quantity; meeting the requirement means
    /// `metric ≥ threshold`. Score = `P(X) - Q`.
    PerformanceAbove,
}

impl ThresholdSense {
    /// Satisfaction score: non-negative iff the requirement is met.
    pub fn score(self, metric: f64, threshold: f64) -> f64 {
        match self {
            ThresholdSense::LatencyBelow => threshold - metric,
            ThresholdSense::PerformanceAbove => metric - threshold,
        }
    }

    /// Sign of `d(score)/d(metric)`.
    pub fn score_slope(self) -> f64 {
        match self {
            ThresholdSense::LatencyBelow => -1.0,
            ThresholdSense::PerformanceAbove => 1.0,
        }
    }
}

/// A per-(slice, resource) lower-bound override, e.g. minimum shares that
/// keep specific application classes operational.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOverride {
    pub slice: usize,
    pub resource: usize,
    pub lower: f64,
}

/// Box bounds shared by all slices, plus optional per-slice overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<BoundOverride>,
}

/// The full problem description: dimensions, cost weights, bounds,
/// per-slice thresholds and their sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "slices")]
    pub num_slices: usize,
    /// Resource labels; the length defines `|R|`.
    #[serde(rename = "resources")]
    pub resource_names: Vec<String>,
    #[serde(rename = "weights")]
    pub cost_weights: Vec<f64>,
    pub bounds: Bounds,
    pub thresholds: Vec<f64>,
    #[serde(rename = "sense")]
    pub threshold_sense: Vec<ThresholdSense>,
}

impl ProblemSpec {
    pub fn num_resources(&self) -> usize {
        self.resource_names.len()
    }

    /// Total number of decision variables `|I| · |R|`.
    pub fn dim(&self) -> usize {
        self.num_slices * self.num_resources()
    }

    /// Effective lower bound for one allocation, overrides applied.
    pub fn lower_bound(&self, slice: usize, resource: usize) -> f64 {
        self.bounds
            .overrides
            .iter()
            .find(|o| o.slice == slice && o.resource == resource)
            .map(|o| o.lower)
            .unwrap_or(self.bounds.lower[resource])
    }

    pub fn upper_bound(&self, _slice: usize, resource: usize) -> f64 {
        self.bounds.upper[resource]
    }

    /// Per-coordinate bounds of the flattened configuration vector.
    pub fn flat_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let r = self.num_resources();
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for i in 0..self.num_slices {
            for j in 0..r {
                lo.push(self.lower_bound(i, j));
                hi.push(self.upper_bound(i, j));
            }
        }
        (lo, hi)
    }

    /// Validates the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let r = self.num_resources();
        if self.num_slices == 0 || r == 0 {
            return Err(Error::InvalidSpec(
                "need at least one slice and one resource".into(),
            ));
        }
        if self.cost_weights.len() != r || self.bounds.lower.len() != r || self.bounds.upper.len() != r
        {
            return Err(Error::InvalidSpec(format!(
                "weights/bounds must have {} entries",
                r
            )));
        }
        if self.thresholds.len() != self.num_slices || self.threshold_sense.len() != self.num_slices
        {
            return Err(Error::InvalidSpec(format!(
                "thresholds/sense must have {} entries",
                self.num_slices
            )));
        }
        if self.cost_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidSpec("cost weights must be >= 0".into()));
        }
        for j in 0..r {
            if !(0.0 <= self.bounds.lower[j] && self.bounds.lower[j] <= self.bounds.upper[j]) {
                return Err(Error::InvalidSpec(format!(
                    "bounds for resource {} must satisfy 0 <= L <= H",
                    j
                )));
            }
        }
        for o in &self.bounds.overrides {
            if o.slice >= self.num_slices || o.resource >= r {
                return Err(Error::InvalidSpec("override index out of range".into()));
            }
            if o.lower < 0.0 || o.lower > self.bounds.upper[o.resource] {
                return Err(Error::InvalidSpec("override lower bound out of range".into()));
            }
        }
        Ok(())
    }
}

/// The decision variables: one row per slice, one column per resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMatrix {
    num_slices: usize,
    num_resources: usize,
    /// Row-major `num_slices × num_resources`.
    values: Vec<f64>,
}

impl ConfigMatrix {
    pub fn new(num_slices: usize, num_resources: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_slices * num_resources {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", num_slices, num_resources),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("configuration has non-finite entries".into()));
        }
        Ok(Self {
            num_slices,
            num_resources,
            values,
        })
    }

    pub fn zeros(num_slices: usize, num_resources: usize) -> Self {
        Self {
            num_slices,
            num_resources,
            values: vec![0.0; num_slices * num_resources],
        }
    }

    /// Reinterprets a flat genome as a configuration for `spec`.
    pub fn from_flat(spec: &ProblemSpec, flat: &[f64]) -> Result<Self> {
        Self::new(spec.num_slices, spec.num_resources(), flat.to_vec())
    }

    pub fn num_slices(&self) -> usize {
        self.num_slices
    }

    pub fn num_resources(&self) -> usize {
        self.num_resources
    }

    pub fn get(&self, slice: usize, resource: usize) -> f64 {
        self.values[slice * self.num_resources + resource]
    }

    pub fn set(&mut self, slice: usize, resource: usize, v: f64) {
        self.values[slice * self.num_resources + resource] = v;
    }

    /// The action vector of one slice.
    pub fn row(&self, slice: usize) -> &[f64] {
        let r = self.num_resources;
        &self.values[slice * r..(slice + 1) * r]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    fn matches(&self, spec: &ProblemSpec) -> Result<()> {
        if self.num_slices != spec.num_slices || self.num_resources != spec.num_resources() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", spec.num_slices, spec.num_resources()),
                got: format!("{}x{}", self.num_slices, self.num_resources),
            });
        }
        Ok(())
    }
}

/// Per-constraint-class violation magnitudes for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Per-slice performance shortfall (zero when the threshold is met).
    pub c1_violations: Vec<f64>,
    /// Per-slice threshold magnitudes, the natural scale of each shortfall.
    pub c1_scales: Vec<f64>,
    /// Total box-bound excess summed over all coordinates.
    pub c2_violations: f64,
    /// Per-resource capacity excess `max(0, Σ_i x_{i,r} - H_r)`.
    pub c3_violations: Vec<f64>,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Aggregated squared violations, the quantity the penalty weights
    /// scale. The report must carry the thresholds' scale so performance
    /// shortfalls (threshold units) and resource overruns (normalized
    /// units) are commensurable; without that the C1 wall is orders of
    /// magnitude stiffer than everything else and gradient methods crawl.
    pub fn squared_violation(&self, weights: &PenaltyWeights) -> f64 {
        let c1: f64 = self
            .c1_violations
            .iter()
            .zip(&self.c1_scales)
            .map(|(v, q)| {
                let rel = v / (C1_PENALTY_SCALE * q.abs().max(1.0));
                rel * rel
            })
            .sum();
        let c3: f64 = self.c3_violations.iter().map(|v| v * v).sum();
        weights.c1 * c1 + weights.c2 * self.c2_violations * self.c2_violations + weights.c3 * c3
    }
}

/// Penalty weights per constraint class for the scalarized objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            // C1 violations are threshold-relative and so an order of
            // magnitude smaller than the resource-unit violations; the
            // heavier weight keeps sub-resolution threshold trades
            // unprofitable without wrecking the surface's conditioning.
            c1: 1e4,
            c2: 1e3,
            c3: 1e3,
        }
    }
}

/// Supplies each slice's performance metric at a given action vector.
pub trait PerfEvaluator {
    fn perf(&self, slice: usize, config_row: &[f64]) -> Result<f64>;
}

impl<F> PerfEvaluator for F
where
    F: Fn(usize, &[f64]) -> Result<f64>,
{
    fn perf(&self, slice: usize, config_row: &[f64]) -> Result<f64> {
        self(slice, config_row)
    }
}

/// A performance evaluator that also exposes the metric's gradient with
/// respect to the action vector. Needed by the trust-region refinement.
pub trait DifferentiablePerf: PerfEvaluator {
    /// Returns `(metric, d metric / d config_row)`.
    fn perf_with_grad(&self, slice: usize, config_row: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Total operation cost `Σ_i Σ_r w_r · x_{i,r}`.
pub fn total_cost(spec: &ProblemSpec, x: &ConfigMatrix) -> Result<f64> {
    x.matches(spec)?;
    let r = spec.num_resources();
    let mut cost = 0.0;
    for i in 0..spec.num_slices {
        for j in 0..r {
            cost += spec.cost_weights[j] * x.get(i, j);
        }
    }
    Ok(cost)
}

/// Evaluates constraints C1–C3 at `x` using `perf` for slice performance.
pub fn check_feasibility<P: PerfEvaluator + ?Sized>(
    spec: &ProblemSpec,
    x: &ConfigMatrix,
    perf: &P,
) -> Result<FeasibilityReport> {
    x.matches(spec)?;
    let r = spec.num_resources();

    let mut c1 = Vec::with_capacity(spec.num_slices);
    let mut c1_tolerable = true;
    for i in 0..spec.num_slices {
        let metric = perf.perf(i, x.row(i))?;
        if !metric.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite performance for slice {}",
                i
            )));
        }
        let score = spec.threshold_sense[i].score(metric, spec.thresholds[i]);
        let violation = (-score).max(0.0);
        // Performance shortfalls are measured against the threshold's own
        // scale; resource violations below stay in normalized units.
        if violation > FEASIBILITY_TOLERANCE * spec.thresholds[i].abs().max(1.0) {
            c1_tolerable = false;
        }
        c1.push(violation);
    }

    let mut c2 = 0.0;
    for i in 0..spec.num_slices {
        for j in 0..r {
            let v = x.get(i, j);
            c2 += (spec.lower_bound(i, j) - v).max(0.0) + (v - spec.upper_bound(i, j)).max(0.0);
        }
    }

    let mut c3 = Vec::with_capacity(r);
    for j in 0..r {
        let total: f64 = (0..spec.num_slices).map(|i| x.get(i, j)).sum();
        c3.push((total - spec.bounds.upper[j]).max(0.0));
    }

    let feasible = c1_tolerable
        && c2 <= FEASIBILITY_TOLERANCE
        && c3.iter().all(|v| *v <= FEASIBILITY_TOLERANCE);

    Ok(FeasibilityReport {
        c1_violations: c1,
        c1_scales: spec.thresholds.clone(),
        c2_violations: c2,
        c3_violations: c3,
        feasible,
    })
}

/// Cost plus squared-violation penalties; equals [`total_cost`] exactly on
/// the feasible set and stays smooth wherever `perf` is smooth.
pub fn penalized_objective<P: PerfEvaluator + ?Sized>(
    spec: &ProblemSpec,
    x: &ConfigMatrix,
    perf: &P,
    weights: &PenaltyWeights,
) -> Result<f64> {
    let report = check_feasibility(spec, x, perf)?;
    Ok(total_cost(spec, x)? + report.squared_violation(weights))
}

/// Elementwise clamp into the effective box. Idempotent.
pub fn clip(spec: &ProblemSpec, x: &ConfigMatrix) -> Result<ConfigMatrix> {
    x.matches(spec)?;
    let r = spec.num_resources();
    let mut out = x.clone();
    for i in 0..spec.num_slices {
        for j in 0..r {
            let v = x.get(i, j).clamp(spec.lower_bound(i, j), spec.upper_bound(i, j));
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Rescales each capacity-violating column toward its lower bounds so that
/// the column total lands exactly on `H_r`. Box bounds are preserved; C1 may
/// degrade and must be re-checked by the caller.
pub fn repair_capacity(spec: &ProblemSpec, x: &ConfigMatrix) -> Result<ConfigMatrix> {
    x.matches(spec)?;
    let r = spec.num_resources();
    let mut out = x.clone();
    for j in 0..r {
        let total: f64 = (0..spec.num_slices).map(|i| out.get(i, j)).sum();
        let cap = spec.bounds.upper[j];
        if total <= cap {
            continue;
        }
        let floor: f64 = (0..spec.num_slices).map(|i| spec.lower_bound(i, j)).sum();
        let span = total - floor;
        if span <= 0.0 {
            continue; // lower bounds alone exceed capacity; nothing to rescale
        }
        let t = ((cap - floor) / span).clamp(0.0, 1.0);
        for i in 0..spec.num_slices {
            let lo = spec.lower_bound(i, j);
            out.set(i, j, lo + (out.get(i, j) - lo) * t);
        }
    }
    Ok(out)
}

/// Per-coordinate range of one slice's action vector worth modeling: the
/// slice's lower bounds plus `fraction` of the column slack that remains
/// when every other slice sits at its minimum. At `fraction = 1` this is
/// everything a capacity-respecting configuration can reach; smaller
/// fractions concentrate on the neighborhood of plausible operating points.
pub fn operational_bounds(
    spec: &ProblemSpec,
    slice: usize,
    fraction: f64,
) -> (Vec<f64>, Vec<f64>) {
    let r = spec.num_resources();
    let mut lo = Vec::with_capacity(r);
    let mut hi = Vec::with_capacity(r);
    for j in 0..r {
        let own_low = spec.lower_bound(slice, j);
        let others: f64 = (0..spec.num_slices)
            .filter(|&i| i != slice)
            .map(|i| spec.lower_bound(i, j))
            .sum();
        let reachable = (spec.bounds.upper[j] - others).max(own_low);
        let top = own_low + fraction * (reachable - own_low);
        lo.push(own_low);
        hi.push(top.min(spec.upper_bound(slice, j)));
    }
    (lo, hi)
}

/// The penalized objective as a callable over flattened configurations,
/// with an analytic gradient when the evaluator is differentiable. This is
/// the function the trust-region refinement minimizes.
pub struct PenalizedObjective<'a, P: ?Sized> {
    pub spec: &'a ProblemSpec,
    pub perf: &'a P,
    pub weights: PenaltyWeights,
}

impl<'a, P: PerfEvaluator + ?Sized> PenalizedObjective<'a, P> {
    pub fn new(spec: &'a ProblemSpec, perf: &'a P, weights: PenaltyWeights) -> Self {
        Self { spec, perf, weights }
    }

    pub fn value(&self, flat: &[f64]) -> Result<f64> {
        let x = ConfigMatrix::from_flat(self.spec, flat)?;
        penalized_objective(self.spec, &x, self.perf, &self.weights)
    }
}

impl<'a, P: DifferentiablePerf + ?Sized> PenalizedObjective<'a, P> {
    /// Analytic gradient of the penalized objective w.r.t. the flat vector.
    pub fn value_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = self.spec;
        let r = spec.num_resources();
        let x = ConfigMatrix::from_flat(spec, flat)?;
        let mut grad = vec![0.0; spec.dim()];
        let mut value = 0.0;

        // Linear cost term.
        for i in 0..spec.num_slices {
            for j in 0..r {
                value += spec.cost_weights[j] * x.get(i, j);
                grad[i * r + j] += spec.cost_weights[j];
            }
        }

        // C1: squared relative performance shortfall through the evaluator
        // gradient.
        for i in 0..spec.num_slices {
            let (metric, dmetric) = self.perf.perf_with_grad(i, x.row(i))?;
            let score = spec.threshold_sense[i].score(metric, spec.thresholds[i]);
            let scale = C1_PENALTY_SCALE * spec.thresholds[i].abs().max(1.0);
            let violation = (-score).max(0.0) / scale;
            if violation > 0.0 {
                value += self.weights.c1 * violation * violation;
                let slope = spec.threshold_sense[i].score_slope();
                for j in 0..r {
                    // d violation / dx = -slope/scale * d metric / dx when active
                    grad[i * r + j] +=
                        self.weights.c1 * 2.0 * violation * (-slope) * dmetric[j] / scale;
                }
            }
        }

        // C2: total box excess, squared.
        let mut c2 = 0.0;
        let mut dc2 = vec![0.0; spec.dim()];
        for i in 0..spec.num_slices {
            for j in 0..r {
                let v = x.get(i, j);
                let lo = spec.lower_bound(i, j);
                let hi = spec.upper_bound(i, j);
                if v < lo {
                    c2 += lo - v;
                    dc2[i * r + j] = -1.0;
                } else if v > hi {
                    c2 += v - hi;
                    dc2[i * r + j] = 1.0;
                }
            }
        }
        if c2 > 0.0 {
            value += self.weights.c2 * c2 * c2;
            for (g, d) in grad.iter_mut().zip(&dc2) {
                *g += self.weights.c2 * 2.0 * c2 * d;
            }
        }

        // C3: per-resource capacity excess, squared.
        for j in 0..r {
            let total: f64 = (0..spec.num_slices).map(|i| x.get(i, j)).sum();
            let excess = (total - spec.bounds.upper[j]).max(0.0);
            if excess > 0.0 {
                value += self.weights.c3 * excess * excess;
                for i in 0..spec.num_slices {
                    grad[i * r + j] += self.weights.c3 * 2.0 * excess;
                }
            }
        }

        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> ProblemSpec {
        ProblemSpec {
            num_slices: 1,
            resource_names: vec!["bandwidth_ul".into(), "bandwidth_dl".into()],
            cost_weights: vec![1.0, 2.0],
            bounds: Bounds {
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
                overrides: vec![],
            },
            thresholds: vec![100.0],
            threshold_sense: vec![ThresholdSense::LatencyBelow],
        }
    }

    fn always(metric: f64) -> impl Fn(usize, &[f64]) -> Result<f64> {
        move |_, _| Ok(metric)
    }

    #[test]
    fn zero_allocation_costs_nothing() {
        let spec = toy_spec();
        let x = ConfigMatrix::zeros(1, 2);
        assert_eq!(total_cost(&spec, &x).unwrap(), 0.0);
    }

    #[test]
    fn hand_summed_cost() {
        let spec = toy_spec();
        let x = ConfigMatrix::new(1, 2, vec![0.5, 0.25]).unwrap();
        assert_eq!(total_cost(&spec, &x).unwrap(), 1.0);
    }

    #[test]
    fn cost_rejects_shape_mismatch() {
        let spec = toy_spec();
        let x = ConfigMatrix::zeros(2, 2);
        assert!(matches!(
            total_cost(&spec, &x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cost_is_linear() {
        let spec = toy_spec();
        let x = ConfigMatrix::new(1, 2, vec![0.3, 0.7]).unwrap();
        let y = ConfigMatrix::new(1, 2, vec![0.9, 0.1]).unwrap();
        let (a, b) = (0.25, 1.5);
        let combo: Vec<f64> = x
            .as_flat()
            .iter()
            .zip(y.as_flat())
            .map(|(xc, yc)| a * xc + b * yc)
            .collect();
        let combo = ConfigMatrix::new(1, 2, combo).unwrap();
        let lhs = total_cost(&spec, &combo).unwrap();
        let rhs = a * total_cost(&spec, &x).unwrap() + b * total_cost(&spec, &y).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn capacity_boundary_is_feasible() {
        // Two slices summing exactly to the capacity on each resource.
        let mut spec = toy_spec();
        spec.num_slices = 2;
        spec.thresholds = vec![100.0, 100.0];
        spec.threshold_sense = vec![ThresholdSense::LatencyBelow; 2];
        let x = ConfigMatrix::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let report = check_feasibility(&spec, &x, &always(50.0)).unwrap();
        assert!(report.c3_violations.iter().all(|v| *v == 0.0));
        assert!(report.feasible);
    }

    #[test]
    fn below_lower_bound_is_infeasible() {
        let mut spec = toy_spec();
        spec.bounds.lower = vec![0.1, 0.1];
        let x = ConfigMatrix::new(1, 2, vec![0.05, 0.5]).unwrap();
        let report = check_feasibility(&spec, &x, &always(50.0)).unwrap();
        assert!(!report.feasible);
        assert!(report.c2_violations > 0.0);
    }

    #[test]
    fn latency_sense_flags_slow_slice() {
        let spec = toy_spec();
        let x = ConfigMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        let report = check_feasibility(&spec, &x, &always(130.0)).unwrap();
        assert!(!report.feasible);
        assert!((report.c1_violations[0] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn evaluator_failure_propagates() {
        let spec = toy_spec();
        let x = ConfigMatrix::zeros(1, 2);
        let failing = |_: usize, _: &[f64]| -> Result<f64> {
            Err(Error::Evaluation("probe offline".into()))
        };
        assert!(matches!(
            check_feasibility(&spec, &x, &failing),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn penalized_equals_cost_when_feasible() {
        let spec = toy_spec();
        let x = ConfigMatrix::new(1, 2, vec![0.5, 0.25]).unwrap();
        let w = PenaltyWeights::default();
        let p = penalized_objective(&spec, &x, &always(50.0), &w).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_violation_penalty_hand_value() {
        // One slice exceeding capacity by 0.1 on resource 0 with weight 100.
        let mut spec = toy_spec();
        spec.bounds.upper = vec![0.4, 1.0];
        let x = ConfigMatrix::new(1, 2, vec![0.5, 0.0]).unwrap();
        let w = PenaltyWeights {
            c1: 100.0,
            c2: 0.0,
            c3: 100.0,
        };
        // cost = 0.5; C3 excess 0.1 -> 100 * 0.01 = 1.0. C2 excess also 0.1 but weight 0.
        let p = penalized_objective(&spec, &x, &always(50.0), &w).unwrap();
        assert!((p - 1.5).abs() < 1e-12, "got {}", p);
    }

    #[test]
    fn clip_is_identity_inside_box() {
        let spec = toy_spec();
        let x = ConfigMatrix::new(1, 2, vec![0.3, 0.8]).unwrap();
        assert_eq!(clip(&spec, &x).unwrap(), x);
    }

    #[test]
    fn clip_clamps_both_sides_and_is_idempotent() {
        let mut spec = toy_spec();
        spec.bounds.lower = vec![0.1, 0.1];
        let x = ConfigMatrix::new(1, 2, vec![1.7, -0.3]).unwrap();
        let clipped = clip(&spec, &x).unwrap();
        assert_eq!(clipped.as_flat(), &[1.0, 0.1]);
        assert_eq!(clip(&spec, &clipped).unwrap(), clipped);
    }

    #[test]
    fn clip_respects_overrides() {
        let mut spec = toy_spec();
        spec.bounds.overrides = vec![BoundOverride {
            slice: 0,
            resource: 1,
            lower: 0.25,
        }];
        let x = ConfigMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let clipped = clip(&spec, &x).unwrap();
        assert_eq!(clipped.as_flat(), &[0.0, 0.25]);
    }

    #[test]
    fn repair_capacity_restores_column_totals() {
        let mut spec = toy_spec();
        spec.num_slices = 3;
        spec.thresholds = vec![100.0; 3];
        spec.threshold_sense = vec![ThresholdSense::LatencyBelow; 3];
        spec.bounds.lower = vec![0.1, 0.0];
        let x = ConfigMatrix::new(3, 2, vec![0.6, 0.2, 0.5, 0.3, 0.4, 0.1]).unwrap();
        let repaired = repair_capacity(&spec, &x).unwrap();
        let col0: f64 = (0..3).map(|i| repaired.get(i, 0)).sum();
        assert!((col0 - 1.0).abs() < 1e-12);
        // Untouched column stays put.
        assert_eq!(repaired.get(0, 1), 0.2);
        for i in 0..3 {
            assert!(repaired.get(i, 0) >= 0.1 - 1e-12);
        }
    }

    #[test]
    fn spec_json_round_trips() {
        let mut spec = toy_spec();
        spec.bounds.overrides = vec![BoundOverride {
            slice: 0,
            resource: 0,
            lower: 0.1,
        }];
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"slices\""));
        assert!(text.contains("\"sense\""));
        let back: ProblemSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn penalized_gradient_matches_finite_differences() {
        // Quadratic "latency" with analytic gradient, violated C1 and C3.
        struct Quad;
        impl PerfEvaluator for Quad {
            fn perf(&self, _: usize, row: &[f64]) -> Result<f64> {
                Ok(200.0 - 100.0 * row[0] - 50.0 * row[1] * row[1])
            }
        }
        impl DifferentiablePerf for Quad {
            fn perf_with_grad(&self, s: usize, row: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((self.perf(s, row)?, vec![-100.0, -100.0 * row[1]]))
            }
        }

        let mut spec = toy_spec();
        spec.num_slices = 2;
        spec.thresholds = vec![150.0, 150.0];
        spec.threshold_sense = vec![ThresholdSense::LatencyBelow; 2];
        spec.bounds.upper = vec![0.6, 0.6];

        let obj = PenalizedObjective::new(&spec, &Quad, PenaltyWeights::default());
        let x = vec![0.4, 0.3, 0.35, 0.25];
        let (value, grad) = obj.value_and_grad(&x).unwrap();
        assert!((value - obj.value(&x).unwrap()).abs() < 1e-10);

        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (obj.value(&xp).unwrap() - obj.value(&xm).unwrap()) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-5, "coordinate {}: analytic {} vs fd {}", k, grad[k], fd);
        }
    }
}
