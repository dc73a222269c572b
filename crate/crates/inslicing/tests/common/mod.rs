//! Shared test oracles: brute-force grid enumeration over the 2x2 toy and
//! a noiseless ground-truth evaluator. Everything here is independent of
//! the library's optimization paths; it only reads the scenario's hidden
//! functions directly.

use inslicing::error::Result;
use inslicing::problem::{ConfigMatrix, DifferentiablePerf, PerfEvaluator, ProblemSpec};
use inslicing::simulator::{generate_scenario_with, Scenario, ScenarioOptions};

/// Noiseless ground truth as a performance evaluator, with the analytic
/// gradient of the latency family (valid above the floor).
pub struct TruthPerf<'a>(pub &'a Scenario);

impl PerfEvaluator for TruthPerf<'_> {
    fn perf(&self, slice: usize, row: &[f64]) -> Result<f64> {
        Ok(self.0.truths[slice].latency(row))
    }
}

impl DifferentiablePerf for TruthPerf<'_> {
    fn perf_with_grad(&self, slice: usize, row: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = &self.0.truths[slice];
        let mut grad = t.linear.clone();
        for s in &t.sines {
            grad[s.resource] +=
                s.amplitude * s.frequency * (s.frequency * row[s.resource] + s.phase).cos();
        }
        Ok((t.latency(row), grad))
    }
}

/// The canonical 2-slice x 2-resource toy used by the oracle suites.
pub fn toy_scenario() -> Scenario {
    generate_scenario_with(
        2,
        2,
        13,
        &ScenarioOptions {
            noise_std: 3.0,
            probe_points: 50_000,
            ..ScenarioOptions::default()
        },
    )
    .expect("toy scenario generates")
}

/// Brute-force feasibility check, written independently of
/// `problem::check_feasibility`: direct constraint arithmetic.
pub fn brute_force_feasible(spec: &ProblemSpec, scenario: &Scenario, x: &ConfigMatrix) -> bool {
    let r = spec.num_resources();
    for i in 0..spec.num_slices {
        if scenario.truths[i].latency(x.row(i))
            > spec.thresholds[i] * (1.0 + inslicing::problem::FEASIBILITY_TOLERANCE)
        {
            return false;
        }
        for j in 0..r {
            let v = x.get(i, j);
            if v < spec.lower_bound(i, j) - 1e-9 || v > spec.upper_bound(i, j) + 1e-9 {
                return false;
            }
        }
    }
    for j in 0..r {
        let total: f64 = (0..spec.num_slices).map(|i| x.get(i, j)).sum();
        if total > spec.bounds.upper[j] + inslicing::problem::FEASIBILITY_TOLERANCE {
            return false;
        }
    }
    true
}

/// Exhaustive 21-points-per-axis enumeration of the toy's 4-dimensional
/// configuration space: the reference optimum and its argmin.
pub fn grid_oracle(scenario: &Scenario) -> (f64, Vec<f64>) {
    let spec = &scenario.spec;
    assert_eq!(spec.dim(), 4, "grid oracle is sized for the 2x2 toy");
    let steps = 21;
    let (lo, hi) = spec.flat_bounds();
    let axis = |k: usize, t: usize| lo[k] + (hi[k] - lo[k]) * t as f64 / (steps - 1) as f64;

    let mut best = f64::INFINITY;
    let mut best_flat = vec![0.0; 4];
    for a in 0..steps {
        for b in 0..steps {
            for c in 0..steps {
                for d in 0..steps {
                    let flat = vec![axis(0, a), axis(1, b), axis(2, c), axis(3, d)];
                    let x = ConfigMatrix::from_flat(spec, &flat).unwrap();
                    if !brute_force_feasible(spec, scenario, &x) {
                        continue;
                    }
                    let cost: f64 = (0..2)
                        .map(|i| {
                            (0..2)
                                .map(|j| spec.cost_weights[j] * x.get(i, j))
                                .sum::<f64>()
                        })
                        .sum();
                    if cost < best {
                        best = cost;
                        best_flat = flat;
                    }
                }
            }
        }
    }
    (best, best_flat)
}
