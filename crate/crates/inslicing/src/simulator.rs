//! Synthetic ground-truth environment standing in for a physical testbed.
//!
//! Each slice gets a latency function of its own action vector from a
//! linear-plus-sinusoid family (the same functional vocabulary the symbolic
//! extraction targets, so recovered formulas can be checked against their
//! generator). Queries add Gaussian observation noise and floor the result
//! at 1 ms. Scenario generation calibrates the functions against the
//! threshold pattern so a comfortably sized feasible region exists, and
//! verifies that with a Monte-Carlo probe before returning.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    check_feasibility, BoundOverride, Bounds, ConfigMatrix, PerfEvaluator, ProblemSpec,
    ThresholdSense, CANONICAL_RESOURCES,
};

/// Latency is floored here; physical round trips are never instantaneous.
pub const LATENCY_FLOOR_MS: f64 = 1.0;

/// Application class a slice carries; MAR/HVS slices keep minimum shares of
/// several resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceClass {
    Mar,
    Hvs,
    Other,
}

/// One sinusoidal component of a slice's latency function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub resource: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Hidden latency function of one slice:
/// `offset + Σ_r lin_r · x_r + Σ sines`, floored at [`LATENCY_FLOOR_MS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGroundTruth {
    pub linear: Vec<f64>,
    pub sines: Vec<SineTerm>,
    pub offset: f64,
    /// Observation noise σ in ms.
    pub noise_std: f64,
    pub class: SliceClass,
}

impl SliceGroundTruth {
    /// Latency before noise and flooring.
    pub fn base(&self, x: &[f64]) -> f64 {
        let mut v = self.offset;
        for (coef, xr) in self.linear.iter().zip(x) {
            v += coef * xr;
        }
        for s in &self.sines {
            v += s.amplitude * (s.frequency * x[s.resource] + s.phase).sin();
        }
        v
    }

    /// Noiseless observable latency.
    pub fn latency(&self, x: &[f64]) -> f64 {
        self.base(x).max(LATENCY_FLOOR_MS)
    }
}

/// One noisy observation: `max(1, base(x) + N(0, σ²))`, fully determined by
/// `(truth, x, noise_seed)`.
pub fn query(truth: &SliceGroundTruth, x: &[f64], noise_seed: u64) -> f64 {
    let noise = if truth.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        Normal::new(0.0, truth.noise_std).unwrap().sample(&mut rng)
    } else {
        0.0
    };
    (truth.base(x) + noise).max(LATENCY_FLOOR_MS)
}

/// A reproducible experimental setting: the problem plus hidden functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub spec: ProblemSpec,
    pub truths: Vec<SliceGroundTruth>,
    pub seed: u64,
}

impl Scenario {
    /// Noiseless evaluator over the hidden functions, for validation.
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { scenario: self }
    }

    /// Effective box of one slice's action vector.
    pub fn slice_bounds(&self, slice: usize) -> (Vec<f64>, Vec<f64>) {
        let r = self.spec.num_resources();
        let lo = (0..r).map(|j| self.spec.lower_bound(slice, j)).collect();
        let hi = (0..r).map(|j| self.spec.upper_bound(slice, j)).collect();
        (lo, hi)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.spec.validate()?;
        if s.truths.len() != s.spec.num_slices {
            return Err(Error::InvalidSpec("one ground truth per slice required".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Noiseless [`PerfEvaluator`] view of a scenario.
pub struct GroundTruth<'a> {
    scenario: &'a Scenario,
}

impl PerfEvaluator for GroundTruth<'_> {
    fn perf(&self, slice: usize, config_row: &[f64]) -> Result<f64> {
        let truth = self
            .scenario
            .truths
            .get(slice)
            .ok_or_else(|| Error::Evaluation(format!("no ground truth for slice {}", slice)))?;
        Ok(truth.latency(config_row))
    }
}

/// Sampling scheme for training-set collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    Uniform,
    LatinHypercube,
}

/// Draws `(X, observed latency)` pairs over the given box, reproducibly.
pub fn collect_training_set(
    truth: &SliceGroundTruth,
    bounds: (&[f64], &[f64]),
    input_names: &[String],
    n_samples: usize,
    sampling: SamplingScheme,
    seed: u64,
) -> Result<crate::kan::TrainingSet> {
    if n_samples == 0 {
        return Err(Error::InvalidSpec("need at least one sample".into()));
    }
    let (lo, hi) = bounds;
    let dim = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let inputs: Vec<Vec<f64>> = match sampling {
        SamplingScheme::Uniform => (0..n_samples)
            .map(|_| {
                (0..dim)
                    .map(|d| rng.gen_range(0.0..=1.0) * (hi[d] - lo[d]) + lo[d])
                    .collect()
            })
            .collect(),
        SamplingScheme::LatinHypercube => {
            // One stratum per sample per dimension, independently permuted.
            let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
            for d in 0..dim {
                let mut strata: Vec<usize> = (0..n_samples).collect();
                use rand::seq::SliceRandom;
                strata.shuffle(&mut rng);
                let col = strata
                    .iter()
                    .map(|&s| {
                        let u: f64 = rng.gen_range(0.0..1.0);
                        lo[d] + (hi[d] - lo[d]) * (s as f64 + u) / n_samples as f64
                    })
                    .collect();
                columns.push(col);
            }
            (0..n_samples)
                .map(|i| (0..dim).map(|d| columns[d][i]).collect())
                .collect()
        }
    };

    let targets: Vec<f64> = inputs
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let noise_seed = seed ^ (idx as u64).wrapping_mul(0x9e3779b97f4a7c15);
            query(truth, x, noise_seed)
        })
        .collect();

    crate::kan::TrainingSet::new(input_names.to_vec(), inputs, targets)
}

/// Generation knobs; the defaults mirror the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Per-slice thresholds repeat this pattern (ms).
    pub threshold_pattern: Vec<f64>,
    pub class_pattern: Vec<SliceClass>,
    pub weight_range: (f64, f64),
    /// Keep each latency non-increasing in every resource.
    pub monotone: bool,
    pub noise_std: f64,
    /// Per-slice headroom below the threshold at the calibration allocation.
    pub margin_range: (f64, f64),
    /// Minimum feasible fraction required of the generation probe.
    pub required_feasible_fraction: f64,
    pub probe_points: usize,
    pub max_retries: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            threshold_pattern: vec![400.0, 500.0, 60.0],
            class_pattern: vec![SliceClass::Mar, SliceClass::Hvs, SliceClass::Other],
            weight_range: (0.25, 0.45),
            monotone: true,
            noise_std: 5.0,
            margin_range: (0.05, 0.30),
            required_feasible_fraction: 0.10,
            probe_points: 1_000_000,
            max_retries: 8,
        }
    }
}

/// Resources that carry a 0.1 minimum share for MAR/HVS slices.
const MIN_SHARE_RESOURCES: [usize; 4] = [0, 1, 4, 5];

fn resource_names(num_resources: usize) -> Vec<String> {
    (0..num_resources)
        .map(|j| {
            CANONICAL_RESOURCES
                .get(j)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("resource_{}", j + 1))
        })
        .collect()
}

/// Generates a scenario with the default protocol settings.
pub fn generate_scenario(num_slices: usize, num_resources: usize, seed: u64) -> Result<Scenario> {
    generate_scenario_with(num_slices, num_resources, seed, &ScenarioOptions::default())
}

pub fn generate_scenario_with(
    num_slices: usize,
    num_resources: usize,
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<Scenario> {
    if num_slices == 0 || num_resources == 0 {
        return Err(Error::InvalidSpec("need at least one slice and one resource".into()));
    }

    for attempt in 0..opts.max_retries {
        let scenario = draw_scenario(num_slices, num_resources, seed, attempt as u64, opts)?;
        let fraction = feasible_fraction(&scenario, opts.probe_points, seed ^ 0xcafe);
        if fraction >= opts.required_feasible_fraction {
            return Ok(scenario);
        }
    }
    Err(Error::ScenarioGeneration(format!(
        "no draw reached a {:.0}% feasible probe in {} attempts",
        opts.required_feasible_fraction * 100.0,
        opts.max_retries
    )))
}

fn draw_scenario(
    num_slices: usize,
    num_resources: usize,
    seed: u64,
    attempt: u64,
    opts: &ScenarioOptions,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x51ce)));

    let names = resource_names(num_resources);
    let weights: Vec<f64> = (0..num_resources)
        .map(|_| rng.gen_range(opts.weight_range.0..opts.weight_range.1))
        .collect();
    let thresholds: Vec<f64> = (0..num_slices)
        .map(|i| opts.threshold_pattern[i % opts.threshold_pattern.len()])
        .collect();
    let classes: Vec<SliceClass> = (0..num_slices)
        .map(|i| opts.class_pattern[i % opts.class_pattern.len()])
        .collect();

    let mut overrides = Vec::new();
    for (i, class) in classes.iter().enumerate() {
        if matches!(class, SliceClass::Mar | SliceClass::Hvs) {
            for &j in MIN_SHARE_RESOURCES.iter().filter(|&&j| j < num_resources) {
                overrides.push(BoundOverride {
                    slice: i,
                    resource: j,
                    lower: 0.1,
                });
            }
        }
    }

    let spec = ProblemSpec {
        num_slices,
        resource_names: names,
        cost_weights: weights,
        bounds: Bounds {
            lower: vec![0.0; num_resources],
            upper: vec![1.0; num_resources],
            overrides,
        },
        thresholds: thresholds.clone(),
        threshold_sense: vec![ThresholdSense::LatencyBelow; num_slices],
    };
    spec.validate()?;

    // Calibration allocation: just under a fair share of the capacity,
    // lifted to any per-slice minimum. The thresholds must bind: a slice at
    // its fair share meets its threshold with a margin, while a starved
    // slice (at the lower bounds) misses it, so the cost optimizer has to
    // ride the performance boundary instead of parking at the minimums.
    let mut truths = Vec::with_capacity(num_slices);
    for i in 0..num_slices {
        // Fair share of each column's slack above the lower bounds, so even
        // slices whose minimums already consume their column get headroom.
        let x_star: Vec<f64> = (0..num_resources)
            .map(|j| {
                let floor: f64 = (0..num_slices).map(|s| spec.lower_bound(s, j)).sum();
                let slack = (spec.bounds.upper[j] - floor).max(0.0);
                spec.lower_bound(i, j) + 0.9 * slack / num_slices as f64
            })
            .collect();
        let q = thresholds[i];

        // Slopes: negative (resources help), scaled so that dropping from
        // the fair share to full starvation raises latency by a target
        // fraction of the threshold. That makes the threshold bind without
        // pushing the rest of the reachable region below the latency floor.
        let raw: Vec<f64> = (0..num_resources).map(|_| rng.gen_range(0.2..1.0)).collect();
        let tension = rng.gen_range(0.14..0.22);
        let gap_mass: f64 = raw
            .iter()
            .enumerate()
            .map(|(j, u)| u * (x_star[j] - spec.lower_bound(i, j)))
            .sum();
        let scale = if gap_mass > 1e-9 {
            tension * q / gap_mass
        } else {
            q / raw.iter().sum::<f64>()
        };
        let linear: Vec<f64> = raw.iter().map(|u| (-u * scale).max(-900.0)).collect();

        let mut sines = Vec::with_capacity(num_resources);
        for j in 0..num_resources {
            let frequency = rng.gen_range(0.3..2.5);
            let amp_share = if opts.monotone {
                rng.gen_range(0.10..0.35)
            } else {
                rng.gen_range(0.2..1.4)
            };
            let amplitude = (amp_share * linear[j].abs() / frequency).min(160.0);
            sines.push(SineTerm {
                resource: j,
                amplitude,
                frequency,
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            });
        }

        // Latency rise from fair share down to full starvation, linear part.
        let rise: f64 = (0..num_resources)
            .map(|j| linear[j].abs() * (x_star[j] - spec.lower_bound(i, j)))
            .sum();
        // Split the tension: feasible by m·q at the fair share, infeasible
        // by (rise - m·q) at the lower-bound corner.
        let margin = (0.5 * rise / q).clamp(opts.margin_range.0, opts.margin_range.1);

        let mut truth = SliceGroundTruth {
            linear,
            sines,
            offset: 0.0,
            noise_std: opts.noise_std,
            class: classes[i],
        };
        // Place the calibration point at (1 - margin) of the threshold;
        // starvation then sits `rise - margin·q` above the threshold.
        truth.offset = q * (1.0 - margin) - truth.base(&x_star);
        truth.offset = truth.offset.clamp(LATENCY_FLOOR_MS, 900.0);
        truths.push(truth);
    }

    Ok(Scenario {
        name: format!("{}x{}-seed{}", num_slices, num_resources, seed),
        spec,
        truths,
        seed,
    })
}

/// Draws one configuration that satisfies C2 and C3 by construction:
/// column-wise Dirichlet shares of the capacity slack above the lower
/// bounds, with a volume-correct total.
pub fn sample_capacity_respecting(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> ConfigMatrix {
    let r = spec.num_resources();
    let n = spec.num_slices;
    let mut x = ConfigMatrix::zeros(n, r);
    for j in 0..r {
        let lows: Vec<f64> = (0..n).map(|i| spec.lower_bound(i, j)).collect();
        let floor: f64 = lows.iter().sum();
        let slack = (spec.bounds.upper[j] - floor).max(0.0);
        let draws: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0f64..1.0).ln()).collect();
        let total_draw: f64 = draws.iter().sum();
        let t = rng.gen_range(0.0f64..1.0).powf(1.0 / n as f64);
        for i in 0..n {
            let share = draws[i] / total_draw;
            let v = lows[i] + share * t * slack;
            x.set(i, j, v.min(spec.upper_bound(i, j)));
        }
    }
    x
}

/// Fraction of capacity-respecting probe points meeting every threshold
/// under the noiseless ground truth.
pub fn feasible_fraction(scenario: &Scenario, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible = 0usize;
    for _ in 0..points {
        let x = sample_capacity_respecting(&scenario.spec, &mut rng);
        let ok = (0..scenario.spec.num_slices).all(|i| {
            let latency = scenario.truths[i].latency(x.row(i));
            latency <= scenario.spec.thresholds[i]
        });
        if ok {
            feasible += 1;
        }
    }
    feasible as f64 / points as f64
}

/// A feasible configuration of the scenario found by probing, if any.
pub fn probe_feasible_point(scenario: &Scenario, points: usize, seed: u64) -> Option<ConfigMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = scenario.ground_truth();
    for _ in 0..points {
        let x = sample_capacity_respecting(&scenario.spec, &mut rng);
        if let Ok(report) = check_feasibility(&scenario.spec, &x, &truth) {
            if report.feasible {
                return Some(x);
            }
        }
    }
    None
}
