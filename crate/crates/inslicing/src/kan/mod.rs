//! Kolmogorov-Arnold networks with B-spline edge activations.
//!
//! A model is a chain of layers; layer output `j` is the plain sum of its
//! edge activations, `out_j = Σ_p φ_{j,p}(in_p)`, so every learnable degree
//! of freedom lives on an edge. Inputs pass through a per-dimension affine
//! map into the spline grid range, and the scalar network output is mapped
//! back to performance units by an affine output scale.
//!
//! Submodules: [`spline`] holds the basis machinery, [`train`] the Adam
//! fitting loop, [`symbolic`] the closed-form extraction, [`data`] the
//! sample-set CSV format.

pub mod data;
pub mod spline;
pub mod symbolic;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DifferentiablePerf, PerfEvaluator};

pub use data::TrainingSet;
pub use spline::{BaseKind, SplineActivation};
pub use symbolic::{SymbolicExpression, SymbolicTerm, TermKind};
pub use train::{TrainOptions, TrainingTrace};

/// One network layer: `n_out × n_in` edge activations, row-major by output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub activations: Vec<SplineActivation>,
}

impl KanLayer {
    pub fn activation(&self, out: usize, inp: usize) -> &SplineActivation {
        &self.activations[out * self.n_in + inp]
    }

    pub fn activation_mut(&mut self, out: usize, inp: usize) -> &mut SplineActivation {
        &mut self.activations[out * self.n_in + inp]
    }

    fn forward_into(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        output.resize(self.n_out, 0.0);
        for p in 0..self.n_in {
            // All edges share one knot vector, so the basis is computed once
            // per input and reused across output rows.
            let probe = self.activation(0, p);
            let (lo, hi) = probe.grid_range();
            let xc = input[p].clamp(lo, hi);
            let basis = probe.basis(xc);
            let base_cache: [f64; 3] = [
                BaseKind::Silu.eval(xc),
                BaseKind::Identity.eval(xc),
                BaseKind::Zero.eval(xc),
            ];
            for j in 0..self.n_out {
                let act = self.activation(j, p);
                let mut spline = 0.0;
                for m in 0..=act.degree {
                    spline += act.coefficients[basis.first + m] * basis.values[m];
                }
                let base = match act.base_kind {
                    BaseKind::Silu => base_cache[0],
                    BaseKind::Identity => base_cache[1],
                    BaseKind::Zero => base_cache[2],
                };
                output[j] += act.weight * (base + spline);
            }
        }
    }
}

/// Per-input affine map into the spline grid range: `z = (x - offset) · scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl InputNormalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            offsets: vec![0.0; dim],
            scales: vec![1.0; dim],
        }
    }

    /// Maps `[lo, hi]` per input onto the grid range `[-1, 1]`.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Self {
        let offsets: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let scales: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| {
                let half = 0.5 * (b - a);
                if half > 1e-12 {
                    1.0 / half
                } else {
                    1.0
                }
            })
            .collect();
        Self { offsets, scales }
    }

    /// Raw-input interval that maps onto the grid range.
    pub fn raw_range(&self, dim: usize) -> (f64, f64) {
        let half = 1.0 / self.scales[dim];
        (self.offsets[dim] - half, self.offsets[dim] + half)
    }
}

/// Affine map from the scalar network output to performance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScale {
    pub mean: f64,
    pub std: f64,
}

impl OutputScale {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Construction parameters for a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KanConfig {
    /// Hidden layer widths; the full shape is `[input, hidden.., 1]`.
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub degree: usize,
    pub grid_range: (f64, f64),
    /// Grid range of the layers after the first. Hidden pre-activations
    /// are sums over incoming edges and swing wider than the normalized
    /// inputs; a narrow hidden grid clamps them flat at the input-box
    /// corners.
    pub hidden_grid_range: (f64, f64),
    /// Grid count of the hidden layers, scaled with their wider range so
    /// the knot spacing (spline resolution) stays comparable to the first
    /// layer's.
    pub hidden_grid_size: usize,
    pub base_kind: BaseKind,
    /// Std-dev of the Gaussian coefficient initialization.
    pub coef_init_std: f64,
    pub seed: u64,
}

impl Default for KanConfig {
    fn default() -> Self {
        Self {
            hidden: vec![4, 4, 4],
            grid_size: 5,
            degree: 3,
            grid_range: (-1.0, 1.0),
            hidden_grid_range: (-2.0, 2.0),
            hidden_grid_size: 10,
            base_kind: BaseKind::Silu,
            coef_init_std: 0.1,
            seed: 0,
        }
    }
}

/// A trained (or trainable) network mapping an action vector to one
/// performance metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanModel {
    pub layers: Vec<KanLayer>,
    pub input_dim: usize,
    pub normalization: InputNormalization,
    pub output_scale: OutputScale,
}

impl KanModel {
    pub fn new(input_dim: usize, config: &KanConfig) -> Self {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = Vec::with_capacity(config.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&config.hidden);
        dims.push(1);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (layer_idx, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (range, grid_size) = if layer_idx == 0 {
                (config.grid_range, config.grid_size)
            } else {
                (config.hidden_grid_range, config.hidden_grid_size)
            };
            let mut activations = Vec::with_capacity(n_in * n_out);
            for _ in 0..n_in * n_out {
                let mut act = SplineActivation::new(
                    grid_size,
                    config.degree,
                    range,
                    config.base_kind,
                );
                for c in act.coefficients.iter_mut() {
                    *c = rng.gen_range(-1.0..1.0) * config.coef_init_std;
                }
                act.weight = 1.0 / n_in as f64;
                activations.push(act);
            }
            layers.push(KanLayer {
                n_in,
                n_out,
                activations,
            });
        }

        Self {
            layers,
            input_dim,
            normalization: InputNormalization::identity(input_dim),
            output_scale: OutputScale::identity(),
        }
    }

    /// Single-edge passthrough model, mostly for tests: `forward(x) = x`
    /// inside the grid range.
    pub fn identity() -> Self {
        let mut act = SplineActivation::new(5, 3, (-1.0, 1.0), BaseKind::Identity);
        act.weight = 1.0;
        act.coefficients.iter_mut().for_each(|c| *c = 0.0);
        Self {
            layers: vec![KanLayer {
                n_in: 1,
                n_out: 1,
                activations: vec![act],
            }],
            input_dim: 1,
            normalization: InputNormalization::identity(1),
            output_scale: OutputScale::identity(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.n_out));
        dims
    }

    /// Structural sanity: dimension chaining, scalar output, shared knot
    /// vectors per layer, finite parameters.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("model has no layers".into()));
        }
        let mut prev = self.input_dim;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.n_in != prev {
                return Err(Error::ShapeMismatch {
                    expected: format!("layer {} input {}", idx, prev),
                    got: format!("{}", layer.n_in),
                });
            }
            if layer.activations.len() != layer.n_in * layer.n_out {
                return Err(Error::InvalidSpec(format!("layer {} edge count", idx)));
            }
            let reference = &layer.activations[0].knots;
            for act in &layer.activations {
                if act.knots != *reference {
                    return Err(Error::InvalidSpec(format!(
                        "layer {} edges must share one knot vector",
                        idx
                    )));
                }
                if act.knots.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidSpec("knot vector must be non-decreasing".into()));
                }
                if !act.weight.is_finite() || act.coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidSpec("non-finite parameters".into()));
                }
            }
            prev = layer.n_out;
        }
        if prev != 1 {
            return Err(Error::ShapeMismatch {
                expected: "scalar output".into(),
                got: format!("{}", prev),
            });
        }
        if self.normalization.offsets.len() != self.input_dim
            || self.normalization.scales.len() != self.input_dim
        {
            return Err(Error::InvalidSpec("normalization dimension".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.input_dim),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| (v - self.normalization.offsets[d]) * self.normalization.scales[d])
            .collect()
    }

    /// Network output before the output scale, on normalized inputs.
    pub(crate) fn forward_normalized(&self, z: &[f64]) -> f64 {
        let mut current = z.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        current[0]
    }

    /// Predicted performance at an action vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let y = self.forward_normalized(&self.normalize(x));
        Ok(self.output_scale.mean + self.output_scale.std * y)
    }

    /// Network value plus input gradient on normalized inputs, reverse mode.
    pub(crate) fn forward_grad_normalized(&self, z: &[f64]) -> (f64, Vec<f64>) {
        // Forward, keeping every layer's input.
        let mut ios: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        ios.push(z.to_vec());
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(ios.last().unwrap(), &mut next);
            ios.push(next.clone());
        }
        let value = ios.last().unwrap()[0];

        // Reverse sweep.
        let mut dout = vec![1.0];
        for (layer, input) in self.layers.iter().rev().zip(ios.iter().rev().skip(1)) {
            let mut dinput = vec![0.0; layer.n_in];
            for p in 0..layer.n_in {
                let probe = layer.activation(0, p);
                let (lo, hi) = probe.grid_range();
                let raw = input[p];
                if raw < lo || raw > hi {
                    continue; // clamped: zero gradient through this input
                }
                let basis = probe.basis_with_deriv(raw);
                for j in 0..layer.n_out {
                    let act = layer.activation(j, p);
                    let mut dspline = 0.0;
                    for m in 0..=act.degree {
                        dspline += act.coefficients[basis.first + m] * basis.derivs[m];
                    }
                    dinput[p] += dout[j] * act.weight * (act.base_kind.deriv(raw) + dspline);
                }
            }
            dout = dinput;
        }
        (value, dout)
    }

    /// Performance and its gradient with respect to the raw action vector.
    pub fn forward_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let z = self.normalize(x);
        let (y, dz) = self.forward_grad_normalized(&z);
        let grad = dz
            .iter()
            .enumerate()
            .map(|(d, g)| g * self.normalization.scales[d] * self.output_scale.std)
            .collect();
        Ok((self.output_scale.mean + self.output_scale.std * y, grad))
    }

    /// Analytic gradient of [`Self::forward`].
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_with_grad(x)?.1)
    }

    // ----- flat parameter view (spline coefficients + edge weights) -----

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.activations.iter().map(|a| a.coefficients.len() + 1).sum::<usize>())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for act in &layer.activations {
                out.extend_from_slice(&act.coefficients);
                out.push(act.weight);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let mut idx = 0;
        for layer in &mut self.layers {
            for act in &mut layer.activations {
                let nb = act.coefficients.len();
                act.coefficients.copy_from_slice(&params[idx..idx + nb]);
                idx += nb;
                act.weight = params[idx];
                idx += 1;
            }
        }
        debug_assert_eq!(idx, params.len());
    }

    /// Reverse-mode accumulation of `factor · d(output)/d(params)` into
    /// `pgrad` (flat layout), returning the normalized-space output.
    pub(crate) fn backward_params(&self, z: &[f64], factor: f64, pgrad: &mut [f64]) -> f64 {
        let mut ios: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        ios.push(z.to_vec());
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(ios.last().unwrap(), &mut next);
            ios.push(next.clone());
        }
        let value = ios.last().unwrap()[0];

        // Per-layer parameter offsets in the flat layout.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer
                .activations
                .iter()
                .map(|a| a.coefficients.len() + 1)
                .sum::<usize>();
        }

        let mut dout = vec![factor];
        for (rev_idx, (layer, input)) in self
            .layers
            .iter()
            .rev()
            .zip(ios.iter().rev().skip(1))
            .enumerate()
        {
            let layer_idx = self.layers.len() - 1 - rev_idx;
            let base_offset = offsets[layer_idx];
            let per_edge = layer.activations[0].coefficients.len() + 1;
            let mut dinput = vec![0.0; layer.n_in];
            for p in 0..layer.n_in {
                let probe = layer.activation(0, p);
                let (lo, hi) = probe.grid_range();
                let raw = input[p];
                let xc = raw.clamp(lo, hi);
                let pass = raw >= lo && raw <= hi;
                let basis = probe.basis_with_deriv(xc);
                for j in 0..layer.n_out {
                    let g = dout[j];
                    if g == 0.0 {
                        continue;
                    }
                    let act = layer.activation(j, p);
                    let edge = base_offset + (j * layer.n_in + p) * per_edge;
                    let mut spline = 0.0;
                    let mut dspline = 0.0;
                    for m in 0..=act.degree {
                        let c = act.coefficients[basis.first + m];
                        spline += c * basis.values[m];
                        dspline += c * basis.derivs[m];
                        // d out_j / d c_m = w · B_m(x)
                        pgrad[edge + basis.first + m] += g * act.weight * basis.values[m];
                    }
                    let base = act.base_kind.eval(xc);
                    // d out_j / d w = b(x) + spline(x)
                    pgrad[edge + per_edge - 1] += g * (base + spline);
                    if pass {
                        dinput[p] += g * act.weight * (act.base_kind.deriv(xc) + dspline);
                    }
                }
            }
            dout = dinput;
        }
        value
    }

    // ----- persistence -----

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: KanModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The per-slice surrogate bundle the optimizers consume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceSurrogates {
    pub models: Vec<KanModel>,
}

impl PerfEvaluator for SliceSurrogates {
    fn perf(&self, slice: usize, config_row: &[f64]) -> Result<f64> {
        let model = self.models.get(slice).ok_or_else(|| {
            Error::Evaluation(format!("no surrogate for slice {}", slice))
        })?;
        model.forward(config_row)
    }
}

impl DifferentiablePerf for SliceSurrogates {
    fn perf_with_grad(&self, slice: usize, config_row: &[f64]) -> Result<(f64, Vec<f64>)> {
        let model = self.models.get(slice).ok_or_else(|| {
            Error::Evaluation(format!("no surrogate for slice {}", slice))
        })?;
        model.forward_with_grad(config_row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network_passes_input_through() {
        let model = KanModel::identity();
        for &x in &[-0.8, -0.25, 0.0, 0.4, 1.0] {
            assert!((model.forward(&[x]).unwrap() - x).abs() < 1e-15);
        }
        assert!((model.grad(&[0.3]).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let model = KanModel::identity();
        assert!(matches!(
            model.forward(&[0.1, 0.2]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn constant_network_has_zero_gradient() {
        let config = KanConfig {
            base_kind: BaseKind::Zero,
            coef_init_std: 0.0,
            ..KanConfig::default()
        };
        let model = KanModel::new(3, &config);
        let (value, grad) = model.forward_with_grad(&[0.2, -0.4, 0.6]).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = KanModel::new(4, &KanConfig::default());
        let x = [0.1, 0.3, -0.2, 0.9];
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let config = KanConfig {
            seed: 42,
            ..KanConfig::default()
        };
        let mut model = KanModel::new(4, &config);
        model.normalization = InputNormalization::from_bounds(&[0.0; 4], &[1.0; 4]);
        model.output_scale = OutputScale {
            mean: 250.0,
            std: 80.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..0.95)).collect();
            let (_, grad) = model.forward_with_grad(&x).unwrap();
            for d in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += h;
                xm[d] -= h;
                let fd =
                    (model.forward(&xp).unwrap() - model.forward(&xm).unwrap()) / (2.0 * h);
                let rel = (grad[d] - fd).abs() / fd.abs().max(1e-6);
                assert!(
                    rel < 1e-5,
                    "dim {}: analytic {} vs fd {} (rel {})",
                    d,
                    grad[d],
                    fd,
                    rel
                );
            }
        }
    }

    #[test]
    fn parameter_backward_matches_finite_differences() {
        let config = KanConfig {
            seed: 9,
            hidden: vec![3, 3],
            ..KanConfig::default()
        };
        let model = KanModel::new(2, &config);
        let z = [0.35, -0.62];
        let mut pgrad = vec![0.0; model.param_count()];
        model.backward_params(&z, 1.0, &mut pgrad);

        let params = model.params_flat();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let k = rng.gen_range(0..params.len());
            let mut m = model.clone();
            let mut pp = params.clone();
            pp[k] += h;
            m.set_params_flat(&pp);
            let up = m.forward_normalized(&z);
            pp[k] -= 2.0 * h;
            m.set_params_flat(&pp);
            let down = m.forward_normalized(&z);
            let fd = (up - down) / (2.0 * h);
            let rel = (pgrad[k] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "param {}: {} vs {}", k, pgrad[k], fd);
        }
    }

    #[test]
    fn json_round_trip_preserves_outputs_exactly() {
        let mut model = KanModel::new(3, &KanConfig { seed: 7, ..KanConfig::default() });
        model.normalization = InputNormalization::from_bounds(&[0.0; 3], &[1.0; 3]);
        model.output_scale = OutputScale {
            mean: 123.456,
            std: 7.89,
        };
        let text = model.to_json().unwrap();
        let back = KanModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        let x = [0.11, 0.93, 0.47];
        assert_eq!(
            model.forward(&x).unwrap().to_bits(),
            back.forward(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn validate_rejects_broken_chain() {
        let mut model = KanModel::new(2, &KanConfig::default());
        model.input_dim = 3;
        assert!(model.validate().is_err());
    }
}
