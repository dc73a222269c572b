//! Closed-form extraction from a trained network.
//!
//! The network's response to each input (others pinned at their midpoint)
//! is fitted against a small candidate library (affine plus sine atoms)
//! by least squares with a greedy frequency search. Summing the per-input
//! fits yields an additive formula `Σ a_p·x_p + Σ a·sin(b·x_p + c) + const`
//! in raw input and performance units, the form a human reads directly.
//! Fidelity against the network is measured on random points and reported;
//! an expression that explains the network poorly is flagged, not rejected.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::KanModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Linear,
    Sine,
    Constant,
}

/// One additive term: `a·x_p`, `a·sin(b·x_p + c)`, or the constant `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTerm {
    pub kind: TermKind,
    /// Input index the term reads; `None` for the constant.
    pub input: Option<usize>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SymbolicTerm {
    pub fn linear(input: usize, a: f64) -> Self {
        Self {
            kind: TermKind::Linear,
            input: Some(input),
            a,
            b: 0.0,
            c: 0.0,
        }
    }

    pub fn sine(input: usize, a: f64, b: f64, c: f64) -> Self {
        Self {
            kind: TermKind::Sine,
            input: Some(input),
            a,
            b,
            c,
        }
        .canonicalized()
    }

    pub fn constant(a: f64) -> Self {
        Self {
            kind: TermKind::Constant,
            input: None,
            a,
            b: 0.0,
            c: 0.0,
        }
    }

    /// Normalizes sine terms to `a ≥ 0`, `b > 0`, phase in `[-π, π)`, using
    /// the identities `a·sin(bx+c) = -a·sin(-bx-c)` and `-sin(t) = sin(t+π)`.
    pub fn canonicalized(mut self) -> Self {
        if self.kind != TermKind::Sine {
            return self;
        }
        if self.b < 0.0 {
            self.b = -self.b;
            self.c = -self.c;
            self.a = -self.a;
        }
        if self.a < 0.0 {
            self.a = -self.a;
            self.c += std::f64::consts::PI;
        }
        while self.c >= std::f64::consts::PI {
            self.c -= 2.0 * std::f64::consts::PI;
        }
        while self.c < -std::f64::consts::PI {
            self.c += 2.0 * std::f64::consts::PI;
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.kind {
            TermKind::Linear => self.a * x[self.input.unwrap()],
            TermKind::Sine => self.a * (self.b * x[self.input.unwrap()] + self.c).sin(),
            TermKind::Constant => self.a,
        }
    }
}

/// An additive closed-form surrogate of a network, with its measured
/// fidelity against the network it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicExpression {
    pub terms: Vec<SymbolicTerm>,
    /// RMSE of expression vs. network over random points in the input box.
    pub fit_rmse: f64,
    /// Set when `fit_rmse` exceeds the fidelity threshold.
    pub low_fidelity: bool,
}

impl SymbolicExpression {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// Canonical human-readable form with inputs named `x1, x2, …`.
    pub fn render(&self) -> String {
        let names: Vec<String> = (0..self.max_input() + 1).map(|p| format!("x{}", p + 1)).collect();
        self.render_named(&names)
    }

    pub fn render_named(&self, names: &[String]) -> String {
        let mut out = String::new();
        for (idx, term) in self.terms.iter().enumerate() {
            let (sign, magnitude) = if term.a < 0.0 { ("-", -term.a) } else { ("+", term.a) };
            if idx == 0 {
                if sign == "-" {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {} ", sign));
            }
            match term.kind {
                TermKind::Linear => {
                    out.push_str(&format!("{:.4}*{}", magnitude, names[term.input.unwrap()]));
                }
                TermKind::Sine => {
                    let phase = term.c;
                    let phase_sign = if phase < 0.0 { "-" } else { "+" };
                    out.push_str(&format!(
                        "{:.4}*sin({:.4}*{} {} {:.4})",
                        magnitude,
                        term.b,
                        names[term.input.unwrap()],
                        phase_sign,
                        phase.abs()
                    ));
                }
                TermKind::Constant => {
                    out.push_str(&format!("{:.4}", magnitude));
                }
            }
        }
        if self.terms.is_empty() {
            out.push_str("0.0000");
        }
        out
    }

    fn max_input(&self) -> usize {
        self.terms.iter().filter_map(|t| t.input).max().unwrap_or(0)
    }

    /// Parses the canonical rendered form back into terms. Fidelity fields
    /// are not part of the grammar and come back zeroed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (piece, negative) in split_top_level(text)? {
            let piece = piece.trim();
            if piece.is_empty() {
                return Err(Error::Parse("empty term".into()));
            }
            let mut term = parse_term(piece)?;
            if negative {
                term.a = -term.a;
            }
            terms.push(term.canonicalized());
        }
        Ok(Self {
            terms,
            fit_rmse: 0.0,
            low_fidelity: false,
        })
    }
}

/// Splits on top-level `+`/`-` (outside parentheses), keeping signs.
fn split_top_level(text: &str) -> Result<Vec<(String, bool)>> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut negative = false;
    let mut depth = 0usize;
    let mut seen_any = false;
    for ch in text.chars() {
        match ch {
            '(' => {
                depth += 1;
                current.push(ch);
            }
            ')' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| Error::Parse("unbalanced parentheses".into()))?;
                current.push(ch);
            }
            '+' | '-' if depth == 0 && seen_any && !current.trim().is_empty() => {
                pieces.push((current.trim().to_string(), negative));
                current = String::new();
                negative = ch == '-';
            }
            '-' if depth == 0 && current.trim().is_empty() => {
                negative = !negative;
            }
            _ => {
                if !ch.is_whitespace() || !current.is_empty() {
                    current.push(ch);
                }
                if !ch.is_whitespace() {
                    seen_any = true;
                }
            }
        }
    }
    if depth != 0 {
        return Err(Error::Parse("unbalanced parentheses".into()));
    }
    if !current.trim().is_empty() {
        pieces.push((current.trim().to_string(), negative));
    }
    Ok(pieces)
}

fn parse_input_name(text: &str) -> Result<usize> {
    let rest = text
        .trim()
        .strip_prefix('x')
        .ok_or_else(|| Error::Parse(format!("expected input like x1, got {:?}", text)))?;
    let idx: usize = rest
        .parse()
        .map_err(|_| Error::Parse(format!("bad input index in {:?}", text)))?;
    if idx == 0 {
        return Err(Error::Parse("input indices start at x1".into()));
    }
    Ok(idx - 1)
}

fn parse_term(piece: &str) -> Result<SymbolicTerm> {
    if let Some(open) = piece.find("sin(") {
        // a*sin(b*xk ± c)
        let coef_text = piece[..open].trim().trim_end_matches('*').trim();
        let a: f64 = if coef_text.is_empty() {
            1.0
        } else {
            coef_text
                .parse()
                .map_err(|_| Error::Parse(format!("bad sine coefficient {:?}", coef_text)))?
        };
        let inner = piece[open + 4..]
            .trim()
            .strip_suffix(')')
            .ok_or_else(|| Error::Parse("sine term missing closing paren".into()))?;
        let parts = split_top_level(inner)?;
        if parts.is_empty() || parts.len() > 2 {
            return Err(Error::Parse(format!("bad sine argument {:?}", inner)));
        }
        let (freq_part, freq_neg) = &parts[0];
        let (b_text, x_text) = freq_part
            .split_once('*')
            .ok_or_else(|| Error::Parse(format!("sine argument needs b*xk, got {:?}", freq_part)))?;
        let mut b: f64 = b_text
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad frequency {:?}", b_text)))?;
        if *freq_neg {
            b = -b;
        }
        let input = parse_input_name(x_text)?;
        let c = if parts.len() == 2 {
            let (c_text, c_neg) = &parts[1];
            let mut c: f64 = c_text
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad phase {:?}", c_text)))?;
            if *c_neg {
                c = -c;
            }
            c
        } else {
            0.0
        };
        return Ok(SymbolicTerm {
            kind: TermKind::Sine,
            input: Some(input),
            a,
            b,
            c,
        });
    }

    if let Some((coef_text, x_text)) = piece.split_once('*') {
        let a: f64 = coef_text
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad linear coefficient {:?}", coef_text)))?;
        let input = parse_input_name(x_text)?;
        return Ok(SymbolicTerm::linear(input, a));
    }

    if piece.trim().starts_with('x') {
        return Ok(SymbolicTerm::linear(parse_input_name(piece)?, 1.0));
    }

    let a: f64 = piece
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad constant {:?}", piece)))?;
    Ok(SymbolicTerm::constant(a))
}

/// Knobs for the extraction fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicOptions {
    /// Profile sample count per input.
    pub samples_per_input: usize,
    pub max_sines_per_input: usize,
    /// Coarse frequency-scan resolution.
    pub freq_grid: usize,
    /// A sine atom must shrink the profile RMSE by at least this fraction.
    pub min_improvement: f64,
    /// Terms contributing less than this fraction of the output range drop.
    pub prune_relative: f64,
    /// Random points used to measure expression-vs-network fidelity.
    pub fidelity_samples: usize,
    /// `fit_rmse` above this fraction of the output range flags the result.
    pub low_fidelity_threshold: f64,
}

impl Default for SymbolicOptions {
    fn default() -> Self {
        Self {
            samples_per_input: 201,
            max_sines_per_input: 3,
            freq_grid: 160,
            min_improvement: 0.05,
            prune_relative: 0.01,
            fidelity_samples: 512,
            low_fidelity_threshold: 0.05,
        }
    }
}

/// Least squares via SVD; columns are few, rows are the profile samples.
fn solve_ls(columns: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let rows = y.len();
    let cols = columns.len();
    let a = DMatrix::from_fn(rows, cols, |r, c| columns[c][r]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(cols));
    let residual = &a * &x - &b;
    let rmse = (residual.norm_squared() / rows as f64).sqrt();
    (x.as_slice().to_vec(), rmse)
}

struct ProfileFit {
    constant: f64,
    slope: f64,
    sines: Vec<(f64, f64, f64)>, // (amplitude-sin, amplitude-cos, frequency)
}

/// Fits `constant + slope·x + Σ A·sin(b x) + B·cos(b x)` greedily over
/// frequencies. Sine atoms are only admitted while the residual is above
/// `noise_floor`, must shrink it by a real margin, and may not blow up into
/// the cancelling near-affine pairs an unconstrained fit produces; the
/// frequency scan starts high enough that an atom is distinguishable from
/// the affine columns over the sampled window.
fn fit_profile(xs: &[f64], ys: &[f64], noise_floor: f64, opts: &SymbolicOptions) -> ProfileFit {
    let range = xs.last().unwrap() - xs[0];
    let span = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ones = vec![1.0; xs.len()];
    let mut columns: Vec<Vec<f64>> = vec![ones, xs.to_vec()];
    let mut freqs: Vec<f64> = Vec::new();

    let (mut coefs, mut rmse) = solve_ls(&columns, ys);

    let b_lo = 1.5 / range;
    let b_hi = 24.0 / range;
    for _ in 0..opts.max_sines_per_input {
        if rmse <= noise_floor {
            break;
        }
        let mut best: Option<(f64, f64)> = None; // (freq, rmse)
        let scan = |freq: f64, columns: &Vec<Vec<f64>>, best: &mut Option<(f64, f64)>| {
            let mut trial = columns.clone();
            trial.push(xs.iter().map(|x| (freq * x).sin()).collect());
            trial.push(xs.iter().map(|x| (freq * x).cos()).collect());
            let (_, r) = solve_ls(&trial, ys);
            if best.map_or(true, |(_, br)| r < br) {
                *best = Some((freq, r));
            }
        };
        let coarse_step = (b_hi - b_lo) / opts.freq_grid as f64;
        for k in 0..=opts.freq_grid {
            scan(b_lo + coarse_step * k as f64, &columns, &mut best);
        }
        let (coarse_freq, _) = best.unwrap();
        // Two refinement passes around the coarse winner.
        let mut center = coarse_freq;
        let mut width = coarse_step;
        for _ in 0..2 {
            let lo = (center - width).max(b_lo);
            let hi = center + width;
            let step = (hi - lo) / 24.0;
            let mut local: Option<(f64, f64)> = None;
            for k in 0..=24 {
                scan(lo + step * k as f64, &columns, &mut local);
            }
            let (f, _) = local.unwrap();
            center = f;
            width = step;
        }
        let mut trial = columns.clone();
        trial.push(xs.iter().map(|x| (center * x).sin()).collect());
        trial.push(xs.iter().map(|x| (center * x).cos()).collect());
        let (trial_coefs, trial_rmse) = solve_ls(&trial, ys);

        let amp = trial_coefs[trial_coefs.len() - 2].hypot(trial_coefs[trial_coefs.len() - 1]);
        let improved = trial_rmse < (1.0 - opts.min_improvement) * rmse;
        let well_posed = amp <= 5.0 * span.max(noise_floor);
        if improved && well_posed {
            columns = trial;
            coefs = trial_coefs;
            rmse = trial_rmse;
            freqs.push(center);
        } else {
            break;
        }
    }

    let sines = freqs
        .iter()
        .enumerate()
        .map(|(k, &freq)| (coefs[2 + 2 * k], coefs[3 + 2 * k], freq))
        .collect();
    ProfileFit {
        constant: coefs[0],
        slope: coefs[1],
        sines,
    }
}

/// Extracts a closed-form additive surrogate with default options.
pub fn extract_symbolic(model: &KanModel) -> Result<SymbolicExpression> {
    extract_symbolic_with(model, &SymbolicOptions::default())
}

pub fn extract_symbolic_with(
    model: &KanModel,
    opts: &SymbolicOptions,
) -> Result<SymbolicExpression> {
    model.validate()?;
    let dim = model.input_dim;
    let mid: Vec<f64> = model.normalization.offsets.clone();

    // Output spread over random box points; the yardstick for pruning and
    // the fidelity flag.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut probes: Vec<Vec<f64>> = Vec::with_capacity(opts.fidelity_samples);
    for _ in 0..opts.fidelity_samples {
        let point: Vec<f64> = (0..dim)
            .map(|p| {
                let (lo, hi) = model.normalization.raw_range(p);
                rng.gen_range(lo..=hi)
            })
            .collect();
        probes.push(point);
    }
    let probe_values: Vec<f64> = probes
        .iter()
        .map(|x| model.forward(x))
        .collect::<Result<_>>()?;
    let out_min = probe_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let out_max = probe_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let output_range = (out_max - out_min).max(1e-9);

    let base = model.forward(&mid)?;
    let mut terms = Vec::new();
    let mut constant = base;

    for p in 0..dim {
        let (lo, hi) = model.normalization.raw_range(p);
        if hi - lo < 1e-9 {
            continue;
        }
        let n = opts.samples_per_input;
        let xs: Vec<f64> = (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect();
        let mut point = mid.clone();
        let mut ys = Vec::with_capacity(n);
        for &x in &xs {
            point[p] = x;
            ys.push(model.forward(&point)? - base);
        }

        let noise_floor = 0.5 * opts.prune_relative * output_range;
        let fit = fit_profile(&xs, &ys, noise_floor, opts);
        constant += fit.constant;

        if fit.slope.abs() * (hi - lo) >= opts.prune_relative * output_range {
            terms.push(SymbolicTerm::linear(p, fit.slope));
        } else {
            // A dropped slope still shifts the level at the midpoint.
            constant += fit.slope * mid[p];
        }
        for (a_sin, a_cos, freq) in fit.sines {
            let amp = a_sin.hypot(a_cos);
            if amp < opts.prune_relative * output_range {
                continue;
            }
            // A·sin(bx) + B·cos(bx) = amp·sin(bx + atan2(B, A))
            let phase = a_cos.atan2(a_sin);
            terms.push(SymbolicTerm::sine(p, amp, freq, phase));
        }
    }

    terms.push(SymbolicTerm::constant(constant));

    let expr = SymbolicExpression {
        terms,
        fit_rmse: 0.0,
        low_fidelity: false,
    };
    let sse: f64 = probes
        .iter()
        .zip(&probe_values)
        .map(|(x, v)| {
            let e = expr.eval(x) - v;
            e * e
        })
        .sum();
    let fit_rmse = (sse / probes.len() as f64).sqrt();

    Ok(SymbolicExpression {
        fit_rmse,
        low_fidelity: fit_rmse > opts.low_fidelity_threshold * output_range,
        ..expr
    })
}
