//! B-spline edge activations.
//!
//! Each network edge carries `φ(x) = w · (b(x) + spline(x))` where `b` is a
//! fixed residual basis function and `spline(x) = Σ_j c_j B_j(x)` is a
//! degree-`k` B-spline over a uniform knot vector. Basis values come from
//! the local Cox-de Boor recursion: at any point exactly `k + 1` functions
//! are non-zero, and they sum to one on the grid interior.

use serde::{Deserialize, Serialize};

/// Hard cap on the spline degree; sizes the recursion scratch buffers.
pub const MAX_DEGREE: usize = 7;

/// Number of knots for `grid_size` intervals at `degree`: the interior grid
/// plus `degree` extension steps on each side.
pub fn knot_count(grid_size: usize, degree: usize) -> usize {
    grid_size + 2 * degree + 1
}

/// Number of basis functions (= spline coefficients) over that knot vector.
pub fn basis_count(grid_size: usize, degree: usize) -> usize {
    grid_size + degree
}

/// Uniform knot vector: `grid_size` intervals spanning `range`, extended
/// `degree` steps beyond each end.
pub fn uniform_knots(grid_size: usize, degree: usize, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    let h = (hi - lo) / grid_size as f64;
    (0..knot_count(grid_size, degree))
        .map(|i| lo + (i as f64 - degree as f64) * h)
        .collect()
}

/// Residual basis function on an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    /// `x · sigmoid(x)`, the default.
    Silu,
    Identity,
    Zero,
}

impl BaseKind {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BaseKind::Silu => x / (1.0 + (-x).exp()),
            BaseKind::Identity => x,
            BaseKind::Zero => 0.0,
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            BaseKind::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            BaseKind::Identity => 1.0,
            BaseKind::Zero => 0.0,
        }
    }
}

/// One learnable edge activation `φ(x) = w (b(x) + Σ_j c_j B_j(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineActivation {
    /// Knot vector, `grid_size + 2·degree + 1` entries, non-decreasing.
    pub knots: Vec<f64>,
    /// Spline control coefficients, `grid_size + degree` entries.
    pub coefficients: Vec<f64>,
    /// Scalar weight applied to base + spline.
    pub weight: f64,
    pub base_kind: BaseKind,
    pub degree: usize,
}

/// Basis values at one point: global index of the first non-zero function
/// plus the `degree + 1` local values.
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
}

/// Basis values and their first derivatives at one point.
pub struct LocalBasisDeriv {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
    pub derivs: [f64; MAX_DEGREE + 1],
}

impl SplineActivation {
    pub fn new(grid_size: usize, degree: usize, range: (f64, f64), base_kind: BaseKind) -> Self {
        assert!(degree >= 1 && degree <= MAX_DEGREE);
        assert!(grid_size >= 1);
        Self {
            knots: uniform_knots(grid_size, degree, range),
            coefficients: vec![0.0; basis_count(grid_size, degree)],
            weight: 1.0,
            base_kind,
            degree,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.knots.len() - 2 * self.degree - 1
    }

    /// Interval the spline is defined on; inputs are clamped into it.
    pub fn grid_range(&self) -> (f64, f64) {
        let g = self.grid_size();
        (self.knots[self.degree], self.knots[self.degree + g])
    }

    fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.grid_range();
        x.clamp(lo, hi)
    }

    /// Knot span index for a (clamped) point, O(1) on the uniform grid.
    fn span(&self, xc: f64) -> usize {
        let g = self.grid_size();
        let (lo, hi) = self.grid_range();
        let h = (hi - lo) / g as f64;
        let cell = (((xc - lo) / h).floor() as isize).clamp(0, g as isize - 1) as usize;
        cell + self.degree
    }

    /// Non-zero basis values at `x` (after clamping).
    pub fn basis(&self, x: f64) -> LocalBasis {
        let xc = self.clamp(x);
        let span = self.span(xc);
        let k = self.degree;
        let mut values = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        values[0] = 1.0;
        for j in 1..=k {
            left[j] = xc - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - xc;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = values[r] / denom;
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        LocalBasis {
            first: span - k,
            values,
        }
    }

    /// Non-zero basis values and derivatives at `x` (after clamping).
    pub fn basis_with_deriv(&self, x: f64) -> LocalBasisDeriv {
        let xc = self.clamp(x);
        let span = self.span(xc);
        let k = self.degree;
        let mut values = [0.0; MAX_DEGREE + 1];
        let mut lower = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        values[0] = 1.0;
        for j in 1..=k {
            if j == k {
                lower[..k].copy_from_slice(&values[..k]);
            }
            left[j] = xc - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - xc;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = values[r] / denom;
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }

        // d/dx B_{i,k} = k ( B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}) )
        // where `lower[m]` holds B_{span-k+1+m, k-1}.
        let mut derivs = [0.0; MAX_DEGREE + 1];
        for m in 0..=k {
            let i = span - k + m;
            let a = if m >= 1 {
                lower[m - 1] / (self.knots[i + k] - self.knots[i])
            } else {
                0.0
            };
            let b = if m < k {
                lower[m] / (self.knots[i + k + 1] - self.knots[i + 1])
            } else {
                0.0
            };
            derivs[m] = k as f64 * (a - b);
        }
        LocalBasisDeriv {
            first: span - k,
            values,
            derivs,
        }
    }

    /// `φ(x) = w (b(x) + Σ_j c_j B_j(x))`, clamping `x` into the grid range.
    pub fn eval(&self, x: f64) -> f64 {
        let xc = self.clamp(x);
        let basis = self.basis(xc);
        let spline: f64 = (0..=self.degree)
            .map(|m| self.coefficients[basis.first + m] * basis.values[m])
            .sum();
        self.weight * (self.base_kind.eval(xc) + spline)
    }

    /// Value and `dφ/dx`. The derivative is zero where clamping is active.
    pub fn eval_with_grad(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.grid_range();
        let xc = x.clamp(lo, hi);
        let basis = self.basis_with_deriv(xc);
        let mut spline = 0.0;
        let mut dspline = 0.0;
        for m in 0..=self.degree {
            let c = self.coefficients[basis.first + m];
            spline += c * basis.values[m];
            dspline += c * basis.derivs[m];
        }
        let value = self.weight * (self.base_kind.eval(xc) + spline);
        let grad = if x < lo || x > hi {
            0.0
        } else {
            self.weight * (self.base_kind.deriv(xc) + dspline)
        };
        (value, grad)
    }
}
