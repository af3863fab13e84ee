//! Quadrature rules and compensated summation.
//!
//! Every grid axis carries its own nodes and weights so that integrals over a
//! tensor grid are plain weighted sums, independent of how the grid was built.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KvnError, Result};

/// Neumaier-compensated running sum. Summation order is the caller's order,
/// so results are reproducible bit for bit.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Complex counterpart of [`CompensatedSum`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedComplexSum {
    re: CompensatedSum,
    im: CompensatedSum,
}

impl CompensatedComplexSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn compensated_complex_sum<I: IntoIterator<Item = Complex64>>(values: I) -> Complex64 {
    let mut acc = CompensatedComplexSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Gauss–Legendre nodes and weights on [-1, 1], ascending.
///
/// Newton iteration on the three-term Legendre recurrence, seeded with the
/// Tricomi asymptotic guess. Accurate to a few ulp for the orders used here.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// How the nodes of an [`Axis`] are laid out. Differentiation along an axis is
/// only available for the two equispaced layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spacing {
    /// Equispaced nodes on one full period with equal (trapezoid) weights.
    Periodic { period: f64 },
    /// Equispaced nodes on an open interval.
    Uniform,
    /// Anything else (Gauss–Legendre, composite or mapped rules).
    Irregular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub spacing: Spacing,
}

impl Axis {
    /// `n` equispaced nodes `start + k·period/n`; trapezoid weights are exact
    /// for trigonometric polynomials of degree below `n`.
    pub fn periodic(start: f64, period: f64, n: usize) -> Self {
        let h = period / n as f64;
        Self {
            nodes: (0..n).map(|k| start + k as f64 * h).collect(),
            weights: vec![h; n],
            spacing: Spacing::Periodic { period },
        }
    }

    /// Cell-centred midpoint rule on `[lo, hi]`.
    pub fn midpoint(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / n as f64;
        Self {
            nodes: (0..n).map(|k| lo + (k as f64 + 0.5) * h).collect(),
            weights: vec![h; n],
            spacing: Spacing::Uniform,
        }
    }

    pub fn gauss_legendre(lo: f64, hi: f64, n: usize) -> Self {
        Self::composite_gauss_legendre(&[lo, hi], n)
    }

    /// Gauss–Legendre with `per_panel` nodes on every panel between
    /// consecutive breakpoints. Breakpoints must be ascending.
    pub fn composite_gauss_legendre(breaks: &[f64], per_panel: usize) -> Self {
        let (x, w) = gauss_legendre_unit(per_panel);
        let mut nodes = Vec::with_capacity(per_panel * breaks.len().saturating_sub(1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + half * xi);
                weights.push(half * wi);
            }
        }
        Self {
            nodes,
            weights,
            spacing: Spacing::Irregular,
        }
    }

    /// Gauss–Legendre in `s = sqrt(x)` on `[lo, hi]` (both ≥ 0). Integrands
    /// that are smooth in `sqrt(x)` near zero converge spectrally.
    pub fn gauss_legendre_sqrt(lo: f64, hi: f64, n: usize) -> Self {
        let base = Self::gauss_legendre(lo.max(0.0).sqrt(), hi.sqrt(), n);
        Self {
            nodes: base.nodes.iter().map(|s| s * s).collect(),
            weights: base
                .nodes
                .iter()
                .zip(&base.weights)
                .map(|(s, w)| 2.0 * s * w)
                .collect(),
            spacing: Spacing::Irregular,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node spacing for equispaced layouts.
    pub fn step(&self) -> Option<f64> {
        match self.spacing {
            Spacing::Periodic { period } => Some(period / self.len() as f64),
            Spacing::Uniform if self.len() >= 2 => Some(self.nodes[1] - self.nodes[0]),
            _ => None,
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        compensated_sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.weights.len() {
            return Err(KvnError::GridMismatch(format!(
                "axis has {} nodes but {} weights",
                self.nodes.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(KvnError::GridMismatch(
                "axis weights must be finite and positive".into(),
            ));
        }
        if self.nodes.iter().any(|x| !x.is_finite()) {
            return Err(KvnError::GridMismatch("axis nodes must be finite".into()));
        }
        Ok(())
    }
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]` with `panels`
/// equal panels of `order` nodes.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let breaks: Vec<f64> = (0..=panels)
        .map(|k| a + (b - a) * k as f64 / panels as f64)
        .collect();
    Axis::composite_gauss_legendre(&breaks, order).integrate(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 33, 64] {
            let (x, w) = gauss_legendre_unit(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "n={n}");
            // degree 2n-1 is exact
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-13, "n={n} got {got}");
            let even = 2 * (n - 1);
            let exact_even = 2.0 / (even as f64 + 1.0);
            let got_even: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(even as i32)).sum();
            assert!((got_even - exact_even).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn known_three_point_rule() {
        let (x, w) = gauss_legendre_unit(3);
        assert!((x[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((w[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_rule_is_exact_for_trig_polynomials() {
        let axis = Axis::periodic(-std::f64::consts::PI, 2.0 * std::f64::consts::PI, 16);
        for k in 1..16 {
            let v = axis.integrate(|x| (k as f64 * x).cos());
            assert!(v.abs() < 1e-13, "k={k} v={v}");
        }
        let v = axis.integrate(|x| (16.0 * x).cos());
        assert!((v - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn sqrt_mapped_rule_handles_sqrt_endpoint() {
        let axis = Axis::gauss_legendre_sqrt(0.0, 4.0, 12);
        let v = axis.integrate(|x| x.sqrt());
        assert!((v - 16.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = compensated_sum([1e16, 1.0, -1e16]);
        assert_eq!(v, 1.0);
    }
}
