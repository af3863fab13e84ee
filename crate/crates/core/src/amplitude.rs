//! Sampled amplitudes and densities on tensor-product grids in `(q,p)` or
//! `(τ,H)` coordinates.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{KvnError, Result};
use crate::model::{HamiltonianModel, PhaseSample, TauEnergyPoint, TauRange};
use crate::quadrature::{compensated_complex_sum, compensated_sum, Axis, Spacing};

pub const MIN_AXIS_NODES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coords {
    /// `axis1 = q`, `axis2 = p`.
    #[serde(rename = "qp")]
    PhaseSpace,
    /// `axis1 = τ`, `axis2 = H`.
    #[serde(rename = "tau_h")]
    TauEnergy,
}

/// Node layout shared by amplitude and density grids. Values are stored
/// row-major: index `i * n2 + j` holds node `(axis1[i], axis2[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub coords: Coords,
    pub axis1: Axis,
    pub axis2: Axis,
}

impl GridLayout {
    pub fn new(coords: Coords, axis1: Axis, axis2: Axis) -> Result<Self> {
        axis1.validate()?;
        axis2.validate()?;
        if axis1.len() < MIN_AXIS_NODES || axis2.len() < MIN_AXIS_NODES {
            return Err(KvnError::GridTooSmall {
                n1: axis1.len(),
                n2: axis2.len(),
            });
        }
        Ok(Self {
            coords,
            axis1,
            axis2,
        })
    }

    /// Uniform cell-centred `(q,p)` grid.
    pub fn phase_space(q: (f64, f64), p: (f64, f64), nq: usize, np: usize) -> Result<Self> {
        Self::new(
            Coords::PhaseSpace,
            Axis::midpoint(q.0, q.1, nq),
            Axis::midpoint(p.0, p.1, np),
        )
    }

    /// `(τ,H)` grid with `n_tau` equispaced nodes over the full τ period,
    /// starting at `τ̲`, and the given energy axis.
    pub fn tau_energy(model: &HamiltonianModel, n_tau: usize, energy: Axis) -> Result<Self> {
        let TauRange::Bounded { lower, upper } = model.tau_bounds() else {
            return Err(KvnError::UnboundedTau);
        };
        Self::new(
            Coords::TauEnergy,
            Axis::periodic(lower, upper - lower, n_tau),
            energy,
        )
    }

    pub fn n1(&self) -> usize {
        self.axis1.len()
    }

    pub fn n2(&self) -> usize {
        self.axis2.len()
    }

    pub fn len(&self) -> usize {
        self.n1() * self.n2()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.n2(), idx % self.n2())
    }

    pub fn weight(&self, idx: usize) -> f64 {
        let (i, j) = self.split(idx);
        self.axis1.weights[i] * self.axis2.weights[j]
    }

    pub fn node(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.split(idx);
        (self.axis1.nodes[i], self.axis2.nodes[j])
    }

    pub fn tau_energy_at(&self, model: &HamiltonianModel, idx: usize) -> Result<TauEnergyPoint> {
        let (a, b) = self.node(idx);
        match self.coords {
            Coords::TauEnergy => Ok(TauEnergyPoint::new(a, b)),
            Coords::PhaseSpace => model.dynamical_time(PhaseSample::new(a, b)),
        }
    }

    pub fn phase_at(&self, model: &HamiltonianModel, idx: usize) -> Result<PhaseSample> {
        let (a, b) = self.node(idx);
        match self.coords {
            Coords::PhaseSpace => Ok(PhaseSample::new(a, b)),
            Coords::TauEnergy => model.inverse_map(TauEnergyPoint::new(a, b)),
        }
    }

    pub fn ensure_same(&self, other: &GridLayout) -> Result<()> {
        if self != other {
            return Err(KvnError::GridMismatch(
                "operands live on different grids".into(),
            ));
        }
        Ok(())
    }

    /// Weighted sum `Σ w_k f_k`, fixed order, compensated.
    pub fn integrate_real(&self, values: &[f64]) -> f64 {
        compensated_sum(values.iter().enumerate().map(|(k, v)| self.weight(k) * v))
    }

    pub fn integrate_complex(&self, values: &[Complex64]) -> Complex64 {
        compensated_complex_sum(values.iter().enumerate().map(|(k, v)| v * self.weight(k)))
    }

    /// Evaluates `f` at every node in parallel; output order is the node order.
    pub fn sample<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..self.len()).into_par_iter().map(f).collect()
    }

    /// Derivative along axis 1 (`q` or `τ`). Spectral on periodic axes,
    /// fourth-order central differences on uniform ones.
    pub fn derivative_axis1(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        let (n1, n2) = (self.n1(), self.n2());
        let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
        let lines: Vec<Vec<Complex64>> = (0..n2)
            .into_par_iter()
            .map(|j| {
                let line: Vec<Complex64> = (0..n1).map(|i| values[i * n2 + j]).collect();
                differentiate_line(&line, &self.axis1)
            })
            .collect::<Result<_>>()?;
        for (j, line) in lines.into_iter().enumerate() {
            for (i, v) in line.into_iter().enumerate() {
                out[i * n2 + j] = v;
            }
        }
        Ok(out)
    }

    /// Derivative along axis 2 (`p` or `H`).
    pub fn derivative_axis2(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        let n2 = self.n2();
        let rows: Vec<Vec<Complex64>> = values
            .par_chunks(n2)
            .map(|row| differentiate_line(row, &self.axis2))
            .collect::<Result<_>>()?;
        Ok(rows.concat())
    }
}

fn differentiate_line(line: &[Complex64], axis: &Axis) -> Result<Vec<Complex64>> {
    match axis.spacing {
        Spacing::Periodic { period } => Ok(spectral_derivative(line, period)),
        Spacing::Uniform => Ok(central_difference(line, axis.step().unwrap_or(1.0))),
        Spacing::Irregular => Err(KvnError::Unsupported(
            "differentiation needs an equispaced axis".into(),
        )),
    }
}

/// Fourier differentiation of one period sampled at `n` equispaced nodes.
/// The Nyquist coefficient of an even-length line is dropped.
pub fn spectral_derivative(line: &[Complex64], period: f64) -> Vec<Complex64> {
    let n = line.len();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf = line.to_vec();
    forward.process(&mut buf);
    let base = 2.0 * std::f64::consts::PI / period;
    for (k, c) in buf.iter_mut().enumerate() {
        let wave = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        *c *= Complex64::new(0.0, base * wave);
    }
    inverse.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c * scale).collect()
}

/// Fourth-order central differences in the interior, second order on the two
/// nodes nearest each edge.
pub fn central_difference(line: &[Complex64], h: f64) -> Vec<Complex64> {
    let n = line.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n < 3 {
        return out;
    }
    for i in 0..n {
        out[i] = if i >= 2 && i + 2 < n {
            (line[i - 2] - line[i - 1] * 8.0 + line[i + 1] * 8.0 - line[i + 2]) / (12.0 * h)
        } else if i == 0 {
            (line[0] * -3.0 + line[1] * 4.0 - line[2]) / (2.0 * h)
        } else if i == n - 1 {
            (line[n - 1] * 3.0 - line[n - 2] * 4.0 + line[n - 3]) / (2.0 * h)
        } else {
            (line[i + 1] - line[i - 1]) / (2.0 * h)
        };
    }
    out
}

/// Complex amplitude `χ` sampled on a grid at time `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeGrid {
    pub layout: GridLayout,
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl AmplitudeGrid {
    pub fn new(layout: GridLayout, values: Vec<Complex64>, time: f64) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(KvnError::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self {
            layout,
            values,
            time,
        })
    }

    pub fn from_fn<F>(layout: GridLayout, time: f64, f: F) -> Self
    where
        F: Fn(usize) -> Complex64 + Sync + Send,
    {
        let values = layout.sample(f);
        Self {
            layout,
            values,
            time,
        }
    }

    /// `⟨χ|χ⟩ = Σ w |χ|²`.
    pub fn norm_sqr(&self) -> f64 {
        compensated_sum(
            self.values
                .iter()
                .enumerate()
                .map(|(k, v)| self.layout.weight(k) * v.norm_sqr()),
        )
    }

    /// `⟨self|other⟩ = Σ w conj(self)·other`.
    pub fn inner(&self, other: &AmplitudeGrid) -> Result<Complex64> {
        self.layout.ensure_same(&other.layout)?;
        Ok(compensated_complex_sum(
            self.values
                .iter()
                .zip(&other.values)
                .enumerate()
                .map(|(k, (a, b))| a.conj() * b * self.layout.weight(k)),
        ))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            time: self.time,
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &AmplitudeGrid, b: Complex64) -> Result<Self> {
        self.layout.ensure_same(&other.layout)?;
        Ok(Self {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            time: self.time,
        })
    }

    pub fn density(&self) -> DensityGrid {
        DensityGrid {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
            time: self.time,
            clamped: 0,
        }
    }
}

/// Real density `ρ` sampled on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub layout: GridLayout,
    pub values: Vec<f64>,
    pub time: f64,
    /// Number of slightly negative values clamped to zero during construction.
    pub clamped: usize,
}

impl DensityGrid {
    pub fn total(&self) -> f64 {
        self.layout.integrate_real(&self.values)
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        self.layout.integrate_real(&sq).sqrt()
    }

    /// `‖self − other‖₂ / ‖other‖₂` with the grid weights.
    pub fn relative_l2_error(&self, reference: &DensityGrid) -> Result<f64> {
        self.layout.ensure_same(&reference.layout)?;
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        let num = self.layout.integrate_real(&diff).sqrt();
        let den = reference.l2_norm();
        if den == 0.0 {
            return Err(KvnError::DegenerateState("reference density vanishes".into()));
        }
        Ok(num / den)
    }
}
