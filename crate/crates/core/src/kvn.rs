//! Gauged KvN dynamics: the tilde-Hamiltonian `H̃ = iħ{H,·} + α`, the
//! residual of `iħ ∂ₜχ = H̃χ`, gauge transformations and the Hermiticity
//! defect `⟨a|H̃b⟩ − ⟨H̃a|b⟩`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplitude::{AmplitudeGrid, Coords};
use crate::error::{KvnError, Result};
use crate::model::HamiltonianModel;
use crate::quadrature::compensated_sum;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// The real function `α(q,p)` in the gauged KvN equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Gauge {
    Zero,
    ConstantEpsilon(f64),
    /// `α` sampled at every node of the grid it is applied on.
    Custom(Vec<f64>),
}

impl Gauge {
    /// Builds a sampled gauge from complex samples, rejecting any with an
    /// imaginary part above `tol`.
    pub fn custom_from_complex(samples: &[Complex64], tol: f64) -> Result<Self> {
        if let Some((k, z)) = samples
            .iter()
            .enumerate()
            .find(|(_, z)| !(z.im.abs() <= tol && z.re.is_finite()))
        {
            return Err(KvnError::NonRealGauge(format!("node {k} has alpha = {z}")));
        }
        Ok(Gauge::Custom(samples.iter().map(|z| z.re).collect()))
    }

    fn value_at(&self, idx: usize) -> f64 {
        match self {
            Gauge::Zero => 0.0,
            Gauge::ConstantEpsilon(e) => *e,
            Gauge::Custom(v) => v[idx],
        }
    }

    fn check(&self, nodes: usize) -> Result<()> {
        match self {
            Gauge::Zero => Ok(()),
            Gauge::ConstantEpsilon(e) if e.is_finite() => Ok(()),
            Gauge::ConstantEpsilon(e) => Err(KvnError::NonRealGauge(format!("alpha = {e}"))),
            Gauge::Custom(v) => {
                if v.len() != nodes {
                    return Err(KvnError::GridMismatch(format!(
                        "gauge has {} samples for {} nodes",
                        v.len(),
                        nodes
                    )));
                }
                if let Some(k) = v.iter().position(|a| !a.is_finite()) {
                    return Err(KvnError::NonRealGauge(format!("node {k} is not finite")));
                }
                Ok(())
            }
        }
    }

    /// `α − shift`, collapsing a vanishing constant to [`Gauge::Zero`].
    fn shifted(&self, shift: f64) -> Gauge {
        if shift == 0.0 {
            return self.clone();
        }
        match self {
            Gauge::Zero => Gauge::ConstantEpsilon(-shift),
            Gauge::ConstantEpsilon(e) => {
                let v = e - shift;
                if v == 0.0 {
                    Gauge::Zero
                } else {
                    Gauge::ConstantEpsilon(v)
                }
            }
            Gauge::Custom(v) => Gauge::Custom(v.iter().map(|a| a - shift).collect()),
        }
    }
}

/// Phase `φ` of a gauge transformation `χ → χ e^{iφ/ħ}`, `α → α − Dφ` with
/// `D = ∂ₜ − {H,·}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GaugePhase {
    /// `φ = φ₀`, so `Dφ = 0`.
    Constant(f64),
    /// `φ = ετ`; since `Dτ = 1`, `Dφ = ε`.
    EpsilonTau(f64),
}

impl GaugePhase {
    pub fn d_phase(&self) -> f64 {
        match *self {
            GaugePhase::Constant(_) => 0.0,
            GaugePhase::EpsilonTau(e) => e,
        }
    }
}

/// `{H, χ}` on the grid: `−∂τχ` in `(τ,H)` coordinates, `∂qH ∂pχ − ∂qχ ∂pH`
/// in `(q,p)` coordinates.
pub fn poisson_with_hamiltonian(
    model: &HamiltonianModel,
    chi: &AmplitudeGrid,
) -> Result<Vec<Complex64>> {
    let layout = &chi.layout;
    match layout.coords {
        Coords::TauEnergy => Ok(layout
            .derivative_axis1(&chi.values)?
            .into_iter()
            .map(|d| -d)
            .collect()),
        Coords::PhaseSpace => {
            let dq = layout.derivative_axis1(&chi.values)?;
            let dp = layout.derivative_axis2(&chi.values)?;
            Ok(layout.sample(|k| {
                let (q, p) = layout.node(k);
                dp[k] * model.dh_dq(q) - dq[k] * model.dh_dp(p)
            }))
        }
    }
}

/// `H̃χ = iħ{H,χ} + αχ`.
pub fn apply_tilde_hamiltonian(
    model: &HamiltonianModel,
    gauge: &Gauge,
    chi: &AmplitudeGrid,
) -> Result<AmplitudeGrid> {
    gauge.check(chi.layout.len())?;
    let bracket = poisson_with_hamiltonian(model, chi)?;
    let ihbar = I * model.hbar;
    let values = chi
        .values
        .iter()
        .zip(&bracket)
        .enumerate()
        .map(|(k, (v, b))| ihbar * b + v * gauge.value_at(k))
        .collect();
    AmplitudeGrid::new(chi.layout.clone(), values, chi.time)
}

/// Weighted L2 norm of `iħ ∂ₜχ − H̃χ` at the middle slice of a trajectory,
/// with `∂ₜ` taken by central differences between the neighbouring slices.
pub fn kvn_residual(
    model: &HamiltonianModel,
    gauge: &Gauge,
    trajectory: &[AmplitudeGrid],
) -> Result<f64> {
    if trajectory.len() < 3 {
        return Err(KvnError::InsufficientSlices(trajectory.len()));
    }
    let mid = trajectory.len() / 2;
    let (before, centre, after) = (&trajectory[mid - 1], &trajectory[mid], &trajectory[mid + 1]);
    centre.layout.ensure_same(&before.layout)?;
    centre.layout.ensure_same(&after.layout)?;
    let span = after.time - before.time;
    if !(span > 0.0) {
        return Err(KvnError::InsufficientSlices(trajectory.len()));
    }
    let h_chi = apply_tilde_hamiltonian(model, gauge, centre)?;
    let ihbar = I * model.hbar;
    let layout = &centre.layout;
    Ok(compensated_sum((0..layout.len()).map(|k| {
        let dt = (after.values[k] - before.values[k]) / span;
        layout.weight(k) * (ihbar * dt - h_chi.values[k]).norm_sqr()
    }))
    .sqrt())
}

/// Applies `χ → χ e^{iφ/ħ}`, `α → α − Dφ`.
pub fn gauge_transform(
    chi: &AmplitudeGrid,
    gauge: &Gauge,
    phase: GaugePhase,
    model: &HamiltonianModel,
) -> Result<(AmplitudeGrid, Gauge)> {
    gauge.check(chi.layout.len())?;
    let values = match phase {
        GaugePhase::Constant(phi0) => {
            let rot = Complex64::from_polar(1.0, phi0 / model.hbar);
            chi.values.iter().map(|v| v * rot).collect()
        }
        GaugePhase::EpsilonTau(eps) => {
            let layout = &chi.layout;
            let taus: Vec<Result<f64>> = layout.sample(|k| Ok(layout.tau_energy_at(model, k)?.tau));
            taus.into_iter()
                .zip(&chi.values)
                .map(|(tau, v)| Ok(v * Complex64::from_polar(1.0, eps * tau? / model.hbar)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok((
        AmplitudeGrid::new(chi.layout.clone(), values, chi.time)?,
        gauge.shifted(phase.d_phase()),
    ))
}

/// `⟨a|H̃b⟩ − ⟨H̃a|b⟩`; by integration by parts this equals
/// `iħ ∫ {H, a* b} dΩ`, a pure boundary term.
pub fn hermiticity_defect(
    model: &HamiltonianModel,
    gauge: &Gauge,
    chi_a: &AmplitudeGrid,
    chi_b: &AmplitudeGrid,
) -> Result<Complex64> {
    chi_a.layout.ensure_same(&chi_b.layout)?;
    let ha = apply_tilde_hamiltonian(model, gauge, chi_a)?;
    let hb = apply_tilde_hamiltonian(model, gauge, chi_b)?;
    Ok(chi_a.inner(&hb)? - ha.inner(chi_b)?)
}

/// Transforms every slice of a trajectory with the same time-independent phase.
pub fn gauge_transform_trajectory(
    trajectory: &[AmplitudeGrid],
    gauge: &Gauge,
    phase: GaugePhase,
    model: &HamiltonianModel,
) -> Result<(Vec<AmplitudeGrid>, Gauge)> {
    let mut out = Vec::with_capacity(trajectory.len());
    let mut new_gauge = gauge.clone();
    for slice in trajectory {
        let (g, a) = gauge_transform(slice, gauge, phase, model)?;
        out.push(g);
        new_gauge = a;
    }
    Ok((out, new_gauge))
}
