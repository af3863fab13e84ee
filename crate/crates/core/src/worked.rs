//! The two oscillator examples (a τ-H box and a shifted canonical ensemble),
//! their coefficients and norm bounds, exact transport oracles, and the
//! `Δτ·ΔH̃` uncertainty product.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::amplitude::{AmplitudeGrid, Coords, DensityGrid, GridLayout};
use crate::ensemble::EnergyProfile;
use crate::error::{KvnError, Result};
use crate::kvn::{apply_tilde_hamiltonian, Gauge};
use crate::model::{HamiltonianModel, PhaseSample, SystemKind, TauEnergyPoint, TauRange};
use crate::quadrature::{compensated_sum, integrate_panels, Axis, Spacing};
use crate::spectral::{expand, BasisFamily, SpectralExpansion};

fn oscillator_bounds(model: &HamiltonianModel) -> Result<(f64, f64)> {
    if model.kind != SystemKind::HarmonicOscillator {
        return Err(KvnError::Unsupported("worked examples need the harmonic oscillator".into()));
    }
    match model.tau_bounds() {
        TauRange::Bounded { lower, upper } => Ok((lower, upper)),
        TauRange::Unbounded => Err(KvnError::UnboundedTau),
    }
}

/// `τ − centre` wrapped into `(−T/2, T/2]`.
fn centred_offset(tau: f64, centre: f64, period: f64) -> f64 {
    let mut d = (tau - centre) % period;
    if d > 0.5 * period {
        d -= period;
    } else if d <= -0.5 * period {
        d += period;
    }
    d
}

/// Uniform density on `|τ − τ_i| ≤ Δτ/2` (periodically) and `|H − E_i| ≤ ΔE/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStateSpec {
    pub tau_center: f64,
    pub tau_width: f64,
    pub energy_center: f64,
    pub energy_width: f64,
}

impl BoxStateSpec {
    pub fn validate(&self, model: &HamiltonianModel) -> Result<()> {
        let (lower, upper) = oscillator_bounds(model)?;
        let period = upper - lower;
        let finite = [self.tau_center, self.tau_width, self.energy_center, self.energy_width]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(KvnError::SpecOutOfRange("box parameters must be finite".into()));
        }
        if !(self.tau_width > 0.0 && self.tau_width <= period * (1.0 + 1e-12)) {
            return Err(KvnError::SpecOutOfRange(format!(
                "tau width {} outside (0, {period}]",
                self.tau_width
            )));
        }
        if !(self.energy_width > 0.0) {
            return Err(KvnError::SpecOutOfRange(format!(
                "energy width {} must be positive",
                self.energy_width
            )));
        }
        if self.energy_center - 0.5 * self.energy_width < 0.0 {
            return Err(KvnError::SpecOutOfRange(format!(
                "energy shell reaches below zero: E_i = {}, dE = {}",
                self.energy_center, self.energy_width
            )));
        }
        Ok(())
    }

    pub fn profile(&self) -> EnergyProfile {
        EnergyProfile::MicrocanonicalShell {
            center: self.energy_center,
            width: self.energy_width,
        }
    }

    pub fn energy_range(&self) -> (f64, f64) {
        (
            self.energy_center - 0.5 * self.energy_width,
            self.energy_center + 0.5 * self.energy_width,
        )
    }

    fn in_tau(&self, tau: f64, period: f64) -> bool {
        self.tau_width >= period || centred_offset(tau, self.tau_center, period).abs() <= 0.5 * self.tau_width
    }

    /// `ρ(τ, H)` at `t = 0`.
    pub fn density(&self, model: &HamiltonianModel, te: TauEnergyPoint) -> f64 {
        let period = model.tau_period().unwrap_or(f64::INFINITY);
        let (lo, hi) = self.energy_range();
        if te.energy >= lo && te.energy <= hi && self.in_tau(te.tau, period) {
            1.0 / (self.tau_width * self.energy_width)
        } else {
            0.0
        }
    }

    fn density_at_phase(&self, model: &HamiltonianModel, pt: PhaseSample) -> Result<f64> {
        let energy = model.energy(pt);
        let (lo, hi) = self.energy_range();
        if energy < lo || energy > hi {
            return Ok(0.0);
        }
        match model.dynamical_time(pt) {
            Ok(te) => Ok(self.density(model, te)),
            Err(KvnError::OriginSingular) => {
                let period = model.tau_period().unwrap_or(f64::INFINITY);
                Ok(if self.tau_width >= period {
                    1.0 / (self.tau_width * self.energy_width)
                } else {
                    0.0
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Box edges wrapped into `[τ̲, τ̄)`.
    fn tau_edges(&self, lower: f64, period: f64) -> Vec<f64> {
        if self.tau_width >= period {
            return Vec::new();
        }
        [self.tau_center - 0.5 * self.tau_width, self.tau_center + 0.5 * self.tau_width]
            .iter()
            .map(|e| lower + (e - lower).rem_euclid(period))
            .collect()
    }
}

/// Closed-form `c_n = √(ω/(2πΔτ)) e^{−inωτ_i} (2/(nω)) sin(nωΔτ/2)`,
/// `c_0 = √(ωΔτ/2π)`.
pub fn box_coefficient(spec: &BoxStateSpec, model: &HamiltonianModel, n: i64) -> Complex64 {
    let w = model.omega;
    if n == 0 {
        return Complex64::new((w * spec.tau_width / (2.0 * PI)).sqrt(), 0.0);
    }
    let nf = n as f64;
    let amp = (w / (2.0 * PI * spec.tau_width)).sqrt() * 2.0 / (nf * w) * (0.5 * nf * w * spec.tau_width).sin();
    Complex64::from_polar(amp, -nf * w * spec.tau_center)
}

pub fn box_coefficients(spec: &BoxStateSpec, model: &HamiltonianModel, n_max: usize) -> Result<SpectralExpansion> {
    spec.validate(model)?;
    let n0 = n_max as i64;
    let values = (-n0..=n0).map(|n| box_coefficient(spec, model, n)).collect();
    SpectralExpansion::from_coefficients(*model, BasisFamily::Shared(spec.profile()), 0.0, 0.0, values)
}

/// `ωΔτ/2π + 2π/(3ωΔτ)`.
pub fn box_bound_rhs(spec: &BoxStateSpec, model: &HamiltonianModel) -> f64 {
    let x = model.omega * spec.tau_width;
    x / (2.0 * PI) + 2.0 * PI / (3.0 * x)
}

/// `χ(0) = √ρ(0)` on a `(τ,H)` grid whose τ panels break at the box edges, so
/// that Gauss–Legendre integrates every mode of the box exactly up to
/// rounding. `panels` equal panels per period, `per_panel` nodes each.
pub fn box_initial_grid(
    spec: &BoxStateSpec,
    model: &HamiltonianModel,
    panels: usize,
    per_panel: usize,
    energy_nodes: usize,
) -> Result<AmplitudeGrid> {
    spec.validate(model)?;
    let (lower, upper) = oscillator_bounds(model)?;
    let period = upper - lower;
    let mut breaks: Vec<f64> = (0..=panels).map(|k| lower + period * k as f64 / panels as f64).collect();
    breaks.extend(spec.tau_edges(lower, period));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * period);
    let tau_axis = Axis::composite_gauss_legendre(&breaks, per_panel);
    let (lo, hi) = spec.energy_range();
    let layout = GridLayout::new(Coords::TauEnergy, tau_axis, Axis::gauss_legendre(lo, hi, energy_nodes))?;
    let amp = 1.0 / (spec.tau_width * spec.energy_width).sqrt();
    Ok(AmplitudeGrid::from_fn(layout.clone(), 0.0, |k| {
        let (tau, _) = layout.node(k);
        if spec.in_tau(tau, period) {
            Complex64::new(amp, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// Canonical ensemble at inverse temperature `β`, shifted in `q` by `q_i`,
/// expanded in half-Boltzmann profiles of inverse temperature `β_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedCanonicalSpec {
    pub beta: f64,
    pub q_shift: f64,
    /// Defaults to `beta`.
    #[serde(default)]
    pub basis_beta: Option<f64>,
}

impl ShiftedCanonicalSpec {
    pub fn validate(&self, model: &HamiltonianModel) -> Result<()> {
        oscillator_bounds(model)?;
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(KvnError::SpecOutOfRange(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.basis_beta() > 0.0 && self.basis_beta().is_finite()) {
            return Err(KvnError::SpecOutOfRange(format!(
                "basis beta = {} must be positive",
                self.basis_beta()
            )));
        }
        if !self.q_shift.is_finite() {
            return Err(KvnError::SpecOutOfRange("q shift must be finite".into()));
        }
        Ok(())
    }

    pub fn basis_beta(&self) -> f64 {
        self.basis_beta.unwrap_or(self.beta)
    }

    /// `U_i = m ω² q_i² / 2`.
    pub fn u_shift(&self, model: &HamiltonianModel) -> f64 {
        0.5 * model.mass * model.omega * model.omega * self.q_shift * self.q_shift
    }

    /// Spec with `β U_i = x` and `β_n = β`.
    pub fn from_beta_u(model: &HamiltonianModel, beta: f64, x: f64) -> Self {
        Self {
            beta,
            q_shift: (2.0 * x / (beta * model.mass)).sqrt() / model.omega,
            basis_beta: None,
        }
    }

    pub fn profile(&self) -> EnergyProfile {
        EnergyProfile::CanonicalHalfBoltzmann { beta: self.basis_beta() }
    }

    /// `H(q − q_i, p) = H − 2√U_i sin(ωτ)√H + U_i` (with the sign of `q_i`).
    pub fn shifted_energy(&self, model: &HamiltonianModel, te: TauEnergyPoint) -> f64 {
        let su = self.q_shift.signum() * self.u_shift(model).sqrt();
        let h = te.energy.max(0.0);
        h - 2.0 * su * (model.omega * te.tau).sin() * h.sqrt() + self.u_shift(model)
    }

    /// `ρ(0) = (ωβ/2π) e^{−βH(q−q_i, p)}`.
    pub fn density(&self, model: &HamiltonianModel, te: TauEnergyPoint) -> f64 {
        model.omega * self.beta / (2.0 * PI) * (-self.beta * self.shifted_energy(model, te)).exp()
    }

    fn density_at_phase(&self, model: &HamiltonianModel, pt: PhaseSample) -> f64 {
        let shifted = PhaseSample::new(pt.q - self.q_shift, pt.p);
        model.omega * self.beta / (2.0 * PI) * (-self.beta * model.energy(shifted)).exp()
    }

    /// Energy cut beyond which both `ρ(0)` and `|f_n|²` fall below `1e−16`
    /// of their peaks.
    pub fn energy_cutoff(&self, model: &HamiltonianModel) -> f64 {
        let decades = 16.0 * std::f64::consts::LN_10;
        let s = (self.u_shift(model).sqrt() + (decades / self.beta).sqrt())
            .max((decades / self.basis_beta()).sqrt());
        s * s
    }
}

/// `χ(0) = √ρ(0)` on a `(τ,H)` grid: `n_tau` periodic τ nodes and Gauss–Legendre
/// in `√H` up to the cutoff.
pub fn shifted_initial_grid(
    spec: &ShiftedCanonicalSpec,
    model: &HamiltonianModel,
    n_tau: usize,
    energy_nodes: usize,
) -> Result<AmplitudeGrid> {
    spec.validate(model)?;
    let h_max = spec.energy_cutoff(model);
    let layout = GridLayout::tau_energy(model, n_tau, Axis::gauss_legendre_sqrt(0.0, h_max, energy_nodes))?;
    Ok(AmplitudeGrid::from_fn(layout.clone(), 0.0, |k| {
        let (tau, h) = layout.node(k);
        Complex64::new(spec.density(model, TauEnergyPoint::new(tau, h)).sqrt(), 0.0)
    }))
}

/// Which algebraic form of the shifted-ensemble coefficients to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftedFormula {
    /// Uncorrected: the even-`n` integrand has no `cos(nφ)` factor.
    Transcribed,
    /// Even-`n` integrand carries `cos(nφ)`, as the derivation requires.
    Corrected,
}

/// 1D-quadrature evaluation of the erf-integral forms of `c_n`, with
/// `φ = ωτ − π/2` and `1/b_n = β√U_i / √(2(β+β_n))`.
pub fn shifted_formula_coefficient(
    spec: &ShiftedCanonicalSpec,
    model: &HamiltonianModel,
    n: i64,
    formula: ShiftedFormula,
) -> Complex64 {
    let beta = spec.beta;
    let bn = spec.basis_beta();
    let u = spec.u_shift(model);
    let inv_b = beta * u.sqrt() / (2.0 * (beta + bn)).sqrt();
    let pre = 4.0 / PI.sqrt() * (beta * bn).sqrt() / (beta + bn) * (-0.5 * beta * u).exp();
    let nf = n as f64;
    let core = |phi: f64| {
        let x = phi.cos() * inv_b;
        x * (x * x).exp()
    };
    let c = if n % 2 == 0 {
        let delta = if n == 0 { 0.5 * PI.sqrt() } else { 0.0 };
        let integral = integrate_panels(
            |phi| {
                let x = phi.cos() * inv_b;
                let weight = match formula {
                    ShiftedFormula::Transcribed => 1.0,
                    ShiftedFormula::Corrected => (nf * phi).cos(),
                };
                weight * core(phi) * erf(x)
            },
            0.0,
            0.5 * PI,
            32,
            16,
        );
        let sign = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(pre * (delta + sign * integral), 0.0)
    } else {
        let integral = integrate_panels(|phi| (nf * phi).cos() * core(phi), 0.0, 0.5 * PI, 32, 16);
        let sign = if ((n + 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(0.0, pre * sign * integral)
    };
    // a negative shift moves the ensemble by half a period: c_n → (−1)^n c_n
    if spec.q_shift < 0.0 && n % 2 != 0 {
        -c
    } else {
        c
    }
}

/// Shifted-ensemble coefficients with their cross-checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedCoefficients {
    /// Direct 2D quadrature of `⟨χ_n(0)|χ(0)⟩`; the reference values.
    pub expansion: SpectralExpansion,
    pub transcribed: Vec<Complex64>,
    pub corrected: Vec<Complex64>,
    /// Modes where the uncorrected formula departs from the quadrature by more
    /// than [`FORMULA_FLAG_TOL`].
    pub transcribed_flags: Vec<i64>,
    pub corrected_flags: Vec<i64>,
}

pub const FORMULA_FLAG_TOL: f64 = 1e-6;

/// τ nodes and `√H` Gauss–Legendre nodes for the shifted-ensemble quadrature grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGrid {
    pub n_tau: usize,
    pub energy_nodes: usize,
}

impl ShiftedGrid {
    pub fn for_window(n_max: usize) -> Self {
        Self {
            n_tau: (8 * n_max).max(256).next_multiple_of(2),
            energy_nodes: 96,
        }
    }
}

pub fn shifted_canonical_coefficients(
    spec: &ShiftedCanonicalSpec,
    model: &HamiltonianModel,
    n_max: usize,
    grid: ShiftedGrid,
) -> Result<ShiftedCoefficients> {
    if n_max < 1 {
        return Err(KvnError::SpecOutOfRange("window must include |n| = 1".into()));
    }
    let initial = shifted_initial_grid(spec, model, grid.n_tau, grid.energy_nodes)?;
    let expansion = expand(model, &initial, &BasisFamily::Shared(spec.profile()), n_max)?;
    let n0 = n_max as i64;
    let transcribed: Vec<Complex64> = (-n0..=n0)
        .map(|n| shifted_formula_coefficient(spec, model, n, ShiftedFormula::Transcribed))
        .collect();
    let corrected: Vec<Complex64> = (-n0..=n0)
        .map(|n| shifted_formula_coefficient(spec, model, n, ShiftedFormula::Corrected))
        .collect();
    let flags = |vals: &[Complex64]| {
        vals.iter()
            .zip(&expansion.coefficients)
            .filter(|(v, c)| (*v - c.value()).norm() > FORMULA_FLAG_TOL)
            .map(|(_, c)| c.n)
            .collect::<Vec<_>>()
    };
    Ok(ShiftedCoefficients {
        transcribed_flags: flags(&transcribed),
        corrected_flags: flags(&corrected),
        expansion,
        transcribed,
        corrected,
    })
}

/// Right-hand side of the shifted-ensemble norm bound (valid for `β_n = β`), with
/// `x = βU_i`.
pub fn shifted_bound_rhs(x: f64) -> f64 {
    let e = erf(0.5 * x.sqrt());
    let first = (-0.25 * x).exp() / x.sqrt() + 0.5 * PI.sqrt() * e;
    x * (-0.5 * x).exp() * (first * first + 0.25 * PI * (1.0 + e / 3.0))
}

/// Either example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExampleSpec {
    Box(BoxStateSpec),
    ShiftedCanonical(ShiftedCanonicalSpec),
}

impl ExampleSpec {
    pub fn validate(&self, model: &HamiltonianModel) -> Result<()> {
        match self {
            ExampleSpec::Box(s) => s.validate(model),
            ExampleSpec::ShiftedCanonical(s) => s.validate(model),
        }
    }

    pub fn profile(&self) -> EnergyProfile {
        match self {
            ExampleSpec::Box(s) => s.profile(),
            ExampleSpec::ShiftedCanonical(s) => s.profile(),
        }
    }

    /// Norm bound RHS where one is known.
    pub fn bound_rhs(&self, model: &HamiltonianModel) -> Option<f64> {
        match self {
            ExampleSpec::Box(s) => Some(box_bound_rhs(s, model)),
            ExampleSpec::ShiftedCanonical(s) if s.basis_beta() == s.beta => {
                Some(shifted_bound_rhs(s.beta * s.u_shift(model)))
            }
            ExampleSpec::ShiftedCanonical(_) => None,
        }
    }

    /// `ρ(0)` at a phase-space point.
    pub fn initial_density(&self, model: &HamiltonianModel, pt: PhaseSample) -> Result<f64> {
        match self {
            ExampleSpec::Box(s) => s.density_at_phase(model, pt),
            ExampleSpec::ShiftedCanonical(s) => Ok(s.density_at_phase(model, pt)),
        }
    }

    /// `ρ(0)` at a `(τ,H)` point.
    pub fn initial_density_tau(&self, model: &HamiltonianModel, te: TauEnergyPoint) -> f64 {
        match self {
            ExampleSpec::Box(s) => s.density(model, te),
            ExampleSpec::ShiftedCanonical(s) => s.density(model, te),
        }
    }
}

/// Exact `ρ(·, t) = ρ(flow(·, −t), 0)`.
pub fn oracle_density(
    spec: &ExampleSpec,
    model: &HamiltonianModel,
    t_requested: f64,
    layout: &GridLayout,
) -> Result<DensityGrid> {
    spec.validate(model)?;
    // whole periods are dropped so that a full revival reproduces t = 0 exactly
    let t = model.tau_period().map_or(t_requested, |period| t_requested.rem_euclid(period));
    let values: Vec<Result<f64>> = layout.sample(|k| {
        let (a, b) = layout.node(k);
        match layout.coords {
            Coords::PhaseSpace => {
                let back = model.flow(PhaseSample::new(a, b), -t)?;
                spec.initial_density(model, back)
            }
            Coords::TauEnergy => Ok(spec.initial_density_tau(model, TauEnergyPoint::new(model.wrap_tau(a - t), b))),
        }
    });
    Ok(DensityGrid {
        layout: layout.clone(),
        values: values.into_iter().collect::<Result<_>>()?,
        time: t_requested,
        clamped: 0,
    })
}

/// `Δτ`, `ΔH̃` and their product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// Standard deviation of the τ-marginal on the period window whose cut
    /// minimizes it.
    #[serde(rename = "dtau")]
    pub delta_tau: f64,
    #[serde(rename = "deps")]
    pub delta_eps: f64,
    pub product: f64,
    /// `ħ/2`.
    pub bound: f64,
    /// Circular standard deviation `√(−2 ln R)/ω`; absent when `R = 0`.
    pub delta_tau_circular: Option<f64>,
    pub product_circular: Option<f64>,
    /// Window start minimizing the linear variance.
    pub cut: f64,
    /// `(ħ/2)|1 − T p(cut)|`, the commutator bound with the boundary term of
    /// the periodic window kept.
    pub periodic_bound: f64,
}

impl UncertaintyReport {
    pub fn satisfies_bound(&self, slack: f64) -> bool {
        self.product >= self.bound - slack
    }
}

/// Linear variance of a trigonometric-polynomial density on `[c, c + T]`,
/// from closed-form moments. `a[k + K]` is the coefficient of `e^{ikωτ}`.
struct TrigDensity {
    coeffs: Vec<Complex64>,
    omega: f64,
    period: f64,
}

impl TrigDensity {
    fn order(&self) -> i64 {
        (self.coeffs.len() / 2) as i64
    }

    fn mass(&self) -> f64 {
        self.period * self.coeffs[self.order() as usize].re
    }

    fn value(&self, tau: f64) -> f64 {
        let k0 = self.order();
        compensated_sum(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| (a * Complex64::from_polar(1.0, (i as i64 - k0) as f64 * self.omega * tau)).re),
        )
    }

    fn variance(&self, c: f64) -> f64 {
        let t = self.period;
        let k0 = self.order();
        let mut m1 = Complex64::new(0.0, 0.0);
        let mut m2 = Complex64::new(0.0, 0.0);
        for (i, a) in self.coeffs.iter().enumerate() {
            let k = i as i64 - k0;
            if k == 0 {
                m1 += a * (0.5 * t * t);
                m2 += a * (t * t * t / 3.0);
            } else {
                let kappa = k as f64 * self.omega;
                let rot = a * Complex64::from_polar(1.0, kappa * c);
                m1 += rot * Complex64::new(0.0, -t / kappa);
                m2 += rot * Complex64::new(2.0 * t / (kappa * kappa), -t * t / kappa);
            }
        }
        let m0 = self.mass();
        let mean = m1.re / m0;
        (m2.re / m0 - mean * mean).max(0.0)
    }

    /// `(c*, Var(c*))` minimizing over the window start.
    fn min_variance(&self, lower: f64) -> (f64, f64) {
        let scan = (64 * (2 * self.order() as usize + 1)).max(1024);
        let h = self.period / scan as f64;
        let (mut best_c, mut best) = (lower, self.variance(lower));
        for k in 1..scan {
            let c = lower + k as f64 * h;
            let v = self.variance(c);
            if v < best {
                best = v;
                best_c = c;
            }
        }
        // golden-section refinement inside the bracketing cells
        let (mut a, mut b) = (best_c - h, best_c + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (self.variance(x1), self.variance(x2));
        for _ in 0..80 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = self.variance(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = self.variance(x2);
            }
        }
        let (c, v) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
        if v < best {
            (c, v)
        } else {
            (best_c, best)
        }
    }
}

fn spectral_tau_density(expansion: &SpectralExpansion) -> Result<TrigDensity> {
    let model = &expansion.model;
    let period = model.tau_period().ok_or(KvnError::UnboundedTau)?;
    let n0 = expansion.n_max as i64;
    let w = 2.0 * PI / period;
    let c = expansion.values();
    let shared = matches!(expansion.profile, BasisFamily::Shared(_));
    // a_k = (1/T) Σ_n c_n* c_{n+k} O_{n,n+k} e^{−ikωt}
    let coeffs = (-2 * n0..=2 * n0)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in -n0..=n0 {
                let m = n + k;
                if m < -n0 || m > n0 {
                    continue;
                }
                let (cn, cm) = (c[(n + n0) as usize], c[(m + n0) as usize]);
                if cn.norm_sqr() == 0.0 || cm.norm_sqr() == 0.0 {
                    continue;
                }
                let overlap = if shared {
                    Complex64::new(1.0, 0.0)
                } else {
                    expansion
                        .profile
                        .profile(n, expansion.n_max)
                        .overlap(expansion.profile.profile(m, expansion.n_max), period)
                };
                acc += cn.conj() * cm * overlap;
            }
            acc / period * Complex64::from_polar(1.0, -(k as f64) * w * (expansion.time - 0.0))
        })
        .collect();
    Ok(TrigDensity {
        coeffs,
        omega: w,
        period,
    })
}

/// Uncertainty product of a spectral state at its current time.
pub fn uncertainty_product(expansion: &SpectralExpansion) -> Result<UncertaintyReport> {
    let model = &expansion.model;
    let (lower, _) = oscillator_bounds(model)?;
    let total = expansion.completeness;
    if !(total > 0.0) {
        return Err(KvnError::DegenerateState("state has zero norm".into()));
    }
    let eps: Vec<f64> = expansion
        .coefficients
        .iter()
        .map(|c| expansion.epsilon(c.n))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = expansion.coefficients.iter().map(|c| c.value().norm_sqr() / total).collect();
    let mean = compensated_sum(eps.iter().zip(&weights).map(|(e, w)| e * w));
    let var = compensated_sum(eps.iter().zip(&weights).map(|(e, w)| w * (e - mean) * (e - mean)));
    let delta_eps = var.max(0.0).sqrt();

    let density = spectral_tau_density(expansion)?;
    let (cut, tau_var) = density.min_variance(lower);
    let delta_tau = tau_var.sqrt();
    let order = density.order();
    let r = if order >= 1 {
        density.coeffs[(order - 1) as usize].norm() / density.coeffs[order as usize].re
    } else {
        0.0
    };
    let circular = (r > 0.0).then(|| (-2.0 * r.min(1.0).ln()).sqrt() / model.omega);
    let hbar = model.hbar;
    let p_cut = density.value(cut) / density.mass();
    Ok(UncertaintyReport {
        delta_tau,
        delta_eps,
        product: delta_tau * delta_eps,
        bound: 0.5 * hbar,
        delta_tau_circular: circular,
        product_circular: circular.map(|c| c * delta_eps),
        cut,
        periodic_bound: 0.5 * hbar * (1.0 - density.period * p_cut).abs(),
    })
}

/// Uncertainty product of a grid state on a `(τ,H)` grid with a periodic τ
/// axis, with `ΔH̃` from `⟨H̃⟩` and `‖H̃χ‖²` in the zero gauge.
pub fn grid_uncertainty_product(model: &HamiltonianModel, chi: &AmplitudeGrid) -> Result<UncertaintyReport> {
    let (lower, _) = oscillator_bounds(model)?;
    let layout = &chi.layout;
    let period = match (layout.coords, &layout.axis1.spacing) {
        (Coords::TauEnergy, Spacing::Periodic { period }) => *period,
        _ => {
            return Err(KvnError::Unsupported(
                "grid uncertainty needs a (tau, H) grid with a periodic tau axis".into(),
            ))
        }
    };
    let norm = chi.norm_sqr();
    if !(norm > 0.0) {
        return Err(KvnError::DegenerateState("state has zero norm".into()));
    }
    let h_chi = apply_tilde_hamiltonian(model, &Gauge::Zero, chi)?;
    let mean = chi.inner(&h_chi)?.re / norm;
    let second = h_chi.norm_sqr() / norm;
    let delta_eps = (second - mean * mean).max(0.0).sqrt();

    let (n1, n2) = (layout.n1(), layout.n2());
    let mass: Vec<f64> = (0..n1)
        .map(|i| {
            layout.axis1.weights[i]
                * compensated_sum((0..n2).map(|j| layout.axis2.weights[j] * chi.values[i * n2 + j].norm_sqr()))
                / norm
        })
        .collect();
    if mass.iter().filter(|m| **m > 0.0).count() <= 1 {
        return Err(KvnError::DegenerateState("tau marginal is supported on a single node".into()));
    }
    let taus = &layout.axis1.nodes;
    // rotate the cut through every node: O(n) updates of the first two moments
    let mut m1 = compensated_sum(mass.iter().zip(taus).map(|(m, t)| m * t));
    let mut m2 = compensated_sum(mass.iter().zip(taus).map(|(m, t)| m * t * t));
    let mut best = (m2 - m1 * m1, 0usize);
    for k in 0..n1 - 1 {
        let (x, m) = (taus[k], mass[k]);
        m1 += m * period;
        m2 += m * ((x + period) * (x + period) - x * x);
        let v = m2 - m1 * m1;
        if v < best.0 {
            best = (v, k + 1);
        }
    }
    let delta_tau = best.0.max(0.0).sqrt();
    let resultant = compensated_sum(mass.iter().zip(taus).map(|(m, t)| m * (model.omega * t).cos())).hypot(
        compensated_sum(mass.iter().zip(taus).map(|(m, t)| m * (model.omega * t).sin())),
    );
    let circular = (resultant > 0.0).then(|| (-2.0 * resultant.min(1.0).ln()).sqrt() / model.omega);
    let cut_index = best.1;
    let h = period / n1 as f64;
    let p_cut = mass[cut_index] / h;
    let cut = if cut_index == 0 { lower } else { taus[cut_index] };
    Ok(UncertaintyReport {
        delta_tau,
        delta_eps,
        product: delta_tau * delta_eps,
        bound: 0.5 * model.hbar,
        delta_tau_circular: circular,
        product_circular: circular.map(|c| c * delta_eps),
        cut,
        periodic_bound: 0.5 * model.hbar * (1.0 - period * p_cut).abs(),
    })
}
