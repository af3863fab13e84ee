//! The discrete eigenbasis `χ_n = f_n(H) e^{iε_n(τ−t)/ħ}` on a bounded τ
//! range, inner products, expansion of grid states, exact evolution and
//! reconstruction of the Liouville density.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitude::{AmplitudeGrid, Coords, DensityGrid, GridLayout};
use crate::ensemble::{stationary_state_with_offset, EnergyProfile, StationaryState};
use crate::error::{KvnError, Result};
use crate::kvn::poisson_with_hamiltonian;
use crate::model::{HamiltonianModel, PhaseSample, TauEnergyPoint};
use crate::quadrature::{compensated_complex_sum, compensated_sum};

/// Minimum τ nodes per oscillation of the highest mode for quadrature
/// inner products.
pub const NODES_PER_OSCILLATION: usize = 8;
/// Densities above this negative floor are clamped to zero.
pub const CLAMP_FLOOR: f64 = -1e-12;
/// Auto truncation stops once doubling `N` gains less completeness than this.
pub const AUTO_GAIN: f64 = 1e-4;
pub const AUTO_START: usize = 4;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `ε_n = 2πħn/(τ̄ − τ̲) + ε₀` for `n = −N..=N`.
pub fn select_spectrum(model: &HamiltonianModel, epsilon0: f64, n_max: usize) -> Result<Vec<f64>> {
    let spacing = model.level_spacing()?;
    let n = n_max as i64;
    Ok((-n..=n).map(|k| k as f64 * spacing + epsilon0).collect())
}

/// Either operand of an inner product.
#[derive(Clone, Copy, Debug)]
pub enum Ket<'a> {
    Grid(&'a AmplitudeGrid),
    Stationary(&'a StationaryState),
}

/// `(1/T) ∫ e^{iΔτ} dτ` over `[τ̲, τ̄]`.
fn tau_mean(delta: f64, lower: f64, upper: f64) -> Complex64 {
    let half = 0.5 * delta * (upper - lower);
    if half == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(half.sin() / half, 0.5 * delta * (upper + lower))
}

/// `⟨a|b⟩` for two structural states, with the τ integral done exactly.
/// Lattice modes of one profile give exactly `0` or `1`.
pub fn stationary_inner(
    model: &HamiltonianModel,
    a: &StationaryState,
    b: &StationaryState,
) -> Result<Complex64> {
    let (lower, upper) = match model.tau_bounds() {
        crate::model::TauRange::Bounded { lower, upper } => (lower, upper),
        crate::model::TauRange::Unbounded => return Err(KvnError::UnboundedTau),
    };
    if a.period != b.period || a.period != upper - lower {
        return Err(KvnError::GridMismatch(
            "stationary states built for different tau periods".into(),
        ));
    }
    if let (Some(m), Some(n)) = (a.mode, b.mode) {
        // same offset ε₀ on both sides: distinct lattice modes are orthogonal
        let s = model.level_spacing()?;
        let (oa, ob) = (a.epsilon - m as f64 * s, b.epsilon - n as f64 * s);
        if m != n && (oa - ob).abs() <= 1e-12 * (oa.abs() + ob.abs() + s) {
            return Ok(ZERO);
        }
    }
    let h = model.hbar;
    let delta = (b.epsilon - a.epsilon) / h;
    if delta == 0.0 && a.time == b.time && a.profile == b.profile {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let time_phase = Complex64::from_polar(1.0, (a.epsilon * a.time - b.epsilon * b.time) / h);
    let tau = tau_mean(delta, lower, upper);
    Ok(a.profile.overlap(&b.profile, a.period) * tau * time_phase)
}

/// Per-node `(τ, H)` coordinates of a layout; `None` at the oscillator origin.
fn node_coordinates(model: &HamiltonianModel, layout: &GridLayout) -> Result<Vec<Option<TauEnergyPoint>>> {
    let pts: Vec<Result<Option<TauEnergyPoint>>> = layout.sample(|k| match layout.coords {
        Coords::TauEnergy => {
            let (tau, h) = layout.node(k);
            Ok(Some(TauEnergyPoint::new(tau, h)))
        }
        Coords::PhaseSpace => {
            let (q, p) = layout.node(k);
            match model.dynamical_time(PhaseSample::new(q, p)) {
                Ok(te) => Ok(Some(te)),
                Err(KvnError::OriginSingular) => Ok(None),
                Err(e) => Err(e),
            }
        }
    });
    pts.into_iter().collect()
}

/// `χ(node)` given precomputed coordinates.
fn state_at(model: &HamiltonianModel, state: &StationaryState, te: Option<TauEnergyPoint>) -> Result<Complex64> {
    match te {
        Some(te) => Ok(state.value(model, te)),
        None => state.value_at_phase(model, PhaseSample::new(0.0, 0.0)),
    }
}

/// Highest lattice index `|n|` a τ axis of `n_tau` nodes resolves at
/// [`NODES_PER_OSCILLATION`] nodes per oscillation.
pub fn resolvable_modes(n_tau: usize) -> usize {
    n_tau / NODES_PER_OSCILLATION
}

fn check_resolution(model: &HamiltonianModel, layout: &GridLayout, epsilon_max: f64) -> Result<()> {
    if layout.coords != Coords::TauEnergy {
        return Ok(());
    }
    let spacing = model.level_spacing()?;
    let oscillations = (epsilon_max.abs() / spacing).ceil() as usize;
    let needed = NODES_PER_OSCILLATION * oscillations;
    if layout.n1() < needed {
        return Err(KvnError::UnderResolved(format!(
            "{} tau nodes for {} oscillations per period; need at least {}",
            layout.n1(),
            oscillations,
            needed
        )));
    }
    Ok(())
}

pub fn inner_product(model: &HamiltonianModel, a: Ket<'_>, b: Ket<'_>) -> Result<Complex64> {
    match (a, b) {
        (Ket::Stationary(x), Ket::Stationary(y)) => stationary_inner(model, x, y),
        (Ket::Grid(x), Ket::Grid(y)) => x.inner(y),
        (Ket::Stationary(s), Ket::Grid(g)) => stationary_grid_inner(model, s, g),
        (Ket::Grid(g), Ket::Stationary(s)) => Ok(stationary_grid_inner(model, s, g)?.conj()),
    }
}

/// `⟨s|g⟩` by quadrature on the grid of `g`.
fn stationary_grid_inner(model: &HamiltonianModel, s: &StationaryState, g: &AmplitudeGrid) -> Result<Complex64> {
    check_resolution(model, &g.layout, s.epsilon)?;
    s.sample(model, &g.layout)?.inner(g)
}

/// Energy profiles of the basis: one shared `f`, or one `f_n` per mode
/// (listed for `n = −N..=N`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "profiles", rename_all = "snake_case")]
pub enum BasisFamily {
    Shared(EnergyProfile),
    PerMode(Vec<EnergyProfile>),
}

impl BasisFamily {
    pub fn profile(&self, n: i64, n_max: usize) -> &EnergyProfile {
        match self {
            BasisFamily::Shared(p) => p,
            BasisFamily::PerMode(ps) => &ps[(n + n_max as i64) as usize],
        }
    }

    /// Every profile must be admissible for the model; per-mode families must
    /// list exactly `2N+1` profiles.
    pub fn validate(&self, model: &HamiltonianModel, n_max: usize) -> Result<()> {
        match self {
            BasisFamily::Shared(p) => p.validate(model),
            BasisFamily::PerMode(ps) => {
                if ps.len() != 2 * n_max + 1 {
                    return Err(KvnError::NonOrthonormalFamily(format!(
                        "{} profiles listed for {} modes",
                        ps.len(),
                        2 * n_max + 1
                    )));
                }
                // profiles are normalized by construction, and distinct
                // modes are orthogonal through their τ factor alone
                ps.iter().try_for_each(|p| p.validate(model))
            }
        }
    }

    pub fn basis_state(
        &self,
        model: &HamiltonianModel,
        n: i64,
        n_max: usize,
        epsilon0: f64,
        t: f64,
    ) -> Result<StationaryState> {
        stationary_state_with_offset(model, self.profile(n, n_max).clone(), n, epsilon0, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub n: i64,
    pub re: f64,
    pub im: f64,
}

impl Coefficient {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// Coefficients `c_n = ⟨χ_n(t₀)|χ(t₀)⟩` for `n = −N..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralExpansion {
    pub model: HamiltonianModel,
    pub epsilon0: f64,
    #[serde(rename = "N")]
    pub n_max: usize,
    pub profile: BasisFamily,
    pub coefficients: Vec<Coefficient>,
    pub completeness: f64,
    /// Time at which the coefficients were taken.
    #[serde(default)]
    pub t0: f64,
    /// Time the expansion has been evolved to.
    #[serde(default)]
    pub time: f64,
}

impl SpectralExpansion {
    pub fn from_coefficients(
        model: HamiltonianModel,
        family: BasisFamily,
        epsilon0: f64,
        t0: f64,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len().is_multiple_of(2) {
            return Err(KvnError::InvalidModel(format!(
                "{} coefficients do not form a symmetric window",
                values.len()
            )));
        }
        let n_max = values.len() / 2;
        family.validate(&model, n_max)?;
        let n0 = n_max as i64;
        let coefficients: Vec<Coefficient> = values
            .iter()
            .enumerate()
            .map(|(k, c)| Coefficient {
                n: k as i64 - n0,
                re: c.re,
                im: c.im,
            })
            .collect();
        let completeness = compensated_sum(values.iter().map(|c| c.norm_sqr()));
        Ok(Self {
            model,
            epsilon0,
            n_max,
            profile: family,
            coefficients,
            completeness,
            t0,
            time: t0,
        })
    }

    pub fn coefficient(&self, n: i64) -> Complex64 {
        let k = n + self.n_max as i64;
        if k < 0 || k as usize >= self.coefficients.len() {
            return ZERO;
        }
        self.coefficients[k as usize].value()
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.coefficients.iter().map(Coefficient::value).collect()
    }

    pub fn epsilon(&self, n: i64) -> Result<f64> {
        Ok(n as f64 * self.model.level_spacing()? + self.epsilon0)
    }

    /// Recomputes the completeness from the stored coefficients.
    pub fn recomputed_completeness(&self) -> f64 {
        compensated_sum(self.coefficients.iter().map(|c| c.value().norm_sqr()))
    }

    /// Restriction to the window `|n| ≤ n_max`.
    pub fn truncated(&self, n_max: usize) -> Result<Self> {
        if n_max > self.n_max {
            return Err(KvnError::InvalidModel(format!(
                "cannot widen a window of {} to {n_max}",
                self.n_max
            )));
        }
        let skip = self.n_max - n_max;
        let values = self.values()[skip..skip + 2 * n_max + 1].to_vec();
        let family = match &self.profile {
            BasisFamily::Shared(p) => BasisFamily::Shared(p.clone()),
            BasisFamily::PerMode(ps) => BasisFamily::PerMode(ps[skip..skip + 2 * n_max + 1].to_vec()),
        };
        let mut out = Self::from_coefficients(self.model, family, self.epsilon0, self.t0, values)?;
        out.time = self.time;
        Ok(out)
    }

    /// `χ` at a `(τ, H)` point at the expansion's current time.
    fn amplitude_at(&self, te: Option<TauEnergyPoint>, period: f64) -> Result<Complex64> {
        let hbar = self.model.hbar;
        let spacing = self.model.level_spacing()?;
        let mut acc = crate::quadrature::CompensatedComplexSum::new();
        for c in &self.coefficients {
            let cn = c.value();
            if cn == ZERO {
                continue;
            }
            let f = self.profile.profile(c.n, self.n_max);
            let eps = c.n as f64 * spacing + self.epsilon0;
            match te {
                Some(te) => {
                    let fv = f.value(te.energy, period);
                    if fv != ZERO {
                        acc.add(cn * fv * Complex64::from_polar(1.0, eps * (te.tau - self.time) / hbar));
                    }
                }
                None => {
                    let fv = f.value(0.0, period);
                    if fv != ZERO {
                        if eps != 0.0 {
                            return Err(KvnError::OriginSingular);
                        }
                        acc.add(cn * fv);
                    }
                }
            }
        }
        Ok(acc.value())
    }

    /// Samples `χ(t) = Σ c_n χ_n(t)` on a grid.
    pub fn amplitude(&self, layout: &GridLayout) -> Result<AmplitudeGrid> {
        check_reconstruction(&self.model, layout, self.n_max)?;
        let period = self.model.tau_period().ok_or(KvnError::UnboundedTau)?;
        let coords = node_coordinates(&self.model, layout)?;
        let values: Vec<Result<Complex64>> = layout.sample(|k| self.amplitude_at(coords[k], period));
        AmplitudeGrid::new(layout.clone(), values.into_iter().collect::<Result<_>>()?, self.time)
    }
}

/// `c_n = ⟨χ_n(t₀)|χ(t₀)⟩` by quadrature on the grid of `initial`.
pub fn expand(
    model: &HamiltonianModel,
    initial: &AmplitudeGrid,
    family: &BasisFamily,
    n_max: usize,
) -> Result<SpectralExpansion> {
    expand_with_offset(model, initial, family, n_max, 0.0)
}

pub fn expand_with_offset(
    model: &HamiltonianModel,
    initial: &AmplitudeGrid,
    family: &BasisFamily,
    n_max: usize,
    epsilon0: f64,
) -> Result<SpectralExpansion> {
    family.validate(model, n_max)?;
    let spacing = model.level_spacing()?;
    check_resolution(model, &initial.layout, n_max as f64 * spacing + epsilon0.abs())?;
    if initial.norm_sqr() == 0.0 {
        return Err(KvnError::DegenerateState("initial state has zero norm".into()));
    }
    let layout = &initial.layout;
    let coords = node_coordinates(model, layout)?;
    let t0 = initial.time;
    let n0 = n_max as i64;
    let values: Vec<Result<Complex64>> = (-n0..=n0)
        .into_par_iter()
        .map(|n| {
            let state = family.basis_state(model, n, n_max, epsilon0, t0)?;
            let mut terms = Vec::with_capacity(layout.len());
            for (k, te) in coords.iter().enumerate() {
                let chi = initial.values[k];
                if chi == ZERO {
                    continue;
                }
                terms.push(layout.weight(k) * state_at(model, &state, *te)?.conj() * chi);
            }
            Ok(compensated_complex_sum(terms))
        })
        .collect();
    SpectralExpansion::from_coefficients(
        *model,
        family.clone(),
        epsilon0,
        t0,
        values.into_iter().collect::<Result<_>>()?,
    )
}

/// `c_n` of a structural state, with every inner product in closed form.
pub fn expand_stationary(
    model: &HamiltonianModel,
    initial: &StationaryState,
    family: &BasisFamily,
    n_max: usize,
) -> Result<SpectralExpansion> {
    family.validate(model, n_max)?;
    let n0 = n_max as i64;
    let values = (-n0..=n0)
        .map(|n| {
            let state = family.basis_state(model, n, n_max, 0.0, initial.time)?;
            stationary_inner(model, &state, initial)
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralExpansion::from_coefficients(*model, family.clone(), 0.0, initial.time, values)
}

/// Expansion with `N` chosen by doubling from [`AUTO_START`] until the
/// completeness gain drops below [`AUTO_GAIN`] or the grid's τ resolution is
/// exhausted.
pub fn expand_auto(
    model: &HamiltonianModel,
    initial: &AmplitudeGrid,
    profile: &EnergyProfile,
) -> Result<SpectralExpansion> {
    let family = BasisFamily::Shared(profile.clone());
    let limit = match initial.layout.coords {
        Coords::TauEnergy => resolvable_modes(initial.layout.n1()),
        Coords::PhaseSpace => initial.layout.n1().min(initial.layout.n2()) / NODES_PER_OSCILLATION,
    };
    if limit < AUTO_START {
        return Err(KvnError::UnderResolved(format!(
            "grid resolves only |n| <= {limit}, below the starting window {AUTO_START}"
        )));
    }
    let mut n = AUTO_START;
    let mut current = expand(model, initial, &family, n)?;
    while 2 * n <= limit {
        let next = expand(model, initial, &family, 2 * n)?;
        let gain = next.completeness - current.completeness;
        current = next;
        n *= 2;
        if gain < AUTO_GAIN {
            break;
        }
    }
    Ok(current)
}

/// Time evolution: the coefficients stay fixed and only the reconstruction
/// phases `e^{−iε_n t/ħ}` move.
pub fn evolve(expansion: &SpectralExpansion, t: f64) -> SpectralExpansion {
    SpectralExpansion {
        time: t,
        ..expansion.clone()
    }
}

fn check_reconstruction(model: &HamiltonianModel, layout: &GridLayout, n_max: usize) -> Result<()> {
    model.level_spacing()?;
    if layout.coords == Coords::TauEnergy && layout.n1() < 2 * n_max + 1 {
        return Err(KvnError::UnderResolved(format!(
            "{} tau nodes cannot carry modes up to |n| = {n_max}",
            layout.n1()
        )));
    }
    Ok(())
}

fn clamp(values: Vec<f64>) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let values = values
        .into_iter()
        .map(|v| {
            if (CLAMP_FLOOR..0.0).contains(&v) {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    (values, clamped)
}

/// `ρ(t) = |Σ c_n f_n(H) e^{iε_n(τ−t)/ħ}|²` on a grid.
pub fn reconstruct_density(
    expansion: &SpectralExpansion,
    t: f64,
    layout: &GridLayout,
) -> Result<DensityGrid> {
    let amp = evolve(expansion, t).amplitude(layout)?;
    let (values, clamped) = clamp(amp.values.iter().map(|z| z.norm_sqr()).collect());
    Ok(DensityGrid {
        layout: layout.clone(),
        values,
        time: t,
        clamped,
    })
}

/// The same density from the explicit double sum
/// `Σ|c_n f_n|² + 2 Σ_{n>m} Re[c_n c_m* f_n f_m* e^{i(ε_n−ε_m)(τ−t)/ħ}]`.
/// Quadratic in `N`; used as a cross-check.
pub fn reconstruct_density_pairwise(
    expansion: &SpectralExpansion,
    t: f64,
    layout: &GridLayout,
) -> Result<DensityGrid> {
    let model = &expansion.model;
    check_reconstruction(model, layout, expansion.n_max)?;
    let period = model.tau_period().ok_or(KvnError::UnboundedTau)?;
    let coords = node_coordinates(model, layout)?;
    let spacing = model.level_spacing()?;
    let hbar = model.hbar;
    let raw: Vec<Result<f64>> = layout.sample(|k| {
        let te = coords[k].ok_or(KvnError::OriginSingular)?;
        let a: Vec<(i64, Complex64)> = expansion
            .coefficients
            .iter()
            .map(|c| {
                let f = expansion.profile.profile(c.n, expansion.n_max);
                (c.n, c.value() * f.value(te.energy, period))
            })
            .collect();
        let mut acc = crate::quadrature::CompensatedSum::new();
        for (i, (n, an)) in a.iter().enumerate() {
            acc.add(an.norm_sqr());
            for (m, am) in &a[..i] {
                let phase = (n - m) as f64 * spacing * (te.tau - t) / hbar;
                acc.add(2.0 * (an * am.conj() * Complex64::from_polar(1.0, phase)).re);
            }
        }
        Ok(acc.value())
    });
    let (values, clamped) = clamp(raw.into_iter().collect::<Result<_>>()?);
    Ok(DensityGrid {
        layout: layout.clone(),
        values,
        time: t,
        clamped,
    })
}

/// Grid L2 norm of `∂ₜρ + {ρ, H}` at time `t`, with `∂ₜ` by central
/// differences of step `dt` and the bracket taken as in
/// [`poisson_with_hamiltonian`].
pub fn liouville_residual(
    expansion: &SpectralExpansion,
    t: f64,
    dt: f64,
    layout: &GridLayout,
) -> Result<f64> {
    let model = &expansion.model;
    let before = reconstruct_density(expansion, t - dt, layout)?;
    let centre = reconstruct_density(expansion, t, layout)?;
    let after = reconstruct_density(expansion, t + dt, layout)?;
    let as_complex = AmplitudeGrid::new(
        layout.clone(),
        centre.values.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
        t,
    )?;
    // {ρ, H} = −{H, ρ}
    let bracket = poisson_with_hamiltonian(model, &as_complex)?;
    Ok(compensated_sum((0..layout.len()).map(|k| {
        let dtrho = (after.values[k] - before.values[k]) / (2.0 * dt);
        let r = dtrho - bracket[k].re;
        layout.weight(k) * r * r
    }))
    .sqrt())
}

/// Gram matrix `⟨χ_m|χ_n⟩` over `−N..=N`: closed form without a grid,
/// quadrature on the grid otherwise.
pub fn gram_matrix(
    model: &HamiltonianModel,
    family: &BasisFamily,
    n_max: usize,
    layout: Option<&GridLayout>,
) -> Result<Vec<Vec<Complex64>>> {
    family.validate(model, n_max)?;
    let n0 = n_max as i64;
    let states = (-n0..=n0)
        .map(|n| family.basis_state(model, n, n_max, 0.0, 0.0))
        .collect::<Result<Vec<_>>>()?;
    match layout {
        None => states
            .iter()
            .map(|a| states.iter().map(|b| stationary_inner(model, a, b)).collect())
            .collect(),
        Some(layout) => {
            check_resolution(model, layout, 2.0 * n0 as f64 * model.level_spacing()?)?;
            let grids = states
                .par_iter()
                .map(|s| s.sample(model, layout))
                .collect::<Result<Vec<_>>>()?;
            grids
                .iter()
                .map(|a| grids.iter().map(|b| a.inner(b)).collect())
                .collect()
        }
    }
}

/// `max |G − I|`.
pub fn gram_defect(gram: &[Vec<Complex64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in gram.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).norm());
        }
    }
    worst
}

/// Energy grid used for τ-H reconstructions and basis quadrature.
pub fn default_tau_energy_layout(
    model: &HamiltonianModel,
    profile: &EnergyProfile,
    n_tau: usize,
    n_energy: usize,
) -> Result<GridLayout> {
    GridLayout::tau_energy(model, n_tau, profile.energy_axis(n_energy))
}

/// τ-marginal `∫ ρ dH` on the τ nodes of a `(τ,H)` density.
pub fn tau_marginal(density: &DensityGrid) -> Result<Vec<f64>> {
    let layout = &density.layout;
    if layout.coords != Coords::TauEnergy {
        return Err(KvnError::Unsupported("tau marginal needs a (tau, H) grid".into()));
    }
    let n2 = layout.n2();
    Ok((0..layout.n1())
        .map(|i| {
            compensated_sum(
                (0..n2).map(|j| layout.axis2.weights[j] * density.values[i * n2 + j]),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::stationary_state;
    use crate::kvn::{apply_tilde_hamiltonian, hermiticity_defect, Gauge};
    use crate::quadrature::Axis;
    use std::f64::consts::PI;

    fn sho(omega: f64) -> HamiltonianModel {
        HamiltonianModel::harmonic(1.0, omega).unwrap()
    }

    fn shell() -> EnergyProfile {
        EnergyProfile::MicrocanonicalShell { center: 1.0, width: 0.5 }
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(select_spectrum(&sho(1.0), 0.0, 2).unwrap(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(select_spectrum(&sho(3.0), 0.0, 1).unwrap()[2], 3.0);
        let shifted = select_spectrum(&sho(1.0), 0.7, 3).unwrap();
        let plain = select_spectrum(&sho(1.0), 0.0, 3).unwrap();
        for (a, b) in shifted.iter().zip(&plain) {
            assert_eq!(*a, b + 0.7);
        }
        let free = HamiltonianModel::free_particle(1.0).unwrap();
        assert_eq!(select_spectrum(&free, 0.0, 2), Err(KvnError::UnboundedTau));
    }

    #[test]
    fn closed_form_gram_is_exact_identity() {
        let g = gram_matrix(&sho(1.0), &BasisFamily::Shared(shell()), 16, None).unwrap();
        assert_eq!(gram_defect(&g), 0.0);
    }

    #[test]
    fn quadrature_gram_is_identity() {
        let model = sho(1.0);
        let layout = default_tau_energy_layout(&model, &shell(), 264, 16).unwrap();
        let g = gram_matrix(&model, &BasisFamily::Shared(shell()), 16, Some(&layout)).unwrap();
        assert!(gram_defect(&g) < 1e-12, "{}", gram_defect(&g));
    }

    #[test]
    fn continuum_pair_has_sinc_overlap() {
        let model = sho(1.0);
        let a = StationaryState::continuum(&model, shell(), 0.0, 0.0).unwrap();
        let b = StationaryState::continuum(&model, shell(), 0.5, 0.0).unwrap();
        let v = stationary_inner(&model, &a, &b).unwrap();
        // (1/2π) ∫_{−π}^{π} e^{iτ/2} dτ = sin(π/2)/(π/2)
        assert!((v - Complex64::new(2.0 / PI, 0.0)).norm() < 1e-15);
        let layout = default_tau_energy_layout(&model, &shell(), 256, 16).unwrap();
        let ga = a.sample(&model, &layout).unwrap();
        let gb = b.sample(&model, &layout).unwrap();
        // the off-lattice state is discontinuous across the period, so the
        // trapezoid rule converges only slowly
        assert!((ga.inner(&gb).unwrap() - v).norm() < 1e-2);
        let w = inner_product(&model, Ket::Grid(&gb), Ket::Stationary(&a)).unwrap();
        assert!((w - v.conj()).norm() < 1e-2);
    }

    #[test]
    fn conjugate_symmetry_of_mixed_products() {
        let model = sho(1.0);
        let s = stationary_state(&model, shell(), 2, 0.0).unwrap();
        let layout = default_tau_energy_layout(&model, &shell(), 64, 16).unwrap();
        let g = stationary_state(&model, shell(), 1, 0.0)
            .unwrap()
            .sample(&model, &layout)
            .unwrap()
            .combine(Complex64::new(0.6, 0.0), &s.sample(&model, &layout).unwrap(), Complex64::new(0.0, 0.8))
            .unwrap();
        let ab = inner_product(&model, Ket::Stationary(&s), Ket::Grid(&g)).unwrap();
        let ba = inner_product(&model, Ket::Grid(&g), Ket::Stationary(&s)).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-12);
        assert!((ab - Complex64::new(0.0, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn expanding_a_basis_state() {
        let model = sho(1.0);
        let layout = default_tau_energy_layout(&model, &shell(), 128, 16).unwrap();
        let chi3 = stationary_state(&model, shell(), 3, 0.0).unwrap();
        let grid = chi3.sample(&model, &layout).unwrap();
        let e = expand(&model, &grid, &BasisFamily::Shared(shell()), 8).unwrap();
        for c in &e.coefficients {
            let target = if c.n == 3 { 1.0 } else { 0.0 };
            assert!((c.value() - target).norm() < 1e-12, "{c:?}");
        }
        let closed = expand_stationary(&model, &chi3, &BasisFamily::Shared(shell()), 8).unwrap();
        assert_eq!(closed.coefficient(3), Complex64::new(1.0, 0.0));
        assert_eq!(closed.completeness, 1.0);
    }

    #[test]
    fn under_resolved_expansion_is_refused() {
        let model = sho(1.0);
        let layout = default_tau_energy_layout(&model, &shell(), 64, 16).unwrap();
        let grid = stationary_state(&model, shell(), 0, 0.0).unwrap().sample(&model, &layout).unwrap();
        assert!(matches!(
            expand(&model, &grid, &BasisFamily::Shared(shell()), 9),
            Err(KvnError::UnderResolved(_))
        ));
        assert!(expand(&model, &grid, &BasisFamily::Shared(shell()), 8).is_ok());
    }

    #[test]
    fn per_mode_family_must_match_window() {
        let model = sho(1.0);
        let family = BasisFamily::PerMode(vec![shell(); 3]);
        assert!(family.validate(&model, 1).is_ok());
        assert!(matches!(family.validate(&model, 2), Err(KvnError::NonOrthonormalFamily(_))));
    }

    #[test]
    fn two_mode_density_and_revival() {
        let model = sho(1.0);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let e = SpectralExpansion::from_coefficients(
            model,
            BasisFamily::Shared(shell()),
            0.0,
            0.0,
            vec![ZERO, Complex64::new(a, 0.0), Complex64::new(a, 0.0)],
        )
        .unwrap();
        let layout = default_tau_energy_layout(&model, &shell(), 32, 8).unwrap();
        let t = 0.9;
        let rho = reconstruct_density(&e, t, &layout).unwrap();
        let f2 = 1.0 / (2.0 * PI * 0.5);
        for k in 0..layout.len() {
            let (tau, _) = layout.node(k);
            let expect = f2 * 0.5 * (2.0 + 2.0 * (tau - t).cos());
            assert!((rho.values[k] - expect).abs() < 1e-12);
        }
        let pair = reconstruct_density_pairwise(&e, t, &layout).unwrap();
        for (x, y) in rho.values.iter().zip(&pair.values) {
            assert!((x - y).abs() < 1e-12);
        }
        let r0 = reconstruct_density(&e, 0.0, &layout).unwrap();
        let r1 = reconstruct_density(&e, 2.0 * PI, &layout).unwrap();
        for (x, y) in r0.values.iter().zip(&r1.values) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((rho.total() - e.completeness).abs() < 1e-12);
    }

    #[test]
    fn evolution_keeps_completeness_bitwise() {
        let model = sho(1.0);
        let e = SpectralExpansion::from_coefficients(
            model,
            BasisFamily::Shared(shell()),
            0.0,
            0.0,
            vec![Complex64::new(0.1, 0.2), Complex64::new(0.3, -0.4), Complex64::new(0.5, 0.0)],
        )
        .unwrap();
        let ev = evolve(&e, 3.7);
        assert_eq!(ev.completeness.to_bits(), e.completeness.to_bits());
        assert_eq!(ev.coefficients, e.coefficients);
        assert_eq!(evolve(&e, 0.0), e);
    }

    #[test]
    fn basis_states_are_eigenstates_and_hermitian() {
        let model = sho(2.0);
        let layout = default_tau_energy_layout(&model, &shell(), 128, 16).unwrap();
        let states: Vec<_> = (-4..=4)
            .map(|n| stationary_state(&model, shell(), n, 0.0).unwrap())
            .collect();
        let grids: Vec<_> = states.iter().map(|s| s.sample(&model, &layout).unwrap()).collect();
        for (s, g) in states.iter().zip(&grids) {
            let h = apply_tilde_hamiltonian(&model, &Gauge::Zero, g).unwrap();
            let r = h.combine(Complex64::new(1.0, 0.0), g, Complex64::new(-s.epsilon, 0.0)).unwrap();
            assert!(r.norm_sqr().sqrt() < 1e-10);
            assert!(g.inner(&h).unwrap().im.abs() < 1e-10);
        }
        for a in &grids {
            for b in &grids {
                assert!(hermiticity_defect(&model, &Gauge::Zero, a, b).unwrap().norm() < 1e-10);
            }
        }
    }

    #[test]
    fn tau_marginal_integrates_to_mass() {
        let model = sho(1.0);
        let layout = GridLayout::tau_energy(&model, 16, Axis::gauss_legendre(0.75, 1.25, 8)).unwrap();
        let e = expand_stationary(
            &model,
            &stationary_state(&model, shell(), 0, 0.0).unwrap(),
            &BasisFamily::Shared(shell()),
            2,
        )
        .unwrap();
        let rho = reconstruct_density(&e, 0.0, &layout).unwrap();
        let marg = tau_marginal(&rho).unwrap();
        let total: f64 = marg.iter().zip(&layout.axis1.weights).map(|(m, w)| m * w).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
