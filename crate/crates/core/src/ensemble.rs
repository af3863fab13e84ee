//! Closed-form states: the separable canonical eigenstate
//! `χ = Z^{-1/2} e^{−βH/2} e^{−iεt/ħ}`, its partition function, and the
//! stationary states `f(H) e^{iε(τ−t)/ħ}` built from an energy profile.

use std::f64::consts::LN_10;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amplitude::{AmplitudeGrid, Coords, GridLayout};
use crate::error::{KvnError, Result};
use crate::model::{HamiltonianModel, PhaseSample, SystemKind, TauEnergyPoint};
use crate::quadrature::{compensated_sum, integrate_panels, Axis};

/// Gaussian tails are cut at this many standard deviations.
const GAUSS_SIGMAS: f64 = 12.0;
/// Exponential tails `e^{βFq}` are cut where the integrand drops below `e^{-45}`.
const EXP_DECADES: f64 = 45.0;
const PANELS: usize = 64;
const ORDER: usize = 16;

/// `H_max` with `e^{−βH_max} = 1e−16`.
pub fn canonical_energy_cutoff(beta: f64) -> f64 {
    16.0 * LN_10 / beta
}

/// Rectangular phase-space region; bounds may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub q: (f64, f64),
    pub p: (f64, f64),
}

impl Region {
    pub fn full_plane() -> Self {
        Self {
            q: (f64::NEG_INFINITY, f64::INFINITY),
            p: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn rect(q: (f64, f64), p: (f64, f64)) -> Self {
        Self { q, p }
    }

    /// The model's declared bounds, or the full plane.
    pub fn of_model(model: &HamiltonianModel) -> Self {
        model
            .bounds
            .map(|b| Self::rect(b.q, b.p))
            .unwrap_or_else(Self::full_plane)
    }

    pub fn contains(&self, pt: PhaseSample) -> bool {
        pt.q >= self.q.0 && pt.q <= self.q.1 && pt.p >= self.p.0 && pt.p <= self.p.1
    }

    pub fn is_full_plane(&self) -> bool {
        *self == Self::full_plane()
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| !lo.is_nan() && !hi.is_nan() && lo < hi;
        if ok(self.q) && ok(self.p) {
            Ok(())
        } else {
            Err(KvnError::OutOfDomain(format!("empty region {self:?}")))
        }
    }
}

/// One separable factor `∫ g(x) e^{−βV(x)} dx`, stored as `scale · e^{log_shift}`
/// so that growing exponentials do not overflow.
struct Factor {
    log_shift: f64,
    lo: f64,
    hi: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(KvnError::InvalidModel(format!("beta must be positive, got {beta}")))
    }
}

/// Integration window for a centred Gaussian of standard deviation `sigma`.
fn gaussian_window((lo, hi): (f64, f64), centre: f64, sigma: f64) -> (f64, f64) {
    let reach = GAUSS_SIGMAS * sigma;
    (lo.max(centre - reach), hi.min(centre + reach))
}

fn momentum_factor(model: &HamiltonianModel, beta: f64, p: (f64, f64)) -> Factor {
    let (lo, hi) = gaussian_window(p, 0.0, (model.mass / beta).sqrt());
    Factor {
        log_shift: 0.0,
        lo,
        hi,
    }
}

fn position_factor(model: &HamiltonianModel, beta: f64, q: (f64, f64)) -> Result<Factor> {
    match model.kind {
        SystemKind::HarmonicOscillator => {
            let sigma = 1.0 / (model.omega * (beta * model.mass).sqrt());
            let (lo, hi) = gaussian_window(q, 0.0, sigma);
            Ok(Factor {
                log_shift: 0.0,
                lo,
                hi,
            })
        }
        SystemKind::FreeParticle => {
            if q.0.is_finite() && q.1.is_finite() {
                Ok(Factor {
                    log_shift: 0.0,
                    lo: q.0,
                    hi: q.1,
                })
            } else {
                Err(KvnError::DivergentIntegral(
                    "free particle on an unbounded position range".into(),
                ))
            }
        }
        SystemKind::LinearPotential => {
            // e^{−βU} = e^{βFq} grows towards sign(F)·∞
            let bf = beta * model.force;
            let reach = EXP_DECADES / bf.abs();
            if bf > 0.0 {
                if !q.1.is_finite() {
                    return Err(KvnError::DivergentIntegral(
                        "linear potential unbounded in the direction of the force".into(),
                    ));
                }
                Ok(Factor {
                    log_shift: bf * q.1,
                    lo: q.0.max(q.1 - reach),
                    hi: q.1,
                })
            } else {
                if !q.0.is_finite() {
                    return Err(KvnError::DivergentIntegral(
                        "linear potential unbounded in the direction of the force".into(),
                    ));
                }
                Ok(Factor {
                    log_shift: bf * q.0,
                    lo: q.0,
                    hi: q.1.min(q.0 + reach),
                })
            }
        }
    }
}

impl Factor {
    /// `∫ g(x) e^{−βV(x) − log_shift} dx`.
    fn integrate<G: Fn(f64) -> f64, V: Fn(f64) -> f64>(&self, beta: f64, v: V, g: G) -> f64 {
        if self.hi <= self.lo {
            return 0.0;
        }
        integrate_panels(
            |x| g(x) * (-beta * v(x) - self.log_shift).exp(),
            self.lo,
            self.hi,
            PANELS,
            ORDER,
        )
    }
}

/// Moments of the two separable factors: `ln Z`, `⟨K⟩` and `⟨U⟩`.
struct Moments {
    log_z: f64,
    kinetic: f64,
    potential: f64,
}

fn moments(model: &HamiltonianModel, beta: f64, region: &Region) -> Result<Moments> {
    check_beta(beta)?;
    region.validate()?;
    let pf = momentum_factor(model, beta, region.p);
    let qf = position_factor(model, beta, region.q)?;
    let kin = |p: f64| model.kinetic(p);
    let pot = |q: f64| model.potential(q);
    let zp = pf.integrate(beta, kin, |_| 1.0);
    let zq = qf.integrate(beta, pot, |_| 1.0);
    if !(zp > 0.0 && zq > 0.0) {
        return Err(KvnError::DivergentIntegral(format!(
            "partition function factors vanish ({zp}, {zq})"
        )));
    }
    Ok(Moments {
        log_z: zp.ln() + zq.ln() + pf.log_shift + qf.log_shift,
        kinetic: pf.integrate(beta, kin, kin) / zp,
        potential: qf.integrate(beta, pot, pot) / zq,
    })
}

/// `ln Z(β, Γ)` with `Z = ∫_Γ e^{−βH} dq dp`.
pub fn log_partition_function(model: &HamiltonianModel, beta: f64, region: &Region) -> Result<f64> {
    Ok(moments(model, beta, region)?.log_z)
}

/// `Z(β, Γ) = ∫_Γ e^{−βH} dq dp`, with `dΩ = dq dp` (no `2πħ` normalization).
pub fn partition_function(model: &HamiltonianModel, beta: f64, region: &Region) -> Result<f64> {
    let z = log_partition_function(model, beta, region)?.exp();
    if z.is_finite() {
        Ok(z)
    } else {
        Err(KvnError::DivergentIntegral(format!("Z overflows at beta = {beta}")))
    }
}

/// `⟨H⟩` computed two ways.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEnergy {
    /// `∫ |χ|² H dΩ` by quadrature.
    pub quadrature: f64,
    /// `−∂β ln Z` by central differences with step `1e−4 β`.
    pub log_derivative: f64,
}

impl MeanEnergy {
    pub fn relative_gap(&self) -> f64 {
        (self.quadrature - self.log_derivative).abs() / self.quadrature.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn mean_energy(model: &HamiltonianModel, beta: f64, region: &Region) -> Result<MeanEnergy> {
    let m = moments(model, beta, region)?;
    let d = 1e-4 * beta;
    let up = log_partition_function(model, beta + d, region)?;
    let down = log_partition_function(model, beta - d, region)?;
    Ok(MeanEnergy {
        quadrature: m.kinetic + m.potential,
        log_derivative: -(up - down) / (2.0 * d),
    })
}

/// The `α = ε` canonical eigenstate `Z^{-1/2} e^{−βH/2} e^{−iεt/ħ}` on `Γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalState {
    pub beta: f64,
    pub epsilon: f64,
    pub region: Region,
    pub z: f64,
    pub energy_cutoff: f64,
}

impl CanonicalState {
    pub fn new(model: &HamiltonianModel, beta: f64, epsilon: f64, region: Region) -> Result<Self> {
        if !epsilon.is_finite() {
            return Err(KvnError::InvalidModel(format!("epsilon must be finite, got {epsilon}")));
        }
        let z = partition_function(model, beta, &region)?;
        Ok(Self {
            beta,
            epsilon,
            region,
            z,
            energy_cutoff: canonical_energy_cutoff(beta),
        })
    }

    pub fn value(&self, model: &HamiltonianModel, energy: f64, t: f64) -> Complex64 {
        Complex64::from_polar(
            (-0.5 * self.beta * energy).exp() / self.z.sqrt(),
            -self.epsilon * t / model.hbar,
        )
    }

    /// Samples the state; nodes outside `Γ` get zero.
    pub fn sample(&self, model: &HamiltonianModel, layout: &GridLayout, t: f64) -> Result<AmplitudeGrid> {
        let full = self.region.is_full_plane();
        let values: Vec<Result<Complex64>> = layout.sample(|k| {
            let pt = match layout.coords {
                Coords::PhaseSpace => {
                    let (q, p) = layout.node(k);
                    PhaseSample::new(q, p)
                }
                Coords::TauEnergy if full => {
                    let (_, h) = layout.node(k);
                    return Ok(self.value(model, h, t));
                }
                Coords::TauEnergy => layout.phase_at(model, k)?,
            };
            Ok(if self.region.contains(pt) {
                self.value(model, model.energy(pt), t)
            } else {
                Complex64::new(0.0, 0.0)
            })
        });
        AmplitudeGrid::new(layout.clone(), values.into_iter().collect::<Result<_>>()?, t)
    }
}

pub fn canonical_state(
    model: &HamiltonianModel,
    beta: f64,
    epsilon: f64,
    region: &Region,
    t: f64,
    layout: &GridLayout,
) -> Result<AmplitudeGrid> {
    CanonicalState::new(model, beta, epsilon, *region)?.sample(model, layout, t)
}

/// Tabulated complex profile, linearly interpolated and zero outside the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedProfile {
    energies: Vec<f64>,
    values: Vec<Complex64>,
    /// `∫ |raw|² dH` of the interpolant.
    norm_sqr: f64,
}

impl TabulatedProfile {
    pub fn new(energies: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if energies.len() != values.len() || energies.len() < 2 {
            return Err(KvnError::InvalidModel(
                "tabulated profile needs at least two (energy, value) pairs".into(),
            ));
        }
        if energies.windows(2).any(|w| !(w[1] > w[0])) || energies.iter().any(|e| !e.is_finite()) {
            return Err(KvnError::InvalidModel(
                "tabulated profile energies must be finite and strictly increasing".into(),
            ));
        }
        // exact integral of |linear interpolant|² per segment
        let norm_sqr = compensated_sum(energies.windows(2).zip(values.windows(2)).map(|(e, v)| {
            let (a, b) = (v[0], v[1]);
            (e[1] - e[0]) * (a.norm_sqr() + (a.conj() * b).re + b.norm_sqr()) / 3.0
        }));
        if !(norm_sqr > 0.0 && norm_sqr.is_finite()) {
            return Err(KvnError::DegenerateState("tabulated profile has zero norm".into()));
        }
        Ok(Self {
            energies,
            values,
            norm_sqr,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    fn raw(&self, h: f64) -> Complex64 {
        let e = &self.energies;
        if h < e[0] || h > e[e.len() - 1] {
            return Complex64::new(0.0, 0.0);
        }
        let k = e.partition_point(|&x| x <= h).clamp(1, e.len() - 1);
        let s = (h - e[k - 1]) / (e[k] - e[k - 1]);
        self.values[k - 1] * (1.0 - s) + self.values[k] * s
    }
}

/// Energy profile `f(H)`, normalized so that `T ∫ |f|² dH = 1` with `T` the
/// τ period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyProfile {
    /// Indicator of `[E_i − ΔE/2, E_i + ΔE/2]`.
    MicrocanonicalShell { center: f64, width: f64 },
    /// `∝ e^{−βH/2}` on `H ≥ 0`.
    CanonicalHalfBoltzmann { beta: f64 },
    Custom(TabulatedProfile),
}

impl EnergyProfile {
    pub fn validate(&self, model: &HamiltonianModel) -> Result<()> {
        let floor = match model.kind {
            SystemKind::HarmonicOscillator => 0.0,
            _ => f64::NEG_INFINITY,
        };
        match self {
            EnergyProfile::MicrocanonicalShell { center, width } => {
                if !(width.is_finite() && *width > 0.0 && center.is_finite()) {
                    return Err(KvnError::SpecOutOfRange(format!(
                        "shell needs finite centre and positive width, got ({center}, {width})"
                    )));
                }
                if center - 0.5 * width < floor {
                    return Err(KvnError::SpecOutOfRange(format!(
                        "shell [{}, {}] reaches below H = {floor}",
                        center - 0.5 * width,
                        center + 0.5 * width
                    )));
                }
                Ok(())
            }
            EnergyProfile::CanonicalHalfBoltzmann { beta } => {
                if model.kind != SystemKind::HarmonicOscillator {
                    return Err(KvnError::Unsupported(
                        "half-Boltzmann profile needs an energy spectrum bounded below".into(),
                    ));
                }
                check_beta(*beta)
            }
            EnergyProfile::Custom(tab) => {
                if tab.energies[0] < floor {
                    return Err(KvnError::SpecOutOfRange(format!(
                        "tabulated profile starts below H = {floor}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `f(H)` for a τ period `period`.
    pub fn value(&self, energy: f64, period: f64) -> Complex64 {
        match self {
            EnergyProfile::MicrocanonicalShell { center, width } => {
                let lo = center - 0.5 * width;
                let hi = center + 0.5 * width;
                if energy >= lo && energy <= hi {
                    Complex64::new((1.0 / (period * width)).sqrt(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            EnergyProfile::CanonicalHalfBoltzmann { beta } => {
                if energy < 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new((beta / period).sqrt() * (-0.5 * beta * energy).exp(), 0.0)
                }
            }
            EnergyProfile::Custom(tab) => tab.raw(energy) / (tab.norm_sqr * period).sqrt(),
        }
    }

    /// Energy interval carrying the profile (up to `e^{−βH} = 1e−16` for the
    /// Boltzmann tail).
    pub fn support(&self) -> (f64, f64) {
        match self {
            EnergyProfile::MicrocanonicalShell { center, width } => {
                (center - 0.5 * width, center + 0.5 * width)
            }
            EnergyProfile::CanonicalHalfBoltzmann { beta } => (0.0, canonical_energy_cutoff(*beta)),
            EnergyProfile::Custom(tab) => (tab.energies[0], tab.energies[tab.energies.len() - 1]),
        }
    }

    /// Energy axis resolving the profile: Gauss–Legendre on the support, with
    /// breakpoints at every table node for tabulated profiles.
    pub fn energy_axis(&self, nodes: usize) -> Axis {
        match self {
            EnergyProfile::Custom(tab) => {
                let per_panel = nodes.div_ceil(tab.energies.len() - 1).max(2);
                Axis::composite_gauss_legendre(&tab.energies, per_panel)
            }
            _ => {
                let (lo, hi) = self.support();
                Axis::gauss_legendre(lo, hi, nodes)
            }
        }
    }

    /// `T ∫ f_a* f_b dH`, closed form where available.
    pub fn overlap(&self, other: &EnergyProfile, period: f64) -> Complex64 {
        use EnergyProfile::*;
        let real = |x: f64| Complex64::new(x, 0.0);
        if self == other {
            return real(1.0);
        }
        match (self, other) {
            (MicrocanonicalShell { .. }, MicrocanonicalShell { .. }) => {
                let (a0, a1) = self.support();
                let (b0, b1) = other.support();
                let len = (a1.min(b1) - a0.max(b0)).max(0.0);
                real(len / ((a1 - a0) * (b1 - b0)).sqrt())
            }
            (CanonicalHalfBoltzmann { beta: a }, CanonicalHalfBoltzmann { beta: b }) => {
                real(2.0 * (a * b).sqrt() / (a + b))
            }
            (MicrocanonicalShell { center, width }, CanonicalHalfBoltzmann { beta })
            | (CanonicalHalfBoltzmann { beta }, MicrocanonicalShell { center, width }) => {
                let lo = (center - 0.5 * width).max(0.0);
                let hi = center + 0.5 * width;
                let tail = (-0.5 * beta * lo).exp() - (-0.5 * beta * hi).exp();
                real((beta / width).sqrt() * 2.0 / beta * tail)
            }
            _ => {
                let (a0, a1) = self.support();
                let (b0, b1) = other.support();
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if hi <= lo {
                    return real(0.0);
                }
                let mut breaks = vec![lo, hi];
                for p in [self, other] {
                    if let Custom(tab) = p {
                        breaks.extend(tab.energies.iter().copied().filter(|e| *e > lo && *e < hi));
                    }
                    if let MicrocanonicalShell { .. } = p {
                        let (s0, s1) = p.support();
                        breaks.extend([s0, s1].into_iter().filter(|e| *e > lo && *e < hi));
                    }
                }
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let fine: Vec<f64> = breaks
                    .windows(2)
                    .flat_map(|w| (0..8).map(move |k| w[0] + (w[1] - w[0]) * k as f64 / 8.0))
                    .chain(std::iter::once(hi))
                    .collect();
                let axis = Axis::composite_gauss_legendre(&fine, ORDER);
                let re = axis.integrate(|h| (self.value(h, period).conj() * other.value(h, period)).re);
                let im = axis.integrate(|h| (self.value(h, period).conj() * other.value(h, period)).im);
                Complex64::new(re, im) * period
            }
        }
    }
}

/// `χ = f(H) e^{iε(τ−t)/ħ}`, held structurally. `mode` is the lattice index
/// `n` with `ε = nħω + ε₀`, or `None` for an off-lattice (continuum) `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryState {
    pub profile: EnergyProfile,
    pub mode: Option<i64>,
    pub epsilon: f64,
    pub time: f64,
    /// τ period of the model the state was built for.
    pub period: f64,
}

impl StationaryState {
    pub fn continuum(model: &HamiltonianModel, profile: EnergyProfile, epsilon: f64, t: f64) -> Result<Self> {
        let period = model.tau_period().ok_or(KvnError::UnboundedTau)?;
        profile.validate(model)?;
        Ok(Self {
            profile,
            mode: None,
            epsilon,
            time: t,
            period,
        })
    }

    pub fn at_time(&self, t: f64) -> Self {
        Self {
            time: t,
            ..self.clone()
        }
    }

    pub fn value(&self, model: &HamiltonianModel, te: TauEnergyPoint) -> Complex64 {
        let phase = self.epsilon * (te.tau - self.time) / model.hbar;
        self.profile.value(te.energy, self.period) * Complex64::from_polar(1.0, phase)
    }

    /// Value at a phase-space point. At the oscillator origin τ is undefined,
    /// which only matters when the state has τ dependence there.
    pub fn value_at_phase(&self, model: &HamiltonianModel, pt: PhaseSample) -> Result<Complex64> {
        match model.dynamical_time(pt) {
            Ok(te) => Ok(self.value(model, te)),
            Err(KvnError::OriginSingular) => {
                let f = self.profile.value(0.0, self.period);
                if self.epsilon == 0.0 || f == Complex64::new(0.0, 0.0) {
                    Ok(f)
                } else {
                    Err(KvnError::OriginSingular)
                }
            }
            Err(e) => Err(e),
        }
    }

    pub fn sample(&self, model: &HamiltonianModel, layout: &GridLayout) -> Result<AmplitudeGrid> {
        let values: Vec<Result<Complex64>> = layout.sample(|k| match layout.coords {
            Coords::TauEnergy => {
                let (tau, h) = layout.node(k);
                Ok(self.value(model, TauEnergyPoint::new(tau, h)))
            }
            Coords::PhaseSpace => {
                let (q, p) = layout.node(k);
                self.value_at_phase(model, PhaseSample::new(q, p))
            }
        });
        AmplitudeGrid::new(layout.clone(), values.into_iter().collect::<Result<_>>()?, self.time)
    }
}

/// Lattice eigenstate with `ε_n = nħω + ε₀`.
pub fn stationary_state_with_offset(
    model: &HamiltonianModel,
    profile: EnergyProfile,
    n: i64,
    epsilon0: f64,
    t: f64,
) -> Result<StationaryState> {
    let spacing = model.level_spacing()?;
    let mut state = StationaryState::continuum(model, profile, n as f64 * spacing + epsilon0, t)?;
    state.mode = Some(n);
    Ok(state)
}

/// Lattice eigenstate with `ε_n = nħω`.
pub fn stationary_state(
    model: &HamiltonianModel,
    profile: EnergyProfile,
    n: i64,
    t: f64,
) -> Result<StationaryState> {
    stationary_state_with_offset(model, profile, n, 0.0, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvn::{apply_tilde_hamiltonian, Gauge};
    use std::f64::consts::{E, PI};

    fn sho() -> HamiltonianModel {
        HamiltonianModel::harmonic(1.0, 1.0).unwrap()
    }

    #[test]
    fn oscillator_partition_function() {
        let full = Region::full_plane();
        let z1 = partition_function(&sho(), 1.0, &full).unwrap();
        assert!((z1 / (2.0 * PI) - 1.0).abs() < 1e-12, "{z1}");
        let z2 = partition_function(&sho(), 2.0, &full).unwrap();
        assert!((z2 / PI - 1.0).abs() < 1e-12);
        assert!((z1 / z2 - 2.0).abs() < 1e-12);
        let m = HamiltonianModel::harmonic(2.5, 0.7).unwrap();
        let z = partition_function(&m, 1.3, &full).unwrap();
        assert!((z / (2.0 * PI / (1.3 * 0.7)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_energy_equipartition() {
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let e = mean_energy(&sho(), beta, &Region::full_plane()).unwrap();
            assert!((e.quadrature * beta - 1.0).abs() < 1e-10, "{e:?}");
            assert!((e.log_derivative * beta - 1.0).abs() < 1e-7, "{e:?}");
            assert!(e.relative_gap() < 1e-6);
        }
    }

    #[test]
    fn divergent_cases() {
        let free = HamiltonianModel::free_particle(1.0).unwrap();
        assert!(matches!(
            partition_function(&free, 1.0, &Region::full_plane()),
            Err(KvnError::DivergentIntegral(_))
        ));
        let boxed = Region::rect((-1.0, 2.0), (f64::NEG_INFINITY, f64::INFINITY));
        let z = partition_function(&free, 2.0, &boxed).unwrap();
        assert!((z - 3.0 * (PI).sqrt()).abs() < 1e-12);
        let lin = HamiltonianModel::linear(1.0, 1.0).unwrap();
        assert!(matches!(
            partition_function(&lin, 1.0, &Region::full_plane()),
            Err(KvnError::DivergentIntegral(_))
        ));
    }

    #[test]
    fn linear_potential_matches_closed_form() {
        let lin = HamiltonianModel::linear(1.0, 2.0).unwrap();
        let region = Region::rect((f64::NEG_INFINITY, 3.0), (f64::NEG_INFINITY, f64::INFINITY));
        let beta = 0.5;
        // ∫ e^{βFq} dq up to q̄ = e^{βF q̄}/(βF); momentum Gaussian √(2πm/β)
        let log_exact = beta * 2.0 * 3.0 - (beta * 2.0f64).ln() + (2.0 * PI / beta).sqrt().ln();
        let log_z = log_partition_function(&lin, beta, &region).unwrap();
        assert!((log_z - log_exact).abs() < 1e-12);
        let e = mean_energy(&lin, beta, &region).unwrap();
        assert!(e.relative_gap() < 1e-6, "{e:?}");
    }

    #[test]
    fn canonical_state_examples() {
        let layout = GridLayout::phase_space((-8.0, 8.0), (-8.0, 8.0), 160, 160).unwrap();
        let chi = canonical_state(&sho(), 1.0, 0.3, &Region::full_plane(), 0.0, &layout).unwrap();
        assert!((chi.norm_sqr() - 1.0).abs() < 1e-10);
        assert!(chi.values.iter().all(|v| v.im == 0.0 && v.re > 0.0));

        let st = CanonicalState::new(&sho(), 1.0, 1.0, Region::full_plane()).unwrap();
        let r = st.value(&sho(), 0.5, PI) / st.value(&sho(), 0.5, 0.0);
        assert!((r + 1.0).norm() < 1e-15);
        let ratio = st.value(&sho(), 0.0, 0.0).norm_sqr() / st.value(&sho(), 1.0, 0.0).norm_sqr();
        assert!((ratio - E).abs() < 1e-14);
    }

    #[test]
    fn canonical_eigenrelation_on_tau_grid() {
        let beta = 1.0;
        let eps = 0.8;
        let axis = Axis::gauss_legendre(0.0, canonical_energy_cutoff(beta), 64);
        let layout = GridLayout::tau_energy(&sho(), 64, axis).unwrap();
        let chi = canonical_state(&sho(), beta, eps, &Region::full_plane(), 0.4, &layout).unwrap();
        assert!((chi.norm_sqr() - 1.0).abs() < 1e-12);
        let h = apply_tilde_hamiltonian(&sho(), &Gauge::ConstantEpsilon(eps), &chi).unwrap();
        let err = h.combine(Complex64::new(1.0, 0.0), &chi, Complex64::new(-eps, 0.0)).unwrap();
        assert!(err.norm_sqr().sqrt() < 1e-12);
    }

    #[test]
    fn profile_normalization() {
        let model = HamiltonianModel::harmonic(1.0, 2.0).unwrap();
        let period = model.tau_period().unwrap();
        let tab = TabulatedProfile::new(
            vec![0.0, 0.5, 1.5, 2.0],
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 1.0),
                Complex64::new(-0.5, 2.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        for profile in [
            EnergyProfile::MicrocanonicalShell { center: 1.0, width: 0.5 },
            EnergyProfile::CanonicalHalfBoltzmann { beta: 1.7 },
            EnergyProfile::Custom(tab),
        ] {
            let axis = profile.energy_axis(96);
            let n = period * axis.integrate(|h| profile.value(h, period).norm_sqr());
            assert!((n - 1.0).abs() < 1e-10, "{profile:?}: {n}");
        }
    }

    #[test]
    fn closed_form_overlaps_match_quadrature() {
        let period = 2.0 * PI;
        let a = EnergyProfile::MicrocanonicalShell { center: 1.0, width: 0.5 };
        let b = EnergyProfile::CanonicalHalfBoltzmann { beta: 0.9 };
        let c = EnergyProfile::MicrocanonicalShell { center: 1.2, width: 1.0 };
        let d = EnergyProfile::CanonicalHalfBoltzmann { beta: 2.0 };
        for (x, y) in [(&a, &b), (&a, &c), (&b, &d)] {
            let closed = x.overlap(y, period);
            let axis = Axis::composite_gauss_legendre(
                &(0..=4000).map(|k| k as f64 * 0.01).collect::<Vec<_>>(),
                8,
            );
            let num = period * axis.integrate(|h| (x.value(h, period) * y.value(h, period)).re);
            assert!((closed.re - num).abs() < 1e-6, "{closed} vs {num}");
        }
    }

    #[test]
    fn stationary_state_examples() {
        let model = HamiltonianModel::harmonic(1.0, 2.0).unwrap();
        let s = stationary_state(&model, EnergyProfile::CanonicalHalfBoltzmann { beta: 1.0 }, 3, 0.0).unwrap();
        assert_eq!(s.epsilon, 6.0);
        let shell = EnergyProfile::MicrocanonicalShell { center: 1.0, width: 0.5 };
        let s0 = stationary_state(&sho(), shell, 0, 0.0).unwrap();
        let v = s0.value(&sho(), TauEnergyPoint::new(0.3, 1.1));
        assert!((v.re - (1.0 / (2.0 * PI * 0.5)).sqrt()).abs() < 1e-15);
        let free = HamiltonianModel::free_particle(1.0).unwrap();
        assert_eq!(
            stationary_state(&free, EnergyProfile::MicrocanonicalShell { center: 1.0, width: 0.5 }, 1, 0.0)
                .unwrap_err(),
            KvnError::UnboundedTau
        );
    }

    #[test]
    fn half_boltzmann_mode_zero_is_the_canonical_state() {
        let beta = 1.5;
        let axis = Axis::gauss_legendre(0.0, canonical_energy_cutoff(beta), 32);
        let layout = GridLayout::tau_energy(&sho(), 16, axis).unwrap();
        let s = stationary_state(&sho(), EnergyProfile::CanonicalHalfBoltzmann { beta }, 0, 0.7)
            .unwrap()
            .sample(&sho(), &layout)
            .unwrap();
        let c = canonical_state(&sho(), beta, 0.0, &Region::full_plane(), 0.7, &layout).unwrap();
        for (a, b) in s.values.iter().zip(&c.values) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn invalid_shell_is_rejected() {
        let bad = EnergyProfile::MicrocanonicalShell { center: 0.1, width: 0.5 };
        assert!(matches!(bad.validate(&sho()), Err(KvnError::SpecOutOfRange(_))));
    }
}
