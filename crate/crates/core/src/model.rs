//! Separable 1D Hamiltonians `H = K(p) + U(q)`, their dynamical time `τ`
//! (the phase-space function with `{τ, H} = 1`), the `(q,p) ↔ (τ,H)` charts and
//! the exact Hamiltonian flow.
//!
//! The additive constant in `τ` is fixed to zero for every system.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{KvnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// `H = p²/2m`, `τ = m q / p`.
    FreeParticle,
    /// `H = p²/2m − F q`, `τ = p / F`.
    LinearPotential,
    /// `H = p²/2m + m ω² q²/2`, `τ = atan2(mωq, p)/ω`.
    HarmonicOscillator,
}

/// Rectangular phase-space domain `[q_lo, q_hi] × [p_lo, p_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBounds {
    pub q: (f64, f64),
    pub p: (f64, f64),
}

impl PhaseBounds {
    pub fn contains(&self, pt: PhaseSample) -> bool {
        pt.q >= self.q.0 && pt.q <= self.q.1 && pt.p >= self.p.0 && pt.p <= self.p.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub q: f64,
    pub p: f64,
}

impl PhaseSample {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }
}

/// Which momentum half-plane a free-particle `(τ, H)` point came from.
/// `(τ, H)` alone cannot tell `(q, p)` from `(−q, −p)` for the free particle;
/// every other system ignores this field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumSheet {
    #[default]
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauEnergyPoint {
    pub tau: f64,
    pub energy: f64,
    #[serde(default)]
    pub sheet: MomentumSheet,
}

impl TauEnergyPoint {
    pub fn new(tau: f64, energy: f64) -> Self {
        Self {
            tau,
            energy,
            sheet: MomentumSheet::Positive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauRange {
    Bounded { lower: f64, upper: f64 },
    Unbounded,
}

impl TauRange {
    pub fn period(&self) -> Option<f64> {
        match *self {
            TauRange::Bounded { lower, upper } => Some(upper - lower),
            TauRange::Unbounded => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianModel {
    pub kind: SystemKind,
    pub mass: f64,
    /// Angular frequency; only meaningful for the oscillator.
    pub omega: f64,
    /// Constant force; only meaningful for the linear potential.
    pub force: f64,
    pub hbar: f64,
    #[serde(default)]
    pub bounds: Option<PhaseBounds>,
}

impl HamiltonianModel {
    pub fn harmonic(mass: f64, omega: f64) -> Result<Self> {
        Self {
            kind: SystemKind::HarmonicOscillator,
            mass,
            omega,
            force: 0.0,
            hbar: 1.0,
            bounds: None,
        }
        .validated()
    }

    pub fn free_particle(mass: f64) -> Result<Self> {
        Self {
            kind: SystemKind::FreeParticle,
            mass,
            omega: 0.0,
            force: 0.0,
            hbar: 1.0,
            bounds: None,
        }
        .validated()
    }

    pub fn linear(mass: f64, force: f64) -> Result<Self> {
        Self {
            kind: SystemKind::LinearPotential,
            mass,
            omega: 0.0,
            force,
            hbar: 1.0,
            bounds: None,
        }
        .validated()
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self> {
        self.hbar = hbar;
        self.validated()
    }

    pub fn with_bounds(mut self, bounds: PhaseBounds) -> Result<Self> {
        self.bounds = Some(bounds);
        self.validated()
    }

    /// Checks the parameter invariants and returns the model unchanged.
    pub fn validated(self) -> Result<Self> {
        let bad = |msg: &str| Err(KvnError::InvalidModel(msg.to_string()));
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad("mass must be finite and positive");
        }
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return bad("hbar must be finite and positive");
        }
        match self.kind {
            SystemKind::HarmonicOscillator if !(self.omega.is_finite() && self.omega > 0.0) => {
                return bad("omega must be finite and positive for the oscillator");
            }
            SystemKind::LinearPotential if !(self.force.is_finite() && self.force != 0.0) => {
                return bad("force must be finite and nonzero for the linear potential");
            }
            _ => {}
        }
        if let Some(b) = self.bounds {
            let ok = |(lo, hi): (f64, f64)| !lo.is_nan() && !hi.is_nan() && lo < hi;
            if !ok(b.q) || !ok(b.p) {
                return bad("phase bounds must be ordered intervals");
            }
        }
        Ok(self)
    }

    pub fn kinetic(&self, p: f64) -> f64 {
        p * p / (2.0 * self.mass)
    }

    pub fn potential(&self, q: f64) -> f64 {
        match self.kind {
            SystemKind::FreeParticle => 0.0,
            SystemKind::LinearPotential => -self.force * q,
            SystemKind::HarmonicOscillator => 0.5 * self.mass * self.omega * self.omega * q * q,
        }
    }

    /// `∂H/∂q`.
    pub fn dh_dq(&self, q: f64) -> f64 {
        match self.kind {
            SystemKind::FreeParticle => 0.0,
            SystemKind::LinearPotential => -self.force,
            SystemKind::HarmonicOscillator => self.mass * self.omega * self.omega * q,
        }
    }

    /// `∂H/∂p`.
    pub fn dh_dp(&self, p: f64) -> f64 {
        p / self.mass
    }

    pub fn energy(&self, pt: PhaseSample) -> f64 {
        self.kinetic(pt.p) + self.potential(pt.q)
    }

    pub fn check_domain(&self, pt: PhaseSample) -> Result<()> {
        if !(pt.q.is_finite() && pt.p.is_finite()) {
            return Err(KvnError::OutOfDomain(format!("non-finite point {pt:?}")));
        }
        if let Some(b) = self.bounds {
            if !b.contains(pt) {
                return Err(KvnError::OutOfDomain(format!("{pt:?} outside {b:?}")));
            }
        }
        Ok(())
    }

    pub fn tau_bounds(&self) -> TauRange {
        match self.kind {
            SystemKind::HarmonicOscillator => TauRange::Bounded {
                lower: -PI / self.omega,
                upper: PI / self.omega,
            },
            SystemKind::FreeParticle | SystemKind::LinearPotential => TauRange::Unbounded,
        }
    }

    pub fn tau_period(&self) -> Option<f64> {
        match self.kind {
            SystemKind::HarmonicOscillator => Some(2.0 * PI / self.omega),
            _ => None,
        }
    }

    /// Spacing `2πħ/(τ̄ − τ̲)` of the orthonormal eigenvalue lattice. For the
    /// oscillator this is `ħω`, returned in closed form so the lattice is exact.
    pub fn level_spacing(&self) -> Result<f64> {
        match self.kind {
            SystemKind::HarmonicOscillator => Ok(self.hbar * self.omega),
            _ => match self.tau_bounds().period() {
                Some(period) => Ok(2.0 * PI * self.hbar / period),
                None => Err(KvnError::UnboundedTau),
            },
        }
    }

    /// Maps `(q, p)` to `(τ, H)`.
    ///
    /// For the oscillator the three-branch arctangent reduces to
    /// `atan2(mωq, p)/ω ∈ (−π/ω, π/ω]`; on the `p = 0` axis this gives
    /// `±π/(2ω)` by continuity in `p → 0⁺`.
    pub fn dynamical_time(&self, pt: PhaseSample) -> Result<TauEnergyPoint> {
        self.check_domain(pt)?;
        let energy = self.energy(pt);
        // -0.0 + 0.0 == +0.0, keeps atan2 off the lower branch cut at q = -0
        let q = pt.q + 0.0;
        let p = pt.p + 0.0;
        match self.kind {
            SystemKind::HarmonicOscillator => {
                if q == 0.0 && p == 0.0 {
                    return Err(KvnError::OriginSingular);
                }
                let tau = (self.mass * self.omega * q).atan2(p) / self.omega;
                Ok(TauEnergyPoint::new(tau, energy))
            }
            SystemKind::FreeParticle => {
                if p == 0.0 {
                    return Err(KvnError::ZeroMomentum);
                }
                Ok(TauEnergyPoint {
                    tau: self.mass * q / p,
                    energy,
                    sheet: if p > 0.0 {
                        MomentumSheet::Positive
                    } else {
                        MomentumSheet::Negative
                    },
                })
            }
            SystemKind::LinearPotential => Ok(TauEnergyPoint::new(p / self.force, energy)),
        }
    }

    /// Maps `(τ, H)` back to `(q, p)`.
    pub fn inverse_map(&self, te: TauEnergyPoint) -> Result<PhaseSample> {
        if !(te.tau.is_finite() && te.energy.is_finite()) {
            return Err(KvnError::OutOfDomain(format!("non-finite point {te:?}")));
        }
        match self.kind {
            SystemKind::HarmonicOscillator => {
                if te.energy < 0.0 {
                    return Err(KvnError::NegativeEnergy(te.energy));
                }
                let amplitude = (2.0 * self.mass * te.energy).sqrt();
                let (s, c) = (self.omega * te.tau).sin_cos();
                Ok(PhaseSample::new(
                    amplitude * s / (self.mass * self.omega),
                    amplitude * c,
                ))
            }
            SystemKind::FreeParticle => {
                if te.energy < 0.0 {
                    return Err(KvnError::NegativeEnergy(te.energy));
                }
                let magnitude = (2.0 * self.mass * te.energy).sqrt();
                if magnitude == 0.0 {
                    return Err(KvnError::ZeroMomentum);
                }
                let p = match te.sheet {
                    MomentumSheet::Positive => magnitude,
                    MomentumSheet::Negative => -magnitude,
                };
                Ok(PhaseSample::new(te.tau * p / self.mass, p))
            }
            SystemKind::LinearPotential => {
                let p = self.force * te.tau;
                Ok(PhaseSample::new((self.kinetic(p) - te.energy) / self.force, p))
            }
        }
    }

    /// Exact image of `pt` under the Hamiltonian flow after time `t`.
    pub fn flow(&self, pt: PhaseSample, t: f64) -> Result<PhaseSample> {
        self.check_domain(pt)?;
        let m = self.mass;
        Ok(match self.kind {
            SystemKind::FreeParticle => PhaseSample::new(pt.q + pt.p * t / m, pt.p),
            SystemKind::LinearPotential => {
                let f = self.force;
                PhaseSample::new(pt.q + pt.p * t / m + 0.5 * f * t * t / m, pt.p + f * t)
            }
            SystemKind::HarmonicOscillator => {
                let w = self.omega;
                let (s, c) = (w * t).sin_cos();
                PhaseSample::new(
                    pt.q * c + pt.p * s / (m * w),
                    pt.p * c - m * w * pt.q * s,
                )
            }
        })
    }

    /// Wraps `tau` into the principal interval `(τ̲, τ̄]` for bounded models.
    pub fn wrap_tau(&self, tau: f64) -> f64 {
        match self.tau_bounds() {
            TauRange::Bounded { lower, upper } => {
                let period = upper - lower;
                let mut x = (tau - lower).rem_euclid(period) + lower;
                if x <= lower {
                    x += period;
                }
                x
            }
            TauRange::Unbounded => tau,
        }
    }
}
