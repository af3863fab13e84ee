//! Acceptance gate: criteria 1–9 at their pinned tolerances, one PASS/FAIL
//! line each. Runs without the test harness so every line is printed.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use kvn_spectral::amplitude::GridLayout;
use kvn_spectral::ensemble::{
    log_partition_function, mean_energy, partition_function, CanonicalState, EnergyProfile, Region, StationaryState,
};
use kvn_spectral::kvn::{apply_tilde_hamiltonian, gauge_transform, kvn_residual, Gauge, GaugePhase};
use kvn_spectral::model::HamiltonianModel;
use kvn_spectral::quadrature::Axis;
use kvn_spectral::spectral::{
    expand, expand_auto, expand_stationary, gram_matrix, liouville_residual, reconstruct_density,
    select_spectrum, BasisFamily, SpectralExpansion,
};
use kvn_spectral::worked::{
    box_coefficients, box_initial_grid, oracle_density, shifted_canonical_coefficients, shifted_initial_grid,
    uncertainty_product, BoxStateSpec, ShiftedCanonicalSpec, ShiftedGrid,
};

/// N = 128 relative L2 error of the box example at t = 1, from the pre-build
/// oracle run (0.069292), rounded up in the fifth digit.
const BOX_ORACLE_PIN: f64 = 0.06930;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sho(m: f64, omega: f64) -> HamiltonianModel {
    HamiltonianModel::harmonic(m, omega).unwrap()
}

fn shell(center: f64, width: f64) -> EnergyProfile {
    EnergyProfile::MicrocanonicalShell { center, width }
}

fn c1_orthonormality() -> Outcome {
    let start = Instant::now();
    let model = sho(1.0, 1.0);
    let family = BasisFamily::Shared(shell(1.0, 0.5));
    let n = 16;
    let layout = GridLayout::tau_energy(&model, 256, Axis::gauss_legendre(0.75, 1.25, 16)).unwrap();
    let quad = gram_matrix(&model, &family, n, Some(&layout)).unwrap();
    let closed = gram_matrix(&model, &family, n, None).unwrap();
    let mut worst_quad: f64 = 0.0;
    let mut closed_exact = true;
    for i in 0..=2 * n {
        for j in 0..=2 * n {
            let delta = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            worst_quad = worst_quad.max((quad[i][j] - delta).norm());
            closed_exact &= closed[i][j] == delta;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_quad <= 1e-8 && closed_exact && elapsed < Duration::from_secs(10),
        format!("max |G-I| = {worst_quad:.3e} (quadrature), closed form exact = {closed_exact}, {elapsed:.2?}"),
    )
}

fn c2_spectrum() -> Outcome {
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for omega in [0.5, 1.0, 3.0] {
        let model = sho(1.0, omega);
        let eps = select_spectrum(&model, 0.0, 16).unwrap();
        for (k, e) in eps.iter().enumerate() {
            let n = k as f64 - 16.0;
            exact &= *e == n * model.hbar * omega;
        }
        let profile = shell(1.0, 0.5);
        let layout = GridLayout::tau_energy(&model, 128, profile.energy_axis(128)).unwrap();
        for n in -16i64..=16 {
            let chi = StationaryState {
                profile: profile.clone(),
                mode: Some(n),
                epsilon: eps[(n + 16) as usize],
                time: 0.0,
                period: 2.0 * PI / omega,
            }
            .sample(&model, &layout)
            .unwrap();
            let h = apply_tilde_hamiltonian(&model, &Gauge::Zero, &chi).unwrap();
            let e = n as f64 * omega;
            let r: f64 = (0..layout.len())
                .map(|k| layout.weight(k) * (h.values[k] - e * chi.values[k]).norm_sqr())
                .sum();
            worst = worst.max(r.sqrt());
        }
    }
    outcome(
        exact && worst <= 1e-6,
        format!("eps_n == n hbar omega exactly: {exact}; max ||H~chi_n - eps_n chi_n|| = {worst:.3e}"),
    )
}

/// `√(ω/2πΔτ) ∫ e^{−inωτ} dτ` over the box, integrated directly.
fn box_integral(spec: &BoxStateSpec, omega: f64, n: i64) -> Complex64 {
    let norm = (omega / (2.0 * PI * spec.tau_width)).sqrt();
    let (a, b) = (spec.tau_center - 0.5 * spec.tau_width, spec.tau_center + 0.5 * spec.tau_width);
    if n == 0 {
        return Complex64::new(norm * (b - a), 0.0);
    }
    let k = Complex64::new(0.0, -(n as f64) * omega);
    norm * ((k * b).exp() - (k * a).exp()) / k
}

fn c3_box_coefficients() -> Outcome {
    let model = sho(1.0, 1.0);
    let spec = BoxStateSpec {
        tau_center: 0.3,
        tau_width: 1.1,
        energy_center: 1.0,
        energy_width: 0.5,
    };
    let closed = box_coefficients(&spec, &model, 64).unwrap();
    let grid = box_initial_grid(&spec, &model, 64, 16, 8).unwrap();
    let quad = expand(&model, &grid, &BasisFamily::Shared(spec.profile()), 64).unwrap();
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for n in -64i64..=64 {
        worst = worst.max((closed.coefficient(n) - quad.coefficient(n)).norm());
        worst_oracle = worst_oracle.max((closed.coefficient(n) - box_integral(&spec, 1.0, n)).norm());
    }
    let c0 = closed.coefficient(0).norm_sqr() - spec.tau_width / (2.0 * PI);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bound_ok = 0;
    let mut margin = f64::INFINITY;
    for _ in 0..20 {
        let omega = Uniform::new(0.5, 3.0).sample(&mut rng);
        let model = sho(1.0, omega);
        let period = 2.0 * PI / omega;
        let s = BoxStateSpec {
            tau_center: Uniform::new(-0.5, 0.5).sample(&mut rng) * period,
            tau_width: Uniform::new(0.02, 1.0).sample(&mut rng) * period,
            energy_center: Uniform::new(1.0, 3.0).sample(&mut rng),
            energy_width: Uniform::new(0.1, 1.0).sample(&mut rng),
        };
        let sum = box_coefficients(&s, &model, 512).unwrap().completeness;
        let x = omega * s.tau_width;
        let rhs = x / (2.0 * PI) + 2.0 * PI / (3.0 * x);
        margin = margin.min(rhs - sum);
        bound_ok += usize::from(sum <= rhs);
    }
    outcome(
        worst <= 1e-8 && worst_oracle <= 1e-12 && c0.abs() <= 1e-10 && bound_ok == 20,
        format!(
            "closed vs quadrature {worst:.3e}, closed vs direct integral {worst_oracle:.3e}, \
             |c0|^2 error {:.3e}, bound held {bound_ok}/20 (min margin {margin:.3e})",
            c0.abs()
        ),
    )
}

/// Density of the box at `(q,p)` by following the characteristic back to t = 0.
fn box_characteristic(spec: &BoxStateSpec, omega: f64, q: f64, p: f64, t: f64) -> f64 {
    let (s, c) = (omega * t).sin_cos();
    let (q0, p0) = (q * c - p * s / omega, p * c + omega * q * s);
    let energy = 0.5 * p0 * p0 + 0.5 * omega * omega * q0 * q0;
    let tau = (omega * q0).atan2(p0) / omega;
    let period = 2.0 * PI / omega;
    let mut d = (tau - spec.tau_center).rem_euclid(period);
    if d > 0.5 * period {
        d -= period;
    }
    let inside = d.abs() <= 0.5 * spec.tau_width && (energy - spec.energy_center).abs() <= 0.5 * spec.energy_width;
    if inside {
        1.0 / (spec.tau_width * spec.energy_width)
    } else {
        0.0
    }
}

fn c4_box_evolution() -> Outcome {
    let start = Instant::now();
    let model = sho(1.0, 1.0);
    let spec = BoxStateSpec {
        tau_center: 0.0,
        tau_width: PI / 2.0,
        energy_center: 1.0,
        energy_width: 0.5,
    };
    let t = 1.0;
    let layout = GridLayout::phase_space((-1.6, 1.6), (-1.6, 1.6), 256, 256).unwrap();
    let oracle: Vec<f64> = (0..layout.len())
        .map(|k| {
            let (q, p) = layout.node(k);
            box_characteristic(&spec, 1.0, q, p, t)
        })
        .collect();
    let lib_oracle = oracle_density(&kvn_spectral::worked::ExampleSpec::Box(spec), &model, t, &layout).unwrap();
    let oracle_mismatch = lib_oracle.values.iter().zip(&oracle).filter(|(a, b)| a != b).count();
    let oracle_norm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
    let full = box_coefficients(&spec, &model, 128).unwrap();
    let errors: Vec<f64> = [16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let rho = reconstruct_density(&full.truncated(n).unwrap(), t, &layout).unwrap();
            let diff: f64 = rho.values.iter().zip(&oracle).map(|(a, b)| (a - b) * (a - b)).sum();
            diff.sqrt() / oracle_norm
        })
        .collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let elapsed = start.elapsed();
    outcome(
        monotone && errors[3] <= BOX_ORACLE_PIN && oracle_mismatch == 0 && elapsed < Duration::from_secs(60),
        format!(
            "rel L2 at N=16,32,64,128: {:.5} {:.5} {:.5} {:.5} (pin {BOX_ORACLE_PIN}), \
             library oracle mismatches {oracle_mismatch}, {elapsed:.2?}",
            errors[0], errors[1], errors[2], errors[3]
        ),
    )
}

/// Norm bound for the shifted ensemble at `x = βU_i`.
fn shifted_bound(x: f64) -> f64 {
    let e = statrs::function::erf::erf(x.sqrt() / 2.0);
    let a = (-x / 4.0).exp() / x.sqrt() + PI.sqrt() / 2.0 * e;
    x * (-x / 2.0).exp() * (a * a + PI / 4.0 * (1.0 + e / 3.0))
}

fn c5_shifted() -> Outcome {
    let model = sho(1.0, 1.0);
    let origin = ShiftedCanonicalSpec {
        beta: 1.0,
        q_shift: 0.0,
        basis_beta: None,
    };
    let c0 = shifted_canonical_coefficients(&origin, &model, 8, ShiftedGrid::for_window(8))
        .unwrap()
        .expansion
        .coefficient(0);
    let c0_err = (c0 - 1.0).norm();
    let mut pass = c0_err <= 1e-10;
    let mut detail = format!("q_i=0: |c0-1| = {c0_err:.2e}");
    for x in [0.25, 1.0, 4.0] {
        let spec = ShiftedCanonicalSpec::from_beta_u(&model, 1.0, x);
        let grid = shifted_initial_grid(&spec, &model, 1024, 96).unwrap();
        let auto = expand_auto(&model, &grid, &spec.profile()).unwrap();
        let rhs = shifted_bound(x);
        let mut parity: f64 = 0.0;
        for n in 1..=auto.n_max as i64 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            parity = parity.max((auto.coefficient(-n) - sign * auto.coefficient(n)).norm());
        }
        for n in -(auto.n_max as i64)..=auto.n_max as i64 {
            // i^n c_n is real
            let rotated = Complex64::new(0.0, 1.0).powi(n as i32) * auto.coefficient(n);
            parity = parity.max(rotated.im.abs());
        }
        let ok = auto.completeness <= rhs && auto.completeness >= 0.99 && parity <= 1e-9;
        pass &= ok;
        detail.push_str(&format!(
            "; bU={x}: N={} sum={:.4} rhs={rhs:.4} parity {parity:.1e}",
            auto.n_max, auto.completeness
        ));
    }
    outcome(pass, detail)
}

fn c6_thermodynamics() -> Outcome {
    let model = sho(1.0, 1.0);
    let region = Region::full_plane();
    let z = partition_function(&model, 1.0, &region).unwrap();
    let z_err = (z / (2.0 * PI) - 1.0).abs();
    let mut worst: f64 = 0.0;
    let mut log_z: f64 = 0.0;
    for beta in [0.5, 1.0, 2.0] {
        let m = mean_energy(&model, beta, &region).unwrap();
        worst = worst.max((m.quadrature - 1.0 / beta).abs());
        worst = worst.max((m.log_derivative - 1.0 / beta).abs());
        let lz = log_partition_function(&model, beta, &region).unwrap();
        log_z = log_z.max((lz - (2.0 * PI / beta).ln()).abs());
    }
    outcome(
        z_err <= 1e-8 && worst <= 1e-6 && log_z <= 1e-8,
        format!("Z(1)/2pi - 1 = {z_err:.2e}; max |ln Z - ln(2pi/beta)| = {log_z:.2e}; max |<H> - 1/beta| = {worst:.2e}"),
    )
}

fn c7_residuals() -> Outcome {
    let model = sho(1.0, 1.0);
    let dt = 1e-5;
    let t = 0.4;
    let canonical_layout =
        GridLayout::tau_energy(&model, 128, Axis::gauss_legendre_sqrt(0.0, 40.0, 128)).unwrap();
    let mut kvn: f64 = 0.0;
    for (beta, eps) in [(1.0, 0.0), (0.5, 0.7), (2.0, -1.3)] {
        let state = CanonicalState::new(&model, beta, eps, Region::full_plane()).unwrap();
        let slices: Vec<_> = [t - dt, t, t + dt]
            .iter()
            .map(|s| state.sample(&model, &canonical_layout, *s).unwrap())
            .collect();
        kvn = kvn.max(kvn_residual(&model, &Gauge::ConstantEpsilon(eps), &slices).unwrap());
    }
    let profile = shell(1.0, 0.5);
    let basis_layout = GridLayout::tau_energy(&model, 128, profile.energy_axis(128)).unwrap();
    let family = BasisFamily::Shared(profile);
    for n in -16i64..=16 {
        let slices: Vec<_> = [t - dt, t, t + dt]
            .iter()
            .map(|s| family.basis_state(&model, n, 16, 0.0, *s).unwrap().sample(&model, &basis_layout).unwrap())
            .collect();
        kvn = kvn.max(kvn_residual(&model, &Gauge::Zero, &slices).unwrap());
    }
    let mut liouville: f64 = 0.0;
    for x in [0.25, 1.0, 4.0] {
        let spec = ShiftedCanonicalSpec::from_beta_u(&model, 1.0, x);
        let exp = shifted_canonical_coefficients(&spec, &model, 16, ShiftedGrid::for_window(16))
            .unwrap()
            .expansion;
        let layout = GridLayout::tau_energy(&model, 256, spec.profile().energy_axis(256)).unwrap();
        liouville = liouville.max(liouville_residual(&exp, 1.0, 1e-3, &layout).unwrap());
    }
    outcome(
        kvn <= 1e-6 && liouville <= 1e-4,
        format!("max KvN residual {kvn:.3e}; shifted-ensemble Liouville residual {liouville:.3e} (256^2, dt=1e-3)"),
    )
}

fn c8_gauge() -> Outcome {
    let model = sho(1.0, 1.0);
    let layout = GridLayout::tau_energy(&model, 64, Axis::gauss_legendre_sqrt(0.0, 30.0, 64)).unwrap();
    let (beta, eps, t) = (1.3, 0.7, 0.3);
    let state = CanonicalState::new(&model, beta, eps, Region::full_plane()).unwrap();
    let chi = state.sample(&model, &layout, t).unwrap();
    let (moved, gauge) = gauge_transform(&chi, &Gauge::ConstantEpsilon(eps), GaugePhase::EpsilonTau(eps), &model).unwrap();
    let z = 2.0 * PI / beta;
    let mut worst: f64 = 0.0;
    for k in 0..layout.len() {
        let (tau, h) = layout.node(k);
        let expected = Complex64::from_polar((-beta * h / 2.0).exp() / z.sqrt(), eps * (tau - t));
        worst = worst.max((moved.values[k] - expected).norm());
    }
    let continuum = StationaryState::continuum(&model, EnergyProfile::CanonicalHalfBoltzmann { beta }, eps, t)
        .unwrap()
        .sample(&model, &layout)
        .unwrap();
    let library_gap = moved
        .values
        .iter()
        .zip(&continuum.values)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    // densities: the transform is a pure phase
    let mut density_ulps: f64 = 0.0;
    for phase in [GaugePhase::Constant(2.1), GaugePhase::EpsilonTau(eps)] {
        let (g, _) = gauge_transform(&chi, &Gauge::ConstantEpsilon(eps), phase, &model).unwrap();
        for (a, b) in chi.density().values.iter().zip(&g.density().values) {
            if *a > 0.0 {
                density_ulps = density_ulps.max((a - b).abs() / (a * f64::EPSILON));
            }
        }
    }
    outcome(
        worst <= 1e-12 && library_gap <= 1e-12 && gauge == Gauge::Zero && density_ulps <= 4.0,
        format!(
            "phi=eps*tau: max |chi' - chi_0| = {worst:.2e} (vs continuum state {library_gap:.2e}), \
             new gauge zero = {}, density change <= {density_ulps:.1} ulp",
            gauge == Gauge::Zero
        ),
    )
}

fn c9_uncertainty() -> Outcome {
    let model = sho(1.0, 1.0);
    let family = BasisFamily::Shared(shell(1.0, 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut min_product = f64::INFINITY;
    for _ in 0..50 {
        let n = Uniform::new_inclusive(1usize, 8).sample(&mut rng);
        let values: Vec<Complex64> = (0..2 * n + 1)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let norm = values.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let values = values.into_iter().map(|c| c / norm).collect();
        let exp = SpectralExpansion::from_coefficients(model, family.clone(), 0.0, 0.0, values).unwrap();
        min_product = min_product.min(uncertainty_product(&exp).unwrap().product);
    }
    let box_spec = BoxStateSpec {
        tau_center: 0.0,
        tau_width: PI / 2.0,
        energy_center: 1.0,
        energy_width: 0.5,
    };
    let box_product = uncertainty_product(&box_coefficients(&box_spec, &model, 64).unwrap()).unwrap().product;
    let shifted: Vec<f64> = [0.25, 1.0, 4.0]
        .iter()
        .map(|&x| {
            let spec = ShiftedCanonicalSpec::from_beta_u(&model, 1.0, x);
            let exp = shifted_canonical_coefficients(&spec, &model, 16, ShiftedGrid::for_window(16))
                .unwrap()
                .expansion;
            uncertainty_product(&exp).unwrap().product
        })
        .collect();
    let shifted_min = shifted.iter().copied().fold(f64::INFINITY, f64::min);
    let eigen = StationaryState {
        profile: shell(1.0, 0.5),
        mode: Some(3),
        epsilon: 3.0,
        time: 0.0,
        period: 2.0 * PI,
    };
    let single = uncertainty_product(&expand_stationary(&model, &eigen, &family, 4).unwrap()).unwrap();
    let uniform_std = 2.0 * PI / 12f64.sqrt();
    let bound = 0.5 - 1e-9;
    let pass = min_product >= bound
        && box_product >= bound
        && shifted_min >= bound
        && single.delta_eps <= 1e-10
        && (single.delta_tau - uniform_std).abs() <= 1e-10;
    outcome(
        pass,
        format!(
            "min product: random family {min_product:.4}, box {box_product:.4}, \
             shifted at bU=0.25,1,4 {:.4} {:.4} {:.4} (bound 0.5); eigenstate dH~ {:.1e}, dtau {:.6} vs T/sqrt(12) {uniform_std:.6}",
            shifted[0], shifted[1], shifted[2], single.delta_eps, single.delta_tau
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("orthonormality", c1_orthonormality),
        ("spectrum", c2_spectrum),
        ("box coefficients", c3_box_coefficients),
        ("box evolution vs oracle", c4_box_evolution),
        ("shifted canonical", c5_shifted),
        ("thermodynamics", c6_thermodynamics),
        ("residuals", c7_residuals),
        ("gauge covariance", c8_gauge),
        ("uncertainty", c9_uncertainty),
    ];
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id} ({name}): {}", result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
