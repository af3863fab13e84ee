//! Run configuration: a TOML file with `[model]`, `[grid]`, `[spectral]`,
//! `[example]`, `[run]`, `[output]` and `[tolerances]` sections. Command-line
//! flags are layered on top by the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnergyProfile;
use crate::model::HamiltonianModel;
use crate::worked::{BoxStateSpec, ExampleSpec, ShiftedCanonicalSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SystemArg {
    #[default]
    Sho,
    Free,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub system: SystemArg,
    pub m: f64,
    pub omega: f64,
    pub force: f64,
    pub hbar: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            system: SystemArg::Sho,
            m: 1.0,
            omega: 1.0,
            force: 1.0,
            hbar: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Nodes per axis of the `(q,p)` output grid.
    pub nodes: usize,
    /// Half-width of the square `(q,p)` window; derived from the example when absent.
    pub extent: Option<f64>,
    /// τ nodes of quadrature grids; derived from `N` when absent.
    pub tau_nodes: Option<usize>,
    /// Energy nodes of quadrature grids.
    pub energy_nodes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nodes: 256,
            extent: None,
            tau_nodes: None,
            energy_nodes: 64,
        }
    }
}

/// Truncation `N`: a fixed window or doubling until the completeness gain is small.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    Fixed(usize),
    Auto,
}

impl std::str::FromStr for Truncation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Truncation::Auto);
        }
        s.parse::<usize>()
            .map(Truncation::Fixed)
            .map_err(|_| format!("expected a non-negative integer or \"auto\", got {s:?}"))
    }
}

impl Serialize for Truncation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Truncation::Fixed(n) => s.serialize_u64(*n as u64),
            Truncation::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Truncation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Truncation::Fixed(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub nmax: Truncation,
    pub epsilon0: f64,
    /// Basis profile for `basis` runs without an example.
    pub profile: Option<EnergyProfile>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            nmax: Truncation::Fixed(16),
            epsilon0: 0.0,
            profile: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    #[default]
    Box,
    Shifted,
    /// Amplitude grid read from a JSON file.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExampleSection {
    pub kind: ExampleKind,
    pub tau_center: f64,
    pub tau_width: f64,
    pub energy_center: f64,
    pub energy_width: f64,
    pub beta: f64,
    pub q_shift: f64,
    pub basis_beta: Option<f64>,
    /// Grid file for `kind = "file"`.
    pub input: Option<PathBuf>,
    /// Profile used to expand a file grid.
    pub profile: Option<EnergyProfile>,
}

impl Default for ExampleSection {
    fn default() -> Self {
        Self {
            kind: ExampleKind::Box,
            tau_center: 0.0,
            tau_width: std::f64::consts::FRAC_PI_2,
            energy_center: 1.0,
            energy_width: 0.5,
            beta: 1.0,
            q_shift: 1.0,
            basis_beta: None,
            input: None,
            profile: None,
        }
    }
}

impl ExampleSection {
    /// The analytic example, or `None` for file input.
    pub fn spec(&self) -> Option<ExampleSpec> {
        match self.kind {
            ExampleKind::Box => Some(ExampleSpec::Box(BoxStateSpec {
                tau_center: self.tau_center,
                tau_width: self.tau_width,
                energy_center: self.energy_center,
                energy_width: self.energy_width,
            })),
            ExampleKind::Shifted => Some(ExampleSpec::ShiftedCanonical(ShiftedCanonicalSpec {
                beta: self.beta,
                q_shift: self.q_shift,
                basis_beta: self.basis_beta,
            })),
            ExampleKind::File => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Check {
    Orthonormality,
    Hermiticity,
    KvnResidual,
    LiouvilleResidual,
    Uncertainty,
    Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub times: Vec<f64>,
    /// Inverse temperature for `partition`.
    pub beta: f64,
    pub check: Option<Check>,
    /// Time step of the Liouville residual stencil.
    pub dt: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            times: vec![0.0, 1.0],
            beta: 1.0,
            check: None,
            dt: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
    /// Significant digits; shortest round-trip when absent.
    pub precision: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Csv,
            precision: None,
        }
    }
}

/// Named tolerances; any name may be overridden with `--tol NAME=VAL`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tolerances(pub BTreeMap<String, f64>);

pub const TOLERANCE_NAMES: &[(&str, f64)] = &[
    ("orthonormality", 1e-8),
    ("hermiticity", 1e-8),
    ("residual", 1e-6),
    ("liouville", 1e-4),
    ("uncertainty", 1e-9),
    ("parseval", 1e-9),
    ("coefficients", 1e-8),
    ("oracle_l2", 0.10),
];

impl Default for Tolerances {
    fn default() -> Self {
        Self(TOLERANCE_NAMES.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

impl Tolerances {
    pub fn get(&self, name: &str) -> f64 {
        self.0[name]
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ConfigError> {
        if !TOLERANCE_NAMES.iter().any(|(k, _)| *k == name) {
            return Err(ConfigError::Invalid(format!(
                "unknown tolerance {name:?}; known: {}",
                TOLERANCE_NAMES.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
            )));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(ConfigError::Invalid(format!("tolerance {name} = {value} must be finite and non-negative")));
        }
        self.0.insert(name.to_string(), value);
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub spectral: SpectralSection,
    pub example: ExampleSection,
    pub run: RunSection,
    pub output: OutputSection,
    #[serde(default)]
    tolerances: BTreeMap<String, f64>,
    #[serde(skip)]
    resolved: Option<Tolerances>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        let mut tol = Tolerances::default();
        for (k, v) in std::mem::take(&mut cfg.tolerances) {
            tol.set(&k, v)?;
        }
        cfg.resolved = Some(tol);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn tolerances(&self) -> Tolerances {
        self.resolved.clone().unwrap_or_default()
    }

    pub fn tolerances_mut(&mut self) -> &mut Tolerances {
        self.resolved.get_or_insert_with(Tolerances::default)
    }

    pub fn build_model(&self) -> Result<HamiltonianModel, ConfigError> {
        let m = &self.model;
        let model = match m.system {
            SystemArg::Sho => HamiltonianModel::harmonic(m.m, m.omega),
            SystemArg::Free => HamiltonianModel::free_particle(m.m),
            SystemArg::Linear => HamiltonianModel::linear(m.m, m.force),
        }
        .and_then(|model| model.with_hbar(m.hbar));
        model.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks ranges that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_model()?;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.grid.nodes < crate::amplitude::MIN_AXIS_NODES {
            return bad(format!("grid.nodes = {} is below 8", self.grid.nodes));
        }
        if self.grid.energy_nodes < crate::amplitude::MIN_AXIS_NODES {
            return bad(format!("grid.energy_nodes = {} is below 8", self.grid.energy_nodes));
        }
        if let Some(e) = self.grid.extent {
            if !(e.is_finite() && e > 0.0) {
                return bad(format!("grid.extent = {e} must be positive"));
            }
        }
        if self.run.times.iter().any(|t| !t.is_finite()) {
            return bad("run.times must be finite".into());
        }
        if self.run.times.windows(2).any(|w| w[1] < w[0]) {
            return bad("run.times must be sorted ascending".into());
        }
        if !(self.run.dt.is_finite() && self.run.dt > 0.0) {
            return bad(format!("run.dt = {} must be positive", self.run.dt));
        }
        if !self.spectral.epsilon0.is_finite() {
            return bad("spectral.epsilon0 must be finite".into());
        }
        if let Some(p) = self.output.precision {
            if p == 0 || p > 17 {
                return bad(format!("output.precision = {p} must be in 1..=17"));
            }
        }
        if self.example.kind == ExampleKind::File && self.example.input.is_none() {
            return bad("example.kind = \"file\" needs example.input".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.model.system, SystemArg::Sho);
        assert_eq!(cfg.spectral.nmax, Truncation::Fixed(16));
        assert_eq!(cfg.tolerances().get("orthonormality"), 1e-8);
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            [model]
            system = "sho"
            omega = 2.0

            [spectral]
            nmax = "auto"

            [example]
            kind = "shifted"
            beta = 0.5
            q_shift = 2.0

            [run]
            times = [0.0, 0.5, 1.0]

            [tolerances]
            residual = 1e-5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.spectral.nmax, Truncation::Auto);
        assert_eq!(cfg.tolerances().get("residual"), 1e-5);
        assert!(matches!(cfg.example.spec(), Some(ExampleSpec::ShiftedCanonical(_))));
        assert_eq!(cfg.build_model().unwrap().omega, 2.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[model]\nmass = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml("[tolerances]\nbogus = 1.0"),
            Err(ConfigError::Invalid(_))
        ));
        let cfg = RunConfig::from_toml("[run]\ntimes = [1.0, 0.0]").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg = RunConfig::from_toml("[model]\nomega = -1.0").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
