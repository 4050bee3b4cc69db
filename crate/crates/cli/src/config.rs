//! Experiment configuration: TOML or JSON files, overridden by flags.

use std::path::{Path, PathBuf};

use rmps_core::experiments::{ExperimentKind, ExperimentSpec, HamiltonianKind};
use rmps_core::mps::Boundary;
use rmps_core::statmech::Observable;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableChoice {
    PauliZ,
    /// `diag(1, -1, 0, ..., 0)`, the default for `d > 2`.
    TracelessZ,
    /// A TOML or JSON file holding `re` (and optionally `im`) rows.
    File(PathBuf),
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl ObservableChoice {
    /// Parses a flag value: `pauli-z`, `traceless-z` or a path.
    pub fn from_flag(value: &str) -> Self {
        match value {
            "pauli-z" => ObservableChoice::PauliZ,
            "traceless-z" => ObservableChoice::TracelessZ,
            path => ObservableChoice::File(PathBuf::from(path)),
        }
    }

    pub fn resolve(&self, d: usize) -> Result<Observable, CliError> {
        match self {
            ObservableChoice::PauliZ => Ok(Observable::pauli_z()),
            ObservableChoice::TracelessZ => Ok(Observable::traceless_z(d)),
            ObservableChoice::Matrix { re, im } => Ok(Observable::from_rows(re, im.as_deref())?),
            ObservableChoice::File(path) => {
                #[derive(Deserialize)]
                struct MatrixFile {
                    re: Vec<Vec<f64>>,
                    im: Option<Vec<Vec<f64>>>,
                }
                let m: MatrixFile = read_structured(path)?;
                Ok(Observable::from_rows(&m.re, m.im.as_deref())?)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryChoice {
    #[default]
    Periodic,
    /// Both bond vectors `|0>`.
    Open,
}

impl std::str::FromStr for BoundaryChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(BoundaryChoice::Periodic),
            "open" => Ok(BoundaryChoice::Open),
            other => Err(format!("unknown boundary `{other}` (expected periodic or open)")),
        }
    }
}

/// Every field optional: the shape of both config files and flag sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub bond_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_bond: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+) => {
        PartialConfig { $($field: $top.$field.or($base.$field)),+ }
    };
}

impl PartialConfig {
    /// Fields set in `top` win.
    pub fn overlay(self, top: PartialConfig) -> PartialConfig {
        overlay!(self, top, kind, d, n, bond_dim, k, l, samples, seed, epsilon, observable, boundary, hamiltonian, sweep_n, sweep_bond, output_dir)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_structured(path)
    }
}

fn read_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let err = |message: String| CliError::Config { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

pub const DEFAULT_SAMPLES: usize = 10_000;

/// A complete, validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "D")]
    pub bond_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub observable: ObservableChoice,
    pub boundary: BoundaryChoice,
    pub hamiltonian: HamiltonianKind,
    pub sweep_n: Vec<usize>,
    pub sweep_bond: Vec<usize>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Fills defaults and checks that the fields the kind needs are present.
    pub fn from_partial(p: PartialConfig) -> Result<Self, CliError> {
        let kind_name = p.kind.ok_or_else(|| CliError::missing("kind", ""))?;
        let kind = ExperimentKind::from_name(&kind_name).ok_or_else(|| {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Usage(format!("unknown experiment kind `{kind_name}` (expected one of {})", names.join(", ")))
        })?;
        let ctx = format!(" for {}", kind.name());
        let d = p.d.ok_or_else(|| CliError::missing("d", ctx.clone()))?;
        let n = p.n.ok_or_else(|| CliError::missing("n", ctx.clone()))?;
        let bond_dim = p.bond_dim.ok_or_else(|| CliError::missing("D", ctx.clone()))?;
        let required = match kind {
            ExperimentKind::Extensivity if p.k.is_none() => Some("k"),
            ExperimentKind::MaxEntropy if p.l.is_none() => Some("l"),
            ExperimentKind::NormConcentration if p.epsilon.is_none() => Some("epsilon"),
            _ => None,
        };
        if let Some(field) = required {
            return Err(CliError::missing(field, ctx));
        }
        let default_obs = if d == 2 { ObservableChoice::PauliZ } else { ObservableChoice::TracelessZ };
        let cfg = ExperimentConfig {
            kind,
            d,
            n,
            bond_dim,
            k: p.k,
            l: p.l,
            samples: p.samples.unwrap_or(DEFAULT_SAMPLES),
            seed: p.seed.unwrap_or(0),
            epsilon: p.epsilon,
            observable: p.observable.unwrap_or(default_obs),
            boundary: p.boundary.unwrap_or_default(),
            hamiltonian: p.hamiltonian.unwrap_or_default(),
            sweep_n: p.sweep_n.unwrap_or_default(),
            sweep_bond: p.sweep_bond.unwrap_or_default(),
            output_dir: p.output_dir.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.to_spec()?.validate()?;
        Ok(cfg)
    }

    pub fn to_partial(&self) -> PartialConfig {
        PartialConfig {
            kind: Some(self.kind.name().to_string()),
            d: Some(self.d),
            n: Some(self.n),
            bond_dim: Some(self.bond_dim),
            k: self.k,
            l: self.l,
            samples: Some(self.samples),
            seed: Some(self.seed),
            epsilon: self.epsilon,
            observable: Some(self.observable.clone()),
            boundary: Some(self.boundary),
            hamiltonian: Some(self.hamiltonian),
            sweep_n: Some(self.sweep_n.clone()),
            sweep_bond: Some(self.sweep_bond.clone()),
            output_dir: Some(self.output_dir.clone()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_partial()).expect("config fields are always TOML-representable")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let p: PartialConfig = toml::from_str(text).map_err(|e| CliError::Config { path: "<string>".into(), message: e.to_string() })?;
        Self::from_partial(p)
    }

    pub fn to_spec(&self) -> Result<ExperimentSpec, CliError> {
        let mut spec = ExperimentSpec::new(self.kind, self.d, self.n, self.bond_dim, self.samples, self.seed);
        spec.k = self.k;
        spec.l = self.l;
        spec.epsilon = self.epsilon;
        spec.observable = self.observable.resolve(self.d)?;
        spec.boundary = match self.boundary {
            BoundaryChoice::Periodic => Boundary::Periodic,
            BoundaryChoice::Open => Boundary::open_basis(self.bond_dim),
        };
        spec.hamiltonian = self.hamiltonian;
        spec.sweep_n = self.sweep_n.clone();
        spec.sweep_bond = self.sweep_bond.clone();
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: &str) -> PartialConfig {
        PartialConfig { kind: Some(kind.into()), d: Some(2), n: Some(4), bond_dim: Some(2), ..Default::default() }
    }

    #[test]
    fn flags_override_file_values() {
        let file = PartialConfig { samples: Some(10), seed: Some(1), ..base("max-entropy") };
        let flags = PartialConfig { seed: Some(9), l: Some(1), ..Default::default() };
        let cfg = ExperimentConfig::from_partial(file.overlay(flags)).unwrap();
        assert_eq!((cfg.samples, cfg.seed, cfg.l), (10, 9, Some(1)));
    }

    #[test]
    fn missing_fields_are_named() {
        for (kind, field) in [("extensivity", "k"), ("max-entropy", "l"), ("norm-concentration", "epsilon")] {
            match ExperimentConfig::from_partial(base(kind)) {
                Err(CliError::MissingField { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{kind}: {other:?}"),
            }
        }
        let no_bond = PartialConfig { bond_dim: None, ..base("local-obs") };
        assert!(matches!(ExperimentConfig::from_partial(no_bond), Err(CliError::MissingField { field: "D", .. })));
    }

    #[test]
    fn unknown_kind_is_a_usage_error() {
        let err = ExperimentConfig::from_partial(base("teleport")).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
    }

    #[test]
    fn zero_bond_dimension_rejected() {
        let err = ExperimentConfig::from_partial(PartialConfig { bond_dim: Some(0), ..base("local-obs") }).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
        assert!(err.to_string().contains('D'));
    }

    #[test]
    fn inline_matrix_observable() {
        let text = "kind = \"local-obs\"\nd = 2\nn = 3\nD = 2\n[observable.matrix]\nre = [[1.0, 0.0], [0.0, -1.0]]\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.to_spec().unwrap().observable, Observable::pauli_z());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_partial(PartialConfig { k: Some(2), sweep_n: Some(vec![6, 8]), ..base("extensivity") }).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
