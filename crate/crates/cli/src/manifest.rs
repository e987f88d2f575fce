//! Run manifests: one TOML file per experiment run.
//!
//! ```toml
//! experiment = "egorov-quartic"
//! seed = 7
//! h_ladder = [0.125, 0.0625, 0.03125, 0.015625]
//! times = [1.0]
//! out = "results"
//!
//! [hamiltonian]
//! kind = "quartic"
//!
//! [grid]
//! length = 6.0
//! points = 0        # 0 = choose from h and xi_max
//! xi_max = 3.0
//!
//! [sampling]
//! quadrature = "tensor"
//! per_axis = 8
//! nodes = 8
//!
//! [tolerances]
//! harmonic_residual = 1e-6
//!
//! [windows]
//! residual = [1.7, 2.3]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semiclassical::phasespace::{Free, Hamiltonian, Harmonic, Quartic};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u32,
    pub h_ladder: Vec<f64>,
    #[serde(default)]
    pub times: Vec<f64>,
    /// Secondary scan values (e.g. impact parameters in units of √h).
    #[serde(default)]
    pub sweep: Vec<f64>,
    pub out: PathBuf,
    pub hamiltonian: HamiltonianSpec,
    pub grid: GridConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub windows: BTreeMap<String, [f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    /// free | harmonic | quartic | conical | rotating | none
    pub kind: String,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub length: f64,
    #[serde(default)]
    pub points: usize,
    pub xi_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// tensor | stratified
    pub quadrature: String,
    pub per_axis: usize,
    pub nodes: usize,
}

pub const HAMILTONIANS: &[&str] = &["free", "harmonic", "quartic", "conical", "rotating", "none"];

impl HamiltonianSpec {
    pub fn named(kind: &str) -> Self {
        Self { kind: kind.into(), dim: None, params: BTreeMap::new() }
    }

    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    /// Scalar Hamiltonian for the kinds that have one.
    pub fn build(&self) -> Result<Box<dyn Hamiltonian>, Error> {
        let d = self.dim.unwrap_or(1);
        Ok(match self.kind.as_str() {
            "free" => Box::new(Free { d }),
            "harmonic" => Box::new(Harmonic { d, omega: self.param("omega", 1.0) }),
            "quartic" => Box::new(Quartic { d }),
            other => {
                return Err(Error::Schema(vec![format!("hamiltonian.kind = {other:?} has no scalar Hamiltonian")]))
            }
        })
    }
}

impl RunManifest {
    pub fn from_toml(s: &str) -> Result<Self, Error> {
        toml::from_str(s).map_err(|e| Error::Schema(vec![e.message().to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifests always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, Error> {
        serde_json::from_str(s).map_err(|e| Error::Schema(vec![e.to_string()]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests always serialize")
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tolerance(&self, key: &str) -> Result<f64, Error> {
        self.tolerances
            .get(key)
            .copied()
            .ok_or_else(|| Error::Schema(vec![format!("{}: missing tolerances.{key}", self.experiment)]))
    }

    pub fn window(&self, key: &str) -> Result<(f64, f64), Error> {
        self.windows
            .get(key)
            .map(|w| (w[0], w[1]))
            .ok_or_else(|| Error::Schema(vec![format!("{}: missing windows.{key}", self.experiment)]))
    }

    /// Sorted, deduplicated ladder (coarse to fine).
    pub fn ladder(&self) -> Vec<f64> {
        let mut v = self.h_ladder.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        v
    }

    /// Structural checks; experiment-specific requirements are added by the
    /// catalog.
    pub fn schema_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.h_ladder.is_empty() {
            errs.push("h_ladder is empty".to_string());
        }
        for h in &self.h_ladder {
            if !(h.is_finite() && *h > 0.0 && *h <= 1.0) {
                errs.push(format!("h_ladder entry {h} is outside (0, 1]"));
            }
        }
        if self.ladder().len() != self.h_ladder.len() {
            errs.push("h_ladder has repeated entries".to_string());
        }
        if self.times.iter().chain(&self.sweep).any(|t| !t.is_finite()) {
            errs.push("times and sweep values must be finite".to_string());
        }
        if !HAMILTONIANS.contains(&self.hamiltonian.kind.as_str()) {
            errs.push(format!("hamiltonian.kind = {:?}; expected one of {HAMILTONIANS:?}", self.hamiltonian.kind));
        }
        if self.hamiltonian.dim == Some(0) {
            errs.push("hamiltonian.dim must be positive".to_string());
        }
        if !(self.grid.length.is_finite() && self.grid.length > 0.0) {
            errs.push("grid.length must be positive".to_string());
        }
        if !(self.grid.xi_max.is_finite() && self.grid.xi_max > 0.0) {
            errs.push("grid.xi_max must be positive".to_string());
        }
        if !matches!(self.sampling.quadrature.as_str(), "tensor" | "stratified") {
            errs.push(format!(
                "sampling.quadrature = {:?}; expected \"tensor\" or \"stratified\"",
                self.sampling.quadrature
            ));
        }
        if self.sampling.per_axis == 0 || self.sampling.nodes == 0 {
            errs.push("sampling.per_axis and sampling.nodes must be positive".to_string());
        }
        for (k, v) in &self.tolerances {
            if !(v.is_finite() && *v >= 0.0) {
                errs.push(format!("tolerances.{k} = {v} is not a non-negative number"));
            }
        }
        for (k, [lo, hi]) in &self.windows {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                errs.push(format!("windows.{k} = [{lo}, {hi}] is not an interval"));
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> RunManifest {
        RunManifest {
            experiment: "egorov-quartic".into(),
            seed: 7,
            h_ladder: vec![0.125, 0.0625, 0.03125, 0.015625],
            times: vec![1.0],
            sweep: Vec::new(),
            out: "results".into(),
            hamiltonian: HamiltonianSpec::named("quartic"),
            grid: GridConfig { length: 6.0, points: 0, xi_max: 3.0 },
            sampling: SamplingConfig { quadrature: "tensor".into(), per_axis: 8, nodes: 8 },
            tolerances: [("harmonic_residual".to_string(), 1e-6)].into(),
            windows: [("residual".to_string(), [1.7, 2.3])].into(),
        }
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("manifest.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let m = RunManifest::from_toml(&doc).unwrap();
        assert_eq!(m, sample());
        assert!(m.schema_errors().is_empty());
    }

    #[test]
    fn schema_errors_are_listed() {
        let mut m = sample();
        m.h_ladder.clear();
        m.grid.length = -1.0;
        m.sampling.quadrature = "sobol".into();
        let errs = m.schema_errors();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(matches!(RunManifest::from_toml("experiment = 1"), Err(Error::Schema(_))));
        assert!(RunManifest::from_toml(&format!("{}\nbogus = 1\n", sample().to_toml())).is_err());
    }

    #[test]
    fn missing_tolerance_is_a_schema_error() {
        assert!(matches!(sample().tolerance("nope"), Err(Error::Schema(_))));
        assert_eq!(sample().window("residual").unwrap(), (1.7, 2.3));
    }

    #[test]
    fn hash_tracks_content() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    proptest! {
        #[test]
        fn serialized_round_trips_are_lossless(
            seed in any::<u32>(),
            ladder in prop::collection::vec(1e-6f64..1.0, 1..8),
            len in 0.1f64..100.0,
            tol in 0.0f64..1.0,
            lo in -3.0f64..3.0,
        ) {
            let mut m = sample();
            m.seed = seed;
            m.h_ladder = ladder;
            m.grid.length = len;
            m.tolerances.insert("x".into(), tol);
            m.windows.insert("w".into(), [lo, lo + 1.0]);
            m.hamiltonian.params.insert("omega".into(), len.sqrt());
            let back = RunManifest::from_toml(&m.to_toml()).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.hash(), m.hash());
            prop_assert_eq!(&RunManifest::from_json(&m.to_json()).unwrap(), &m);
        }
    }
}
