//! Built-in experiment catalog, one entry per acceptance criterion plus a
//! few named variants.

use std::collections::BTreeMap;

use semiclassical::transforms::GridSpec;

use crate::manifest::{GridConfig, HamiltonianSpec, RunManifest, SamplingConfig};
use crate::outcome::Outcome;
use crate::Error;

mod calculus;
mod dynamics;
mod phase_space;
mod reproducibility;
mod two_level;

pub type RunFn = fn(&RunManifest, &mut Outcome) -> Result<(), Error>;

pub struct Experiment {
    pub id: &'static str,
    pub criterion: u8,
    pub title: &'static str,
    pub description: &'static str,
    /// (table, column list) for every CSV the experiment writes.
    pub tables: &'static [(&'static str, &'static str)],
    /// Minimum ladder length accepted by `validate`.
    pub min_ladder: usize,
    pub manifest: fn() -> RunManifest,
    /// Reduced-cost variant of the default manifest (coarser ladder), used
    /// by the reproducibility experiment.
    pub quick: fn(RunManifest) -> RunManifest,
    pub run: RunFn,
}

impl Experiment {
    pub fn default_manifest(&self) -> RunManifest {
        (self.manifest)()
    }

    pub fn quick_manifest(&self) -> RunManifest {
        (self.quick)(self.default_manifest())
    }
}

pub fn catalog() -> &'static [Experiment] {
    CATALOG
}

pub fn find(id: &str) -> Option<&'static Experiment> {
    CATALOG.iter().find(|e| e.id == id)
}

static CATALOG: &[Experiment] = &[
    phase_space::UNCERTAINTY,
    phase_space::BARGMANN,
    phase_space::WIGNER,
    calculus::SYMBOLIC,
    calculus::GARDING,
    calculus::FUNCTIONAL,
    dynamics::WAVEPACKET,
    dynamics::HK_QUARTIC,
    dynamics::EGOROV,
    two_level::ADIABATIC,
    two_level::LANDAU_ZENER,
    reproducibility::REPRODUCIBILITY,
    dynamics::HK_FREE,
];

/// Powers 2^{-q} for q in `qs`.
pub(crate) fn dyadic(qs: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    qs.map(|q| 2f64.powi(-q)).collect()
}

pub(crate) fn base(experiment: &str, kind: &str, h_ladder: Vec<f64>) -> RunManifest {
    RunManifest {
        experiment: experiment.into(),
        seed: 7,
        h_ladder,
        times: Vec::new(),
        sweep: Vec::new(),
        out: "results".into(),
        hamiltonian: HamiltonianSpec::named(kind),
        grid: GridConfig { length: 6.0, points: 0, xi_max: 3.0 },
        sampling: SamplingConfig { quadrature: "tensor".into(), per_axis: 8, nodes: 8 },
        tolerances: BTreeMap::new(),
        windows: BTreeMap::new(),
    }
}

pub(crate) fn numerics<'a>(m: &'a RunManifest, module: &'static str) -> impl Fn(semiclassical::Error) -> Error + 'a {
    move |source| Error::Numerics { experiment: m.experiment.clone(), module, source }
}

/// Line grid of the manifest's length centred at `c`; the point count is
/// taken from the manifest or, when zero, derived from h and xi_max.
pub(crate) fn line(m: &RunManifest, c: f64, h: f64) -> Result<GridSpec, Error> {
    let g = if m.grid.points > 0 {
        GridSpec::line(c - m.grid.length / 2.0, c + m.grid.length / 2.0, m.grid.points)
    } else {
        semiclassical::propagators::line_for(c, m.grid.length, m.grid.xi_max, h)
    };
    g.map_err(numerics(m, "transforms"))
}

/// Schema errors for a manifest, including experiment-specific ones.
pub fn validate(m: &RunManifest) -> Vec<String> {
    let mut errs = m.schema_errors();
    match find(&m.experiment) {
        None => errs.push(format!("unknown experiment {:?}", m.experiment)),
        Some(e) => {
            if !m.h_ladder.is_empty() && m.h_ladder.len() < e.min_ladder {
                errs.push(format!("{} needs at least {} ladder points, got {}", e.id, e.min_ladder, m.h_ladder.len()));
            }
            let d = e.default_manifest();
            for k in d.tolerances.keys() {
                if !m.tolerances.contains_key(k) {
                    errs.push(format!("missing tolerances.{k}"));
                }
            }
            for k in d.windows.keys() {
                if !m.windows.contains_key(k) {
                    errs.push(format!("missing windows.{k}"));
                }
            }
        }
    }
    errs
}

/// Runs one manifest (no output is written).
pub fn run(m: &RunManifest) -> Result<Outcome, Error> {
    let errs = validate(m);
    if !errs.is_empty() {
        return Err(Error::Schema(errs));
    }
    let e = find(&m.experiment).expect("validated");
    let mut out = Outcome::new(e.id, e.criterion, m.hash());
    (e.run)(m, &mut out)?;
    for t in &out.tables {
        let declared = e.tables.iter().find(|(name, _)| *name == t.name).map(|(_, cols)| *cols);
        if declared != Some(t.columns.join(", ").as_str()) {
            return Err(Error::Degenerate(format!("{}: table {} does not match its documented columns", e.id, t.name)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_manifests_validate() {
        for e in catalog() {
            let m = e.default_manifest();
            assert_eq!(m.experiment, e.id);
            assert!(validate(&m).is_empty(), "{}: {:?}", e.id, validate(&m));
            assert_eq!(RunManifest::from_toml(&m.to_toml()).unwrap(), m);
        }
        let mut criteria: Vec<u8> = catalog().iter().map(|e| e.criterion).collect();
        criteria.sort();
        criteria.dedup();
        assert_eq!(criteria, (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn empty_ladder_is_a_schema_error() {
        let mut m = find("egorov-quartic").unwrap().default_manifest();
        m.h_ladder.clear();
        let err = run(&m).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        m.experiment = "nope".into();
        assert!(validate(&m).iter().any(|e| e.contains("unknown experiment")));
    }

    #[test]
    fn missing_windows_are_reported() {
        let mut m = find("egorov-quartic").unwrap().default_manifest();
        m.windows.clear();
        assert!(validate(&m).iter().any(|e| e.contains("windows.")));
    }
}
