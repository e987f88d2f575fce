use std::sync::Arc;

use semiclassical::multilevel::{self as ml, HopConfig, LzBenchmark, MatrixPotential, TimeWindow};
use semiclassical::propagators::TransportGrid;
use semiclassical::quantization::{GaussianBump, Symbol};

use super::{base, dyadic, line, numerics, Experiment};
use crate::fit::fit_slope;
use crate::manifest::RunManifest;
use crate::outcome::{Check, Outcome, Table};
use crate::Error;

pub const ADIABATIC: Experiment = Experiment {
    id: "adiabatic-two-level",
    criterion: 10,
    title: "Adiabatic Egorov theorem for a gapped two-level system",
    description: "Time-windowed Heisenberg evolution of Op_h(Π a Π) under Op_h(ξ²/2) + V(x) with a rotating \
                  2×2 potential of constant gap, against the quantized band-flow transport of the symbol \
                  (d = 1). Residual in operator norm over the h-ladder.",
    tables: &[("residuals", "h, n, dimension, residual, min_gap")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("adiabatic-two-level", "rotating", dyadic(4..=7));
        m.grid.length = 6.0;
        m.grid.xi_max = 3.0;
        m.hamiltonian.params.insert("kappa".into(), 1.2);
        m.hamiltonian.params.insert("sigma".into(), 0.5f64.sqrt());
        m.windows.insert("residual".into(), [0.7, 1.3]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=6);
        m
    },
    run: run_adiabatic,
};

fn run_adiabatic(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "multilevel");
    let vp = MatrixPotential::rotating(m.hamiltonian.param("kappa", 1.2), m.hamiltonian.param("sigma", 0.5f64.sqrt()));
    let a0: Arc<dyn Symbol> = Arc::new(GaussianBump::new(1.0, -0.6, 0.6, 0.4));
    let mix = [[1.0, 0.3], [0.3, 0.5]];
    let tg = TransportGrid { nx: 128, nxi: 256, xi_max: m.grid.xi_max };
    let mut table = Table::new("residuals", &["h", "n", "dimension", "residual", "min_gap"]);
    let mut pts = Vec::new();
    for h in m.ladder() {
        let g = line(m, 0.0, h)?;
        let r = ml::adiabatic_egorov_check(&vp, 1, a0.clone(), mix, TimeWindow::default(), &g, h, tg).map_err(&err)?;
        pts.push((h, r.residual));
        table.push(vec![h, g.len() as f64, r.dimension as f64, r.residual, r.min_gap]);
    }
    out.tables.push(table);
    let (lo, hi) = m.window("residual")?;
    out.fit("adiabatic residual", fit_slope(&pts)?.with_window(lo, hi));
    Ok(())
}

pub const LANDAU_ZENER: Experiment = Experiment {
    id: "landau-zener",
    criterion: 11,
    title: "Landau–Zener hopping at a conical crossing",
    description: "Upper-band population after a lower-band coherent state passes the conical crossing \
                  w(x) = x (d = 2) at impact parameter δ = c√h: deterministic branching surface hopping \
                  against the grid two-level solution, for every h in the ladder and c in the sweep. \
                  grid.length is the box along the direction of travel.",
    tables: &[(
        "populations",
        "h, c, delta, grid_population, hopping_population, nominal_rate, relative_error, boundary_ratio",
    )],
    min_ladder: 2,
    manifest: || {
        let mut m = base("landau-zener", "conical", dyadic(6..=8));
        m.sweep = vec![0.2, 0.4, 0.8];
        m.hamiltonian.dim = Some(2);
        m.grid.length = 3.2;
        m.tolerances.insert("relative_error".into(), 0.10);
        m.tolerances.insert("monotone_slack".into(), 0.0);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(6..=7);
        m.sweep = vec![0.4];
        m
    },
    run: run_landau_zener,
};

fn benchmark(m: &RunManifest, h: f64, c: f64) -> Result<LzBenchmark, Error> {
    let q = -h.log2();
    if (q - q.round()).abs() > 1e-12 || q.round() < 1.0 {
        return Err(Error::Schema(vec![format!("landau-zener needs dyadic h = 2^-q, got {h}")]));
    }
    let mut b = LzBenchmark::standard(q.round() as i32, c);
    b.nodes = m.sampling.nodes;
    // grid.length sets the box along the direction of travel at the
    // standard spacing
    let dx = b.box_len[1] / b.points[1] as f64;
    b.points[1] = 2 * (m.grid.length / (2.0 * dx) - 1e-9).ceil().max(1.0) as usize;
    b.box_len[1] = b.points[1] as f64 * dx;
    Ok(b)
}

fn run_landau_zener(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "multilevel");
    if m.sweep.is_empty() {
        return Err(Error::Schema(vec!["landau-zener needs impact parameters in sweep".into()]));
    }
    let cfg = HopConfig::default();
    let mut table = Table::new(
        "populations",
        &[
            "h",
            "c",
            "delta",
            "grid_population",
            "hopping_population",
            "nominal_rate",
            "relative_error",
            "boundary_ratio",
        ],
    );
    let slack = m.tolerance("monotone_slack")?;
    let (mut worst, mut rises) = (0.0f64, 0usize);
    for &c in &m.sweep {
        let mut prev = f64::INFINITY;
        for h in m.ladder() {
            let b = benchmark(m, h, c)?;
            let r = ml::lz_compare(&b, &cfg).map_err(&err)?;
            worst = worst.max(r.relative_error);
            if r.relative_error > prev * (1.0 + slack) {
                rises += 1;
            }
            prev = r.relative_error;
            table.push(vec![
                h,
                c,
                b.delta,
                r.grid_population,
                r.hopping_population,
                r.nominal,
                r.relative_error,
                r.boundary_ratio,
            ]);
        }
    }
    out.tables.push(table);
    out.check(Check::at_most("max relative population error", worst, m.tolerance("relative_error")?));
    out.check(Check::at_most("increases of the error as h decreases", rises as f64, 0.0));
    Ok(())
}
