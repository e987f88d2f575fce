use std::sync::Arc;

use semiclassical::linalg;
use semiclassical::quantization::{
    self as q, Bump, FnSymbol, GaussianBump, HsQuadrature, PolySymbol, SmoothIndicator, SpectralFunction, Symbol,
};

use super::{base, dyadic, line, numerics, Experiment};
use crate::fit::fit_slope;
use crate::manifest::RunManifest;
use crate::outcome::{Check, Outcome, Table};
use crate::Error;

fn bump(x0: f64, xi0: f64, s: f64) -> Arc<dyn Symbol> {
    Arc::new(GaussianBump::new(1.0, x0, xi0, s))
}

fn slope(m: &RunManifest, out: &mut Outcome, name: &str, window: &str, pairs: &[(f64, f64)]) -> Result<(), Error> {
    let (lo, hi) = m.window(window)?;
    out.fit(name, fit_slope(pairs)?.with_window(lo, hi));
    Ok(())
}

pub const SYMBOLIC: Experiment = Experiment {
    id: "symbolic-calculus",
    criterion: 4,
    title: "Symbolic calculus rates",
    description: "Operator-norm residuals of the Weyl product and commutator expansions for two Gaussian \
                  bumps, the canonical commutator on coherent probes, the left-quantized parametrix of an \
                  elliptic order-2 symbol, and ‖Op_h(a) − B_h^* a B_h‖, over the h-ladder.",
    tables: &[("residuals", "h, n, product, commutator, canonical, parametrix, bargmann_link")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("symbolic-calculus", "none", dyadic(4..=8));
        m.grid.length = 8.0;
        m.grid.xi_max = 2.5;
        m.tolerances.insert("canonical".into(), 1e-10);
        m.windows.insert("product".into(), [1.8, 2.2]);
        m.windows.insert("commutator".into(), [2.7, 3.3]);
        m.windows.insert("parametrix".into(), [0.8, 1.2]);
        m.windows.insert("bargmann_link".into(), [0.8, 1.2]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=6);
        m
    },
    run: run_symbolic,
};

const SYMBOLIC_WIDTH: f64 = 0.9;

fn run_symbolic(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "quantization");
    let a = bump(0.3, 0.0, SYMBOLIC_WIDTH);
    let b = bump(-0.3, 0.6, SYMBOLIC_WIDTH);
    let x: Arc<dyn Symbol> = Arc::new(PolySymbol::x());
    let xi: Arc<dyn Symbol> = Arc::new(PolySymbol::xi());
    let p: Arc<dyn Symbol> =
        Arc::new(FnSymbol::real(|x, xi| xi * xi + 1.0 + 0.5 * (-(x * x) / 0.36).exp()).with_order(2));
    let link = bump(0.2, -0.3, SYMBOLIC_WIDTH);
    let mut table =
        Table::new("residuals", &["h", "n", "product", "commutator", "canonical", "parametrix", "bargmann_link"]);
    let mut canonical = 0.0f64;
    let mut cols: [Vec<(f64, f64)>; 4] = Default::default();
    for h in m.ladder() {
        let g = line(m, 0.0, h)?;
        let probes = q::coherent_probes(&g, h, &[(0.0, 0.0), (0.5, 0.6), (-0.6, -0.4)]).map_err(&err)?;
        let r = [
            q::calculus_residual_product(a.clone(), b.clone(), &g, h).map_err(&err)?,
            q::calculus_residual_commutator(a.clone(), b.clone(), &g, h).map_err(&err)?,
            q::parametrix_residual(p.clone(), &g, h).map_err(&err)?,
            q::bargmann_psido_link(link.clone(), &g, h).map_err(&err)?,
        ];
        let c = q::calculus_residual_commutator_on(xi.clone(), x.clone(), &g, h, &probes).map_err(&err)?;
        canonical = canonical.max(c);
        for (col, v) in cols.iter_mut().zip(r) {
            col.push((h, v));
        }
        table.push(vec![h, g.len() as f64, r[0], r[1], c, r[2], r[3]]);
    }
    out.tables.push(table);
    slope(m, out, "product", "product", &cols[0])?;
    slope(m, out, "commutator", "commutator", &cols[1])?;
    out.check(Check::at_most("[Op(xi), Op(x)] - (h/i) Id on probes", canonical, m.tolerance("canonical")?));
    slope(m, out, "parametrix", "parametrix", &cols[2])?;
    slope(m, out, "bargmann link", "bargmann_link", &cols[3])?;
    Ok(())
}

pub const GARDING: Experiment = Experiment {
    id: "garding",
    criterion: 5,
    title: "Sharp Gårding lower bounds",
    description: "λ_min(Op_h(a)) for two nonnegative bumps vanishing on lines through the origin, \
                  a(x,ξ) = (x/s)² e^{−|z|²/s²} and (xξ/s²)² e^{−|z|²/s²}. For each symbol a single C is \
                  fitted to −λ_min = C·h by least squares; every rung's C_h = −λ_min/h must lie within the \
                  stated relative band around it and λ_min ≥ −C·h must hold on the ladder.",
    tables: &[("lambda_min", "h, n, symbol, lambda_min, c_h")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("garding", "none", dyadic(4..=8));
        m.grid.length = 5.0;
        m.grid.xi_max = 3.0;
        m.tolerances.insert("c_stability".into(), 0.2);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(2..=5);
        m
    },
    run: run_garding,
};

const GARDING_WIDTH: f64 = 0.6;

fn run_garding(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "quantization");
    let s2 = GARDING_WIDTH * GARDING_WIDTH;
    let symbols: [(&str, FnSymbol); 2] = [
        ("x2", FnSymbol::real(move |x, xi| x * x / s2 * (-(x * x + xi * xi) / s2).exp())),
        ("x2xi2", FnSymbol::real(move |x, xi| (x * xi / s2).powi(2) * (-(x * x + xi * xi) / s2).exp())),
    ];
    let band = m.tolerance("c_stability")?;
    let mut table = Table::new("lambda_min", &["h", "n", "symbol", "lambda_min", "c_h"]);
    for (k, (name, a)) in symbols.iter().enumerate() {
        let mut pts = Vec::new();
        for h in m.ladder() {
            let g = line(m, 0.0, h)?;
            let l = q::garding_min_eig(a, &g, h).map_err(&err)?;
            pts.push((h, l));
            table.push(vec![h, g.len() as f64, k as f64, l, -l / h]);
        }
        // least squares through the origin for −λ = C h
        let c = pts.iter().map(|(h, l)| -l * h).sum::<f64>() / pts.iter().map(|(h, _)| h * h).sum::<f64>();
        let spread = pts.iter().map(|(h, l)| ((-l / h) / c - 1.0).abs()).fold(0.0, f64::max);
        let bound = pts.iter().map(|(h, l)| l + c * h).fold(f64::INFINITY, f64::min);
        out.notes.push(format!("{name}: fitted C = {c:.4e}"));
        out.check(Check::at_most(&format!("{name}: max |C_h/C - 1|"), spread, band));
        out.check(Check::at_least(&format!("{name}: min(lambda_min + C h)"), bound, 0.0));
    }
    out.tables.push(table);
    Ok(())
}

pub const FUNCTIONAL: Experiment = Experiment {
    id: "functional-calculus",
    criterion: 6,
    title: "Functional calculus and trace formula",
    description: "‖F(Op_h(a)) − Op_h(F∘a)‖ over the ladder for a Gaussian bump a and a smooth compactly \
                  supported F; the Helffer–Sjöstrand route against the eigendecomposition at fine \
                  quadrature; and Tr F(Op_h(p)) against (2πh)^{-1}∫F(p) for the harmonic oscillator.",
    tables: &[
        ("functional", "h, n, residual"),
        ("helffer_sjostrand", "nx, ny, error, accuracy_estimate"),
        ("trace", "h, n, lhs, rhs, ratio"),
    ],
    min_ladder: 4,
    manifest: || {
        let mut m = base("functional-calculus", "none", dyadic(4..=8));
        m.grid.length = 5.0;
        m.grid.xi_max = 3.0;
        m.sampling.nodes = 192;
        m.tolerances.insert("helffer_sjostrand".into(), 1e-4);
        m.tolerances.insert("trace_rel".into(), 0.05);
        m.windows.insert("functional".into(), [0.8, 1.2]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(2..=5);
        m
    },
    run: run_functional,
};

/// The trace check runs at a single fine h.
const TRACE_H: f64 = 1.0 / 256.0;

fn run_functional(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "quantization");
    let a = bump(0.0, 0.0, 0.7);
    let f: Arc<dyn SpectralFunction> = Arc::new(Bump { lo: 0.1, hi: 0.9 });
    let mut table = Table::new("functional", &["h", "n", "residual"]);
    let mut pts = Vec::new();
    for h in m.ladder() {
        let g = line(m, 0.0, h)?;
        let r = q::functional_calculus_residual(a.clone(), f.clone(), &g, h).map_err(&err)?;
        pts.push((h, r));
        table.push(vec![h, g.len() as f64, r]);
    }
    out.tables.push(table);
    slope(m, out, "functional calculus", "functional", &pts)?;

    // Helffer–Sjöstrand at the coarsest rung, where the spectrum is sparse
    // enough for the contour quadrature to be checked against eigenvectors.
    let h = m.ladder()[0];
    let g = semiclassical::transforms::GridSpec::line(-m.grid.length / 2.0, m.grid.length / 2.0, 32).map_err(&err)?;
    let op = q::weyl_quantize(&GaussianBump::new(1.0, 0.0, 0.0, 0.8), &g, h).map_err(&err)?;
    let exact = q::function_of_operator(&op, f.as_ref()).map_err(&err)?;
    let ny = m.sampling.nodes;
    let hs = q::helffer_sjostrand(&op, f.as_ref(), 3, HsQuadrature { nx: 2 * ny, ny, height: 0.4 }).map_err(&err)?;
    let e = linalg::op_norm(&linalg::sub(&hs.operator.matrix, &exact.matrix));
    let mut t = Table::new("helffer_sjostrand", &["nx", "ny", "error", "accuracy_estimate"]);
    t.push(vec![(2 * ny) as f64, ny as f64, e, hs.accuracy]);
    out.tables.push(t);
    out.check(Check::at_most("Helffer-Sjostrand vs eigendecomposition", e, m.tolerance("helffer_sjostrand")?));

    let th = TRACE_H;
    let osc = PolySymbol::new(vec![(0.5, 2, 0), (0.5, 0, 2)]);
    let ind = SmoothIndicator { lo: 0.0, hi: 1.0, ramp: 0.2 };
    let g = semiclassical::propagators::line_for(0.0, 5.0, 2.0, th).map_err(&err)?;
    let (lhs, rhs) = q::trace_formula_check(&osc, &ind, &g, th).map_err(&err)?;
    let mut t = Table::new("trace", &["h", "n", "lhs", "rhs", "ratio"]);
    t.push(vec![th, g.len() as f64, lhs, rhs, lhs / rhs]);
    out.tables.push(t);
    out.check(Check::at_most("trace |lhs/rhs - 1|", (lhs / rhs - 1.0).abs(), m.tolerance("trace_rel")?));
    Ok(())
}
