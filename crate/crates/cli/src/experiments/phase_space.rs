use std::f64::consts::PI;

use rand::Rng;
use semiclassical::transforms::{self, coherent_state, Axis, GridSpec, WaveField};
use semiclassical::{rng, C64};

use super::{base, dyadic, line, numerics, Experiment};
use crate::manifest::RunManifest;
use crate::outcome::{Check, Outcome, Table};
use crate::Error;

pub const UNCERTAINTY: Experiment = Experiment {
    id: "uncertainty",
    criterion: 1,
    title: "Uncertainty saturation",
    description: "Per-axis position/momentum deviations of standard coherent states (d = 1 over the whole \
                  ladder, d = 2 on its two coarsest rungs) against h/2, and the uncertainty bound for \
                  seeded random smooth fields.",
    tables: &[("coherent", "h, dim, axis, product_over_half_h"), ("random_fields", "index, h, product, half_h")],
    min_ladder: 1,
    manifest: || {
        let mut m = base("uncertainty", "none", dyadic(4..=10));
        m.grid.length = 16.0;
        m.grid.points = 1024;
        m.sampling.nodes = 20;
        m.tolerances.insert("saturation_rel".into(), 1e-6);
        m.tolerances.insert("random_slack".into(), 1e-8);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(4..=5);
        m.sampling.nodes = 4;
        m
    },
    run: run_uncertainty,
};

/// Box and resolution that keep a coherent state of parameter h
/// boundary-negligible and unaliased.
fn coherent_axis(h: f64, c: f64) -> Result<Axis, semiclassical::Error> {
    let l = 4.0 + 24.0 * h.sqrt();
    let n = ((l * 2.0 * (1.0 + 12.0 * h.sqrt()) / (2.0 * PI * h)).ceil() as usize).next_power_of_two().max(64);
    Axis::centered(c, l, n)
}

fn run_uncertainty(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "transforms");
    let tol = m.tolerance("saturation_rel")?;
    let slack = m.tolerance("random_slack")?;
    let (q, p) = ([0.4, -0.2], [-0.6, 0.3]);
    let mut table = Table::new("coherent", &["h", "dim", "axis", "product_over_half_h"]);
    let mut worst = 0.0f64;
    for (rung, &h) in m.ladder().iter().enumerate() {
        let dims: &[usize] = if rung < 2 { &[1, 2] } else { &[1] };
        for &d in dims {
            let axes = (0..d).map(|k| coherent_axis(h, q[k])).collect::<Result<Vec<_>, _>>().map_err(&err)?;
            let grid = GridSpec::new(axes).map_err(&err)?;
            let f = WaveField::from_profile(&grid, h, |x| coherent_state(x, &q[..d], &p[..d], h)).map_err(&err)?;
            let mo = transforms::moments(&f).map_err(&err)?;
            for k in 0..d {
                let ratio = mo.dev_x[k] * mo.dev_xi[k] / (h / 2.0);
                worst = worst.max((ratio - 1.0).abs());
                table.push(vec![h, d as f64, k as f64, ratio]);
            }
        }
    }
    out.check(Check::at_most("coherent saturation |product/(h/2) - 1|", worst, tol));
    out.tables.push(table);

    let grid = GridSpec::line(-m.grid.length / 2.0, m.grid.length / 2.0, m.grid.points.max(64)).map_err(&err)?;
    let ladder = m.ladder();
    let mut table = Table::new("random_fields", &["index", "h", "product", "half_h"]);
    let mut margin = f64::INFINITY;
    for i in 0..m.sampling.nodes {
        let mut r = rng::stream(m.seed as u64, i as u64);
        let c: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let h = ladder[i % ladder.len()];
        let mut f = WaveField::from_profile(&grid, h, |x| random_profile(&c, x[0])).map_err(&err)?;
        f.normalize();
        let mo = transforms::moments(&f).map_err(&err)?;
        let prod = mo.dev_x[0] * mo.dev_xi[0];
        margin = margin.min(prod - h / 2.0);
        table.push(vec![i as f64, h, prod, h / 2.0]);
    }
    out.check(Check::at_least("random fields min(product - h/2)", margin, -slack));
    out.tables.push(table);
    Ok(())
}

/// Smooth, h-independent random profile: Gaussian envelope times a
/// quadratic polynomial and a chirp.
fn random_profile(c: &[f64], x: f64) -> C64 {
    let env = (-(x - c[0]).powi(2) / (0.3 + 0.5 * c[1].abs())).exp();
    C64::new(env * (1.0 + c[2] * x + c[3] * x * x), env * c[4] * x) * C64::from_polar(1.0, c[5] * x * x)
}

pub const BARGMANN: Experiment = Experiment {
    id: "bargmann",
    criterion: 2,
    title: "Bargmann isometry and inversion",
    description: "‖B_h f‖²/‖f‖² and the synthesis error ‖B_h^* B_h f − f‖/‖f‖ on the default phase-space \
                  grid for a coherent state, a two-packet superposition and a seeded random smooth field.",
    tables: &[("probes", "h, probe, norm_ratio, inversion_error")],
    min_ladder: 1,
    manifest: || {
        let mut m = base("bargmann", "none", dyadic(3..=5));
        m.grid.length = 10.0;
        m.grid.points = 256;
        m.tolerances.insert("isometry".into(), 1e-3);
        m.tolerances.insert("inversion".into(), 1e-3);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=3);
        m
    },
    run: run_bargmann,
};

fn run_bargmann(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "transforms");
    let mut r = rng::stream(m.seed as u64, 0);
    let c: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut table = Table::new("probes", &["h", "probe", "norm_ratio", "inversion_error"]);
    let (mut iso, mut inv) = (0.0f64, 0.0f64);
    for h in m.ladder() {
        let grid = line(m, 0.0, h)?;
        let probes: [Box<dyn Fn(&[f64]) -> C64>; 3] = [
            Box::new(|x| coherent_state(x, &[0.2], &[0.5], h)),
            Box::new(|x| {
                coherent_state(x, &[-1.0], &[0.5], h) + coherent_state(x, &[1.0], &[-0.3], h) * C64::new(0.0, 0.7)
            }),
            Box::new(|x| random_profile(&c, x[0])),
        ];
        for (k, p) in probes.iter().enumerate() {
            let f = WaveField::from_profile(&grid, h, p).map_err(&err)?;
            let zg = transforms::default_z_grid(&f).map_err(&err)?;
            let b = transforms::bargmann(&f, &zg).map_err(&err)?;
            let ratio = b.l2_norm_sqr() / f.norm().powi(2);
            let back = transforms::bargmann_synthesis(&b, &grid).map_err(&err)?;
            let e = back.distance(&f) / f.norm();
            iso = iso.max((ratio - 1.0).abs());
            inv = inv.max(e);
            table.push(vec![h, k as f64, ratio, e]);
        }
    }
    out.check(Check::at_most("isometry |ratio - 1|", iso, m.tolerance("isometry")?));
    out.check(Check::at_most("inversion relative L2 error", inv, m.tolerance("inversion")?));
    out.tables.push(table);
    Ok(())
}

pub const WIGNER: Experiment = Experiment {
    id: "wigner",
    criterion: 3,
    title: "Wigner transform of coherent states",
    description: "Wigner function of g^h_z (d = 1) against (πh)^{-1}exp(−|ζ−z|²/h), sup error relative to \
                  the peak, and both marginals against |f|² and |F_h f|².",
    tables: &[("wigner", "h, sup_rel_error, x_marginal_error, xi_marginal_error, total_mass")],
    min_ladder: 1,
    manifest: || {
        let mut m = base("wigner", "none", dyadic(3..=6));
        m.grid.xi_max = 3.0;
        m.tolerances.insert("sup_rel".into(), 1e-4);
        m.tolerances.insert("marginal".into(), 1e-6);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=4);
        m
    },
    run: run_wigner,
};

fn run_wigner(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "transforms");
    let (q, p) = (0.3, -0.4);
    let mut table =
        Table::new("wigner", &["h", "sup_rel_error", "x_marginal_error", "xi_marginal_error", "total_mass"]);
    let (mut sup, mut marg) = (0.0f64, 0.0f64);
    for h in m.ladder() {
        let grid = line(m, 0.0, h)?;
        let f = WaveField::from_profile(&grid, h, |x| coherent_state(x, &[q], &[p], h)).map_err(&err)?;
        let w = transforms::wigner(&f).map_err(&err)?;
        let peak = 1.0 / (PI * h);
        let mut e = 0.0f64;
        for (i, x) in w.x.iter().enumerate() {
            for (k, xi) in w.xi.iter().enumerate() {
                let exact = peak * (-((x - q).powi(2) + (xi - p).powi(2)) / h).exp();
                e = e.max((w.value(i, k) - exact).norm());
            }
        }
        let xm = w.x_marginal();
        let ex = f.samples.iter().zip(&xm).map(|(v, m)| (v.norm_sqr() - m).abs()).fold(0.0, f64::max);
        let fm = transforms::h_fourier(&f).map_err(&err)?;
        let km = w.xi_marginal();
        let ek = fm.samples.iter().zip(&km).map(|(v, m)| (v.norm_sqr() - m).abs()).fold(0.0, f64::max);
        sup = sup.max(e / peak);
        marg = marg.max(ex).max(ek);
        table.push(vec![h, e / peak, ex, ek, w.integral().re]);
    }
    out.check(Check::at_most("sup |W - exact| / peak", sup, m.tolerance("sup_rel")?));
    out.check(Check::at_most("marginal sup error", marg, m.tolerance("marginal")?));
    out.tables.push(table);
    Ok(())
}
