use std::f64::consts::PI;
use std::sync::Arc;

use semiclassical::phasespace::{Hamiltonian, Harmonic};
use semiclassical::propagators::{self as prop, FioConfig, FioEnsemble, FioQuadrature, GridPropagator, TransportGrid};
use semiclassical::quantization::{GaussianBump, Symbol};
use semiclassical::transforms::{coherent_state, WaveField};
use semiclassical::wavepackets::{self, GaussianPacket};

use super::{base, dyadic, line, numerics, Experiment};
use crate::fit::fit_slope;
use crate::manifest::RunManifest;
use crate::outcome::{Check, Outcome, Table};
use crate::Error;

fn final_time(m: &RunManifest) -> f64 {
    m.times.last().copied().unwrap_or(1.0)
}

fn start(m: &RunManifest) -> (f64, f64) {
    (m.hamiltonian.param("q0", 1.0), m.hamiltonian.param("p0", 0.0))
}

pub const WAVEPACKET: Experiment = Experiment {
    id: "wavepacket-quartic",
    criterion: 7,
    title: "Single thawed wave packet",
    description: "L² distance between the thawed Gaussian (flow, Jacobian blocks, action and Maslov phase) \
                  and the split-step oracle for a standard coherent state, for the Hamiltonian of the \
                  manifest (quartic by default) and the harmonic oscillator, over the h-ladder.",
    tables: &[("errors", "h, n, hamiltonian_error, harmonic_error")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("wavepacket-quartic", "quartic", dyadic(4..=9));
        m.times = vec![1.0];
        m.grid.length = 8.0;
        m.hamiltonian.params.insert("q0".into(), 1.0);
        m.hamiltonian.params.insert("p0".into(), 0.0);
        m.tolerances.insert("harmonic_floor".into(), 1e-6);
        m.windows.insert("error".into(), [0.35, 0.65]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=6);
        m
    },
    run: run_wavepacket,
};

fn run_wavepacket(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "wavepackets");
    let ham = m.hamiltonian.build()?;
    let harmonic = Harmonic { d: 1, omega: 1.0 };
    let t = final_time(m);
    let (q0, p0) = start(m);
    let mut table = Table::new("errors", &["h", "n", "hamiltonian_error", "harmonic_error"]);
    let (mut pts, mut floor) = (Vec::new(), 0.0f64);
    for h in m.ladder() {
        let g = line(m, 0.0, h)?;
        let pkt = GaussianPacket::coherent(&[q0], &[p0], h).map_err(&err)?;
        let (_, e) = wavepackets::packet_propagate(ham.as_ref(), &pkt, 0.0, t, &g).map_err(&err)?;
        let (_, eh) = wavepackets::packet_propagate(&harmonic, &pkt, 0.0, t, &g).map_err(&err)?;
        let (e, eh) = (e.unwrap_or(f64::NAN), eh.unwrap_or(f64::NAN));
        pts.push((h, e));
        floor = floor.max(eh);
        table.push(vec![h, g.len() as f64, e, eh]);
    }
    out.tables.push(table);
    let (lo, hi) = m.window("error")?;
    out.fit("packet error", fit_slope(&pts)?.with_window(lo, hi));
    out.check(Check::at_most("harmonic packet error (oracle floor)", floor, m.tolerance("harmonic_floor")?));
    Ok(())
}

fn fio_config(m: &RunManifest) -> FioConfig {
    let quadrature = match m.sampling.quadrature.as_str() {
        "stratified" => FioQuadrature::Stratified { per_axis: m.sampling.per_axis, seed: m.seed as u64 },
        _ => FioQuadrature::Tensor,
    };
    FioConfig { quadrature, ..FioConfig::default() }
}

struct FioErrors {
    thawed: f64,
    frozen: f64,
    identity: f64,
    max_jump: f64,
    samples: usize,
    n: usize,
}

fn fio_errors(m: &RunManifest, ham: &dyn Hamiltonian, h: f64, t: f64) -> Result<FioErrors, Error> {
    let err = numerics(m, "propagators");
    let (q0, p0) = start(m);
    let g = line(m, 0.0, h)?;
    let psi0 = WaveField::from_profile(&g, h, |x| coherent_state(x, &[q0], &[p0], h)).map_err(&err)?;
    let exact = GridPropagator::for_grid(&g, h, t).map_err(&err)?.propagate(ham, &psi0, 0.0, t).map_err(&err)?;
    let cfg = fio_config(m);
    let e = FioEnsemble::build(ham, &psi0, t, &cfg).map_err(&err)?;
    let e0 = FioEnsemble::build(ham, &psi0, 0.0, &cfg).map_err(&err)?;
    let id = e0.thawed(&g).map_err(&err)?.distance(&psi0).max(e0.frozen(&g).map_err(&err)?.distance(&psi0));
    Ok(FioErrors {
        thawed: e.thawed(&g).map_err(&err)?.distance(&exact),
        frozen: e.frozen(&g).map_err(&err)?.distance(&exact),
        identity: id,
        max_jump: e.max_jump,
        samples: e.points.len(),
        n: g.len(),
    })
}

fn fio_table() -> Table {
    Table::new("errors", &["h", "n", "samples", "thawed_error", "frozen_error", "identity_error", "max_branch_jump"])
}

fn push_fio(table: &mut Table, h: f64, r: &FioErrors) {
    table.push(vec![h, r.n as f64, r.samples as f64, r.thawed, r.frozen, r.identity, r.max_jump]);
}

pub const HK_QUARTIC: Experiment = Experiment {
    id: "hk-quartic",
    criterion: 8,
    title: "Thawed and frozen Gaussian propagators",
    description: "Thawed and frozen (Herman–Kluk) integral operators applied to a coherent state, against \
                  the split-step oracle at the final time; the same operators at t = 0 against the initial \
                  state; and the largest argument jump of the prefactor branch between stored steps.",
    tables: &[("errors", "h, n, samples, thawed_error, frozen_error, identity_error, max_branch_jump")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("hk-quartic", "quartic", dyadic(5..=9));
        m.times = vec![1.0];
        m.grid.length = 8.0;
        m.hamiltonian.params.insert("q0".into(), 1.0);
        m.hamiltonian.params.insert("p0".into(), 0.0);
        m.tolerances.insert("identity".into(), 1e-3);
        m.tolerances.insert("branch_jump".into(), PI / 4.0);
        m.windows.insert("thawed".into(), [0.8, 1.2]);
        m.windows.insert("frozen".into(), [0.8, 1.2]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(5..=8);
        m
    },
    run: run_hk_quartic,
};

fn run_hk_quartic(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let ham = m.hamiltonian.build()?;
    let t = final_time(m);
    let mut table = fio_table();
    let (mut th, mut fr, mut id, mut jump) = (Vec::new(), Vec::new(), 0.0f64, 0.0f64);
    for h in m.ladder() {
        let r = fio_errors(m, ham.as_ref(), h, t)?;
        th.push((h, r.thawed));
        fr.push((h, r.frozen));
        id = id.max(r.identity);
        jump = jump.max(r.max_jump);
        push_fio(&mut table, h, &r);
    }
    out.tables.push(table);
    let (lo, hi) = m.window("thawed")?;
    out.fit("thawed", fit_slope(&th)?.with_window(lo, hi));
    let (lo, hi) = m.window("frozen")?;
    out.fit("frozen", fit_slope(&fr)?.with_window(lo, hi));
    out.check(Check::at_most("t = 0 identity error", id, m.tolerance("identity")?));
    out.check(Check::at_most("prefactor branch jump per step", jump, m.tolerance("branch_jump")?));
    Ok(())
}

pub const HK_FREE: Experiment = Experiment {
    id: "hk-free-particle",
    criterion: 8,
    title: "Gaussian propagators for the free particle",
    description: "Same measurements as hk-quartic for p = ξ²/2, where both operators are exact: errors sit at \
                  the quadrature floor across the ladder and the fit is reported as floor-limited.",
    tables: &[("errors", "h, n, samples, thawed_error, frozen_error, identity_error, max_branch_jump")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("hk-free-particle", "free", dyadic(5..=9));
        m.times = vec![1.0];
        m.grid.length = 8.0;
        m.hamiltonian.params.insert("q0".into(), -0.5);
        m.hamiltonian.params.insert("p0".into(), 0.5);
        m.tolerances.insert("floor".into(), 1e-3);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=6);
        m
    },
    run: run_hk_free,
};

fn run_hk_free(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let ham = m.hamiltonian.build()?;
    let t = final_time(m);
    let mut table = fio_table();
    let (mut worst, mut pts) = (0.0f64, Vec::new());
    for h in m.ladder() {
        let r = fio_errors(m, ham.as_ref(), h, t)?;
        worst = worst.max(r.thawed).max(r.frozen).max(r.identity);
        pts.push((h, r.frozen.max(r.thawed)));
        push_fio(&mut table, h, &r);
    }
    out.tables.push(table);
    let fit = fit_slope(&pts)?;
    out.notes.push(format!("fitted slope {:.3} (floor-limited: {})", fit.slope, fit.floor_limited));
    out.fits.push(crate::outcome::NamedFit { name: "error".into(), fit });
    out.check(Check::at_most("max error across ladder", worst, m.tolerance("floor")?));
    Ok(())
}

pub const EGOROV: Experiment = Experiment {
    id: "egorov-quartic",
    criterion: 9,
    title: "Egorov theorem",
    description: "‖U(t)^* Op_h(a) U(t) − Op_h(a∘Φ^t)‖ for a Gaussian bump under the manifest Hamiltonian \
                  (quartic by default), with U from the dense eigendecomposition of the grid Hamiltonian \
                  and a∘Φ^t tabulated on a fixed classical lattice; the harmonic oscillator gives the \
                  discretization floor.",
    tables: &[("residuals", "h, n, residual, harmonic_residual")],
    min_ladder: 4,
    manifest: || {
        let mut m = base("egorov-quartic", "quartic", dyadic(4..=8));
        m.times = vec![1.0];
        m.grid.length = 6.0;
        m.grid.xi_max = 3.0;
        m.tolerances.insert("harmonic_residual".into(), 1e-6);
        m.windows.insert("residual".into(), [1.7, 2.3]);
        m
    },
    quick: |mut m| {
        m.h_ladder = dyadic(3..=6);
        m
    },
    run: run_egorov,
};

fn run_egorov(m: &RunManifest, out: &mut Outcome) -> Result<(), Error> {
    let err = numerics(m, "propagators");
    let ham = m.hamiltonian.build()?;
    let harmonic = Harmonic { d: 1, omega: 1.0 };
    let t = final_time(m);
    let a: Arc<dyn Symbol> = Arc::new(GaussianBump::new(1.0, 0.3, 0.0, 0.45));
    let tg = TransportGrid { xi_max: m.grid.xi_max, ..TransportGrid::default() };
    let x_box = (-m.grid.length / 2.0, m.grid.length / 2.0);
    let moved = prop::transported_symbol(ham.as_ref(), a.clone(), 0.0, t, x_box, tg).map_err(&err)?;
    let moved_h = prop::transported_symbol(&harmonic, a.clone(), 0.0, t, x_box, tg).map_err(&err)?;
    let mut table = Table::new("residuals", &["h", "n", "residual", "harmonic_residual"]);
    let (mut pts, mut floor) = (Vec::new(), 0.0f64);
    for h in m.ladder() {
        let g = line(m, 0.0, h)?;
        let r = prop::egorov_against(ham.as_ref(), a.as_ref(), &moved, t, &g, h).map_err(&err)?.residual;
        let rh = prop::egorov_against(&harmonic, a.as_ref(), &moved_h, t, &g, h).map_err(&err)?.residual;
        pts.push((h, r));
        floor = floor.max(rh);
        table.push(vec![h, g.len() as f64, r, rh]);
    }
    out.tables.push(table);
    let (lo, hi) = m.window("residual")?;
    out.fit("egorov residual", fit_slope(&pts)?.with_window(lo, hi));
    out.check(Check::at_most("harmonic residual (discretization floor)", floor, m.tolerance("harmonic_residual")?));
    Ok(())
}
