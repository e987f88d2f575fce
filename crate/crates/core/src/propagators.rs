//! Quantum propagators: the split-step grid oracle, dense unitary groups,
//! thawed and frozen (Herman–Kluk) Gaussian integral operators, Egorov
//! observable evolution and semiclassical-measure diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fft;
use crate::linalg::{self, small, CMat};
use crate::phasespace::{self, FlowData, Hamiltonian, PhasePoint};
use crate::quantization::{self, GridOperator, OpTag, PolySymbol, Symbol, TabulatedSymbol};
use crate::transforms::{self, Axis, GridSpec, PhaseSpaceField, WaveField};
use crate::wavepackets::{mobius, GaussianPacket, SiegelMatrix};
use crate::{Error, Result, C64};

/// Largest kinetic phase per step at the band edge.
pub const MAX_KINETIC_PHASE: f64 = PI / 4.0;

/// Uniform line grid that carries momenta up to `xi_max` and resolves √h
/// with at least 8 points.
pub fn line_for(center: f64, len: f64, xi_max: f64, h: f64) -> Result<GridSpec> {
    let band = len * xi_max / (PI * h);
    let resolution = 8.0 * len / h.sqrt();
    let n = (band.max(resolution).ceil() as usize).next_power_of_two().max(8);
    Ok(GridSpec { axes: vec![Axis::centered(center, len, n)?] })
}

/// Strang split-step propagator for p = |ξ|²/2 + V(t, x).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPropagator {
    pub grid: GridSpec,
    pub h: f64,
    pub dt: f64,
}

fn edge_energy(grid: &GridSpec, h: f64) -> f64 {
    grid.axes.iter().map(|a| a.xi_max(h).powi(2)).sum::<f64>() / 2.0
}

impl GridPropagator {
    /// Refuses time steps whose kinetic phase at the band edge exceeds π/4.
    pub fn new(grid: &GridSpec, h: f64, dt: f64) -> Result<Self> {
        let e = edge_energy(grid, h);
        let phase = dt.abs() * e / h;
        if phase > MAX_KINETIC_PHASE {
            return Err(Error::TimeStep { dt, phase, suggested: MAX_KINETIC_PHASE * h / e });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { grid: grid.clone(), h, dt })
    }

    /// Oracle step: a quarter of the stability limit and at most h/16, so
    /// that the splitting error stays well below the semiclassical errors
    /// being measured.
    pub fn for_grid(grid: &GridSpec, h: f64, _duration: f64) -> Result<Self> {
        let limit = MAX_KINETIC_PHASE * h / edge_energy(grid, h);
        Self::new(grid, h, (0.25 * limit).min(h / 16.0))
    }

    fn kinetic_phases(&self, dt: f64) -> Vec<C64> {
        let shape = self.grid.shape();
        let per_axis: Vec<Vec<f64>> = self
            .grid
            .axes
            .iter()
            .map(|ax| (0..ax.n).map(|m| fft::signed_index(m, ax.n) as f64 * ax.dxi(self.h)).collect())
            .collect();
        let total: usize = shape.iter().product();
        (0..total)
            .map(|i| {
                let idx = self.grid.unravel(i);
                let e: f64 = idx.iter().enumerate().map(|(k, &m)| 0.5 * per_axis[k][m].powi(2)).sum();
                C64::from_polar(1.0 / total as f64, -dt * e / self.h)
            })
            .collect()
    }

    /// ψ(t) from ψ(s) = ψ0.
    pub fn propagate(&self, ham: &dyn Hamiltonian, psi0: &WaveField, s: f64, t: f64) -> Result<WaveField> {
        if psi0.grid != self.grid {
            return Err(Error::InvalidArgument("field and propagator grids differ".into()));
        }
        let x0 = self.grid.point(0);
        if ham.potential(s, &x0).is_none() {
            return Err(Error::InvalidArgument(format!("{} is not of kinetic-plus-potential form", ham.name())));
        }
        if t == s {
            return Ok(psi0.clone());
        }
        let steps = ((t - s).abs() / self.dt).ceil() as usize;
        let dt = (t - s) / steps as f64;
        let kin = self.kinetic_phases(dt);
        let points: Vec<Vec<f64>> = (0..self.grid.len()).map(|i| self.grid.point(i)).collect();
        let half = |tt: f64| -> Vec<C64> {
            points.iter().map(|x| C64::from_polar(1.0, -0.5 * dt * ham.potential(tt, x).unwrap() / self.h)).collect()
        };
        let shape = self.grid.shape();
        let mut psi = psi0.samples.clone();
        let static_half = if ham.is_time_dependent() { None } else { Some(half(s)) };
        for k in 0..steps {
            let t0 = s + k as f64 * dt;
            let (v0, v1) = match &static_half {
                Some(v) => (v.clone(), v.clone()),
                None => (half(t0), half(t0 + dt)),
            };
            psi.iter_mut().zip(&v0).for_each(|(p, v)| *p *= v);
            fft::fft_all(&mut psi, &shape, false);
            psi.iter_mut().zip(&kin).for_each(|(p, k)| *p *= k);
            fft::fft_all(&mut psi, &shape, true);
            psi.iter_mut().zip(&v1).for_each(|(p, v)| *p *= v);
        }
        Ok(WaveField { samples: psi, ..psi0.clone() })
    }
}

/// Dense matrix of Op_h(|ξ|²/2) + V on a 1D grid (time-independent V).
pub fn hamiltonian_operator(ham: &dyn Hamiltonian, grid: &GridSpec, h: f64) -> Result<GridOperator> {
    let mut op = quantization::weyl_quantize(&PolySymbol::new(vec![(0.5, 0, 2)]), grid, h)?;
    for (i, x) in grid.axes[0].points().iter().enumerate() {
        let v = ham
            .potential(0.0, &[*x])
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not of kinetic-plus-potential form", ham.name())))?;
        op.matrix[(i, i)] += C64::new(v, 0.0);
    }
    op.matrix = linalg::hermitian_part(&op.matrix);
    Ok(op)
}

/// Spectral decomposition of a Hermitian grid Hamiltonian, reusable for
/// several times.
pub struct UnitaryGroup {
    pub energies: Vec<f64>,
    pub vectors: CMat,
    pub h: f64,
}

impl UnitaryGroup {
    pub fn new(hop: &GridOperator) -> Result<Self> {
        let (energies, vectors) = linalg::eigh(&linalg::hermitian_part(&hop.matrix))?;
        Ok(Self { energies, vectors, h: hop.h })
    }

    /// e^{−itH/h}.
    pub fn at(&self, t: f64) -> CMat {
        let ph: Vec<C64> = self.energies.iter().map(|&e| C64::from_polar(1.0, -t * e / self.h)).collect();
        linalg::reconstruct(&self.vectors, &ph)
    }

    /// U(t)^* A U(t) computed in the eigenbasis.
    pub fn heisenberg(&self, a: &CMat, t: f64) -> CMat {
        let v = &self.vectors;
        let at = linalg::matmul(&linalg::matmul(&linalg::adjoint(v), a), v);
        let n = self.energies.len();
        let e = &self.energies;
        let rot = Mat::from_fn(n, n, |j, k| at[(j, k)] * C64::from_polar(1.0, t * (e[j] - e[k]) / self.h));
        linalg::matmul(&linalg::matmul(v, &rot), &linalg::adjoint(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FioQuadrature {
    /// Phase-space tensor grid with spacing ≤ √h/2 (d = 1).
    Tensor,
    /// One jittered sample per cell of a (2d)-dimensional stratification
    /// with `per_axis` cells per axis; per-cell random streams.
    Stratified { per_axis: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FioConfig {
    pub quadrature: FioQuadrature,
    /// Stored steps per unit time for branch tracking.
    pub steps_per_unit: usize,
    pub tol: f64,
    /// Samples with |B_h ψ| below this fraction of the maximum are dropped.
    pub prune: f64,
}

impl Default for FioConfig {
    fn default() -> Self {
        Self { quadrature: FioQuadrature::Tensor, steps_per_unit: 64, tol: 1e-10, prune: 1e-9 }
    }
}

/// Samples, weights and per-sample flow data for the Gaussian integral
/// operators at one final time.
#[derive(Clone, Debug)]
pub struct FioEnsemble {
    pub h: f64,
    pub t: f64,
    pub points: Vec<PhasePoint>,
    /// (2πh)^{-d/2} B_h ψ0(z_k) × cell volume.
    pub weights: Vec<C64>,
    pub flows: Vec<FlowData>,
    /// Continuous argument of det(A + iB) at t.
    pub thawed_args: Vec<f64>,
    /// HK prefactor k(t, 0, z_k) on its continuous branch.
    pub prefactors: Vec<C64>,
    /// Largest per-step jump of the tracked arguments.
    pub max_jump: f64,
    /// Relative L² mass of ψ0 missing from the phase-space sample region.
    pub coverage_deficit: f64,
}

struct Tracked {
    fd: FlowData,
    arg_thawed: f64,
    k: C64,
    max_jump: f64,
}

fn wrap_angle(a: f64) -> f64 {
    a - 2.0 * PI * (a / (2.0 * PI)).round()
}

fn track(ham: &dyn Hamiltonian, z: &PhasePoint, t: f64, steps: usize, tol: f64) -> Result<Tracked> {
    let d = z.dim();
    let times: Vec<f64> = (1..=steps).map(|k| t * k as f64 / steps as f64).collect();
    let path =
        if t == 0.0 { vec![FlowData::identity(z, 0.0)] } else { phasespace::flow_path(ham, z, 0.0, &times, tol)? };
    let cplx = |m: &[f64]| m.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>();
    let i = C64::new(0.0, 1.0);
    let dets = |fd: &FlowData| {
        let (a, b, c, dd) = (cplx(&fd.a), cplx(&fd.b), cplx(&fd.c), cplx(&fd.d));
        let m1: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + i * y).collect();
        let m2: Vec<C64> = (0..d * d).map(|k| a[k] + dd[k] + i * (c[k] - b[k])).collect();
        (small::cdet(&m1, d), small::cdet(&m2, d))
    };
    let (mut arg1, mut arg2) = (0.0f64, 0.0f64);
    let (mut prev1, mut prev2) = (0.0f64, 0.0f64);
    let mut max_jump = 0.0f64;
    for (k, fd) in path.iter().enumerate() {
        let (d1, d2) = dets(fd);
        let j1 = wrap_angle(d1.arg() - prev1);
        let j2 = wrap_angle(d2.arg() - prev2);
        let jump = j1.abs().max(j2.abs());
        max_jump = max_jump.max(jump);
        if jump >= PI / 2.0 {
            return Err(Error::Branch { time: times.get(k).copied().unwrap_or(0.0), jump });
        }
        arg1 += j1;
        arg2 += j2;
        prev1 = d1.arg();
        prev2 = d2.arg();
    }
    let fd = path.last().unwrap().clone();
    let (_, d2) = dets(&fd);
    let k = C64::from_polar((2.0f64).powf(-(d as f64) / 2.0) * d2.norm().sqrt(), 0.5 * arg2);
    Ok(Tracked { fd, arg_thawed: arg1, k, max_jump })
}

fn tensor_samples(psi0: &WaveField, prune: f64) -> Result<(Vec<PhasePoint>, Vec<C64>, f64)> {
    let zg = transforms::default_z_grid(psi0)?;
    let b = transforms::bargmann(psi0, &zg)?;
    let cell = (b.x[1] - b.x[0]) * (b.xi[1] - b.xi[0]);
    let pref = cell / (2.0 * PI * psi0.h).sqrt();
    let max = b.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (a, q) in b.x.iter().enumerate() {
        for (k, p) in b.xi.iter().enumerate() {
            let v = b.value(a, k);
            if v.norm() > prune * max {
                points.push(PhasePoint { q: vec![*q], p: vec![*p] });
                weights.push(v * pref);
            }
        }
    }
    Ok((points, weights, b.defect))
}

/// Stratified importance sampling of the Bargmann resolution of the
/// identity. The proposal is a product Gaussian with the Husimi mean and a
/// spread of sqrt(2) times the Husimi deviation, so that the weight
/// B(z)/q(z) stays bounded in the tails. Each axis is cut into `per_axis`
/// equal-probability strata and every cell gets one jittered point from its
/// own counter-based stream.
fn stratified_samples(
    psi0: &WaveField,
    per_axis: usize,
    seed: u64,
    prune: f64,
) -> Result<(Vec<PhasePoint>, Vec<C64>, f64)> {
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, Normal};
    if per_axis == 0 {
        return Err(Error::InvalidArgument("per_axis must be positive".into()));
    }
    let d = psi0.grid.dim();
    let h = psi0.h;
    let mut f = psi0.clone();
    f.normalize();
    let m = transforms::moments(&f)?;
    let mean: Vec<f64> = m.mean_x.iter().chain(&m.mean_xi).copied().collect();
    // Husimi variance = Wigner variance + h/2 on every axis.
    let spread: Vec<f64> = m.dev_x.iter().chain(&m.dev_xi).map(|s| (2.0 * (s * s + 0.5 * h)).sqrt()).collect();
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let ncell = per_axis.pow(2 * d as u32);
    let norm_q: f64 = spread.iter().map(|s| (2.0 * PI).sqrt() * s).product();
    let scale = 1.0 / (ncell as f64 * (2.0 * PI * h).powf(d as f64 / 2.0));
    let raw: Vec<(PhasePoint, C64, f64)> = (0..ncell)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, c as u64);
            let mut idx = c;
            let mut z = vec![0.0; 2 * d];
            let mut quad = 0.0;
            for k in 0..2 * d {
                let j = idx % per_axis;
                idx /= per_axis;
                let u = (j as f64 + rng.random::<f64>()) / per_axis as f64;
                let g = unit.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
                quad += g * g;
                z[k] = mean[k] + spread[k] * g;
            }
            let q = (-0.5 * quad).exp() / norm_q;
            let pt = PhasePoint::from_slice(&z);
            let b = transforms::bargmann_at(psi0, &pt.q, &pt.p);
            let mass = b.norm_sqr() / (q * ncell as f64);
            (pt, b * (scale / q), mass)
        })
        .collect();
    let max = raw.iter().map(|(_, v, _)| v.norm()).fold(0.0, f64::max);
    let mass: f64 = raw.iter().map(|(_, _, m)| m).sum::<f64>();
    let deficit = (1.0 - mass / psi0.norm().powi(2)).abs();
    let (points, weights) = raw.into_iter().filter(|(_, v, _)| v.norm() > prune * max).map(|(p, v, _)| (p, v)).unzip();
    Ok((points, weights, deficit))
}

impl FioEnsemble {
    pub fn build(ham: &dyn Hamiltonian, psi0: &WaveField, t: f64, cfg: &FioConfig) -> Result<Self> {
        let d = psi0.grid.dim();
        if ham.dim() != d {
            return Err(Error::Dimension { expected: ham.dim(), got: d });
        }
        let (points, weights, coverage_deficit) = match cfg.quadrature {
            FioQuadrature::Tensor if d == 1 => tensor_samples(psi0, cfg.prune)?,
            FioQuadrature::Tensor => {
                return Err(Error::InvalidArgument("tensor quadrature is for d = 1; use stratified sampling".into()))
            }
            FioQuadrature::Stratified { per_axis, seed } => stratified_samples(psi0, per_axis, seed, cfg.prune)?,
        };
        let steps = ((t.abs() * cfg.steps_per_unit as f64).ceil() as usize).max(16);
        let tracked: Vec<Tracked> =
            points.par_iter().map(|z| track(ham, z, t, steps, cfg.tol)).collect::<Result<_>>()?;
        let max_jump = tracked.iter().map(|r| r.max_jump).fold(0.0, f64::max);
        let mut flows = Vec::with_capacity(tracked.len());
        let mut thawed_args = Vec::with_capacity(tracked.len());
        let mut prefactors = Vec::with_capacity(tracked.len());
        for r in tracked {
            flows.push(r.fd);
            thawed_args.push(r.arg_thawed);
            prefactors.push(r.k);
        }
        Ok(Self { h: psi0.h, t, points, weights, flows, thawed_args, prefactors, max_jump, coverage_deficit })
    }

    fn packet(&self, k: usize, thawed: bool) -> Result<(GaussianPacket, C64)> {
        let fd = &self.flows[k];
        let d = fd.dim();
        let mut pkt = GaussianPacket::new(fd.endpoint.clone(), SiegelMatrix::standard(d), self.h)?;
        let w = if thawed {
            let (g, _) = mobius(fd, &pkt.gamma)?;
            pkt.gamma = g;
            pkt.phase = fd.action / self.h - 0.5 * self.thawed_args[k];
            self.weights[k]
        } else {
            pkt.phase = fd.action / self.h;
            self.weights[k] * self.prefactors[k]
        };
        Ok((pkt, w))
    }

    /// Superposition of the propagated packets with an order-fixed
    /// reduction (fixed chunks summed in index order).
    fn superpose(&self, grid: &GridSpec, thawed: bool) -> Result<WaveField> {
        const CHUNK: usize = 32;
        let n = grid.len();
        let idx: Vec<usize> = (0..self.points.len()).collect();
        let partials: Vec<Vec<C64>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = vec![C64::new(0.0, 0.0); n];
                for &k in chunk {
                    let (pkt, w) = self.packet(k, thawed)?;
                    if grid.dim() == 1 {
                        pkt.accumulate_1d(grid, w, &mut acc);
                    } else {
                        for (i, a) in acc.iter_mut().enumerate() {
                            *a += w * pkt.eval(&grid.point(i));
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![C64::new(0.0, 0.0); n];
        for p in &partials {
            out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
        }
        WaveField::new(grid.clone(), self.h, out)
    }

    pub fn thawed(&self, grid: &GridSpec) -> Result<WaveField> {
        self.superpose(grid, true)
    }

    pub fn frozen(&self, grid: &GridSpec) -> Result<WaveField> {
        self.superpose(grid, false)
    }
}

#[derive(Clone, Debug)]
pub struct FioResult {
    pub field: WaveField,
    pub coverage_deficit: f64,
    pub samples: usize,
    pub max_jump: f64,
}

/// Thawed Gaussian integral operator I^h_th(t) applied to ψ0.
pub fn thawed_fio_apply(ham: &dyn Hamiltonian, psi0: &WaveField, t: f64, cfg: &FioConfig) -> Result<FioResult> {
    let e = FioEnsemble::build(ham, psi0, t, cfg)?;
    Ok(FioResult {
        field: e.thawed(&psi0.grid)?,
        coverage_deficit: e.coverage_deficit,
        samples: e.points.len(),
        max_jump: e.max_jump,
    })
}

/// Frozen Gaussian (Herman–Kluk) operator I^h_fr(t) applied to ψ0.
pub fn frozen_fio_apply(ham: &dyn Hamiltonian, psi0: &WaveField, t: f64, cfg: &FioConfig) -> Result<FioResult> {
    let e = FioEnsemble::build(ham, psi0, t, cfg)?;
    Ok(FioResult {
        field: e.frozen(&psi0.grid)?,
        coverage_deficit: e.coverage_deficit,
        samples: e.points.len(),
        max_jump: e.max_jump,
    })
}

/// HK prefactor samples k(t_j, 0, z) along a trajectory on its continuous
/// branch, one per stored step.
pub fn hk_prefactor_path(ham: &dyn Hamiltonian, z: &PhasePoint, t: f64, steps: usize, tol: f64) -> Result<Vec<C64>> {
    (1..=steps).map(|k| track(ham, z, t * k as f64 / steps as f64, k.max(1), tol).map(|r| r.k)).collect()
}

/// Classical lattice on which a∘Φ is tabulated (independent of h).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransportGrid {
    pub nx: usize,
    pub nxi: usize,
    pub xi_max: f64,
}

impl Default for TransportGrid {
    fn default() -> Self {
        Self { nx: 256, nxi: 512, xi_max: 3.0 }
    }
}

/// a∘Φ^{t,s} tabulated on the classical lattice over the x-box of `grid`.
pub fn transported_symbol(
    ham: &dyn Hamiltonian,
    a: Arc<dyn Symbol>,
    s: f64,
    t: f64,
    x_box: (f64, f64),
    tg: TransportGrid,
) -> Result<TabulatedSymbol> {
    let xa = Axis::new(x_box.0, x_box.1, tg.nx)?;
    let ka = Axis::new(-tg.xi_max, tg.xi_max, tg.nxi)?;
    TabulatedSymbol::sample(xa, ka, |x, xi| {
        let z = phasespace::flow_point(ham, &[x, xi], s, t, 1e-12)?;
        Ok(a.value(z[0], z[1]).re)
    })
}

#[derive(Clone, Debug)]
pub struct EgorovResult {
    pub conjugated: GridOperator,
    pub transported: GridOperator,
    pub residual: f64,
}

/// Compares U(s,t) Op(a) U(t,s) with Op(a∘Φ^{t,s}) for a time-independent
/// kinetic-plus-potential Hamiltonian in d = 1.
pub fn egorov_evolve(
    ham: &dyn Hamiltonian,
    a: Arc<dyn Symbol>,
    s: f64,
    t: f64,
    grid: &GridSpec,
    h: f64,
    tg: TransportGrid,
) -> Result<EgorovResult> {
    let ax = &grid.axes[0];
    let sym = transported_symbol(ham, a.clone(), s, t, (ax.a, ax.b), tg)?;
    egorov_against(ham, a.as_ref(), &sym, t - s, grid, h)
}

/// As [`egorov_evolve`] with the transported symbol supplied by the caller;
/// it does not depend on h, so a ladder sweep can tabulate it once.
pub fn egorov_against(
    ham: &dyn Hamiltonian,
    a: &dyn Symbol,
    transported: &dyn Symbol,
    elapsed: f64,
    grid: &GridSpec,
    h: f64,
) -> Result<EgorovResult> {
    let op = quantization::weyl_quantize(a, grid, h)?;
    let group = UnitaryGroup::new(&hamiltonian_operator(ham, grid, h)?)?;
    let conj = group.heisenberg(&op.matrix, elapsed);
    let transported = quantization::weyl_quantize(transported, grid, h)?;
    let residual = linalg::op_norm(&linalg::sub(&conj, &transported.matrix));
    Ok(EgorovResult { conjugated: op.with_matrix(conj, OpTag::Propagator), transported, residual })
}

/// Location of the largest Husimi value.
pub fn husimi_peak(f: &PhaseSpaceField) -> (f64, f64) {
    let (mut best, mut at) = (f64::NEG_INFINITY, (0.0, 0.0));
    for (i, x) in f.x.iter().enumerate() {
        for (k, xi) in f.xi.iter().enumerate() {
            let v = f.value(i, k).re;
            if v > best {
                best = v;
                at = (*x, *xi);
            }
        }
    }
    at
}

/// Sliced 1-Wasserstein distance between two weighted point clouds in the
/// plane (each normalized to unit mass), averaged over 32 directions.
pub fn sliced_w1(a: &[(f64, f64, f64)], b: &[(f64, f64, f64)]) -> f64 {
    let ma: f64 = a.iter().map(|v| v.2).sum();
    let mb: f64 = b.iter().map(|v| v.2).sum();
    let dirs = 32;
    let mut total = 0.0;
    for k in 0..dirs {
        let th = PI * k as f64 / dirs as f64;
        let (c, s) = (th.cos(), th.sin());
        let mut ev: Vec<(f64, f64)> = a.iter().map(|p| (c * p.0 + s * p.1, p.2 / ma)).collect();
        ev.extend(b.iter().map(|p| (c * p.0 + s * p.1, -p.2 / mb)));
        ev.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut cdf = 0.0;
        for w in ev.windows(2) {
            cdf += w[0].1;
            total += cdf.abs() * (w[1].0 - w[0].0);
        }
    }
    total / dirs as f64
}

/// Discrepancy between Husimi(ψ(t)) and the push-forward of Husimi(ψ0)
/// under Φ^{t,0} (sample points transported classically), as a sliced W1
/// distance. ψ(t) comes from the split-step oracle.
pub fn measure_pushforward_check(ham: &dyn Hamiltonian, psi0: &WaveField, t: f64) -> Result<f64> {
    let prop = GridPropagator::for_grid(&psi0.grid, psi0.h, t)?;
    let psit = prop.propagate(ham, psi0, 0.0, t)?;
    let z0 = transforms::default_z_grid(psi0)?;
    let zt = transforms::default_z_grid(&psit)?;
    let h0 = transforms::husimi(psi0, &z0)?;
    let ht = transforms::husimi(&psit, &zt)?;
    let cloud = |f: &PhaseSpaceField| -> Vec<(f64, f64, f64)> {
        let max = f.values.iter().map(|v| v.re).fold(0.0, f64::max);
        let mut out = Vec::new();
        for (i, x) in f.x.iter().enumerate() {
            for (k, xi) in f.xi.iter().enumerate() {
                let v = f.value(i, k).re;
                if v > 1e-8 * max {
                    out.push((*x, *xi, v));
                }
            }
        }
        out
    };
    let start = cloud(&h0);
    let pushed: Vec<(f64, f64, f64)> = start
        .par_iter()
        .map(|&(x, xi, w)| phasespace::flow_point(ham, &[x, xi], 0.0, t, 1e-10).map(|z| (z[0], z[1], w)))
        .collect::<Result<_>>()?;
    Ok(sliced_w1(&pushed, &cloud(&ht)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenReport {
    pub index: usize,
    pub eigenvalue: f64,
    /// Husimi mass within distance δ of {ξ² + V(x) = E}.
    pub shell_fraction: f64,
}

/// Eigenfunctions of Op_h(ξ² + V) with eigenvalue closest to `energy`, and
/// the fraction of their Husimi mass near the corresponding energy shell.
pub fn eigenfunction_diagnostics(
    v: &(dyn Fn(f64) -> f64 + Sync),
    grid: &GridSpec,
    h: f64,
    energy: f64,
    delta: f64,
    count: usize,
) -> Result<Vec<EigenReport>> {
    let mut op = quantization::weyl_quantize(&PolySymbol::new(vec![(1.0, 0, 2)]), grid, h)?;
    let ax = grid.axes[0].clone();
    let xs = ax.points();
    for (i, x) in xs.iter().enumerate() {
        op.matrix[(i, i)] += C64::new(v(*x), 0.0);
    }
    // the grid is periodic in x, so only the momentum cutoff bounds the band
    let band = {
        let m = ax.xi_max(h);
        xs.iter().map(|x| m * m + v(*x)).fold(f64::INFINITY, f64::min)
    };
    if energy >= band {
        return Err(Error::SpectralBand { lo: energy, hi: energy, band });
    }
    let (vals, vecs) = linalg::eigh(&linalg::hermitian_part(&op.matrix))?;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| (vals[i] - energy).abs().total_cmp(&(vals[j] - energy).abs()));
    // shell polyline
    let fine = 4096;
    let mut shell = Vec::new();
    for k in 0..fine {
        let x = ax.a + (ax.b - ax.a) * k as f64 / fine as f64;
        let r = energy - v(x);
        if r >= 0.0 {
            shell.push((x, r.sqrt()));
            shell.push((x, -r.sqrt()));
        }
    }
    let zg = GridSpec::new(vec![ax.clone(), Axis::new(-ax.xi_max(h), ax.xi_max(h), (ax.n / 2).max(8))?])?;
    order
        .into_iter()
        .take(count)
        .map(|idx| {
            let samples = (0..xs.len()).map(|i| vecs[(i, idx)]).collect();
            let mut f = WaveField::new(grid.clone(), h, samples)?;
            f.normalize();
            let hus = transforms::husimi(&f, &zg)?;
            let (mut inside, mut total) = (0.0, 0.0);
            for (i, x) in hus.x.iter().enumerate() {
                for (k, xi) in hus.xi.iter().enumerate() {
                    let w = hus.value(i, k).re;
                    total += w;
                    let dist = shell
                        .iter()
                        .map(|(sx, sk)| ((x - sx).powi(2) + (xi - sk).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min);
                    if dist <= delta {
                        inside += w;
                    }
                }
            }
            Ok(EigenReport {
                index: idx,
                eigenvalue: vals[idx],
                shell_fraction: if total > 0.0 { inside / total } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasespace::{Free, Harmonic, Quartic};
    use crate::quantization::GaussianBump;
    use crate::transforms::coherent_state;
    use crate::wavepackets::render;

    fn packet_field(grid: &GridSpec, h: f64, q: f64, p: f64) -> WaveField {
        WaveField::from_profile(grid, h, |x| coherent_state(x, &[q], &[p], h)).unwrap()
    }

    #[test]
    fn refuses_large_steps() {
        let g = line_for(0.0, 8.0, 3.0, 0.05).unwrap();
        match GridPropagator::new(&g, 0.05, 1.0) {
            Err(Error::TimeStep { suggested, .. }) => assert!(GridPropagator::new(&g, 0.05, suggested).is_ok()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn free_evolution_matches_closed_form() {
        // exact free Gaussian: Γ(t) = (t + i)/(1 + t²), action p²t/2, and the
        // metaplectic phase −½ arctan t
        let h = 1.0 / 32.0;
        let g = line_for(0.5, 10.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, -1.0, 1.0);
        let prop = GridPropagator::for_grid(&g, h, 1.0).unwrap();
        let out = prop.propagate(&Free { d: 1 }, &psi0, 0.0, 1.0).unwrap();
        let t = 1.0f64;
        let gam = C64::new(t, 1.0) / (1.0 + t * t);
        let c = (PI * h).powf(-0.25) * gam.im.powf(0.25);
        // det(A + BΓ0) = 1 + it; action p²t/2
        let phase = 0.5 * t / h - 0.5 * t.atan();
        let exact = WaveField::from_fn(&g, h, |x| {
            let y = x[0];
            C64::from_polar(c, phase) * (C64::new(0.0, 1.0) / h * (1.0 * y + 0.5 * gam * y * y)).exp()
        })
        .unwrap();
        assert!(out.distance(&exact) < 1e-8, "{}", out.distance(&exact));
        assert!((out.norm() - psi0.norm()).abs() < 1e-10);
        let same = prop.propagate(&Free { d: 1 }, &psi0, 0.3, 0.3).unwrap();
        assert_eq!(same.samples, psi0.samples);
    }

    #[test]
    fn harmonic_period_returns_initial_state() {
        let h = 1.0 / 16.0;
        let g = line_for(0.0, 10.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, 1.0, 0.5);
        let prop = GridPropagator::for_grid(&g, h, 2.0 * PI).unwrap();
        let out = prop.propagate(&Harmonic { d: 1, omega: 1.0 }, &psi0, 0.0, 2.0 * PI).unwrap();
        assert!(out.inner(&psi0).norm() >= 1.0 - 1e-6);
        // second-order self-convergence in Δt
        let t = 1.0;
        let ham = Quartic { d: 1 };
        let run = |dt: f64| GridPropagator::new(&g, h, dt).unwrap().propagate(&ham, &psi0, 0.0, t).unwrap();
        let base = prop.dt * 4.0;
        let (a, b, c) = (run(base), run(base / 2.0), run(base / 4.0));
        let order = (a.distance(&b) / b.distance(&c)).log2();
        assert!((order - 2.0).abs() < 0.2, "{order}");
    }

    #[test]
    fn dense_group_matches_split_step() {
        let h = 1.0 / 16.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let ham = Quartic { d: 1 };
        let psi0 = packet_field(&g, h, 0.8, 0.0);
        let group = UnitaryGroup::new(&hamiltonian_operator(&ham, &g, h).unwrap()).unwrap();
        let u = group.at(1.0);
        let v = Mat::from_fn(g.len(), 1, |i, _| psi0.samples[i]);
        let w = linalg::matmul(&u, &v);
        let dense = WaveField { samples: (0..g.len()).map(|i| w[(i, 0)]).collect(), ..psi0.clone() };
        let split = GridPropagator::new(&g, h, 1e-4).unwrap().propagate(&ham, &psi0, 0.0, 1.0).unwrap();
        assert!(dense.distance(&split) < 1e-5, "{}", dense.distance(&split));
    }

    #[test]
    fn fio_at_time_zero_is_bargmann_inversion() {
        let h = 1.0 / 32.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, 0.5, -0.3);
        let cfg = FioConfig::default();
        let th = thawed_fio_apply(&Quartic { d: 1 }, &psi0, 0.0, &cfg).unwrap();
        let fr = frozen_fio_apply(&Quartic { d: 1 }, &psi0, 0.0, &cfg).unwrap();
        assert!(th.field.distance(&psi0) < 1e-3);
        assert!(fr.field.distance(&psi0) < 1e-3);
        let e = FioEnsemble::build(&Quartic { d: 1 }, &psi0, 0.0, &cfg).unwrap();
        assert!(e.prefactors.iter().all(|k| (k - 1.0).norm() < 1e-14));
    }

    #[test]
    fn free_particle_prefactor_closed_form() {
        let z = PhasePoint::new(vec![0.2], vec![0.7]).unwrap();
        let ks = hk_prefactor_path(&Free { d: 1 }, &z, 6.0, 48, 1e-11).unwrap();
        for (j, k) in ks.iter().enumerate() {
            let t = 6.0 * (j + 1) as f64 / 48.0;
            let exact = (C64::new(2.0, -t)).sqrt() / 2f64.sqrt();
            assert!((k - exact).norm() < 1e-8, "t={t}: {k} vs {exact}");
        }
        for w in ks.windows(2) {
            assert!(wrap_angle(w[1].arg() - w[0].arg()).abs() < PI / 2.0);
        }
    }

    #[test]
    fn quadratic_hamiltonians_are_exact_for_fios() {
        let h = 1.0 / 32.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let ham = Harmonic { d: 1, omega: 1.0 };
        let psi0 = packet_field(&g, h, 0.8, 0.2);
        let exact = GridPropagator::for_grid(&g, h, 1.0).unwrap().propagate(&ham, &psi0, 0.0, 1.0).unwrap();
        let cfg = FioConfig::default();
        let th = thawed_fio_apply(&ham, &psi0, 1.0, &cfg).unwrap();
        let fr = frozen_fio_apply(&ham, &psi0, 1.0, &cfg).unwrap();
        assert!(th.field.distance(&exact) < 2e-3, "{}", th.field.distance(&exact));
        assert!(fr.field.distance(&exact) < 2e-3, "{}", fr.field.distance(&exact));
        assert!(th.coverage_deficit < 1e-3);
    }

    #[test]
    fn fio_reduction_is_order_fixed() {
        let h = 1.0 / 16.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, 0.8, 0.0);
        let cfg = FioConfig::default();
        let a = frozen_fio_apply(&Quartic { d: 1 }, &psi0, 0.5, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| frozen_fio_apply(&Quartic { d: 1 }, &psi0, 0.5, &cfg).unwrap());
        assert_eq!(a.field.samples, b.field.samples);
    }

    #[test]
    fn stratified_sampling_in_two_dimensions() {
        let h = 0.1;
        let g = GridSpec::new(vec![Axis::new(-3.0, 3.0, 64).unwrap(), Axis::new(-3.0, 3.0, 64).unwrap()]).unwrap();
        let psi0 = WaveField::from_profile(&g, h, |x| coherent_state(x, &[0.0, 0.2], &[0.3, 0.0], h)).unwrap();
        let cfg = |per_axis| FioConfig {
            quadrature: FioQuadrature::Stratified { per_axis, seed: 7 },
            ..FioConfig::default()
        };
        let coarse = frozen_fio_apply(&Free { d: 2 }, &psi0, 0.0, &cfg(6)).unwrap();
        let fine = frozen_fio_apply(&Free { d: 2 }, &psi0, 0.0, &cfg(8)).unwrap();
        let (e6, e8) = (coarse.field.distance(&psi0), fine.field.distance(&psi0));
        assert!(e6 < 0.1 && e8 < 0.05 && e8 < e6, "{e6} {e8}");
        assert!(fine.coverage_deficit < 0.01, "{}", fine.coverage_deficit);
        let again = frozen_fio_apply(&Free { d: 2 }, &psi0, 0.0, &cfg(6)).unwrap();
        assert_eq!(coarse.field.samples, again.field.samples);
    }

    #[test]
    fn egorov_trivial_time() {
        let h = 1.0 / 16.0;
        let g = line_for(0.0, 4.4, 3.0, h).unwrap();
        let a: Arc<dyn Symbol> = Arc::new(GaussianBump::new(1.0, 0.0, 0.0, 0.45));
        let r = egorov_evolve(&Quartic { d: 1 }, a, 0.0, 0.0, &g, h, TransportGrid::default()).unwrap();
        assert!(r.residual < 1e-8, "{}", r.residual);
    }

    #[test]
    fn egorov_is_exact_for_harmonic_flow() {
        let a: Arc<dyn Symbol> = Arc::new(GaussianBump::new(1.0, 0.3, 0.0, 0.45));
        let ham = Harmonic { d: 1, omega: 1.0 };
        let moved = transported_symbol(&ham, a.clone(), 0.0, 1.0, (-3.0, 3.0), TransportGrid::default()).unwrap();
        let mut res = Vec::new();
        for q in [4, 5] {
            let h = 2f64.powi(-q);
            let g = line_for(0.0, 6.0, 3.0, h).unwrap();
            let r = egorov_against(&ham, a.as_ref(), &moved, 1.0, &g, h).unwrap().residual;
            if q == 4 {
                let direct = egorov_evolve(&ham, a.clone(), 0.0, 1.0, &g, h, TransportGrid::default()).unwrap();
                assert_eq!(direct.residual.to_bits(), r.to_bits());
            }
            res.push(r);
        }
        assert!(res.iter().all(|r| *r < 1e-6), "{res:?}");
    }

    #[test]
    fn husimi_peaks_follow_the_flow() {
        let h = 1.0 / 64.0;
        let g = line_for(0.5, 8.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, 0.0, 1.0);
        let prop = GridPropagator::for_grid(&g, h, 1.0).unwrap();
        let out = prop.propagate(&Free { d: 1 }, &psi0, 0.0, 1.0).unwrap();
        let hus = transforms::husimi(&out, &transforms::default_z_grid(&out).unwrap()).unwrap();
        let (x, xi) = husimi_peak(&hus);
        assert!((x - 1.0).abs() < 0.1 && (xi - 1.0).abs() < 0.1, "{x} {xi}");
        let ham = Harmonic { d: 1, omega: 1.0 };
        let psi1 = packet_field(&line_for(0.0, 8.0, 3.0, h).unwrap(), h, 1.0, 0.5);
        let prop = GridPropagator::for_grid(&psi1.grid, h, PI).unwrap();
        let out = prop.propagate(&ham, &psi1, 0.0, PI).unwrap();
        let hus = transforms::husimi(&out, &transforms::default_z_grid(&out).unwrap()).unwrap();
        let (x, xi) = husimi_peak(&hus);
        assert!((x + 1.0).abs() < 0.1 && (xi + 0.5).abs() < 0.1, "{x} {xi}");
    }

    #[test]
    fn pushforward_discrepancy() {
        let h = 1.0 / 32.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let psi0 = packet_field(&g, h, 0.8, 0.0);
        let ham = Quartic { d: 1 };
        assert!(measure_pushforward_check(&ham, &psi0, 0.0).unwrap() < 1e-12);
        let d1 = measure_pushforward_check(&ham, &psi0, 1.0).unwrap();
        let h2 = h / 4.0;
        let g2 = line_for(0.0, 8.0, 3.0, h2).unwrap();
        let d2 = measure_pushforward_check(&ham, &packet_field(&g2, h2, 0.8, 0.0), 1.0).unwrap();
        assert!(d2 < d1, "{d1} {d2}");
    }

    #[test]
    fn sliced_distance_of_shifted_clouds() {
        let a = vec![(0.0, 0.0, 1.0)];
        let b = vec![(1.0, 0.0, 1.0)];
        // mean of |cos θ| over the half circle is 2/π
        assert!((sliced_w1(&a, &b) - 2.0 / PI).abs() < 0.02);
        assert_eq!(sliced_w1(&a, &a), 0.0);
    }

    #[test]
    fn harmonic_ground_state_concentrates_on_shell() {
        let h = 1.0 / 32.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let rep = eigenfunction_diagnostics(&|x| x * x, &g, h, h, 4.0 * h.sqrt(), 1).unwrap();
        assert!((rep[0].eigenvalue - h).abs() < 1e-8);
        assert!(rep[0].shell_fraction >= 0.95);
        let all = eigenfunction_diagnostics(&|x| x * x, &g, h, h, 1e3, 1).unwrap();
        assert!((all[0].shell_fraction - 1.0).abs() < 1e-12);
        assert!(eigenfunction_diagnostics(&|x| x * x, &g, h, 100.0, 0.1, 1).is_err());
    }

    #[test]
    fn torus_modes_sit_on_unit_momentum() {
        let h = 1.0 / 8.0;
        let g = GridSpec::line(-PI, PI, 64).unwrap();
        let rep = eigenfunction_diagnostics(&|_| 0.0, &g, h, 1.0, 0.5, 2).unwrap();
        for r in rep {
            assert!((r.eigenvalue - 1.0).abs() < 1e-10);
            assert!(r.shell_fraction > 0.9, "{}", r.shell_fraction);
        }
    }

    #[test]
    fn rendered_packets_feed_the_oracle() {
        let h = 1.0 / 16.0;
        let g = line_for(0.0, 8.0, 3.0, h).unwrap();
        let pkt = GaussianPacket::coherent(&[0.5], &[0.0], h).unwrap();
        let psi0 = render(&pkt, &g).unwrap();
        let out = GridPropagator::for_grid(&g, h, 1.0).unwrap().propagate(&Quartic { d: 1 }, &psi0, 0.0, 1.0).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }
}
