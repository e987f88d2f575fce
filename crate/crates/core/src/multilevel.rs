//! Two-level matrix potentials V(x) = [[w1, w2], [w2, −w1]]: eigenprojectors,
//! parallel transport, adiabatic Egorov checks, Landau–Zener rates and the
//! surface-hopping process, with a grid solver for the coupled system.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use faer::Mat;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fft;
use crate::linalg::{self, CMat};
use crate::ode::Dopri;
use crate::phasespace::PhasePoint;
use crate::propagators::{TransportGrid, MAX_KINETIC_PHASE};
use crate::quantization::{self, gauss_hermite, MatrixSymbol, PolySymbol, Symbol, TabulatedSymbol};
use crate::transforms::{Axis, GridSpec, WaveField};
use crate::{Error, Result, C64};

pub const GAP_FLOOR: f64 = 1e-6;

type Map2 = Arc<dyn Fn(&[f64]) -> [f64; 2] + Send + Sync>;
type Jac = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type M2 = [[f64; 2]; 2];

/// Real symmetric traceless 2×2 potential over R^d given by w: R^d → R²
/// and its Jacobian dw (2×d, row-major).
#[derive(Clone)]
pub struct MatrixPotential {
    pub d: usize,
    pub name: String,
    pub gap_floor: f64,
    w: Map2,
    dw: Jac,
}

impl std::fmt::Debug for MatrixPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatrixPotential").field("d", &self.d).field("name", &self.name).finish()
    }
}

impl MatrixPotential {
    pub fn new(
        d: usize,
        name: &str,
        w: impl Fn(&[f64]) -> [f64; 2] + Send + Sync + 'static,
        dw: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { d, name: name.into(), gap_floor: GAP_FLOOR, w: Arc::new(w), dw: Arc::new(dw) }
    }

    /// Linear conical crossing w(x) = x in d = 2.
    pub fn conical() -> Self {
        Self::new(2, "conical", |x| [x[0], x[1]], |_| vec![1.0, 0.0, 0.0, 1.0])
    }

    /// Constant w = (c, 0): V = diag(c, −c).
    pub fn diagonal(d: usize, c: f64) -> Self {
        Self::new(d, "diagonal", move |_| [c, 0.0], move |_| vec![0.0; 2 * d])
    }

    /// Gapped d = 1 potential w(x) = (cos φ, sin φ) with φ(x) = κ e^{−x²/σ²}:
    /// |w| = 1 everywhere while the eigenvectors rotate by φ/2.
    pub fn rotating(kappa: f64, sigma: f64) -> Self {
        let phi = move |x: f64| kappa * (-x * x / (sigma * sigma)).exp();
        let dphi = move |x: f64| -2.0 * x / (sigma * sigma) * phi(x);
        Self::new(
            1,
            "rotating",
            move |x| [phi(x[0]).cos(), phi(x[0]).sin()],
            move |x| {
                let (p, dp) = (phi(x[0]), dphi(x[0]));
                vec![-p.sin() * dp, p.cos() * dp]
            },
        )
    }

    pub fn w(&self, x: &[f64]) -> [f64; 2] {
        (self.w)(x)
    }

    pub fn dw(&self, x: &[f64]) -> Vec<f64> {
        (self.dw)(x)
    }

    pub fn matrix(&self, x: &[f64]) -> M2 {
        let [a, b] = self.w(x);
        [[a, b], [b, -a]]
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        let [a, b] = self.w(x);
        a.hypot(b)
    }

    pub fn gap(&self, x: &[f64]) -> f64 {
        2.0 * self.norm(x)
    }

    /// dw(x)ξ ∈ R².
    pub fn directional(&self, x: &[f64], xi: &[f64]) -> [f64; 2] {
        let j = self.dw(x);
        let d = self.d;
        let mut out = [0.0; 2];
        for r in 0..2 {
            out[r] = (0..d).map(|k| j[r * d + k] * xi[k]).sum();
        }
        out
    }

    /// Hopping-surface function σ(x, ξ) = w·(dw ξ) = ½ d/dt |w|² along ẋ = ξ.
    pub fn sigma(&self, x: &[f64], xi: &[f64]) -> f64 {
        let w = self.w(x);
        let v = self.directional(x, xi);
        w[0] * v[0] + w[1] * v[1]
    }

    fn unit(&self, x: &[f64]) -> Result<[f64; 2]> {
        let [a, b] = self.w(x);
        let n = a.hypot(b);
        if n < self.gap_floor {
            return Err(Error::Gap { x: x.to_vec(), norm: n });
        }
        Ok([a / n, b / n])
    }

    /// Projector onto the band ℓ = ±1 eigenspace, (Id + ℓ V/|w|)/2.
    pub fn projector(&self, x: &[f64], band: i8) -> Result<M2> {
        let [u1, u2] = self.unit(x)?;
        let l = band as f64;
        Ok([[0.5 * (1.0 + l * u1), 0.5 * l * u2], [0.5 * l * u2, 0.5 * (1.0 - l * u1)]])
    }

    /// Unit eigenvector of band ℓ (defined up to sign, with a cut along the
    /// direction w ∝ (−1, 0)).
    pub fn band_vector(&self, x: &[f64], band: i8) -> Result<[f64; 2]> {
        let [u1, u2] = self.unit(x)?;
        let th = u2.atan2(u1);
        let (c, s) = ((0.5 * th).cos(), (0.5 * th).sin());
        Ok(if band > 0 { [c, s] } else { [-s, c] })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenStructure {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub pi_plus: M2,
    pub pi_minus: M2,
}

pub fn eigen_structure(vp: &MatrixPotential, x: &[f64]) -> Result<EigenStructure> {
    let pi_plus = vp.projector(x, 1)?;
    let pi_minus = vp.projector(x, -1)?;
    let n = vp.norm(x);
    Ok(EigenStructure { lambda_plus: n, lambda_minus: -n, pi_plus, pi_minus })
}

fn mat2_mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// dΠ_ℓ/dt along a curve with velocity ẋ = ξ.
fn projector_rate(vp: &MatrixPotential, x: &[f64], xi: &[f64], band: i8) -> Result<M2> {
    let u = vp.unit(x)?;
    let n = vp.norm(x);
    let v = vp.directional(x, xi);
    let dot = u[0] * v[0] + u[1] * v[1];
    let du = [(v[0] - dot * u[0]) / n, (v[1] - dot * u[1]) / n];
    let l = 0.5 * band as f64;
    Ok([[l * du[0], l * du[1]], [l * du[1], -l * du[0]]])
}

/// Parallel-transport generator F = [Π̇, Π].
fn generator(vp: &MatrixPotential, x: &[f64], xi: &[f64], band: i8) -> Result<M2> {
    let dp = projector_rate(vp, x, xi, band)?;
    let p = vp.projector(x, band)?;
    let (a, b) = (mat2_mul(&dp, &p), mat2_mul(&p, &dp));
    Ok([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportFrame {
    pub r: M2,
    pub time: f64,
}

impl TransportFrame {
    pub fn orthogonality_defect(&self) -> f64 {
        let r = &self.r;
        let rt = [[r[0][0], r[1][0]], [r[0][1], r[1][1]]];
        let m = mat2_mul(&rt, r);
        (m[0][0] - 1.0).abs().max((m[1][1] - 1.0).abs()).max(m[0][1].abs()).max(m[1][0].abs())
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.r[0][0] * v[0] + self.r[0][1] * v[1], self.r[1][0] * v[0] + self.r[1][1] * v[1]]
    }
}

fn integrate_frames(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    y0: Vec<f64>,
    times: &[f64],
    tol: f64,
    err: &std::cell::Cell<Option<Error>>,
) -> Result<Vec<Vec<f64>>> {
    let mut st = Dopri::new(&mut rhs, 0.0, &y0, tol);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let r = st.advance_to(t);
        if let Some(e) = err.take() {
            return Err(e);
        }
        r?;
        out.push(st.y().to_vec());
    }
    Ok(out)
}

fn frame_of(y: &[f64], time: f64) -> TransportFrame {
    TransportFrame { r: [[y[0], y[1]], [y[2], y[3]]], time }
}

/// Parallel transport ∂_t R = F(x(t), ẋ(t)) R, R(0) = Id, along a prescribed
/// curve t ↦ (x(t), ẋ(t)); frames at each of `times` (increasing from 0).
pub fn parallel_transport_along(
    vp: &MatrixPotential,
    curve: impl Fn(f64) -> (Vec<f64>, Vec<f64>),
    band: i8,
    times: &[f64],
    tol: f64,
) -> Result<Vec<TransportFrame>> {
    let err = std::cell::Cell::new(None);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, v) = curve(t);
        match generator(vp, &x, &v, band) {
            Ok(f) => {
                for i in 0..2 {
                    for j in 0..2 {
                        dy[2 * i + j] = f[i][0] * y[j] + f[i][1] * y[2 + j];
                    }
                }
            }
            Err(e) => {
                err.set(Some(e));
                dy.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    };
    let ys = integrate_frames(rhs, vec![1.0, 0.0, 0.0, 1.0], times, tol, &err)?;
    Ok(ys.iter().zip(times).map(|(y, &t)| frame_of(y, t)).collect())
}

/// Right-hand side of the band-ℓ flow for |ξ|²/2 + ℓ|w(x)| with the action:
/// state (x, ξ, S).
fn band_rhs<'a>(
    vp: &'a MatrixPotential,
    band: i8,
    err: &'a std::cell::Cell<Option<Error>>,
) -> impl FnMut(f64, &[f64], &mut [f64]) + 'a {
    let d = vp.d;
    move |_t, y, dy| {
        let (x, xi) = (&y[..d], &y[d..2 * d]);
        let w = vp.w(x);
        let n = w[0].hypot(w[1]);
        if n < vp.gap_floor {
            err.set(Some(Error::Gap { x: x.to_vec(), norm: n }));
            dy.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let j = vp.dw(x);
        let l = band as f64;
        let mut k2 = 0.0;
        for k in 0..d {
            dy[k] = xi[k];
            let grad = (w[0] * j[k] + w[1] * j[d + k]) / n;
            dy[d + k] = -l * grad;
            k2 += xi[k] * xi[k];
        }
        dy[2 * d] = 0.5 * k2 - l * n;
    }
}

/// Band flow of z together with its transport frame, at each of `times`.
pub fn parallel_transport(
    vp: &MatrixPotential,
    z0: &PhasePoint,
    band: i8,
    times: &[f64],
    tol: f64,
) -> Result<Vec<(PhasePoint, TransportFrame)>> {
    let d = vp.d;
    let err = std::cell::Cell::new(None);
    let mut flow = band_rhs(vp, band, &err);
    let mut buf = vec![0.0; 2 * d + 1];
    let err2 = std::cell::Cell::new(None);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        flow(t, &y[..2 * d + 1], &mut buf);
        dy[..2 * d + 1].copy_from_slice(&buf);
        let r = &y[2 * d + 1..];
        match generator(vp, &y[..d], &y[d..2 * d], band) {
            Ok(f) => {
                for i in 0..2 {
                    for j in 0..2 {
                        dy[2 * d + 1 + 2 * i + j] = f[i][0] * r[j] + f[i][1] * r[2 + j];
                    }
                }
            }
            Err(e) => err2.set(Some(e)),
        }
    };
    let mut y0 = z0.to_vec();
    y0.push(0.0);
    y0.extend([1.0, 0.0, 0.0, 1.0]);
    let ys = integrate_frames(rhs, y0, times, tol, &err2)?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(ys
        .iter()
        .zip(times)
        .map(|(y, &t)| (PhasePoint::from_slice(&y[..2 * d]), frame_of(&y[2 * d + 1..], t)))
        .collect())
}

/// Landau–Zener transition probability exp(−π|w|²/(h|dw(x)ξ|)).
pub fn lz_rate(vp: &MatrixPotential, z: &PhasePoint, h: f64) -> Result<f64> {
    let v = vp.directional(&z.q, &z.p);
    let den = v[0].hypot(v[1]);
    if den < 1e-14 {
        return Err(Error::Tangential(den));
    }
    let n = vp.norm(&z.q);
    Ok((-PI * n * n / (h * den)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopState {
    pub z: PhasePoint,
    pub band: i8,
    pub weight: f64,
    /// Action accumulated along the branch.
    pub phase: f64,
    pub branch_id: u64,
    pub t: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HopEnsemble {
    pub states: Vec<HopState>,
    /// Number of crossings at which branching was suppressed by the cap or
    /// the weight threshold.
    pub suppressed: usize,
}

impl HopEnsemble {
    /// Tensor Gauss–Hermite sampling of the Wigner function of g^h_z
    /// (independent normals of variance h/2 in every coordinate).
    pub fn coherent(z: &PhasePoint, band: i8, h: f64, nodes: usize) -> Self {
        let (u, w) = gauss_hermite(nodes);
        let dim = 2 * z.dim();
        let c = z.to_vec();
        let sd = (h / 2.0).sqrt();
        let total = nodes.pow(dim as u32);
        let states = (0..total)
            .map(|mut idx| {
                let mut p = c.clone();
                let mut wt = 1.0;
                for k in 0..dim {
                    let j = idx % nodes;
                    idx /= nodes;
                    p[k] += sd * 2f64.sqrt() * u[j];
                    wt *= w[j] / PI.sqrt();
                }
                HopState { z: PhasePoint::from_slice(&p), band, weight: wt, phase: 0.0, branch_id: 0, t: 0.0 }
            })
            .enumerate()
            .map(|(i, mut s)| {
                s.branch_id = (i as u64) << 24;
                s
            })
            .collect();
        Self { states, suppressed: 0 }
    }

    pub fn total_weight(&self) -> f64 {
        self.states.iter().map(|s| s.weight).sum()
    }

    pub fn population(&self, band: i8) -> f64 {
        self.states.iter().filter(|s| s.band == band).map(|s| s.weight).sum()
    }

    /// CSV snapshot: branch_id,t,x1..,ξ1..,band,weight,S.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let d = self.states.first().map(|s| s.z.dim()).unwrap_or(2);
        let mut head = vec!["branch_id".to_string(), "t".into()];
        head.extend((1..=d).map(|k| format!("x{k}")));
        head.extend((1..=d).map(|k| format!("xi{k}")));
        head.extend(["band".into(), "weight".into(), "S".into()]);
        writeln!(w, "{}", head.join(","))?;
        for s in &self.states {
            let mut row = vec![s.branch_id.to_string(), format!("{:e}", s.t)];
            row.extend(s.z.q.iter().chain(&s.z.p).map(|v| format!("{v:e}")));
            row.extend([s.band.to_string(), format!("{:e}", s.weight), format!("{:e}", s.phase)]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HopMode {
    /// Deterministic weight splitting (T, 1 − T) at every crossing.
    Splitting { max_branches: usize, prune: f64 },
    /// One random switch decision per crossing, from a per-trajectory stream.
    MonteCarlo { seed: u64 },
}

impl Default for HopMode {
    fn default() -> Self {
        HopMode::Splitting { max_branches: 1 << 12, prune: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HopConfig {
    pub mode: HopMode,
    pub tol: f64,
    /// Maximum integration step (crossings are searched step by step).
    pub max_step: f64,
}

impl Default for HopConfig {
    fn default() -> Self {
        Self { mode: HopMode::default(), tol: 1e-10, max_step: 1e-2 }
    }
}

struct Leg {
    y: Vec<f64>,
    t: f64,
    band: i8,
    weight: f64,
    id: u64,
}

enum LegEnd {
    Final(Vec<f64>),
    Crossing { t: f64, y: Vec<f64> },
}

fn integrate_to(vp: &MatrixPotential, band: i8, y: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>> {
    let err = std::cell::Cell::new(None);
    let mut st = Dopri::new(band_rhs(vp, band, &err), t0, y, tol);
    let r = st.advance_to(t1);
    if let Some(e) = err.take() {
        return Err(e);
    }
    r?;
    Ok(st.y().to_vec())
}

/// Runs one band leg until t_final or the first minimal-gap crossing
/// (σ changing from negative to non-negative), located by bisection.
fn run_leg(vp: &MatrixPotential, leg: &Leg, t_final: f64, cfg: &HopConfig) -> Result<LegEnd> {
    let d = vp.d;
    let sig = |y: &[f64]| vp.sigma(&y[..d], &y[d..2 * d]);
    let mut t = leg.t;
    let mut y = leg.y.clone();
    let mut prev = sig(&y);
    while t < t_final {
        let t1 = (t + cfg.max_step).min(t_final);
        let y1 = integrate_to(vp, leg.band, &y, t, t1, cfg.tol)?;
        let s1 = sig(&y1);
        if prev < 0.0 && s1 >= 0.0 {
            let (mut a, mut b) = (t, t1);
            let mut yb = y1;
            for _ in 0..60 {
                if b - a < 1e-13 {
                    break;
                }
                let m = 0.5 * (a + b);
                let ym = integrate_to(vp, leg.band, &y, t, m, cfg.tol)?;
                if sig(&ym) >= 0.0 {
                    b = m;
                    yb = ym;
                } else {
                    a = m;
                }
            }
            return Ok(LegEnd::Crossing { t: b, y: yb });
        }
        t = t1;
        y = y1;
        prev = s1;
    }
    Ok(LegEnd::Final(y))
}

fn simulate_one(
    vp: &MatrixPotential,
    s: &HopState,
    index: u64,
    t_final: f64,
    h: f64,
    cfg: &HopConfig,
) -> Result<(Vec<HopState>, usize)> {
    let d = vp.d;
    let mut y0 = s.z.to_vec();
    y0.push(s.phase);
    let mut stack = vec![Leg { y: y0, t: s.t, band: s.band, weight: s.weight, id: s.branch_id }];
    let mut out = Vec::new();
    let mut suppressed = 0;
    let mut rng = match cfg.mode {
        HopMode::MonteCarlo { seed } => Some(crate::rng::stream(seed, index)),
        _ => None,
    };
    let mut next_id = 1u64;
    while let Some(leg) = stack.pop() {
        match run_leg(vp, &leg, t_final, cfg)? {
            LegEnd::Final(y) => out.push(HopState {
                z: PhasePoint::from_slice(&y[..2 * d]),
                band: leg.band,
                weight: leg.weight,
                phase: y[2 * d],
                branch_id: leg.id,
                t: t_final,
            }),
            LegEnd::Crossing { t, y } => {
                let zc = PhasePoint::from_slice(&y[..2 * d]);
                let rate = lz_rate(vp, &zc, h)?;
                match (cfg.mode, rng.as_mut()) {
                    (HopMode::Splitting { max_branches, prune }, _) => {
                        let live = out.len() + stack.len() + 1;
                        let small = rate.min(1.0 - rate) * leg.weight < prune;
                        if small || live >= max_branches {
                            suppressed += 1;
                            let band = if rate > 0.5 { -leg.band } else { leg.band };
                            stack.push(Leg { y, t, band, weight: leg.weight, id: leg.id });
                        } else {
                            let stay = leg.weight * (1.0 - rate);
                            let hop = leg.weight - stay;
                            stack.push(Leg { y: y.clone(), t, band: leg.band, weight: stay, id: leg.id });
                            stack.push(Leg { y, t, band: -leg.band, weight: hop, id: s.branch_id + next_id });
                            next_id += 1;
                        }
                    }
                    (HopMode::MonteCarlo { .. }, Some(r)) => {
                        let band = if r.random::<f64>() < rate { -leg.band } else { leg.band };
                        stack.push(Leg { y, t, band, weight: leg.weight, id: leg.id });
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
    out.sort_by_key(|s| s.branch_id);
    Ok((out, suppressed))
}

/// Propagates every member along its band flow, branching (or switching at
/// random) at minimal-gap crossings with the Landau–Zener probability.
pub fn hopping_simulate(
    vp: &MatrixPotential,
    initial: &HopEnsemble,
    t_final: f64,
    h: f64,
    cfg: &HopConfig,
) -> Result<HopEnsemble> {
    let parts: Vec<(Vec<HopState>, usize)> = initial
        .states
        .par_iter()
        .enumerate()
        .map(|(i, s)| simulate_one(vp, s, i as u64, t_final, h, cfg))
        .collect::<Result<_>>()?;
    let mut ens = HopEnsemble { states: Vec::new(), suppressed: initial.suppressed };
    for (states, sup) in parts {
        ens.states.extend(states);
        ens.suppressed += sup;
    }
    Ok(ens)
}

/// Σ weight · a_band(z) over the ensemble.
pub fn hopping_observable(
    ens: &HopEnsemble,
    a_plus: impl Fn(&PhasePoint) -> f64,
    a_minus: impl Fn(&PhasePoint) -> f64,
) -> f64 {
    ens.states.iter().map(|s| s.weight * if s.band > 0 { a_plus(&s.z) } else { a_minus(&s.z) }).sum()
}

/// Two-component wave function on a grid.
#[derive(Clone, Debug)]
pub struct Spinor {
    pub up: WaveField,
    pub down: WaveField,
}

impl Spinor {
    pub fn norm(&self) -> f64 {
        (self.up.norm().powi(2) + self.down.norm().powi(2)).sqrt()
    }

    /// Scalar packet placed in band ℓ: ψ = f·e_ℓ(x).
    pub fn in_band(vp: &MatrixPotential, f: &WaveField, band: i8) -> Result<Self> {
        let mut up = f.clone();
        let mut down = f.clone();
        for i in 0..f.grid.len() {
            let e = vp.band_vector(&f.grid.point(i), band).unwrap_or([0.0, 0.0]);
            up.samples[i] *= e[0];
            down.samples[i] *= e[1];
        }
        Ok(Self { up, down })
    }

    /// ∫ |e_ℓ(x)·ψ(x)|² dx.
    pub fn band_population(&self, vp: &MatrixPotential, band: i8) -> f64 {
        let g = &self.up.grid;
        let s: f64 = (0..g.len())
            .map(|i| match vp.band_vector(&g.point(i), band) {
                Ok(e) => (self.up.samples[i] * e[0] + self.down.samples[i] * e[1]).norm_sqr(),
                Err(_) => 0.5 * (self.up.samples[i].norm_sqr() + self.down.samples[i].norm_sqr()),
            })
            .sum();
        s * g.cell_volume()
    }
}

/// Strang splitting for ih∂_tψ = (−h²Δ/2 + V(x))ψ with the exact 2×2
/// potential exponential cos a − i sin a·V/|w|, a = |w|Δt/2h.
pub fn two_level_propagate(vp: &MatrixPotential, psi: &Spinor, t: f64, h: f64) -> Result<Spinor> {
    let grid = psi.up.grid.clone();
    let shape = grid.shape();
    let edge: f64 = grid.axes.iter().map(|a| a.xi_max(h).powi(2)).sum::<f64>() / 2.0;
    let dt_max = (MAX_KINETIC_PHASE * h / edge).min(0.5 * h);
    let steps = (t.abs() / dt_max).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let n = grid.len();
    let pot: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|i| {
            let x = grid.point(i);
            let [a, b] = vp.w(&x);
            let r = a.hypot(b);
            let (u1, u2) = if r > 0.0 { (a / r, b / r) } else { (0.0, 0.0) };
            let ang = r * dt / (2.0 * h);
            (ang.cos(), ang.sin(), u1, u2)
        })
        .collect();
    let kin: Vec<C64> = (0..n)
        .map(|i| {
            let idx = grid.unravel(i);
            let e: f64 = idx
                .iter()
                .zip(&grid.axes)
                .map(|(&m, ax)| 0.5 * (fft::signed_index(m, ax.n) as f64 * ax.dxi(h)).powi(2))
                .sum();
            C64::from_polar(1.0 / n as f64, -dt * e / h)
        })
        .collect();
    let i = C64::new(0.0, 1.0);
    let half = |u: &mut [C64], v: &mut [C64]| {
        u.par_iter_mut().zip(v.par_iter_mut()).zip(&pot).for_each(|((p, q), &(c, s, u1, u2))| {
            let (a, b) = (*p, *q);
            *p = c * a - i * s * (u1 * a + u2 * b);
            *q = c * b - i * s * (u2 * a - u1 * b);
        });
    };
    let (mut u, mut v) = (psi.up.samples.clone(), psi.down.samples.clone());
    for _ in 0..steps {
        half(&mut u, &mut v);
        for c in [&mut u, &mut v] {
            fft::fft_all(c, &shape, false);
            c.iter_mut().zip(&kin).for_each(|(p, k)| *p *= k);
            fft::fft_all(c, &shape, true);
        }
        half(&mut u, &mut v);
    }
    Ok(Spinor { up: WaveField { samples: u, ..psi.up.clone() }, down: WaveField { samples: v, ..psi.down.clone() } })
}

/// Conical Landau–Zener benchmark: a lower-band packet with momentum (0, v)
/// passes the crossing of w(x) = x at impact parameter δ.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LzBenchmark {
    pub h: f64,
    pub delta: f64,
    pub speed: f64,
    /// Start at x2 = −offset, run until x2 ≈ +offset.
    pub offset: f64,
    pub box_len: [f64; 2],
    pub points: [usize; 2],
    pub nodes: usize,
}

impl LzBenchmark {
    /// Standard setting for h = 2^{-q} with δ = c√h.
    pub fn standard(q: i32, c: f64) -> Self {
        let h = 2f64.powi(-q);
        let n1 = 64usize << (q - 6).max(0);
        Self { h, delta: c * h.sqrt(), speed: 2.0, offset: 0.6, box_len: [2.4, 3.2], points: [n1, 4 * n1], nodes: 8 }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.offset / self.speed
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LzComparison {
    pub grid_population: f64,
    pub hopping_population: f64,
    /// exp(−πδ²/(h v)) at the nominal impact parameter.
    pub nominal: f64,
    pub relative_error: f64,
    pub boundary_ratio: f64,
    pub weight_defect: f64,
}

pub fn lz_grid_population(b: &LzBenchmark) -> Result<(f64, f64)> {
    let vp = MatrixPotential::conical();
    let grid = GridSpec::new(vec![
        Axis::centered(0.0, b.box_len[0], b.points[0])?,
        Axis::centered(0.0, b.box_len[1], b.points[1])?,
    ])?;
    let f = WaveField::from_profile(&grid, b.h, |x| {
        crate::transforms::coherent_state(x, &[b.delta, -b.offset], &[0.0, b.speed], b.h)
    })?;
    let psi = Spinor::in_band(&vp, &f, -1)?;
    let out = two_level_propagate(&vp, &psi, b.duration(), b.h)?;
    let edge = out.up.boundary_ratio().max(out.down.boundary_ratio());
    Ok((out.band_population(&vp, 1) / out.norm().powi(2), edge))
}

pub fn lz_hopping_population(b: &LzBenchmark, cfg: &HopConfig) -> Result<(f64, f64)> {
    let vp = MatrixPotential::conical();
    let z = PhasePoint::new(vec![b.delta, -b.offset], vec![0.0, b.speed])?;
    let ens = HopEnsemble::coherent(&z, -1, b.h, b.nodes);
    let out = hopping_simulate(&vp, &ens, b.duration(), b.h, cfg)?;
    Ok((out.population(1), (out.total_weight() - 1.0).abs()))
}

pub fn lz_compare(b: &LzBenchmark, cfg: &HopConfig) -> Result<LzComparison> {
    let (grid_population, boundary_ratio) = lz_grid_population(b)?;
    let (hopping_population, weight_defect) = lz_hopping_population(b, cfg)?;
    Ok(LzComparison {
        grid_population,
        hopping_population,
        nominal: (-PI * b.delta * b.delta / (b.h * b.speed)).exp(),
        relative_error: (hopping_population - grid_population).abs() / grid_population,
        boundary_ratio,
        weight_defect,
    })
}

/// Gaussian time window θ(t) with mean t0 and width τ.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t0: f64,
    pub tau: f64,
    pub nodes: usize,
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self { t0: 0.8, tau: 0.15, nodes: 24 }
    }
}

/// Scalar tabulated symbol times a function of x (evaluated in batches).
struct Modulated {
    base: Arc<TabulatedSymbol>,
    factor: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Symbol for Modulated {
    fn entry(&self, _r: usize, _c: usize, x: f64, xi: f64) -> C64 {
        self.base.entry(0, 0, x, xi) * (self.factor)(x)
    }

    fn tabulate(&self, _r: usize, _c: usize, xs: &[f64], xis: &[f64]) -> Vec<C64> {
        let mut t = self.base.tabulate(0, 0, xs, xis);
        for (s, x) in xs.iter().enumerate() {
            let f = (self.factor)(*x);
            t[s * xis.len()..(s + 1) * xis.len()].iter_mut().for_each(|v| *v *= f);
        }
        t
    }
}

#[derive(Clone, Debug)]
pub struct AdiabaticResult {
    pub residual: f64,
    pub min_gap: f64,
    pub dimension: usize,
}

/// Block Hamiltonian Op_h(|ξ|²/2)⊗Id + V(x) on a 1D grid (component-major).
pub fn two_level_hamiltonian(vp: &MatrixPotential, grid: &GridSpec, h: f64) -> Result<CMat> {
    let t = quantization::weyl_quantize(&PolySymbol::new(vec![(0.5, 0, 2)]), grid, h)?.matrix;
    let n = grid.len();
    let xs = grid.axes[0].points();
    let mut m = Mat::<C64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = t[(i, j)];
            m[(n + i, n + j)] = t[(i, j)];
        }
        let [a, b] = vp.w(&[xs[i]]);
        m[(i, i)] += C64::new(a, 0.0);
        m[(n + i, n + i)] -= C64::new(a, 0.0);
        m[(i, n + i)] = C64::new(b, 0.0);
        m[(n + i, i)] = C64::new(b, 0.0);
    }
    Ok(linalg::hermitian_part(&m))
}

/// Time-averaged adiabatic Egorov residual in d = 1:
/// ‖∫θ(t) U(−t)Op(ΠaΠ)U(t) dt − Op(Π b Π)‖ with
/// b(z) = ∫θ(t) tr(Π(x_t) a(Φ_ℓ^t z)) dt along the band flow. The symbol is
/// a = a0(x, ξ)·M for a scalar a0 and constant symmetric M.
pub fn adiabatic_egorov_check(
    vp: &MatrixPotential,
    band: i8,
    a0: Arc<dyn Symbol>,
    m: M2,
    window: TimeWindow,
    grid: &GridSpec,
    h: f64,
    tg: TransportGrid,
) -> Result<AdiabaticResult> {
    if vp.d != 1 || grid.dim() != 1 {
        return Err(Error::InvalidArgument("the adiabatic check is implemented in d = 1".into()));
    }
    let ax = grid.axes[0].clone();
    let min_gap = ax.points().iter().map(|&x| vp.gap(&[x])).fold(f64::INFINITY, f64::min);
    if min_gap < 2.0 * vp.gap_floor {
        return Err(Error::Gap { x: vec![], norm: min_gap / 2.0 });
    }
    let trace_pm = {
        let vp = vp.clone();
        move |x: f64| -> f64 {
            let p = vp.projector(&[x], band).unwrap();
            p[0][0] * m[0][0] + p[0][1] * m[1][0] + p[1][0] * m[0][1] + p[1][1] * m[1][1]
        }
    };
    let pij = |i: usize, j: usize| {
        let vp = vp.clone();
        move |x: f64| vp.projector(&[x], band).unwrap()[i][j]
    };

    // quantum side
    let n = grid.len();
    let scalar = Arc::new({
        let tp = trace_pm.clone();
        let a0 = a0.clone();
        quantization::FnSymbol::real(move |x, xi| a0.value(x, xi).re * tp(x))
    });
    let mut entries: Vec<Arc<dyn Symbol>> = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            let f = pij(i, j);
            let s = scalar.clone();
            entries.push(Arc::new(quantization::FnSymbol::real(move |x, xi| s.value(x, xi).re * f(x))));
        }
    }
    let op = quantization::weyl_quantize(&MatrixSymbol::new(2, entries)?, grid, h)?;
    let ham = two_level_hamiltonian(vp, grid, h)?;
    let (e, vecs) = linalg::eigh(&ham)?;
    let at = linalg::matmul(&linalg::matmul(&linalg::adjoint(&vecs), &op.matrix), &vecs);
    let theta = Mat::from_fn(2 * n, 2 * n, |j, k| {
        let de = (e[j] - e[k]) / h;
        at[(j, k)] * C64::from_polar((-0.5 * (window.tau * de).powi(2)).exp(), window.t0 * de)
    });
    let quantum = linalg::matmul(&linalg::matmul(&vecs, &theta), &linalg::adjoint(&vecs));

    // classical side: window average of the transported band symbol
    let (u, w) = gauss_hermite(window.nodes);
    let mut nodes: Vec<(f64, f64)> =
        u.iter().zip(&w).map(|(&u, &w)| (window.t0 + 2f64.sqrt() * window.tau * u, w / PI.sqrt())).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fwd: Vec<(f64, f64)> = nodes.iter().copied().filter(|n| n.0 >= 0.0).collect();
    let bwd: Vec<(f64, f64)> = nodes.iter().rev().copied().filter(|n| n.0 < 0.0).collect();
    let xa = Axis::new(ax.a, ax.b, tg.nx)?;
    let ka = Axis::new(-tg.xi_max, tg.xi_max, tg.nxi)?;
    let b = TabulatedSymbol::sample(xa, ka, |x, xi| {
        let mut acc = 0.0;
        for list in [&fwd, &bwd] {
            let err = std::cell::Cell::new(None);
            let mut st = Dopri::new(band_rhs(vp, band, &err), 0.0, &[x, xi, 0.0], 1e-11);
            for &(t, wt) in list.iter() {
                let r = st.advance_to(t);
                if let Some(e) = err.take() {
                    return Err(e);
                }
                r?;
                let y = st.y();
                acc += wt * a0.value(y[0], y[1]).re * trace_pm(y[0]);
            }
        }
        Ok(acc)
    })?;
    let base = Arc::new(b);
    let mut entries: Vec<Arc<dyn Symbol>> = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            entries.push(Arc::new(Modulated { base: base.clone(), factor: Arc::new(pij(i, j)) }));
        }
    }
    let classical = quantization::weyl_quantize(&MatrixSymbol::new(2, entries)?, grid, h)?;
    let residual = linalg::op_norm(&linalg::sub(&quantum, &classical.matrix));
    Ok(AdiabaticResult { residual, min_gap, dimension: 2 * n })
}
