//! Gaussian wave packets g^{Γ,h}_z with Siegel covariance Γ, their rendering
//! on grids and the thawed (linearised-flow) propagation law.
//!
//! g^{Γ,h}_z(x) = h^{-d/4} c_Γ exp((i/h)[p·(x−q) + ½(x−q)·Γ(x−q)]) with
//! c_Γ = π^{-d/4} det^{1/4}(Im Γ); Γ = i·Id is the standard coherent state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::small;
use crate::phasespace::{self, FlowData, Hamiltonian, PhasePoint};
use crate::transforms::{GridSpec, WaveField, BOUNDARY_TOL};
use crate::{Error, Result, C64};

/// Largest tolerated condition number of A + BΓ.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiegelMatrix {
    pub d: usize,
    /// Row-major real parts.
    pub re: Vec<f64>,
    /// Row-major imaginary parts.
    pub im: Vec<f64>,
}

impl SiegelMatrix {
    pub fn new(d: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::Dimension { expected: d * d, got: entries.len() });
        }
        let scale = entries.iter().map(|v| v.norm()).fold(1.0, f64::max);
        for i in 0..d {
            for j in 0..i {
                if (entries[i * d + j] - entries[j * d + i]).norm() > 1e-12 * scale {
                    return Err(Error::InvalidArgument("Γ must be symmetric".into()));
                }
            }
        }
        let g = Self { d, re: entries.iter().map(|v| v.re).collect(), im: entries.iter().map(|v| v.im).collect() };
        if small::cholesky(&g.im, d).is_none() {
            return Err(Error::InvalidArgument("Im Γ must be positive definite".into()));
        }
        Ok(g)
    }

    /// i·Id.
    pub fn standard(d: usize) -> Self {
        Self { d, re: vec![0.0; d * d], im: small::eye(d) }
    }

    pub fn scalar(g: C64) -> Result<Self> {
        Self::new(1, &[g])
    }

    pub fn entries(&self) -> Vec<C64> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        C64::new(self.re[i * self.d + j], self.im[i * self.d + j])
    }

    /// det^{1/4}(Im Γ) through the Cholesky factor of Im Γ.
    pub fn det_im_quarter(&self) -> f64 {
        let l = small::cholesky(&self.im, self.d).expect("Im Γ is positive definite by construction");
        (0..self.d).map(|i| l[i * self.d + i].sqrt()).product()
    }

    pub fn normalization(&self) -> f64 {
        PI.powf(-(self.d as f64) / 4.0) * self.det_im_quarter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    pub z: PhasePoint,
    pub gamma: SiegelMatrix,
    pub h: f64,
    /// Total phase (not reduced mod 2π).
    pub phase: f64,
    pub amplitude: f64,
}

impl GaussianPacket {
    pub fn new(z: PhasePoint, gamma: SiegelMatrix, h: f64) -> Result<Self> {
        if z.dim() != gamma.d {
            return Err(Error::Dimension { expected: z.dim(), got: gamma.d });
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidArgument(format!("h = {h} outside (0, 1]")));
        }
        Ok(Self { z, gamma, h, phase: 0.0, amplitude: 1.0 })
    }

    /// Standard coherent state g^h_z.
    pub fn coherent(q: &[f64], p: &[f64], h: f64) -> Result<Self> {
        Self::new(PhasePoint::new(q.to_vec(), p.to_vec())?, SiegelMatrix::standard(q.len()), h)
    }

    pub fn dim(&self) -> usize {
        self.z.dim()
    }

    /// Value at x, including amplitude and phase.
    pub fn eval(&self, x: &[f64]) -> C64 {
        let d = self.dim();
        let mut e = C64::new(0.0, 0.0);
        for i in 0..d {
            let yi = x[i] - self.z.q[i];
            e += self.z.p[i] * yi;
            for j in 0..d {
                e += 0.5 * yi * self.gamma.get(i, j) * (x[j] - self.z.q[j]);
            }
        }
        let pref = self.amplitude * self.h.powf(-(d as f64) / 4.0) * self.gamma.normalization();
        (C64::new(0.0, 1.0) * (e / self.h + self.phase)).exp() * pref
    }

    /// Accumulates v·(this packet) into `out` on a 1D grid, skipping samples
    /// where the envelope is below e^{-40}.
    pub(crate) fn accumulate_1d(&self, grid: &GridSpec, weight: C64, out: &mut [C64]) {
        let ax = &grid.axes[0];
        let q = self.z.q[0];
        let radius = (80.0 * self.h / self.gamma.im[0]).sqrt();
        let dx = ax.dx();
        let lo = (((q - radius - ax.a) / dx).floor().max(0.0)) as usize;
        let hi = (((q + radius - ax.a) / dx).ceil().min((ax.n - 1) as f64)).max(0.0) as usize;
        if q + radius < ax.a || q - radius > ax.b {
            return;
        }
        for j in lo..=hi {
            out[j] += weight * self.eval(&[ax.point(j)]);
        }
    }

    /// JSON record (z, Γ re/im entries, h, phase, amplitude).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        SiegelMatrix::new(p.gamma.d, &p.gamma.entries())?;
        Ok(p)
    }
}

/// Renders the packet; the grid must resolve √h with at least 8 points and
/// contain q with a 6√h margin on every axis.
pub fn render(pkt: &GaussianPacket, grid: &GridSpec) -> Result<WaveField> {
    if grid.dim() != pkt.dim() {
        return Err(Error::Dimension { expected: pkt.dim(), got: grid.dim() });
    }
    let sh = pkt.h.sqrt();
    for (k, ax) in grid.axes.iter().enumerate() {
        if ax.dx() > sh / 8.0 {
            return Err(Error::Resolution(format!(
                "axis {k}: spacing {:.3e} exceeds √h/8 = {:.3e}",
                ax.dx(),
                sh / 8.0
            )));
        }
        let q = pkt.z.q[k];
        if q - 6.0 * sh < ax.a || q + 6.0 * sh > ax.b {
            return Err(Error::Resolution(format!("axis {k}: centre {q} lacks a 6√h margin in [{}, {})", ax.a, ax.b)));
        }
    }
    let w = WaveField::from_fn(grid, pkt.h, |x| pkt.eval(x))?;
    if w.boundary_ratio() > BOUNDARY_TOL {
        return Err(Error::Resolution(format!("packet not negligible at the boundary ({:.2e})", w.boundary_ratio())));
    }
    Ok(w)
}

/// Möbius action Γ ↦ (C + DΓ)(A + BΓ)^{-1} and det(A + BΓ).
pub fn mobius(fd: &FlowData, gamma: &SiegelMatrix) -> Result<(SiegelMatrix, C64)> {
    let d = gamma.d;
    let g = gamma.entries();
    let cplx = |m: &[f64]| m.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>();
    let (a, b, c, dd) = (cplx(&fd.a), cplx(&fd.b), cplx(&fd.c), cplx(&fd.d));
    let bg = small::cmatmul(&b, &g, d);
    let dg = small::cmatmul(&dd, &g, d);
    let m: Vec<C64> = a.iter().zip(&bg).map(|(x, y)| x + y).collect();
    let n: Vec<C64> = c.iter().zip(&dg).map(|(x, y)| x + y).collect();
    let cond = small::ccond(&m, d);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let out = small::cmatmul(&n, &small::cinverse(&m, d)?, d);
    // symmetrize away integration round-off
    let sym: Vec<C64> = (0..d * d).map(|k| 0.5 * (out[k] + out[(k % d) * d + k / d])).collect();
    Ok((SiegelMatrix::new(d, &sym)?, small::cdet(&m, d)))
}

/// One thawed step: centre moves to Φ^{t,s}(z), Γ by the Möbius action, and
/// the phase gains S/h − ½ arg det(A + BΓ) (principal branch; keep steps
/// short enough for the argument to stay continuous).
pub fn thawed_step(pkt: &GaussianPacket, fd: &FlowData) -> Result<GaussianPacket> {
    if fd.start.distance(&pkt.z) > 1e-9 * (1.0 + pkt.z.to_vec().iter().map(|v| v.abs()).fold(0.0, f64::max)) {
        return Err(Error::InvalidArgument("flow data does not start at the packet centre".into()));
    }
    let (gamma, det) = mobius(fd, &pkt.gamma)?;
    Ok(GaussianPacket {
        z: fd.endpoint.clone(),
        gamma,
        h: pkt.h,
        phase: pkt.phase + fd.action / pkt.h - 0.5 * det.arg(),
        amplitude: pkt.amplitude,
    })
}

/// Thawed propagation from s to t in `pieces` sub-steps; the argument of
/// det(A + BΓ) is tracked across sub-steps so the phase stays continuous.
pub fn thawed_propagate(
    ham: &dyn Hamiltonian,
    pkt: &GaussianPacket,
    s: f64,
    t: f64,
    pieces: usize,
    tol: f64,
) -> Result<GaussianPacket> {
    let pieces = pieces.max(1);
    let mut cur = pkt.clone();
    for k in 0..pieces {
        let t0 = s + (t - s) * k as f64 / pieces as f64;
        let t1 = s + (t - s) * (k + 1) as f64 / pieces as f64;
        let fd = phasespace::flow(ham, &cur.z, t0, t1, tol)?;
        let (_, det) = mobius(&fd, &cur.gamma)?;
        if det.arg().abs() >= PI / 2.0 {
            return thawed_propagate(ham, pkt, s, t, 2 * pieces, tol);
        }
        cur = thawed_step(&cur, &fd)?;
    }
    Ok(cur)
}

/// Default sub-step count for thawed propagation over |t − s|.
pub fn default_pieces(s: f64, t: f64) -> usize {
    ((t - s).abs() * 32.0).ceil().max(1.0) as usize
}

/// Thawed propagation, rendered on `grid`, with the L² distance to the grid
/// oracle when the Hamiltonian has kinetic-plus-potential form.
pub fn packet_propagate(
    ham: &dyn Hamiltonian,
    pkt: &GaussianPacket,
    s: f64,
    t: f64,
    grid: &GridSpec,
) -> Result<(GaussianPacket, Option<f64>)> {
    let out = thawed_propagate(ham, pkt, s, t, default_pieces(s, t), phasespace::DEFAULT_TOL * 1e-2)?;
    if ham.potential(s, &pkt.z.q).is_none() {
        return Ok((out, None));
    }
    let psi0 = render(pkt, grid)?;
    let approx = render(&out, grid)?;
    let prop = crate::propagators::GridPropagator::for_grid(grid, pkt.h, (t - s).abs())?;
    let exact = prop.propagate(ham, &psi0, s, t)?;
    Ok((out, Some(exact.distance(&approx))))
}
