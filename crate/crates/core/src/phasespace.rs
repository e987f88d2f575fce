//! Classical phase space R^{2d}: points, the symplectic form, Hamiltonians and
//! their flows together with the linearised flow and the action integral.
//!
//! Phase-space vectors are stored as `[x_1..x_d, xi_1..xi_d]`; d×d blocks and
//! 2d×2d matrices are row-major.

use serde::{Deserialize, Serialize};

use crate::linalg::small;
use crate::ode::Dopri;
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::Dimension { expected: q.len().max(1), got: p.len() });
        }
        Ok(Self { q, p })
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let d = z.len() / 2;
        Self { q: z[..d].to_vec(), p: z[d..].to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.q.clone();
        z.extend_from_slice(&self.p);
        z
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.to_vec().iter().zip(other.to_vec()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// The standard symplectic structure J = [[0, I], [-I, 0]] on R^{2d}.
#[derive(Clone, Copy, Debug)]
pub struct SymplecticForm {
    pub d: usize,
}

impl SymplecticForm {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    pub fn matrix(&self) -> Vec<f64> {
        let n = 2 * self.d;
        let mut j = vec![0.0; n * n];
        for i in 0..self.d {
            j[i * n + self.d + i] = 1.0;
            j[(self.d + i) * n + i] = -1.0;
        }
        j
    }

    /// Jz.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; 2 * d];
        for i in 0..d {
            out[i] = z[d + i];
            out[d + i] = -z[i];
        }
        out
    }

    /// ω(z, z') = Jz·z'.
    pub fn omega(&self, z: &[f64], w: &[f64]) -> f64 {
        self.apply(z).iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

pub fn symplectic_form(z: &PhasePoint, w: &PhasePoint) -> Result<f64> {
    if z.dim() != w.dim() {
        return Err(Error::Dimension { expected: z.dim(), got: w.dim() });
    }
    Ok(SymplecticForm::new(z.dim()).omega(&z.to_vec(), &w.to_vec()))
}

/// max |MᵀJM − J| for a 2d×2d matrix.
pub fn symplectic_defect(m: &[f64], d: usize) -> f64 {
    let n = 2 * d;
    let j = SymplecticForm::new(d).matrix();
    let mt = small::transpose(m, n, n);
    let r = small::matmul(&small::matmul(&mt, &j, n, n, n), m, n, n, n);
    r.iter().zip(&j).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// A smooth, possibly time-dependent Hamiltonian p(t, x, ξ).
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, z: &[f64]) -> f64;
    fn gradient(&self, t: f64, z: &[f64], out: &mut [f64]);
    fn hessian(&self, t: f64, z: &[f64], out: &mut [f64]);
    fn name(&self) -> String;

    fn is_time_dependent(&self) -> bool {
        false
    }

    /// V(t, x) when p = |ξ|²/2 + V(t, x); enables the split-step propagator.
    fn potential(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Recorded growth constants for the derivatives (metadata only).
    fn derivative_bounds(&self) -> Option<Vec<f64>> {
        None
    }
}

/// J∇p.
pub fn hamiltonian_vector_field(h: &dyn Hamiltonian, t: f64, z: &PhasePoint) -> Vec<f64> {
    let d = h.dim();
    let mut g = vec![0.0; 2 * d];
    h.gradient(t, &z.to_vec(), &mut g);
    SymplecticForm::new(d).apply(&g)
}

fn kinetic_grad(z: &[f64], d: usize, out: &mut [f64]) {
    out[d..2 * d].copy_from_slice(&z[d..2 * d]);
}

fn kinetic_hess(d: usize, out: &mut [f64]) {
    let n = 2 * d;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        out[(d + i) * n + d + i] = 1.0;
    }
}

fn kinetic(z: &[f64], d: usize) -> f64 {
    z[d..].iter().map(|v| 0.5 * v * v).sum()
}

/// p = |ξ|²/2.
#[derive(Clone, Debug)]
pub struct Free {
    pub d: usize,
}

impl Hamiltonian for Free {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        kinetic(z, self.d)
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        out[..self.d].iter_mut().for_each(|v| *v = 0.0);
        kinetic_grad(z, self.d, out);
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        kinetic_hess(self.d, out);
    }
    fn name(&self) -> String {
        format!("free(d={})", self.d)
    }
    fn potential(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
    fn derivative_bounds(&self) -> Option<Vec<f64>> {
        Some(vec![1.0, 1.0])
    }
}

/// p = |ξ|²/2 + ω²|x|²/2.
#[derive(Clone, Debug)]
pub struct Harmonic {
    pub d: usize,
    pub omega: f64,
}

impl Hamiltonian for Harmonic {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        let w2 = self.omega * self.omega;
        kinetic(z, self.d) + z[..self.d].iter().map(|x| 0.5 * w2 * x * x).sum::<f64>()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        let w2 = self.omega * self.omega;
        for i in 0..self.d {
            out[i] = w2 * z[i];
        }
        kinetic_grad(z, self.d, out);
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        kinetic_hess(self.d, out);
        let n = 2 * self.d;
        for i in 0..self.d {
            out[i * n + i] = self.omega * self.omega;
        }
    }
    fn name(&self) -> String {
        format!("harmonic(d={}, omega={})", self.d, self.omega)
    }
    fn potential(&self, _t: f64, x: &[f64]) -> Option<f64> {
        Some(x.iter().map(|v| 0.5 * self.omega * self.omega * v * v).sum())
    }
    fn derivative_bounds(&self) -> Option<Vec<f64>> {
        Some(vec![1.0f64.max(self.omega * self.omega); 2])
    }
}

/// p = |ξ|²/2 + Σ (x_j⁴/4 + x_j²/2).
#[derive(Clone, Debug)]
pub struct Quartic {
    pub d: usize,
}

impl Hamiltonian for Quartic {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        kinetic(z, self.d) + z[..self.d].iter().map(|x| x.powi(4) / 4.0 + x * x / 2.0).sum::<f64>()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for i in 0..self.d {
            out[i] = z[i].powi(3) + z[i];
        }
        kinetic_grad(z, self.d, out);
    }
    fn hessian(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        kinetic_hess(self.d, out);
        let n = 2 * self.d;
        for i in 0..self.d {
            out[i * n + i] = 3.0 * z[i] * z[i] + 1.0;
        }
    }
    fn name(&self) -> String {
        format!("quartic(d={})", self.d)
    }
    fn potential(&self, _t: f64, x: &[f64]) -> Option<f64> {
        Some(x.iter().map(|v| v.powi(4) / 4.0 + v * v / 2.0).sum())
    }
}

/// p = |ξ|²/2 + amplitude·Σ cos(2π x_j / period), periodic on the torus.
#[derive(Clone, Debug)]
pub struct CosinePotential {
    pub d: usize,
    pub amplitude: f64,
    pub period: f64,
}

impl Hamiltonian for CosinePotential {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        kinetic(z, self.d) + self.potential(t, &z[..self.d]).unwrap()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        let k = 2.0 * std::f64::consts::PI / self.period;
        for i in 0..self.d {
            out[i] = -self.amplitude * k * (k * z[i]).sin();
        }
        kinetic_grad(z, self.d, out);
    }
    fn hessian(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        kinetic_hess(self.d, out);
        let k = 2.0 * std::f64::consts::PI / self.period;
        let n = 2 * self.d;
        for i in 0..self.d {
            out[i * n + i] = -self.amplitude * k * k * (k * z[i]).cos();
        }
    }
    fn name(&self) -> String {
        format!("cosine(d={}, amplitude={}, period={})", self.d, self.amplitude, self.period)
    }
    fn potential(&self, _t: f64, x: &[f64]) -> Option<f64> {
        let k = 2.0 * std::f64::consts::PI / self.period;
        Some(x.iter().map(|v| self.amplitude * (k * v).cos()).sum())
    }
    fn derivative_bounds(&self) -> Option<Vec<f64>> {
        let k = 2.0 * std::f64::consts::PI / self.period;
        Some(vec![1.0f64.max(self.amplitude.abs() * k), 1.0f64.max(self.amplitude.abs() * k * k)])
    }
}

/// A polynomial in (x, ξ): Σ c · Π z_i^{e_i}, exponents over the 2d variables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Polynomial {
    pub d: usize,
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(d: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Self> {
        for (_, e) in &terms {
            if e.len() != 2 * d {
                return Err(Error::Dimension { expected: 2 * d, got: e.len() });
            }
        }
        Ok(Self { d, terms })
    }

    /// |ξ|²/2 + V(x) with V a polynomial in x given by (coefficient, exponents in x).
    pub fn kinetic_plus(d: usize, potential: &[(f64, Vec<u32>)]) -> Result<Self> {
        let mut terms = Vec::new();
        for i in 0..d {
            let mut e = vec![0; 2 * d];
            e[d + i] = 2;
            terms.push((0.5, e));
        }
        for (c, ex) in potential {
            if ex.len() != d {
                return Err(Error::Dimension { expected: d, got: ex.len() });
            }
            let mut e = ex.clone();
            e.resize(e.len() + d, 0);
            terms.push((*c, e));
        }
        Ok(Self { d, terms })
    }

    fn monomial(z: &[f64], e: &[u32], skip: &[usize]) -> f64 {
        // derivative of Π z_i^{e_i} with respect to the variables listed in `skip`
        let mut e: Vec<i64> = e.iter().map(|&v| v as i64).collect();
        let mut coeff = 1.0;
        for &k in skip {
            coeff *= e[k] as f64;
            e[k] -= 1;
            if e[k] < 0 {
                return 0.0;
            }
        }
        coeff * z.iter().zip(&e).map(|(x, &k)| x.powi(k as i32)).product::<f64>()
    }

    fn split_form(&self) -> bool {
        let d = self.d;
        let mut kinetic_ok = vec![false; d];
        for (c, e) in &self.terms {
            let xi_deg: u32 = e[d..].iter().sum();
            if xi_deg == 0 {
                continue;
            }
            let x_deg: u32 = e[..d].iter().sum();
            if x_deg != 0 || xi_deg != 2 || *c != 0.5 {
                return false;
            }
            match e[d..].iter().position(|&v| v == 2) {
                Some(i) if !kinetic_ok[i] => kinetic_ok[i] = true,
                _ => return false,
            }
        }
        kinetic_ok.iter().all(|&b| b)
    }
}

impl Hamiltonian for Polynomial {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        self.terms.iter().map(|(c, e)| c * Self::monomial(z, e, &[])).sum()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(2 * self.d) {
            *o = self.terms.iter().map(|(c, e)| c * Self::monomial(z, e, &[k])).sum();
        }
    }
    fn hessian(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        let n = 2 * self.d;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.terms.iter().map(|(c, e)| c * Self::monomial(z, e, &[i, j])).sum();
            }
        }
    }
    fn name(&self) -> String {
        format!("polynomial(d={}, terms={})", self.d, self.terms.len())
    }
    fn potential(&self, _t: f64, x: &[f64]) -> Option<f64> {
        if !self.split_form() {
            return None;
        }
        let mut z = x.to_vec();
        z.resize(z.len() + self.d, 0.0);
        Some(
            self.terms
                .iter()
                .filter(|(_, e)| e[self.d..].iter().all(|&v| v == 0))
                .map(|(c, e)| c * Self::monomial(&z, e, &[]))
                .sum(),
        )
    }
}

/// Periodically driven oscillator p = ξ²/2 + ω²x²/2 − f cos(νt) x (d = 1).
#[derive(Clone, Debug)]
pub struct DrivenHarmonic {
    pub omega: f64,
    pub force: f64,
    pub frequency: f64,
}

impl Hamiltonian for DrivenHarmonic {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        0.5 * z[1] * z[1] + self.potential(t, &z[..1]).unwrap()
    }
    fn gradient(&self, t: f64, z: &[f64], out: &mut [f64]) {
        out[0] = self.omega * self.omega * z[0] - self.force * (self.frequency * t).cos();
        out[1] = z[1];
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[self.omega * self.omega, 0.0, 0.0, 1.0]);
    }
    fn name(&self) -> String {
        format!("driven-harmonic(omega={}, force={}, frequency={})", self.omega, self.force, self.frequency)
    }
    fn is_time_dependent(&self) -> bool {
        true
    }
    fn potential(&self, t: f64, x: &[f64]) -> Option<f64> {
        Some(0.5 * self.omega * self.omega * x[0] * x[0] - self.force * (self.frequency * t).cos() * x[0])
    }
}

/// Flow map data: Φ^{t,s}(z0), the Jacobian blocks and the action.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowData {
    pub s: f64,
    pub t: f64,
    pub start: PhasePoint,
    pub endpoint: PhasePoint,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub action: f64,
}

impl FlowData {
    pub fn dim(&self) -> usize {
        self.start.dim()
    }

    pub fn identity(z0: &PhasePoint, s: f64) -> Self {
        let d = z0.dim();
        Self {
            s,
            t: s,
            start: z0.clone(),
            endpoint: z0.clone(),
            a: small::eye(d),
            b: vec![0.0; d * d],
            c: vec![0.0; d * d],
            d: small::eye(d),
            action: 0.0,
        }
    }

    /// F = [[A, B], [C, D]] as a 2d×2d row-major matrix.
    pub fn jacobian(&self) -> Vec<f64> {
        let d = self.dim();
        let n = 2 * d;
        let mut f = vec![0.0; n * n];
        for i in 0..d {
            for j in 0..d {
                f[i * n + j] = self.a[i * d + j];
                f[i * n + d + j] = self.b[i * d + j];
                f[(d + i) * n + j] = self.c[i * d + j];
                f[(d + i) * n + d + j] = self.d[i * d + j];
            }
        }
        f
    }

    pub fn symplectic_defect(&self) -> f64 {
        symplectic_defect(&self.jacobian(), self.dim())
    }

    fn from_state(y: &[f64], d: usize, start: &PhasePoint, s: f64, t: f64) -> Self {
        let n = 2 * d;
        let f = &y[n..n + n * n];
        let block = |r0: usize, c0: usize| {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] = f[(r0 + i) * n + c0 + j];
                }
            }
            m
        };
        Self {
            s,
            t,
            start: start.clone(),
            endpoint: PhasePoint::from_slice(&y[..n]),
            a: block(0, 0),
            b: block(0, d),
            c: block(d, 0),
            d: block(d, d),
            action: y[n + n * n],
        }
    }
}

fn extended_rhs<'a>(h: &'a dyn Hamiltonian) -> impl FnMut(f64, &[f64], &mut [f64]) + 'a {
    let d = h.dim();
    let n = 2 * d;
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    move |t, y, dy| {
        let z = &y[..n];
        h.gradient(t, z, &mut grad);
        h.hessian(t, z, &mut hess);
        for i in 0..d {
            dy[i] = grad[d + i];
            dy[d + i] = -grad[i];
        }
        // dF/dt = J Hess F
        let f = &y[n..n + n * n];
        for i in 0..n {
            let (row, sign) = if i < d { (i + d, 1.0) } else { (i - d, -1.0) };
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += hess[row * n + k] * f[k * n + j];
                }
                dy[n + i * n + j] = sign * s;
            }
        }
        let xi_dot_x: f64 = (0..d).map(|i| z[d + i] * grad[d + i]).sum();
        dy[n + n * n] = xi_dot_x - h.value(t, z);
    }
}

fn initial_state(z0: &PhasePoint) -> Vec<f64> {
    let d = z0.dim();
    let n = 2 * d;
    let mut y = z0.to_vec();
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        f[i * n + i] = 1.0;
    }
    y.extend(f);
    y.push(0.0);
    y
}

fn check_args(h: &dyn Hamiltonian, z0: &PhasePoint, tol: f64) -> Result<()> {
    if z0.dim() != h.dim() {
        return Err(Error::Dimension { expected: h.dim(), got: z0.dim() });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Integrates z, the Jacobian F and the action S jointly from s to t.
pub fn flow(h: &dyn Hamiltonian, z0: &PhasePoint, s: f64, t: f64, tol: f64) -> Result<FlowData> {
    Ok(flow_path(h, z0, s, &[t], tol)?.pop().unwrap())
}

/// Like [`flow`], returning snapshots at each of `times` (monotone from s).
pub fn flow_path(h: &dyn Hamiltonian, z0: &PhasePoint, s: f64, times: &[f64], tol: f64) -> Result<Vec<FlowData>> {
    check_args(h, z0, tol)?;
    let d = h.dim();
    let mut stepper = Dopri::new(extended_rhs(h), s, &initial_state(z0), tol);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        stepper.advance_to(t)?;
        out.push(FlowData::from_state(stepper.y(), d, z0, s, t));
    }
    Ok(out)
}

/// Endpoint only (no variational equations); used for symbol transport.
pub fn flow_point(h: &dyn Hamiltonian, z0: &[f64], s: f64, t: f64, tol: f64) -> Result<Vec<f64>> {
    let d = h.dim();
    let n = 2 * d;
    let mut grad = vec![0.0; n];
    let rhs = move |tt: f64, y: &[f64], dy: &mut [f64]| {
        h.gradient(tt, y, &mut grad);
        for i in 0..d {
            dy[i] = grad[d + i];
            dy[d + i] = -grad[i];
        }
    };
    let mut stepper = Dopri::new(rhs, s, z0, tol);
    stepper.advance_to(t)?;
    Ok(stepper.y().to_vec())
}

/// Maximum relative deviation of the analytic gradient and Hessian from
/// central differences with step `eps`.
pub fn derivative_check(h: &dyn Hamiltonian, t: f64, z: &[f64], eps: f64) -> (f64, f64) {
    let n = z.len();
    let mut g = vec![0.0; n];
    h.gradient(t, z, &mut g);
    let mut hs = vec![0.0; n * n];
    h.hessian(t, z, &mut hs);
    let mut gerr = 0.0f64;
    let mut herr = 0.0f64;
    let mut zp = z.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for k in 0..n {
        zp[k] = z[k] + eps;
        let vp = h.value(t, &zp);
        h.gradient(t, &zp, &mut gp);
        zp[k] = z[k] - eps;
        let vm = h.value(t, &zp);
        h.gradient(t, &zp, &mut gm);
        zp[k] = z[k];
        let fd = (vp - vm) / (2.0 * eps);
        gerr = gerr.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        for i in 0..n {
            let fdh = (gp[i] - gm[i]) / (2.0 * eps);
            herr = herr.max((fdh - hs[i * n + k]).abs() / hs[i * n + k].abs().max(1.0));
        }
    }
    (gerr, herr)
}
