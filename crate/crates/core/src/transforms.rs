//! Wave functions on periodic grids and the phase-space transforms acting on
//! them: the h-Fourier transform, Wigner and Bargmann (Husimi) transforms,
//! position/momentum moments, h-oscillation tails and semiclassical Sobolev
//! norms.
//!
//! Momentum grids are stored centred: ξ_k = (k − n/2)·Δξ with Δξ = 2πh/L.

use std::f64::consts::PI;
use std::io::{Read, Write};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::fft;
use crate::linalg::matmul;
use crate::{Error, Result, C64};

pub const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(b > a) {
            return Err(Error::InvalidArgument(format!("empty interval [{a}, {b})")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("axis size {n} must be a power of two >= 8")));
        }
        Ok(Self { a, b, n })
    }

    /// Centred box of length `len` around `center`.
    pub fn centered(center: f64, len: f64, n: usize) -> Result<Self> {
        Self::new(center - len / 2.0, center + len / 2.0, n)
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        self.a + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.point(j)).collect()
    }

    pub fn dxi(&self, h: f64) -> f64 {
        2.0 * PI * h / self.length()
    }

    /// Centred momentum grid induced by the axis and h.
    pub fn momenta(&self, h: f64) -> Vec<f64> {
        let dxi = self.dxi(h);
        (0..self.n).map(|k| (k as f64 - (self.n / 2) as f64) * dxi).collect()
    }

    /// Largest representable |ξ| (the band edge).
    pub fn xi_max(&self, h: f64) -> f64 {
        PI * h / self.dx()
    }

    /// The momentum grid described as an axis [−ξ_max, ξ_max).
    pub fn momentum_axis(&self, h: f64) -> Axis {
        let m = self.xi_max(h);
        Axis { a: -m, b: m, n: self.n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        for ax in &axes {
            Axis::new(ax.a, ax.b, ax.n)?;
        }
        Ok(Self { axes })
    }

    pub fn line(a: f64, b: f64, n: usize) -> Result<Self> {
        Ok(Self { axes: vec![Axis::new(a, b, n)?] })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.dx()).product()
    }

    pub fn momentum_cell_volume(&self, h: f64) -> f64 {
        self.axes.iter().map(|a| a.dxi(h)).product()
    }

    /// Multi-index of a flat (row-major) index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.axes[k].n;
            idx /= self.axes[k].n;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx).iter().zip(&self.axes).map(|(&j, ax)| ax.point(j)).collect()
    }

    pub fn momentum(&self, idx: usize, h: f64) -> Vec<f64> {
        self.unravel(idx).iter().zip(&self.axes).map(|(&k, ax)| (k as f64 - (ax.n / 2) as f64) * ax.dxi(h)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Position,
    Momentum,
}

#[derive(Clone, Debug)]
pub struct WaveField {
    pub grid: GridSpec,
    pub h: f64,
    pub samples: Vec<C64>,
    pub domain: Domain,
}

impl WaveField {
    pub fn new(grid: GridSpec, h: f64, samples: Vec<C64>) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidArgument(format!("h = {h} outside (0, 1]")));
        }
        if samples.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: samples.len() });
        }
        Ok(Self { grid, h, samples, domain: Domain::Position })
    }

    pub fn from_fn(grid: &GridSpec, h: f64, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        let samples = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid.clone(), h, samples)
    }

    /// Samples an analytic profile and checks it is negligible on the grid boundary.
    pub fn from_profile(grid: &GridSpec, h: f64, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        let w = Self::from_fn(grid, h, f)?;
        let r = w.boundary_ratio();
        if r > BOUNDARY_TOL {
            return Err(Error::Resolution(format!(
                "profile not negligible at the boundary (ratio {r:.2e} > {BOUNDARY_TOL:.0e})"
            )));
        }
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        Self { samples: vec![C64::new(0.0, 0.0); self.samples.len()], ..self.clone() }
    }

    fn measure(&self) -> f64 {
        match self.domain {
            Domain::Position => self.grid.cell_volume(),
            Domain::Momentum => self.grid.momentum_cell_volume(self.h),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.measure()).sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        self.samples.iter_mut().for_each(|v| *v /= n);
    }

    /// ⟨self, other⟩ = ∫ self · conj(other).
    pub fn inner(&self, other: &WaveField) -> C64 {
        self.samples.iter().zip(&other.samples).map(|(a, b)| a * b.conj()).sum::<C64>() * self.measure()
    }

    pub fn distance(&self, other: &WaveField) -> f64 {
        (self.samples.iter().zip(&other.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() * self.measure()).sqrt()
    }

    /// max |ψ| over the outermost grid layer relative to max |ψ|.
    pub fn boundary_ratio(&self) -> f64 {
        let max = self.samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        let mut edge = 0.0f64;
        for (i, v) in self.samples.iter().enumerate() {
            let idx = self.grid.unravel(i);
            if idx.iter().zip(&self.grid.axes).any(|(&j, ax)| j == 0 || j == ax.n - 1) {
                edge = edge.max(v.norm());
            }
        }
        edge / max
    }

    /// Coordinates of sample `idx` in the field's own domain.
    pub fn coordinates(&self, idx: usize) -> Vec<f64> {
        match self.domain {
            Domain::Position => self.grid.point(idx),
            Domain::Momentum => self.grid.momentum(idx, self.h),
        }
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self.domain {
            Domain::Position => self.grid.axes.iter().map(|a| (a.a, a.b)).unzip(),
            Domain::Momentum => self.grid.axes.iter().map(|a| a.momentum_axis(self.h)).map(|a| (a.a, a.b)).unzip(),
        };
        write_header(w, &self.grid.shape(), &lo, &hi, self.h)?;
        write_payload(w, &self.samples)
    }

    /// Reads a position-domain field written by [`WaveField::write_binary`].
    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let (shape, lo, hi, h) = read_header(r)?;
        let axes =
            shape.iter().zip(lo.iter().zip(&hi)).map(|(&n, (&a, &b))| Axis::new(a, b, n)).collect::<Result<_>>()?;
        let grid = GridSpec::new(axes)?;
        let samples = read_payload(r, grid.len())?;
        Self::new(grid, h, samples)
    }

    /// CSV with coordinate columns followed by re, im (1D and 2D fields).
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let d = self.grid.dim();
        if d > 2 {
            return Err(Error::InvalidArgument("CSV export supports 1D and 2D fields".into()));
        }
        let prefix = if self.domain == Domain::Position { "x" } else { "xi" };
        let cols: Vec<String> =
            (1..=d).map(|k| if d == 1 { prefix.to_string() } else { format!("{prefix}{k}") }).collect();
        writeln!(w, "{},re,im", cols.join(","))?;
        for (i, v) in self.samples.iter().enumerate() {
            let c: Vec<String> = self.coordinates(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{},{:.17e},{:.17e}", c.join(","), v.re, v.im)?;
        }
        Ok(())
    }
}

fn write_header(w: &mut impl Write, shape: &[usize], lo: &[f64], hi: &[f64], h: f64) -> Result<()> {
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &n in shape {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for (a, b) in lo.iter().zip(hi) {
        w.write_all(&a.to_le_bytes())?;
        w.write_all(&b.to_le_bytes())?;
    }
    w.write_all(&h.to_le_bytes())?;
    Ok(())
}

fn write_payload(w: &mut impl Write, data: &[C64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 * data.len());
    for v in data {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[allow(clippy::type_complexity)]
fn read_header(r: &mut impl Read) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>, f64)> {
    let d = read_u64(r)? as usize;
    if d == 0 || d > 16 {
        return Err(Error::InvalidArgument(format!("implausible dimension {d} in header")));
    }
    let shape = (0..d).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for _ in 0..d {
        lo.push(read_f64(r)?);
        hi.push(read_f64(r)?);
    }
    let h = read_f64(r)?;
    Ok((shape, lo, hi, h))
}

fn read_payload(r: &mut impl Read, n: usize) -> Result<Vec<C64>> {
    (0..n).map(|_| Ok(C64::new(read_f64(r)?, read_f64(r)?))).collect()
}

/// F_h f without the aliasing check.
pub(crate) fn h_fourier_raw(f: &WaveField) -> WaveField {
    let shape = f.grid.shape();
    let mut data = f.samples.clone();
    // (−1)^j modulation centres the spectrum
    for (i, v) in data.iter_mut().enumerate() {
        let parity: usize = f.grid.unravel(i).iter().sum();
        if parity % 2 == 1 {
            *v = -*v;
        }
    }
    fft::fft_all(&mut data, &shape, false);
    let d = f.grid.dim() as f64;
    let scale = (2.0 * PI * f.h).powf(-d / 2.0) * f.grid.cell_volume();
    for (i, v) in data.iter_mut().enumerate() {
        let xi = f.grid.momentum(i, f.h);
        let phase: f64 = xi.iter().zip(&f.grid.axes).map(|(x, ax)| -ax.a * x / f.h).sum();
        *v *= C64::from_polar(scale, phase);
    }
    WaveField { grid: f.grid.clone(), h: f.h, samples: data, domain: Domain::Momentum }
}

/// Fraction of momentum mass in the top octave (|ξ_j| > ξ_max/2 on some axis).
pub fn top_octave_fraction(m: &WaveField) -> f64 {
    let total: f64 = m.samples.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut top = 0.0;
    for (i, v) in m.samples.iter().enumerate() {
        let xi = m.grid.momentum(i, m.h);
        if xi.iter().zip(&m.grid.axes).any(|(x, ax)| x.abs() > 0.5 * ax.xi_max(m.h)) {
            top += v.norm_sqr();
        }
    }
    top / total
}

/// h-Fourier transform F_h f(ξ) = (2πh)^{-d/2} ∫ e^{-ix·ξ/h} f(x) dx.
///
/// Fails if more than 1% of the mass sits in the top octave of the ξ-grid
/// (the field is then not resolved and the transform is aliased).
pub fn h_fourier(f: &WaveField) -> Result<WaveField> {
    if f.domain != Domain::Position {
        return Err(Error::InvalidArgument("h_fourier expects a position-domain field".into()));
    }
    let m = h_fourier_raw(f);
    let frac = top_octave_fraction(&m);
    if frac > 0.01 {
        return Err(Error::Resolution(format!("{:.2}% of the momentum mass lies in the top octave", 100.0 * frac)));
    }
    Ok(m)
}

/// Inverse of [`h_fourier`].
pub fn h_fourier_inverse(m: &WaveField) -> Result<WaveField> {
    if m.domain != Domain::Momentum {
        return Err(Error::InvalidArgument("expected a momentum-domain field".into()));
    }
    let shape = m.grid.shape();
    let d = m.grid.dim() as f64;
    let scale = (2.0 * PI * m.h).powf(-d / 2.0) * m.grid.cell_volume();
    let mut data: Vec<C64> = m
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let xi = m.grid.momentum(i, m.h);
            let phase: f64 = xi.iter().zip(&m.grid.axes).map(|(x, ax)| ax.a * x / m.h).sum();
            v * C64::from_polar(1.0 / scale, phase)
        })
        .collect();
    fft::fft_all(&mut data, &shape, true);
    let n = m.grid.len() as f64;
    for (i, v) in data.iter_mut().enumerate() {
        let parity: usize = m.grid.unravel(i).iter().sum();
        *v /= if parity % 2 == 1 { -n } else { n };
    }
    Ok(WaveField { grid: m.grid.clone(), h: m.h, samples: data, domain: Domain::Position })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_x: Vec<f64>,
    pub mean_xi: Vec<f64>,
    pub dev_x: Vec<f64>,
    pub dev_xi: Vec<f64>,
}

fn weighted_moments(f: &WaveField, coord: impl Fn(usize) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = f.grid.dim();
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut total = 0.0;
    for (i, v) in f.samples.iter().enumerate() {
        let w = v.norm_sqr();
        total += w;
        for (k, c) in coord(i).into_iter().enumerate() {
            m1[k] += w * c;
            m2[k] += w * c * c;
        }
    }
    let mean: Vec<f64> = m1.iter().map(|m| m / total).collect();
    // central second moment computed in a second pass for accuracy
    let mut var = vec![0.0; d];
    for (i, v) in f.samples.iter().enumerate() {
        let w = v.norm_sqr();
        for (k, c) in coord(i).into_iter().enumerate() {
            var[k] += w * (c - mean[k]) * (c - mean[k]);
        }
    }
    let _ = m2;
    (mean, var.iter().map(|v| (v / total).sqrt()).collect())
}

/// Means and standard deviations of position and momentum.
pub fn moments(f: &WaveField) -> Result<Moments> {
    if f.domain != Domain::Position {
        return Err(Error::InvalidArgument("moments expects a position-domain field".into()));
    }
    let n = f.norm();
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("field is not normalized (norm {n})")));
    }
    let (mean_x, dev_x) = weighted_moments(f, |i| f.grid.point(i));
    let m = h_fourier_raw(f);
    let (mean_xi, dev_xi) = weighted_moments(&m, |i| m.grid.momentum(i, m.h));
    Ok(Moments { mean_x, mean_xi, dev_x, dev_xi })
}

/// ∫_{|ξ| ≥ R} |F_h f|² dξ.
pub fn h_oscillation_tail(f: &WaveField, r: f64) -> f64 {
    let m = h_fourier_raw(f);
    let dv = m.grid.momentum_cell_volume(m.h);
    m.samples
        .iter()
        .enumerate()
        .filter(|(i, _)| m.grid.momentum(*i, m.h).iter().map(|x| x * x).sum::<f64>().sqrt() >= r)
        .map(|(_, v)| v.norm_sqr() * dv)
        .sum()
}

/// Semiclassical Sobolev norm sup_ℓ ‖(1 + |ξ|²)^{ℓ/2} F_h f‖ over the ladder
/// ℓ ∈ {0, 1, …, ⌊s⌋, s}.
pub fn sobolev_norm(f: &WaveField, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("Sobolev index must be >= 0, got {s}")));
    }
    let m = h_fourier_raw(f);
    let dv = m.grid.momentum_cell_volume(m.h);
    let weights: Vec<f64> =
        (0..m.samples.len()).map(|i| 1.0 + m.grid.momentum(i, m.h).iter().map(|x| x * x).sum::<f64>()).collect();
    let mut ladder: Vec<f64> = (0..=s.floor() as usize).map(|l| l as f64).collect();
    if s.fract() != 0.0 {
        ladder.push(s);
    }
    Ok(ladder
        .iter()
        .map(|&l| m.samples.iter().zip(&weights).map(|(v, w)| w.powf(l) * v.norm_sqr()).sum::<f64>() * dv)
        .fold(0.0f64, f64::max)
        .sqrt())
}

/// Field on a product phase-space grid (d = 1): `values[i * xi.n + k]` at
/// (x_i, ξ_k). Wigner and Husimi fields are real (zero imaginary parts).
#[derive(Clone, Debug)]
pub struct PhaseSpaceField {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub h: f64,
    pub values: Vec<C64>,
    /// Wigner: relative correlation mass near the edge of the lag window;
    /// Bargmann: relative L² mass missing from the z-grid.
    pub defect: f64,
}

impl PhaseSpaceField {
    pub fn value(&self, i: usize, k: usize) -> C64 {
        self.values[i * self.xi.len() + k]
    }

    fn cell(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.xi[1] - self.xi[0])
    }

    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.cell()
    }

    /// ∫ |values|² over the grid.
    pub fn l2_norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell()
    }

    /// ∫ W dξ as a function of x.
    pub fn x_marginal(&self) -> Vec<f64> {
        let dxi = self.xi[1] - self.xi[0];
        self.values.chunks(self.xi.len()).map(|row| row.iter().map(|v| v.re).sum::<f64>() * dxi).collect()
    }

    /// ∫ W dx as a function of ξ.
    pub fn xi_marginal(&self) -> Vec<f64> {
        let dx = self.x[1] - self.x[0];
        let nk = self.xi.len();
        (0..nk).map(|k| (0..self.x.len()).map(|i| self.values[i * nk + k].re).sum::<f64>() * dx).collect()
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let dx = self.x[1] - self.x[0];
        let dxi = self.xi[1] - self.xi[0];
        write_header(
            w,
            &[self.x.len(), self.xi.len()],
            &[self.x[0], self.xi[0]],
            &[self.x[0] + dx * self.x.len() as f64, self.xi[0] + dxi * self.xi.len() as f64],
            self.h,
        )?;
        write_payload(w, &self.values)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "x,xi,re,im")?;
        for (i, x) in self.x.iter().enumerate() {
            for (k, xi) in self.xi.iter().enumerate() {
                let v = self.value(i, k);
                writeln!(w, "{x:.17e},{xi:.17e},{:.17e},{:.17e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Band-limited interpolation of f at x + Δx/2 (Fourier shift theorem).
fn half_shift(samples: &[C64]) -> Vec<C64> {
    let n = samples.len();
    let mut s = samples.to_vec();
    fft::fft1(&mut s, false);
    for (k, v) in s.iter_mut().enumerate() {
        let m = fft::signed_index(k, n);
        if 2 * m.unsigned_abs() as usize == n {
            // Nyquist mode: symmetric interpolation gives cos(π/2) = 0
            *v = C64::new(0.0, 0.0);
        } else {
            *v *= C64::from_polar(1.0 / n as f64, PI * m as f64 / n as f64);
        }
    }
    fft::fft1(&mut s, true);
    s
}

/// Wigner transform of a 1D field on the grid x × (induced ξ-grid), computed
/// with one FFT over the lag variable per x.
pub fn wigner(f: &WaveField) -> Result<PhaseSpaceField> {
    if f.grid.dim() != 1 {
        return Err(Error::InvalidArgument("the Wigner transform is implemented for d = 1".into()));
    }
    let ax = &f.grid.axes[0];
    let n = ax.n;
    let dx = ax.dx();
    let h = f.h;
    let psi = &f.samples;
    let half = half_shift(psi);
    let idx = |j: i64| j.rem_euclid(n as i64) as usize;
    let mut values = vec![C64::new(0.0, 0.0); n * n];
    let mut edge = 0.0;
    let mut total = 0.0;
    let prefactor = dx / (2.0 * PI * h);
    for j in 0..n {
        let ji = j as i64;
        let mut c = vec![C64::new(0.0, 0.0); n];
        for kk in 0..n {
            let k = kk as i64 - (n / 2) as i64;
            // u = kΔx: ψ(x − u/2) ψ̄(x + u/2)
            let prod = if k % 2 == 0 {
                let m = k / 2;
                psi[idx(ji - m)] * psi[idx(ji + m)].conj()
            } else {
                let m = (k - 1).div_euclid(2);
                half[idx(ji - m - 1)] * half[idx(ji + m)].conj()
            };
            let mag = prod.norm();
            total += mag;
            if k.unsigned_abs() as usize >= (9 * n) / 20 {
                edge += mag;
            }
            let sign = if k.rem_euclid(2) == 1 { -1.0 } else { 1.0 };
            c[k.rem_euclid(n as i64) as usize] = prod * sign;
        }
        fft::fft1(&mut c, true);
        for (m, v) in c.iter().enumerate() {
            // e^{2πikm/n} sums with m indexing ξ_m = (m − n/2)Δξ after the (−1)^k shift
            values[j * n + m] = C64::new(v.re * prefactor, 0.0);
        }
    }
    Ok(PhaseSpaceField {
        x: ax.points(),
        xi: ax.momenta(h),
        h,
        values,
        defect: if total > 0.0 { edge / total } else { 0.0 },
    })
}

/// Standard coherent state g^h_z(x) = (πh)^{-d/4} e^{−|x−q|²/2h + ip·(x−q)/h}.
pub fn coherent_state(x: &[f64], q: &[f64], p: &[f64], h: f64) -> C64 {
    let d = x.len() as f64;
    let mut r2 = 0.0;
    let mut ph = 0.0;
    for k in 0..x.len() {
        let dx = x[k] - q[k];
        r2 += dx * dx;
        ph += p[k] * dx;
    }
    C64::from_polar((PI * h).powf(-d / 4.0) * (-r2 / (2.0 * h)).exp(), ph / h)
}

/// B_h f(z) = (2πh)^{-d/2} ⟨f, g^h_z⟩ at a single phase-space point (any d).
pub fn bargmann_at(f: &WaveField, q: &[f64], p: &[f64]) -> C64 {
    let d = f.grid.dim() as f64;
    let cutoff = 12.0 * f.h.sqrt();
    let mut s = C64::new(0.0, 0.0);
    for (i, v) in f.samples.iter().enumerate() {
        let x = f.grid.point(i);
        if x.iter().zip(q).any(|(a, b)| (a - b).abs() > cutoff) {
            continue;
        }
        s += v * coherent_state(&x, q, p, f.h).conj();
    }
    s * f.grid.cell_volume() * (2.0 * PI * f.h).powf(-d / 2.0)
}

/// Default phase-space grid for Bargmann transforms of a 1D field: the
/// moment box (5 deviations, i.e. beyond the 1e-6 mass level of a Gaussian)
/// inflated by 6√h on each side, with spacing at most √h/2.
pub fn default_z_grid(f: &WaveField) -> Result<GridSpec> {
    let mut g = f.clone();
    g.normalize();
    let m = moments(&g)?;
    let pad = 6.0 * f.h.sqrt();
    let spacing = 0.5 * f.h.sqrt();
    let axis = |c: f64, dev: f64| {
        let len = 2.0 * (5.0 * dev + pad);
        let n = ((len / spacing).ceil() as usize).next_power_of_two().max(8);
        Axis::centered(c, len, n)
    };
    GridSpec::new(vec![axis(m.mean_x[0], m.dev_x[0])?, axis(m.mean_xi[0], m.dev_xi[0])?])
}

fn z_points(zgrid: &GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if zgrid.dim() != 2 {
        return Err(Error::InvalidArgument("z-grid must have a q axis and a p axis".into()));
    }
    Ok((zgrid.axes[0].points(), zgrid.axes[1].points()))
}

/// Gaussian window table G[q][j] = e^{−(x_j−q)²/2h}.
fn gaussian_table(qs: &[f64], xs: &[f64], h: f64) -> Mat<C64> {
    Mat::from_fn(qs.len(), xs.len(), |a, j| {
        let d = xs[j] - qs[a];
        C64::new((-d * d / (2.0 * h)).exp(), 0.0)
    })
}

/// Bargmann transform on a (q, p) grid (d = 1) via dense products of
/// Gaussian and exponential tables.
pub fn bargmann(f: &WaveField, zgrid: &GridSpec) -> Result<PhaseSpaceField> {
    if f.grid.dim() != 1 {
        return Err(Error::InvalidArgument("grid Bargmann transform is implemented for d = 1".into()));
    }
    let (qs, ps) = z_points(zgrid)?;
    let h = f.h;
    let xs = f.grid.axes[0].points();
    let dx = f.grid.axes[0].dx();
    let g = gaussian_table(&qs, &xs, h);
    // V[q][j] = f_j G(q, x_j)
    let v = Mat::from_fn(qs.len(), xs.len(), |a, j| g[(a, j)] * f.samples[j]);
    // E[j][p] = e^{−i p x_j / h}
    let e = Mat::from_fn(xs.len(), ps.len(), |j, k| C64::from_polar(1.0, -ps[k] * xs[j] / h));
    let b = matmul(&v, &e);
    let pref = (2.0 * PI * h).powf(-0.5) * (PI * h).powf(-0.25) * dx;
    let mut values = Vec::with_capacity(qs.len() * ps.len());
    for (a, q) in qs.iter().enumerate() {
        for (k, p) in ps.iter().enumerate() {
            values.push(b[(a, k)] * C64::from_polar(pref, p * q / h));
        }
    }
    let mut field = PhaseSpaceField { x: qs, xi: ps, h, values, defect: 0.0 };
    let norm2 = f.norm().powi(2);
    field.defect = if norm2 > 0.0 { (1.0 - field.l2_norm_sqr() / norm2).abs() } else { 0.0 };
    Ok(field)
}

/// Husimi density |B_h f|² on the z-grid.
pub fn husimi(f: &WaveField, zgrid: &GridSpec) -> Result<PhaseSpaceField> {
    let mut b = bargmann(f, zgrid)?;
    b.values.iter_mut().for_each(|v| *v = C64::new(v.norm_sqr(), 0.0));
    Ok(b)
}

/// Synthesis f = (2πh)^{-1/2} ∫ B(z) g^h_z dz onto a 1D grid (inverse of
/// [`bargmann`] on its range).
pub fn bargmann_synthesis(b: &PhaseSpaceField, grid: &GridSpec) -> Result<WaveField> {
    if grid.dim() != 1 {
        return Err(Error::InvalidArgument("synthesis is implemented for d = 1".into()));
    }
    let h = b.h;
    let xs = grid.axes[0].points();
    let (qs, ps) = (&b.x, &b.xi);
    let dq = qs[1] - qs[0];
    let dp = ps[1] - ps[0];
    // C[q][j] = Σ_p B(q,p) e^{−ipq/h} e^{ipx_j/h}
    let bq = Mat::from_fn(qs.len(), ps.len(), |a, k| b.value(a, k) * C64::from_polar(1.0, -ps[k] * qs[a] / h));
    let e = Mat::from_fn(ps.len(), xs.len(), |k, j| C64::from_polar(1.0, ps[k] * xs[j] / h));
    let c = matmul(&bq, &e);
    let g = gaussian_table(qs, &xs, h);
    let pref = (2.0 * PI * h).powf(-0.5) * (PI * h).powf(-0.25) * dq * dp;
    let samples = (0..xs.len()).map(|j| (0..qs.len()).map(|a| g[(a, j)] * c[(a, j)]).sum::<C64>() * pref).collect();
    WaveField::new(grid.clone(), h, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(l: f64, n: usize) -> GridSpec {
        GridSpec::line(-l / 2.0, l / 2.0, n).unwrap()
    }

    fn packet(grid: &GridSpec, h: f64, q: f64, p: f64) -> WaveField {
        WaveField::from_profile(grid, h, |x| coherent_state(x, &[q], &[p], h)).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Axis::new(0.0, 1.0, 12).is_err());
        assert!(Axis::new(1.0, 1.0, 16).is_err());
        assert!(Axis::new(0.0, 1.0, 4).is_err());
        let g = GridSpec::new(vec![Axis::new(0.0, 1.0, 8).unwrap(), Axis::new(-1.0, 1.0, 16).unwrap()]).unwrap();
        assert_eq!(g.len(), 128);
        assert_eq!(g.unravel(17), vec![1, 1]);
        assert_eq!(g.point(17), vec![0.125, -0.875]);
    }

    #[test]
    fn fourier_is_unitary_and_invertible() {
        let h = 0.05;
        let g = line(8.0, 256);
        let f = WaveField::from_profile(&g, h, |x| {
            C64::new((-(x[0] - 0.3).powi(2) / 0.2).exp(), 0.0) * C64::from_polar(1.0, 0.7 * x[0] / h)
                + C64::new(0.0, 0.5 * (-(x[0] + 1.0).powi(2) / 0.1).exp())
        })
        .unwrap();
        let m = h_fourier(&f).unwrap();
        assert!((m.norm() - f.norm()).abs() < 1e-10 * f.norm());
        let back = h_fourier_inverse(&m).unwrap();
        assert!(back.distance(&f) <= 1e-12 * f.norm());
    }

    #[test]
    fn fourier_of_coherent_state_is_coherent_state() {
        // F_h(e^{ipq/2h} g_z) = e^{−ipq/2h} g_{Jz}, Jz = (p, −q)
        let h = 0.04;
        let (q, p) = (0.5, -0.8);
        let g = line(10.0, 512);
        let f = WaveField::from_profile(&g, h, |x| {
            coherent_state(x, &[q], &[p], h) * C64::from_polar(1.0, p * q / (2.0 * h))
        })
        .unwrap();
        let m = h_fourier(&f).unwrap();
        let mut err = 0.0f64;
        for i in 0..m.samples.len() {
            let xi = m.grid.momentum(i, h);
            let expect = coherent_state(&xi, &[p], &[-q], h) * C64::from_polar(1.0, -p * q / (2.0 * h));
            err = err.max((expect - m.samples[i]).norm());
        }
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn aliasing_is_flagged() {
        let h = 0.01;
        let g = line(2.0, 64);
        // ξ = 0.8 ξ_max lies in the top octave
        let xi = 0.8 * g.axes[0].xi_max(h);
        let f = WaveField::from_fn(&g, h, |x| C64::from_polar(1.0, xi * x[0] / h)).unwrap();
        assert!(h_fourier(&f).is_err());
    }

    #[test]
    fn momentum_mean_matches_spectral_derivative() {
        // oracle: ⟨hD ψ, ψ⟩ by spectral differentiation in ordinary frequencies
        let h = 0.03;
        let g = line(8.0, 512);
        let f = {
            let mut f = WaveField::from_profile(&g, h, |x| {
                C64::new((-(x[0] - 0.2).powi(2) / 0.3).exp() * (1.0 + 0.3 * x[0]), 0.0)
                    * C64::from_polar(1.0, (0.6 * x[0] + 0.2 * x[0] * x[0]) / h)
            })
            .unwrap();
            f.normalize();
            f
        };
        let n = 512;
        let l = 8.0;
        let mut s = f.samples.clone();
        fft::fft1(&mut s, false);
        for (k, v) in s.iter_mut().enumerate() {
            let kk = 2.0 * PI * fft::signed_index(k, n) as f64 / l;
            *v *= C64::new(h * kk / n as f64, 0.0);
        }
        fft::fft1(&mut s, true);
        let hd = WaveField { samples: s, ..f.clone() };
        let oracle = hd.inner(&f).re;
        let m = moments(&f).unwrap();
        assert!((m.mean_xi[0] - oracle).abs() < 1e-8, "{} vs {}", m.mean_xi[0], oracle);
    }

    #[test]
    fn coherent_state_moments_saturate() {
        for q in 4..=10 {
            let h = 2f64.powi(-q);
            let l = 4.0 + 24.0 * h.sqrt();
            let n = ((l * 2.0 * (1.0 + 12.0 * h.sqrt()) / (2.0 * PI * h)).ceil() as usize).next_power_of_two();
            let g = line(l, n.max(64));
            let f = packet(&g, h, 0.4, -0.6);
            let m = moments(&f).unwrap();
            assert!((m.mean_x[0] - 0.4).abs() < 1e-8);
            assert!((m.mean_xi[0] + 0.6).abs() < 1e-8);
            assert!((m.dev_x[0] - (h / 2.0).sqrt()).abs() < 1e-8);
            assert!((m.dev_xi[0] - (h / 2.0).sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn moments_require_normalisation() {
        let h = 0.05;
        let g = line(6.0, 128);
        let mut f = packet(&g, h, 0.0, 0.0);
        f.samples.iter_mut().for_each(|v| *v *= 2.0);
        assert!(moments(&f).is_err());
    }

    #[test]
    fn translation_shifts_mean_only() {
        let h = 0.05;
        let g = line(8.0, 256);
        let prof =
            |x: f64| C64::new((-(x * x) / 0.3).exp() * (1.0 + 0.5 * x), 0.0) * C64::from_polar(1.0, 0.4 * x * x / h);
        let mut f = WaveField::from_profile(&g, h, |x| prof(x[0])).unwrap();
        let mut ft = WaveField::from_profile(&g, h, |x| prof(x[0] - 0.5)).unwrap();
        f.normalize();
        ft.normalize();
        let (m, mt) = (moments(&f).unwrap(), moments(&ft).unwrap());
        assert!((mt.mean_x[0] - m.mean_x[0] - 0.5).abs() < 1e-8);
        assert!((mt.dev_x[0] - m.dev_x[0]).abs() < 1e-8);
    }

    #[test]
    fn oscillation_tails() {
        let h = 0.05;
        // constant field on the torus
        let g = line(2.0 * PI, 64);
        let c = WaveField::from_fn(&g, h, |_| C64::new(1.0 / (2.0 * PI).sqrt(), 0.0)).unwrap();
        assert!(h_oscillation_tail(&c, 1e-6) < 1e-28);
        // plane wave e^{ix/h} with h matched to the grid: L/(2πh) integer
        let h = 1.0 / 8.0;
        let pw = WaveField::from_fn(&g, h, |x| C64::from_polar(1.0 / (2.0 * PI).sqrt(), x[0] / h)).unwrap();
        assert!(h_oscillation_tail(&pw, 1.01) < 1e-28);
        assert!((h_oscillation_tail(&pw, 0.99) - 1.0).abs() < 1e-12);
        // Gaussian with p = 1: tail beyond 2 is below e^{−1/h}
        let h = 0.02;
        let g = line(6.0, 1024);
        let f = packet(&g, h, 0.0, 1.0);
        assert!(h_oscillation_tail(&f, 2.0) < (-1.0 / h).exp());
        let tails: Vec<f64> = [0.5, 0.9, 1.0, 1.1].iter().map(|&r| h_oscillation_tail(&f, r)).collect();
        assert!(tails.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sobolev_norms() {
        let h = 0.02;
        let g = line(6.0, 512);
        let f = packet(&g, h, 0.0, 0.0);
        assert!((sobolev_norm(&f, 0.0).unwrap() - f.norm()).abs() < 1e-12);
        // closed form for p = 0: ∫(1+ξ²)^ℓ |ĝ|² = 1 + ℓ h/2 + … ; ℓ = 2 → 1 + h + 3h²/4
        let s2 = sobolev_norm(&f, 2.0).unwrap();
        assert!((s2 * s2 - (1.0 + h + 0.75 * h * h)).abs() < 1e-10);
        // single mode e^{ix/h} on the torus: ‖·‖_s = 2^{s/2}
        let h = 1.0 / 8.0;
        let g = line(2.0 * PI, 64);
        let pw = WaveField::from_fn(&g, h, |x| C64::from_polar(1.0 / (2.0 * PI).sqrt(), x[0] / h)).unwrap();
        for s in [0.5, 1.0, 2.5] {
            assert!((sobolev_norm(&pw, s).unwrap() - 2f64.powf(s / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn wigner_of_coherent_state() {
        let h = 1.0 / 32.0;
        let (q, p) = (0.3, -0.4);
        let g = line(6.0, 256);
        let f = packet(&g, h, q, p);
        let w = wigner(&f).unwrap();
        let mut err = 0.0f64;
        let peak = 1.0 / (PI * h);
        for (i, x) in w.x.iter().enumerate() {
            for (k, xi) in w.xi.iter().enumerate() {
                let exact = peak * (-((x - q).powi(2) + (xi - p).powi(2)) / h).exp();
                err = err.max((w.value(i, k).re - exact).abs());
            }
        }
        assert!(err / peak < 1e-4, "{}", err / peak);
        assert!((w.integral().re - 1.0).abs() < 1e-6);
        let xm = w.x_marginal();
        for (j, v) in f.samples.iter().enumerate() {
            assert!((xm[j] - v.norm_sqr()).abs() < 1e-6);
        }
        let m = h_fourier(&f).unwrap();
        let km = w.xi_marginal();
        for (k, v) in m.samples.iter().enumerate() {
            assert!((km[k] - v.norm_sqr()).abs() < 1e-6);
        }
    }

    #[test]
    fn wigner_marginals_of_superposition() {
        let h = 0.05;
        let g = line(8.0, 256);
        let mut f = WaveField::from_profile(&g, h, |x| {
            coherent_state(x, &[-1.0], &[0.5], h) + coherent_state(x, &[1.0], &[-0.3], h) * C64::new(0.0, 0.7)
        })
        .unwrap();
        f.normalize();
        let w = wigner(&f).unwrap();
        assert!((w.integral().re - 1.0).abs() < 1e-6);
        let xm = w.x_marginal();
        assert!(f.samples.iter().zip(&xm).all(|(v, m)| (v.norm_sqr() - m).abs() < 1e-6));
        let fm = h_fourier(&f).unwrap();
        let km = w.xi_marginal();
        assert!(fm.samples.iter().zip(&km).all(|(v, m)| (v.norm_sqr() - m).abs() < 1e-6));
        assert!(w.defect < 1e-6);
    }

    #[test]
    fn bargmann_of_coherent_state() {
        let h = 1.0 / 16.0;
        let (q0, p0) = (0.2, 0.5);
        let g = line(8.0, 256);
        let f = packet(&g, h, q0, p0);
        let zg = default_z_grid(&f).unwrap();
        let b = bargmann(&f, &zg).unwrap();
        let mut err = 0.0f64;
        for (a, q) in b.x.iter().enumerate() {
            for (k, p) in b.xi.iter().enumerate() {
                let exact = (2.0 * PI * h).powf(-0.5) * (-((q - q0).powi(2) + (p - p0).powi(2)) / (4.0 * h)).exp();
                err = err.max((b.value(a, k).norm() - exact).abs());
            }
        }
        assert!(err < 1e-10, "{err}");
        let ratio = b.l2_norm_sqr() / f.norm().powi(2);
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
        let back = bargmann_synthesis(&b, &g).unwrap();
        assert!(back.distance(&f) / f.norm() < 1e-3);
        // pointwise transform agrees with the table version
        let direct = bargmann_at(&f, &[b.x[10]], &[b.xi[20]]);
        assert!((direct - b.value(10, 20)).norm() < 1e-10);
    }

    #[test]
    fn bargmann_coverage_deficit_is_reported() {
        let h = 1.0 / 16.0;
        let g = line(8.0, 256);
        let f = packet(&g, h, 1.0, 0.0);
        let zg = GridSpec::new(vec![Axis::new(-1.0, 0.5, 16).unwrap(), Axis::new(-1.0, 1.0, 16).unwrap()]).unwrap();
        assert!(bargmann(&f, &zg).unwrap().defect > 0.1);
    }

    #[test]
    fn binary_round_trip() {
        let h = 0.1;
        let g = GridSpec::new(vec![Axis::new(-2.0, 2.0, 8).unwrap(), Axis::new(0.0, 1.0, 16).unwrap()]).unwrap();
        let f = WaveField::from_fn(&g, h, |x| C64::new(x[0], x[1] * x[0])).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 32 + 8 + 16 * 128);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        let back = WaveField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.samples, f.samples);
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x1,x2,re,im\n"));
        assert_eq!(text.lines().count(), 129);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn uncertainty_holds_for_random_fields(c in prop::collection::vec(-1.0f64..1.0, 6), hq in 4u32..8) {
            let h = 2f64.powi(-(hq as i32));
            let g = line(16.0, 1024);
            let mut f = WaveField::from_profile(&g, h, |x| {
                let x = x[0];
                let env = (-(x - c[0]).powi(2) / (0.3 + 0.5 * c[1].abs())).exp();
                C64::new(env * (1.0 + c[2] * x + c[3] * x * x), env * c[4] * x)
                    * C64::from_polar(1.0, c[5] * x * x)
            }).unwrap();
            f.normalize();
            let m = moments(&f).unwrap();
            prop_assert!(m.dev_x[0] * m.dev_xi[0] >= h / 2.0 - 1e-8);
        }

        #[test]
        fn fourier_round_trip(c in prop::collection::vec(-1.0f64..1.0, 4)) {
            let h = 0.05;
            let g = line(8.0, 128);
            let f = WaveField::from_fn(&g, h, |x| C64::new((-(x[0] - c[0]).powi(2)).exp() * c[1], c[2] * (-(x[0] * x[0]) / (0.3 + c[3].abs())).exp())).unwrap();
            let back = h_fourier_inverse(&h_fourier_raw(&f)).unwrap();
            prop_assert!(back.distance(&f) <= 1e-12 * f.norm().max(1e-300));
        }
    }
}
