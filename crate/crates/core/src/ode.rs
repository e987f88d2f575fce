//! Adaptive Dormand–Prince 5(4) integration.
//!
//! Error control is per unit time: a step of size `dt` is accepted when every
//! component of the embedded error estimate satisfies
//! `|e_i| <= tol * |dt| * (1 + |y_i|)`.

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// difference between the 5th and 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub struct Dopri<F> {
    f: F,
    t: f64,
    y: Vec<f64>,
    dt: f64,
    tol: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    fsal: bool,
    pub accepted: usize,
    pub rejected: usize,
}

impl<F> Dopri<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(f: F, t0: f64, y0: &[f64], tol: f64) -> Self {
        let n = y0.len();
        Self {
            f,
            t: t0,
            y: y0.to_vec(),
            dt: 0.0,
            tol,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            fsal: false,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Replaces the state (e.g. after an event); forces a fresh derivative.
    pub fn reset(&mut self, t: f64, y: &[f64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        self.fsal = false;
    }

    fn stage(&mut self, idx: usize, c: f64, dt: f64, coeffs: &[(usize, f64)]) {
        let n = self.y.len();
        for i in 0..n {
            let mut s = self.y[i];
            for &(j, a) in coeffs {
                s += dt * a * self.k[j][i];
            }
            self.tmp[i] = s;
        }
        (self.f)(self.t + c * dt, &self.tmp, &mut self.k[idx]);
    }

    /// Takes one accepted step towards `target` without passing it.
    /// Returns the new time.
    pub fn step_toward(&mut self, target: f64) -> Result<f64> {
        let remaining = target - self.t;
        if remaining == 0.0 {
            return Ok(self.t);
        }
        let dir = remaining.signum();
        if !self.fsal {
            (self.f)(self.t, &self.y, &mut self.k[0]);
            self.fsal = true;
        }
        if self.dt == 0.0 || self.dt.signum() != dir {
            self.dt = dir * remaining.abs().min(0.01);
        }
        let n = self.y.len();
        loop {
            let mut dt = self.dt;
            let last = dt.abs() >= remaining.abs();
            if last {
                dt = remaining;
            }
            let min_dt = 1e-14 * self.t.abs().max(1.0);
            if dt.abs() < min_dt {
                return Err(Error::Integration { last_time: self.t, reason: "step size underflow".into() });
            }
            self.stage(1, C2, dt, &[(0, A21)]);
            self.stage(2, C3, dt, &[(0, A31), (1, A32)]);
            self.stage(3, C4, dt, &[(0, A41), (1, A42), (2, A43)]);
            self.stage(4, C5, dt, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            self.stage(5, 1.0, dt, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            let mut ynew = vec![0.0; n];
            for i in 0..n {
                ynew[i] = self.y[i]
                    + dt * (B1 * self.k[0][i]
                        + B3 * self.k[2][i]
                        + B4 * self.k[3][i]
                        + B5 * self.k[4][i]
                        + B6 * self.k[5][i]);
            }
            (self.f)(self.t + dt, &ynew, &mut self.k[6]);
            let mut err = 0.0f64;
            let mut finite = true;
            for i in 0..n {
                let e = dt
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                if !ynew[i].is_finite() {
                    finite = false;
                }
                let sc = self.tol * dt.abs() * (1.0 + self.y[i].abs().max(ynew[i].abs()));
                err = err.max(e.abs() / sc);
            }
            if !finite {
                err = f64::INFINITY;
            }
            if err <= 1.0 {
                self.t = if last { target } else { self.t + dt };
                self.y = ynew;
                self.k.swap(0, 6);
                self.accepted += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    self.dt = dt * fac;
                }
                return Ok(self.t);
            }
            self.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            self.dt = dt * fac;
        }
    }

    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        while self.t != target {
            self.step_toward(target)?;
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta step, used for short event refinements.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(t + dt, &tmp, &mut k4);
    (0..n).map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut s = Dopri::new(|_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], 0.0, &[1.0], 1e-10);
        s.advance_to(2.0).unwrap();
        assert!((s.y()[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(s.t(), 2.0);
    }

    #[test]
    fn backward_in_time() {
        let mut s = Dopri::new(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            1.0,
            &[1.0f64.cos(), -1.0f64.sin()],
            1e-10,
        );
        s.advance_to(-2.0).unwrap();
        assert!((s.y()[0] - (-2.0f64).cos()).abs() < 1e-8);
        assert!((s.y()[1] + (-2.0f64).sin()).abs() < 1e-8);
    }

    #[test]
    fn blow_up_reports_last_time() {
        // y' = y^2, y(0)=1 blows up at t=1
        let mut s = Dopri::new(|_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0], 0.0, &[1.0], 1e-8);
        match s.advance_to(2.0) {
            Err(Error::Integration { last_time, .. }) => assert!(last_time < 1.0 && last_time > 0.9),
            other => panic!("expected failure, got {:?}", other.map(|_| s.y()[0])),
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        let e1 = (rk4_step(&mut f, 0.0, &[1.0], 0.1)[0] - 0.1f64.exp()).abs();
        let e2 = (rk4_step(&mut f, 0.0, &[1.0], 0.05)[0] - 0.05f64.exp()).abs();
        let order = (e1 / e2).log2();
        assert!(order > 4.5 && order < 5.5, "local order {order}");
    }
}
