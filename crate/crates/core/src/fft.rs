//! Thin multi-dimensional wrapper over rustfft for row-major arrays.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::C64;

type Plan = Arc<dyn Fft<f64>>;

fn plans() -> &'static Mutex<HashMap<(usize, bool), Plan>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    PLANS.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn plan(n: usize, inverse: bool) -> Plan {
    let mut map = plans().lock().unwrap();
    map.entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalised forward (e^{-2πijk/n}) or inverse (e^{+2πijk/n}) transform of
/// a contiguous 1D buffer.
pub fn fft1(buf: &mut [C64], inverse: bool) {
    plan(buf.len(), inverse).process(buf);
}

/// Transforms `data` (row-major with the given shape) along `axis`.
/// Lines are independent, so they may be processed in parallel without
/// affecting the result.
pub fn fft_axis(data: &mut [C64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let p = plan(n, inverse);
    if inner == 1 {
        data.par_chunks_mut(n).for_each(|line| p.process(line));
        return;
    }
    // gather strided lines block by block
    data.par_chunks_mut(n * inner).for_each(|block| {
        let mut line = vec![C64::new(0.0, 0.0); n];
        for i in 0..inner {
            for k in 0..n {
                line[k] = block[k * inner + i];
            }
            p.process(&mut line);
            for k in 0..n {
                block[k * inner + i] = line[k];
            }
        }
    });
}

pub fn fft_all(data: &mut [C64], shape: &[usize], inverse: bool) {
    for axis in 0..shape.len() {
        fft_axis(data, shape, axis, inverse);
    }
}

/// Signed integer frequency of index k on an n-point grid (numpy fftfreq·n).
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
