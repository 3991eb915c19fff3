//! Cached two-dimensional complex FFT plans for square lattices.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for an `n x n` grid. Unnormalized in both
/// directions; callers apply the lattice measure.
pub(crate) struct Plan2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<Plan2d>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plan2d>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared plan for side length `n`. Plans are immutable and thread safe.
pub(crate) fn plan(n: usize) -> Arc<Plan2d> {
    let mut guard = cache().lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plan2d {
                n,
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

impl Plan2d {
    /// In-place `sum_x f(x) e^{-2 pi i p.x/n}` over a row-major buffer.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.forward, data);
    }

    /// In-place `sum_p g(p) e^{+2 pi i p.x/n}` over a row-major buffer.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inverse, data);
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let n = self.n;
        debug_assert_eq!(data.len(), n * n);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, n);
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, n);
    }
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}
