//! Square 2-D FFTs on row-major buffers.
//!
//! Both directions are unnormalized; callers divide by `n²` where the
//! inverse transform is meant.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    /// Shared plan for side length `n`; plans are built once per size.
    pub fn plan(n: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft plan cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 {
                    n,
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(&self.forward, buf);
    }

    /// Unnormalized inverse (no 1/n² factor).
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(&self.inverse, buf);
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(buf.len(), n * n, "fft buffer must be {n}x{n}");
        SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            let need = fft.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::default());
            }
            fft.process_with_scratch(buf, &mut scratch[..need]);
            transpose_in_place(buf, n);
            fft.process_with_scratch(buf, &mut scratch[..need]);
            transpose_in_place(buf, n);
        });
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in r + 1..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}

/// Signed frequency (or lag) of bin `i` for length `n`, in `[-(n/2), n - 1 - n/2]`.
///
/// This is the centered layout used by the template matrix: for even `n` the
/// Nyquist bin maps to `-n/2`.
#[inline]
pub fn signed_bin(i: usize, n: usize) -> i64 {
    let c = n / 2;
    let shifted = (i + c) % n;
    shifted as i64 - c as i64
}
