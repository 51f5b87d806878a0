use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};

type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

static PLANS: Lazy<Mutex<PlanCache>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap();
    cache
        .entry((len, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            planner.plan_fft(len, dir)
        })
        .clone()
}

/// In-place FFT along every axis of a row-major d-dimensional array with n
/// points per axis. `forward` computes sums with e^{-2 pi i jk/n} (values to
/// unnormalized coefficients), the inverse uses e^{+2 pi i jk/n}.
fn transform_axes(data: &mut [Complex64], d: usize, n: usize, forward: bool) {
    debug_assert_eq!(data.len(), n.pow(d as u32));
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::default(); n];
    for axis in 0..d {
        // stride between consecutive entries along `axis`
        let stride = n.pow((d - 1 - axis) as u32);
        let lines = data.len() / n;
        for l in 0..lines {
            // Decompose l into (outer, inner) around the transformed axis.
            let inner = l % stride;
            let outer = l / stride;
            let base = outer * stride * n + inner;
            if stride == 1 {
                let seg = &mut data[base..base + n];
                fft.process_with_scratch(seg, &mut scratch);
            } else {
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, value) in line.iter().enumerate() {
                    data[base + i * stride] = *value;
                }
            }
        }
    }
}

/// Collocation values (in place) -> Fourier coefficients under the convention
/// f(x) = sum_k c_k e^{2 pi i k.x}, i.e. includes the 1/N^d normalization.
pub fn values_to_coeffs(data: &mut [Complex64], d: usize, n: usize) {
    transform_axes(data, d, n, true);
    let scale = 1.0 / data.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Fourier coefficients (in place) -> collocation values.
pub fn coeffs_to_values(data: &mut [Complex64], d: usize, n: usize) {
    transform_axes(data, d, n, false);
}
