//! Multidimensional complex FFTs on row-major arrays (last index fastest).

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct FftNd {
    dims: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            dims: dims.to_vec(),
            fwd: dims.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inv: dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform, `Σ x e^{−2πi jk/N}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        for a in 0..self.dims.len() {
            self.axis_pass(data, a, &self.fwd[a]);
        }
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        for a in 0..self.dims.len() {
            self.axis_pass(data, a, &self.inv[a]);
        }
        let s = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }

    fn axis_pass(&self, data: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let l = self.dims[axis];
        let stride: usize = self.dims[axis + 1..].iter().product();
        let scratch_len = fft.get_inplace_scratch_len();
        if stride == 1 {
            data.par_chunks_mut(l).for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, line| fft.process_with_scratch(line, scratch),
            );
            return;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        {
            let src: &[Complex64] = data;
            buf.par_chunks_mut(l).enumerate().for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, (line, c)| {
                    let (o, j) = (line / stride, line % stride);
                    let base = o * l * stride + j;
                    for (i, v) in c.iter_mut().enumerate() {
                        *v = src[base + i * stride];
                    }
                    fft.process_with_scratch(c, scratch);
                },
            );
        }
        data.par_chunks_mut(l * stride).enumerate().for_each(|(o, blk)| {
            for j in 0..stride {
                let line = &buf[(o * stride + j) * l..(o * stride + j + 1) * l];
                for (i, v) in line.iter().enumerate() {
                    blk[i * stride + j] = *v;
                }
            }
        });
    }
}

/// Signed frequency index of bin `i` on a length-`n` axis.
pub fn freq_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
