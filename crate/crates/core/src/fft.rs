//! Multidimensional complex transforms on periodic `n^d` lattices stored in
//! row-major order.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for an `n^d` lattice. Immutable once built and
/// cheap to clone, so one plan can be shared across worker threads.
#[derive(Clone)]
pub struct LatticeFft {
    d: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeFft").field("d", &self.d).field("n", &self.n).finish()
    }
}

impl LatticeFft {
    pub fn new(d: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft { d, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(&self.fwd, buf, scratch);
    }

    /// Inverse transform including the `1/n^d` factor.
    pub fn inverse(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(&self.inv, buf, scratch);
        let s = 1.0 / self.len() as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Inverse transform without the `1/n^d` factor.
    pub fn inverse_unscaled(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.run(&self.inv, buf, scratch);
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        assert_eq!(buf.len(), self.len());
        let n = self.n;
        let need = plan.get_inplace_scratch_len() + n;
        if scratch.len() < need {
            scratch.resize(need, Complex64::default());
        }
        let (line, work) = scratch.split_at_mut(n);
        // last axis is contiguous
        plan.process_with_scratch(buf, work);
        for axis in 0..self.d.saturating_sub(1) {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..buf.len()).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = buf[start + j * stride];
                    }
                    plan.process_with_scratch(line, work);
                    for (j, v) in line.iter().enumerate() {
                        buf[start + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Angular wavenumbers `2πm/L` in transform order for one axis.
    pub fn axis_wavenumbers(&self, dx: f64) -> Vec<f64> {
        let n = self.n as i64;
        let len = self.n as f64 * dx;
        (0..n).map(|m| if m <= n / 2 { m } else { m - n }).map(|m| 2.0 * PI * m as f64 / len).collect()
    }

    /// `‖k‖²` for every lattice mode, row-major.
    pub fn k_squared(&self, dx: f64) -> Vec<f64> {
        let k = self.axis_wavenumbers(dx);
        let mut out = vec![0.0; self.len()];
        for (idx, v) in out.iter_mut().enumerate() {
            let mut rest = idx;
            let mut s = 0.0;
            for _ in 0..self.d {
                let kj = k[rest % self.n];
                s += kj * kj;
                rest /= self.n;
            }
            *v = s;
        }
        out
    }
}

/// Signed lattice offsets of cell `idx`, each in `(-n/2, n/2]`.
pub fn cell_offsets(idx: usize, d: usize, n: usize) -> Vec<i64> {
    let mut out = vec![0i64; d];
    let mut rest = idx;
    for j in (0..d).rev() {
        let m = (rest % n) as i64;
        out[j] = if m <= n as i64 / 2 { m } else { m - n as i64 };
        rest /= n;
    }
    out
}
