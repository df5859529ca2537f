//! Adaptive Gauss–Kronrod quadrature.
//!
//! A globally adaptive 15-point Gauss–Kronrod scheme in the style of QUADPACK's
//! `qag`: the interval with the largest error estimate is bisected until the
//! summed error estimate falls under `max(abs_tol, rel_tol * |I|)`.
//! Integrable endpoint singularities are handled by repeated bisection, since
//! the Kronrod nodes never touch an endpoint. Interior singularities must be
//! passed as breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a numerical integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
    /// False when the tolerance was not met within the subdivision budget or
    /// when the integrand produced non-finite values.
    pub converged: bool,
}

impl Estimate {
    fn zero() -> Self {
        Estimate { value: 0.0, abs_error: 0.0, evaluations: 0, converged: true }
    }

    fn merge(self, other: Estimate) -> Estimate {
        Estimate {
            value: self.value + other.value,
            abs_error: self.abs_error + other.abs_error,
            evaluations: self.evaluations + other.evaluations,
            converged: self.converged && other.converged,
        }
    }
}

/// Tolerances and budget for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { rel_tol: 1e-6, abs_tol: 1e-12, max_intervals: 4000 }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, bool) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut finite = fc.is_finite();
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        finite &= f1.is_finite() && f2.is_finite();
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    let eps_floor = 50.0 * f64::EPSILON * res_abs;
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(eps_floor);
    }
    (value, err, finite)
}

impl Quadrature {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Quadrature { rel_tol, ..Quadrature::default() }
    }

    /// Integrate `f` over the finite interval `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Estimate {
        if a == b {
            return Estimate::zero();
        }
        if b < a {
            let mut e = self.integrate(f, b, a);
            e.value = -e.value;
            return e;
        }
        let (v, e, finite) = kronrod15(&mut f, a, b);
        let mut evaluations = 15;
        let mut all_finite = finite;
        let mut heap = BinaryHeap::new();
        let mut total = v;
        let mut total_err = e;
        // segments too narrow to split any further are parked here
        let mut frozen_err = 0.0;
        let mut frozen_value = 0.0;
        heap.push(Segment { a, b, value: v, error: e });
        let mut count = 1;
        loop {
            let tol = self.abs_tol.max(self.rel_tol * total.abs());
            if total_err <= tol {
                break;
            }
            if count >= self.max_intervals {
                break;
            }
            let Some(seg) = heap.pop() else { break };
            let mid = 0.5 * (seg.a + seg.b);
            if mid <= seg.a || mid >= seg.b || (seg.b - seg.a) < 1e-14 * seg.a.abs().max(seg.b.abs()).max(1e-300) {
                frozen_err += seg.error;
                frozen_value += seg.value;
                if heap.is_empty() {
                    break;
                }
                continue;
            }
            let (v1, e1, f1) = kronrod15(&mut f, seg.a, mid);
            let (v2, e2, f2) = kronrod15(&mut f, mid, seg.b);
            evaluations += 30;
            all_finite &= f1 && f2;
            total += v1 + v2 - seg.value;
            total_err += e1 + e2 - seg.error;
            heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
            heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
            count += 1;
        }
        // re-sum to limit drift from the incremental updates
        let value = heap.iter().map(|s| s.value).sum::<f64>() + frozen_value;
        let abs_error = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
        let tol = self.abs_tol.max(self.rel_tol * value.abs());
        Estimate { value, abs_error, evaluations, converged: all_finite && abs_error <= tol }
    }

    /// Integrate over consecutive intervals delimited by sorted `points`.
    pub fn integrate_pieces<F: FnMut(f64) -> f64>(&self, mut f: F, points: &[f64]) -> Estimate {
        let mut pts: Vec<f64> = points.to_vec();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut acc = Estimate::zero();
        for w in pts.windows(2) {
            acc = acc.merge(self.integrate(&mut f, w[0], w[1]));
        }
        acc
    }

    /// Integrate over `[a, inf)` through the map `x = a + s / (1 - s)`.
    pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64) -> Estimate {
        self.integrate(
            |s| {
                let one_minus = 1.0 - s;
                let x = a + s / one_minus;
                let v = f(x) / (one_minus * one_minus);
                if v.is_nan() && !x.is_finite() {
                    0.0
                } else {
                    v
                }
            },
            0.0,
            1.0,
        )
    }

    /// Integrate over `[points[0], points[last]]` in pieces and then over
    /// `[points[last], inf)`.
    pub fn integrate_pieces_to_infinity<F: FnMut(f64) -> f64>(&self, mut f: F, points: &[f64]) -> Estimate {
        let mut pts: Vec<f64> = points.to_vec();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let last = *pts.last().expect("at least one point");
        let head = if pts.len() > 1 { self.integrate_pieces(&mut f, &pts) } else { Estimate::zero() };
        head.merge(self.integrate_to_infinity(&mut f, last))
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
