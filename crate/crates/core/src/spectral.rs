//! Spectral atom at the origin, ergodicity and mixing decisions, and the
//! exact covariance of the additive-noise solution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{
    ball_volume, correlation_radial, cube_integral, dalang_finite, exact, gp_any, heat_radial, integrate_against,
    potential_radial, radial_convolution, Family, KernelSpec, PairKernel, Role,
};
use crate::quad::{linear_fit, Estimate, Quadrature};

pub const DEFAULT_SCALES: [f64; 4] = [16.0, 64.0, 256.0, 1024.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomDecision {
    AtomZero,
    AtomPositive,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Ergodic,
    NonErgodic,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomEstimate {
    pub n_values: Vec<f64>,
    /// `f([-N, N]^d) / (2N)^d`.
    pub cesaro_values: Vec<f64>,
    /// `f(B_N) / |B_N|`.
    pub ball_values: Vec<f64>,
    /// `(I_N * Ĩ_N * f)(0)`.
    pub triangular_values: Vec<f64>,
    /// Limit of the triangular values; equals `f̂{0} / (2π)^d`.
    pub extrapolated_atom: f64,
    pub decision: AtomDecision,
}

/// `(I_N * Ĩ_N * f)(0) = N^{-d} ∫ f(x) ∏ (1 - |x_j|/N)₊ dx`. Base kernels
/// use `f = h * h~`.
pub fn triangular_smoother(spec: &KernelSpec, n: f64) -> Result<f64> {
    Ok(cube_integral(spec, n, true, false)? / n.powi(spec.d as i32))
}

/// `f([-N, N]^d)` with the signed `f` for base kernels.
fn box_integral(spec: &KernelSpec, n: f64) -> Result<f64> {
    cube_integral(spec, n, false, false)
}

fn ball_integral(spec: &KernelSpec, r: f64) -> Result<f64> {
    match &spec.family {
        Family::CosineF { wavenumber, offset } => Ok(2.0 * offset * r + 2.0 * (wavenumber * r).sin() / wavenumber),
        _ => Ok(integrate_against(spec, PairKernel::Ball(r), false, 1e-8)?.value),
    }
}

/// Positive, shrinking by at least `(N_last/N_first)^{-1/2}` overall, with
/// log-log slope below `-1/2`.
pub fn decays(n: &[f64], v: &[f64]) -> bool {
    let first = v[0].abs();
    let last = v[v.len() - 1].abs();
    if first == 0.0 {
        return v.iter().all(|x| *x == 0.0);
    }
    if last == 0.0 {
        return true;
    }
    let pts: Vec<(f64, f64)> = n.iter().zip(v).filter(|(_, y)| y.abs() > 0.0).map(|(x, y)| (x.ln(), y.abs().ln())).collect();
    if pts.len() < 2 {
        return true;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _) = linear_fit(&x, &y);
    let ratio_cap = (n[n.len() - 1] / n[0]).powf(-0.5);
    slope < -0.5 && last / first <= ratio_cap
}

/// Last three values positive and pairwise within 1%.
pub fn stabilizes(v: &[f64]) -> bool {
    if v.len() < 3 {
        return false;
    }
    let tail = &v[v.len() - 3..];
    if tail.iter().any(|x| !(*x > 0.0)) {
        return false;
    }
    for i in 0..3 {
        for j in 0..3 {
            if (tail[i] - tail[j]).abs() > 0.01 * tail[i].min(tail[j]) {
                return false;
            }
        }
    }
    true
}

pub fn atom_at_zero(spec: &KernelSpec, scales: &[f64]) -> Result<AtomEstimate> {
    if scales.len() < 3 {
        return domain("atom detection needs at least three scales");
    }
    if scales.windows(2).any(|w| !(w[1] > w[0])) || !(scales[0] > 0.0) {
        return domain("scales must be positive and increasing");
    }
    let d = spec.d as i32;
    let mut cesaro = Vec::with_capacity(scales.len());
    let mut ball = Vec::with_capacity(scales.len());
    let mut tri = Vec::with_capacity(scales.len());
    for &n in scales {
        tri.push(triangular_smoother(spec, n)?);
        cesaro.push(box_integral(spec, n)? / (2.0 * n).powi(d));
        let b = match ball_integral(spec, n) {
            Ok(v) => v / (ball_volume(spec.d) * n.powi(d)),
            Err(Error::Unsupported(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        ball.push(b);
    }
    let (decision, atom) = if decays(scales, &tri) {
        (AtomDecision::AtomZero, 0.0)
    } else if stabilizes(&tri) {
        (AtomDecision::AtomPositive, tri[tri.len() - 1])
    } else {
        (AtomDecision::Inconclusive, tri[tri.len() - 1])
    };
    Ok(AtomEstimate { n_values: scales.to_vec(), cesaro_values: cesaro, ball_values: ball, triangular_values: tri, extrapolated_atom: atom, decision })
}

/// Modulated triangular average `N^{-1} ∫ f(x) cos(z x) (1 - |x|/N)₊ dx`, the
/// estimate of `f̂{z} / 2π` in one dimension.
pub fn modulated_smoother(spec: &KernelSpec, z: f64, n: f64) -> Result<f64> {
    if spec.d != 1 {
        return Err(Error::Unsupported("modulated averages are one-dimensional".into()));
    }
    if let Family::CosineF { wavenumber, offset } = spec.family {
        let tent_cos = |w: f64| if w == 0.0 { 1.0 } else { 2.0 * (1.0 - (w * n).cos()) / (w * w * n * n) };
        return Ok(offset * tent_cos(z) + 0.5 * (tent_cos(wavenumber - z) + tent_cos(wavenumber + z)));
    }
    if spec.f_radial(0.0).is_none() {
        return Err(Error::Unsupported("modulated average needs a pointwise f".into()));
    }
    let q = Quadrature { rel_tol: 1e-9, abs_tol: 1e-300, max_intervals: 8000 };
    let period = if z > 0.0 { 2.0 * PI / z } else { n };
    let pieces = ((n / period).ceil() as usize).clamp(1, 1 << 14);
    let pts: Vec<f64> = (0..=pieces).map(|i| n * i as f64 / pieces as f64).collect();
    let e = q.integrate_pieces(|x| spec.f_radial(x).unwrap() * (z * x).cos() * (1.0 - x / n), &pts);
    Ok(2.0 * e.value / n)
}

/// Ergodicity classification from the spectral atom. `sigma_constant` declares that `σ` is
/// constant, which is the only case where a positive atom implies
/// non-ergodicity.
pub fn ergodicity_predicate(spec: &KernelSpec, sigma_constant: bool) -> Result<Classification> {
    if !dalang_finite(spec) {
        return Err(Error::Precondition("Dalang integral diverges".into()));
    }
    let atom = atom_at_zero(spec, &DEFAULT_SCALES)?;
    Ok(match atom.decision {
        AtomDecision::AtomZero => Classification::Ergodic,
        AtomDecision::AtomPositive if sigma_constant => Classification::NonErgodic,
        _ => Classification::Unknown,
    })
}

/// `(v_λ * f)(r)` for radial `f`.
pub fn potential_convolution(spec: &KernelSpec, lambda: f64, r: f64) -> Result<Estimate> {
    if !(lambda > 0.0) {
        return domain("lambda must be positive");
    }
    let d = spec.d;
    match &spec.family {
        Family::WhiteNoise => return Ok(exact(potential_radial(d, lambda, r))),
        Family::Constant { level } => return Ok(exact(level / lambda)),
        Family::CosineF { wavenumber, offset } => {
            return Ok(exact(offset / lambda + 2.0 * (wavenumber * r).cos() / (2.0 * lambda + wavenumber * wavenumber)));
        }
        _ => {}
    }
    if r == 0.0 {
        return integrate_against(spec, PairKernel::Potential(lambda), false, 1e-8);
    }
    let scale = 1.0 / (2.0 * lambda).sqrt();
    let mut knots = spec.knots();
    knots.extend([scale, 4.0 * scale, 16.0 * scale]);
    let support = match spec.role() {
        Role::H => spec.support_radius().map(|s| 2.0 * s),
        Role::F => spec.support_radius(),
    };
    let q = Quadrature { rel_tol: 1e-7, abs_tol: 1e-14, max_intervals: 4000 };
    let fr = |s: f64| f_signed(spec, s);
    let v = |s: f64| potential_radial(d, lambda, s);
    Ok(radial_convolution(d, &fr, &v, &knots, support, r, q))
}

fn f_signed(spec: &KernelSpec, r: f64) -> f64 {
    match spec.role() {
        Role::F => spec.f_radial(r).unwrap_or(f64::NAN),
        Role::H => correlation_radial(spec, r, 1e-8, false).value,
    }
}

pub const DEFAULT_RADII: [f64; 6] = [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0];

/// Mixing criterion `(v_λ * f)(x) → 0`. True without computation for base
/// kernels in some `G_p` and for correlations with a spectral density.
pub fn mixing_predicate(spec: &KernelSpec, lambda: f64, radii: &[f64]) -> Result<bool> {
    if !dalang_finite(spec) {
        return Err(Error::Precondition("Dalang integral diverges".into()));
    }
    if spec.role() == Role::H && gp_any(spec)? == Some(true) {
        return Ok(true);
    }
    if spec.spectral_density(1.0).is_some() {
        return Ok(true);
    }
    if radii.len() < 2 {
        return domain("mixing test needs at least two radii");
    }
    let vals = radii.iter().map(|&r| potential_convolution(spec, lambda, r).map(|e| e.value)).collect::<Result<Vec<f64>>>()?;
    Ok(mixing_rule(radii, &vals))
}

/// Negative log-log slope and a tenfold drop from the first radius.
pub fn mixing_rule(radii: &[f64], vals: &[f64]) -> bool {
    let first = vals[0].abs();
    let last = vals[vals.len() - 1].abs();
    if last == 0.0 {
        return true;
    }
    if first == 0.0 {
        return false;
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = vals.iter().map(|v| v.abs().max(1e-300).ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    slope < 0.0 && last <= 0.1 * first
}

/// `(p_τ * f)(r)` for radial `f`.
pub fn heat_convolution(spec: &KernelSpec, tau: f64, r: f64) -> Result<f64> {
    let d = spec.d;
    match &spec.family {
        Family::WhiteNoise => return Ok(heat_radial(d, tau, r)),
        Family::Constant { level } => return Ok(*level),
        Family::CosineF { wavenumber, offset } => return Ok(offset + (-tau * wavenumber * wavenumber / 2.0).exp() * (wavenumber * r).cos()),
        Family::GaussianH { scale } => {
            let var = 2.0 * scale * scale + tau;
            return Ok(heat_radial(d, var, r));
        }
        _ => {}
    }
    if r == 0.0 {
        return Ok(integrate_against(spec, PairKernel::Heat(tau), false, 1e-9)?.value);
    }
    let s = tau.sqrt();
    let mut knots = spec.knots();
    knots.extend([s, 3.0 * s, 6.0 * s, 12.0 * s]);
    let q = Quadrature { rel_tol: 1e-8, abs_tol: 1e-15, max_intervals: 4000 };
    let fr = |x: f64| f_signed(spec, x);
    let p = |x: f64| heat_radial(d, tau, x);
    Ok(radial_convolution(d, &fr, &p, &knots, None, r, q).value)
}

/// `Cov[u(t, x), u(t, 0)] = c₀² ∫₀^t (p_{2s} * f)(x) ds` for the additive
/// equation `σ ≡ c₀`.
pub fn gaussian_covariance(spec: &KernelSpec, c0: f64, t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain("t must be positive");
    }
    if x.len() != spec.d {
        return domain("point dimension does not match the kernel");
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c2 = c0 * c0;
    match &spec.family {
        Family::Constant { level } => return Ok(c2 * level * t),
        Family::CosineF { wavenumber, offset } => {
            let w2 = wavenumber * wavenumber;
            return Ok(c2 * (offset * t + (1.0 - (-t * w2).exp()) / w2 * (wavenumber * r).cos()));
        }
        _ => {}
    }
    let q = Quadrature { rel_tol: 1e-8, abs_tol: 1e-15, max_intervals: 2000 };
    let mut err = None;
    let mut pts = vec![0.0, t];
    if r > 0.0 {
        pts.extend([r * r / 16.0, r * r / 4.0, r * r]);
    }
    pts.retain(|p| *p <= t);
    let e = q.integrate_pieces(
        |s| {
            if s == 0.0 {
                return 0.0;
            }
            match heat_convolution(spec, 2.0 * s, r) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            }
        },
        &pts,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(c2 * e.value)
}
