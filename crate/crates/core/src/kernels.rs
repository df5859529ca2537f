//! Base kernels `h`, correlations `f = h * h~`, and the integral conditions
//! attached to them.
//!
//! Every shipped family is radial, so all integrals reduce to one- or
//! two-dimensional radial quadratures. Spherical averages of the heat kernel
//! and of the resolvent density are used in closed form; the double integral
//! `∫∫ g(y) g(w) K(y - w) dy dw` then only ever needs a radial outer and inner
//! quadrature.

use std::f64::consts::{E, PI};

use puruspe::{gamma, In, Kn};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{Estimate, Quadrature};

/// Kernel families. `_f` families describe a correlation `f`, `_h` families a
/// base kernel `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `f = δ₀`, spectral density identically one.
    WhiteNoise,
    /// `f ≡ level`; the spectral measure is an atom at the origin.
    Constant { level: f64 },
    /// `f(x) = ‖x‖^{-gamma}`.
    RieszF { gamma: f64 },
    /// `f(x) = exp(-rate ‖x‖)`.
    ExpDecayF { rate: f64 },
    /// `f(x) = (1 + ‖x‖²/scale²)^{-(d+1)/2}`.
    CauchyF { scale: f64 },
    /// `f(x) = offset + cos(wavenumber x)`, one dimension only.
    CosineF { wavenumber: f64, offset: f64 },
    /// `h(w) = c ‖w‖^{-(d+alpha)/2}` inside the unit ball and
    /// `c ‖w‖^{-(d+beta)/2}` outside.
    PowerH {
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        c: f64,
    },
    /// Indicator of the ball of the given radius.
    BallH { radius: f64 },
    /// Centered Gaussian density with per-coordinate standard deviation `scale`.
    GaussianH { scale: f64 },
    /// Radial profile `h(r)` sampled at `r = i * spacing`, linearly
    /// interpolated and zero past the last sample. May be signed.
    TableH { spacing: f64, values: Vec<f64> },
    /// Radial profile of `f`, same layout as `TableH`.
    TableF { spacing: f64, values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    H,
    F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub d: usize,
    #[serde(flatten)]
    pub family: Family,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        domain(format!("{name} must be positive and finite, got {v}"))
    }
}

impl KernelSpec {
    pub fn new(d: usize, family: Family) -> Result<Self> {
        let spec = KernelSpec { d, family };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if !(1..=3).contains(&d) {
            return domain(format!("dimension must be 1, 2 or 3, got {d}"));
        }
        match &self.family {
            Family::WhiteNoise => Ok(()),
            Family::Constant { level } => {
                if level.is_finite() && *level >= 0.0 {
                    Ok(())
                } else {
                    domain(format!("constant level must be nonnegative, got {level}"))
                }
            }
            Family::RieszF { gamma } => {
                if *gamma > 0.0 && *gamma < d as f64 {
                    Ok(())
                } else {
                    domain(format!("riesz exponent must lie in (0, {d}), got {gamma}"))
                }
            }
            Family::ExpDecayF { rate } => positive("rate", *rate),
            Family::CauchyF { scale } => positive("scale", *scale),
            Family::CosineF { wavenumber, offset } => {
                if d != 1 {
                    return domain("cosine correlation is one-dimensional");
                }
                positive("wavenumber", *wavenumber)?;
                if offset.is_finite() {
                    Ok(())
                } else {
                    domain("offset must be finite")
                }
            }
            Family::PowerH { alpha, beta, c } => {
                positive("alpha", *alpha)?;
                positive("beta", *beta)?;
                positive("c", *c)
            }
            Family::BallH { radius } => positive("radius", *radius),
            Family::GaussianH { scale } => positive("scale", *scale),
            Family::TableH { spacing, values } | Family::TableF { spacing, values } => {
                positive("spacing", *spacing)?;
                if values.len() < 2 {
                    return domain("tables need at least two samples");
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return domain("table values must be finite");
                }
                Ok(())
            }
        }
    }

    pub fn role(&self) -> Role {
        match self.family {
            Family::PowerH { .. } | Family::BallH { .. } | Family::GaussianH { .. } | Family::TableH { .. } => Role::H,
            _ => Role::F,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::WhiteNoise => "white_noise",
            Family::Constant { .. } => "constant",
            Family::RieszF { .. } => "riesz_f",
            Family::ExpDecayF { .. } => "exp_decay_f",
            Family::CauchyF { .. } => "cauchy_f",
            Family::CosineF { .. } => "cosine_f",
            Family::PowerH { .. } => "power_h",
            Family::BallH { .. } => "ball_h",
            Family::GaussianH { .. } => "gaussian_h",
            Family::TableH { .. } => "table_h",
            Family::TableF { .. } => "table_f",
        }
    }

    fn require_role(&self, role: Role, op: &str) -> Result<()> {
        if self.role() == role {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{op} needs a {:?} kernel, got {}", role, self.family_name())))
        }
    }

    /// Radial profile of a base kernel, signed.
    pub fn h_radial(&self, r: f64) -> Result<f64> {
        self.require_role(Role::H, "h_radial")?;
        Ok(self.h_unchecked(r))
    }

    fn h_unchecked(&self, r: f64) -> f64 {
        let d = self.d as f64;
        match &self.family {
            Family::PowerH { alpha, beta, c } => {
                if r < 1.0 {
                    c * r.powf(-(d + alpha) / 2.0)
                } else {
                    c * r.powf(-(d + beta) / 2.0)
                }
            }
            Family::BallH { radius } => {
                if r <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            Family::GaussianH { scale } => {
                (2.0 * PI * scale * scale).powf(-d / 2.0) * (-r * r / (2.0 * scale * scale)).exp()
            }
            Family::TableH { spacing, values } => table_interp(*spacing, values, r),
            _ => f64::NAN,
        }
    }

    /// Pointwise radial value of a correlation given as a function. `None`
    /// for point-mass correlations.
    pub fn f_radial(&self, r: f64) -> Option<f64> {
        let d = self.d as f64;
        match &self.family {
            Family::WhiteNoise => None,
            Family::Constant { level } => Some(*level),
            Family::RieszF { gamma } => Some(r.powf(-gamma)),
            Family::ExpDecayF { rate } => Some((-rate * r).exp()),
            Family::CauchyF { scale } => Some((1.0 + r * r / (scale * scale)).powf(-(d + 1.0) / 2.0)),
            Family::CosineF { wavenumber, offset } => Some(offset + (wavenumber * r).cos()),
            Family::TableF { spacing, values } => Some(table_interp(*spacing, values, r)),
            _ => None,
        }
    }

    /// Radii where the radial profile is not smooth.
    pub fn knots(&self) -> Vec<f64> {
        match &self.family {
            Family::PowerH { .. } => vec![1.0],
            Family::BallH { radius } => vec![*radius],
            Family::GaussianH { scale } => vec![*scale, 4.0 * scale],
            Family::ExpDecayF { rate } => vec![1.0 / rate, 8.0 / rate],
            Family::CauchyF { scale } => vec![*scale],
            Family::TableH { spacing, values } | Family::TableF { spacing, values } => {
                let m = values.len();
                let step = (m / 64).max(1);
                let mut k: Vec<f64> = (1..m).step_by(step).map(|i| i as f64 * spacing).collect();
                k.push((m - 1) as f64 * spacing);
                k
            }
            _ => Vec::new(),
        }
    }

    pub(crate) fn support_radius(&self) -> Option<f64> {
        match &self.family {
            Family::BallH { radius } => Some(*radius),
            Family::TableH { spacing, values } | Family::TableF { spacing, values } => {
                Some((values.len() - 1) as f64 * spacing)
            }
            _ => None,
        }
    }

    /// Spectral density of `f` (or of `|ĥ|²` for base kernels) at `|z|`, when
    /// known in closed form and absolutely continuous. Conventions follow
    /// `ψ̂(z) = ∫ e^{i z·y} ψ(y) dy`.
    pub fn spectral_density(&self, z: f64) -> Option<f64> {
        let d = self.d as f64;
        match &self.family {
            Family::WhiteNoise => Some(1.0),
            Family::ExpDecayF { rate } => {
                let c = 2f64.powf(d) * PI.powf((d - 1.0) / 2.0) * gamma((d + 1.0) / 2.0);
                Some(c * rate / (rate * rate + z * z).powf((d + 1.0) / 2.0))
            }
            Family::CauchyF { scale } => {
                Some(scale.powf(d) * PI.powf((d + 1.0) / 2.0) / gamma((d + 1.0) / 2.0) * (-scale * z).exp())
            }
            Family::RieszF { gamma: g } => Some(riesz_constant(self.d, *g) * z.powf(g - d)),
            Family::GaussianH { scale } => Some((-scale * scale * z * z).exp()),
            _ => None,
        }
    }

    /// Mass of a spectral atom at the origin, `f̂{0}`, for families whose
    /// spectral measure has one.
    pub fn spectral_atom(&self) -> f64 {
        let vol = (2.0 * PI).powi(self.d as i32);
        match &self.family {
            Family::Constant { level } => level * vol,
            Family::CosineF { offset, .. } => offset * vol,
            _ => 0.0,
        }
    }
}

fn table_interp(spacing: f64, values: &[f64], r: f64) -> f64 {
    let s = r / spacing;
    let i = s.floor();
    if !(i >= 0.0) {
        return values[0];
    }
    let i = i as usize;
    if i + 1 >= values.len() {
        return if i + 1 == values.len() && s == i as f64 { values[i] } else { 0.0 };
    }
    let w = s - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Riesz kernel constant: `(‖·‖^{-γ})^ = riesz_constant · ‖z‖^{γ-d}`.
pub fn riesz_constant(d: usize, g: f64) -> f64 {
    let d = d as f64;
    PI.powf(d / 2.0) * 2f64.powf(d - g) * gamma((d - g) / 2.0) / gamma(g / 2.0)
}

/// Surface area of the unit sphere in `R^d` (counting measure for `d = 1`).
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0),
    }
}

pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// `ω_d(r)`: `1` for `d = 1`, `r log(max(1/r, e))` for `d = 2`, `r` otherwise.
pub fn omega_d(d: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) || d == 0 {
        return domain(format!("omega_d needs d >= 1 and r > 0, got d={d}, r={r}"));
    }
    Ok(match d {
        1 => 1.0,
        2 => r * (1.0 / r).max(E).ln(),
        _ => r,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Heat kernel `p_t(x) = (2πt)^{-d/2} exp(-‖x‖²/(2t))`.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    Ok(heat_radial(x.len(), t, norm(x)))
}

pub(crate) fn heat_radial(d: usize, t: f64, r: f64) -> f64 {
    (2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * t)).exp()
}

/// `λ`-potential density `v_λ(x) = ∫₀^∞ e^{-λt} p_t(x) dt`. Closed form in
/// one dimension, adaptive quadrature in `log t` otherwise. Returns `+∞` at
/// the origin when `d ≥ 2`.
pub fn potential_kernel(lambda: f64, x: &[f64]) -> Result<f64> {
    if !(lambda > 0.0) {
        return domain(format!("potential kernel needs lambda > 0, got {lambda}"));
    }
    let d = x.len();
    if d == 0 {
        return domain("empty point");
    }
    let r = norm(x);
    if d == 1 {
        return Ok(potential_radial(1, lambda, r));
    }
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    let df = d as f64;
    let integrand = |s: f64| {
        let t = s.exp();
        let log = s - lambda * t - r * r / (2.0 * t) - df / 2.0 * (2.0 * PI * t).ln();
        log.exp()
    };
    let peak = (r / (2.0 * lambda).sqrt()).ln();
    let lo = (r * r / 1500.0).ln().min(peak - 10.0);
    let hi = (750.0 / lambda).ln().max(peak + 10.0);
    let q = Quadrature { rel_tol: 1e-10, ..Quadrature::default() };
    Ok(q.integrate_pieces(integrand, &[lo, peak - 2.0, peak, peak + 2.0, hi]).value)
}

/// Closed-form `v_λ(r)` used inside nested integrals.
pub(crate) fn potential_radial(d: usize, lambda: f64, r: f64) -> f64 {
    let k = (2.0 * lambda).sqrt();
    match d {
        1 => (-k * r).exp() / k,
        2 => {
            if r == 0.0 {
                f64::INFINITY
            } else {
                k0e(k * r) * (-k * r).exp() / PI
            }
        }
        _ => {
            if r == 0.0 {
                f64::INFINITY
            } else {
                (-k * r).exp() / (2.0 * PI * r)
            }
        }
    }
}

/// `e^{-x} I₀(x)`.
pub(crate) fn i0e(x: f64) -> f64 {
    if x < 700.0 {
        In(0, x) * (-x).exp()
    } else {
        let y = 1.0 / (8.0 * x);
        (1.0 + y + 4.5 * y * y + 37.5 * y * y * y) / (2.0 * PI * x).sqrt()
    }
}

/// `e^{x} K₀(x)`.
pub(crate) fn k0e(x: f64) -> f64 {
    if x < 700.0 {
        Kn(0, x) * x.exp()
    } else {
        let y = 1.0 / (8.0 * x);
        (1.0 - y + 4.5 * y * y - 37.5 * y * y * y) * (PI / (2.0 * x)).sqrt()
    }
}

/// Kernels whose spherical averages are known in closed form.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PairKernel {
    Potential(f64),
    Heat(f64),
    Ball(f64),
    /// `∏ (1 - |x_j|/N)₊`, one dimension only.
    Tent(f64),
    /// Indicator of `[-N, N]`, one dimension only.
    Interval(f64),
}

impl PairKernel {
    fn radial(self, d: usize, r: f64) -> f64 {
        match self {
            PairKernel::Potential(l) => potential_radial(d, l, r),
            PairKernel::Heat(t) => heat_radial(d, t, r),
            PairKernel::Ball(rad) => (r < rad) as u8 as f64,
            PairKernel::Tent(n) => (1.0 - r / n).max(0.0),
            PairKernel::Interval(n) => (r <= n) as u8 as f64,
        }
    }

    /// Average of `K(|ρe - σθ|)` over the unit sphere in `θ`.
    fn sphere_avg(self, d: usize, rho: f64, sigma: f64) -> f64 {
        let (lo, hi) = if rho < sigma { (rho, sigma) } else { (sigma, rho) };
        if d == 1 || lo == 0.0 {
            return if lo == 0.0 {
                self.radial(d, hi)
            } else {
                0.5 * (self.radial(d, hi - lo) + self.radial(d, hi + lo))
            };
        }
        match (self, d) {
            (PairKernel::Potential(l), 2) => {
                let k = (2.0 * l).sqrt();
                i0e(k * lo) * k0e(k * hi) * (-k * (hi - lo)).exp() / PI
            }
            (PairKernel::Potential(l), _) => {
                let k = (2.0 * l).sqrt();
                let a = (-k * (hi - lo)).exp() - (-k * (hi + lo)).exp();
                a / (4.0 * PI * k * lo * hi)
            }
            (PairKernel::Heat(t), 2) => {
                (2.0 * PI * t).recip() * (-(hi - lo) * (hi - lo) / (2.0 * t)).exp() * i0e(lo * hi / t)
            }
            (PairKernel::Heat(t), _) => {
                let a = (-(hi - lo) * (hi - lo) / (2.0 * t)).exp() - (-(hi + lo) * (hi + lo) / (2.0 * t)).exp();
                (2.0 * PI * t).powf(-1.5) * a * t / (2.0 * lo * hi)
            }
            (PairKernel::Ball(rad), _) => {
                let c = ((lo * lo + hi * hi - rad * rad) / (2.0 * lo * hi)).clamp(-1.0, 1.0);
                if d == 2 {
                    c.acos() / PI
                } else {
                    (1.0 - c) / 2.0
                }
            }
            _ => f64::NAN,
        }
    }

    fn scale(self) -> f64 {
        match self {
            PairKernel::Potential(l) => 1.0 / (2.0 * l).sqrt(),
            PairKernel::Heat(t) => t.sqrt(),
            PairKernel::Ball(r) => r,
            PairKernel::Tent(n) | PairKernel::Interval(n) => n,
        }
    }
}

pub(crate) fn clean_points(mut pts: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    pts.retain(|p| p.is_finite() && *p >= lo && *p <= hi);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(1.0));
    pts
}

/// `∫∫ g(‖y‖) g(‖w‖) K(y - w) dy dw` for a radial profile `g`.
pub(crate) fn pair_integral(d: usize, g: &dyn Fn(f64) -> f64, knots: &[f64], support: Option<f64>, kernel: PairKernel, rel_tol: f64) -> Estimate {
    let s_d = sphere_area(d);
    let inner_q = Quadrature { rel_tol: rel_tol * 1e-2, abs_tol: 1e-300, max_intervals: 2000 };
    let outer_q = Quadrature { rel_tol, abs_tol: 1e-300, max_intervals: 4000 };
    let ks = kernel.scale();
    let dm = (d - 1) as i32;
    let outer = |sigma: f64| {
        let gs = g(sigma);
        if gs == 0.0 || sigma == 0.0 {
            return 0.0;
        }
        let mut pts: Vec<f64> = knots.to_vec();
        pts.extend([sigma - ks, sigma - 0.1 * ks, sigma - 4.0 * ks, sigma - 0.01 * ks]);
        if let PairKernel::Ball(r) | PairKernel::Tent(r) | PairKernel::Interval(r) = kernel {
            pts.extend([sigma - r, r - sigma]);
        }
        let pts = clean_points(pts, 0.0, sigma);
        let e = inner_q.integrate_pieces(|rho| rho.powi(dm) * g(rho) * kernel.sphere_avg(d, rho, sigma), &pts);
        sigma.powi(dm) * gs * e.value
    };
    let mut pts: Vec<f64> = knots.to_vec();
    pts.extend([ks, 4.0 * ks]);
    let top = support.unwrap_or(f64::INFINITY);
    let est = if top.is_finite() {
        let pts = clean_points(pts, 0.0, top);
        outer_q.integrate_pieces(outer, &pts)
    } else {
        let hi = pts.iter().cloned().fold(0.0, f64::max).max(1.0);
        let pts = clean_points(pts, 0.0, hi);
        outer_q.integrate_pieces_to_infinity(outer, &pts)
    };
    Estimate { value: 2.0 * s_d * s_d * est.value, abs_error: 2.0 * s_d * s_d * est.abs_error, ..est }
}

/// Radial convolution `(g * k)(r)` for radial profiles `g` and `k`.
pub(crate) fn radial_convolution(d: usize, g: &dyn Fn(f64) -> f64, k: &dyn Fn(f64) -> f64, knots: &[f64], support: Option<f64>, r: f64, q: Quadrature) -> Estimate {
    let s_d = sphere_area(d);
    let inner = Quadrature { rel_tol: q.rel_tol * 1e-2, ..q };
    let avg = |rho: f64| -> f64 {
        let (lo, hi) = if rho < r { (rho, r) } else { (r, rho) };
        if lo == 0.0 {
            return k(hi);
        }
        match d {
            1 => 0.5 * (k(hi - lo) + k(hi + lo)),
            2 => {
                let mut pts = vec![0.0, PI];
                for &kn in knots {
                    let c = (rho * rho + r * r - kn * kn) / (2.0 * rho * r);
                    if c.abs() < 1.0 {
                        pts.push(c.acos());
                    }
                }
                let e = inner.integrate_pieces(|phi| k((rho * rho + r * r - 2.0 * rho * r * phi.cos()).max(0.0).sqrt()), &pts);
                e.value / PI
            }
            _ => {
                let a = hi - lo;
                let b = hi + lo;
                let mut pts = vec![a, b];
                pts.extend(knots.iter().cloned().filter(|kn| *kn > a && *kn < b));
                let e = inner.integrate_pieces(|s| s * k(s), &pts);
                e.value / (2.0 * rho * r)
            }
        }
    };
    let dm = (d - 1) as i32;
    let integrand = |rho: f64| {
        let gv = g(rho);
        if gv == 0.0 {
            return 0.0;
        }
        let v = rho.powi(dm) * gv * avg(rho);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut pts: Vec<f64> = vec![0.0, r];
    for &kn in knots {
        pts.extend([kn, (r - kn).abs(), r + kn]);
    }
    let top = support.map(|s| s + 0.0).unwrap_or(f64::INFINITY);
    let est = if top.is_finite() {
        q.integrate_pieces(integrand, &clean_points(pts, 0.0, top))
    } else {
        let hi = pts.iter().cloned().fold(1.0, f64::max);
        q.integrate_pieces_to_infinity(integrand, &clean_points(pts, 0.0, hi))
    };
    Estimate { value: s_d * est.value, abs_error: s_d * est.abs_error, ..est }
}

/// `f = h * h~` at the point `x` for a base kernel. Closed forms for the ball
/// and Gaussian families; radial quadrature otherwise.
pub fn f_from_h(spec: &KernelSpec, x: &[f64], tol: f64) -> Result<Estimate> {
    spec.require_role(Role::H, "f_from_h")?;
    if x.len() != spec.d {
        return domain("point dimension does not match the kernel");
    }
    let r = norm(x);
    Ok(correlation_radial(spec, r, tol, false))
}

/// `(|h| * |h~|)(x)`.
pub fn fbar_from_h(spec: &KernelSpec, x: &[f64], tol: f64) -> Result<Estimate> {
    spec.require_role(Role::H, "fbar_from_h")?;
    Ok(correlation_radial(spec, norm(x), tol, true))
}

pub(crate) fn exact(value: f64) -> Estimate {
    Estimate { value, abs_error: 0.0, evaluations: 1, converged: true }
}

pub(crate) fn correlation_radial(spec: &KernelSpec, r: f64, tol: f64, absolute: bool) -> Estimate {
    let d = spec.d;
    match &spec.family {
        Family::GaussianH { scale } => {
            return exact((4.0 * PI * scale * scale).powf(-(d as f64) / 2.0) * (-r * r / (4.0 * scale * scale)).exp());
        }
        Family::BallH { radius } => {
            let a = *radius;
            let v = if r >= 2.0 * a {
                0.0
            } else {
                match d {
                    1 => 2.0 * a - r,
                    2 => 2.0 * a * a * (r / (2.0 * a)).acos() - 0.5 * r * (4.0 * a * a - r * r).sqrt(),
                    _ => PI / 12.0 * (4.0 * a + r) * (2.0 * a - r).powi(2),
                }
            };
            return exact(v);
        }
        _ => {}
    }
    if let (Family::PowerH { alpha, .. }, 0.0) = (&spec.family, r) {
        if *alpha > 0.0 {
            return Estimate { value: f64::INFINITY, abs_error: 0.0, evaluations: 0, converged: true };
        }
    }
    let g = |s: f64| {
        let v = spec.h_unchecked(s);
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let q = Quadrature { rel_tol: tol, abs_tol: 1e-14, max_intervals: 4000 };
    radial_convolution(d, &g, &g, &spec.knots(), spec.support_radius(), r, q)
}

fn power_integral(m: f64, a: f64, b: f64) -> f64 {
    // ∫_a^b ρ^m dρ
    if b.is_infinite() {
        return if m < -1.0 { -a.powf(m + 1.0) / (m + 1.0) } else { f64::INFINITY };
    }
    if a == 0.0 && m <= -1.0 {
        return f64::INFINITY;
    }
    if (m + 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(m + 1.0) - a.powf(m + 1.0)) / (m + 1.0)
    }
}

/// `‖h‖_{L^p(B_r)}` when `inside`, `‖h‖_{L^p(B_r^c)}` otherwise.
pub fn ball_norm(spec: &KernelSpec, p: f64, r: f64, inside: bool) -> Result<f64> {
    spec.require_role(Role::H, "ball_norm")?;
    let d = spec.d as f64;
    let s_d = sphere_area(spec.d);
    let (lo, hi) = if inside { (0.0, r) } else { (r, f64::INFINITY) };
    let pth = match &spec.family {
        Family::PowerH { alpha, beta, c } => {
            let a = (d + alpha) / 2.0;
            let b = (d + beta) / 2.0;
            let mut acc = 0.0;
            if lo < 1.0 {
                acc += power_integral(d - 1.0 - p * a, lo, hi.min(1.0));
            }
            if hi > 1.0 {
                acc += power_integral(d - 1.0 - p * b, lo.max(1.0), hi);
            }
            s_d * c.powf(p) * acc
        }
        _ => {
            let q = Quadrature { rel_tol: 1e-10, abs_tol: 1e-300, max_intervals: 4000 };
            let dm = spec.d as i32 - 1;
            let f = |s: f64| s.powi(dm) * spec.h_unchecked(s).abs().powf(p);
            let top = spec.support_radius().unwrap_or(f64::INFINITY);
            let hi = hi.min(top);
            if hi <= lo {
                0.0
            } else {
                let pts = spec.knots();
                let end = if hi.is_finite() { hi } else { pts.iter().cloned().fold(lo, f64::max) };
                let pts = clean_points(pts, lo, end);
                let e = if hi.is_finite() { q.integrate_pieces(f, &pts) } else { q.integrate_pieces_to_infinity(f, &pts) };
                s_d * e.value
            }
        }
    };
    Ok(pth.powf(1.0 / p))
}

/// `‖h‖_{L^p(B_r)} ‖h‖_{L^q(B_r^c)} + ‖h‖²_{L²(B_r^c)}` with `q = p/(p-1)`.
pub fn bracket(spec: &KernelSpec, p: f64, r: f64) -> Result<f64> {
    if !(p > 1.0) {
        return domain(format!("p must exceed 1, got {p}"));
    }
    let q = p / (p - 1.0);
    let a = ball_norm(spec, p, r, true)?;
    let b = ball_norm(spec, q, r, false)?;
    let c = ball_norm(spec, 2.0, r, false)?;
    Ok(a * b + c * c)
}

/// Behavior of the bracket as `r → 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SmallRadius {
    /// Some norm in the bracket is infinite for every `r`.
    Infinite,
    /// Bracket grows like `r^e` (`e = 0` for bounded brackets).
    Power(f64),
    /// Exponent cannot be inferred from the specification.
    Unresolved,
}

pub fn bracket_exponent(spec: &KernelSpec, p: f64) -> Result<SmallRadius> {
    spec.require_role(Role::H, "bracket_exponent")?;
    if !(p > 1.0) {
        return domain(format!("p must exceed 1, got {p}"));
    }
    let d = spec.d as f64;
    let q = p / (p - 1.0);
    Ok(match &spec.family {
        Family::PowerH { alpha, beta, .. } => {
            let a = (d + alpha) / 2.0;
            let b = (d + beta) / 2.0;
            if p * a >= d || q * b <= d {
                SmallRadius::Infinite
            } else {
                let e1 = d / p - a + (d / q - a).min(0.0);
                SmallRadius::Power(e1.min(d - 2.0 * a))
            }
        }
        Family::BallH { .. } | Family::GaussianH { .. } => SmallRadius::Power(0.0),
        _ => SmallRadius::Unresolved,
    })
}

fn class_check(spec: &KernelSpec, p: f64, threshold: f64) -> Result<Option<bool>> {
    Ok(match bracket_exponent(spec, p)? {
        SmallRadius::Infinite => Some(false),
        SmallRadius::Power(e) => Some(e > threshold),
        SmallRadius::Unresolved => None,
    })
}

/// Whether `h` belongs to the class defined by the `ω_d` weighted bracket
/// integral. `None` when the small-radius behavior cannot be resolved
/// (tabulated kernels).
pub fn check_gp(spec: &KernelSpec, p: f64) -> Result<Option<bool>> {
    let thr = if spec.d == 1 { -1.0 } else { -2.0 };
    class_check(spec, p, thr)
}

/// Same as [`check_gp`] with weight `s^{d-1}`.
pub fn check_fp(spec: &KernelSpec, p: f64) -> Result<Option<bool>> {
    class_check(spec, p, -(spec.d as f64))
}

/// Exponents scanned when asking whether some `p > 1` works.
pub const P_SCAN: [f64; 12] = [1.001, 1.01, 1.02, 1.05, 1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0];

fn scan(spec: &KernelSpec, check: fn(&KernelSpec, f64) -> Result<Option<bool>>) -> Result<Option<bool>> {
    let mut unknown = false;
    for &p in P_SCAN.iter() {
        match check(spec, p)? {
            Some(true) => return Ok(Some(true)),
            None => unknown = true,
            Some(false) => {}
        }
    }
    Ok(if unknown { None } else { Some(false) })
}

pub fn gp_any(spec: &KernelSpec) -> Result<Option<bool>> {
    scan(spec, check_gp)
}

pub fn fp_any(spec: &KernelSpec) -> Result<Option<bool>> {
    scan(spec, check_fp)
}

/// `∫_ε^1 bracket(r) w(r) dr` by quadrature, with `w = ω_d` or `s^{d-1}`.
pub fn class_partial_integral(spec: &KernelSpec, p: f64, eps: f64, omega_weight: bool) -> Result<f64> {
    let d = spec.d;
    let q = Quadrature { rel_tol: 1e-8, ..Quadrature::default() };
    let mut err = None;
    let e = q.integrate(
        |r| {
            let w = if omega_weight { omega_d(d, r).unwrap_or(f64::NAN) } else { r.powi(d as i32 - 1) };
            match bracket(spec, p, r) {
                Ok(b) => b * w,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            }
        },
        eps,
        1.0,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(e.value)
}

/// Both forms of the Dalang integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dalang {
    pub finite: bool,
    /// `∫ f̂(dz) / (λ + ‖z‖²)`.
    pub spectral: Option<f64>,
    /// `∫ v_λ(x) f(x) dx`.
    pub potential: Option<f64>,
}

/// `potential(λ) = normalization · spectral(2λ)`.
pub fn dalang_normalization(d: usize) -> f64 {
    2.0 * (2.0 * PI).powi(-(d as i32))
}

/// Finiteness of the Dalang integral decided from exponents alone.
pub fn dalang_finite(spec: &KernelSpec) -> bool {
    let d = spec.d as f64;
    match &spec.family {
        Family::WhiteNoise => spec.d == 1,
        Family::RieszF { gamma } => *gamma < 2.0,
        Family::PowerH { alpha, .. } => *alpha < d.min(2.0),
        _ => true,
    }
}

pub fn dalang_integral(spec: &KernelSpec, lambda: f64) -> Result<Dalang> {
    if !(lambda > 0.0) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    if !dalang_finite(spec) {
        let spectral = spec.spectral_density(1.0).map(|_| f64::INFINITY);
        return Ok(Dalang { finite: false, spectral, potential: Some(f64::INFINITY) });
    }
    Ok(Dalang { finite: true, spectral: spectral_dalang(spec, lambda), potential: Some(potential_dalang(spec, lambda, false)?.value) })
}

fn spectral_dalang(spec: &KernelSpec, lambda: f64) -> Option<f64> {
    let d = spec.d;
    match &spec.family {
        Family::Constant { .. } | Family::CosineF { .. } => {
            let mut v = spec.spectral_atom() / lambda;
            if let Family::CosineF { wavenumber, .. } = spec.family {
                v += 2.0 * PI / (lambda + wavenumber * wavenumber);
            }
            Some(v)
        }
        Family::WhiteNoise => Some(PI / lambda.sqrt()),
        _ => {
            spec.spectral_density(1.0)?;
            let q = Quadrature { rel_tol: 1e-9, abs_tol: 1e-300, max_intervals: 4000 };
            let dm = d as i32 - 1;
            let mut pts = vec![0.0, lambda.sqrt()];
            pts.extend(spec.knots().iter().map(|k| 1.0 / k));
            let hi = pts.iter().cloned().fold(0.0, f64::max);
            let e = q.integrate_pieces_to_infinity(|z| z.powi(dm) * spec.spectral_density(z).unwrap() / (lambda + z * z), &clean_points(pts, 0.0, hi));
            Some(sphere_area(d) * e.value)
        }
    }
}

/// `∫ v_λ(x) f(x) dx`, or with `f̄ = |h| * |h~|` when `absolute` is set for a
/// base kernel.
pub(crate) fn potential_dalang(spec: &KernelSpec, lambda: f64, absolute: bool) -> Result<Estimate> {
    integrate_against(spec, PairKernel::Potential(lambda), absolute, 1e-7)
}

/// `∫ K(x) f(x) dx` for a radial kernel with closed-form spherical averages.
pub(crate) fn integrate_against(spec: &KernelSpec, kernel: PairKernel, absolute: bool, rel_tol: f64) -> Result<Estimate> {
    let d = spec.d;
    match &spec.family {
        Family::WhiteNoise => return Ok(exact(kernel.radial(d, 0.0))),
        Family::Constant { level } => {
            let mass = match kernel {
                PairKernel::Potential(l) => 1.0 / l,
                PairKernel::Heat(_) => 1.0,
                PairKernel::Ball(r) => ball_volume(d) * r.powi(d as i32),
                PairKernel::Tent(n) | PairKernel::Interval(n) if d == 1 => {
                    if matches!(kernel, PairKernel::Tent(_)) {
                        n
                    } else {
                        2.0 * n
                    }
                }
                _ => return Err(Error::Unsupported("product kernels beyond one dimension".into())),
            };
            return Ok(exact(level * mass));
        }
        _ => {}
    }
    if let (PairKernel::Tent(_) | PairKernel::Interval(_), true) = (kernel, d > 1) {
        return Err(Error::Unsupported("product kernels beyond one dimension".into()));
    }
    match spec.role() {
        Role::H => {
            let g = |s: f64| {
                let v = spec.h_unchecked(s);
                if absolute {
                    v.abs()
                } else {
                    v
                }
            };
            Ok(pair_integral(d, &g, &spec.knots(), spec.support_radius(), kernel, rel_tol))
        }
        Role::F => {
            let f = |r: f64| spec.f_radial(r).unwrap();
            let q = Quadrature { rel_tol, abs_tol: 1e-300, max_intervals: 4000 };
            let dm = d as i32 - 1;
            let mut pts = spec.knots();
            pts.extend([0.0, kernel.scale(), 4.0 * kernel.scale()]);
            let integrand = |r: f64| {
                if r == 0.0 {
                    return 0.0;
                }
                r.powi(dm) * kernel.radial(d, r) * f(r)
            };
            let bounded = match kernel {
                PairKernel::Ball(r) | PairKernel::Tent(r) | PairKernel::Interval(r) => Some(r),
                _ => None,
            };
            let top = match (bounded, spec.support_radius()) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            let e = if let Family::CosineF { wavenumber, .. } = spec.family {
                let top = top.unwrap_or(f64::INFINITY);
                if top.is_infinite() {
                    // exact for the cosine part against the potential and heat kernels
                    let offset_part = spec.f_radial(f64::INFINITY).map(|_| 0.0).unwrap_or(0.0);
                    let _ = offset_part;
                    let v = match kernel {
                        PairKernel::Potential(l) => {
                            let Family::CosineF { offset, .. } = spec.family else { unreachable!() };
                            offset / l + 2.0 / (2.0 * l + wavenumber * wavenumber)
                        }
                        PairKernel::Heat(t) => {
                            let Family::CosineF { offset, .. } = spec.family else { unreachable!() };
                            offset + (-t * wavenumber * wavenumber / 2.0).exp()
                        }
                        _ => f64::NAN,
                    };
                    exact(v / sphere_area(d))
                } else {
                    let period = 2.0 * PI / wavenumber;
                    let pieces = ((top / period).ceil() as usize).clamp(1, 4096);
                    pts.extend((0..=pieces).map(|i| top * i as f64 / pieces as f64));
                    q.integrate_pieces(integrand, &clean_points(pts, 0.0, top))
                }
            } else if let Some(top) = top {
                q.integrate_pieces(integrand, &clean_points(pts, 0.0, top))
            } else {
                let hi = pts.iter().cloned().fold(1.0, f64::max);
                q.integrate_pieces_to_infinity(integrand, &clean_points(pts, 0.0, hi))
            };
            let s_d = sphere_area(d);
            Ok(Estimate { value: s_d * e.value, abs_error: s_d * e.abs_error, ..e })
        }
    }
}

/// `‖h‖_{H₋₁}` for `|h|`, computed through
/// `∫|ĥ|²/(1+‖z‖²) = ((2π)^d / 2) ∫ v_{1/2} (|h| * |h~|)`. Finiteness is
/// decided by the same exponent analysis as the Dalang integral.
pub fn h_minus1_norm(spec: &KernelSpec) -> Result<f64> {
    spec.require_role(Role::H, "h_minus1_norm")?;
    if !dalang_finite(spec) {
        return Ok(f64::INFINITY);
    }
    let v = potential_dalang(spec, 0.5, true)?.value;
    Ok(((2.0 * PI).powi(spec.d as i32) / 2.0 * v).sqrt())
}

/// `λ ↦ ∫ v_λ f̄`, where `f̄ = |h| * |h~|` for base kernels and `f̄ = f` for
/// nonnegative correlations.
pub fn fbar_potential(spec: &KernelSpec, lambda: f64) -> Result<f64> {
    Ok(potential_dalang(spec, lambda, true)?.value)
}

fn require_fbar(spec: &KernelSpec) -> Result<()> {
    match spec.role() {
        Role::H => match gp_any(spec)? {
            Some(true) => Ok(()),
            Some(false) => Err(Error::Precondition("base kernel is not in any G_p class".into())),
            None => Err(Error::Precondition("G_p membership of a tabulated kernel cannot be decided".into())),
        },
        Role::F => {
            if !dalang_finite(spec) {
                return Err(Error::Precondition("Dalang integral diverges".into()));
            }
            let nonneg = match &spec.family {
                Family::CosineF { offset, .. } => *offset >= 1.0,
                Family::TableF { values, .. } => values.iter().all(|v| *v >= 0.0),
                _ => true,
            };
            if nonneg {
                Ok(())
            } else {
                Err(Error::Precondition("correlation takes negative values".into()))
            }
        }
    }
}

/// `Λ(δ) = inf{λ > 0 : ∫ v_λ f̄ < δ}` by bisection in `log λ`, starting from
/// the bracket `[1e-6, 1e6]` and widening the upper end to `1e12` when
/// needed. Returns `0` when the integral is already below `δ` at `1e-6`, and
/// `+∞` when it never drops below `δ`.
pub fn lambda_threshold(spec: &KernelSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return domain(format!("delta must be positive, got {delta}"));
    }
    require_fbar(spec)?;
    let i = |l: f64| fbar_potential(spec, l);
    let mut lo = 1e-6f64;
    let mut hi = 1e6f64;
    if i(lo)? < delta {
        return Ok(0.0);
    }
    while i(hi)? >= delta {
        if hi >= 1e12 {
            return Ok(f64::INFINITY);
        }
        lo = hi;
        hi *= 1e3;
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if i(mid)? < delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Burkholder–Davis–Gundy constant bound: `z₂ = 1`, `z_k = 2√k` otherwise.
pub fn z_k(k: f64) -> f64 {
    if k <= 2.0 {
        1.0
    } else {
        2.0 * k.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentBound {
    pub beta: f64,
    pub z_k: f64,
    /// Bound on `sup_n N_{β,k}(u_n)`.
    pub uniform: f64,
}

impl MomentBound {
    /// Bound on `‖u(t, x)‖_k` at time `t`.
    pub fn at_time(&self, t: f64) -> f64 {
        (self.beta * t).exp() * self.uniform
    }
}

/// `[‖u₀‖ + |σ(0)|/Lip] · [1/ε + (1-ε)^{n+1} ‖u₀‖]`, the bound on the
/// `(n+1)`-st Picard iterate.
pub fn iterate_bound(sigma_lip: f64, sigma0: f64, u0_sup: f64, eps: f64, n: u32) -> f64 {
    (u0_sup + sigma0.abs() / sigma_lip) * (1.0 / eps + (1.0 - eps).powi(n as i32 + 1) * u0_sup)
}

pub fn moment_bound(spec: &KernelSpec, sigma_lip: f64, sigma0: f64, u0_sup: f64, k: f64, eps: f64) -> Result<MomentBound> {
    if !(sigma_lip > 0.0) {
        return domain("Lipschitz constant must be positive");
    }
    if !(k >= 2.0) {
        return domain("moment order must be at least 2");
    }
    if !(eps > 0.0 && eps < 1.0) {
        return domain("eps must lie in (0, 1)");
    }
    let z = z_k(k);
    let delta = 2.0 * (1.0 - eps).powi(2) / (z * sigma_lip).powi(2);
    let beta = lambda_threshold(spec, delta)?;
    let uniform = iterate_bound(sigma_lip, sigma0, u0_sup, eps, 0).max(u0_sup);
    Ok(MomentBound { beta, z_k: z, uniform })
}

/// `κ(t) = (p_{2t} * f̄)(0)`.
pub fn kappa(spec: &KernelSpec, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain("kappa needs t > 0");
    }
    Ok(integrate_against(spec, PairKernel::Heat(2.0 * t), true, 1e-8)?.value)
}

/// The iterates `h_n` on a uniform time grid, built by product integration
/// against the cumulative integral of `κ`.
#[derive(Debug, Clone)]
pub struct Iterates {
    pub times: Vec<f64>,
    /// `levels[n][i] = h_n(times[i])`.
    pub levels: Vec<Vec<f64>>,
}

impl Iterates {
    pub fn new(spec: &KernelSpec, t_max: f64, steps: usize, n_max: usize) -> Result<Self> {
        if !(t_max > 0.0) || steps < 2 {
            return domain("need t_max > 0 and at least two steps");
        }
        let dt = t_max / steps as f64;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        // cumulative K(τ) = ∫₀^τ κ
        let q = Quadrature { rel_tol: 1e-9, ..Quadrature::default() };
        let mut cum = vec![0.0; steps + 1];
        let mut err = None;
        for i in 1..=steps {
            let e = q.integrate(
                |s| match kappa(spec, s) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                },
                times[i - 1],
                times[i],
            );
            cum[i] = cum[i - 1] + e.value;
        }
        if let Some(e) = err {
            return Err(e);
        }
        let mut levels = vec![vec![1.0; steps + 1]];
        for _ in 0..n_max {
            let prev = levels.last().unwrap();
            let mut next = vec![0.0; steps + 1];
            for i in 1..=steps {
                let mut acc = 0.0;
                for j in 0..i {
                    let w = cum[i - j] - cum[i - j - 1];
                    acc += 0.5 * (prev[j] + prev[j + 1]) * w;
                }
                next[i] = acc;
            }
            levels.push(next);
        }
        Ok(Iterates { times, levels })
    }

    /// `H(t; γ) = Σ γⁿ h_n(t)` at grid index `i`, truncated at the stored depth.
    pub fn big_h(&self, i: usize, gamma: f64) -> f64 {
        let mut s = 0.0;
        let mut g = 1.0;
        for level in &self.levels {
            s += g * level[i];
            g *= gamma;
        }
        s
    }
}

/// `e^{2λt} / (1 - γ (v_λ * f̄)(0) / 2)`, infinite when the denominator is
/// not positive.
pub fn big_h_bound(spec: &KernelSpec, t: f64, gamma: f64, lambda: f64) -> Result<f64> {
    let v = fbar_potential(spec, lambda)?;
    let den = 1.0 - gamma * v / 2.0;
    Ok(if den > 0.0 { (2.0 * lambda * t).exp() / den } else { f64::INFINITY })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MalliavinBound {
    pub lambda0: f64,
    pub value: f64,
}

/// Bound on `‖D_{s,y} u(t, x)‖_k`, minimized over admissible `λ₀` on a
/// logarithmic grid above the admissibility threshold.
#[allow(clippy::too_many_arguments)]
pub fn malliavin_bound(spec: &KernelSpec, t: f64, s: f64, x: &[f64], y: &[f64], k: f64, t_cap: f64, c_tk: f64, sigma_lip: f64) -> Result<MalliavinBound> {
    if !(0.0 < s && s < t && t < t_cap) {
        return domain("need 0 < s < t < T");
    }
    if x.len() != spec.d || y.len() != spec.d {
        return domain("point dimension does not match the kernel");
    }
    let d = spec.d as f64;
    let c = 2f64.powf((d - 2.0) / 2.0) * (z_k(k) * sigma_lip).powi(2);
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let p = heat_kernel(t - s, &diff)?;
    let start = lambda_threshold(spec, 1.0 / c)?;
    if !start.is_finite() {
        return Err(Error::Precondition("no admissible lambda_0 below the search cap".into()));
    }
    let base = start.max(1e-6);
    let mut best = MalliavinBound { lambda0: f64::NAN, value: f64::INFINITY };
    for j in 0..48 {
        let l0 = base * 10f64.powf(0.001 + j as f64 * 0.125);
        let v = fbar_potential(spec, l0)?;
        let den = 1.0 - c * v;
        if den <= 0.0 {
            continue;
        }
        let val = 2.0 * c_tk * (l0 * (t - s)).exp() * p / den.sqrt();
        if val < best.value {
            best = MalliavinBound { lambda0: l0, value: val };
        }
    }
    if best.value.is_finite() {
        Ok(best)
    } else {
        Err(Error::Precondition("no admissible lambda_0 below the search cap".into()))
    }
}

/// `f([-N, N]^d)`, atoms included. Base kernels use `f̄ = |h| * |h~|`.
pub fn box_mass(spec: &KernelSpec, n: f64) -> Result<f64> {
    cube_integral(spec, n, false, true)
}

/// `∫ f(x) ∏_j w(|x_j|/N) dx` with `w` the indicator of `[0, 1]` or the tent
/// `(1 - s)₊`, atoms included. For base kernels `absolute` selects `f̄`
/// instead of `f`.
pub(crate) fn cube_integral(spec: &KernelSpec, n: f64, tent: bool, absolute: bool) -> Result<f64> {
    if !(n > 0.0) {
        return domain("box half-width must be positive");
    }
    let d = spec.d;
    let di = d as i32;
    match &spec.family {
        Family::WhiteNoise => return Ok(1.0),
        Family::Constant { level } => return Ok(level * if tent { n.powi(di) } else { (2.0 * n).powi(di) }),
        _ => {}
    }
    if d == 1 {
        let k = if tent { PairKernel::Tent(n) } else { PairKernel::Interval(n) };
        return Ok(integrate_against(spec, k, absolute, 1e-8)?.value);
    }
    match spec.role() {
        Role::F => {
            let f = |r: f64| spec.f_radial(r).unwrap();
            Ok(radial_against_cube(spec, &f, spec.support_radius(), n, tent))
        }
        Role::H => match spec.family {
            Family::GaussianH { .. } | Family::BallH { .. } => {
                let f = |r: f64| correlation_radial(spec, r, 1e-9, absolute).value;
                Ok(radial_against_cube(spec, &f, spec.support_radius().map(|s| 2.0 * s), n, tent))
            }
            _ => Err(Error::Unsupported(format!("cube integrals of {} beyond one dimension", spec.family_name()))),
        },
    }
}

/// Mean of `h` over the cube `[-a, a]^d`.
pub fn cube_average(spec: &KernelSpec, a: f64) -> Result<f64> {
    spec.require_role(Role::H, "cube_average")?;
    if !(a > 0.0) {
        return domain("cube half-width must be positive");
    }
    let d = spec.d as f64;
    if let Family::PowerH { alpha, .. } = spec.family {
        if alpha >= d {
            return domain("base kernel is not locally integrable");
        }
    }
    let vol = (2.0 * a).powf(d);
    if spec.d == 1 {
        if let Family::PowerH { alpha, c, .. } = spec.family {
            if a <= 1.0 {
                let m = (1.0 + alpha) / 2.0;
                return Ok(2.0 * c * a.powf(1.0 - m) / (1.0 - m) / vol);
            }
        }
    }
    let h = |r: f64| spec.h_unchecked(r);
    Ok(radial_against_cube(spec, &h, spec.support_radius(), a, false) / vol)
}

/// `f(B_R)` for the Euclidean ball.
pub fn ball_mass(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return domain("radius must be positive");
    }
    Ok(integrate_against(spec, PairKernel::Ball(r), true, 1e-8)?.value)
}

/// `∫_{R^d} f(x) ∏_j w(|x_j|/N) dx` for a radial `f`, where `w` is the
/// indicator of `[0, 1]` or the tent `(1 - s)₊`.
fn radial_against_cube(spec: &KernelSpec, f: &dyn Fn(f64) -> f64, reach: Option<f64>, n: f64, tent: bool) -> f64 {
    let d = spec.d;
    let w = |s: f64| if tent { (1.0 - s).max(0.0) } else { (s <= 1.0) as u8 as f64 };
    let fine = Quadrature { rel_tol: 1e-9, abs_tol: 1e-300, max_intervals: 2000 };
    // angular factor: ∫_{S^{d-1}} ∏ w(r|θ_j|/N) dθ
    let angular = |r: f64| -> f64 {
        let t = r / n;
        match d {
            1 => 2.0 * w(t),
            2 => {
                let mut pts = vec![0.0, PI / 2.0];
                if t > 1.0 {
                    pts.extend([(1.0 / t).acos(), (1.0 / t).asin()]);
                }
                4.0 * fine.integrate_pieces(|phi| w(t * phi.cos()) * w(t * phi.sin()), &pts).value
            }
            _ => {
                let mut pts = vec![0.0, PI / 2.0];
                if t > 1.0 {
                    pts.push((1.0 / t).acos());
                }
                let inner = |th: f64| {
                    let (st, ct) = th.sin_cos();
                    let wz = w(t * ct);
                    if wz == 0.0 {
                        return 0.0;
                    }
                    let tp = t * st;
                    let mut ip = vec![0.0, PI / 2.0];
                    if tp > 1.0 {
                        ip.extend([(1.0 / tp).acos(), (1.0 / tp).asin()]);
                    }
                    wz * st * fine.integrate_pieces(|phi| w(tp * phi.cos()) * w(tp * phi.sin()), &ip).value
                };
                8.0 * Quadrature { rel_tol: 1e-8, ..fine }.integrate_pieces(inner, &pts).value
            }
        }
    };
    let dm = d as i32 - 1;
    let top = n * (d as f64).sqrt();
    let mut pts = spec.knots();
    pts.extend([0.0, n, n * 2f64.sqrt()]);
    if let Family::CosineF { wavenumber, .. } = spec.family {
        let pieces = ((top * wavenumber / (2.0 * PI)).ceil() as usize).clamp(1, 4096);
        pts.extend((0..=pieces).map(|i| top * i as f64 / pieces as f64));
    }
    let top = reach.map(|s| s.min(top)).unwrap_or(top);
    let q = Quadrature { rel_tol: 1e-7, abs_tol: 1e-300, max_intervals: 4000 };
    let e = q.integrate_pieces(|r| if r == 0.0 { 0.0 } else { r.powi(dm) * f(r) * angular(r) }, &clean_points(pts, 0.0, top));
    e.value
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(d: usize, family: Family) -> KernelSpec {
        KernelSpec::new(d, family).unwrap()
    }

    #[test]
    fn omega_cases() {
        assert_eq!(omega_d(1, 0.37).unwrap(), 1.0);
        assert_relative_eq!(omega_d(2, 0.1).unwrap(), 0.230_258_509_299_404_56, max_relative = 1e-14);
        assert_relative_eq!(omega_d(2, 0.9).unwrap(), 0.9, max_relative = 1e-15);
        assert_eq!(omega_d(3, 0.5).unwrap(), 0.5);
        assert!(omega_d(2, 0.0).is_err());
        assert!(omega_d(2, -1.0).is_err());
    }

    #[test]
    fn heat_kernel_values() {
        assert_relative_eq!(heat_kernel(1.0, &[0.0]).unwrap(), 0.398_942_280_401_432_7, max_relative = 1e-14);
        assert_relative_eq!(heat_kernel(0.5, &[0.0, 0.0]).unwrap(), std::f64::consts::FRAC_1_PI, max_relative = 1e-14);
        assert!(heat_kernel(0.0, &[1.0]).is_err());
    }

    #[test]
    fn chapman_kolmogorov() {
        let q = Quadrature::with_rel_tol(1e-10);
        let (s, t, x) = (0.3, 0.7, 0.4);
        let e = q.integrate(|y| heat_kernel(s, &[y]).unwrap() * heat_kernel(t, &[x - y]).unwrap(), -20.0, 20.0);
        assert_relative_eq!(e.value, heat_kernel(s + t, &[x]).unwrap(), max_relative = 1e-9);
    }

    #[test]
    fn potential_closed_forms() {
        assert_relative_eq!(potential_kernel(0.5, &[0.0]).unwrap(), 1.0, max_relative = 1e-14);
        // quadrature vs closed form in d = 2, 3
        for &r in &[0.01, 0.3, 2.0] {
            let k = 2f64.sqrt();
            let v3 = potential_kernel(1.0, &[r, 0.0, 0.0]).unwrap();
            assert_relative_eq!(v3, (-k * r).exp() / (2.0 * PI * r), max_relative = 1e-8);
            let v2 = potential_kernel(1.0, &[0.0, r]).unwrap();
            // K0 via its integral representation
            let q = Quadrature::with_rel_tol(1e-12);
            let k0 = q.integrate_to_infinity(|u| (-k * r * u.cosh()).exp(), 0.0).value;
            assert_relative_eq!(v2, k0 / PI, max_relative = 1e-8);
        }
        assert!(potential_kernel(1.0, &[0.0, 0.0]).unwrap().is_infinite());
    }

    #[test]
    fn potential_normalization() {
        let q = Quadrature::with_rel_tol(1e-10);
        for d in 1..=3usize {
            let lambda = 0.7;
            let e = q.integrate_to_infinity(|r| sphere_area(d) * r.powi(d as i32 - 1) * potential_radial(d, lambda, r), 0.0);
            assert_relative_eq!(lambda * e.value, 1.0, max_relative = 1e-7);
        }
    }

    #[test]
    fn potential_small_radius_d3() {
        // v_1(r) ~ r^{-1} / (2π) near the origin
        for &r in &[1e-3, 1e-2, 1e-1] {
            let v = potential_kernel(1.0, &[r, 0.0, 0.0]).unwrap();
            assert_relative_eq!(v * r * 2.0 * PI, (-(2f64.sqrt()) * r).exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn bessel_scaled_matches_quadrature() {
        let q = Quadrature::with_rel_tol(1e-12);
        for &x in &[0.05, 1.0, 7.5, 40.0] {
            let k0 = q.integrate_to_infinity(|u| (-x * (u.cosh() - 1.0)).exp(), 0.0).value;
            assert_relative_eq!(k0e(x), k0, max_relative = 1e-9);
            let i0 = q.integrate(|u| (x * (u.cos() - 1.0)).exp(), 0.0, PI).value / PI;
            assert_relative_eq!(i0e(x), i0, max_relative = 1e-9);
        }
        assert_relative_eq!(i0e(699.0), i0e(701.0) * (701.0f64 / 699.0).sqrt(), max_relative = 1e-4);
        assert_relative_eq!(k0e(699.0), k0e(701.0) * (701.0f64 / 699.0).sqrt(), max_relative = 1e-4);
    }

    #[test]
    fn box_self_convolution_is_triangle() {
        let h = spec(1, Family::BallH { radius: 0.5 });
        let h_table = spec(1, Family::TableH { spacing: 0.25, values: vec![1.0, 1.0, 1.0, 0.0] });
        for &x in &[0.0, 0.3, 0.75, 1.2] {
            let tri = (1.0f64 - x).max(0.0);
            assert_relative_eq!(f_from_h(&h, &[x], 1e-8).unwrap().value, tri, epsilon = 1e-12);
            // linear interpolation of the table adds a ramp from 0.5 to 0.75
            let v = f_from_h(&h_table, &[x], 1e-8).unwrap().value;
            assert!(v >= tri - 1e-9);
        }
    }

    #[test]
    fn numeric_convolution_matches_closed_forms() {
        // run the generic radial convolution on families with known answers
        for d in 1..=3usize {
            let g = spec(d, Family::GaussianH { scale: 0.8 });
            let b = spec(d, Family::BallH { radius: 1.0 });
            for &r in &[0.0, 0.4, 1.3] {
                let q = Quadrature { rel_tol: 1e-9, abs_tol: 1e-14, max_intervals: 4000 };
                let hg = |s: f64| g.h_unchecked(s);
                let num = radial_convolution(d, &hg, &hg, &g.knots(), None, r, q).value;
                assert_relative_eq!(num, correlation_radial(&g, r, 1e-9, false).value, max_relative = 1e-6);
                let hb = |s: f64| b.h_unchecked(s);
                let num = radial_convolution(d, &hb, &hb, &b.knots(), Some(1.0), r, q).value;
                assert_relative_eq!(num, correlation_radial(&b, r, 1e-9, false).value, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn signed_table_is_dominated() {
        let h = spec(1, Family::TableH { spacing: 0.5, values: vec![1.0, 0.5, -1.0, -0.5, 0.0] });
        let mut saw_negative = false;
        for &x in &[0.0, 0.5, 1.0, 1.5, 2.5, 3.5] {
            let f = f_from_h(&h, &[x], 1e-9).unwrap().value;
            let fb = fbar_from_h(&h, &[x], 1e-9).unwrap().value;
            assert!(f <= fb + 1e-10);
            saw_negative |= f < 0.0;
        }
        assert!(saw_negative);
    }

    #[test]
    fn gp_decisions() {
        for d in 1..=3usize {
            let amax = (d as f64).min(2.0);
            for &alpha in &[0.3 * amax, 0.9 * amax] {
                let h = spec(d, Family::PowerH { alpha, beta: 1.0, c: 1.0 });
                assert_eq!(gp_any(&h).unwrap(), Some(true), "d={d} alpha={alpha}");
                assert_eq!(fp_any(&h).unwrap(), Some(true));
            }
        }
        let h = spec(3, Family::PowerH { alpha: 2.5, beta: 1.0, c: 1.0 });
        assert_eq!(gp_any(&h).unwrap(), Some(false));
        let h = spec(3, Family::PowerH { alpha: 2.0, beta: 1.0, c: 1.0 });
        assert_eq!(gp_any(&h).unwrap(), Some(false));
        let g = spec(2, Family::GaussianH { scale: 1.0 });
        assert_eq!(check_gp(&g, 2.0).unwrap(), Some(true));
        let t = spec(1, Family::TableH { spacing: 0.1, values: vec![1.0, 0.5, 0.0] });
        assert_eq!(check_gp(&t, 2.0).unwrap(), None);
        let f = spec(1, Family::WhiteNoise);
        assert!(check_gp(&f, 2.0).is_err());
    }

    #[test]
    fn gp_and_fp_agree_in_one_dimension() {
        for &alpha in &[0.1, 0.5, 0.95] {
            for &beta in &[0.2, 1.0, 3.0] {
                let h = spec(1, Family::PowerH { alpha, beta, c: 1.0 });
                for &p in P_SCAN.iter() {
                    assert_eq!(check_gp(&h, p).unwrap(), check_fp(&h, p).unwrap());
                }
            }
        }
    }

    #[test]
    fn power_norms_match_quadrature() {
        let h = spec(2, Family::PowerH { alpha: 0.8, beta: 1.5, c: 1.3 });
        let q = Quadrature::with_rel_tol(1e-11);
        let p = 1.2;
        let r = 0.3;
        let inside = q.integrate(|s| 2.0 * PI * s * h.h_unchecked(s).powf(p), 0.0, r).value.powf(1.0 / p);
        assert_relative_eq!(ball_norm(&h, p, r, true).unwrap(), inside, max_relative = 1e-8);
        let qq = p / (p - 1.0);
        let outside = q.integrate_pieces_to_infinity(|s| 2.0 * PI * s * h.h_unchecked(s).powf(qq), &[r, 1.0]).value.powf(1.0 / qq);
        assert_relative_eq!(ball_norm(&h, qq, r, false).unwrap(), outside, max_relative = 1e-8);
    }

    #[test]
    fn bracket_growth_matches_exponent() {
        let h = spec(2, Family::PowerH { alpha: 1.5, beta: 1.0, c: 1.0 });
        let p = 1.05;
        let SmallRadius::Power(e) = bracket_exponent(&h, p).unwrap() else { panic!() };
        let b1 = bracket(&h, p, 1e-4).unwrap();
        let b2 = bracket(&h, p, 1e-5).unwrap();
        assert_relative_eq!((b2 / b1).log10(), -e, epsilon = 0.02);
    }

    #[test]
    fn weighted_class_integral_converges_for_alpha_one_and_a_half() {
        // increments of ∫_ε^1 bracket·ω over decades shrink geometrically
        let h = spec(2, Family::PowerH { alpha: 1.5, beta: 1.0, c: 1.0 });
        let p = 1.05;
        let j: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8].iter().map(|&e| class_partial_integral(&h, p, e, true).unwrap()).collect();
        let inc: Vec<f64> = j.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(inc[1] < 0.2 * inc[0] && inc[2] < 0.2 * inc[1], "{inc:?}");
    }

    #[test]
    fn pd_tail_bound_holds() {
        for (d, fam) in [
            (1, Family::PowerH { alpha: 0.5, beta: 1.0, c: 1.0 }),
            (1, Family::BallH { radius: 0.7 }),
            (2, Family::GaussianH { scale: 0.5 }),
            (3, Family::BallH { radius: 0.4 }),
        ] {
            let h = spec(d, fam);
            let p = 1.1;
            let q = p / (p - 1.0);
            for &r in &[0.25, 0.5, 1.0] {
                let bound = 2.0 * ball_norm(&h, p, r, true).unwrap() * ball_norm(&h, q, r, false).unwrap()
                    + ball_norm(&h, 2.0, r, false).unwrap().powi(2);
                let sup = [2.0 * r, 2.5 * r, 3.0 * r, 4.0 * r, 6.0 * r]
                    .iter()
                    .map(|&x| correlation_radial(&h, x, 1e-8, true).value)
                    .fold(0.0, f64::max);
                assert!(sup <= bound * (1.0 + 1e-6), "d={d} r={r}: {sup} > {bound}");
            }
        }
    }

    #[test]
    fn dalang_white_and_riesz() {
        let w1 = dalang_integral(&spec(1, Family::WhiteNoise), 1.0).unwrap();
        assert!(w1.finite);
        assert_relative_eq!(w1.spectral.unwrap(), PI, max_relative = 1e-14);
        let w2 = dalang_integral(&spec(2, Family::WhiteNoise), 1.0).unwrap();
        assert!(!w2.finite);
        assert!(w2.spectral.unwrap().is_infinite());
        assert!(dalang_integral(&spec(3, Family::RieszF { gamma: 1.5 }), 1.0).unwrap().finite);
        assert!(!dalang_integral(&spec(3, Family::RieszF { gamma: 2.5 }), 1.0).unwrap().finite);
    }

    #[test]
    fn riesz_spectral_quadrature_matches_closed_form() {
        for (d, g) in [(1usize, 0.5f64), (2, 1.5), (3, 1.0), (3, 1.5)] {
            let lambda = 0.8;
            let s = spectral_dalang(&spec(d, Family::RieszF { gamma: g }), lambda).unwrap();
            let closed = riesz_constant(d, g) * sphere_area(d) * lambda.powf(g / 2.0 - 1.0) * (PI / 2.0) / (PI * g / 2.0).sin();
            assert_relative_eq!(s, closed, max_relative = 1e-6);
        }
    }

    #[test]
    fn spectral_and_potential_forms_agree() {
        let lambda = 0.6;
        for (d, fam) in [
            (1, Family::ExpDecayF { rate: 1.0 }),
            (2, Family::ExpDecayF { rate: 0.5 }),
            (3, Family::CauchyF { scale: 1.5 }),
            (2, Family::RieszF { gamma: 0.7 }),
            (1, Family::GaussianH { scale: 0.6 }),
            (3, Family::GaussianH { scale: 1.2 }),
            (1, Family::Constant { level: 0.25 }),
            (1, Family::CosineF { wavenumber: 1.0, offset: 1.0 }),
        ] {
            let s = spec(d, fam.clone());
            let pot = dalang_integral(&s, lambda).unwrap().potential.unwrap();
            let spe = dalang_integral(&s, 2.0 * lambda).unwrap().spectral.unwrap();
            assert_relative_eq!(pot, dalang_normalization(d) * spe, max_relative = 1e-5);
        }
    }

    #[test]
    fn h_minus1_gaussian() {
        let h = spec(1, Family::GaussianH { scale: 1.0 });
        // ∫ e^{-x²}/(1+x²) dx = π e erfc(1)
        let oracle = (PI * E * puruspe::erfc(1.0)).sqrt();
        assert_relative_eq!(h_minus1_norm(&h).unwrap(), oracle, max_relative = 1e-6);
        let q = Quadrature::with_rel_tol(1e-12);
        let direct = 2.0 * q.integrate_to_infinity(|x| (-x * x).exp() / (1.0 + x * x), 0.0).value;
        assert_relative_eq!(oracle * oracle, direct, max_relative = 1e-10);
        let bad = spec(3, Family::PowerH { alpha: 2.2, beta: 1.0, c: 1.0 });
        assert!(h_minus1_norm(&bad).unwrap().is_infinite());
        let good = spec(2, Family::PowerH { alpha: 0.5, beta: 1.0, c: 1.0 });
        assert!(h_minus1_norm(&good).unwrap().is_finite());
    }

    #[test]
    fn threshold_bisection() {
        let h = spec(1, Family::BallH { radius: 0.5 });
        let delta = 0.5;
        let l = lambda_threshold(&h, delta).unwrap();
        // triangular f: ∫ v_λ (1-|x|)₊ = 2∫₀¹ e^{-kx}(1-x)/k dx
        let tri = |lam: f64| {
            let k = (2.0 * lam).sqrt();
            2.0 / k * ((k - 1.0 + (-k).exp()) / (k * k))
        };
        assert!(tri(l * (1.0 + 1e-3)) < delta);
        assert!(tri(l * (1.0 - 1e-3)) >= delta);
        // dense grid oracle
        let grid: Vec<f64> = (0..4000).map(|i| 1e-3 * 10f64.powf(i as f64 / 1000.0)).collect();
        let first = grid.iter().cloned().find(|&g| tri(g) < delta).unwrap();
        assert_relative_eq!(l, first, max_relative = 3e-3);
        assert!(lambda_threshold(&h, 0.0).is_err());
        assert!(lambda_threshold(&h, 1e9).unwrap() <= 1e-6);
    }

    #[test]
    fn white_noise_threshold_closed_form() {
        let w = spec(1, Family::WhiteNoise);
        // (2λ)^{-1/2} < δ  ⇔  λ > 1/(2δ²)
        let l = lambda_threshold(&w, 0.3).unwrap();
        assert_relative_eq!(l, 1.0 / (2.0 * 0.09), max_relative = 1e-10);
    }

    #[test]
    fn moment_bound_examples() {
        assert_eq!(z_k(2.0), 1.0);
        assert_relative_eq!(z_k(4.0), 4.0);
        for n in 0..20 {
            assert!(iterate_bound(1.0, 0.0, 1.0, 0.5, n) <= 3.0);
        }
        let h = spec(1, Family::BallH { radius: 0.5 });
        let b2 = moment_bound(&h, 1.0, 0.0, 1.0, 2.0, 0.5).unwrap();
        let b4 = moment_bound(&h, 1.0, 0.0, 1.0, 4.0, 0.5).unwrap();
        assert!(b4.beta >= b2.beta);
        assert!(b4.at_time(1.0) >= b2.at_time(1.0));
    }

    #[test]
    fn kappa_and_iterates_white() {
        let w = spec(1, Family::WhiteNoise);
        assert_relative_eq!(kappa(&w, 0.7).unwrap(), (4.0 * PI * 0.7f64).powf(-0.5), max_relative = 1e-12);
        let it = Iterates::new(&w, 2.0, 800, 4).unwrap();
        assert!(it.levels[0].iter().all(|v| *v == 1.0));
        let i = 800;
        let t = it.times[i];
        assert_relative_eq!(it.levels[1][i], (t / PI).sqrt(), max_relative = 1e-6);
        assert_relative_eq!(it.levels[2][i], t / 4.0, max_relative = 2e-3);
        assert_eq!(it.big_h(i, 0.0), 1.0);
        // Mittag-Leffler closed form Σ (γ√t/2)^n / Γ(n/2+1)
        let g: f64 = 0.8;
        let ml: f64 = (0..5).map(|n| (g * t.sqrt() / 2.0).powi(n) / gamma(n as f64 / 2.0 + 1.0)).sum();
        assert_relative_eq!(it.big_h(i, g), ml, max_relative = 2e-3);
        let lam = 1.0;
        assert!(it.big_h(i, g) <= big_h_bound(&w, t, g, lam).unwrap());
    }

    #[test]
    fn malliavin_bound_is_admissible() {
        let w = spec(1, Family::WhiteNoise);
        let b = malliavin_bound(&w, 1.0, 0.5, &[0.0], &[0.1], 2.0, 2.0, 1.0, 1.0).unwrap();
        let c = 2f64.powf(-0.5);
        assert!(c * fbar_potential(&w, b.lambda0).unwrap() < 1.0);
        assert!(b.value.is_finite() && b.value > 0.0);
        assert!(malliavin_bound(&w, 1.0, 1.5, &[0.0], &[0.0], 2.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn masses() {
        let c = spec(1, Family::Constant { level: 0.25 });
        assert_relative_eq!(box_mass(&c, 8.0).unwrap(), 4.0);
        let e = spec(1, Family::ExpDecayF { rate: 1.0 });
        assert_relative_eq!(box_mass(&e, 3.0).unwrap(), 2.0 * (1.0 - (-3.0f64).exp()), max_relative = 1e-8);
        let e2 = spec(2, Family::ExpDecayF { rate: 1.0 });
        // square vs nested cartesian quadrature
        let q = Quadrature::with_rel_tol(1e-10);
        let nested = q.integrate(|x| q.integrate(|y| (-(x * x + y * y).sqrt()).exp(), -1.5, 1.5).value, -1.5, 1.5).value;
        assert_relative_eq!(box_mass(&e2, 1.5).unwrap(), nested, max_relative = 1e-6);
        let e3 = spec(3, Family::CauchyF { scale: 1.0 });
        let nested3 = q
            .integrate(|x| q.integrate(|y| q.integrate(|z| (1.0 + x * x + y * y + z * z).powi(-2), -1.0, 1.0).value, -1.0, 1.0).value, -1.0, 1.0)
            .value;
        assert_relative_eq!(box_mass(&e3, 1.0).unwrap(), nested3, max_relative = 1e-6);
        let g = spec(3, Family::GaussianH { scale: 0.5 });
        // f is a Gaussian density with variance 2·0.25 per axis; mass of a large ball is 1
        assert_relative_eq!(ball_mass(&g, 8.0).unwrap(), 1.0, max_relative = 1e-6);
    }
}
