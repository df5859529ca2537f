//! Intermittency statistics for the parabolic Anderson model
//! `∂ₜu = ½Δu + u ξ` in `d = 1` with space-time white noise.

use std::io::Write;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::kernels::Family;
use crate::noise::Grid;
use crate::quad::linear_fit;
use crate::solver::{run_ensemble, RunConfig, SigmaFamily};

pub const CSV_SCHEMA_SCAN: &str = "# shelab islands v1";
pub const CSV_SCHEMA_SUP: &str = "# shelab sup_growth v1";

/// `d(α) = 4α 3^{-3/2} √(6/t)`.
pub fn d_alpha(alpha: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0 && t > 0.0) {
        return domain("alpha and t must be positive");
    }
    Ok(4.0 * alpha * 3f64.powf(-1.5) * (6.0 / t).sqrt())
}

/// `log₊ N = log(N ∨ e)`.
pub fn log_plus(n: f64) -> f64 {
    n.max(std::f64::consts::E).ln()
}

/// `a_N = exp((α log₊ N)^{2/3})`.
pub fn threshold(alpha: f64, n: f64) -> f64 {
    (alpha * log_plus(n)).powf(2.0 / 3.0).exp()
}

/// `(3/4)(2t/3)^{2/3}`.
pub fn sup_constant(t: f64) -> f64 {
    0.75 * (2.0 * t / 3.0).powf(2.0 / 3.0)
}

fn window(grid: &Grid, n: f64) -> Result<usize> {
    if grid.d != 1 {
        return domain("island statistics are one-dimensional");
    }
    let m = (n / grid.dx).round();
    if !(m >= 1.0) || m as usize > grid.n_cells {
        return domain(format!("window {n} must cover between one cell and the torus"));
    }
    Ok(m as usize)
}

/// Lebesgue measure of `{x ∈ [0, N] : u(x) > level}`.
pub fn level_set_measure(grid: &Grid, values: &[f64], level: f64, n: f64) -> Result<f64> {
    let m = window(grid, n)?;
    Ok(values[..m].iter().filter(|v| **v > level).count() as f64 * grid.dx)
}

pub fn island_measure(grid: &Grid, values: &[f64], alpha: f64, n: f64) -> Result<f64> {
    level_set_measure(grid, values, threshold(alpha, n), n)
}

/// `log(measure) / log N`, `-∞` for an empty island set.
pub fn dimension_estimate(measure: f64, n: f64) -> f64 {
    if measure > 0.0 {
        measure.ln() / n.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Enforces the setting of the island results: linear `σ`, white noise,
/// `d = 1`, and `d(α) < 1/2` for every level.
pub fn check_pam(cfg: &RunConfig, alphas: &[f64]) -> Result<()> {
    if cfg.grid.d != 1 || cfg.kernel.d != 1 {
        return Err(Error::Config("island statistics need d = 1".into()));
    }
    if !matches!(cfg.kernel.family, Family::WhiteNoise) {
        return Err(Error::Config("island statistics need space-time white noise".into()));
    }
    if !matches!(cfg.sigma.family, SigmaFamily::Linear) {
        return Err(Error::Config("island statistics need σ(u) = u".into()));
    }
    if cfg.u0.is_some() {
        return Err(Error::Config("island statistics need u₀ ≡ 1".into()));
    }
    for &a in alphas {
        let d = d_alpha(a, cfg.t_final)?;
        if d >= 0.5 {
            return Err(Error::Config(format!("alpha = {a} gives d(α) = {d:.5}; the dimension formula holds only when d(α) < 1/2")));
        }
    }
    Ok(())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub alpha: f64,
    pub n: f64,
    pub threshold: f64,
    pub replica_count: usize,
    pub median_dim: f64,
    pub q25: f64,
    pub q75: f64,
    pub theory_dim: f64,
    pub zero_measure_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IslandScan {
    pub t: f64,
    pub rows: Vec<ScanRow>,
    pub nonpositive_replicas: u64,
    pub warnings: Vec<String>,
}

impl IslandScan {
    pub fn row(&self, alpha: f64, n: f64) -> Option<&ScanRow> {
        self.rows.iter().find(|r| r.alpha == alpha && r.n == n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupRow {
    pub n: f64,
    /// Median over replicas of `max_{N' ≤ N} sup_{[0,N']} log u / (log N')^{2/3}`.
    pub median: f64,
    /// Median of the plain ratio at `N`.
    pub median_raw: f64,
    pub theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupCurve {
    pub t: f64,
    pub rows: Vec<SupRow>,
}

/// Per replica: island dimensions `[alpha][N]` and sup ratios `[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaIslands {
    pub dims: Vec<Vec<f64>>,
    pub sup_ratio: Vec<f64>,
    pub positive: bool,
}

pub fn replica_islands(grid: &Grid, values: &[f64], alphas: &[f64], n_values: &[f64]) -> Result<ReplicaIslands> {
    let dims = alphas
        .iter()
        .map(|&a| n_values.iter().map(|&n| island_measure(grid, values, a, n).map(|m| dimension_estimate(m, n))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut sup_ratio = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let m = window(grid, n)?;
        let top = values[..m].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        sup_ratio.push(top.ln() / log_plus(n).powf(2.0 / 3.0));
    }
    Ok(ReplicaIslands { dims, sup_ratio, positive: values.iter().all(|v| *v > 0.0) })
}

pub fn summarize(t: f64, alphas: &[f64], n_values: &[f64], reps: &[ReplicaIslands]) -> Result<(IslandScan, SupCurve)> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, &a) in alphas.iter().enumerate() {
        let theory = 1.0 - d_alpha(a, t)?;
        for (j, &n) in n_values.iter().enumerate() {
            let mut v: Vec<f64> = reps.iter().map(|r| r.dims[i][j]).filter(|x| x.is_finite()).collect();
            let zeros = reps.len() - v.len();
            if zeros > 0 {
                warnings.push(format!("alpha = {a}, N = {n}: {zeros} replicas with empty island set excluded"));
            }
            v.sort_by(f64::total_cmp);
            rows.push(ScanRow {
                alpha: a,
                n,
                threshold: threshold(a, n),
                replica_count: reps.len(),
                median_dim: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
                theory_dim: theory,
                zero_measure_count: zeros,
            });
        }
    }
    let nonpositive = reps.iter().filter(|r| !r.positive).count() as u64;
    if nonpositive > 0 {
        warnings.push(format!("{nonpositive} replicas had nonpositive cells"));
    }
    let mut sup_rows = Vec::new();
    let running: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| {
            let mut best = f64::NEG_INFINITY;
            r.sup_ratio.iter().map(|x| {
                best = best.max(*x);
                best
            }).collect()
        })
        .collect();
    for (j, &n) in n_values.iter().enumerate() {
        let mut v: Vec<f64> = running.iter().map(|r| r[j]).collect();
        let mut raw: Vec<f64> = reps.iter().map(|r| r.sup_ratio[j]).collect();
        v.sort_by(f64::total_cmp);
        raw.sort_by(f64::total_cmp);
        sup_rows.push(SupRow { n, median: quantile(&v, 0.5), median_raw: quantile(&raw, 0.5), theory: sup_constant(t) });
    }
    Ok((IslandScan { t, rows, nonpositive_replicas: nonpositive, warnings }, SupCurve { t, rows: sup_rows }))
}

/// Runs the PAM ensemble once and returns the island scan and the
/// sup-growth curve at `t_final`.
pub fn pam_scan(cfg: &RunConfig, alphas: &[f64], n_values: &[f64]) -> Result<(IslandScan, SupCurve)> {
    check_pam(cfg, alphas)?;
    let mut cfg = cfg.clone();
    cfg.snapshots = vec![cfg.t_final];
    let grid = cfg.grid;
    for &n in n_values {
        window(&grid, n)?;
        if n <= 1.0 {
            return domain("window lengths must exceed 1");
        }
    }
    let (reps, _) = run_ensemble(&cfg, |_, snaps| replica_islands(&grid, &snaps[0].values, alphas, n_values))?;
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(cfg.t_final, alphas, n_values, &reps)
}

pub fn dimension_scan(cfg: &RunConfig, alphas: &[f64], n_values: &[f64]) -> Result<IslandScan> {
    pam_scan(cfg, alphas, n_values).map(|(s, _)| s)
}

pub fn sup_growth(cfg: &RunConfig, n_values: &[f64]) -> Result<SupCurve> {
    pam_scan(cfg, &[], n_values).map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub t: f64,
    pub samples: usize,
    pub a_used: Vec<f64>,
    pub counts: Vec<usize>,
    pub slope: f64,
    pub stderr: f64,
    pub theory: f64,
    pub warnings: Vec<String>,
}

pub const MIN_TAIL_COUNT: usize = 30;

/// Least-squares slope of `log P{u > e^a}` against `a^{3/2}`, over the
/// levels with at least thirty exceedances.
pub fn fit_tail(t: f64, samples: &[f64], a_values: &[f64]) -> Result<TailFit> {
    let n = samples.len() as f64;
    let mut warnings = Vec::new();
    let mut a_used = Vec::new();
    let mut counts = Vec::new();
    for &a in a_values {
        if !(a > 0.0) {
            return domain("tail levels must be positive");
        }
        let level = a.exp();
        let c = samples.iter().filter(|v| **v > level).count();
        if c >= MIN_TAIL_COUNT {
            a_used.push(a);
            counts.push(c);
        } else {
            warnings.push(format!("a = {a} dropped: {c} exceedances"));
        }
    }
    if a_used.len() < 2 {
        return Err(Error::Insufficient(format!("only {} tail levels have at least {MIN_TAIL_COUNT} exceedances", a_used.len())));
    }
    let x: Vec<f64> = a_used.iter().map(|a| a.powf(1.5)).collect();
    let y: Vec<f64> = counts.iter().map(|c| (*c as f64 / n).ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    // binomial error of each log-probability, propagated through the fit
    let var: f64 = x.iter().zip(&counts).map(|(xi, c)| ((xi - mx) / sxx).powi(2) * (1.0 - *c as f64 / n) / *c as f64).sum();
    Ok(TailFit { t, samples: samples.len(), a_used, counts, slope, stderr: var.sqrt(), theory: -d_alpha(1.0, t)?, warnings })
}

/// `u(t, x)` at every `stride`-th cell of every replica, pooled.
pub fn tail_samples(cfg: &RunConfig, stride: usize) -> Result<Vec<f64>> {
    check_pam(cfg, &[])?;
    if stride == 0 || stride > cfg.grid.n_cells {
        return domain("stride must be between 1 and the number of cells");
    }
    let mut cfg = cfg.clone();
    cfg.snapshots = vec![cfg.t_final];
    let (per, _) = run_ensemble(&cfg, |_, snaps| snaps[0].values.iter().step_by(stride).copied().collect::<Vec<_>>())?;
    Ok(per.into_iter().flatten().collect())
}

pub fn tail_exponent(cfg: &RunConfig, a_values: &[f64], stride: usize) -> Result<TailFit> {
    if cfg.replicas < 10_000 {
        return Err(Error::Insufficient(format!("tail_exponent needs at least 10000 replicas, got {}", cfg.replicas)));
    }
    fit_tail(cfg.t_final, &tail_samples(cfg, stride)?, a_values)
}

pub fn write_scan_csv<W: Write>(mut w: W, scan: &IslandScan) -> Result<()> {
    writeln!(w, "{CSV_SCHEMA_SCAN}")?;
    writeln!(w, "alpha,N,replica_count,median_dim,q25,q75,theory_dim,zero_measure_count")?;
    for r in &scan.rows {
        writeln!(w, "{},{},{},{:e},{:e},{:e},{:e},{}", r.alpha, r.n, r.replica_count, r.median_dim, r.q25, r.q75, r.theory_dim, r.zero_measure_count)?;
    }
    Ok(())
}

pub fn write_sup_csv<W: Write>(mut w: W, curve: &SupCurve) -> Result<()> {
    writeln!(w, "{CSV_SCHEMA_SUP}")?;
    writeln!(w, "N,median_running,median_raw,theory")?;
    for r in &curve.rows {
        writeln!(w, "{},{:e},{:e},{:e}", r.n, r.median, r.median_raw, r.theory)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::solver::SigmaSpec;
    use approx::assert_relative_eq;

    fn pam(n_cells: usize, dx: f64, t: f64, replicas: u64) -> RunConfig {
        let grid = Grid::new(1, n_cells, dx, dx * dx / 4.0).unwrap();
        RunConfig::new(grid, KernelSpec::new(1, Family::WhiteNoise).unwrap(), SigmaSpec::linear(), t, replicas, 17)
    }

    #[test]
    fn d_alpha_values() {
        assert_relative_eq!(d_alpha(1.0, 6.0).unwrap(), 4.0 / (3.0 * 3f64.sqrt()), epsilon = 1e-15);
        assert_relative_eq!(d_alpha(1.0, 6.0).unwrap(), 0.769800, epsilon = 1e-6);
        assert_relative_eq!(1.0 - d_alpha(0.3, 6.0).unwrap(), 0.76906, epsilon = 1e-5);
        assert_relative_eq!(d_alpha(0.7, 4.0).unwrap(), d_alpha(0.7, 1.0).unwrap() / 2.0, epsilon = 1e-15);
        assert!(d_alpha(3f64.sqrt() * 3.0 / 8.0 * 0.999, 6.0).unwrap() < 0.5);
        assert!(d_alpha(3f64.sqrt() * 3.0 / 8.0 * 1.001, 6.0).unwrap() > 0.5);
        assert!(d_alpha(0.0, 1.0).is_err());
        assert_eq!(sup_constant(1.5), 0.75);
    }

    #[test]
    fn level_sets_nest() {
        let grid = Grid::new(1, 64, 0.5, 0.1).unwrap();
        let v: Vec<f64> = (0..64).map(|i| 1.0 + ((i * 7) % 13) as f64).collect();
        let mut prev = f64::INFINITY;
        for a in [0.01, 0.1, 0.5, 1.0, 2.0, 4.0] {
            let m = island_measure(&grid, &v, a, 32.0).unwrap();
            assert!(m <= prev && m <= 32.0);
            prev = m;
        }
        assert_eq!(island_measure(&grid, &v, 100.0, 32.0).unwrap(), 0.0);
        assert_eq!(dimension_estimate(0.0, 10.0), f64::NEG_INFINITY);
    }

    #[test]
    fn scope_is_enforced() {
        let cfg = pam(64, 0.25, 6.0, 4);
        assert!(check_pam(&cfg, &[0.3]).is_ok());
        assert!(matches!(check_pam(&cfg, &[0.7]), Err(Error::Config(_))));
        let mut lin = cfg.clone();
        lin.sigma = SigmaSpec::constant(1.0);
        assert!(check_pam(&lin, &[0.1]).is_err());
        let mut d2 = cfg.clone();
        d2.grid = Grid::new(2, 16, 0.25, 0.01).unwrap();
        assert!(check_pam(&d2, &[0.1]).is_err());
    }

    #[test]
    fn small_scan() {
        let cfg = pam(512, 0.25, 3.0, 40);
        let (scan, sup) = pam_scan(&cfg, &[0.1, 0.3], &[16.0, 64.0, 128.0]).unwrap();
        assert_eq!(scan.nonpositive_replicas, 0);
        for r in &scan.rows {
            assert!(r.median_dim <= 1.0);
        }
        for n in [16.0, 64.0, 128.0] {
            assert!(scan.row(0.3, n).unwrap().median_dim <= scan.row(0.1, n).unwrap().median_dim);
        }
        for w in sup.rows.windows(2) {
            assert!(w[1].median >= w[0].median);
        }
    }

    #[test]
    fn tail_fit_on_known_law() {
        // log u ~ Exp(1): log P{u > e^a} = -a, fitted against a^{3/2}
        use rand::Rng;
        let mut rng = crate::noise::stream(1, crate::noise::SeedPath { replica: 0, step: 0 }, 7);
        let s: Vec<f64> = (0..200_000).map(|_| (-(1.0 - rng.random::<f64>()).ln()).exp()).collect();
        let f = fit_tail(6.0, &s, &[1.0, 2.0, 3.0, 4.0, 20.0]).unwrap();
        assert_eq!(f.a_used, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(f.slope < 0.0);
        assert_eq!(f.warnings.len(), 1);
        assert!(fit_tail(6.0, &s[..100], &[3.0, 4.0]).is_err());
    }
}
