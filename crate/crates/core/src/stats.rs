//! Spatial averages of solution fields, Poincaré-type variance scaling,
//! the ergodicity variance test and covariance decay.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{box_mass, KernelSpec};
use crate::noise::{CovPoint, Grid, LagCovariance};
use crate::quad::linear_fit;
use crate::spectral::decays;

pub const CSV_SCHEMA_POINCARE: &str = "# shelab poincare v1";
pub const CSV_SCHEMA_COVARIANCE: &str = "# shelab covariance v1";

/// Scalar test functions applied to field values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g", rename_all = "snake_case")]
pub enum GFamily {
    /// `w - 1`.
    IdentityMinus1,
    /// `1 ∧ (w - a)₊`.
    Clip01 { a: f64 },
    /// `cos(z w)`.
    Cosine { z: f64 },
    /// `sin(z w)`.
    Sine { z: f64 },
    /// Piecewise linear through the table, flat outside.
    Custom { knots: Vec<f64>, values: Vec<f64>, lip: f64 },
}

impl GFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GFamily::IdentityMinus1 => "identity_minus1",
            GFamily::Clip01 { .. } => "clip01",
            GFamily::Cosine { .. } => "cosine",
            GFamily::Sine { .. } => "sine",
            GFamily::Custom { .. } => "custom",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GFamily::Clip01 { a } if !a.is_finite() => domain("clip01 needs finite a"),
            GFamily::Cosine { z } | GFamily::Sine { z } if !(z.is_finite() && *z != 0.0) => domain("frequency must be finite and nonzero"),
            GFamily::Custom { knots, values, lip } => {
                if knots.len() < 2 || knots.len() != values.len() || knots.windows(2).any(|w| !(w[1] > w[0])) {
                    return domain("custom g needs increasing knots matching the values");
                }
                let slope = knots.windows(2).zip(values.windows(2)).map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs()).fold(0.0, f64::max);
                if slope == 0.0 || slope > lip * (1.0 + 1e-12) {
                    return domain(format!("custom g has slope {slope} against declared Lipschitz constant {lip}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, w: f64) -> f64 {
        match self {
            GFamily::IdentityMinus1 => w - 1.0,
            GFamily::Clip01 { a } => (w - a).max(0.0).min(1.0),
            GFamily::Cosine { z } => (z * w).cos(),
            GFamily::Sine { z } => (z * w).sin(),
            GFamily::Custom { knots, values, .. } => {
                let last = knots.len() - 1;
                if w <= knots[0] {
                    values[0]
                } else if w >= knots[last] {
                    values[last]
                } else {
                    let i = knots.partition_point(|k| *k <= w) - 1;
                    let s = (w - knots[i]) / (knots[i + 1] - knots[i]);
                    values[i] * (1.0 - s) + values[i + 1] * s
                }
            }
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            GFamily::IdentityMinus1 | GFamily::Clip01 { .. } => 1.0,
            GFamily::Cosine { z } | GFamily::Sine { z } => z.abs(),
            GFamily::Custom { lip, .. } => *lip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    /// Shift `ζ` in length units, one entry per axis.
    pub shift: Vec<f64>,
    #[serde(flatten)]
    pub g: GFamily,
}

/// `∏_j g_j(u(x + ζ^j))`, optionally with every `g` replaced by
/// `(g - g(0)) / Lip(g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageSpec {
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub normalize: bool,
}

impl AverageSpec {
    pub fn single(d: usize, g: GFamily) -> Self {
        AverageSpec { factors: vec![Factor { shift: vec![0.0; d], g }], normalize: false }
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn normalized(&self) -> Self {
        AverageSpec { normalize: true, ..self.clone() }
    }

    pub fn label(&self) -> String {
        self.factors.iter().map(|f| f.g.name()).collect::<Vec<_>>().join("*")
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.factors.is_empty() {
            return domain("an average needs at least one factor");
        }
        for f in &self.factors {
            if f.shift.len() != d {
                return domain("shift dimension differs from the grid");
            }
            f.g.validate()?;
        }
        Ok(())
    }

    /// Cell offsets of the shifts, with a warning for each snapped shift.
    pub fn offsets(&self, grid: &Grid) -> (Vec<Vec<i64>>, Vec<String>) {
        let mut warnings = Vec::new();
        let offs = self
            .factors
            .iter()
            .map(|f| {
                f.shift
                    .iter()
                    .map(|s| {
                        let c = s / grid.dx;
                        let r = c.round();
                        if (c - r).abs() > 1e-9 * c.abs().max(1.0) {
                            warnings.push(format!("shift {s} snapped to {}", r * grid.dx));
                        }
                        r as i64
                    })
                    .collect()
            })
            .collect();
        (offs, warnings)
    }

    /// The product functional at every cell.
    pub fn evaluate(&self, grid: &Grid, values: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
        self.validate(grid.d)?;
        let (offs, warnings) = self.offsets(grid);
        let scales: Vec<(f64, f64)> = self.factors.iter().map(|f| if self.normalize { (f.g.eval(0.0), 1.0 / f.g.lip()) } else { (0.0, 1.0) }).collect();
        let mut out = vec![1.0; values.len()];
        for ((f, off), (g0, s)) in self.factors.iter().zip(&offs).zip(&scales) {
            let zero = off.iter().all(|o| *o == 0);
            for (x, o) in out.iter_mut().enumerate() {
                let y = if zero { x } else { grid.shift(x, off) };
                *o *= (f.g.eval(values[y]) - g0) * s;
            }
        }
        Ok((out, warnings))
    }
}

fn box_cells(grid: &Grid, n: f64) -> Result<usize> {
    let m = (n / grid.dx).round();
    if !(m >= 1.0) {
        return domain("box is smaller than one cell");
    }
    let m = m as usize;
    if 2 * m > grid.n_cells {
        return domain(format!("box of {m} cells exceeds half the torus ({} cells)", grid.n_cells));
    }
    Ok(m)
}

/// Mean of `g` over the box of `m` cells per axis whose first corner is `corner`.
fn box_mean(grid: &Grid, g: &[f64], m: usize, corner: &[usize]) -> f64 {
    let d = grid.d;
    let n = grid.n_cells;
    let mut idx = vec![0usize; d];
    let mut acc = 0.0;
    loop {
        let mut cell = 0;
        for j in 0..d {
            cell = cell * n + (corner[j] + idx[j]) % n;
        }
        acc += g[cell];
        let mut j = d;
        loop {
            if j == 0 {
                return acc / (m as f64).powi(d as i32);
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Means over the disjoint boxes tiling the torus.
fn tile_means(grid: &Grid, g: &[f64], m: usize) -> Vec<f64> {
    let per_axis = grid.n_cells / m;
    let d = grid.d;
    let count = per_axis.pow(d as u32);
    (0..count)
        .map(|t| {
            let mut rest = t;
            let mut corner = vec![0usize; d];
            for j in (0..d).rev() {
                corner[j] = (rest % per_axis) * m;
                rest /= per_axis;
            }
            box_mean(grid, g, m, &corner)
        })
        .collect()
}

/// `(1/N^d) ∫_{[0,N]^d} ∏_j g_j(u(x + ζ^j)) dx` as a Riemann sum.
pub fn spatial_average(grid: &Grid, values: &[f64], avg: &AverageSpec, n: f64) -> Result<(f64, Vec<String>)> {
    let m = box_cells(grid, n)?;
    let (g, warnings) = avg.evaluate(grid, values)?;
    Ok((box_mean(grid, &g, m, &vec![0; grid.d]), warnings))
}

/// Variance across replicas of per-box values (each replica contributes
/// `b` values), with a leave-one-replica-out jackknife error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub var: f64,
    pub stderr: f64,
}

pub fn pooled_variance(groups: &[Vec<f64>]) -> Result<VarianceEstimate> {
    let r = groups.len();
    if r < 2 {
        return Err(Error::Insufficient("variance needs at least two replicas".into()));
    }
    let n = groups.iter().map(|g| g.len() as f64).sum::<f64>();
    let s1 = groups.iter().flatten().sum::<f64>();
    let var_of = |n: f64, s1: f64, s2: f64| {
        let m = s1 / n;
        ((s2 / n - m * m) * n / (n - 1.0)).max(0.0)
    };
    // centring on the pooled mean first limits cancellation
    let mean = s1 / n;
    let centred: Vec<(f64, f64, f64)> = groups
        .iter()
        .map(|g| (g.len() as f64, g.iter().map(|v| v - mean).sum::<f64>(), g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()))
        .collect();
    let (_, c1, c2) = centred.iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let var = var_of(n, c1, c2);
    let rf = r as f64;
    let loo: Vec<f64> = centred.iter().map(|(k, a, b)| var_of(n - k, c1 - a, c2 - b)).collect();
    let lm = loo.iter().sum::<f64>() / rf;
    let jk = ((rf - 1.0) / rf * loo.iter().map(|v| (v - lm).powi(2)).sum::<f64>()).sqrt();
    Ok(VarianceEstimate { var, stderr: jk })
}

/// Batch-means standard error of the pooled variance, replicas split into
/// `batches` contiguous groups.
pub fn batch_means_stderr(groups: &[Vec<f64>], batches: usize) -> Result<f64> {
    let per = groups.len() / batches;
    if batches < 2 || per < 2 {
        return Err(Error::Insufficient("too few replicas per batch".into()));
    }
    let vals: Vec<f64> = (0..batches).map(|b| pooled_variance(&groups[b * per..(b + 1) * per]).map(|v| v.var)).collect::<Result<_>>()?;
    let m = vals.iter().sum::<f64>() / batches as f64;
    let s2 = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    Ok((s2 / batches as f64).sqrt())
}

/// Per replica, the box averages over all disjoint tiles of side `n`.
pub fn tile_averages(grid: &Grid, fields: &[&[f64]], avg: &AverageSpec, n: f64) -> Result<Vec<Vec<f64>>> {
    let m = box_cells(grid, n)?;
    fields.iter().map(|f| avg.evaluate(grid, f).map(|(g, _)| tile_means(grid, &g, m))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareRow {
    pub n: f64,
    pub var: f64,
    pub stderr: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareCheck {
    pub k: usize,
    pub g_family: String,
    /// Fitted at the smallest `N`.
    pub c: f64,
    pub rows: Vec<PoincareRow>,
    pub pass: bool,
}

pub const MIN_REPLICAS: usize = 1000;

/// Ensemble variance of `A_N` against `C k² f([-N,N]^d) / N^d`, with `C`
/// fitted at the smallest `N`. Tiles of side `N` pool within each replica.
pub fn variance_vs_n(grid: &Grid, fields: &[&[f64]], avg: &AverageSpec, n_values: &[f64], kernel: &KernelSpec) -> Result<PoincareCheck> {
    if fields.len() < MIN_REPLICAS {
        return Err(Error::Insufficient(format!("variance_vs_n needs at least {MIN_REPLICAS} replicas, got {}", fields.len())));
    }
    poincare_rows(grid, fields, avg, n_values, kernel)
}

pub(crate) fn poincare_rows(grid: &Grid, fields: &[&[f64]], avg: &AverageSpec, n_values: &[f64], kernel: &KernelSpec) -> Result<PoincareCheck> {
    if n_values.is_empty() {
        return domain("need at least one N");
    }
    let k = avg.k() as f64;
    let mut rows = Vec::with_capacity(n_values.len());
    let mut c = f64::NAN;
    for &n in n_values {
        let v = pooled_variance(&tile_averages(grid, fields, avg, n)?)?;
        let shape = k * k * box_mass(kernel, n)? / n.powi(grid.d as i32);
        if c.is_nan() {
            c = v.var / shape;
        }
        let bound = c * shape;
        let ratio = if bound > 0.0 { v.var / bound } else if v.var == 0.0 { 1.0 } else { f64::INFINITY };
        rows.push(PoincareRow { n, var: v.var, stderr: v.stderr, bound, ratio });
    }
    let pass = rows.iter().all(|r| r.ratio.is_finite() && r.var <= r.bound + 3.0 * r.stderr);
    Ok(PoincareCheck { k: avg.k(), g_family: avg.label(), c, rows, pass })
}

pub fn write_poincare_csv<W: Write>(mut w: W, checks: &[(usize, &PoincareCheck)]) -> Result<()> {
    writeln!(w, "{CSV_SCHEMA_POINCARE}")?;
    writeln!(w, "N,k,g_family,shift_id,var,stderr,bound,ratio")?;
    for (shift_id, c) in checks {
        for r in &c.rows {
            writeln!(w, "{},{},{},{},{:e},{:e},{:e},{:e}", r.n, c.k, c.g_family, shift_id, r.var, r.stderr, r.bound, r.ratio)?;
        }
    }
    Ok(())
}

/// The default suite: four `g` families at `k = 1`, and two products at
/// `k = 2` under two shift patterns.
pub fn default_suite(grid: &Grid) -> Vec<AverageSpec> {
    let d = grid.d;
    let zero = vec![0.0; d];
    let along = |c: f64| {
        let mut s = vec![0.0; d];
        s[0] = c * grid.dx;
        s
    };
    let one = |g: GFamily| AverageSpec::single(d, g);
    let two = |g1: GFamily, g2: GFamily, shift: Vec<f64>| AverageSpec { factors: vec![Factor { shift: zero.clone(), g: g1 }, Factor { shift, g: g2 }], normalize: false };
    let mut suite = vec![
        one(GFamily::IdentityMinus1),
        one(GFamily::Clip01 { a: 1.0 }),
        one(GFamily::Cosine { z: 1.0 }),
        one(GFamily::Sine { z: 1.0 }),
    ];
    for c in [1.0, 4.0] {
        suite.push(two(GFamily::IdentityMinus1, GFamily::Clip01 { a: 1.0 }, along(c)));
        suite.push(two(GFamily::Cosine { z: 1.0 }, GFamily::Sine { z: 1.0 }, along(c)));
    }
    suite
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErgodicityDecision {
    ConsistentWithErgodic,
    Inconsistent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteMember {
    pub label: String,
    pub k: usize,
    pub n_values: Vec<f64>,
    pub var: Vec<f64>,
    pub stderr: Vec<f64>,
    pub decays: bool,
    pub stabilizes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub decision: ErgodicityDecision,
    pub members: Vec<SuiteMember>,
}

/// Variance sequence that neither falls by the decay rule nor moves: log
/// slope above `-0.25` and a last value above five standard errors.
fn stalls(n: &[f64], var: &[f64], stderr: &[f64]) -> bool {
    let last = var.len() - 1;
    if !(var[last] > 5.0 * stderr[last]) || var.iter().any(|v| *v <= 0.0) {
        return false;
    }
    let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = var.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y).0 > -0.25
}

/// Every member decays: consistent with ergodicity. Any member stalls at a
/// level well above its error: inconsistent. Otherwise inconclusive.
pub fn ergodicity_test(grid: &Grid, fields: &[&[f64]], suite: &[AverageSpec], n_values: &[f64]) -> Result<ErgodicityReport> {
    if suite.is_empty() || n_values.len() < 2 {
        return domain("ergodicity test needs a suite and at least two N");
    }
    let mut members = Vec::with_capacity(suite.len());
    for avg in suite {
        let mut var = Vec::new();
        let mut stderr = Vec::new();
        for &n in n_values {
            let v = pooled_variance(&tile_averages(grid, fields, avg, n)?)?;
            var.push(v.var);
            stderr.push(v.stderr);
        }
        let st = stalls(n_values, &var, &stderr);
        members.push(SuiteMember { label: avg.label(), k: avg.k(), n_values: n_values.to_vec(), decays: !st && decays(n_values, &var), stabilizes: st, var, stderr });
    }
    let decision = if members.iter().any(|m| m.stabilizes) {
        ErgodicityDecision::Inconsistent
    } else if members.iter().all(|m| m.decays) {
        ErgodicityDecision::ConsistentWithErgodic
    } else {
        ErgodicityDecision::Inconclusive
    };
    Ok(ErgodicityReport { decision, members })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCurve {
    pub points: Vec<CovPoint>,
    /// Slope of `log cov` against lag (in length units) over the lags
    /// where the covariance exceeds twice its error; `NaN` with fewer than
    /// two such lags.
    pub slope: f64,
}

/// `Cov[g(u(x)), g(u(x + ℓ e₁))]` averaged over base points `x`.
pub fn covariance_decay(grid: &Grid, fields: &[&[f64]], g: &GFamily, lags: &[usize]) -> Result<CovarianceCurve> {
    g.validate()?;
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if 4 * max_lag > grid.n_cells {
        return domain("lags must stay within a quarter of the torus");
    }
    let mut acc = LagCovariance::new(grid, max_lag)?;
    let mut buf = vec![0.0; grid.cells()];
    for f in fields {
        for (b, v) in buf.iter_mut().zip(f.iter()) {
            *b = g.eval(*v);
        }
        acc.push(&buf);
    }
    let all = acc.finish()?;
    let points: Vec<CovPoint> = lags.iter().map(|l| all[*l]).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.cov > 2.0 * p.stderr && p.cov > 0.0).map(|p| (p.lag as f64 * grid.dx, p.cov.ln())).unzip();
    let slope = if x.len() >= 2 { linear_fit(&x, &y).0 } else { f64::NAN };
    Ok(CovarianceCurve { points, slope })
}

pub fn write_covariance_csv<W: Write>(mut w: W, curve: &CovarianceCurve) -> Result<()> {
    writeln!(w, "{CSV_SCHEMA_COVARIANCE}")?;
    writeln!(w, "lag,cov,stderr")?;
    for p in &curve.points {
        writeln!(w, "{},{:e},{:e}", p.lag, p.cov, p.stderr)?;
    }
    Ok(())
}

/// Mergeable running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Family;
    use crate::noise::{fill_standard_normal, SeedPath};
    use crate::solver::{solve, RunConfig, SigmaSpec};
    use crate::spectral::gaussian_covariance;
    use approx::assert_relative_eq;

    fn iid_fields(grid: &Grid, r: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..r)
            .map(|i| {
                let mut v = vec![0.0; grid.cells()];
                fill_standard_normal(seed, SeedPath { replica: i as u64, step: 0 }, &mut v);
                v
            })
            .collect()
    }

    #[test]
    fn trivial_averages() {
        let grid = Grid::new(1, 64, 0.5, 0.1).unwrap();
        let ones = vec![1.0; 64];
        let (a, _) = spatial_average(&grid, &ones, &AverageSpec::single(1, GFamily::IdentityMinus1), 8.0).unwrap();
        assert_eq!(a, 0.0);
        let (a, _) = spatial_average(&grid, &ones, &AverageSpec::single(1, GFamily::Clip01 { a: 0.0 }), 8.0).unwrap();
        assert_eq!(a, 1.0);
        assert!(spatial_average(&grid, &ones, &AverageSpec::single(1, GFamily::IdentityMinus1), 20.0).is_err());
    }

    #[test]
    fn shifts_and_snapping() {
        let grid = Grid::new(1, 8, 1.0, 0.1).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let avg = AverageSpec {
            factors: vec![Factor { shift: vec![0.0], g: GFamily::IdentityMinus1 }, Factor { shift: vec![1.2], g: GFamily::IdentityMinus1 }],
            normalize: false,
        };
        let (a, w) = spatial_average(&grid, &v, &avg, 2.0).unwrap();
        assert_eq!(a, ((-1.0) * 0.0 + 0.0 * 1.0) / 2.0);
        assert_eq!(w.len(), 1);
        let grid2 = Grid::new(2, 8, 1.0, 0.1).unwrap();
        let v2: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let (a, _) = spatial_average(&grid2, &v2, &AverageSpec::single(2, GFamily::IdentityMinus1), 2.0).unwrap();
        assert_eq!(a, (0.0 + 1.0 + 8.0 + 9.0) / 4.0 - 1.0);
    }

    #[test]
    fn normalization() {
        let g = GFamily::Cosine { z: 2.0 };
        let avg = AverageSpec::single(1, g).normalized();
        let grid = Grid::new(1, 8, 1.0, 0.1).unwrap();
        let (v, _) = avg.evaluate(&grid, &[0.0, 0.5, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for (w, x) in v.iter().zip([0.0f64, 0.5, 1.0, 2.0]) {
            assert_relative_eq!(*w, ((2.0 * x).cos() - 1.0) / 2.0, epsilon = 1e-15);
        }
        assert!(GFamily::Custom { knots: vec![0.0, 1.0], values: vec![0.0, 2.0], lip: 1.0 }.validate().is_err());
    }

    #[test]
    fn pooled_variance_of_iid() {
        let grid = Grid::new(1, 64, 1.0, 0.1).unwrap();
        let fields = iid_fields(&grid, 400, 1);
        let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
        let t = tile_averages(&grid, &refs, &AverageSpec::single(1, GFamily::IdentityMinus1), 8.0).unwrap();
        let v = pooled_variance(&t).unwrap();
        assert!((v.var - 1.0 / 8.0).abs() < 4.0 * v.stderr, "{v:?}");
        let bm = batch_means_stderr(&t, 20).unwrap();
        assert!((bm / v.stderr - 1.0).abs() < 0.35, "{bm} {}", v.stderr);
    }

    #[test]
    fn moments_merge() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut a = Moments::default();
        let mut b = Moments::default();
        let mut all = Moments::default();
        for (i, x) in xs.iter().enumerate() {
            all.push(*x);
            if i < 30 { a.push(*x) } else { b.push(*x) }
        }
        let m = a.merge(&b);
        assert_relative_eq!(m.mean, all.mean, epsilon = 1e-14);
        assert_relative_eq!(m.variance(), all.variance(), epsilon = 1e-13);
    }

    #[test]
    fn iid_fields_are_ergodic_and_constant_fields_are_not() {
        let grid = Grid::new(1, 256, 1.0, 0.1).unwrap();
        let suite = default_suite(&grid);
        let fields = iid_fields(&grid, 300, 2);
        let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
        let ns = [8.0, 16.0, 32.0, 64.0, 128.0];
        let r = ergodicity_test(&grid, &refs, &suite, &ns).unwrap();
        assert_eq!(r.decision, ErgodicityDecision::ConsistentWithErgodic, "{r:#?}");
        let rn = ergodicity_test(&grid, &refs, &suite.iter().map(|a| a.normalized()).collect::<Vec<_>>(), &ns).unwrap();
        assert_eq!(rn.decision, r.decision);
        let consts: Vec<Vec<f64>> = fields.iter().map(|v| vec![1.0 + 0.5 * v[0]; 256]).collect();
        let refs: Vec<&[f64]> = consts.iter().map(|v| v.as_slice()).collect();
        let r = ergodicity_test(&grid, &refs, &suite, &ns).unwrap();
        assert_eq!(r.decision, ErgodicityDecision::Inconsistent);
        let ones = vec![vec![1.0; 256]; 10];
        let refs: Vec<&[f64]> = ones.iter().map(|v| v.as_slice()).collect();
        let r = ergodicity_test(&grid, &refs, &suite, &ns).unwrap();
        assert_eq!(r.decision, ErgodicityDecision::ConsistentWithErgodic);
    }

    #[test]
    fn poincare_for_iid_white() {
        let grid = Grid::new(1, 512, 1.0, 0.1).unwrap();
        let fields = iid_fields(&grid, 1000, 3);
        let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
        let white = KernelSpec::new(1, Family::WhiteNoise).unwrap();
        let c = variance_vs_n(&grid, &refs, &AverageSpec::single(1, GFamily::IdentityMinus1), &[16.0, 32.0, 64.0, 128.0], &white).unwrap();
        assert!(c.pass, "{c:#?}");
        assert_relative_eq!(c.c, 1.0, max_relative = 0.05);
        assert!(variance_vs_n(&grid, &refs[..10], &AverageSpec::single(1, GFamily::IdentityMinus1), &[16.0], &white).is_err());
    }

    #[test]
    fn additive_covariance_matches_gaussian_closed_form() {
        let grid = Grid::new(1, 256, 0.1, 0.005).unwrap();
        let white = KernelSpec::new(1, Family::WhiteNoise).unwrap();
        let cfg = RunConfig::new(grid, white.clone(), SigmaSpec::constant(1.0), 0.5, 400, 4);
        let run = solve(&cfg).unwrap();
        let refs = run.at(0);
        let curve = covariance_decay(&grid, &refs, &GFamily::IdentityMinus1, &[0, 2, 5, 10, 20]).unwrap();
        for p in &curve.points {
            let oracle = gaussian_covariance(&white, 1.0, 0.5, &[p.lag as f64 * 0.1]).unwrap();
            assert!((p.cov - oracle).abs() < 4.0 * p.stderr + 0.06 * oracle, "{p:?} vs {oracle}");
        }
        assert!(curve.slope < 0.0);
        // E[cos(u(x)) sin(u(x+ℓ))] for a centred-at-1 Gaussian pair
        let lag = 3usize;
        let s2 = gaussian_covariance(&white, 1.0, 0.5, &[0.0]).unwrap();
        let c = gaussian_covariance(&white, 1.0, 0.5, &[lag as f64 * 0.1]).unwrap();
        let avg = AverageSpec {
            factors: vec![Factor { shift: vec![0.0], g: GFamily::Cosine { z: 1.0 } }, Factor { shift: vec![lag as f64 * 0.1], g: GFamily::Sine { z: 1.0 } }],
            normalize: false,
        };
        let oracle = (-(s2 + c)).exp() * 2f64.sin() / 2.0;
        let vals: Vec<f64> = refs.iter().map(|f| spatial_average(&grid, f, &avg, 12.8).unwrap().0).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt() / (vals.len() as f64).sqrt();
        assert!((m - oracle).abs() < 4.0 * sd + 0.03 * oracle.abs(), "{m} vs {oracle} ± {sd}");
    }
}
