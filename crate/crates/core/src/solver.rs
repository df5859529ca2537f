//! Spectral exponential-Euler solver for `∂ₜu = ½Δu + σ(u)η` on a periodic
//! lattice, the fixed-noise Picard iteration, and the constant-correlation
//! reference SDE.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fft::LatticeFft;
use crate::kernels::{dalang_finite, gp_any, Family, KernelSpec, Role};
use crate::noise::{fill_standard_normal, stream, white_scale, Coloring, Grid, NoiseSlice, SeedPath, Workspace};

pub const SCHEME: &str = "spectral-exponential-euler";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SigmaFamily {
    Constant { c0: f64 },
    /// `σ(u) = u`.
    Linear,
    /// `σ(u) = max(0, a + b u)`.
    AffineClipped { a: f64, b: f64 },
    /// Piecewise linear through `(knots[i], values[i])`, flat outside.
    Custom { knots: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSpec {
    pub family: SigmaFamily,
    pub lip: f64,
    pub sigma0: f64,
}

impl SigmaSpec {
    /// Derives `lip` and `σ(0)`; for custom tables `declared_lip` must bound
    /// every slope.
    pub fn new(family: SigmaFamily, declared_lip: Option<f64>) -> Result<Self> {
        let (lip, sigma0) = match &family {
            SigmaFamily::Constant { c0 } => {
                if !c0.is_finite() {
                    return domain("c0 must be finite");
                }
                (0.0, *c0)
            }
            SigmaFamily::Linear => (1.0, 0.0),
            SigmaFamily::AffineClipped { a, b } => {
                if !(a.is_finite() && b.is_finite()) || *b == 0.0 {
                    return domain("affine sigma needs finite a and nonzero b");
                }
                (b.abs(), a.max(0.0))
            }
            SigmaFamily::Custom { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return domain("custom sigma needs matching knots and values, at least two");
                }
                if knots.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !v.is_finite()) {
                    return domain("custom sigma knots must increase and values be finite");
                }
                let slope = knots.windows(2).zip(values.windows(2)).map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs()).fold(0.0, f64::max);
                if slope == 0.0 {
                    return domain("custom sigma must not be constant; use the constant family");
                }
                let lip = match declared_lip {
                    Some(l) if l + 1e-12 * l.max(1.0) < slope => {
                        return domain(format!("custom sigma has slope {slope} above the declared Lipschitz constant {l}"));
                    }
                    Some(l) => l,
                    None => slope,
                };
                (lip, custom_eval(knots, values, 0.0))
            }
        };
        if let (Some(l), false) = (declared_lip, matches!(family, SigmaFamily::Custom { .. })) {
            if (l - lip).abs() > 1e-12 * lip.max(1.0) {
                return domain(format!("declared Lipschitz constant {l} differs from {lip}"));
            }
        }
        Ok(SigmaSpec { family, lip, sigma0 })
    }

    pub fn constant(c0: f64) -> Self {
        SigmaSpec::new(SigmaFamily::Constant { c0 }, None).expect("finite constant")
    }

    pub fn linear() -> Self {
        SigmaSpec::new(SigmaFamily::Linear, None).unwrap()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, SigmaFamily::Constant { .. })
    }

    pub fn eval(&self, u: f64) -> f64 {
        match &self.family {
            SigmaFamily::Constant { c0 } => *c0,
            SigmaFamily::Linear => u,
            SigmaFamily::AffineClipped { a, b } => (a + b * u).max(0.0),
            SigmaFamily::Custom { knots, values } => custom_eval(knots, values, u),
        }
    }

    /// `w[i] += σ(u[i]) · z[i] · c`.
    fn add_noise(&self, u: &[f64], z: &[f64], c: f64, w: &mut [f64]) {
        match &self.family {
            SigmaFamily::Constant { c0 } => {
                let s = c0 * c;
                for ((w, u), z) in w.iter_mut().zip(u).zip(z) {
                    *w = u + s * z;
                }
            }
            SigmaFamily::Linear => {
                for ((w, u), z) in w.iter_mut().zip(u).zip(z) {
                    *w = u + u * (z * c);
                }
            }
            _ => {
                for ((w, u), z) in w.iter_mut().zip(u).zip(z) {
                    *w = u + self.eval(*u) * (z * c);
                }
            }
        }
    }
}

fn custom_eval(knots: &[f64], values: &[f64], u: f64) -> f64 {
    if u <= knots[0] {
        return values[0];
    }
    let last = knots.len() - 1;
    if u >= knots[last] {
        return values[last];
    }
    let i = knots.partition_point(|k| *k <= u) - 1;
    let w = (u - knots[i]) / (knots[i + 1] - knots[i]);
    values[i] * (1.0 - w) + values[i + 1] * w
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub kernel: KernelSpec,
    pub sigma: SigmaSpec,
    pub seed: u64,
    pub replica: u64,
    pub scheme: &'static str,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: Grid,
    pub t: f64,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Shared per-run data: coloring filter and heat factors.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid,
    coloring: Coloring,
    fft: LatticeFft,
    heat: Vec<f64>,
    sigma: SigmaSpec,
    /// Multiplies a standard normal cell to give `η dt`.
    noise_scale: f64,
}

fn is_constant(v: &[f64]) -> bool {
    let first = v[0];
    v.iter().all(|x| x.to_bits() == first.to_bits())
}

impl Stepper {
    pub fn new(grid: &Grid, dt: f64, kernel: &KernelSpec, sigma: &SigmaSpec) -> Result<Self> {
        let mut g = *grid;
        g.dt = dt;
        let coloring = Coloring::for_kernel(&g, kernel)?;
        Self::with_coloring(&g, coloring, sigma)
    }

    pub fn with_coloring(grid: &Grid, coloring: Coloring, sigma: &SigmaSpec) -> Result<Self> {
        grid.validate()?;
        let fft = LatticeFft::new(grid.d, grid.n_cells);
        let dt = grid.dt;
        let norm = 1.0 / fft.len() as f64;
        let heat = fft.k_squared(grid.dx).into_iter().map(|k2| (-k2 * dt / 2.0).exp() * norm).collect();
        Ok(Stepper { grid: *grid, coloring, fft, heat, sigma: sigma.clone(), noise_scale: white_scale(grid) * dt })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coloring(&self) -> &Coloring {
        &self.coloring
    }

    /// Heat semigroup applied to `w`, written into `u`.
    fn heat_solo(&self, w: &[f64], u: &mut [f64], ws: &mut Workspace) {
        if is_constant(w) {
            u.copy_from_slice(w);
            return;
        }
        let (buf, work) = ws.lattice(w.len());
        for (b, v) in buf.iter_mut().zip(w.iter()) {
            *b = Complex64::new(*v, 0.0);
        }
        self.fft.forward(buf, work);
        for (b, h) in buf.iter_mut().zip(&self.heat) {
            *b *= *h;
        }
        self.fft.inverse_unscaled(buf, work);
        for (v, b) in u.iter_mut().zip(buf.iter()) {
            *v = b.re;
        }
    }

    fn heat_pair(&self, wa: &[f64], wb: &[f64], ua: &mut [f64], ub: &mut [f64], ws: &mut Workspace) {
        match (is_constant(wa), is_constant(wb)) {
            (true, true) => {
                ua.copy_from_slice(wa);
                ub.copy_from_slice(wb);
            }
            (true, false) => {
                ua.copy_from_slice(wa);
                self.heat_solo(wb, ub, ws);
            }
            (false, true) => {
                self.heat_solo(wa, ua, ws);
                ub.copy_from_slice(wb);
            }
            (false, false) => {
                let (buf, work) = ws.lattice(wa.len());
                for ((c, x), y) in buf.iter_mut().zip(wa.iter()).zip(wb.iter()) {
                    *c = Complex64::new(*x, *y);
                }
                self.fft.forward(buf, work);
                for (c, h) in buf.iter_mut().zip(&self.heat) {
                    *c *= *h;
                }
                self.fft.inverse_unscaled(buf, work);
                for ((c, x), y) in buf.iter().zip(ua.iter_mut()).zip(ub.iter_mut()) {
                    *x = c.re;
                    *y = c.im;
                }
            }
        }
    }

    /// One step given standard-normal white cells `z` (overwritten).
    pub fn advance(&self, u: &mut [f64], z: &mut [f64], w: &mut [f64], ws: &mut Workspace) {
        self.coloring.apply(z, ws);
        self.sigma.add_noise(u, z, self.noise_scale, w);
        self.heat_solo(w, u, ws);
    }

    /// Two independent replicas stepped with shared transforms.
    #[allow(clippy::too_many_arguments)]
    pub fn advance_pair(&self, ua: &mut [f64], ub: &mut [f64], za: &mut [f64], zb: &mut [f64], wa: &mut [f64], wb: &mut [f64], ws: &mut Workspace) {
        self.coloring.apply_pair(za, zb, ws);
        self.sigma.add_noise(ua, za, self.noise_scale, wa);
        self.sigma.add_noise(ub, zb, self.noise_scale, wb);
        self.heat_pair(wa, wb, ua, ub, ws);
    }
}

/// Exponential-Euler update of one field with a given noise slice:
/// `û ← e^{-‖k‖² dt/2} (û + (σ(u) η dt)^)`.
pub fn step(field: &SolutionField, noise: &NoiseSlice, sigma: &SigmaSpec) -> Result<SolutionField> {
    if noise.grid != field.grid {
        return domain("noise slice and field live on different grids");
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return domain("field has non-finite values");
    }
    let grid = field.grid;
    let stepper = Stepper::with_coloring(&grid, Coloring::identity(&grid), sigma)?;
    let mut w = vec![0.0; grid.cells()];
    sigma.add_noise(&field.values, &noise.values, grid.dt, &mut w);
    let mut u = vec![0.0; grid.cells()];
    stepper.heat_solo(&w, &mut u, &mut Workspace::default());
    let mut out = field.clone();
    out.t += grid.dt;
    out.provenance.steps += 1;
    out.provenance.sigma = sigma.clone();
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::BlowUp { replica: field.provenance.replica, step: out.provenance.steps, detail: format!("cell {i} became non-finite") });
    }
    out.values = u;
    Ok(out)
}

/// Well-posedness gate: Dalang for correlations, `G_p` for base kernels.
/// Bounded tables with compact support lie in `L²` and pass.
pub fn gate(kernel: &KernelSpec) -> Result<()> {
    match kernel.role() {
        Role::F => {
            if dalang_finite(kernel) {
                Ok(())
            } else {
                Err(Error::Gate(format!("Dalang integral diverges for {} in d={}", kernel.family_name(), kernel.d)))
            }
        }
        Role::H => match (gp_any(kernel)?, &kernel.family) {
            (Some(true), _) | (None, Family::TableH { .. }) => Ok(()),
            _ => Err(Error::Gate(format!("{} is in no G_p class in d={}", kernel.family_name(), kernel.d))),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: Grid,
    pub kernel: KernelSpec,
    pub sigma: SigmaSpec,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    /// Initial data; `None` means `u₀ ≡ 1`.
    pub u0: Option<Vec<f64>>,
    pub threads: usize,
    pub unsafe_skip_gate: bool,
}

impl RunConfig {
    pub fn new(grid: Grid, kernel: KernelSpec, sigma: SigmaSpec, t_final: f64, replicas: u64, seed: u64) -> Self {
        RunConfig { grid, kernel, sigma, t_final, snapshots: vec![t_final], replicas, seed, u0: None, threads: 1, unsafe_skip_gate: false }
    }

    /// Effective time step (the largest `≤ grid.dt` dividing `t_final`) and
    /// step count.
    pub fn schedule(&self) -> Result<(f64, usize)> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return domain("t_final must be positive");
        }
        let steps = (self.t_final / self.grid.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok((self.t_final / steps as f64, steps))
    }

    fn snapshot_steps(&self, dt: f64, steps: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.snapshots.len());
        for &s in &self.snapshots {
            if !(s >= 0.0 && s <= self.t_final * (1.0 + 1e-12)) {
                return domain(format!("snapshot time {s} outside [0, {}]", self.t_final));
            }
            out.push(((s / dt).round() as usize).min(steps));
        }
        if out.windows(2).any(|w| w[1] < w[0]) {
            return domain("snapshot times must be nondecreasing");
        }
        Ok(out)
    }

    pub fn check(&self) -> Result<()> {
        self.grid.validate()?;
        if self.kernel.d != self.grid.d {
            return domain("kernel and grid dimensions differ");
        }
        if self.replicas == 0 {
            return domain("need at least one replica");
        }
        if let Some(u0) = &self.u0 {
            if u0.len() != self.grid.cells() || u0.iter().any(|v| !v.is_finite()) {
                return domain("initial data must be finite and match the grid");
            }
        }
        if !self.unsafe_skip_gate {
            gate(&self.kernel)?;
            if self.grid.dt > self.grid.dx * self.grid.dx / 2.0 * (1.0 + 1e-12) {
                return Err(Error::Gate(format!("dt = {} exceeds the guard dx²/2 = {}", self.grid.dt, self.grid.dx * self.grid.dx / 2.0)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub values: Vec<f64>,
}

/// Summary of a run independent of what the observer kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dt: f64,
    pub steps: usize,
    pub replicas: u64,
    pub snapshot_times: Vec<f64>,
    /// Per snapshot: mean over replicas and cells.
    pub mean: Vec<f64>,
    /// Per snapshot: pointwise variance, averaged over cells.
    pub variance: Vec<f64>,
    /// Per snapshot: replicas with some cell `≤ 0`.
    pub nonpositive_replicas: Vec<u64>,
    pub warnings: Vec<String>,
}

fn replica_stats(snaps: &[Snapshot]) -> Vec<(f64, f64, bool)> {
    snaps
        .iter()
        .map(|s| {
            let n = s.values.len() as f64;
            let m = s.values.iter().sum::<f64>() / n;
            let m2 = s.values.iter().map(|v| v * v).sum::<f64>() / n;
            (m, m2, s.values.iter().any(|v| *v <= 0.0))
        })
        .collect()
}

/// Runs every replica and hands its snapshots to `observe`. Results come
/// back in replica order regardless of the worker count. Replicas `2j` and
/// `2j+1` share transforms.
pub fn run_ensemble<T, F>(cfg: &RunConfig, observe: F) -> Result<(Vec<T>, RunSummary)>
where
    T: Send,
    F: Fn(u64, &[Snapshot]) -> T + Sync,
{
    cfg.check()?;
    let (dt, steps) = cfg.schedule()?;
    let snap_steps = cfg.snapshot_steps(dt, steps)?;
    let stepper = Stepper::new(&cfg.grid, dt, &cfg.kernel, &cfg.sigma)?;
    let pairs = cfg.replicas.div_ceil(2);
    let work = |j: u64| -> Result<Vec<(u64, T, Vec<(f64, f64, bool)>)>> {
        let a = 2 * j;
        let b = 2 * j + 1;
        let snaps = if b < cfg.replicas { run_pair(cfg, &stepper, a, Some(b), steps, dt, &snap_steps)? } else { run_pair(cfg, &stepper, a, None, steps, dt, &snap_steps)? };
        Ok(snaps.into_iter().map(|(r, s)| (r, observe(r, &s), replica_stats(&s))).collect())
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let nested: Vec<Result<Vec<(u64, T, Vec<(f64, f64, bool)>)>>> = pool.install(|| (0..pairs).into_par_iter().map(work).collect());
    let mut out = Vec::with_capacity(cfg.replicas as usize);
    let ns = snap_steps.len();
    let mut sum_m = vec![0.0; ns];
    let mut sum_m2 = vec![0.0; ns];
    let mut nonpos = vec![0u64; ns];
    let mut cell_sums: Vec<f64> = vec![0.0; ns];
    for chunk in nested {
        for (_, t, stats) in chunk? {
            for (i, (m, m2, np)) in stats.into_iter().enumerate() {
                sum_m[i] += m;
                sum_m2[i] += m2;
                cell_sums[i] += m;
                nonpos[i] += np as u64;
            }
            out.push(t);
        }
    }
    let r = cfg.replicas as f64;
    let mean: Vec<f64> = sum_m.iter().map(|s| s / r).collect();
    // pointwise variance averaged over cells, up to the mean-field correction
    let variance: Vec<f64> = sum_m2.iter().zip(&mean).map(|(s, m)| (s / r - m * m) * r / (r - 1.0).max(1.0)).collect();
    let mut warnings = stepper.coloring().warnings.clone();
    if cfg.sigma.sigma0 == 0.0 && nonpos.iter().any(|n| *n > 0) {
        warnings.push("some replicas reached nonpositive values".to_string());
    }
    let summary = RunSummary {
        dt,
        steps,
        replicas: cfg.replicas,
        snapshot_times: snap_steps.iter().map(|s| *s as f64 * dt).collect(),
        mean,
        variance,
        nonpositive_replicas: nonpos,
        warnings,
    };
    Ok((out, summary))
}

fn run_pair(cfg: &RunConfig, stepper: &Stepper, a: u64, b: Option<u64>, steps: usize, dt: f64, snap_steps: &[usize]) -> Result<Vec<(u64, Vec<Snapshot>)>> {
    let cells = cfg.grid.cells();
    let init = cfg.u0.clone().unwrap_or_else(|| vec![1.0; cells]);
    let mut ua = init.clone();
    let mut ub = init;
    let mut za = vec![0.0; cells];
    let mut zb = vec![0.0; cells];
    let mut wa = vec![0.0; cells];
    let mut wb = vec![0.0; cells];
    let mut ws = Workspace::default();
    let mut sa = Vec::with_capacity(snap_steps.len());
    let mut sb = Vec::with_capacity(snap_steps.len());
    let mut next = 0;
    let mut take = |m: usize, ua: &[f64], ub: &[f64], next: &mut usize| {
        while *next < snap_steps.len() && snap_steps[*next] == m {
            sa.push(Snapshot { t: m as f64 * dt, step: m, values: ua.to_vec() });
            if b.is_some() {
                sb.push(Snapshot { t: m as f64 * dt, step: m, values: ub.to_vec() });
            }
            *next += 1;
        }
    };
    take(0, &ua, &ub, &mut next);
    for m in 0..steps {
        fill_standard_normal(cfg.seed, SeedPath { replica: a, step: m as u64 }, &mut za);
        match b {
            Some(b) => {
                fill_standard_normal(cfg.seed, SeedPath { replica: b, step: m as u64 }, &mut zb);
                stepper.advance_pair(&mut ua, &mut ub, &mut za, &mut zb, &mut wa, &mut wb, &mut ws);
            }
            None => stepper.advance(&mut ua, &mut za, &mut wa, &mut ws),
        }
        for (r, u) in [(Some(a), &ua), (b, &ub)] {
            if let Some(r) = r {
                if let Some(i) = u.iter().position(|v| !v.is_finite()) {
                    return Err(Error::BlowUp { replica: r, step: m + 1, detail: format!("cell {i} became non-finite") });
                }
            }
        }
        take(m + 1, &ua, &ub, &mut next);
    }
    let mut out = vec![(a, sa)];
    if let Some(b) = b {
        out.push((b, sb));
    }
    Ok(out)
}

/// All replicas with their snapshot fields.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub replicas: u64,
    pub snapshot_times: Vec<f64>,
    /// `fields[replica][snapshot]`.
    pub fields: Vec<Vec<SolutionField>>,
    pub summary: RunSummary,
}

impl EnsembleRun {
    /// Values of every replica at one snapshot.
    pub fn at(&self, snapshot: usize) -> Vec<&[f64]> {
        self.fields.iter().map(|f| f[snapshot].values.as_slice()).collect()
    }
}

pub fn solve(cfg: &RunConfig) -> Result<EnsembleRun> {
    let (fields, summary) = run_ensemble(cfg, |r, snaps| {
        snaps
            .iter()
            .map(|s| SolutionField {
                grid: Grid { dt: summary_dt(cfg), ..cfg.grid },
                t: s.t,
                values: s.values.clone(),
                provenance: Provenance { kernel: cfg.kernel.clone(), sigma: cfg.sigma.clone(), seed: cfg.seed, replica: r, scheme: SCHEME, steps: s.step },
            })
            .collect::<Vec<_>>()
    })?;
    Ok(EnsembleRun { replicas: cfg.replicas, snapshot_times: summary.snapshot_times.clone(), fields, summary })
}

fn summary_dt(cfg: &RunConfig) -> f64 {
    cfg.schedule().map(|(dt, _)| dt).unwrap_or(cfg.grid.dt)
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    /// `u_n(t, ·)` for `n = 0..=iterations`.
    pub iterates: Vec<SolutionField>,
    /// `sup_x |u_{n+1} - u_n|` at the horizon, `n = 0..iterations`.
    pub sup_differences: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Picard iterates on a frozen noise realization. Each iterate solves the
/// linear scheme `v_{m+1} = P(v_m + σ(u_n(t_m)) η_m dt)`, so the fixed point
/// is the time-stepped solution driven by the same noise.
pub fn picard_solve(cfg: &RunConfig, replica: u64, iterations: usize) -> Result<PicardResult> {
    cfg.check()?;
    let (dt, steps) = cfg.schedule()?;
    let stepper = Stepper::new(&cfg.grid, dt, &cfg.kernel, &cfg.sigma)?;
    let cells = cfg.grid.cells();
    let init = cfg.u0.clone().unwrap_or_else(|| vec![1.0; cells]);
    // trajectory of the current iterate at every step
    let mut traj: Vec<Vec<f64>> = vec![init.clone(); steps + 1];
    let mut z = vec![0.0; cells];
    let mut w = vec![0.0; cells];
    let mut ws = Workspace::default();
    let field = |values: Vec<f64>, n: usize| SolutionField {
        grid: Grid { dt, ..cfg.grid },
        t: steps as f64 * dt,
        values,
        provenance: Provenance { kernel: cfg.kernel.clone(), sigma: cfg.sigma.clone(), seed: cfg.seed, replica, scheme: "picard", steps: n },
    };
    let mut iterates = vec![field(traj[steps].clone(), 0)];
    let mut diffs = Vec::new();
    for n in 0..iterations {
        let mut next = Vec::with_capacity(steps + 1);
        let mut v = init.clone();
        next.push(v.clone());
        for m in 0..steps {
            fill_standard_normal(cfg.seed, SeedPath { replica, step: m as u64 }, &mut z);
            stepper.coloring().apply(&mut z, &mut ws);
            let s = stepper.noise_scale;
            for i in 0..cells {
                w[i] = v[i] + cfg.sigma.eval(traj[m][i]) * (z[i] * s);
            }
            stepper.heat_solo(&w, &mut v, &mut ws);
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::BlowUp { replica, step: m + 1, detail: format!("iterate {} cell {i} became non-finite", n + 1) });
            }
            next.push(v.clone());
        }
        let d = next[steps].iter().zip(&traj[steps]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        diffs.push(d);
        traj = next;
        iterates.push(field(traj[steps].clone(), n + 1));
    }
    let mut warnings = Vec::new();
    for k in 4..diffs.len() {
        if diffs[k] > 0.0 && diffs[k] >= diffs[k - 1] {
            warnings.push(format!("successive differences stopped decreasing at iterate {}", k + 1));
            break;
        }
    }
    Ok(PicardResult { iterates, sup_differences: diffs, warnings })
}

/// Stream tag for the reference SDE.
pub const TAG_SDE: u64 = 0x5344_45;

/// Samples of `X_t` for `dX = λ σ(X) dW`, `X₀ = 1`. Linear `σ` uses the exact
/// log-normal law; other `σ` use Euler–Maruyama with `steps` steps.
pub fn nonergodic_reference(sigma: &SigmaSpec, lambda: f64, t: f64, replicas: u64, seed: u64, steps: usize) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return domain("t must be positive");
    }
    if steps == 0 {
        return domain("need at least one step");
    }
    let h = t / steps as f64;
    Ok((0..replicas)
        .map(|r| {
            let mut rng = stream(seed, SeedPath { replica: r, step: 0 }, TAG_SDE);
            match sigma.family {
                SigmaFamily::Linear => {
                    let z: f64 = rng.sample(StandardNormal);
                    (lambda * t.sqrt() * z - lambda * lambda * t / 2.0).exp()
                }
                _ => {
                    let mut x = 1.0;
                    for _ in 0..steps {
                        let z: f64 = rng.sample(StandardNormal);
                        x += lambda * sigma.eval(x) * h.sqrt() * z;
                    }
                    x
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_white;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn white1() -> KernelSpec {
        KernelSpec::new(1, Family::WhiteNoise).unwrap()
    }

    #[test]
    fn sigma_specs() {
        let s = SigmaSpec::new(SigmaFamily::AffineClipped { a: -1.0, b: 2.0 }, None).unwrap();
        assert_eq!((s.lip, s.sigma0), (2.0, 0.0));
        assert_eq!(s.eval(0.25), 0.0);
        assert_eq!(s.eval(1.0), 1.0);
        let c = SigmaSpec::new(SigmaFamily::Custom { knots: vec![0.0, 1.0, 2.0], values: vec![1.0, 2.0, 1.5] }, Some(1.0)).unwrap();
        assert_eq!(c.eval(0.5), 1.5);
        assert_eq!(c.eval(-3.0), 1.0);
        assert_eq!(c.eval(9.0), 1.5);
        assert_eq!(c.sigma0, 1.0);
        assert!(SigmaSpec::new(SigmaFamily::Custom { knots: vec![0.0, 1.0], values: vec![0.0, 3.0] }, Some(2.0)).is_err());
        assert!(SigmaSpec::new(SigmaFamily::Linear, Some(2.0)).is_err());
        assert!(SigmaSpec::constant(1.5).is_constant());
    }

    #[test]
    fn zero_sigma_keeps_ones() {
        let grid = Grid::new(1, 64, 0.1, 0.005).unwrap();
        let mut cfg = RunConfig::new(grid, white1(), SigmaSpec::constant(0.0), 0.5, 3, 1);
        cfg.snapshots = vec![0.1, 0.5];
        let run = solve(&cfg).unwrap();
        for f in run.fields.iter().flatten() {
            assert!(f.values.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn cosine_mode_decays_exactly() {
        let grid = Grid::new(1, 32, 0.25, 0.01).unwrap();
        let l = grid.length();
        let u0: Vec<f64> = (0..32).map(|i| (2.0 * PI * i as f64 * 0.25 / l).cos()).collect();
        let field = SolutionField {
            grid,
            t: 0.0,
            values: u0.clone(),
            provenance: Provenance { kernel: white1(), sigma: SigmaSpec::constant(0.0), seed: 0, replica: 0, scheme: SCHEME, steps: 0 },
        };
        let noise = sample_white(&grid, 0, SeedPath { replica: 0, step: 0 });
        let next = step(&field, &noise, &SigmaSpec::constant(0.0)).unwrap();
        let factor = (-(2.0 * PI / l).powi(2) * grid.dt / 2.0).exp();
        for (a, b) in next.values.iter().zip(&u0) {
            assert_relative_eq!(*a, factor * b, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_step_variance() {
        // one step, σ ≡ c₀, white noise: Var = c₀² dt² · 1/(dt dx) smoothed by one heat factor
        let grid = Grid::new(1, 64, 0.5, 0.1).unwrap();
        let c0 = 1.5;
        let cfg = RunConfig::new(grid, white1(), SigmaSpec::constant(c0), 0.1, 4000, 3);
        let (_, s) = run_ensemble(&cfg, |_, _| ()).unwrap();
        assert_eq!(s.steps, 1);
        let fft = LatticeFft::new(1, 64);
        let oracle = c0 * c0 * grid.dt / grid.dx * fft.k_squared(grid.dx).iter().map(|k2| (-k2 * grid.dt).exp()).sum::<f64>() / 64.0;
        assert_relative_eq!(s.variance[0], oracle, max_relative = 0.03);
    }

    #[test]
    fn pairing_matches_solo() {
        let grid = Grid::new(1, 64, 0.1, 0.005).unwrap();
        let exp = KernelSpec::new(1, Family::ExpDecayF { rate: 2.0 }).unwrap();
        let cfg = RunConfig::new(grid, exp, SigmaSpec::linear(), 0.2, 3, 9);
        let run = solve(&cfg).unwrap();
        // replica 2 runs alone; replicas 0/1 share transforms
        let stepper = Stepper::new(&grid, 0.005, &cfg.kernel, &cfg.sigma).unwrap();
        let (_, steps) = cfg.schedule().unwrap();
        for r in 0..3u64 {
            let mut u = vec![1.0; 64];
            let (mut z, mut w, mut ws) = (vec![0.0; 64], vec![0.0; 64], Workspace::default());
            for m in 0..steps {
                fill_standard_normal(9, SeedPath { replica: r, step: m as u64 }, &mut z);
                stepper.advance(&mut u, &mut z, &mut w, &mut ws);
            }
            for (a, b) in u.iter().zip(&run.fields[r as usize][0].values) {
                assert_relative_eq!(*a, *b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_across_threads() {
        let grid = Grid::new(1, 128, 0.1, 0.005).unwrap();
        let mut cfg = RunConfig::new(grid, white1(), SigmaSpec::linear(), 0.1, 7, 5);
        let a = solve(&cfg).unwrap();
        cfg.threads = 4;
        let b = solve(&cfg).unwrap();
        for (x, y) in a.fields.iter().zip(&b.fields) {
            assert_eq!(x[0].values, y[0].values);
        }
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn white_noise_variance_matches_closed_form() {
        let grid = Grid::new(1, 256, 0.1, 0.005).unwrap();
        let cfg = RunConfig::new(grid, white1(), SigmaSpec::constant(1.0), 1.0, 1000, 2);
        let (_, s) = run_ensemble(&cfg, |_, _| ()).unwrap();
        // discretization bias at dt = dx²/2 is about dx/4 below √(t/π)
        assert_relative_eq!(s.variance[0], (1.0 / PI).sqrt(), max_relative = 0.06);
        assert!((s.mean[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn constant_f_gives_constant_fields() {
        let grid = Grid::new(1, 16, 1.0, 0.01).unwrap();
        let k = KernelSpec::new(1, Family::Constant { level: 0.25 }).unwrap();
        let cfg = RunConfig::new(grid, k, SigmaSpec::linear(), 1.0, 5, 4);
        let run = solve(&cfg).unwrap();
        for f in &run.fields {
            let v = &f[0].values;
            assert!(v.iter().all(|x| *x == v[0]));
            assert!(v[0] != 1.0);
        }
    }

    #[test]
    fn gate_and_guard() {
        let grid = Grid::new(2, 16, 0.1, 0.001).unwrap();
        let w2 = KernelSpec::new(2, Family::WhiteNoise).unwrap();
        let mut cfg = RunConfig::new(grid, w2, SigmaSpec::linear(), 0.01, 1, 1);
        assert!(matches!(solve(&cfg), Err(Error::Gate(_))));
        cfg.unsafe_skip_gate = true;
        assert!(solve(&cfg).is_ok());
        let grid = Grid::new(1, 16, 0.1, 0.01).unwrap();
        let cfg = RunConfig::new(grid, white1(), SigmaSpec::linear(), 0.1, 1, 1);
        assert!(matches!(solve(&cfg), Err(Error::Gate(_))));
        let p = KernelSpec::new(1, Family::PowerH { alpha: 1.5, beta: 1.0, c: 1.0 }).unwrap();
        assert!(gate(&p).is_err());
        assert!(gate(&KernelSpec::new(1, Family::PowerH { alpha: 0.5, beta: 1.0, c: 1.0 }).unwrap()).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let grid = Grid::new(1, 8, 0.5, 0.1).unwrap();
        let mut cfg = RunConfig::new(grid, white1(), SigmaSpec::new(SigmaFamily::AffineClipped { a: 0.0, b: 1e300 }, None).unwrap(), 1.0, 2, 1);
        cfg.unsafe_skip_gate = true;
        cfg.u0 = Some(vec![1e10; 8]);
        match solve(&cfg) {
            Err(Error::BlowUp { step, .. }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn picard_additive_and_linear() {
        let grid = Grid::new(1, 64, 0.1, 0.005).unwrap();
        let cfg = RunConfig::new(grid, white1(), SigmaSpec::constant(0.7), 0.25, 1, 12);
        let p = picard_solve(&cfg, 0, 3).unwrap();
        assert!(p.iterates[0].values.iter().all(|v| *v == 1.0));
        assert_eq!(p.iterates[1].values, p.iterates[2].values);
        assert_eq!(p.sup_differences[1], 0.0);
        let direct = solve(&cfg).unwrap();
        for (a, b) in p.iterates[1].values.iter().zip(&direct.fields[0][0].values) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        let cfg = RunConfig::new(grid, white1(), SigmaSpec::linear(), 0.25, 1, 12);
        let p = picard_solve(&cfg, 0, 25).unwrap();
        let d = &p.sup_differences;
        for k in 3..12 {
            assert!(d[k] < d[k - 1], "{d:?}");
        }
        let direct = solve(&cfg).unwrap();
        for (a, b) in p.iterates[25].values.iter().zip(&direct.fields[0][0].values) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn reference_sde() {
        let lambda: f64 = 0.5;
        let x = nonergodic_reference(&SigmaSpec::linear(), lambda, 1.0, 200_000, 3, 1).unwrap();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert_relative_eq!(v, (lambda * lambda).exp_m1(), max_relative = 0.03);
        let c = SigmaSpec::new(SigmaFamily::AffineClipped { a: -1.0, b: 1.0 }, None).unwrap();
        let x = nonergodic_reference(&c, lambda, 1.0, 100, 3, 50).unwrap();
        assert!(x.iter().all(|v| *v == 1.0));
        let s = SigmaSpec::constant(2.0);
        let t = 1e-3;
        let x = nonergodic_reference(&s, lambda, t, 100_000, 4, 10).unwrap();
        let v = x.iter().map(|a| (a - 1.0).powi(2)).sum::<f64>() / x.len() as f64;
        assert_relative_eq!(v / t, lambda * lambda * 4.0, max_relative = 0.03);
    }
}
