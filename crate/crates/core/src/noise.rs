//! Lattice discretization of space-time noise: white cells, coloring by a base
//! kernel or by a spectral density, covariance estimation, and a raw dump
//! format.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fft::{cell_offsets, LatticeFft};
use crate::kernels::{ball_volume, cube_average, Family, KernelSpec, Role};
use crate::quad::Quadrature;

/// Periodic `n_cells^d` lattice with cell width `dx` and time step `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub d: usize,
    pub n_cells: usize,
    pub dx: f64,
    pub dt: f64,
}

impl Grid {
    pub fn new(d: usize, n_cells: usize, dx: f64, dt: f64) -> Result<Self> {
        let g = Grid { d, n_cells, dx, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return domain(format!("dimension must be 1, 2 or 3, got {}", self.d));
        }
        if self.n_cells < 8 || !self.n_cells.is_power_of_two() {
            return domain(format!("n_cells must be a power of two and at least 8, got {}", self.n_cells));
        }
        if !(self.dx > 0.0 && self.dx.is_finite() && self.dt > 0.0 && self.dt.is_finite()) {
            return domain("dx and dt must be positive");
        }
        Ok(())
    }

    /// Side length of the torus.
    pub fn length(&self) -> f64 {
        self.n_cells as f64 * self.dx
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.n_cells.pow(self.d as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.d as i32)
    }

    /// Row-major index of the cell at `base + lag`, periodic in every axis.
    pub fn shift(&self, base: usize, lag: &[i64]) -> usize {
        let n = self.n_cells as i64;
        let mut idx = 0usize;
        let mut rest = base;
        let mut mul = 1usize;
        for j in (0..self.d).rev() {
            let c = (rest % self.n_cells) as i64;
            rest /= self.n_cells;
            let s = (c + lag[j]).rem_euclid(n) as usize;
            idx += s * mul;
            mul *= self.n_cells;
        }
        idx
    }
}

/// `(replica, step)` coordinates of a slice inside an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub replica: u64,
    pub step: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one `(seed, replica, step, tag)` coordinate.
pub fn stream(seed: u64, path: SeedPath, tag: u64) -> Xoshiro256PlusPlus {
    let k = splitmix(splitmix(splitmix(splitmix(seed) ^ path.replica) ^ path.step) ^ tag);
    Xoshiro256PlusPlus::seed_from_u64(k)
}

/// Stream tag for white noise cells.
pub const TAG_WHITE: u64 = 0x5748_4954;

/// Standard normals for one slice, deterministic in `(seed, path)`.
pub fn fill_standard_normal(seed: u64, path: SeedPath, out: &mut [f64]) {
    let mut rng = stream(seed, path, TAG_WHITE);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlice {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub seed_path: SeedPath,
}

/// Cell-averaged space-time white noise: independent centered Gaussians with
/// variance `1/(dt dx^d)`.
pub fn sample_white(grid: &Grid, seed: u64, path: SeedPath) -> NoiseSlice {
    let mut values = vec![0.0; grid.cells()];
    fill_standard_normal(seed, path, &mut values);
    let s = white_scale(grid);
    for v in values.iter_mut() {
        *v *= s;
    }
    NoiseSlice { grid: *grid, values, seed_path: path }
}

pub fn white_scale(grid: &Grid) -> f64 {
    (grid.dt * grid.cell_volume()).recip().sqrt()
}

#[derive(Debug, Clone)]
enum Filter {
    Identity,
    /// Every cell receives `scale · mean(white)`.
    Mean(f64),
    Fourier(Vec<f64>),
}

/// Linear map from white cells to colored cells with a real, even Fourier
/// multiplier. Built once per grid and kernel, shared across replicas.
#[derive(Debug, Clone)]
pub struct Coloring {
    grid: Grid,
    fft: LatticeFft,
    filter: Filter,
    /// Diagnostics collected while building the filter.
    pub warnings: Vec<String>,
}

fn mode_norms(grid: &Grid, fft: &LatticeFft) -> Vec<f64> {
    fft.k_squared(grid.dx).into_iter().map(f64::sqrt).collect()
}

/// Radius beyond which `|g|` stays below `1e-6 · max|g|` on a coarse scan.
fn decay_radius(g: &dyn Fn(f64) -> f64, dx: f64, reach: f64) -> f64 {
    let steps = 4096;
    let h = reach / steps as f64;
    let vals: Vec<f64> = (0..=steps).map(|i| g((i as f64 * h).max(0.5 * dx)).abs()).collect();
    let peak = vals.iter().cloned().fold(0.0, f64::max);
    let last = vals.iter().rposition(|v| *v > 1e-6 * peak).unwrap_or(0);
    last as f64 * h
}

impl Coloring {
    pub fn identity(grid: &Grid) -> Self {
        Coloring { grid: *grid, fft: LatticeFft::new(grid.d, grid.n_cells), filter: Filter::Identity, warnings: Vec::new() }
    }

    /// Convolution with the grid-sampled base kernel. The origin cell holds
    /// the exact cell average of `h`.
    pub fn by_h(grid: &Grid, spec: &KernelSpec) -> Result<Self> {
        if spec.role() != Role::H {
            return Err(Error::Precondition(format!("coloring by h needs a base kernel, got {}", spec.family_name())));
        }
        if spec.d != grid.d {
            return domain("kernel and grid dimensions differ");
        }
        let fft = LatticeFft::new(grid.d, grid.n_cells);
        let cells = grid.cells();
        let mut buf = vec![Complex64::default(); cells];
        let origin = cube_average(spec, grid.dx / 2.0)?;
        for (idx, v) in buf.iter_mut().enumerate() {
            if idx == 0 {
                *v = Complex64::new(origin, 0.0);
                continue;
            }
            let off = cell_offsets(idx, grid.d, grid.n_cells);
            let value = if grid.d == 1 {
                cell_average_1d(spec, off[0].unsigned_abs() as f64 * grid.dx, grid.dx)
            } else {
                let r = off.iter().map(|o| (*o as f64 * grid.dx).powi(2)).sum::<f64>().sqrt();
                spec.h_radial(r)?
            };
            *v = Complex64::new(value, 0.0);
        }
        let mut scratch = Vec::new();
        fft.forward(&mut buf, &mut scratch);
        let vol = grid.cell_volume();
        let mult: Vec<f64> = buf.iter().map(|c| c.re * vol).collect();
        let mut warnings = Vec::new();
        let reach = decay_radius(&|r| spec.h_radial(r).unwrap_or(0.0), grid.dx, 2.0 * grid.length());
        if 4.0 * reach > grid.length() {
            warnings.push(format!("torus length {} is below four times the decay radius {reach:.4} of h", grid.length()));
        }
        let filter = if mult.iter().all(|m| (m - 1.0).abs() < 1e-12) { Filter::Identity } else { Filter::Fourier(mult) };
        Ok(Coloring { grid: *grid, fft, filter, warnings })
    }

    /// Spectral synthesis with multiplier `√f̂(k)`.
    pub fn by_spectrum(grid: &Grid, spec: &KernelSpec) -> Result<Self> {
        if spec.d != grid.d {
            return domain("kernel and grid dimensions differ");
        }
        let fft = LatticeFft::new(grid.d, grid.n_cells);
        let vol_torus = grid.length().powi(grid.d as i32);
        let mut warnings = Vec::new();
        let filter = match &spec.family {
            Family::WhiteNoise => Filter::Identity,
            Family::Constant { level } => Filter::Mean((level * vol_torus).sqrt()),
            Family::CosineF { wavenumber, offset } => {
                if *offset < 0.0 {
                    return Err(Error::Unsupported("cosine correlation with negative offset is not a spectral density".into()));
                }
                let k = fft.axis_wavenumbers(grid.dx);
                let dk = 2.0 * PI / grid.length();
                let m = (wavenumber / dk).round();
                if ((m * dk) - wavenumber).abs() > 1e-9 * wavenumber {
                    warnings.push(format!("wavenumber {wavenumber} is not a lattice frequency; snapped to {}", m * dk));
                }
                if m as usize >= grid.n_cells / 2 {
                    return domain("wavenumber beyond the lattice Nyquist frequency");
                }
                let mult: Vec<f64> = k
                    .iter()
                    .map(|kk| {
                        let j = (kk / dk).round();
                        if j == 0.0 {
                            (offset * vol_torus).sqrt()
                        } else if j.abs() == m {
                            (vol_torus / 2.0).sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Filter::Fourier(mult)
            }
            _ => {
                if spec.spectral_density(1.0).is_none() {
                    return Err(Error::Unsupported(format!("{} has no closed-form spectral density", spec.family_name())));
                }
                let norms = mode_norms(grid, &fft);
                let dk = 2.0 * PI / grid.length();
                let mult: Vec<f64> = norms
                    .iter()
                    .map(|&k| {
                        if k == 0.0 {
                            zero_mode_density(spec, dk).sqrt()
                        } else {
                            spec.spectral_density(k).unwrap().sqrt()
                        }
                    })
                    .collect();
                if let Some(f) = spec.f_radial(1.0).map(|_| |r: f64| spec.f_radial(r).unwrap()) {
                    let reach = decay_radius(&f, grid.dx, 2.0 * grid.length());
                    if 4.0 * reach > grid.length() {
                        warnings.push(format!("torus length {} is below four times the decay radius {reach:.4} of f", grid.length()));
                    }
                }
                Filter::Fourier(mult)
            }
        };
        Ok(Coloring { grid: *grid, fft, filter, warnings })
    }

    /// Coloring appropriate to the kernel's role.
    pub fn for_kernel(grid: &Grid, spec: &KernelSpec) -> Result<Self> {
        match spec.role() {
            Role::H => Self::by_h(grid, spec),
            Role::F => Self::by_spectrum(grid, spec),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// True when the colored slice is the same value in every cell.
    pub fn is_spatially_constant(&self) -> bool {
        matches!(self.filter, Filter::Mean(_))
    }

    /// Color one white slice in place.
    pub fn apply(&self, values: &mut [f64], ws: &mut Workspace) {
        match &self.filter {
            Filter::Identity => {}
            Filter::Mean(s) => {
                let m = s * values.iter().sum::<f64>() / values.len() as f64;
                values.iter_mut().for_each(|v| *v = m);
            }
            Filter::Fourier(mult) => {
                let n = values.len();
                let (buf, rest) = ws.lattice(n);
                for (b, v) in buf.iter_mut().zip(values.iter()) {
                    *b = Complex64::new(*v, 0.0);
                }
                self.fft.forward(buf, rest);
                for (b, m) in buf.iter_mut().zip(mult) {
                    *b *= *m;
                }
                self.fft.inverse(buf, rest);
                for (v, b) in values.iter_mut().zip(buf.iter()) {
                    *v = b.re;
                }
            }
        }
    }

    /// Color two white slices with one complex transform.
    pub fn apply_pair(&self, a: &mut [f64], b: &mut [f64], ws: &mut Workspace) {
        match &self.filter {
            Filter::Fourier(mult) => {
                let n = a.len();
                let (buf, rest) = ws.lattice(n);
                for ((c, x), y) in buf.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *c = Complex64::new(*x, *y);
                }
                self.fft.forward(buf, rest);
                for (c, m) in buf.iter_mut().zip(mult) {
                    *c *= *m;
                }
                self.fft.inverse(buf, rest);
                for ((c, x), y) in buf.iter().zip(a.iter_mut()).zip(b.iter_mut()) {
                    *x = c.re;
                    *y = c.im;
                }
            }
            _ => {
                self.apply(a, ws);
                self.apply(b, ws);
            }
        }
    }

    pub fn color(&self, white: &NoiseSlice) -> NoiseSlice {
        let mut out = white.clone();
        self.apply(&mut out.values, &mut Workspace::default());
        out
    }
}

/// Reusable buffers for coloring and stepping.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    pub buf: Vec<Complex64>,
    pub work: Vec<Complex64>,
}

impl Workspace {
    pub(crate) fn lattice(&mut self, n: usize) -> (&mut [Complex64], &mut Vec<Complex64>) {
        if self.buf.len() != n {
            self.buf.resize(n, Complex64::default());
        }
        (&mut self.buf, &mut self.work)
    }
}

/// Mean of the radial profile over `[x - dx/2, x + dx/2]`, `x > 0`.
fn cell_average_1d(spec: &KernelSpec, x: f64, dx: f64) -> f64 {
    let (a, b) = (x - dx / 2.0, x + dx / 2.0);
    let mut pts = vec![a, b];
    pts.extend(spec.knots().into_iter().filter(|k| *k > a && *k < b));
    let q = Quadrature { rel_tol: 1e-10, abs_tol: 1e-300, max_intervals: 200 };
    q.integrate_pieces(|r| spec.h_radial(r).unwrap_or(0.0), &pts).value / dx
}

/// Mean of `f̂` over the ball with the volume of one frequency cell.
fn zero_mode_density(spec: &KernelSpec, dk: f64) -> f64 {
    let d = spec.d as f64;
    let rho = (dk.powf(d) / ball_volume(spec.d)).powf(1.0 / d);
    match spec.family {
        Family::RieszF { gamma } => crate::kernels::riesz_constant(spec.d, gamma) * d * rho.powf(gamma - d) / gamma,
        _ => spec.spectral_density(0.0).unwrap(),
    }
}

pub fn color_by_h(white: &NoiseSlice, spec: &KernelSpec) -> Result<NoiseSlice> {
    Ok(Coloring::by_h(&white.grid, spec)?.color(white))
}

pub fn color_by_spectrum(white: &NoiseSlice, spec: &KernelSpec) -> Result<NoiseSlice> {
    Ok(Coloring::by_spectrum(&white.grid, spec)?.color(white))
}

/// One lag of an empirical covariance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovPoint {
    pub lag: usize,
    pub cov: f64,
    pub stderr: f64,
}

/// Streaming cross-replica covariance along the first axis, averaged over
/// base points.
#[derive(Debug, Clone)]
pub struct LagCovariance {
    grid: Grid,
    max_lag: usize,
    count: usize,
    cell_sum: Vec<f64>,
    /// Per slice, per lag: base-point mean of `η_x η_{x+ℓ}`.
    products: Vec<Vec<f64>>,
}

impl LagCovariance {
    pub fn new(grid: &Grid, max_lag: usize) -> Result<Self> {
        if max_lag >= grid.n_cells {
            return domain("max_lag must be below the number of cells per axis");
        }
        Ok(LagCovariance { grid: *grid, max_lag, count: 0, cell_sum: vec![0.0; grid.cells()], products: vec![Vec::new(); max_lag + 1] })
    }

    pub fn push(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.cell_sum.len());
        self.count += 1;
        for (s, v) in self.cell_sum.iter_mut().zip(values) {
            *s += v;
        }
        let mut lag = vec![0i64; self.grid.d];
        for l in 0..=self.max_lag {
            lag[0] = l as i64;
            let mut acc = 0.0;
            for (x, v) in values.iter().enumerate() {
                acc += v * values[self.grid.shift(x, &lag)];
            }
            self.products[l].push(acc / values.len() as f64);
        }
    }

    pub fn finish(&self) -> Result<Vec<CovPoint>> {
        let s = self.count;
        if s < 100 {
            return Err(Error::Insufficient(format!("covariance needs at least 100 slices, got {s}")));
        }
        let sf = s as f64;
        let mean: Vec<f64> = self.cell_sum.iter().map(|v| v / sf).collect();
        let mut lag = vec![0i64; self.grid.d];
        let mut out = Vec::with_capacity(self.max_lag + 1);
        for l in 0..=self.max_lag {
            lag[0] = l as i64;
            let mm = mean.iter().enumerate().map(|(x, m)| m * mean[self.grid.shift(x, &lag)]).sum::<f64>() / mean.len() as f64;
            let p = &self.products[l];
            let pm = p.iter().sum::<f64>() / sf;
            let cov = (pm - mm) * sf / (sf - 1.0);
            let var_p = p.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (sf - 1.0);
            out.push(CovPoint { lag: l, cov, stderr: (var_p / sf).sqrt() * sf / (sf - 1.0) });
        }
        Ok(out)
    }
}

pub fn empirical_covariance(slices: &[NoiseSlice], max_lag: usize) -> Result<Vec<CovPoint>> {
    let Some(first) = slices.first() else {
        return Err(Error::Insufficient("no slices".into()));
    };
    let mut acc = LagCovariance::new(&first.grid, max_lag)?;
    for s in slices {
        if s.grid != first.grid {
            return domain("slices come from different grids");
        }
        acc.push(&s.values);
    }
    acc.finish()
}

pub const DUMP_MAGIC: [u8; 8] = *b"SHELAB01";

/// Writes the 32-byte header followed by the values as little-endian `f64`.
pub fn write_dump<W: Write>(mut w: W, grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.cells() {
        return domain("value count does not match the grid");
    }
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&(grid.d as u32).to_le_bytes())?;
    w.write_all(&(grid.n_cells as u32).to_le_bytes())?;
    w.write_all(&grid.dx.to_le_bytes())?;
    w.write_all(&grid.dt.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<(Grid, Vec<f64>)> {
    let mut head = [0u8; 32];
    r.read_exact(&mut head)?;
    if head[..8] != DUMP_MAGIC {
        return Err(Error::Config("not a lattice dump".into()));
    }
    let d = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let dx = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let dt = f64::from_le_bytes(head[24..32].try_into().unwrap());
    let grid = Grid::new(d, n, dx, dt)?;
    let mut bytes = vec![0u8; grid.cells() * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((grid, values))
}
