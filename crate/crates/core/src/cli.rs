//! Experiment driver behind the `shelab` binary: configuration, the
//! analyze / simulate / islands / report pipelines and their artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::islands::{check_pam, fit_tail, pam_scan, tail_samples, write_scan_csv, write_sup_csv, IslandScan, SupCurve, TailFit};
use crate::kernels::KernelSpec;
use crate::noise::{write_dump, Grid};
use crate::report::{report, KernelReport, DEFAULT_DELTAS};
use crate::solver::{gate, run_ensemble, RunConfig, RunSummary, SigmaFamily, SigmaSpec};
use crate::stats::{
    covariance_decay, default_suite, ergodicity_test, variance_vs_n, write_covariance_csv, write_poincare_csv, AverageSpec, CovarianceCurve, ErgodicityReport, GFamily, PoincareCheck,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaConfig {
    #[serde(flatten)]
    pub family: SigmaFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub sigma: SigmaConfig,
    pub t_final: f64,
    /// Defaults to `[t_final]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    /// Replicas whose snapshots are written as raw dumps.
    #[serde(default)]
    pub dump_replicas: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Report,
    Ergodicity,
    Mixing,
    Poincare,
    Islands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    pub n_cells: usize,
    pub replicas: u64,
    pub stride: usize,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub run: Vec<Analysis>,
    /// Box sides for the Poincaré and ergodicity analyses, in length units.
    #[serde(default)]
    pub n_values: Vec<f64>,
    /// Poincaré functional; defaults to `1 ∧ (u - 1)₊`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average: Option<AverageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<AverageSpec>>,
    /// Covariance lags in cells.
    #[serde(default)]
    pub lags: Vec<usize>,
    /// Covariance test function; defaults to `u - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<GFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Island windows, in length units.
    #[serde(default)]
    pub island_n: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub grid: Grid,
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub unsafe_skip_gate: bool,
}

/// Keys present in `given` but absent from the re-serialized `known`.
fn unknown_keys(given: &toml::Value, known: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (given, known) {
        (toml::Value::Table(g), toml::Value::Table(k)) => {
            for (key, v) in g {
                let p = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match k.get(key) {
                    Some(kv) => unknown_keys(v, kv, &p, out),
                    None => out.push(p),
                }
            }
        }
        (toml::Value::Array(g), toml::Value::Array(k)) => {
            for (i, (a, b)) in g.iter().zip(k).enumerate() {
                unknown_keys(a, b, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let cfg: ExperimentConfig = raw.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let back = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&raw, &back, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Precondition(m) => Error::Config(m),
        e => e,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate().map_err(config_err)?;
        self.grid.validate().map_err(config_err)?;
        if self.kernel.d != self.grid.d {
            return Err(Error::Config("kernel and grid dimensions differ".into()));
        }
        self.sigma()?;
        if !(self.solver.t_final > 0.0) || self.solver.replicas == 0 {
            return Err(Error::Config("solver needs t_final > 0 and at least one replica".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<SigmaSpec> {
        SigmaSpec::new(self.solver.sigma.family.clone(), self.solver.sigma.lip).map_err(config_err)
    }

    /// The configuration with command-line overrides applied.
    pub fn with_options(&self, opts: &Options) -> ExperimentConfig {
        let mut c = self.clone();
        if let Some(s) = opts.seed {
            c.solver.seed = s;
        }
        if let Some(o) = &opts.out {
            c.output = Some(o.clone());
        }
        c
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_config(&self, opts: &Options) -> Result<RunConfig> {
        let mut rc = RunConfig::new(self.grid, self.kernel.clone(), self.sigma()?, self.solver.t_final, self.solver.replicas, self.solver.seed);
        if !self.solver.snapshots.is_empty() {
            rc.snapshots = self.solver.snapshots.clone();
        }
        rc.u0 = self.solver.u0.clone();
        rc.threads = opts.threads.unwrap_or(1).max(1);
        rc.unsafe_skip_gate = opts.unsafe_skip_gate;
        Ok(rc)
    }

    fn out_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("shelab-out"))
    }
}

/// Process exit code for an error: 2 for gate failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Gate(_) => 2,
        _ => 1,
    }
}

struct Writer {
    dir: PathBuf,
    hash: String,
    provenance: String,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.out_dir();
        fs::create_dir_all(&dir)?;
        let hash = cfg.hash();
        Ok(Writer { dir, provenance: format!("# config_sha256={hash} version={VERSION}"), hash, files: Vec::new() })
    }

    /// Writes CSV text with the provenance line after the schema line.
    fn csv(&mut self, name: &str, body: Vec<u8>) -> Result<()> {
        let text = String::from_utf8(body).expect("utf8 csv");
        let (schema, rest) = text.split_once('\n').unwrap_or((&text, ""));
        self.raw(name, format!("{schema}\n{}\n{rest}", self.provenance).as_bytes())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_sha256: &'a str,
            version: &'a str,
            #[serde(flatten)]
            value: &'a T,
        }
        let text = serde_json::to_string_pretty(&Wrapped { config_sha256: &self.hash, version: VERSION, value }).map_err(|e| Error::Config(e.to_string()))?;
        self.raw(name, format!("{text}\n").as_bytes())
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }
}

/// `analyze`: the kernel report. Gate failures are returned after the
/// report is written.
pub fn cmd_analyze(cfg: &ExperimentConfig, opts: &Options) -> Result<(KernelReport, Vec<PathBuf>)> {
    let cfg = cfg.with_options(opts);
    let deltas = cfg.analysis.deltas.clone().unwrap_or(DEFAULT_DELTAS.to_vec());
    let r = report(&cfg.kernel, cfg.sigma()?.is_constant(), &deltas)?;
    let mut w = Writer::new(&cfg)?;
    w.json("report.json", &r)?;
    if r.gate_failed() {
        return Err(Error::Gate(format!("{} in d={} fails the well-posedness gate (dalang_ok={}, gp_ok={:?})", cfg.kernel.family_name(), cfg.kernel.d, r.dalang_ok, r.gp_ok)));
    }
    Ok((r, w.files))
}

/// `report`: the kernel report as text.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let deltas = cfg.analysis.deltas.clone().unwrap_or(DEFAULT_DELTAS.to_vec());
    let r = report(&cfg.kernel, cfg.sigma()?.is_constant(), &deltas)?;
    let mut s = String::new();
    let opt = |b: Option<bool>| b.map_or("unknown".to_string(), |v| v.to_string());
    s += &format!("kernel          {} (d = {})\n", cfg.kernel.family_name(), cfg.kernel.d);
    s += &format!("dalang_ok       {}\n", r.dalang_ok);
    s += &format!("gp_ok           {}\n", opt(r.gp_ok));
    s += &format!("fp_ok           {}\n", opt(r.fp_ok));
    s += &format!("h_minus1_norm   {}\n", r.h_minus1_norm.map_or("n/a".to_string(), |v| format!("{v:.6}")));
    s += &format!("classification  {:?}\n", r.classification);
    s += &format!("mixing_ok       {}\n", opt(r.mixing_ok));
    if let Some(d) = &r.dalang {
        s += &format!("dalang(1)       spectral {:?} potential {:?}\n", d.spectral, d.potential);
    }
    if let Some(a) = &r.atom {
        s += &format!("atom            {:?}, extrapolated {:.6}\n", a.decision, a.extrapolated_atom);
    }
    for (d, l) in &r.lambda_table {
        s += &format!("lambda({d})     {l:.6e}\n");
    }
    for w in &r.warnings {
        s += &format!("warning: {w}\n");
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub summary: RunSummary,
    /// Per snapshot: largest `(max - min) / |mean|` over replicas.
    pub max_relative_spread: Vec<f64>,
    pub report: Option<KernelReport>,
    pub poincare: Option<PoincareCheck>,
    pub ergodicity: Option<ErgodicityReport>,
    pub covariance: Option<CovarianceCurve>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi, sum) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(a, b, s), x| (a.min(*x), b.max(*x), s + x));
    let mean = sum / v.len() as f64;
    if hi == lo {
        0.0
    } else {
        (hi - lo) / mean.abs()
    }
}

/// `simulate`: runs the ensemble and the requested statistics on the last
/// snapshot.
pub fn cmd_simulate(cfg: &ExperimentConfig, opts: &Options) -> Result<SimulateOutput> {
    let cfg = cfg.with_options(opts);
    let rc = cfg.run_config(opts)?;
    if !opts.unsafe_skip_gate {
        gate(&cfg.kernel)?;
    }
    let a = &cfg.analysis;
    let wants = |x: Analysis| a.run.contains(&x);
    if wants(Analysis::Islands) {
        return Err(Error::Config("islands run through the islands subcommand".into()));
    }
    let keep = wants(Analysis::Ergodicity) || wants(Analysis::Mixing) || wants(Analysis::Poincare);
    let dumps = cfg.solver.dump_replicas;
    let (per, summary) = run_ensemble(&rc, |r, snaps| {
        let spreads: Vec<f64> = snaps.iter().map(|s| spread(&s.values)).collect();
        let last = if keep { snaps.last().map(|s| s.values.clone()) } else { None };
        let dump = if r < dumps { Some(snaps.to_vec()) } else { None };
        (spreads, last, dump)
    })?;
    let mut w = Writer::new(&cfg)?;
    let ns = summary.snapshot_times.len();
    let max_relative_spread: Vec<f64> = (0..ns).map(|i| per.iter().map(|p| p.0[i]).fold(0.0, f64::max)).collect();
    for (r, p) in per.iter().enumerate() {
        if let Some(snaps) = &p.2 {
            for (i, s) in snaps.iter().enumerate() {
                let mut buf = Vec::new();
                write_dump(&mut buf, &Grid { dt: summary.dt, ..cfg.grid }, &s.values)?;
                w.raw(&format!("snapshot_r{r}_s{i}.bin"), &buf)?;
            }
        }
    }
    let mut moments = Vec::new();
    writeln!(moments, "# shelab moments v1")?;
    writeln!(moments, "t,mean,variance,nonpositive_replicas,max_relative_spread")?;
    for i in 0..ns {
        writeln!(moments, "{},{:e},{:e},{},{:e}", summary.snapshot_times[i], summary.mean[i], summary.variance[i], summary.nonpositive_replicas[i], max_relative_spread[i])?;
    }
    w.csv("moments.csv", moments)?;
    let fields: Vec<Vec<f64>> = per.into_iter().filter_map(|p| p.1).collect();
    let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
    let grid = Grid { dt: summary.dt, ..cfg.grid };
    let report_out = if wants(Analysis::Report) {
        let r = report(&cfg.kernel, rc.sigma.is_constant(), &a.deltas.clone().unwrap_or(DEFAULT_DELTAS.to_vec()))?;
        w.json("report.json", &r)?;
        Some(r)
    } else {
        None
    };
    let poincare = if wants(Analysis::Poincare) {
        let avg = a.average.clone().unwrap_or(AverageSpec::single(grid.d, GFamily::Clip01 { a: 1.0 }));
        let c = variance_vs_n(&grid, &refs, &avg, &a.n_values, &cfg.kernel)?;
        let mut buf = Vec::new();
        write_poincare_csv(&mut buf, &[(0, &c)])?;
        w.csv("poincare.csv", buf)?;
        Some(c)
    } else {
        None
    };
    let ergodicity = if wants(Analysis::Ergodicity) {
        let suite = a.suite.clone().unwrap_or_else(|| default_suite(&grid));
        let e = ergodicity_test(&grid, &refs, &suite, &a.n_values)?;
        let mut buf = Vec::new();
        writeln!(buf, "# shelab ergodicity v1")?;
        writeln!(buf, "member,label,k,N,var,stderr,decays,stabilizes")?;
        for (i, m) in e.members.iter().enumerate() {
            for (j, n) in m.n_values.iter().enumerate() {
                writeln!(buf, "{i},{},{},{n},{:e},{:e},{},{}", m.label, m.k, m.var[j], m.stderr[j], m.decays, m.stabilizes)?;
            }
        }
        w.csv("ergodicity.csv", buf)?;
        Some(e)
    } else {
        None
    };
    let covariance = if wants(Analysis::Mixing) {
        let g = a.g.clone().unwrap_or(GFamily::IdentityMinus1);
        let c = covariance_decay(&grid, &refs, &g, &a.lags)?;
        let mut buf = Vec::new();
        write_covariance_csv(&mut buf, &c)?;
        w.csv("covariance.csv", buf)?;
        Some(c)
    } else {
        None
    };
    let mut out = SimulateOutput { summary, max_relative_spread, report: report_out, poincare, ergodicity, covariance, files: Vec::new() };
    w.json("summary.json", &out)?;
    out.files = w.files;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct IslandsOutput {
    pub scan: IslandScan,
    pub sup: SupCurve,
    pub tail: Option<TailFit>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// `islands`: dimension scan, sup growth and (with a tail section) the tail
/// exponent for the parabolic Anderson model.
pub fn cmd_islands(cfg: &ExperimentConfig, opts: &Options) -> Result<IslandsOutput> {
    let cfg = cfg.with_options(opts);
    let rc = cfg.run_config(opts)?;
    let a = &cfg.analysis;
    check_pam(&rc, &a.alphas)?;
    if a.alphas.is_empty() || a.island_n.is_empty() {
        return Err(Error::Config("islands need alphas and island_n".into()));
    }
    let (scan, sup) = pam_scan(&rc, &a.alphas, &a.island_n)?;
    let tail = match &a.tail {
        Some(t) => {
            let mut tc = rc.clone();
            tc.grid = Grid { n_cells: t.n_cells, ..rc.grid };
            tc.grid.validate().map_err(config_err)?;
            tc.replicas = t.replicas;
            Some(fit_tail(rc.t_final, &tail_samples(&tc, t.stride)?, &t.a)?)
        }
        None => None,
    };
    let mut w = Writer::new(&cfg)?;
    let mut buf = Vec::new();
    write_scan_csv(&mut buf, &scan)?;
    w.csv("islands.csv", buf)?;
    let mut buf = Vec::new();
    write_sup_csv(&mut buf, &sup)?;
    w.csv("sup_growth.csv", buf)?;
    if let Some(t) = &tail {
        let mut buf = Vec::new();
        writeln!(buf, "# shelab tail v1")?;
        writeln!(buf, "a,count,samples")?;
        for (x, c) in t.a_used.iter().zip(&t.counts) {
            writeln!(buf, "{x},{c},{}", t.samples)?;
        }
        w.csv("tail.csv", buf)?;
    }
    let mut out = IslandsOutput { scan, sup, tail, files: Vec::new() };
    w.json("islands.json", &out)?;
    out.files = w.files;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[kernel]
d = 1
family = "exp_decay_f"
rate = 1.0

[grid]
d = 1
n_cells = 64
dx = 0.25
dt = 0.03125

[solver]
sigma = { family = "linear" }
t_final = 0.5
replicas = 4
seed = 7
"#;

    #[test]
    fn parses_and_hashes() {
        let c = parse_config(BASE).unwrap();
        assert_eq!(c.solver.seed, 7);
        let h = c.hash();
        assert_eq!(h.len(), 64);
        let o = c.with_options(&Options { seed: Some(8), ..Options::default() });
        assert_ne!(o.hash(), h);
        let o = c.with_options(&Options { out: Some("x".into()), ..Options::default() });
        assert_eq!(o.hash(), h);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let e = parse_config(&BASE.replace("rate = 1.0", "rate = 1.0\nspeed = 2")).unwrap_err();
        assert!(e.to_string().contains("kernel.speed"), "{e}");
        let e = parse_config(&BASE.replace("seed = 7\n", "")).unwrap_err();
        assert!(matches!(e, Error::Config(_)) && e.to_string().contains("seed"), "{e}");
        let e = parse_config(&BASE.replace("family = \"linear\"", "family = \"linear\", bogus = 1")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert!(parse_config(&format!("{BASE}\n[analysis]\nrun = [\"poincare\"]\nextra = 1\n")).is_err());
    }

    #[test]
    fn simulate_zero_sigma_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let text = BASE.replace("{ family = \"linear\" }", "{ family = \"constant\", c0 = 0.0 }").replace("replicas = 4", "replicas = 4\ndump_replicas = 1");
        let c = parse_config(&text).unwrap();
        let out = cmd_simulate(&c, &Options { out: Some(dir.path().into()), ..Options::default() }).unwrap();
        assert_eq!(out.summary.mean, vec![1.0]);
        let (_, v) = crate::noise::read_dump(fs::File::open(dir.path().join("snapshot_r0_s0.bin")).unwrap()).unwrap();
        assert!(v.iter().all(|x| *x == 1.0));
        let c = parse_config(BASE).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_simulate(&c, &Options { out: Some(a.path().into()), threads: Some(1), ..Options::default() }).unwrap();
        cmd_simulate(&c, &Options { out: Some(b.path().into()), threads: Some(3), ..Options::default() }).unwrap();
        for f in ["moments.csv", "summary.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let m = fs::read_to_string(a.path().join("moments.csv")).unwrap();
        assert!(m.lines().nth(1).unwrap().contains(&c.hash()));
    }

    #[test]
    fn gate_and_scope_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = Options { out: Some(dir.path().into()), ..Options::default() };
        let white2 = BASE.replace("d = 1\nfamily = \"exp_decay_f\"\nrate = 1.0", "d = 2\nfamily = \"white_noise\"").replace("[grid]\nd = 1\nn_cells = 64", "[grid]\nd = 2\nn_cells = 16");
        let c = parse_config(&white2).unwrap();
        let e = cmd_analyze(&c, &opts).unwrap_err();
        assert_eq!(exit_code(&e), 2);
        assert!(dir.path().join("report.json").exists());
        assert_eq!(exit_code(&cmd_simulate(&c, &opts).unwrap_err()), 2);
        let c = parse_config(&format!("{BASE}\n[analysis]\nalphas = [0.1]\nisland_n = [4.0]\n")).unwrap();
        let e = cmd_islands(&c, &opts).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
    }
}
