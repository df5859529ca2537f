//! One-stop analytic summary of a kernel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{dalang_finite, dalang_integral, fp_any, gp_any, h_minus1_norm, lambda_threshold, Dalang, KernelSpec, Role};
use crate::spectral::{atom_at_zero, ergodicity_predicate, mixing_predicate, AtomEstimate, Classification, DEFAULT_RADII, DEFAULT_SCALES};

pub const DEFAULT_DELTAS: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    pub kernel: KernelSpec,
    pub dalang_ok: bool,
    pub gp_ok: Option<bool>,
    pub fp_ok: Option<bool>,
    pub h_minus1_norm: Option<f64>,
    /// `(δ, Λ(δ))`.
    pub lambda_table: Vec<(f64, f64)>,
    pub classification: Classification,
    pub mixing_ok: Option<bool>,
    /// Both Dalang forms at `λ = 1`.
    pub dalang: Option<Dalang>,
    pub atom: Option<AtomEstimate>,
    pub warnings: Vec<String>,
}

impl KernelReport {
    /// Dalang fails, or a base kernel is in no `G_p` class.
    pub fn gate_failed(&self) -> bool {
        !self.dalang_ok || self.gp_ok == Some(false)
    }
}

fn soft<T>(r: Result<T>, what: &str, warnings: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::Domain(_) | Error::Precondition(_) | Error::Unsupported(_) | Error::Insufficient(_))) => {
            warnings.push(format!("{what}: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub fn report(spec: &KernelSpec, sigma_constant: bool, deltas: &[f64]) -> Result<KernelReport> {
    spec.validate()?;
    let mut w = Vec::new();
    let dalang_ok = dalang_finite(spec);
    let (gp_ok, mut fp_ok, h1) = match spec.role() {
        Role::H => (soft(gp_any(spec), "G_p", &mut w)?.flatten(), soft(fp_any(spec), "F_p", &mut w)?.flatten(), soft(h_minus1_norm(spec), "H_-1 norm", &mut w)?),
        Role::F => (None, None, None),
    };
    if gp_ok == Some(true) {
        fp_ok = Some(true);
    }
    let dalang = soft(dalang_integral(spec, 1.0), "Dalang integral", &mut w)?;
    let mut lambda_table = Vec::new();
    if dalang_ok {
        for &d in deltas {
            if let Some(l) = soft(lambda_threshold(spec, d), "lambda threshold", &mut w)? {
                lambda_table.push((d, l));
            } else {
                break;
            }
        }
    }
    let (classification, atom, mixing_ok) = if dalang_ok {
        let c = soft(ergodicity_predicate(spec, sigma_constant), "classification", &mut w)?.unwrap_or(Classification::Unknown);
        let a = soft(atom_at_zero(spec, &DEFAULT_SCALES), "atom", &mut w)?;
        let m = soft(mixing_predicate(spec, 1.0, &DEFAULT_RADII), "mixing", &mut w)?;
        (c, a, m)
    } else {
        (Classification::Unknown, None, None)
    };
    Ok(KernelReport { kernel: spec.clone(), dalang_ok, gp_ok, fp_ok, h_minus1_norm: h1, lambda_table, classification, mixing_ok, dalang, atom, warnings: w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Family;

    #[test]
    fn exp_decay_is_ergodic_and_mixing() {
        let r = report(&KernelSpec::new(1, Family::ExpDecayF { rate: 1.0 }).unwrap(), false, &DEFAULT_DELTAS).unwrap();
        assert!(r.dalang_ok && !r.gate_failed());
        assert_eq!(r.classification, Classification::Ergodic);
        assert_eq!(r.mixing_ok, Some(true));
        assert_eq!(r.lambda_table.len(), 4);
        assert!(r.lambda_table.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn constant_is_non_ergodic_with_constant_sigma() {
        let k = KernelSpec::new(1, Family::Constant { level: 0.25 }).unwrap();
        assert_eq!(report(&k, true, &[]).unwrap().classification, Classification::NonErgodic);
        assert_eq!(report(&k, false, &[]).unwrap().classification, Classification::Unknown);
    }

    #[test]
    fn gate_failures() {
        assert!(report(&KernelSpec::new(2, Family::WhiteNoise).unwrap(), false, &DEFAULT_DELTAS).unwrap().gate_failed());
        let p = report(&KernelSpec::new(1, Family::PowerH { alpha: 0.5, beta: 1.0, c: 1.0 }).unwrap(), false, &[1.0]).unwrap();
        assert_eq!(p.gp_ok, Some(true));
        assert_eq!(p.fp_ok, Some(true));
        assert!(p.h_minus1_norm.unwrap().is_finite());
    }
}
