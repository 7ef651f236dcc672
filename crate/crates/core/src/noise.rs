//! Depolarizing and readout noise, the closed-form noisy fidelity and an
//! exact density-matrix oracle for it.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qstate::{fidelity_mixed, fidelity_pure, DensityMatrix, StateVector, MAX_ORACLE_QUBITS};

/// Reported in place of an infinite signal-to-noise ratio.
pub const SNR_CAP: f64 = 1e12;

/// Agreement required between the closed form and the exact oracle.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-10;

pub const SNR_HEADER: &str = "Q,p,f_ideal,f_noisy_exact,f_closed_form,snr_paper,snr_oracle";

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must lie in [0, 1], got {p}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    pub depolarizing_p: f64,
    pub readout_eps: f64,
}

impl NoiseConfig {
    pub fn new(depolarizing_p: f64, readout_eps: f64) -> Result<Self> {
        let cfg = Self {
            depolarizing_p,
            readout_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("depolarizing_p", self.depolarizing_p)?;
        check_probability("readout_eps", self.readout_eps)
    }
}

/// `(1−p)ρ + p·I/2^Q`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    check_probability("p", p)?;
    let mixed = DensityMatrix::maximally_mixed(rho.num_qubits())?;
    rho.mix(1.0 - p, &mixed, p)
}

/// `Tr[ℰ_p(ρ_a) ℰ_p(ρ_b)]` from explicit density matrices.
pub fn noisy_fidelity_exact(a: &StateVector, b: &StateVector, p: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.num_qubits() > MAX_ORACLE_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "exact noisy fidelity is capped at {MAX_ORACLE_QUBITS} qubits"
        )));
    }
    let ra = depolarize(&DensityMatrix::from_pure(a)?, p)?;
    let rb = depolarize(&DensityMatrix::from_pure(b)?, p)?;
    fidelity_mixed(&ra, &rb)
}

fn check_closed_form_inputs(f: f64, p: f64, num_qubits: usize) -> Result<()> {
    check_probability("fidelity", f)?;
    check_probability("p", p)?;
    if num_qubits == 0 || num_qubits > 62 {
        return Err(Error::InvalidArgument(format!(
            "num_qubits {num_qubits} out of range"
        )));
    }
    Ok(())
}

/// `(1−p)²·F + p(2−p)/2^Q`, the expansion of the product of two channels.
pub fn noisy_fidelity_closed_form(f_ideal: f64, p: f64, num_qubits: usize) -> Result<f64> {
    check_closed_form_inputs(f_ideal, p, num_qubits)?;
    let d = (1u64 << num_qubits) as f64;
    Ok((1.0 - p).powi(2) * f_ideal + p * (2.0 - p) / d)
}

/// Variant with a `(1−p)^{2Q}` signal prefactor. It coincides with the
/// closed form only at `Q = 1`; kept so sweeps can show the gap.
pub fn noisy_fidelity_per_qubit_prefactor(f_ideal: f64, p: f64, num_qubits: usize) -> Result<f64> {
    check_closed_form_inputs(f_ideal, p, num_qubits)?;
    let d = (1u64 << num_qubits) as f64;
    Ok((1.0 - p).powi(2 * num_qubits as i32) * f_ideal + p * (2.0 - p) / d)
}

/// Flips every bit of a `2^Q`-outcome distribution independently with
/// probability `eps`.
pub fn readout_flip(distribution: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_probability("eps", eps)?;
    let n = distribution.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Shape(format!("{n} outcomes is not a power of two")));
    }
    if distribution.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    let mut out = distribution.to_vec();
    let mut bit = 1;
    while bit < n {
        for i in 0..n {
            if i & bit == 0 {
                let (a, b) = (out[i], out[i | bit]);
                out[i] = (1.0 - eps) * a + eps * b;
                out[i | bit] = eps * a + (1.0 - eps) * b;
            }
        }
        bit <<= 1;
    }
    Ok(out)
}

/// `(1−p)^{2Q} / (p(2−p)/2^Q)`, capped at [`SNR_CAP`].
pub fn snr_per_qubit_prefactor(p: f64, num_qubits: usize) -> Result<f64> {
    check_probability("p", p)?;
    let floor = p * (2.0 - p) / (1u64 << num_qubits) as f64;
    let signal = (1.0 - p).powi(2 * num_qubits as i32);
    Ok(if floor == 0.0 {
        SNR_CAP
    } else {
        (signal / floor).min(SNR_CAP)
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRow {
    pub num_qubits: usize,
    pub p: f64,
    pub f_ideal: f64,
    /// `None` above the dense-oracle cap.
    pub f_noisy_exact: Option<f64>,
    pub f_closed_form: f64,
    pub snr_paper: f64,
    /// `(F_noisy(ψ,ψ) − floor) / floor` with the floor taken as the noisy
    /// fidelity of two orthogonal states.
    pub snr_oracle: Option<f64>,
}

fn oracle_snr(num_qubits: usize, p: f64) -> Result<f64> {
    let zero = StateVector::basis(num_qubits, 0)?;
    let one = StateVector::basis(num_qubits, 1)?;
    let floor = noisy_fidelity_exact(&zero, &one, p)?;
    let peak = noisy_fidelity_exact(&zero, &zero, p)?;
    Ok(if floor == 0.0 {
        SNR_CAP
    } else {
        ((peak - floor) / floor).min(SNR_CAP)
    })
}

/// Every `(Q, p)` combination, each with a fresh seeded random state pair.
pub fn snr_sweep(qubits: &[usize], ps: &[f64], seed: u64) -> Result<Vec<SnrRow>> {
    if qubits.is_empty() || ps.is_empty() {
        return Err(Error::Empty("sweep needs at least one Q and one p".into()));
    }
    for &p in ps {
        check_probability("p", p)?;
    }
    let grid: Vec<(usize, usize)> = (0..qubits.len())
        .flat_map(|i| (0..ps.len()).map(move |j| (i, j)))
        .collect();
    grid.par_iter()
        .map(|&(i, j)| {
            let (q, p) = (qubits[i], ps[j]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64) << 32 | j as u64));
            let a = StateVector::random(q, &mut rng)?;
            let b = StateVector::random(q, &mut rng)?;
            let f_ideal = fidelity_pure(&a, &b)?.clamp(0.0, 1.0);
            let exact = q <= MAX_ORACLE_QUBITS;
            Ok(SnrRow {
                num_qubits: q,
                p,
                f_ideal,
                f_noisy_exact: if exact {
                    Some(noisy_fidelity_exact(&a, &b, p)?)
                } else {
                    None
                },
                f_closed_form: noisy_fidelity_closed_form(f_ideal, p, q)?,
                snr_paper: snr_per_qubit_prefactor(p, q)?,
                snr_oracle: if exact { Some(oracle_snr(q, p)?) } else { None },
            })
        })
        .collect()
}

pub fn write_snr_csv<W: Write>(rows: &[SnrRow], mut out: W) -> Result<()> {
    writeln!(out, "{SNR_HEADER}")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.num_qubits,
            r.p,
            r.f_ideal,
            opt(r.f_noisy_exact),
            r.f_closed_form,
            r.snr_paper,
            opt(r.snr_oracle)
        )?;
    }
    Ok(())
}

/// How well each closed form tracks the oracle at one register size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefactorCheck {
    pub num_qubits: usize,
    pub rows: usize,
    pub closed_form_max_error: f64,
    pub per_qubit_max_error: f64,
}

impl PrefactorCheck {
    pub fn closed_form_agrees(&self) -> bool {
        self.closed_form_max_error < CLOSED_FORM_TOLERANCE
    }

    pub fn per_qubit_deviates(&self) -> bool {
        self.per_qubit_max_error >= CLOSED_FORM_TOLERANCE
    }
}

/// Oracle comparison of both closed forms, grouped by `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefactorReport {
    pub checks: Vec<PrefactorCheck>,
}

impl PrefactorReport {
    pub fn from_rows(rows: &[SnrRow]) -> Result<Self> {
        let mut qs: Vec<usize> = rows.iter().map(|r| r.num_qubits).collect();
        qs.sort_unstable();
        qs.dedup();
        let mut checks = Vec::new();
        for q in qs {
            let mut check = PrefactorCheck {
                num_qubits: q,
                rows: 0,
                closed_form_max_error: 0.0,
                per_qubit_max_error: 0.0,
            };
            for r in rows.iter().filter(|r| r.num_qubits == q) {
                let Some(exact) = r.f_noisy_exact else {
                    continue;
                };
                let alt = noisy_fidelity_per_qubit_prefactor(r.f_ideal, r.p, q)?;
                check.rows += 1;
                check.closed_form_max_error = check
                    .closed_form_max_error
                    .max((exact - r.f_closed_form).abs());
                check.per_qubit_max_error = check.per_qubit_max_error.max((exact - alt).abs());
            }
            if check.rows > 0 {
                checks.push(check);
            }
        }
        Ok(Self { checks })
    }

    pub fn all_closed_form_agree(&self) -> bool {
        self.checks.iter().all(PrefactorCheck::closed_form_agrees)
    }

    /// Register sizes at which the `(1−p)^{2Q}` form misses the oracle.
    pub fn flagged(&self) -> Vec<usize> {
        self.checks
            .iter()
            .filter(|c| c.per_qubit_deviates())
            .map(|c| c.num_qubits)
            .collect()
    }
}

impl fmt::Display for PrefactorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Q  rows  max|exact-(1-p)^2 form|  max|exact-(1-p)^2Q form|  status"
        )?;
        for c in &self.checks {
            let status = match (c.closed_form_agrees(), c.per_qubit_deviates()) {
                (true, true) => "(1-p)^2Q prefactor DEVIATES",
                (true, false) => "both agree",
                (false, _) => "CLOSED FORM MISMATCH",
            };
            writeln!(
                f,
                "{:<2} {:>5}  {:>24.3e}  {:>25.3e}  {status}",
                c.num_qubits, c.rows, c.closed_form_max_error, c.per_qubit_max_error
            )?;
        }
        Ok(())
    }
}
