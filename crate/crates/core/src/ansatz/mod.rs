//! Per-token re-uploading circuits and their gradients.
//!
//! Each token owns encoding scales `alpha`, variational angles `z` and a
//! scalar feature `x`; the encoding offsets `a` are shared by the whole
//! vocabulary. Block `b` applies `R_y(alpha[b,q]·x + a[b,q])` on every qubit,
//! then `R_z(z[b,q])` on every qubit, then the entangling CNOT layer.
//!
//! Gradients come from three independent routes: the parameter-shift rule
//! (reference), an adjoint sweep through the statevector (fast path used in
//! training), and central finite differences (oracle).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{ensure_finite, Error, Result};
use crate::qstate::{
    bloch_unchecked, cnot_in_place, inner_unchecked, pauli_in_place, pauli_matrix_element,
    ry_in_place, rz_in_place, Pauli, StateVector, C64,
};

/// Largest register the ansatz builds.
pub const MAX_ANSATZ_QUBITS: usize = 12;
/// Largest number of re-uploading blocks.
pub const MAX_BLOCKS: usize = 4;

/// CNOT layout of the entangling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entanglement {
    /// `CNOT(q, q+1 mod Q)`; for two qubits the ring degenerates to a single CNOT.
    Ring,
    /// `CNOT(q, q+1)` for `q < Q-1`.
    Linear,
    /// `CNOT(i, j)` for every `i < j`.
    AllToAll,
    None,
}

impl Entanglement {
    pub fn pairs(self, num_qubits: usize) -> Vec<(usize, usize)> {
        match self {
            Entanglement::None => Vec::new(),
            Entanglement::Ring if num_qubits == 2 => vec![(0, 1)],
            Entanglement::Ring => (0..num_qubits).map(|q| (q, (q + 1) % num_qubits)).collect(),
            Entanglement::Linear => (0..num_qubits.saturating_sub(1))
                .map(|q| (q, q + 1))
                .collect(),
            Entanglement::AllToAll => (0..num_qubits)
                .flat_map(|i| (i + 1..num_qubits).map(move |j| (i, j)))
                .collect(),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Entanglement::Ring => 0,
            Entanglement::Linear => 1,
            Entanglement::AllToAll => 2,
            Entanglement::None => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Entanglement::Ring,
            1 => Entanglement::Linear,
            2 => Entanglement::AllToAll,
            3 => Entanglement::None,
            _ => return Err(Error::Format(format!("unknown entanglement code {code}"))),
        })
    }
}

impl fmt::Display for Entanglement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Entanglement::Ring => "ring",
            Entanglement::Linear => "linear",
            Entanglement::AllToAll => "all-to-all",
            Entanglement::None => "none",
        })
    }
}

impl FromStr for Entanglement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ring" => Ok(Entanglement::Ring),
            "linear" => Ok(Entanglement::Linear),
            "all-to-all" | "all" => Ok(Entanglement::AllToAll),
            "none" => Ok(Entanglement::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown entanglement pattern '{other}'"
            ))),
        }
    }
}

/// Circuit shape shared by every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitConfig {
    num_qubits: usize,
    num_blocks: usize,
    entanglement: Entanglement,
}

impl CircuitConfig {
    pub fn new(num_qubits: usize, num_blocks: usize, entanglement: Entanglement) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_ANSATZ_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "num_qubits must be in [1, {MAX_ANSATZ_QUBITS}], got {num_qubits}"
            )));
        }
        if num_blocks == 0 || num_blocks > MAX_BLOCKS {
            return Err(Error::InvalidArgument(format!(
                "num_blocks must be in [1, {MAX_BLOCKS}], got {num_blocks}"
            )));
        }
        if entanglement != Entanglement::None && num_qubits < 2 {
            return Err(Error::InvalidArgument(format!(
                "{entanglement} entanglement needs at least 2 qubits"
            )));
        }
        Ok(Self {
            num_qubits,
            num_blocks,
            entanglement,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn entanglement(&self) -> Entanglement {
        self.entanglement
    }

    /// `B·Q`, the size of each angle block.
    pub fn layer_size(&self) -> usize {
        self.num_qubits * self.num_blocks
    }

    /// Learned parameters per token: `2·B·Q + 1`.
    pub fn params_per_token(&self) -> usize {
        2 * self.layer_size() + 1
    }
}

/// Per-token parameters, `B×Q` matrices stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenParams {
    pub alpha: Vec<f64>,
    pub z: Vec<f64>,
    pub x: f64,
}

impl TokenParams {
    pub fn zeros(cfg: &CircuitConfig) -> Self {
        Self {
            alpha: vec![0.0; cfg.layer_size()],
            z: vec![0.0; cfg.layer_size()],
            x: 0.0,
        }
    }

    /// `alpha, z ~ U(-0.1, 0.1)`, `x ~ N(0, 1)`.
    pub fn init<R: Rng + ?Sized>(cfg: &CircuitConfig, rng: &mut R) -> Self {
        let small = Uniform::new(-0.1, 0.1).expect("valid range");
        let alpha = (0..cfg.layer_size()).map(|_| small.sample(rng)).collect();
        let z = (0..cfg.layer_size()).map(|_| small.sample(rng)).collect();
        let x = rng.sample(StandardNormal);
        Self { alpha, z, x }
    }

    pub fn validate(&self, cfg: &CircuitConfig) -> Result<()> {
        if self.alpha.len() != cfg.layer_size() || self.z.len() != cfg.layer_size() {
            return Err(Error::Shape(format!(
                "token params have {}/{} angles, circuit expects {}",
                self.alpha.len(),
                self.z.len(),
                cfg.layer_size()
            )));
        }
        if !self
            .alpha
            .iter()
            .chain(&self.z)
            .chain([&self.x])
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("token parameter".into()));
        }
        Ok(())
    }

    /// `[alpha…, z…, x]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.alpha.len() + 1);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.z);
        out.push(self.x);
        out
    }

    pub fn from_flat(cfg: &CircuitConfig, flat: &[f64]) -> Result<Self> {
        let n = cfg.layer_size();
        if flat.len() != 2 * n + 1 {
            return Err(Error::Shape(format!(
                "expected {} flat parameters, got {}",
                2 * n + 1,
                flat.len()
            )));
        }
        Ok(Self {
            alpha: flat[..n].to_vec(),
            z: flat[n..2 * n].to_vec(),
            x: flat[2 * n],
        })
    }
}

/// Encoding offsets shared across the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedParams {
    pub a: Vec<f64>,
}

impl SharedParams {
    pub fn zeros(cfg: &CircuitConfig) -> Self {
        Self {
            a: vec![0.0; cfg.layer_size()],
        }
    }

    /// `a ~ U(-π, π)`.
    pub fn init<R: Rng + ?Sized>(cfg: &CircuitConfig, rng: &mut R) -> Self {
        let dist = Uniform::new(-PI, PI).expect("valid range");
        Self {
            a: (0..cfg.layer_size()).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn validate(&self, cfg: &CircuitConfig) -> Result<()> {
        if self.a.len() != cfg.layer_size() {
            return Err(Error::Shape(format!(
                "shared offsets have {} entries, circuit expects {}",
                self.a.len(),
                cfg.layer_size()
            )));
        }
        if !self.a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("shared offset".into()));
        }
        Ok(())
    }
}

/// Partial derivatives of a scalar loss with respect to one token's circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub d_alpha: Vec<f64>,
    pub d_z: Vec<f64>,
    pub d_x: f64,
    pub d_a_shared: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros(cfg: &CircuitConfig) -> Self {
        Self {
            d_alpha: vec![0.0; cfg.layer_size()],
            d_z: vec![0.0; cfg.layer_size()],
            d_x: 0.0,
            d_a_shared: vec![0.0; cfg.layer_size()],
        }
    }

    /// All components in the order `d_alpha, d_z, d_x, d_a_shared`.
    pub fn components(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.d_alpha.len() + 1);
        out.extend_from_slice(&self.d_alpha);
        out.extend_from_slice(&self.d_z);
        out.push(self.d_x);
        out.extend_from_slice(&self.d_a_shared);
        out
    }

    pub fn norm(&self) -> f64 {
        self.components().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|g| g.is_finite())
    }
}

/// Gradient with respect to the raw rotation angles of the circuit.
#[derive(Debug, Clone)]
struct AngleGradient {
    enc: Vec<f64>,
    var: Vec<f64>,
}

impl AngleGradient {
    fn into_record(self, tok: &TokenParams) -> GradientRecord {
        let d_alpha = self.enc.iter().map(|g| g * tok.x).collect();
        let d_x = self.enc.iter().zip(&tok.alpha).map(|(g, a)| g * a).sum();
        GradientRecord {
            d_alpha,
            d_z: self.var,
            d_x,
            d_a_shared: self.enc,
        }
    }
}

fn check_shapes(cfg: &CircuitConfig, tok: &TokenParams, shared: &SharedParams) -> Result<()> {
    tok.validate(cfg)?;
    shared.validate(cfg)
}

/// `R_y` angles `alpha[b,q]·x + a[b,q]`.
pub fn encoding_angles(tok: &TokenParams, shared: &SharedParams) -> Vec<f64> {
    tok.alpha
        .iter()
        .zip(&shared.a)
        .map(|(alpha, a)| alpha * tok.x + a)
        .collect()
}

/// Runs the circuit for explicit per-gate angles.
fn run_circuit(cfg: &CircuitConfig, enc: &[f64], var: &[f64]) -> StateVector {
    let nq = cfg.num_qubits;
    let mut state = StateVector::zero(nq).expect("qubit count validated by CircuitConfig");
    let pairs = cfg.entanglement.pairs(nq);
    for b in 0..cfg.num_blocks {
        for q in 0..nq {
            state.ry_unchecked(q, enc[b * nq + q]);
        }
        for q in 0..nq {
            state.rz_unchecked(q, var[b * nq + q]);
        }
        for &(c, t) in &pairs {
            state.cnot_unchecked(c, t);
        }
    }
    state
}

/// Prepares `|ψ_w⟩ = U_B ⋯ U_1 |0…0⟩`.
pub fn embed(cfg: &CircuitConfig, tok: &TokenParams, shared: &SharedParams) -> Result<StateVector> {
    check_shapes(cfg, tok, shared)?;
    Ok(embed_unchecked(cfg, tok, shared))
}

pub(crate) fn embed_unchecked(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
) -> StateVector {
    run_circuit(cfg, &encoding_angles(tok, shared), &tok.z)
}

/// Single-qubit purities of the embedded state.
pub fn purity_profile(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
) -> Result<Vec<f64>> {
    let state = embed(cfg, tok, shared)?;
    Ok(purities_of(&state))
}

pub(crate) fn purities_of(state: &StateVector) -> Vec<f64> {
    (0..state.num_qubits())
        .map(|q| bloch_unchecked(state.amplitudes(), q).purity())
        .collect()
}

/// A loss written as a smooth function of expectation values `⟨ψ|O_i|ψ⟩`.
///
/// The parameter-shift rule is exact for each expectation value; the chain
/// rule through [`StateObjective::combine_grad`] then gives the loss gradient.
pub trait StateObjective {
    /// Number of expectation values on a `num_qubits` register.
    fn num_expectations(&self, num_qubits: usize) -> usize;

    /// `⟨ψ|O_i|ψ⟩` for every observable the loss depends on.
    fn expectations(&self, state: &StateVector) -> Vec<f64>;

    /// The loss as a function of the expectations.
    fn combine(&self, expectations: &[f64]) -> f64;

    /// `∂loss / ∂expectation_i`.
    fn combine_grad(&self, expectations: &[f64]) -> Vec<f64>;

    /// `Σ_i w_i O_i |ψ⟩`.
    fn weighted_observable(&self, state: &StateVector, weights: &[f64]) -> Vec<C64>;

    fn loss(&self, state: &StateVector) -> f64 {
        self.combine(&self.expectations(state))
    }
}

/// `⟨P_q⟩` for one Pauli.
#[derive(Debug, Clone, Copy)]
pub struct PauliExpectation {
    pub qubit: usize,
    pub pauli: Pauli,
}

impl StateObjective for PauliExpectation {
    fn num_expectations(&self, _: usize) -> usize {
        1
    }

    fn expectations(&self, state: &StateVector) -> Vec<f64> {
        let amps = state.amplitudes();
        vec![pauli_matrix_element(amps, amps, self.qubit, self.pauli).re]
    }

    fn combine(&self, e: &[f64]) -> f64 {
        e[0]
    }

    fn combine_grad(&self, _: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    fn weighted_observable(&self, state: &StateVector, w: &[f64]) -> Vec<C64> {
        let mut out = state.amplitudes().to_vec();
        pauli_in_place(&mut out, self.qubit, self.pauli);
        out.iter_mut().for_each(|a| *a *= w[0]);
        out
    }
}

/// `|⟨target|ψ⟩|²`, the expectation of the projector onto `target`.
#[derive(Debug, Clone)]
pub struct FidelityObjective {
    pub target: StateVector,
}

impl StateObjective for FidelityObjective {
    fn num_expectations(&self, _: usize) -> usize {
        1
    }

    fn expectations(&self, state: &StateVector) -> Vec<f64> {
        vec![inner_unchecked(self.target.amplitudes(), state.amplitudes()).norm_sqr()]
    }

    fn combine(&self, e: &[f64]) -> f64 {
        e[0]
    }

    fn combine_grad(&self, _: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    fn weighted_observable(&self, state: &StateVector, w: &[f64]) -> Vec<C64> {
        let overlap = inner_unchecked(self.target.amplitudes(), state.amplitudes()) * w[0];
        self.target
            .amplitudes()
            .iter()
            .map(|t| t * overlap)
            .collect()
    }
}

/// `coefficient · Σ_q (1 − P_q)` with `P_q = ½(1 + ⟨X_q⟩² + ⟨Y_q⟩² + ⟨Z_q⟩²)`.
///
/// Expectations are laid out as `[x_0, y_0, z_0, x_1, …]`.
#[derive(Debug, Clone, Copy)]
pub struct ImpurityPenalty {
    pub coefficient: f64,
}

impl StateObjective for ImpurityPenalty {
    fn num_expectations(&self, num_qubits: usize) -> usize {
        3 * num_qubits
    }

    fn expectations(&self, state: &StateVector) -> Vec<f64> {
        (0..state.num_qubits())
            .flat_map(|q| {
                let b = bloch_unchecked(state.amplitudes(), q);
                [b.x, b.y, b.z]
            })
            .collect()
    }

    fn combine(&self, e: &[f64]) -> f64 {
        e.chunks(3)
            .map(|r| 1.0 - 0.5 * (1.0 + r[0] * r[0] + r[1] * r[1] + r[2] * r[2]))
            .sum::<f64>()
            * self.coefficient
    }

    fn combine_grad(&self, e: &[f64]) -> Vec<f64> {
        e.iter().map(|v| -self.coefficient * v).collect()
    }

    fn weighted_observable(&self, state: &StateVector, w: &[f64]) -> Vec<C64> {
        let amps = state.amplitudes();
        let mut out = vec![C64::new(0.0, 0.0); amps.len()];
        let mut scratch = amps.to_vec();
        for q in 0..state.num_qubits() {
            for (k, pauli) in [Pauli::X, Pauli::Y, Pauli::Z].into_iter().enumerate() {
                scratch.copy_from_slice(amps);
                pauli_in_place(&mut scratch, q, pauli);
                let weight = w[3 * q + k];
                out.iter_mut()
                    .zip(&scratch)
                    .for_each(|(o, s)| *o += s * weight);
            }
        }
        out
    }
}

/// Sum of objectives, each scaled by a constant, on a fixed register size.
pub struct WeightedSum {
    num_qubits: usize,
    parts: Vec<(f64, Box<dyn StateObjective + Send + Sync>)>,
}

impl WeightedSum {
    pub fn new(num_qubits: usize) -> Self {
        Self {
            num_qubits,
            parts: Vec::new(),
        }
    }

    pub fn with(mut self, weight: f64, part: impl StateObjective + Send + Sync + 'static) -> Self {
        self.parts.push((weight, Box::new(part)));
        self
    }

    fn chunks<'a>(
        &'a self,
        e: &'a [f64],
    ) -> impl Iterator<Item = (&'a [f64], f64, &'a dyn StateObjective)> + 'a {
        let mut offset = 0;
        self.parts.iter().map(move |(w, p)| {
            let len = p.num_expectations(self.num_qubits);
            let chunk = &e[offset..offset + len];
            offset += len;
            (chunk, *w, p.as_ref() as &dyn StateObjective)
        })
    }
}

impl StateObjective for WeightedSum {
    fn num_expectations(&self, num_qubits: usize) -> usize {
        self.parts
            .iter()
            .map(|(_, p)| p.num_expectations(num_qubits))
            .sum()
    }

    fn expectations(&self, state: &StateVector) -> Vec<f64> {
        self.parts
            .iter()
            .flat_map(|(_, p)| p.expectations(state))
            .collect()
    }

    fn combine(&self, e: &[f64]) -> f64 {
        self.chunks(e)
            .map(|(chunk, w, p)| w * p.combine(chunk))
            .sum()
    }

    fn combine_grad(&self, e: &[f64]) -> Vec<f64> {
        self.chunks(e)
            .flat_map(|(chunk, w, p)| p.combine_grad(chunk).into_iter().map(move |g| g * w))
            .collect()
    }

    fn weighted_observable(&self, state: &StateVector, weights: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); state.dim()];
        for (chunk, _, p) in self.chunks(weights) {
            let part = p.weighted_observable(state, chunk);
            out.iter_mut().zip(&part).for_each(|(o, v)| *o += v);
        }
        out
    }
}

fn expectations_at(
    cfg: &CircuitConfig,
    enc: &[f64],
    var: &[f64],
    objective: &dyn StateObjective,
) -> Result<Vec<f64>> {
    let e = objective.expectations(&run_circuit(cfg, enc, var));
    for &v in &e {
        ensure_finite(v, "expectation at shifted point")?;
    }
    Ok(e)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient by the parameter-shift rule, one `±π/2` pair per rotation gate.
pub fn grad_parameter_shift(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
    objective: &dyn StateObjective,
) -> Result<GradientRecord> {
    check_shapes(cfg, tok, shared)?;
    let mut enc = encoding_angles(tok, shared);
    let mut var = tok.z.clone();
    let base = expectations_at(cfg, &enc, &var, objective)?;
    ensure_finite(objective.combine(&base), "loss")?;
    let weights = objective.combine_grad(&base);

    let shifted = |angles: &mut Vec<f64>, i: usize, other: &[f64], enc_first: bool| {
        let original = angles[i];
        angles[i] = original + FRAC_PI_2;
        let plus = if enc_first {
            expectations_at(cfg, angles, other, objective)
        } else {
            expectations_at(cfg, other, angles, objective)
        };
        angles[i] = original - FRAC_PI_2;
        let minus = if enc_first {
            expectations_at(cfg, angles, other, objective)
        } else {
            expectations_at(cfg, other, angles, objective)
        };
        angles[i] = original;
        let (plus, minus) = (plus?, minus?);
        let diff: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| 0.5 * (p - m))
            .collect();
        Ok::<f64, Error>(dot(&weights, &diff))
    };

    let n = cfg.layer_size();
    let mut grad = AngleGradient {
        enc: vec![0.0; n],
        var: vec![0.0; n],
    };
    for i in 0..n {
        grad.enc[i] = shifted(&mut enc, i, &var, true)?;
    }
    for i in 0..n {
        grad.var[i] = shifted(&mut var, i, &enc, false)?;
    }
    Ok(grad.into_record(tok))
}

/// Gradient by a reverse sweep through the circuit.
///
/// Agrees with [`grad_parameter_shift`] to rounding error at roughly the cost
/// of two circuit executions.
pub fn grad_adjoint(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
    objective: &dyn StateObjective,
) -> Result<GradientRecord> {
    check_shapes(cfg, tok, shared)?;
    let state = embed_unchecked(cfg, tok, shared);
    let e = objective.expectations(&state);
    ensure_finite(objective.combine(&e), "loss")?;
    let weights = objective.combine_grad(&e);
    let cotangent = objective.weighted_observable(&state, &weights);
    Ok(adjoint_from_cotangent(cfg, tok, shared, &state, cotangent))
}

/// Reverse sweep for a loss whose differential is `2·Re⟨g|dψ⟩`.
pub(crate) fn adjoint_from_cotangent(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
    state: &StateVector,
    cotangent: Vec<C64>,
) -> GradientRecord {
    let nq = cfg.num_qubits;
    let enc = encoding_angles(tok, shared);
    let pairs = cfg.entanglement.pairs(nq);
    let mut psi = state.amplitudes().to_vec();
    let mut lam = cotangent;
    let mut grad = AngleGradient {
        enc: vec![0.0; cfg.layer_size()],
        var: vec![0.0; cfg.layer_size()],
    };
    // d/dθ of exp(-iθP/2) contributes Im⟨λ|P|ψ⟩ at the gate's output.
    for b in (0..cfg.num_blocks).rev() {
        for &(c, t) in pairs.iter().rev() {
            cnot_in_place(&mut psi, c, t);
            cnot_in_place(&mut lam, c, t);
        }
        for q in (0..nq).rev() {
            let i = b * nq + q;
            grad.var[i] = pauli_matrix_element(&lam, &psi, q, Pauli::Z).im;
            rz_in_place(&mut psi, q, -tok.z[i]);
            rz_in_place(&mut lam, q, -tok.z[i]);
        }
        for q in (0..nq).rev() {
            let i = b * nq + q;
            grad.enc[i] = pauli_matrix_element(&lam, &psi, q, Pauli::Y).im;
            ry_in_place(&mut psi, q, -enc[i]);
            ry_in_place(&mut lam, q, -enc[i]);
        }
    }
    grad.into_record(tok)
}

/// Central finite differences on every parameter.
pub fn grad_finite_difference<F>(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
    loss_fn: F,
    h: f64,
) -> Result<GradientRecord>
where
    F: Fn(&StateVector) -> f64,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    check_shapes(cfg, tok, shared)?;
    let eval = |t: &TokenParams, s: &SharedParams| -> Result<f64> {
        ensure_finite(loss_fn(&embed_unchecked(cfg, t, s)), "loss")
    };
    let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * h);

    let mut grad = GradientRecord::zeros(cfg);
    let mut t = tok.clone();
    for i in 0..cfg.layer_size() {
        let orig = t.alpha[i];
        t.alpha[i] = orig + h;
        let plus = eval(&t, shared)?;
        t.alpha[i] = orig - h;
        let minus = eval(&t, shared)?;
        t.alpha[i] = orig;
        grad.d_alpha[i] = central(plus, minus);

        let orig = t.z[i];
        t.z[i] = orig + h;
        let plus = eval(&t, shared)?;
        t.z[i] = orig - h;
        let minus = eval(&t, shared)?;
        t.z[i] = orig;
        grad.d_z[i] = central(plus, minus);
    }
    t.x = tok.x + h;
    let plus = eval(&t, shared)?;
    t.x = tok.x - h;
    let minus = eval(&t, shared)?;
    grad.d_x = central(plus, minus);

    let mut s = shared.clone();
    for i in 0..cfg.layer_size() {
        s.a[i] = shared.a[i] + h;
        let plus = eval(tok, &s)?;
        s.a[i] = shared.a[i] - h;
        let minus = eval(tok, &s)?;
        s.a[i] = shared.a[i];
        grad.d_a_shared[i] = central(plus, minus);
    }
    Ok(grad)
}

/// How the variance experiment draws circuit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterDraw {
    /// Every angle uniform in `[-π, π)`, `x = 1`.
    Full,
    /// Only the first encoding offset is drawn; everything else is zero.
    SingleAngle,
}

/// Target state of the fidelity loss in the variance experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceTarget {
    /// One Haar-random state per configuration, fixed across samples.
    Haar,
    /// `|0…0⟩`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRow {
    pub num_qubits: usize,
    pub num_blocks: usize,
    pub lambda_ent: f64,
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Empirical variance of `∂L/∂θ` for the first encoding angle, where
/// `L = F(ψ, target) + λ_ent·mean_q(1 − P_q)` on a ring circuit.
pub fn gradient_variance_experiment(
    shapes: &[(usize, usize)],
    lambda_ents: &[f64],
    samples: usize,
    draw: ParameterDraw,
    target: VarianceTarget,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance experiment needs at least 2 samples, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new(-PI, PI).expect("valid range");
    let mut rows = Vec::new();
    for &(nq, nb) in shapes {
        let entanglement = if nq >= 2 {
            Entanglement::Ring
        } else {
            Entanglement::None
        };
        let cfg = CircuitConfig::new(nq, nb, entanglement)?;
        let target_state = match target {
            VarianceTarget::Haar => StateVector::random(nq, &mut rng)?,
            VarianceTarget::Zero => StateVector::zero(nq)?,
        };
        for &lambda in lambda_ents {
            let objective = WeightedSum::new(nq)
                .with(
                    1.0,
                    FidelityObjective {
                        target: target_state.clone(),
                    },
                )
                .with(lambda / nq as f64, ImpurityPenalty { coefficient: 1.0 });
            let mut grads = Vec::with_capacity(samples);
            for _ in 0..samples {
                let (mut tok, mut shared) = (TokenParams::zeros(&cfg), SharedParams::zeros(&cfg));
                match draw {
                    ParameterDraw::Full => {
                        tok.x = 1.0;
                        tok.alpha
                            .iter_mut()
                            .for_each(|v| *v = angle.sample(&mut rng));
                        tok.z.iter_mut().for_each(|v| *v = angle.sample(&mut rng));
                        shared
                            .a
                            .iter_mut()
                            .for_each(|v| *v = angle.sample(&mut rng));
                    }
                    ParameterDraw::SingleAngle => shared.a[0] = angle.sample(&mut rng),
                }
                grads.push(first_angle_gradient(&cfg, &tok, &shared, &objective)?);
            }
            let mean = grads.iter().sum::<f64>() / samples as f64;
            let variance =
                grads.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
            rows.push(VarianceRow {
                num_qubits: nq,
                num_blocks: nb,
                lambda_ent: lambda,
                samples,
                mean,
                variance,
            });
        }
    }
    Ok(rows)
}

fn first_angle_gradient(
    cfg: &CircuitConfig,
    tok: &TokenParams,
    shared: &SharedParams,
    objective: &dyn StateObjective,
) -> Result<f64> {
    let mut enc = encoding_angles(tok, shared);
    let base = expectations_at(cfg, &enc, &tok.z, objective)?;
    let weights = objective.combine_grad(&base);
    let original = enc[0];
    enc[0] = original + FRAC_PI_2;
    let plus = expectations_at(cfg, &enc, &tok.z, objective)?;
    enc[0] = original - FRAC_PI_2;
    let minus = expectations_at(cfg, &enc, &tok.z, objective)?;
    let diff: Vec<f64> = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| 0.5 * (p - m))
        .collect();
    Ok(dot(&weights, &diff))
}

pub fn write_variance_csv<W: Write>(rows: &[VarianceRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "num_blocks,num_qubits,lambda_ent,samples,mean,variance"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6e},{:.6e}",
            r.num_blocks, r.num_qubits, r.lambda_ent, r.samples, r.mean, r.variance
        )?;
    }
    Ok(())
}
