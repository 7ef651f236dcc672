//! Exact pure-state simulation of small qubit registers.
//!
//! Amplitudes are stored little-endian: qubit 0 is the least-significant bit
//! of the basis index. Gates mutate the state in place.
//!
//! [`DensityMatrix`] is a dense oracle used by tests and the noise analysis;
//! it is never touched by training.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest register a [`StateVector`] may hold.
pub const MAX_QUBITS: usize = 14;

/// Largest register the dense density-matrix oracle accepts.
pub const MAX_ORACLE_QUBITS: usize = 8;

const NORM_TOLERANCE: f64 = 1e-9;

/// A normalized pure state of `num_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// The all-zeros basis state |0…0⟩.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = C64::new(1.0, 0.0);
        Ok(Self { num_qubits, amps })
    }

    /// The computational basis state |index⟩.
    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        let mut state = Self::zero(num_qubits)?;
        if index >= state.amps.len() {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {num_qubits} qubits"
            )));
        }
        state.amps[0] = C64::new(0.0, 0.0);
        state.amps[index] = C64::new(1.0, 0.0);
        Ok(state)
    }

    /// Wraps raw amplitudes. The length must be a power of two and the
    /// vector must already be normalized.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "{num_qubits} qubits exceeds the {MAX_QUBITS}-qubit cap"
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "amplitudes are not normalized (norm² = {norm})"
            )));
        }
        Ok(Self { num_qubits, amps })
    }

    /// Haar-random state from normalized complex Gaussians.
    pub fn random<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> Result<Self> {
        let mut state = Self::zero(num_qubits)?;
        for a in state.amps.iter_mut() {
            *a = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        state.renormalize();
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Multiplies every amplitude by `e^{i·gamma}`.
    pub fn with_global_phase(mut self, gamma: f64) -> Self {
        let phase = C64::from_polar(1.0, gamma);
        for a in self.amps.iter_mut() {
            *a *= phase;
        }
        self
    }

    fn renormalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        for a in self.amps.iter_mut() {
            *a /= norm;
        }
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.num_qubits {
            Err(Error::QubitOutOfRange {
                qubit,
                num_qubits: self.num_qubits,
            })
        } else {
            Ok(())
        }
    }

    /// Applies `R_y(theta) = [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]]` on `qubit`.
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        self.ry_unchecked(qubit, theta);
        Ok(())
    }

    /// Applies `R_z(phi) = diag(e^{−iφ/2}, e^{iφ/2})` on `qubit`.
    pub fn apply_rz(&mut self, qubit: usize, phi: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        self.rz_unchecked(qubit, phi);
        Ok(())
    }

    /// Flips `target` on every basis state whose `control` bit is set.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::SameQubit(control));
        }
        self.cnot_unchecked(control, target);
        Ok(())
    }

    pub(crate) fn ry_unchecked(&mut self, qubit: usize, theta: f64) {
        ry_in_place(&mut self.amps, qubit, theta);
    }

    pub(crate) fn rz_unchecked(&mut self, qubit: usize, phi: f64) {
        rz_in_place(&mut self.amps, qubit, phi);
    }

    pub(crate) fn cnot_unchecked(&mut self, control: usize, target: usize) {
        cnot_in_place(&mut self.amps, control, target);
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(inner_unchecked(&self.amps, &other.amps))
    }

    /// `P|self⟩` for a single-qubit Pauli on `qubit`.
    pub fn apply_pauli(&self, qubit: usize, pauli: Pauli) -> Result<Vec<C64>> {
        self.check_qubit(qubit)?;
        let mut out = self.amps.clone();
        pauli_in_place(&mut out, qubit, pauli);
        Ok(out)
    }
}

pub(crate) fn ry_in_place(amps: &mut [C64], qubit: usize, theta: f64) {
    let (s, c) = (0.5 * theta).sin_cos();
    let mask = 1usize << qubit;
    for i in 0..amps.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (a0, a1) = (amps[i], amps[j]);
            amps[i] = a0 * c - a1 * s;
            amps[j] = a0 * s + a1 * c;
        }
    }
}

pub(crate) fn rz_in_place(amps: &mut [C64], qubit: usize, phi: f64) {
    let lower = C64::from_polar(1.0, -0.5 * phi);
    let upper = lower.conj();
    let mask = 1usize << qubit;
    for (i, a) in amps.iter_mut().enumerate() {
        *a *= if i & mask == 0 { lower } else { upper };
    }
}

pub(crate) fn cnot_in_place(amps: &mut [C64], control: usize, target: usize) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

pub(crate) fn inner_unchecked(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Single-qubit Pauli operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

pub(crate) fn pauli_in_place(amps: &mut [C64], qubit: usize, pauli: Pauli) {
    let mask = 1usize << qubit;
    let i_unit = C64::new(0.0, 1.0);
    for i in 0..amps.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (a0, a1) = (amps[i], amps[j]);
            match pauli {
                Pauli::X => {
                    amps[i] = a1;
                    amps[j] = a0;
                }
                Pauli::Y => {
                    amps[i] = -i_unit * a1;
                    amps[j] = i_unit * a0;
                }
                Pauli::Z => {
                    amps[j] = -a1;
                }
            }
        }
    }
}

/// `⟨bra| P_qubit |ket⟩` without materializing `P|ket⟩`.
pub(crate) fn pauli_matrix_element(bra: &[C64], ket: &[C64], qubit: usize, pauli: Pauli) -> C64 {
    let mask = 1usize << qubit;
    let i_unit = C64::new(0.0, 1.0);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..ket.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (b0, b1) = (bra[i].conj(), bra[j].conj());
            let (k0, k1) = (ket[i], ket[j]);
            acc += match pauli {
                Pauli::X => b0 * k1 + b1 * k0,
                Pauli::Y => b0 * (-i_unit * k1) + b1 * (i_unit * k0),
                Pauli::Z => b0 * k0 - b1 * k1,
            };
        }
    }
    acc
}

/// `|⟨a|b⟩|²`.
pub fn fidelity_pure(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner(b)?.norm_sqr())
}

/// Single-qubit Pauli expectations `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn length_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    /// `Tr[ρ²] = ½(1 + |r|²)` of the corresponding single-qubit state.
    pub fn purity(&self) -> f64 {
        0.5 * (1.0 + self.length_sqr())
    }
}

/// Bloch vector of `qubit`, summed directly over amplitude pairs.
pub fn bloch_vector(state: &StateVector, qubit: usize) -> Result<BlochVector> {
    state.check_qubit(qubit)?;
    Ok(bloch_unchecked(&state.amps, qubit))
}

pub(crate) fn bloch_unchecked(amps: &[C64], qubit: usize) -> BlochVector {
    let mask = 1usize << qubit;
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for i in 0..amps.len() {
        if i & mask == 0 {
            let a0 = amps[i];
            let a1 = amps[i | mask];
            let cross = a0.conj() * a1;
            x += 2.0 * cross.re;
            y += 2.0 * cross.im;
            z += a0.norm_sqr() - a1.norm_sqr();
        }
    }
    BlochVector { x, y, z }
}

/// Single-qubit purity `Tr[ρ_q²]` from Pauli expectations.
pub fn purity(state: &StateVector, qubit: usize) -> Result<f64> {
    Ok(bloch_vector(state, qubit)?.purity())
}

/// Dense `2^Q × 2^Q` density matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    num_qubits: usize,
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn from_pure(state: &StateVector) -> Result<Self> {
        if state.num_qubits > MAX_ORACLE_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "density-matrix oracle is capped at {MAX_ORACLE_QUBITS} qubits"
            )));
        }
        let dim = state.dim();
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(state.amps[r] * state.amps[c].conj());
            }
        }
        Ok(Self {
            num_qubits: state.num_qubits,
            dim,
            data,
        })
    }

    /// `I / 2^Q`.
    pub fn maximally_mixed(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_ORACLE_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "num_qubits must be in [1, {MAX_ORACLE_QUBITS}], got {num_qubits}"
            )));
        }
        let dim = 1usize << num_qubits;
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        Ok(Self {
            num_qubits,
            dim,
            data,
        })
    }

    /// Builds a matrix from row-major entries without checking positivity.
    pub fn from_entries(num_qubits: usize, data: Vec<C64>) -> Result<Self> {
        let dim = 1usize << num_qubits;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch(data.len(), dim * dim));
        }
        Ok(Self {
            num_qubits,
            dim,
            data,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (0..self.dim)
            .all(|r| (0..self.dim).all(|c| (self.get(r, c) - self.get(c, r).conj()).norm() <= tol))
    }

    /// `Tr[ρ²]`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|e| e.norm_sqr()).sum()
    }

    /// `a·self + b·other`.
    pub fn mix(&self, a: f64, other: &DensityMatrix, b: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(Self {
            num_qubits: self.num_qubits,
            dim: self.dim,
            data,
        })
    }
}

/// Reduced density matrix over the qubits in `keep`.
///
/// Bit `i` of the reduced basis index corresponds to qubit `keep[i]`.
pub fn partial_trace(state: &StateVector, keep: &[usize]) -> Result<DensityMatrix> {
    if keep.is_empty() || keep.len() > MAX_ORACLE_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "keep must list between 1 and {MAX_ORACLE_QUBITS} qubits"
        )));
    }
    let mut seen = 0usize;
    for &q in keep {
        state.check_qubit(q)?;
        if seen & (1 << q) != 0 {
            return Err(Error::InvalidArgument(format!("qubit {q} listed twice")));
        }
        seen |= 1 << q;
    }
    let traced: Vec<usize> = (0..state.num_qubits)
        .filter(|q| seen & (1 << q) == 0)
        .collect();

    let kdim = 1usize << keep.len();
    let compose = |kept: usize, env: usize| -> usize {
        let mut idx = 0usize;
        for (bit, &q) in keep.iter().enumerate() {
            idx |= ((kept >> bit) & 1) << q;
        }
        for (bit, &q) in traced.iter().enumerate() {
            idx |= ((env >> bit) & 1) << q;
        }
        idx
    };

    let mut data = vec![C64::new(0.0, 0.0); kdim * kdim];
    for env in 0..(1usize << traced.len()) {
        for r in 0..kdim {
            let ar = state.amps[compose(r, env)];
            for c in 0..kdim {
                data[r * kdim + c] += ar * state.amps[compose(c, env)].conj();
            }
        }
    }
    Ok(DensityMatrix {
        num_qubits: keep.len(),
        dim: kdim,
        data,
    })
}

/// `Tr[a·b]`, the overlap used for mixed states in the noise analysis.
///
/// This is not the Uhlmann fidelity; the two coincide when either argument is pure.
pub fn fidelity_mixed(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(a.dim, b.dim));
    }
    let d = a.dim;
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..d {
        for c in 0..d {
            acc += a.data[r * d + c] * b.data[c * d + r];
        }
    }
    Ok(acc.re)
}
