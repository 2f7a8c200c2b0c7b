//! Dense statevector simulation.
//!
//! Qubit 0 is the least-significant bit of the basis index, so basis state
//! `|q_{n-1} ... q_1 q_0>` sits at index `sum_k q_k 2^k`. The slice-level
//! kernels (`*_slice`) are used by the variational engine, which keeps its
//! own scratch buffers; the [`StateVector`] methods wrap them with checks.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::pauli::{PauliSum, PauliWord, DENSE_QUBIT_CAP};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance for the real part of an expectation value to be considered real.
pub const EXPECTATION_IMAG_TOL: f64 = 1e-9;

#[inline]
fn y_phase(word: &PauliWord) -> Complex64 {
    match word.y_count() % 4 {
        0 => ONE,
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

#[inline]
fn signed(c: Complex64, index: usize, z: u64) -> Complex64 {
    if (index as u64 & z).count_ones() & 1 == 1 {
        -c
    } else {
        c
    }
}

/// `amps <- P amps`.
pub fn apply_pauli_slice(amps: &mut [Complex64], word: &PauliWord) {
    let x = word.x_mask() as usize;
    let z = word.z_mask();
    let base = y_phase(word);
    if x == 0 {
        for (i, a) in amps.iter_mut().enumerate() {
            *a *= signed(base, i, z);
        }
        return;
    }
    let top = 1usize << (usize::BITS - 1 - x.leading_zeros());
    for i in 0..amps.len() {
        if i & top != 0 {
            continue;
        }
        let j = i ^ x;
        let a = amps[i];
        let b = amps[j];
        amps[j] = signed(base, i, z) * a;
        amps[i] = signed(base, j, z) * b;
    }
}

/// `dst <- P src`.
pub fn pauli_into_slice(src: &[Complex64], dst: &mut [Complex64], word: &PauliWord) {
    let x = word.x_mask() as usize;
    let z = word.z_mask();
    let base = y_phase(word);
    for (i, &a) in src.iter().enumerate() {
        dst[i ^ x] = signed(base, i, z) * a;
    }
}

/// `dst += c P src`.
pub fn pauli_accumulate_slice(src: &[Complex64], dst: &mut [Complex64], word: &PauliWord, c: Complex64) {
    let x = word.x_mask() as usize;
    let z = word.z_mask();
    let base = y_phase(word) * c;
    for (i, &a) in src.iter().enumerate() {
        dst[i ^ x] += signed(base, i, z) * a;
    }
}

/// `amps <- exp(-i theta P) amps = cos(theta) amps - i sin(theta) P amps`.
pub fn rotate_slice(amps: &mut [Complex64], theta: f64, word: &PauliWord) {
    if theta == 0.0 {
        return;
    }
    let (s, c) = theta.sin_cos();
    let x = word.x_mask() as usize;
    let z = word.z_mask();
    // -i sin(theta) times the Y phase.
    let base = Complex64::new(0.0, -s) * y_phase(word);
    if x == 0 {
        for (i, a) in amps.iter_mut().enumerate() {
            *a *= Complex64::new(c, 0.0) + signed(base, i, z);
        }
        return;
    }
    let top = 1usize << (usize::BITS - 1 - x.leading_zeros());
    for i in 0..amps.len() {
        if i & top != 0 {
            continue;
        }
        let j = i ^ x;
        let a = amps[i];
        let b = amps[j];
        amps[i] = a * c + signed(base, j, z) * b;
        amps[j] = b * c + signed(base, i, z) * a;
    }
}

/// `dst <- H src`.
pub fn sum_into_slice(h: &PauliSum, src: &[Complex64], dst: &mut [Complex64]) {
    dst.iter_mut().for_each(|d| *d = ZERO);
    for t in h.terms() {
        pauli_accumulate_slice(src, dst, &t.word, t.coeff);
    }
}

/// `<a|b>`.
pub fn inner_slice(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

/// `Re <a|b>` without forming the imaginary part.
pub fn inner_re_slice(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Hadamard on `qubit`.
pub fn hadamard_slice(amps: &mut [Complex64], qubit: usize) {
    let bit = 1usize << qubit;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..amps.len() {
        if i & bit == 0 {
            let a = amps[i];
            let b = amps[i | bit];
            amps[i] = (a + b) * r;
            amps[i | bit] = (a - b) * r;
        }
    }
}

/// Phase gate `S = diag(1, i)` on `qubit`.
pub fn s_gate_slice(amps: &mut [Complex64], qubit: usize) {
    let bit = 1usize << qubit;
    for (i, a) in amps.iter_mut().enumerate() {
        if i & bit != 0 {
            *a *= Complex64::new(0.0, 1.0);
        }
    }
}

/// Applies `word` only on basis states whose `control` bit equals `value`.
pub fn controlled_pauli_slice(amps: &mut [Complex64], control: usize, value: bool, word: &PauliWord) {
    let cbit = 1usize << control;
    let want = if value { cbit } else { 0 };
    let x = word.x_mask() as usize;
    let z = word.z_mask();
    let base = y_phase(word);
    if x == 0 {
        for (i, a) in amps.iter_mut().enumerate() {
            if i & cbit == want {
                *a *= signed(base, i, z);
            }
        }
        return;
    }
    let top = 1usize << (usize::BITS - 1 - x.leading_zeros());
    for i in 0..amps.len() {
        if i & top != 0 || i & cbit != want {
            continue;
        }
        let j = i ^ x;
        let a = amps[i];
        let b = amps[j];
        amps[j] = signed(base, i, z) * a;
        amps[i] = signed(base, j, z) * b;
    }
}

/// Normalized dense amplitude vector.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Computational basis state with the given index.
    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        if qubits == 0 || qubits > DENSE_QUBIT_CAP {
            return Err(Error::DenseCap {
                qubits,
                cap: DENSE_QUBIT_CAP,
            });
        }
        let dim = 1usize << qubits;
        if index >= dim {
            return Err(Error::Precondition(format!(
                "basis index {index} outside a {qubits}-qubit register"
            )));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(StateVector { qubits, amps })
    }

    /// Basis state from a bitstring whose k-th character is qubit k.
    pub fn from_bitstring(bits: &str, qubits: usize) -> Result<Self> {
        let chars: Vec<char> = bits.chars().collect();
        if chars.len() != qubits {
            return Err(Error::Dimension {
                expected: qubits,
                found: chars.len(),
            });
        }
        let mut index = 0usize;
        for (k, ch) in chars.iter().enumerate() {
            match ch {
                '0' => {}
                '1' => index |= 1 << k,
                _ => return Err(Error::Parse(format!("bad bit '{ch}' in '{bits}'"))),
            }
        }
        Self::basis(qubits, index)
    }

    /// Wraps raw amplitudes after checking length and normalization.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(dim));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!("amplitudes have norm^2 {norm}")));
        }
        Ok(StateVector {
            qubits: dim.trailing_zeros() as usize,
            amps,
        })
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Precondition("cannot normalize a zero vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(amps)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_word(&self, word: &PauliWord) -> Result<()> {
        if word.qubit_count() != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: word.qubit_count(),
            });
        }
        Ok(())
    }

    fn check_state(&self, other: &StateVector) -> Result<()> {
        if other.qubits != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: other.qubits,
            });
        }
        Ok(())
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.qubits {
            return Err(Error::QubitIndex {
                index: qubit,
                qubits: self.qubits,
            });
        }
        Ok(())
    }

    pub fn apply_pauli(&mut self, word: &PauliWord) -> Result<()> {
        self.check_word(word)?;
        apply_pauli_slice(&mut self.amps, word);
        Ok(())
    }

    pub fn apply_rotation(&mut self, theta: f64, word: &PauliWord) -> Result<()> {
        self.check_word(word)?;
        if word.is_identity() {
            return Err(Error::Precondition(
                "identity generator only contributes a global phase".into(),
            ));
        }
        rotate_slice(&mut self.amps, theta, word);
        Ok(())
    }

    /// Applies `word` on the subspace where `control` reads `value`.
    pub fn apply_controlled_pauli(&mut self, control: usize, word: &PauliWord, value: bool) -> Result<()> {
        self.check_word(word)?;
        self.check_qubit(control)?;
        if word.support() >> control & 1 == 1 {
            return Err(Error::Precondition(format!(
                "control qubit {control} overlaps the target word {word}"
            )));
        }
        controlled_pauli_slice(&mut self.amps, control, value, word);
        Ok(())
    }

    pub fn apply_hadamard(&mut self, qubit: usize) -> Result<()> {
        self.check_qubit(qubit)?;
        hadamard_slice(&mut self.amps, qubit);
        Ok(())
    }

    pub fn apply_s(&mut self, qubit: usize) -> Result<()> {
        self.check_qubit(qubit)?;
        s_gate_slice(&mut self.amps, qubit);
        Ok(())
    }

    /// Probability of reading `value` on `qubit`.
    pub fn probability(&self, qubit: usize, value: bool) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = 1usize << qubit;
        let want = if value { bit } else { 0 };
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit == want)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.check_state(other)?;
        Ok(inner_slice(&self.amps, &other.amps))
    }

    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr().min(1.0))
    }

    /// `H |self>` as a raw (unnormalized) vector.
    pub fn apply_sum(&self, h: &PauliSum) -> Result<Vec<Complex64>> {
        if h.qubit_count() != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: h.qubit_count(),
            });
        }
        let mut out = vec![ZERO; self.dim()];
        sum_into_slice(h, &self.amps, &mut out);
        Ok(out)
    }

    pub fn expectation(&self, h: &PauliSum) -> Result<f64> {
        h.check_hermitian()?;
        let hpsi = self.apply_sum(h)?;
        let e = inner_slice(&self.amps, &hpsi);
        if e.im.abs() > EXPECTATION_IMAG_TOL {
            return Err(Error::NotHermitian(e.im.abs()));
        }
        Ok(e.re)
    }

    pub fn variance(&self, h: &PauliSum) -> Result<f64> {
        h.check_hermitian()?;
        let hpsi = self.apply_sum(h)?;
        let e = inner_slice(&self.amps, &hpsi).re;
        let h2: f64 = hpsi.iter().map(|a| a.norm_sqr()).sum();
        Ok((h2 - e * e).max(0.0))
    }

    /// Adds idle qubits above the current register.
    pub fn widen(&self, qubits: usize) -> Result<StateVector> {
        if qubits < self.qubits || qubits > DENSE_QUBIT_CAP {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: qubits,
            });
        }
        let mut amps = vec![ZERO; 1 << qubits];
        amps[..self.dim()].copy_from_slice(&self.amps);
        Ok(StateVector { qubits, amps })
    }

    /// Little-endian index order, interleaved real/imaginary f64 values.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for a in &self.amps {
            out.write_all(&a.re.to_le_bytes())?;
            out.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<StateVector> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Parse(format!("statevector dump: {e}")))?;
        if bytes.len() % 16 != 0 {
            return Err(Error::Parse("statevector dump length is not a multiple of 16".into()));
        }
        let amps = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        Self::from_amplitudes(amps)
    }
}

/// Cached spectral decomposition of a Hamiltonian used for exact time evolution.
///
/// States may carry extra spectator qubits above the Hamiltonian's register;
/// each contiguous block of `2^n` amplitudes is then evolved independently.
#[derive(Clone, Debug)]
pub struct Propagator {
    qubits: usize,
    values: Arc<Vec<f64>>,
    vectors: Arc<DMatrix<Complex64>>,
}

impl Propagator {
    pub fn new(h: &PauliSum) -> Result<Self> {
        h.check_hermitian()?;
        let (values, vectors) = hermitian_eigen(&h.to_matrix()?);
        Ok(Propagator {
            qubits: h.qubit_count(),
            values: Arc::new(values),
            vectors: Arc::new(vectors),
        })
    }

    pub(crate) fn from_parts(qubits: usize, values: Vec<f64>, vectors: DMatrix<Complex64>) -> Self {
        Propagator {
            qubits,
            values: Arc::new(values),
            vectors: Arc::new(vectors),
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    /// Eigenbasis coefficients of every block of `amps`.
    pub fn project(&self, amps: &[Complex64]) -> Vec<Complex64> {
        let d = self.values.len();
        let mut out = vec![ZERO; amps.len()];
        for (block, dst) in amps.chunks(d).zip(out.chunks_mut(d)) {
            for (k, o) in dst.iter_mut().enumerate() {
                let col = self.vectors.column(k);
                *o = col.iter().zip(block).fold(ZERO, |acc, (v, a)| acc + v.conj() * a);
            }
        }
        out
    }

    /// Inverse of [`Propagator::project`].
    pub fn reconstruct(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let d = self.values.len();
        let mut out = vec![ZERO; coeffs.len()];
        for (block, dst) in coeffs.chunks(d).zip(out.chunks_mut(d)) {
            for (k, &c) in block.iter().enumerate() {
                if c == ZERO {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(self.vectors.column(k).iter()) {
                    *o += v * c;
                }
            }
        }
        out
    }

    /// Multiplies eigenbasis coefficients by `exp(-i E t)`.
    pub fn phase_coefficients(&self, coeffs: &mut [Complex64], t: f64) {
        let d = self.values.len();
        for block in coeffs.chunks_mut(d) {
            for (c, &e) in block.iter_mut().zip(self.values.iter()) {
                *c *= Complex64::from_polar(1.0, -e * t);
            }
        }
    }

    /// `exp(-i t H) |state>`.
    pub fn evolve(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        if state.qubit_count() < self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: state.qubit_count(),
            });
        }
        if t == 0.0 {
            return Ok(state.clone());
        }
        let mut coeffs = self.project(state.amplitudes());
        self.phase_coefficients(&mut coeffs, t);
        Ok(StateVector {
            qubits: state.qubit_count(),
            amps: self.reconstruct(&coeffs),
        })
    }
}

/// One-shot exact evolution `exp(-i dt H) |state>`; reuse a [`Propagator`] for repeated calls.
pub fn exact_evolve(state: &StateVector, h: &PauliSum, dt: f64) -> Result<StateVector> {
    Propagator::new(h)?.evolve(state, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{parse_sum, parse_word};
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn bitstrings() {
        let s = StateVector::from_bitstring("00", 2).unwrap();
        assert_eq!(s.amplitudes(), &[ONE, ZERO, ZERO, ZERO]);
        let s = StateVector::from_bitstring("1", 1).unwrap();
        assert_eq!(s.amplitudes(), &[ZERO, ONE]);
        let s = StateVector::from_bitstring("01", 2).unwrap();
        assert_eq!(s.amplitudes()[2], ONE);
        assert!(StateVector::from_bitstring("0", 2).is_err());
    }

    #[test]
    fn single_qubit_paulis() {
        let mut s = StateVector::basis(1, 0).unwrap();
        s.apply_pauli(&parse_word("X0", 1).unwrap()).unwrap();
        assert_eq!(s.amplitudes(), &[ZERO, ONE]);

        let mut s = StateVector::from_amplitudes(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        s.apply_pauli(&parse_word("Z0", 1).unwrap()).unwrap();
        assert_eq!(s.amplitudes(), &[c(0.6, 0.0), c(0.0, -0.8)]);

        let mut s = StateVector::basis(1, 0).unwrap();
        s.apply_pauli(&parse_word("Y0", 1).unwrap()).unwrap();
        assert_eq!(s.amplitudes(), &[ZERO, c(0.0, 1.0)]);
    }

    #[test]
    fn rotations() {
        let x = parse_word("X0", 1).unwrap();
        let mut s = StateVector::basis(1, 0).unwrap();
        s.apply_rotation(0.0, &x).unwrap();
        assert_eq!(s.amplitudes(), &[ONE, ZERO]);

        s.apply_rotation(FRAC_PI_4, &x).unwrap();
        assert!(close(s.amplitudes(), &[c(FRAC_1_SQRT_2, 0.0), c(0.0, -FRAC_1_SQRT_2)], 1e-15));

        let w = parse_word("Y0 Z1", 2).unwrap();
        let mut s = StateVector::normalized(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0), c(0.1, -0.4)]).unwrap();
        let mut expect = s.clone();
        expect.apply_pauli(&w).unwrap();
        s.apply_rotation(FRAC_PI_2, &w).unwrap();
        let expect: Vec<_> = expect.amplitudes().iter().map(|a| a * c(0.0, -1.0)).collect();
        assert!(close(s.amplitudes(), &expect, 1e-15));

        let identity = PauliWord::identity(1);
        assert!(matches!(
            StateVector::basis(1, 0).unwrap().apply_rotation(0.1, &identity),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn controlled_pauli() {
        let x = parse_word("X0", 2).unwrap();
        let mut s = StateVector::from_bitstring("00", 2).unwrap();
        s.apply_controlled_pauli(1, &x, true).unwrap();
        assert_eq!(s.amplitudes()[0], ONE);
        let mut s = StateVector::from_bitstring("01", 2).unwrap();
        s.apply_controlled_pauli(1, &x, true).unwrap();
        assert_eq!(s.amplitudes()[3], ONE);
        let overlap = parse_word("X1", 2).unwrap();
        assert!(s.apply_controlled_pauli(1, &overlap, true).is_err());
    }

    #[test]
    fn hadamard_test_structure() {
        // (|0>|psi> + |1> P|psi>)/sqrt2 with the ancilla as qubit 1
        let mut s = StateVector::basis(2, 0).unwrap();
        s.apply_hadamard(1).unwrap();
        let p = parse_word("X0", 2).unwrap();
        s.apply_controlled_pauli(1, &p, true).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!(close(s.amplitudes(), &[c(r, 0.0), ZERO, ZERO, c(r, 0.0)], 1e-15));
    }

    #[test]
    fn observables() {
        let z = parse_sum("1*Z0", 1).unwrap();
        let s = StateVector::basis(1, 0).unwrap();
        assert_eq!(s.expectation(&z).unwrap(), 1.0);
        assert_eq!(s.variance(&z).unwrap(), 0.0);
        assert_eq!(s.fidelity(&s).unwrap(), 1.0);
        let anti = PauliSum::from_word(c(0.0, 1.0), parse_word("Z0", 1).unwrap());
        assert!(s.expectation(&anti).is_err());
    }

    #[test]
    fn exact_evolution() {
        let h = parse_sum("0.7*Z0 + 0.3*X0 X1 + -0.4*Y1", 2).unwrap();
        let prop = Propagator::new(&h).unwrap();
        let s = StateVector::normalized(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0), c(0.1, -0.4)]).unwrap();
        let same = prop.evolve(&s, 0.0).unwrap();
        assert_eq!(same, s);
        let two = prop.evolve(&prop.evolve(&s, 0.3).unwrap(), 0.3).unwrap();
        let one = prop.evolve(&s, 0.6).unwrap();
        assert!(close(two.amplitudes(), one.amplitudes(), 1e-10));

        let v0: Vec<Complex64> = prop.eigenvectors().column(0).iter().copied().collect();
        let e0 = prop.eigenvalues()[0];
        let eig = StateVector::from_amplitudes(v0.clone()).unwrap();
        let out = prop.evolve(&eig, 1.3).unwrap();
        let expect: Vec<_> = v0.iter().map(|a| a * Complex64::from_polar(1.0, -e0 * 1.3)).collect();
        assert!(close(out.amplitudes(), &expect, 1e-10));
    }

    #[test]
    fn spectator_blocks_evolve_independently() {
        let h = parse_sum("0.5*X0 + 0.2*Z0", 1).unwrap();
        let prop = Propagator::new(&h).unwrap();
        let mut s = StateVector::basis(2, 0).unwrap();
        s.apply_hadamard(1).unwrap();
        let joint = prop.evolve(&s, 0.8).unwrap();
        let single = prop.evolve(&StateVector::basis(1, 0).unwrap(), 0.8).unwrap();
        let r = FRAC_1_SQRT_2;
        for k in 0..2 {
            assert!((joint.amplitudes()[k] - single.amplitudes()[k] * r).norm() < 1e-12);
            assert!((joint.amplitudes()[k + 2] - single.amplitudes()[k] * r).norm() < 1e-12);
        }
    }

    #[test]
    fn binary_round_trip() {
        let s = StateVector::normalized(vec![c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0), c(0.1, -0.4)]).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 64);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), s.amplitudes()[1].re);
        let back = StateVector::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }
}
