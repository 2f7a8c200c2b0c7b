//! Pauli words in symplectic (x, z) bitmask form and weighted sums of them.
//!
//! A word acts on qubit `q` as `X` when only bit `q` of `x` is set, `Z` when
//! only bit `q` of `z` is set, and `Y` when both are set. Words carry no
//! phase; phases produced by products are returned separately and absorbed
//! into [`PauliSum`] coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register for which dense matrices are built.
pub const DENSE_QUBIT_CAP: usize = 14;

/// Coefficients with magnitude below this are dropped when a sum is canonicalized.
pub const MERGE_TOLERANCE: f64 = 1e-12;

const MAX_QUBITS: usize = 64;

/// Single-qubit Pauli operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// A power of `i`: one of `1, i, -1, -i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_power(k: u32) -> Self {
        Phase((k % 4) as u8)
    }

    pub fn power(self) -> u8 {
        self.0
    }

    pub fn to_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;
    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

/// Phase-free tensor product of single-qubit Paulis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliWord {
    qubits: usize,
    x: u64,
    z: u64,
}

fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::Precondition(format!(
            "qubit count must lie in 1..={MAX_QUBITS}, got {n}"
        )));
    }
    Ok(())
}

fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl PauliWord {
    pub fn identity(qubits: usize) -> Self {
        assert!((1..=MAX_QUBITS).contains(&qubits), "qubit count {qubits} out of range");
        PauliWord { qubits, x: 0, z: 0 }
    }

    pub fn from_masks(qubits: usize, x: u64, z: u64) -> Result<Self> {
        check_qubits(qubits)?;
        let mask = low_mask(qubits);
        if (x | z) & !mask != 0 {
            let index = 63 - ((x | z) & !mask).leading_zeros() as usize;
            return Err(Error::QubitIndex { index, qubits });
        }
        Ok(PauliWord { qubits, x, z })
    }

    /// Word with a single non-identity factor.
    pub fn single(qubits: usize, qubit: usize, pauli: Pauli) -> Result<Self> {
        Self::from_factors(qubits, &[(qubit, pauli)])
    }

    pub fn from_factors(qubits: usize, factors: &[(usize, Pauli)]) -> Result<Self> {
        check_qubits(qubits)?;
        let (mut x, mut z) = (0u64, 0u64);
        for &(q, p) in factors {
            if q >= qubits {
                return Err(Error::QubitIndex { index: q, qubits });
            }
            let bit = 1u64 << q;
            if (x | z) & bit != 0 {
                return Err(Error::Precondition(format!("qubit {q} listed twice")));
            }
            let (bx, bz) = p.bits();
            if bx {
                x |= bit;
            }
            if bz {
                z |= bit;
            }
        }
        Ok(PauliWord { qubits, x, z })
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    /// Bitmask of qubits acted on non-trivially.
    pub fn support(&self) -> u64 {
        self.x | self.z
    }

    pub fn weight(&self) -> usize {
        self.support().count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support() == 0
    }

    /// Number of `Y` factors.
    pub fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    pub fn get(&self, qubit: usize) -> Pauli {
        let bit = 1u64 << qubit;
        Pauli::from_bits(self.x & bit != 0, self.z & bit != 0)
    }

    /// Non-identity factors in ascending qubit order.
    pub fn factors(&self) -> Vec<(usize, Pauli)> {
        (0..self.qubits)
            .filter(|&q| self.support() >> q & 1 == 1)
            .map(|q| (q, self.get(q)))
            .collect()
    }

    pub fn disjoint(&self, other: &PauliWord) -> bool {
        self.support() & other.support() == 0
    }

    /// Same word on a larger register; qubit indices are unchanged.
    pub fn widen(&self, qubits: usize) -> Result<Self> {
        if qubits < self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: qubits,
            });
        }
        Self::from_masks(qubits, self.x, self.z)
    }

    /// Moves every factor up by `offset` qubits inside a `qubits`-wide register.
    pub fn shifted(&self, offset: usize, qubits: usize) -> Result<Self> {
        if self.qubits + offset > qubits {
            return Err(Error::Dimension {
                expected: self.qubits + offset,
                found: qubits,
            });
        }
        Self::from_masks(qubits, self.x << offset, self.z << offset)
    }

    fn same_register(&self, other: &PauliWord) -> Result<()> {
        if self.qubits != other.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: other.qubits,
            });
        }
        Ok(())
    }

    /// Product `self * other = phase * word`.
    pub fn multiply(&self, other: &PauliWord) -> Result<(Phase, PauliWord)> {
        self.same_register(other)?;
        Ok(self.multiply_unchecked(other))
    }

    pub(crate) fn multiply_unchecked(&self, other: &PauliWord) -> (Phase, PauliWord) {
        // With P = i^{x z} X^x Z^z per qubit, moving Z^{z1} past X^{x2} costs (-1)^{z1 x2}.
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let k = (self.x & self.z).count_ones()
            + (other.x & other.z).count_ones()
            + 2 * (self.z & other.x).count_ones()
            + 3 * (x & z).count_ones();
        (
            Phase::from_power(k),
            PauliWord {
                qubits: self.qubits,
                x,
                z,
            },
        )
    }

    /// Symplectic commutation test.
    pub fn commutes(&self, other: &PauliWord) -> Result<bool> {
        self.same_register(other)?;
        Ok(self.commutes_unchecked(other))
    }

    pub(crate) fn commutes_unchecked(&self, other: &PauliWord) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()) % 2 == 0
    }

    /// Phase acquired by basis state `index`: `P|index> = phase(index) |index ^ x>`.
    #[inline]
    pub fn phase_on(&self, index: usize) -> Complex64 {
        let k = self.y_count() + 2 * ((index as u64 & self.z).count_ones() & 1);
        Phase::from_power(k).to_complex()
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.qubits > DENSE_QUBIT_CAP {
            return Err(Error::DenseCap {
                qubits: self.qubits,
                cap: DENSE_QUBIT_CAP,
            });
        }
        let dim = 1usize << self.qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i ^ self.x as usize, i)] = self.phase_on(i);
        }
        Ok(m)
    }
}

impl fmt::Display for PauliWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "I");
        }
        let parts: Vec<String> = self
            .factors()
            .into_iter()
            .map(|(q, p)| format!("{}{}", p.letter(), q))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Parses whitespace-separated factors such as `"X0 Y2"`; `"I"` is the identity.
pub fn parse_word(text: &str, qubits: usize) -> Result<PauliWord> {
    let mut factors = Vec::new();
    for token in text.split_whitespace() {
        if token == "I" {
            continue;
        }
        let mut chars = token.chars();
        let pauli = match chars.next() {
            Some('X') => Pauli::X,
            Some('Y') => Pauli::Y,
            Some('Z') => Pauli::Z,
            Some('I') => Pauli::I,
            _ => return Err(Error::Parse(format!("bad Pauli factor '{token}'"))),
        };
        let q: usize = chars
            .as_str()
            .parse()
            .map_err(|_| Error::Parse(format!("bad qubit index in '{token}'")))?;
        if pauli != Pauli::I {
            factors.push((q, pauli));
        } else if q >= qubits {
            return Err(Error::QubitIndex { index: q, qubits });
        }
    }
    PauliWord::from_factors(qubits, &factors)
}

/// A word with a complex weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedPauli {
    pub coeff: Complex64,
    pub word: PauliWord,
}

/// Canonical sum of weighted Pauli words: sorted, merged, tiny terms dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum {
    qubits: usize,
    terms: Vec<WeightedPauli>,
}

impl PauliSum {
    pub fn zero(qubits: usize) -> Self {
        assert!((1..=MAX_QUBITS).contains(&qubits), "qubit count {qubits} out of range");
        PauliSum {
            qubits,
            terms: Vec::new(),
        }
    }

    pub fn from_word(coeff: Complex64, word: PauliWord) -> Self {
        Self::from_terms(word.qubit_count(), [(coeff, word)]).expect("single word matches its own register")
    }

    pub fn identity(qubits: usize, coeff: f64) -> Self {
        Self::from_word(Complex64::new(coeff, 0.0), PauliWord::identity(qubits))
    }

    /// Builds a canonical sum, merging duplicate words.
    pub fn from_terms<I>(qubits: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Complex64, PauliWord)>,
    {
        check_qubits(qubits)?;
        let mut merged: BTreeMap<PauliWord, Complex64> = BTreeMap::new();
        for (c, w) in terms {
            if w.qubit_count() != qubits {
                return Err(Error::Dimension {
                    expected: qubits,
                    found: w.qubit_count(),
                });
            }
            *merged.entry(w).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| c.norm() >= MERGE_TOLERANCE)
            .map(|(word, coeff)| WeightedPauli { coeff, word })
            .collect();
        Ok(PauliSum { qubits, terms })
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn terms(&self) -> &[WeightedPauli] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of `word` (zero when absent).
    pub fn coeff(&self, word: &PauliWord) -> Complex64 {
        self.terms
            .binary_search_by(|t| t.word.cmp(word))
            .map(|i| self.terms[i].coeff)
            .unwrap_or_default()
    }

    /// Distinct non-identity words.
    pub fn words(&self) -> Vec<PauliWord> {
        self.terms
            .iter()
            .filter(|t| !t.word.is_identity())
            .map(|t| t.word)
            .collect()
    }

    /// All coefficients real (to the merge tolerance).
    pub fn is_hermitian(&self) -> bool {
        self.terms.iter().all(|t| t.coeff.im.abs() < MERGE_TOLERANCE)
    }

    pub fn check_hermitian(&self) -> Result<()> {
        let worst = self
            .terms
            .iter()
            .map(|t| t.coeff.im.abs())
            .fold(0.0, f64::max);
        if worst >= MERGE_TOLERANCE {
            return Err(Error::NotHermitian(worst));
        }
        Ok(())
    }

    fn same_register(&self, other: &PauliSum) -> Result<()> {
        if self.qubits != other.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: other.qubits,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &PauliSum) -> Result<PauliSum> {
        self.same_register(other)?;
        Self::from_terms(
            self.qubits,
            self.iter_pairs().chain(other.iter_pairs()),
        )
    }

    pub fn sub(&self, other: &PauliSum) -> Result<PauliSum> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, factor: Complex64) -> PauliSum {
        Self::from_terms(self.qubits, self.iter_pairs().map(|(c, w)| (c * factor, w)))
            .expect("same register")
    }

    pub fn scale_real(&self, factor: f64) -> PauliSum {
        self.scale(Complex64::new(factor, 0.0))
    }

    pub fn multiply(&self, other: &PauliSum) -> Result<PauliSum> {
        self.same_register(other)?;
        let mut out = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                let (phase, word) = a.word.multiply_unchecked(&b.word);
                out.push((a.coeff * b.coeff * phase.to_complex(), word));
            }
        }
        Self::from_terms(self.qubits, out)
    }

    pub fn hermitian_conjugate(&self) -> PauliSum {
        Self::from_terms(self.qubits, self.iter_pairs().map(|(c, w)| (c.conj(), w)))
            .expect("same register")
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &PauliSum) -> Result<PauliSum> {
        self.multiply(other)?.sub(&other.multiply(self)?)
    }

    /// `{self, other}`.
    pub fn anticommutator(&self, other: &PauliSum) -> Result<PauliSum> {
        self.multiply(other)?.add(&other.multiply(self)?)
    }

    /// Same operator on a larger register (extra qubits idle).
    pub fn widen(&self, qubits: usize) -> Result<PauliSum> {
        let terms: Result<Vec<_>> = self
            .terms
            .iter()
            .map(|t| Ok((t.coeff, t.word.widen(qubits)?)))
            .collect();
        Self::from_terms(qubits, terms?)
    }

    pub fn shifted(&self, offset: usize, qubits: usize) -> Result<PauliSum> {
        let terms: Result<Vec<_>> = self
            .terms
            .iter()
            .map(|t| Ok((t.coeff, t.word.shifted(offset, qubits)?)))
            .collect();
        Self::from_terms(qubits, terms?)
    }

    /// Bitmask of qubits touched by any term.
    pub fn support(&self) -> u64 {
        self.terms.iter().fold(0, |acc, t| acc | t.word.support())
    }

    /// Largest coefficient magnitude difference to `other`.
    pub fn max_abs_diff(&self, other: &PauliSum) -> Result<f64> {
        Ok(self
            .sub(other)?
            .terms
            .iter()
            .map(|t| t.coeff.norm())
            .fold(0.0, f64::max))
    }

    /// Sum of coefficient magnitudes, an upper bound on the operator norm.
    pub fn one_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.norm()).sum()
    }

    fn iter_pairs(&self) -> impl Iterator<Item = (Complex64, PauliWord)> + '_ {
        self.terms.iter().map(|t| (t.coeff, t.word))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.qubits > DENSE_QUBIT_CAP {
            return Err(Error::DenseCap {
                qubits: self.qubits,
                cap: DENSE_QUBIT_CAP,
            });
        }
        let dim = 1usize << self.qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for t in &self.terms {
            let x = t.word.x_mask() as usize;
            for i in 0..dim {
                m[(i ^ x, i)] += t.coeff * t.word.phase_on(i);
            }
        }
        Ok(m)
    }

    /// Pauli decomposition of a dense Hermitian matrix: `c_P = Tr(P m) / 2^n`.
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Result<PauliSum> {
        let dim = m.nrows();
        if m.ncols() != dim {
            return Err(Error::Precondition(format!(
                "matrix is {}x{}, not square",
                dim,
                m.ncols()
            )));
        }
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(dim));
        }
        let qubits = dim.trailing_zeros() as usize;
        if qubits > DENSE_QUBIT_CAP {
            return Err(Error::DenseCap {
                qubits,
                cap: DENSE_QUBIT_CAP,
            });
        }
        let dev = (m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if dev > 1e-10 {
            return Err(Error::NotHermitian(dev));
        }
        let scale = 1.0 / dim as f64;
        let mut terms = Vec::new();
        for x in 0..dim as u64 {
            for z in 0..dim as u64 {
                let w = PauliWord { qubits, x, z };
                // Tr(P m) = sum_j <j|P|j^x> m[j^x, j]
                let mut tr = Complex64::new(0.0, 0.0);
                for j in 0..dim {
                    let l = j ^ x as usize;
                    tr += w.phase_on(l) * m[(l, j)];
                }
                terms.push((tr * scale, w));
            }
        }
        Self::from_terms(qubits, terms)
    }
}

fn format_coeff(c: Complex64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else {
        format!("({},{})", c.re, c.im)
    }
}

impl fmt::Display for PauliSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| format!("{}*{}", format_coeff(t.coeff), t.word))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

fn parse_coeff(text: &str) -> Result<Complex64> {
    let text = text.trim();
    let bad = || Error::Parse(format!("bad coefficient '{text}'"));
    if let Some(inner) = text.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
        let (re, im) = inner.split_once(',').ok_or_else(bad)?;
        let re: f64 = re.trim().parse().map_err(|_| bad())?;
        let im: f64 = im.trim().parse().map_err(|_| bad())?;
        Ok(Complex64::new(re, im))
    } else {
        Ok(Complex64::new(text.parse().map_err(|_| bad())?, 0.0))
    }
}

/// Parses the textual notation, e.g. `"0.5*Z0 Z1 + -0.25*X0 Y2"`.
pub fn parse_sum(text: &str, qubits: usize) -> Result<PauliSum> {
    let text = text.trim();
    if text == "0" || text.is_empty() {
        check_qubits(qubits)?;
        return Ok(PauliSum::zero(qubits));
    }
    let mut terms = Vec::new();
    for part in text.split(" + ") {
        let (coeff, word) = match part.split_once('*') {
            Some((c, w)) => (parse_coeff(c)?, w),
            None => (Complex64::new(1.0, 0.0), part),
        };
        terms.push((coeff, parse_word(word, qubits)?));
    }
    PauliSum::from_terms(qubits, terms)
}

impl FromStr for PauliSum {
    type Err = Error;

    /// Register width is inferred from the highest qubit index.
    fn from_str(s: &str) -> Result<Self> {
        let mut top = 0usize;
        for token in s.split(|c: char| c.is_whitespace() || c == '*') {
            if let Some(rest) = token.strip_prefix(['X', 'Y', 'Z']) {
                if let Ok(q) = rest.parse::<usize>() {
                    top = top.max(q + 1);
                }
            }
        }
        parse_sum(s, top.max(1))
    }
}
