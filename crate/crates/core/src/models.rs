//! Model Hamiltonians, fermion and spin encodings, and operator pools.
//!
//! Hubbard chains use `2N` qubits: spin-up orbitals on qubits `0..N`, spin-down
//! orbitals on `N..2N`, with Jordan-Wigner strings running over lower qubit
//! indices. Spin-1 chains use a Gray code on two qubits per site: site `j`
//! occupies qubits `(2j, 2j+1)` and the level codes `(q_{2j} q_{2j+1})` are
//! `m=+1 -> 00`, `m=0 -> 01`, `m=-1 -> 11`, leaving `10` unused.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliSum, PauliWord};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `c_p = 1/2 (prod_{j<p} Z_j)(X_p + i Y_p)`.
pub fn jw_annihilation(p: usize, qubits: usize) -> Result<PauliSum> {
    if p >= qubits {
        return Err(Error::QubitIndex { index: p, qubits });
    }
    let string: Vec<(usize, Pauli)> = (0..p).map(|j| (j, Pauli::Z)).collect();
    let with = |last: Pauli| {
        let mut f = string.clone();
        f.push((p, last));
        PauliWord::from_factors(qubits, &f)
    };
    PauliSum::from_terms(qubits, [(c(0.5, 0.0), with(Pauli::X)?), (c(0.0, 0.5), with(Pauli::Y)?)])
}

pub fn jw_creation(p: usize, qubits: usize) -> Result<PauliSum> {
    Ok(jw_annihilation(p, qubits)?.hermitian_conjugate())
}

/// `n_p = (I - Z_p)/2`.
pub fn jw_number(p: usize, qubits: usize) -> Result<PauliSum> {
    let z = PauliWord::single(qubits, p, Pauli::Z)?;
    PauliSum::from_terms(qubits, [(c(0.5, 0.0), PauliWord::identity(qubits)), (c(-0.5, 0.0), z)])
}

/// Open Fermi-Hubbard chain in particle-hole-symmetric form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HubbardChainSpec {
    pub sites: usize,
    pub hopping: f64,
    pub interaction: f64,
}

impl HubbardChainSpec {
    pub fn new(sites: usize, hopping: f64, interaction: f64) -> Result<Self> {
        let spec = HubbardChainSpec {
            sites,
            hopping,
            interaction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::Precondition(format!("Hubbard chain needs N >= 2, got {}", self.sites)));
        }
        if 2 * self.sites > 32 {
            return Err(Error::Precondition(format!("Hubbard chain of {} sites is too large", self.sites)));
        }
        if !self.hopping.is_finite() || !self.interaction.is_finite() {
            return Err(Error::Precondition("Hubbard parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn qubit_count(&self) -> usize {
        2 * self.sites
    }

    /// Qubit of orbital `(site, spin_down)`.
    pub fn orbital(&self, site: usize, spin_down: bool) -> usize {
        site + if spin_down { self.sites } else { 0 }
    }

    /// Spin-up electrons on the first half of the sites and spin-down
    /// electrons on the second half.
    pub fn reference_index(&self) -> usize {
        let half = self.sites / 2;
        let mut index = 0usize;
        for site in 0..half {
            index |= 1 << self.orbital(site, false);
        }
        for site in half..self.sites {
            index |= 1 << self.orbital(site, true);
        }
        index
    }

    pub fn total_number(&self) -> Result<PauliSum> {
        let n = self.qubit_count();
        let mut sum = PauliSum::zero(n);
        for p in 0..n {
            sum = sum.add(&jw_number(p, n)?)?;
        }
        Ok(sum)
    }

    pub fn total_sz(&self) -> Result<PauliSum> {
        let n = self.qubit_count();
        let mut sum = PauliSum::zero(n);
        for site in 0..self.sites {
            sum = sum.add(&jw_number(self.orbital(site, false), n)?.scale_real(0.5))?;
            sum = sum.sub(&jw_number(self.orbital(site, true), n)?.scale_real(0.5))?;
        }
        Ok(sum)
    }
}

/// `-t sum (c^dag_i c_{i+1} + h.c.) + U sum n_up n_dn - U/2 sum n`.
pub fn build_hubbard(spec: &HubbardChainSpec) -> Result<PauliSum> {
    spec.validate()?;
    let n = spec.qubit_count();
    let mut h = PauliSum::zero(n);
    for spin_down in [false, true] {
        for site in 0..spec.sites - 1 {
            let a = spec.orbital(site, spin_down);
            let b = spec.orbital(site + 1, spin_down);
            let hop = jw_creation(a, n)?.multiply(&jw_annihilation(b, n)?)?;
            let hop = hop.add(&hop.hermitian_conjugate())?;
            h = h.add(&hop.scale_real(-spec.hopping))?;
        }
    }
    for site in 0..spec.sites {
        let up = jw_number(spec.orbital(site, false), n)?;
        let dn = jw_number(spec.orbital(site, true), n)?;
        h = h.add(&up.multiply(&dn)?.scale_real(spec.interaction))?;
        h = h.sub(&up.add(&dn)?.scale_real(spec.interaction / 2.0))?;
    }
    Ok(h)
}

/// Level-to-codeword map for spin-1 on two qubits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayCode {
    /// Local two-qubit basis index of each level, ordered `m = +1, 0, -1`.
    pub codes: Vec<usize>,
    /// Local basis indices outside the encoded subspace.
    pub unused: Vec<usize>,
}

impl GrayCode {
    pub fn spin_one() -> Self {
        // Local index is q_a + 2 q_b for qubits (a, b) = (2j, 2j+1).
        GrayCode {
            codes: vec![0b00, 0b10, 0b11],
            unused: vec![0b01],
        }
    }

    pub fn qubits_per_site(&self) -> usize {
        2
    }

    pub fn levels(&self) -> usize {
        self.codes.len()
    }

    /// Embeds a `levels x levels` matrix into the local qubit space; unused rows and columns stay zero.
    pub fn embed(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = 1 << self.qubits_per_site();
        let mut out = DMatrix::zeros(d, d);
        for (r, &cr) in self.codes.iter().enumerate() {
            for (k, &ck) in self.codes.iter().enumerate() {
                out[(cr, ck)] = m[(r, k)];
            }
        }
        out
    }

    /// Full-register basis index of a product of levels (`0` is `m=+1`).
    pub fn basis_index(&self, levels: &[usize]) -> usize {
        levels
            .iter()
            .enumerate()
            .map(|(site, &lvl)| self.codes[lvl] << (self.qubits_per_site() * site))
            .sum()
    }

    /// Basis indices of the encoded subspace, ascending.
    pub fn encoded_indices(&self, sites: usize) -> Vec<usize> {
        let mut out = vec![0usize];
        for site in 0..sites {
            let shift = self.qubits_per_site() * site;
            out = out
                .into_iter()
                .flat_map(|base| self.codes.iter().map(move |&code| base | code << shift))
                .collect();
        }
        out.sort_unstable();
        out
    }
}

/// Spin axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        write!(f, "{s}")
    }
}

/// Spin chain `J sum S_i.S_{i+1} - D sum (S_i x S_{i+1})_y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainSpec {
    pub sites: usize,
    /// Twice the spin quantum number; only `2` (spin-1) is supported.
    pub two_s: usize,
    pub exchange: f64,
    pub dm: f64,
}

impl SpinChainSpec {
    pub fn spin_one(sites: usize, exchange: f64, dm: f64) -> Result<Self> {
        let spec = SpinChainSpec {
            sites,
            two_s: 2,
            exchange,
            dm,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.two_s != 2 {
            return Err(Error::Precondition(format!(
                "only spin-1 is supported, got s = {}/2",
                self.two_s
            )));
        }
        if self.sites < 1 || 2 * self.sites > 32 {
            return Err(Error::Precondition(format!("unsupported chain length {}", self.sites)));
        }
        if !(self.exchange > 0.0) || !self.dm.is_finite() {
            return Err(Error::Precondition("spin chain needs J > 0 and finite D".into()));
        }
        Ok(())
    }

    pub fn encoding(&self) -> GrayCode {
        GrayCode::spin_one()
    }

    pub fn qubit_count(&self) -> usize {
        2 * self.sites
    }

    /// The all-zero register, every site in `m = +1`.
    pub fn reference_index(&self) -> usize {
        0
    }
}

fn spin_one_matrix(axis: Axis) -> DMatrix<Complex64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::zeros(3, 3);
    match axis {
        Axis::Z => {
            m[(0, 0)] = c(1.0, 0.0);
            m[(2, 2)] = c(-1.0, 0.0);
        }
        Axis::X => {
            for (a, b) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
                m[(a, b)] = c(r, 0.0);
            }
        }
        Axis::Y => {
            // S^+ has sqrt2 above the diagonal; S^y = (S^+ - S^-)/(2i).
            m[(0, 1)] = c(0.0, -r);
            m[(1, 2)] = c(0.0, -r);
            m[(1, 0)] = c(0.0, r);
            m[(2, 1)] = c(0.0, r);
        }
    }
    m
}

/// Encoded spin operator `S^axis_site` on the full register.
pub fn spin_operator(spec: &SpinChainSpec, axis: Axis, site: usize) -> Result<PauliSum> {
    spec.validate()?;
    if site >= spec.sites {
        return Err(Error::Precondition(format!(
            "site {site} outside a {}-site chain",
            spec.sites
        )));
    }
    let code = spec.encoding();
    let local = PauliSum::from_matrix(&code.embed(&spin_one_matrix(axis)))?;
    local.shifted(code.qubits_per_site() * site, spec.qubit_count())
}

pub fn build_spin_chain(spec: &SpinChainSpec) -> Result<PauliSum> {
    spec.validate()?;
    let n = spec.qubit_count();
    let ops = |site: usize| -> Result<[PauliSum; 3]> {
        Ok([
            spin_operator(spec, Axis::X, site)?,
            spin_operator(spec, Axis::Y, site)?,
            spin_operator(spec, Axis::Z, site)?,
        ])
    };
    let mut h = PauliSum::zero(n);
    for i in 0..spec.sites.saturating_sub(1) {
        let [xi, yi, zi] = ops(i)?;
        let [xj, yj, zj] = ops(i + 1)?;
        let dot = xi.multiply(&xj)?.add(&yi.multiply(&yj)?)?.add(&zi.multiply(&zj)?)?;
        h = h.add(&dot.scale_real(spec.exchange))?;
        let cross_y = zi.multiply(&xj)?.sub(&xi.multiply(&zj)?)?;
        h = h.sub(&cross_y.scale_real(spec.dm))?;
    }
    Ok(h)
}

/// Total spin component `M^axis = sum_j S^axis_j`.
pub fn total_spin(spec: &SpinChainSpec, axis: Axis) -> Result<PauliSum> {
    let mut sum = PauliSum::zero(spec.qubit_count());
    for site in 0..spec.sites {
        sum = sum.add(&spin_operator(spec, axis, site)?)?;
    }
    Ok(sum)
}

pub fn total_magnetization_z(spec: &SpinChainSpec) -> Result<PauliSum> {
    total_spin(spec, Axis::Z)
}

/// Which closed-form family a pool belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolLabel {
    Hamiltonian,
    UccsdSd,
    SpinGs,
    SpinDyn,
}

impl fmt::Display for PoolLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PoolLabel::Hamiltonian => "hamiltonian",
            PoolLabel::UccsdSd => "uccsd_sd",
            PoolLabel::SpinGs => "spin_gs",
            PoolLabel::SpinDyn => "spin_dyn",
        };
        write!(f, "{s}")
    }
}

/// Ordered set of distinct non-identity generators.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorPool {
    pub label: PoolLabel,
    generators: Vec<PauliWord>,
}

impl OperatorPool {
    pub fn new(label: PoolLabel, generators: Vec<PauliWord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for g in &generators {
            if g.is_identity() {
                return Err(Error::Precondition("pool generators must not be the identity".into()));
            }
            if !seen.insert(*g) {
                return Err(Error::Precondition(format!("duplicate pool generator {g}")));
            }
        }
        if let Some(first) = generators.first() {
            if generators.iter().any(|g| g.qubit_count() != first.qubit_count()) {
                return Err(Error::Precondition("pool generators span different registers".into()));
            }
        }
        Ok(OperatorPool { label, generators })
    }

    pub fn generators(&self) -> &[PauliWord] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Union of all generator supports.
    pub fn support(&self) -> u64 {
        self.generators.iter().fold(0, |acc, g| acc | g.support())
    }

    /// Same generators on a larger register.
    pub fn widen(&self, qubits: usize) -> Result<Self> {
        let generators = self
            .generators
            .iter()
            .map(|g| g.widen(qubits))
            .collect::<Result<Vec<_>>>()?;
        Ok(OperatorPool {
            label: self.label,
            generators,
        })
    }
}

/// One generator per distinct non-identity word of `h`.
pub fn pool_hamiltonian(h: &PauliSum) -> Result<OperatorPool> {
    OperatorPool::new(PoolLabel::Hamiltonian, h.words())
}

fn choose(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Closed-form size of each pool family on `qubits` qubits (Hamiltonian pools have none).
pub fn pool_size_formula(label: PoolLabel, qubits: usize) -> Option<usize> {
    match label {
        PoolLabel::Hamiltonian => None,
        PoolLabel::UccsdSd => Some(2 * choose(qubits, 2) + 8 * choose(qubits, 4)),
        PoolLabel::SpinGs => Some(3 * qubits - 2),
        PoolLabel::SpinDyn => Some(3 * qubits + 9 * choose(qubits, 2)),
    }
}

fn check_pool_qubits(qubits: usize) -> Result<()> {
    if !(2..=64).contains(&qubits) {
        return Err(Error::Precondition(format!("pool needs at least 2 qubits, got {qubits}")));
    }
    Ok(())
}

/// Real two- and four-qubit X/Y strings with an odd number of `Y` factors.
pub fn pool_uccsd_qubit(qubits: usize) -> Result<OperatorPool> {
    check_pool_qubits(qubits)?;
    let xy = [Pauli::X, Pauli::Y];
    let mut gens = Vec::with_capacity(pool_size_formula(PoolLabel::UccsdSd, qubits).unwrap_or(0));
    for i in 0..qubits {
        for j in i + 1..qubits {
            for &p in &xy {
                for &q in &xy {
                    let w = PauliWord::from_factors(qubits, &[(i, p), (j, q)])?;
                    if w.y_count() % 2 == 1 {
                        gens.push(w);
                    }
                }
            }
        }
    }
    for i in 0..qubits {
        for j in i + 1..qubits {
            for k in j + 1..qubits {
                for l in k + 1..qubits {
                    for pattern in 0..16u32 {
                        let pick = |b: u32| xy[(pattern >> b & 1) as usize];
                        let w = PauliWord::from_factors(
                            qubits,
                            &[(i, pick(3)), (j, pick(2)), (k, pick(1)), (l, pick(0))],
                        )?;
                        if w.y_count() % 2 == 1 {
                            gens.push(w);
                        }
                    }
                }
            }
        }
    }
    OperatorPool::new(PoolLabel::UccsdSd, gens)
}

/// `{Y_i} + {Y_i Z_{i+1}} + {Z_i Y_{i+1}}` on qubit indices.
pub fn pool_spin_gs(qubits: usize) -> Result<OperatorPool> {
    check_pool_qubits(qubits)?;
    let mut gens = Vec::new();
    for i in 0..qubits {
        gens.push(PauliWord::single(qubits, i, Pauli::Y)?);
    }
    for i in 0..qubits - 1 {
        gens.push(PauliWord::from_factors(qubits, &[(i, Pauli::Y), (i + 1, Pauli::Z)])?);
    }
    for i in 0..qubits - 1 {
        gens.push(PauliWord::from_factors(qubits, &[(i, Pauli::Z), (i + 1, Pauli::Y)])?);
    }
    OperatorPool::new(PoolLabel::SpinGs, gens)
}

/// Every one- and two-qubit Pauli word.
pub fn pool_spin_dyn(qubits: usize) -> Result<OperatorPool> {
    check_pool_qubits(qubits)?;
    let xyz = [Pauli::X, Pauli::Y, Pauli::Z];
    let mut gens = Vec::new();
    for i in 0..qubits {
        for &p in &xyz {
            gens.push(PauliWord::single(qubits, i, p)?);
        }
    }
    for i in 0..qubits {
        for j in i + 1..qubits {
            for &p in &xyz {
                for &q in &xyz {
                    gens.push(PauliWord::from_factors(qubits, &[(i, p), (j, q)])?);
                }
            }
        }
    }
    OperatorPool::new(PoolLabel::SpinDyn, gens)
}
