//! Exact-diagonalization reference engine.
//!
//! Propagation on the fixed mesh multiplies eigenbasis coefficients by the
//! per-step phases `exp(-i E dt)`, so the mesh itself introduces no error.
//! Variational timestamps between mesh points are reached by an exact
//! residual evolution from the preceding mesh point.

use nalgebra::DMatrix;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::pauli::PauliSum;
use crate::statevector::{Propagator, StateVector};

/// Mesh step of reference propagation.
pub const REFERENCE_STEP: f64 = 0.002;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// SHA-256 of the canonical text form of `h`, hex encoded.
pub fn hamiltonian_hash(h: &PauliSum) -> String {
    let digest = Sha256::digest(format!("{}|{h}", h.qubit_count()).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Eigenpairs of a Hamiltonian, ascending in energy.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    qubits: usize,
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
    hash: String,
    complete: bool,
}

/// Full dense diagonalization.
pub fn diagonalize(h: &PauliSum) -> Result<EigenSystem> {
    h.check_hermitian()?;
    let (values, vectors) = hermitian_eigen(&h.to_matrix()?);
    Ok(EigenSystem {
        qubits: h.qubit_count(),
        values,
        vectors,
        hash: hamiltonian_hash(h),
        complete: true,
    })
}

/// Diagonalization restricted to the span of the given basis states.
///
/// Used for encoded registers whose unused codewords would otherwise mix
/// into degenerate physical levels.
pub fn diagonalize_in_subspace(h: &PauliSum, basis: &[usize]) -> Result<EigenSystem> {
    h.check_hermitian()?;
    let dim = 1usize << h.qubit_count();
    if basis.is_empty() || basis.iter().any(|&b| b >= dim) {
        return Err(Error::Precondition("subspace basis out of range".into()));
    }
    let mut sorted = basis.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != basis.len() {
        return Err(Error::Precondition("subspace basis has duplicates".into()));
    }
    let full = h.to_matrix()?;
    let m = basis.len();
    let block = DMatrix::from_fn(m, m, |i, j| full[(basis[i], basis[j])]);
    let leak = (0..dim)
        .filter(|r| !basis.contains(r))
        .flat_map(|r| basis.iter().map(move |&c| (r, c)))
        .map(|(r, c)| full[(r, c)].norm())
        .fold(0.0, f64::max);
    if leak > 1e-10 {
        return Err(Error::Precondition(format!(
            "subspace is not invariant under the Hamiltonian (coupling {leak:.3e})"
        )));
    }
    let (values, small) = hermitian_eigen(&block);
    let mut vectors = DMatrix::zeros(dim, m);
    for k in 0..m {
        for (i, &b) in basis.iter().enumerate() {
            vectors[(b, k)] = small[(i, k)];
        }
    }
    Ok(EigenSystem {
        qubits: h.qubit_count(),
        values,
        vectors,
        hash: hamiltonian_hash(h),
        complete: m == dim,
    })
}

impl EigenSystem {
    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hamiltonian_hash(&self) -> &str {
        &self.hash
    }

    pub fn state(&self, k: usize) -> StateVector {
        let amps = self.vectors.column(k).iter().copied().collect();
        StateVector::normalized(amps).expect("eigenvectors are normalized")
    }

    pub fn ground_state(&self) -> StateVector {
        self.state(0)
    }

    /// `max_k ||H v_k - E_k v_k||`.
    pub fn max_residual(&self, h: &PauliSum) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            let v = self.state(k);
            let hv = v.apply_sum(h)?;
            let r = hv
                .iter()
                .zip(v.amplitudes())
                .map(|(a, b)| (a - b * self.values[k]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// `max |<v_j|v_k> - delta_jk|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        let mut worst: f64 = 0.0;
        for j in 0..g.nrows() {
            for k in 0..g.ncols() {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((g[(j, k)] - target).norm());
            }
        }
        worst
    }

    /// `<v_j|O|v_k>` for every pair of stored eigenvectors.
    pub fn matrix_elements(&self, op: &PauliSum) -> Result<DMatrix<Complex64>> {
        if op.qubit_count() != self.qubits {
            return Err(Error::Dimension {
                expected: self.qubits,
                found: op.qubit_count(),
            });
        }
        let m = self.len();
        let dim = self.vectors.nrows();
        let mut ov = DMatrix::zeros(dim, m);
        let mut buf = vec![ZERO; dim];
        for k in 0..m {
            let col: Vec<Complex64> = self.vectors.column(k).iter().copied().collect();
            crate::statevector::sum_into_slice(op, &col, &mut buf);
            ov.column_mut(k).copy_from_slice(&buf);
        }
        Ok(self.vectors.adjoint() * ov)
    }

    /// Propagator over the full register (complete systems only).
    pub fn propagator(&self) -> Result<Propagator> {
        if !self.complete {
            return Err(Error::Precondition(
                "propagation needs a complete eigensystem; diagonalize the full register".into(),
            ));
        }
        Ok(Propagator::from_parts(self.qubits, self.values.clone(), self.vectors.clone()))
    }
}

/// Streaming reference propagation on the fixed mesh.
#[derive(Clone, Debug)]
pub struct ReferenceCursor {
    propagator: Propagator,
    dt: f64,
    step_phases: Vec<Complex64>,
    coeffs: Vec<Complex64>,
    qubits: usize,
    step: usize,
}

impl ReferenceCursor {
    pub fn new(initial: &StateVector, propagator: &Propagator, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Precondition(format!("mesh step must be positive, got {dt}")));
        }
        if initial.qubit_count() < propagator.qubit_count() {
            return Err(Error::Dimension {
                expected: propagator.qubit_count(),
                found: initial.qubit_count(),
            });
        }
        let step_phases = propagator
            .eigenvalues()
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -e * dt))
            .collect();
        Ok(ReferenceCursor {
            propagator: propagator.clone(),
            dt,
            step_phases,
            coeffs: propagator.project(initial.amplitudes()),
            qubits: initial.qubit_count(),
            step: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Current mesh index.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn mesh_time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Advances one mesh step.
    pub fn advance(&mut self) {
        let d = self.step_phases.len();
        for block in self.coeffs.chunks_mut(d) {
            for (c, p) in block.iter_mut().zip(&self.step_phases) {
                *c *= p;
            }
        }
        self.step += 1;
    }

    pub fn mesh_state(&self) -> StateVector {
        StateVector::from_amplitudes(self.propagator.reconstruct(&self.coeffs)).expect("unitary evolution")
    }

    /// State at time `t >= mesh_time()`: mesh steps up to `t`, then an exact residual.
    pub fn state_at(&mut self, t: f64) -> Result<StateVector> {
        if t < self.mesh_time() - 1e-12 {
            return Err(Error::Precondition(format!(
                "reference cursor cannot move backwards (at {}, asked {t})",
                self.mesh_time()
            )));
        }
        let target = ((t / self.dt) + 1e-9).floor() as usize;
        while self.step < target {
            self.advance();
        }
        let residual = t - self.mesh_time();
        let mut c = self.coeffs.clone();
        if residual.abs() > 0.0 {
            self.propagator.phase_coefficients(&mut c, residual);
        }
        let amps = self.propagator.reconstruct(&c);
        debug_assert_eq!(amps.len(), 1 << self.qubits);
        StateVector::from_amplitudes(amps)
    }
}

/// States of an exact trajectory at every mesh point `k * dt`.
#[derive(Clone, Debug)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub states: Vec<StateVector>,
    propagator: Propagator,
}

impl ReferenceTrajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(|k| k as f64 * self.dt)
    }

    pub fn t_max(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    /// Exact state at `t`, evolved from the closest mesh point not after `t`.
    pub fn state_at(&self, t: f64) -> Result<StateVector> {
        if t < 0.0 || t > self.t_max() + 1e-9 {
            return Err(Error::Precondition(format!(
                "time {t} outside the reference range [0, {}]",
                self.t_max()
            )));
        }
        let k = (((t / self.dt) + 1e-9).floor() as usize).min(self.states.len() - 1);
        let residual = t - k as f64 * self.dt;
        if residual.abs() < 1e-15 {
            return Ok(self.states[k].clone());
        }
        self.propagator.evolve(&self.states[k], residual)
    }
}

/// Repeated fixed-step evolution of `initial` up to `t_max`.
pub fn propagate_reference(
    initial: &StateVector,
    propagator: &Propagator,
    t_max: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(t_max >= 0.0) {
        return Err(Error::Precondition(format!("t_max must be nonnegative, got {t_max}")));
    }
    let mut cursor = ReferenceCursor::new(initial, propagator, dt)?;
    let steps = ((t_max / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(initial.clone());
    for _ in 0..steps {
        cursor.advance();
        states.push(cursor.mesh_state());
    }
    Ok(ReferenceTrajectory {
        dt,
        states,
        propagator: propagator.clone(),
    })
}

/// `1 - |<psi_var(t)|psi_exact(t)>|^2` at each variational timestamp.
pub fn infidelity_track(variational: &[(f64, StateVector)], reference: &ReferenceTrajectory) -> Result<Vec<f64>> {
    variational
        .iter()
        .map(|(t, psi)| {
            let exact = reference.state_at(*t)?;
            Ok((1.0 - psi.fidelity(&exact)?).max(0.0))
        })
        .collect()
}
