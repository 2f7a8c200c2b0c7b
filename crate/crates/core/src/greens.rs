//! Retarded single-particle Green's functions from ancilla-joined trajectories.
//!
//! The ancilla is the highest qubit of an `(N_q + 1)`-qubit register. A
//! trajectory starts from `(|0>|G> + |1> P_beta |G>)/sqrt 2`, is propagated by
//! adaptive real-time evolution under the system Hamiltonian, and yields
//! `I = Re <G| U^dag P_alpha U P_beta |G>` for any number of readout words.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, FixedGate, Segment};
use crate::error::{Error, Result};
use crate::models::{jw_annihilation, OperatorPool};
use crate::oracle::{ReferenceCursor, REFERENCE_STEP};
use crate::pauli::{Pauli, PauliSum, PauliWord};
use crate::resources::{ResourceRecord, ResourceTrace};
use crate::series::{uniform_mesh, TimeSeries};
use crate::statevector::{pauli_into_slice, Propagator, StateVector};
use crate::variational::{AvqdsConfig, Drive, Propagation};

/// Mesh step used when resampling components before assembly.
pub const INTERPOLATION_STEP: f64 = 0.02;

/// Weights of the X-type and Y-type words in `c_p`.
pub const ETA: [Complex64; 2] = [Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.5)];

/// `(Z..Z X_p, Z..Z Y_p)`, the two words of the Jordan-Wigner annihilator.
pub fn annihilation_words(p: usize, qubits: usize) -> Result<[PauliWord; 2]> {
    let c = jw_annihilation(p, qubits)?;
    let pick = |last: Pauli| -> Result<PauliWord> {
        c.terms()
            .iter()
            .map(|t| t.word)
            .find(|w| w.get(p) == last)
            .ok_or_else(|| Error::Precondition(format!("annihilator of {p} lacks its {last:?} word")))
    };
    Ok([pick(Pauli::X)?, pick(Pauli::Y)?])
}

/// A system word on the joined register; rejects words touching the ancilla.
fn joined_word(word: &PauliWord, system: usize) -> Result<PauliWord> {
    match word.qubit_count() {
        n if n == system => word.widen(system + 1),
        n if n == system + 1 => {
            if word.support() >> system & 1 == 1 {
                Err(Error::Precondition(format!("word {word} acts on the ancilla qubit {system}")))
            } else {
                Ok(*word)
            }
        }
        n => Err(Error::Dimension {
            expected: system,
            found: n,
        }),
    }
}

/// Ground circuit followed by the Hadamard and controlled-`P_beta` preparation.
pub fn joined_ansatz(ground: &Ansatz, beta: &PauliWord) -> Result<Ansatz> {
    let n = ground.qubit_count();
    let word = joined_word(beta, n)?;
    let mut a = ground.widen(n + 1)?;
    a.push_fixed(FixedGate::Hadamard(n))?;
    a.push_fixed(FixedGate::ControlledPauli {
        control: n,
        value: true,
        word,
    })?;
    Ok(a)
}

/// `2 Re <psi_0| P |psi_1>` from the two ancilla branches of a joined state.
pub fn readout_direct(psi: &[Complex64], word: &PauliWord) -> f64 {
    let half = psi.len() / 2;
    let mut moved = vec![Complex64::new(0.0, 0.0); psi.len()];
    pauli_into_slice(psi, &mut moved, word);
    2.0 * psi[..half]
        .iter()
        .zip(&moved[half..])
        .map(|(a, b)| (a.conj() * b).re)
        .sum::<f64>()
}

/// `2 p0 - 1` after X, controlled-`P` and Hadamard on the ancilla.
pub fn readout_shell(state: &StateVector, word: &PauliWord) -> Result<f64> {
    let anc = state.qubit_count() - 1;
    let mut s = state.clone();
    s.apply_pauli(&PauliWord::single(anc + 1, anc, Pauli::X)?)?;
    s.apply_controlled_pauli(anc, word, true)?;
    s.apply_hadamard(anc)?;
    Ok(2.0 * s.probability(anc, false)? - 1.0)
}

/// Everything recorded at one accepted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CulSample {
    pub t: f64,
    pub direct: Vec<f64>,
    pub shell: Vec<f64>,
    pub l2: f64,
    pub energy: f64,
    pub cnots: usize,
    pub depth: usize,
    pub n_theta: usize,
    pub infidelity: Option<f64>,
}

/// One propagated joined state with all of its readouts.
#[derive(Clone, Debug)]
pub struct CulTrajectory {
    pub beta: PauliWord,
    pub readouts: Vec<PauliWord>,
    pub samples: Vec<CulSample>,
    pub ansatz: Ansatz,
}

impl CulTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, readout: usize) -> TimeSeries {
        TimeSeries {
            times: self.times(),
            values: self.samples.iter().map(|s| s.direct[readout]).collect(),
        }
    }

    pub fn resources(&self) -> ResourceTrace {
        ResourceTrace {
            records: self
                .samples
                .iter()
                .map(|s| ResourceRecord {
                    time: s.t,
                    cnot_count: s.cnots,
                    depth: s.depth,
                    n_theta: s.n_theta,
                })
                .collect(),
        }
    }

    pub fn max_readout_mismatch(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.direct.iter().zip(&s.shell).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_infidelity(&self) -> Option<f64> {
        self.samples
            .iter()
            .map(|s| s.infidelity)
            .try_fold(0.0f64, |m, f| f.map(|f| m.max(f)))
    }
}

/// Propagates the joined state for `P_beta` up to `t_max`, reading every word in `readouts`.
///
/// `reference`, when given, is the exact propagator of the system Hamiltonian
/// and enables per-step infidelity tracking.
#[allow(clippy::too_many_arguments)]
pub fn cul_trajectory(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    beta: &PauliWord,
    readouts: &[PauliWord],
    t_max: f64,
    cfg: &AvqdsConfig,
    reference: Option<&Propagator>,
) -> Result<CulTrajectory> {
    let n = ground.qubit_count();
    if h.qubit_count() != n {
        return Err(Error::Dimension {
            expected: n,
            found: h.qubit_count(),
        });
    }
    if !(t_max > 0.0) {
        return Err(Error::Precondition(format!("t_max must be positive, got {t_max}")));
    }
    let words = readouts
        .iter()
        .map(|w| joined_word(w, n))
        .collect::<Result<Vec<_>>>()?;
    let start = joined_ansatz(ground, beta)?;
    let hw = h.widen(n + 1)?;
    let pw = pool.widen(n + 1)?;
    let context = |e: Error| e.context(format!("trajectory for P_beta = {beta}"));
    let mut prop =
        Propagation::new(start, &hw, &pw, *cfg, Drive::RealTime, Segment::Time).map_err(context)?;
    let mut cursor = match reference {
        Some(p) => {
            let psi0 = StateVector::from_amplitudes(prop.tangent().psi().to_vec())?;
            Some(ReferenceCursor::new(&psi0, p, REFERENCE_STEP)?)
        }
        None => None,
    };
    let mut samples = Vec::new();
    let mut record = |prop: &Propagation| -> Result<()> {
        let psi = prop.tangent().psi();
        let state = StateVector::from_amplitudes(psi.to_vec())?;
        let direct = words.iter().map(|w| readout_direct(psi, w)).collect();
        let shell = words
            .iter()
            .map(|w| readout_shell(&state, w))
            .collect::<Result<Vec<_>>>()?;
        let infidelity = match cursor.as_mut() {
            Some(c) => Some((1.0 - state.fidelity(&c.state_at(prop.time())?)?).max(0.0)),
            None => None,
        };
        let d = prop.diagnostics(0.0, 0.0);
        samples.push(CulSample {
            t: prop.time(),
            direct,
            shell,
            l2: d.l2,
            energy: d.energy,
            cnots: d.cnots,
            depth: d.depth,
            n_theta: d.n_theta,
            infidelity,
        });
        Ok(())
    };
    record(&prop)?;
    prop.run(t_max, &[], |_, p| record(p)).map_err(context)?;
    Ok(CulTrajectory {
        beta: *beta,
        readouts: readouts.to_vec(),
        samples,
        ansatz: prop.into_ansatz(),
    })
}

/// `I^{p,q}_{alpha,beta}` for one pair of words, on its own adaptive mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfComponentSeries {
    pub p: usize,
    pub q: usize,
    pub alpha: usize,
    pub beta: usize,
    pub series: TimeSeries,
    pub resources: ResourceTrace,
}

/// Single-component pipeline: one trajectory, one readout.
#[allow(clippy::too_many_arguments)]
pub fn cul_component(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    p_alpha: &PauliWord,
    p_beta: &PauliWord,
    t_max: f64,
    cfg: &AvqdsConfig,
) -> Result<TimeSeries> {
    let traj = cul_trajectory(h, ground, pool, p_beta, &[*p_alpha], t_max, cfg, None)?;
    Ok(traj.series(0))
}

/// The trajectories behind a full orbital block of `G^R`.
#[derive(Clone, Debug)]
pub struct GfRun {
    pub orbitals: Vec<usize>,
    pub t_max: f64,
    /// Indexed by `2 * q + beta`; readouts are ordered `2 * p + alpha`.
    pub trajectories: Vec<CulTrajectory>,
}

impl GfRun {
    pub fn component(&self, p: usize, q: usize, alpha: usize, beta: usize) -> Result<GfComponentSeries> {
        let m = self.orbitals.len();
        if p >= m || q >= m || alpha > 1 || beta > 1 {
            return Err(Error::Precondition(format!(
                "component ({p}, {q}, {alpha}, {beta}) outside a {m}-orbital run"
            )));
        }
        let traj = &self.trajectories[2 * q + beta];
        Ok(GfComponentSeries {
            p,
            q,
            alpha,
            beta,
            series: traj.series(2 * p + alpha),
            resources: traj.resources(),
        })
    }

    pub fn components(&self) -> Vec<GfComponentSeries> {
        let m = self.orbitals.len();
        let mut out = Vec::with_capacity(4 * m * m);
        for q in 0..m {
            for beta in 0..2 {
                for p in 0..m {
                    for alpha in 0..2 {
                        out.push(self.component(p, q, alpha, beta).expect("indices in range"));
                    }
                }
            }
        }
        out
    }
}

/// One trajectory per `(q, beta)`, each reading every `(p, alpha)`.
pub fn run_greens_function(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    orbitals: &[usize],
    t_max: f64,
    cfg: &AvqdsConfig,
    reference: Option<&Propagator>,
) -> Result<GfRun> {
    let n = ground.qubit_count();
    let words = orbitals
        .iter()
        .map(|&p| annihilation_words(p, n))
        .collect::<Result<Vec<_>>>()?;
    let readouts: Vec<PauliWord> = words.iter().flat_map(|w| w.iter().copied()).collect();
    let trajectories = (0..2 * orbitals.len())
        .into_par_iter()
        .map(|k| {
            let beta = &readouts[k];
            cul_trajectory(h, ground, pool, beta, &readouts, t_max, cfg, reference)
                .map_err(|e| e.context(format!("orbital {} word {}", orbitals[k / 2], k % 2)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GfRun {
        orbitals: orbitals.to_vec(),
        t_max,
        trajectories,
    })
}

/// `G^R_{pq}(t) = -2i sum eta_alpha conj(eta_beta) I_{alpha beta}(t)` on `mesh` (zero for `t < 0`).
pub fn assemble_gf(components: &[GfComponentSeries], p: usize, q: usize, mesh: &[f64]) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); mesh.len()];
    for alpha in 0..2 {
        for beta in 0..2 {
            let c = components
                .iter()
                .find(|c| c.p == p && c.q == q && c.alpha == alpha && c.beta == beta)
                .ok_or_else(|| {
                    Error::Precondition(format!("missing component p={p} q={q} alpha={alpha} beta={beta}"))
                })?;
            let w = Complex64::new(0.0, -2.0) * ETA[alpha] * ETA[beta].conj();
            for (o, &t) in out.iter_mut().zip(mesh) {
                if t >= 0.0 {
                    *o += w * c.series.at(t)?;
                }
            }
        }
    }
    Ok(out)
}

/// Real-space `G^R_{pq}` on a uniform mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GfResult {
    pub mesh: Vec<f64>,
    pub orbitals: Vec<usize>,
    /// `g[p][q][n]`, indices into `orbitals`.
    pub g: Vec<Vec<Vec<Complex64>>>,
}

impl GfResult {
    pub fn from_components(orbitals: &[usize], components: &[GfComponentSeries], mesh: Vec<f64>) -> Result<Self> {
        let m = orbitals.len();
        let g = (0..m)
            .map(|p| (0..m).map(|q| assemble_gf(components, p, q, &mesh)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(GfResult {
            mesh,
            orbitals: orbitals.to_vec(),
            g,
        })
    }

    pub fn from_run(run: &GfRun) -> Result<Self> {
        let mesh = uniform_mesh(run.t_max, INTERPOLATION_STEP)?;
        Self::from_components(&run.orbitals, &run.components(), mesh)
    }
}

/// `G^R_k = (1/N) sum_{ij} G_{ij} exp(-i k (i - j))`, site `i` being the position in `orbitals`.
pub fn momentum_gf(result: &GfResult, ks: &[f64]) -> Vec<Vec<Complex64>> {
    let m = result.orbitals.len();
    ks.iter()
        .map(|&k| {
            (0..result.mesh.len())
                .map(|n| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..m {
                        for j in 0..m {
                            let phase = Complex64::from_polar(1.0, -k * (i as f64 - j as f64));
                            acc += result.g[i][j][n] * phase;
                        }
                    }
                    acc / m as f64
                })
                .collect()
        })
        .collect()
}

/// Allowed momenta `2 pi m / N` folded into `(-pi, pi]`.
pub fn lattice_momenta(sites: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..sites)
        .map(|m| {
            let k = 2.0 * PI * m as f64 / sites as f64;
            if k > PI {
                k - 2.0 * PI
            } else {
                k
            }
        })
        .collect()
}

/// Components from exact evolution of an exact ground state, sampled on `mesh`.
pub fn exact_components(
    propagator: &Propagator,
    ground: &StateVector,
    orbitals: &[usize],
    mesh: &[f64],
) -> Result<Vec<GfComponentSeries>> {
    let n = ground.qubit_count();
    let words = orbitals
        .iter()
        .map(|&p| annihilation_words(p, n))
        .collect::<Result<Vec<_>>>()?;
    let evolved: Vec<StateVector> = mesh
        .iter()
        .map(|&t| propagator.evolve(ground, t))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (q, wq) in words.iter().enumerate() {
        for (beta, wb) in wq.iter().enumerate() {
            let mut kicked = ground.clone();
            kicked.apply_pauli(wb)?;
            let kicked_t: Vec<StateVector> = mesh
                .iter()
                .map(|&t| propagator.evolve(&kicked, t))
                .collect::<Result<_>>()?;
            for (p, wp) in words.iter().enumerate() {
                for (alpha, wa) in wp.iter().enumerate() {
                    let values = evolved
                        .iter()
                        .zip(&kicked_t)
                        .map(|(g, k)| {
                            let mut pk = k.clone();
                            pk.apply_pauli(wa)?;
                            Ok(g.inner(&pk)?.re)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    out.push(GfComponentSeries {
                        p,
                        q,
                        alpha,
                        beta,
                        series: TimeSeries::new(mesh.to_vec(), values)?,
                        resources: ResourceTrace::default(),
                    });
                }
            }
        }
    }
    Ok(out)
}
