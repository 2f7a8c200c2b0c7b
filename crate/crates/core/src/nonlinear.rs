//! Third-order susceptibility `chi3_zzzz(t, tau, 0)` of encoded spin chains.
//!
//! Every bracketed correlator is `Im <G| P0 P1 U_tau^dag U_t^dag P2 U_t P3 U_tau P4 P5 |G>`
//! for some assignment of the six words. The ancilla is the highest qubit.
//! Stage one prepares `(|1> P1 P0|G> + i|0> P4 P5|G>)/sqrt 2` and propagates
//! it to `tau`; stage two applies `X` and controlled `P3` and propagates over
//! `t`. `P2` enters only the final readout, so one trajectory serves every
//! readout word that shares the other five.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, FixedGate, Segment};
use crate::error::{Error, Result};
use crate::models::{spin_operator, total_spin, Axis, OperatorPool, SpinChainSpec};
use crate::oracle::{EigenSystem, ReferenceCursor, REFERENCE_STEP};
use crate::pauli::{Pauli, PauliSum, PauliWord};
use crate::resources::{ResourceRecord, ResourceTrace};
use crate::series::{interpolate, is_uniform, uniform_mesh};
use crate::spectral::{eval_pade, fit_pade};
use crate::statevector::{pauli_into_slice, Propagator, StateVector};
use crate::variational::{AvqdsConfig, Drive, Propagation};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which bracketed correlator a term belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chi3Kind {
    /// `<S_j(t+tau) S_k(tau) S_l S_m>`
    Forward,
    /// `<S_m S_l S_j(t+tau) S_k(tau)>`
    Backward,
    /// `<S_l S_j(t+tau) S_k(tau) S_m>`, counted twice for zzzz.
    Split,
}

impl Chi3Kind {
    pub const ALL: [Chi3Kind; 3] = [Chi3Kind::Forward, Chi3Kind::Backward, Chi3Kind::Split];

    pub fn coefficient(self) -> f64 {
        match self {
            Chi3Kind::Forward | Chi3Kind::Backward => 1.0,
            Chi3Kind::Split => -2.0,
        }
    }
}

/// One circuit evaluation of the susceptibility sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chi3TermSpec {
    pub kind: Chi3Kind,
    /// `P0..P5`; identity words mark absent gates.
    pub gates: [PauliWord; 6],
    /// Site indices `(j, k, l, m)`.
    pub sites: [usize; 4],
    /// Expansion indices `(p, q, r, s)`.
    pub terms: [usize; 4],
    /// Includes `2/N`, the kind coefficient and the four expansion weights.
    pub weight: f64,
}

/// `S^z_site = sum_p eta_p P_p` with real weights and non-identity words.
pub fn z_expansion(spec: &SpinChainSpec, site: usize) -> Result<Vec<(f64, PauliWord)>> {
    let op = spin_operator(spec, Axis::Z, site)?;
    op.terms()
        .iter()
        .map(|t| {
            if t.coeff.im.abs() > 1e-12 || t.word.is_identity() {
                Err(Error::Precondition(format!("S^z expansion term {} is not a real Pauli weight", t.word)))
            } else {
                Ok((t.coeff.re, t.word))
            }
        })
        .collect()
}

/// All `3 N^4 n_z^4` terms in a fixed order (kind, sites, expansion indices).
pub fn chi3_terms(spec: &SpinChainSpec) -> Result<Vec<Chi3TermSpec>> {
    let n = spec.sites;
    let nq = spec.qubit_count();
    let id = PauliWord::identity(nq);
    let exp: Vec<Vec<(f64, PauliWord)>> = (0..n).map(|j| z_expansion(spec, j)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for kind in Chi3Kind::ALL {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    for m in 0..n {
                        for (p, &(ep, a)) in exp[j].iter().enumerate() {
                            for (q, &(eq, b)) in exp[k].iter().enumerate() {
                                for (r, &(er, c)) in exp[l].iter().enumerate() {
                                    for (s, &(es, d)) in exp[m].iter().enumerate() {
                                        let gates = match kind {
                                            Chi3Kind::Forward => [id, id, a, b, c, d],
                                            Chi3Kind::Backward => [d, c, a, b, id, id],
                                            Chi3Kind::Split => [id, c, a, b, d, id],
                                        };
                                        out.push(Chi3TermSpec {
                                            kind,
                                            gates,
                                            sites: [j, k, l, m],
                                            terms: [p, q, r, s],
                                            weight: 2.0 / n as f64 * kind.coefficient() * ep * eq * er * es,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn controlled(control: usize, word: PauliWord) -> FixedGate {
    FixedGate::ControlledPauli {
        control,
        value: true,
        word,
    }
}

/// Ground circuit plus the stage-one ancilla preparation.
///
/// With `simplify`, identity words are dropped and `P4 = P0` becomes one
/// uncontrolled gate.
pub fn stage1_ansatz(ground: &Ansatz, gates: &[PauliWord; 6], simplify: bool) -> Result<Ansatz> {
    let n = ground.qubit_count();
    let wide = gates
        .iter()
        .map(|g| {
            if g.qubit_count() != n {
                Err(Error::Dimension {
                    expected: n,
                    found: g.qubit_count(),
                })
            } else {
                g.widen(n + 1)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let [p0, p1, _, _, p4, p5] = [wide[0], wide[1], wide[2], wide[3], wide[4], wide[5]];
    let mut a = ground.widen(n + 1)?;
    a.push_fixed(FixedGate::Hadamard(n))?;
    a.push_fixed(FixedGate::Phase(n))?;
    let keep = |w: &PauliWord| !simplify || !w.is_identity();
    if keep(&p5) {
        a.push_fixed(controlled(n, p5))?;
    }
    if simplify && p4 == p0 {
        if !p0.is_identity() {
            a.push_fixed(FixedGate::Pauli(p0))?;
        }
        a.push_fixed(FixedGate::PauliX(n))?;
    } else {
        if keep(&p4) {
            a.push_fixed(controlled(n, p4))?;
        }
        a.push_fixed(FixedGate::PauliX(n))?;
        if keep(&p0) {
            a.push_fixed(controlled(n, p0))?;
        }
    }
    if keep(&p1) {
        a.push_fixed(controlled(n, p1))?;
    }
    Ok(a)
}

/// Appends the stage-two `X` and controlled `P3`.
pub fn stage2_ansatz(stage1: &Ansatz, p3: &PauliWord, simplify: bool) -> Result<Ansatz> {
    let n = stage1.qubit_count() - 1;
    let mut a = stage1.clone();
    a.push_fixed(FixedGate::PauliX(n))?;
    if !simplify || !p3.is_identity() {
        a.push_fixed(controlled(n, widen_system(p3, n)?))?;
    }
    Ok(a)
}

fn widen_system(word: &PauliWord, n: usize) -> Result<PauliWord> {
    if word.qubit_count() == n {
        word.widen(n + 1)
    } else if word.qubit_count() == n + 1 && word.support() >> n & 1 == 0 {
        Ok(*word)
    } else {
        Err(Error::Precondition(format!("word {word} is not a system word for {n} qubits")))
    }
}

/// `-2 Re <psi_1| P2 |psi_0>`, the imaginary part measured by the shell.
pub fn readout_direct(psi: &[Complex64], p2: &PauliWord) -> f64 {
    let half = psi.len() / 2;
    let mut moved = vec![ZERO; psi.len()];
    pauli_into_slice(psi, &mut moved, p2);
    -2.0 * psi[half..]
        .iter()
        .zip(&moved[..half])
        .map(|(b, pa)| (b.conj() * pa).re)
        .sum::<f64>()
}

/// `2 p1 - 1` after `X`, controlled `P2` and a Hadamard on the ancilla.
pub fn readout_shell(state: &StateVector, p2: &PauliWord) -> Result<f64> {
    let anc = state.qubit_count() - 1;
    let mut s = state.clone();
    s.apply_pauli(&PauliWord::single(anc + 1, anc, Pauli::X)?)?;
    s.apply_controlled_pauli(anc, p2, true)?;
    s.apply_hadamard(anc)?;
    Ok(2.0 * s.probability(anc, true)? - 1.0)
}

/// Terms whose stage-one states coincide (equal products `P1 P0` and `P4 P5`)
/// share a stage-one trajectory; terms that also share `P3` share every
/// trajectory and differ only in `P2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chi3Group {
    /// Gate assignment of the first member; only `P0, P1, P4, P5` are used.
    pub stage1: [PauliWord; 6],
    /// Distinct `P3` words, each with its readout words and the term index of each readout.
    pub branches: Vec<(PauliWord, Vec<(PauliWord, usize)>)>,
}

type StageKey = (u8, u64, u64, u8, u64, u64);

fn stage1_key(g: &[PauliWord; 6]) -> Result<StageKey> {
    let (ph_l, left) = g[1].multiply(&g[0])?;
    let (ph_r, right) = g[4].multiply(&g[5])?;
    Ok((
        ph_l.power(),
        left.x_mask(),
        left.z_mask(),
        ph_r.power(),
        right.x_mask(),
        right.z_mask(),
    ))
}

pub fn group_terms(terms: &[Chi3TermSpec]) -> Result<Vec<Chi3Group>> {
    let mut index: BTreeMap<StageKey, usize> = BTreeMap::new();
    let mut groups: Vec<Chi3Group> = Vec::new();
    for (i, t) in terms.iter().enumerate() {
        let k = stage1_key(&t.gates)?;
        let gi = *index.entry(k).or_insert_with(|| {
            let id = PauliWord::identity(t.gates[0].qubit_count());
            groups.push(Chi3Group {
                stage1: [t.gates[0], t.gates[1], id, id, t.gates[4], t.gates[5]],
                branches: Vec::new(),
            });
            groups.len() - 1
        });
        let group = &mut groups[gi];
        match group.branches.iter_mut().find(|(p3, _)| *p3 == t.gates[3]) {
            Some((_, reads)) => reads.push((t.gates[2], i)),
            None => group.branches.push((t.gates[3], vec![(t.gates[2], i)])),
        }
    }
    Ok(groups)
}

/// Susceptibility pipeline settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Chi3Config {
    pub avqds: AvqdsConfig,
    pub tau_max: f64,
    pub dtau: f64,
    pub t_max: f64,
    /// Points per axis of the assembled mesh.
    pub mesh_points: usize,
    pub simplify: bool,
    pub track_fidelity: bool,
}

impl Default for Chi3Config {
    fn default() -> Self {
        Chi3Config {
            avqds: AvqdsConfig::default(),
            tau_max: 40.0,
            dtau: 0.5,
            t_max: 40.0,
            mesh_points: 401,
            simplify: true,
            track_fidelity: true,
        }
    }
}

impl Chi3Config {
    pub fn validate(&self) -> Result<()> {
        self.avqds.validate()?;
        if !(self.tau_max >= 0.0) || !(self.dtau > 0.0) || !(self.t_max > 0.0) || self.mesh_points < 2 {
            return Err(Error::Precondition("invalid susceptibility grid".into()));
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> Result<Vec<f64>> {
        uniform_mesh(self.tau_max, self.dtau)
    }

    pub fn t_mesh(&self) -> Vec<f64> {
        linspace(self.t_max, self.mesh_points)
    }

    pub fn tau_mesh(&self) -> Vec<f64> {
        linspace(self.tau_max, self.mesh_points)
    }
}

fn linspace(max: f64, points: usize) -> Vec<f64> {
    let step = max / (points - 1) as f64;
    (0..points).map(|i| i as f64 * step).collect()
}

/// Stage-two output for one `(P3, tau)` pair, resampled onto the `t` mesh.
#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub tau: f64,
    /// One row per readout, in branch order.
    pub rows: Vec<Vec<f64>>,
    pub resources: ResourceTrace,
    pub max_readout_mismatch: f64,
    pub min_fidelity: Option<f64>,
    pub steps: usize,
}

/// Stage-one output for one tau sample.
#[derive(Clone, Debug)]
pub struct Stage1Result {
    pub tau: f64,
    pub resources: ResourceTrace,
    pub min_fidelity: Option<f64>,
}

/// Everything one group produced.
#[derive(Clone, Debug)]
pub struct Chi3GroupResult {
    /// One entry per tau sample.
    pub stage1: Vec<Stage1Result>,
    /// `branches[b][k]` for branch `b` and tau sample `k`.
    pub branches: Vec<Vec<Stage2Result>>,
}

impl Chi3GroupResult {
    pub fn min_fidelity(&self) -> Option<f64> {
        let s1 = self.stage1.iter().fold(None, |m, s| fold_min(m, s.min_fidelity));
        self.branches.iter().flatten().fold(s1, |m, s| fold_min(m, s.min_fidelity))
    }

    pub fn max_readout_mismatch(&self) -> f64 {
        self.branches
            .iter()
            .flatten()
            .map(|s| s.max_readout_mismatch)
            .fold(0.0, f64::max)
    }
}

fn fidelity_with(cursor: &mut Option<ReferenceCursor>, state: &StateVector, t: f64) -> Result<Option<f64>> {
    match cursor.as_mut() {
        Some(c) => Ok(Some(state.fidelity(&c.state_at(t)?)?)),
        None => Ok(None),
    }
}

fn fold_min(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn record_of(prop: &Propagation) -> ResourceRecord {
    ResourceRecord::of(prop.time(), prop.ansatz())
}

/// For every tau sample, a fresh stage-one run to tau followed by stage two for every branch.
pub fn run_group(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    group: &Chi3Group,
    cfg: &Chi3Config,
    reference: Option<&Propagator>,
) -> Result<Chi3GroupResult> {
    cfg.validate()?;
    let n = ground.qubit_count();
    let hw = h.widen(n + 1)?;
    let pw = pool.widen(n + 1)?;
    let taus = cfg.tau_grid()?;
    let t_mesh = cfg.t_mesh();
    let start = stage1_ansatz(ground, &group.stage1, cfg.simplify)?;
    let mut stage1 = Vec::with_capacity(taus.len());
    let mut branches: Vec<Vec<Stage2Result>> = vec![Vec::with_capacity(taus.len()); group.branches.len()];
    for &tau in &taus {
        let (result, ansatz, exact) = run_stage1(&hw, &pw, &start, group, tau, cfg, reference)?;
        stage1.push(result);
        for ((p3, reads), out) in group.branches.iter().zip(branches.iter_mut()) {
            out.push(stage2(&hw, &pw, &ansatz, exact.as_ref(), p3, reads, tau, &t_mesh, cfg, reference)?);
        }
    }
    Ok(Chi3GroupResult { stage1, branches })
}

fn run_stage1(
    hw: &PauliSum,
    pw: &OperatorPool,
    start: &Ansatz,
    group: &Chi3Group,
    tau: f64,
    cfg: &Chi3Config,
    reference: Option<&Propagator>,
) -> Result<(Stage1Result, Ansatz, Option<StateVector>)> {
    let ctx = |e: Error| {
        e.context(format!(
            "susceptibility stage one to tau = {tau} for P0={} P1={} P4={} P5={}",
            group.stage1[0], group.stage1[1], group.stage1[4], group.stage1[5]
        ))
    };
    let mut prop = Propagation::new(start.clone(), hw, pw, cfg.avqds, Drive::RealTime, Segment::Tau).map_err(ctx)?;
    let psi0 = StateVector::from_amplitudes(prop.tangent().psi().to_vec())?;
    let mut cursor = match reference {
        Some(p) => Some(ReferenceCursor::new(&psi0, p, REFERENCE_STEP)?),
        None => None,
    };
    let mut trace = ResourceTrace::default();
    trace.push(ResourceRecord::of(0.0, start));
    trace.push(record_of(&prop));
    let mut min_fid = cursor.as_ref().map(|_| 1.0);
    if tau > 0.0 {
        prop.run(tau, &[], |_, p| {
            trace.push(record_of(p));
            let state = StateVector::from_amplitudes(p.tangent().psi().to_vec())?;
            min_fid = fold_min(min_fid, fidelity_with(&mut cursor, &state, p.time())?);
            Ok(())
        })
        .map_err(ctx)?;
    }
    let exact = match cursor.as_mut() {
        Some(c) => Some(c.state_at(prop.time())?),
        None => None,
    };
    let result = Stage1Result {
        tau,
        resources: trace,
        min_fidelity: min_fid,
    };
    Ok((result, prop.into_ansatz(), exact))
}

#[allow(clippy::too_many_arguments)]
fn stage2(
    hw: &PauliSum,
    pw: &OperatorPool,
    stage1: &Ansatz,
    exact_stage1: Option<&StateVector>,
    p3: &PauliWord,
    reads: &[(PauliWord, usize)],
    tau: f64,
    t_mesh: &[f64],
    cfg: &Chi3Config,
    reference: Option<&Propagator>,
) -> Result<Stage2Result> {
    let n = stage1.qubit_count() - 1;
    let words = reads
        .iter()
        .map(|(w, _)| widen_system(w, n))
        .collect::<Result<Vec<_>>>()?;
    let start = stage2_ansatz(stage1, p3, cfg.simplify)?;
    let ctx = |e: Error| e.context(format!("susceptibility stage two at tau = {tau} for P3 = {p3}"));
    let initial = ResourceRecord::of(0.0, &start);
    let mut prop = Propagation::new(start, hw, pw, cfg.avqds, Drive::RealTime, Segment::Time).map_err(ctx)?;
    let mut cursor = match (reference, exact_stage1) {
        (Some(p), Some(s)) => {
            let mut s = s.clone();
            s.apply_pauli(&PauliWord::single(n + 1, n, Pauli::X)?)?;
            s.apply_controlled_pauli(n, &widen_system(p3, n)?, true)?;
            Some(ReferenceCursor::new(&s, p, REFERENCE_STEP)?)
        }
        _ => None,
    };
    let mut times = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); words.len()];
    let mut mismatch: f64 = 0.0;
    let mut min_fid: Option<f64> = None;
    let mut trace = ResourceTrace::default();
    trace.push(initial);
    let mut record = |p: &Propagation| -> Result<()> {
        let psi = p.tangent().psi();
        let state = StateVector::from_amplitudes(psi.to_vec())?;
        times.push(p.time());
        for (w, v) in words.iter().zip(values.iter_mut()) {
            let d = readout_direct(psi, w);
            let s = readout_shell(&state, w)?;
            mismatch = mismatch.max((d - s).abs());
            v.push(d);
        }
        min_fid = fold_min(min_fid, fidelity_with(&mut cursor, &state, p.time())?);
        trace.push(record_of(p));
        Ok(())
    };
    record(&prop)?;
    prop.run(cfg.t_max, &[], |_, p| record(p)).map_err(ctx)?;
    let rows = values
        .iter()
        .map(|v| t_mesh.iter().map(|&t| interpolate(&times, v, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage2Result {
        tau,
        rows,
        resources: trace,
        max_readout_mismatch: mismatch,
        min_fidelity: min_fid,
        steps: times.len(),
    })
}

/// `chi(t, tau)` on a rectangular mesh; `values[(i_tau, i_t)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chi3Grid {
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl Chi3Grid {
    pub fn relative_l2_error(&self, reference: &Chi3Grid) -> Result<f64> {
        if self.values.shape() != reference.values.shape() {
            return Err(Error::Precondition("grids differ in shape".into()));
        }
        let diff = (&self.values - &reference.values).norm();
        Ok(diff / reference.values.norm())
    }

    /// Row at the tau sample closest to `tau`.
    pub fn tau_slice(&self, tau: f64) -> (f64, Vec<f64>) {
        let i = closest(&self.tau, tau);
        (self.tau[i], self.values.row(i).iter().copied().collect())
    }

    /// Column at the t sample closest to `t`.
    pub fn t_slice(&self, t: f64) -> (f64, Vec<f64>) {
        let i = closest(&self.t, t);
        (self.t[i], self.values.column(i).iter().copied().collect())
    }
}

fn closest(grid: &[f64], x: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Term contributions sampled at `tau_samples` (rows) and `t_mesh` (columns).
#[derive(Clone, Debug)]
pub struct TermRows {
    pub tau_samples: Vec<f64>,
    pub t_mesh: Vec<f64>,
    /// `rows[term][k][i]`.
    pub rows: Vec<Vec<Vec<f64>>>,
}

impl TermRows {
    pub fn from_groups(
        terms: &[Chi3TermSpec],
        groups: &[Chi3Group],
        results: &[Chi3GroupResult],
        tau_samples: Vec<f64>,
        t_mesh: Vec<f64>,
    ) -> Result<Self> {
        let mut rows: Vec<Option<Vec<Vec<f64>>>> = vec![None; terms.len()];
        for (g, r) in groups.iter().zip(results) {
            for ((_, reads), per_tau) in g.branches.iter().zip(&r.branches) {
                for (slot, &(_, term)) in reads.iter().enumerate() {
                    rows[term] = Some(per_tau.iter().map(|s| s.rows[slot].clone()).collect());
                }
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::Precondition(format!("missing series for term {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(TermRows {
            tau_samples,
            t_mesh,
            rows,
        })
    }
}

/// Weighted sum of term contributions, each linearly interpolated onto `tau_mesh` first.
pub fn assemble_chi3(terms: &[Chi3TermSpec], data: &TermRows, tau_mesh: &[f64]) -> Result<Chi3Grid> {
    if data.rows.len() != terms.len() {
        return Err(Error::Precondition(format!(
            "{} term series for {} terms",
            data.rows.len(),
            terms.len()
        )));
    }
    let nt = data.t_mesh.len();
    let mut values = DMatrix::zeros(tau_mesh.len(), nt);
    let mut column = vec![0.0; data.tau_samples.len()];
    for (term, rows) in terms.iter().zip(&data.rows) {
        for i in 0..nt {
            for (c, row) in column.iter_mut().zip(rows) {
                *c = row[i];
            }
            for (a, &tau) in tau_mesh.iter().enumerate() {
                values[(a, i)] += term.weight * interpolate(&data.tau_samples, &column, tau)?;
            }
        }
    }
    Ok(Chi3Grid {
        t: data.t_mesh.clone(),
        tau: tau_mesh.to_vec(),
        values,
    })
}

/// Starting distances of one stage-one trajectory and its stage-two branches at `tau = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreflightEntry {
    pub group: usize,
    pub stage1_l2: f64,
    /// `(P3, L^2)` after the initial expansion of each branch.
    pub stage2_l2: Vec<(PauliWord, f64)>,
}

/// Performs the initial expansion of every trajectory at `tau = t = 0`, failing
/// as the full run would when the pool cannot reach the distance cut.
pub fn preflight(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    groups: &[Chi3Group],
    cfg: &Chi3Config,
) -> Result<Vec<PreflightEntry>> {
    cfg.validate()?;
    let n = ground.qubit_count();
    let hw = h.widen(n + 1)?;
    let pw = pool.widen(n + 1)?;
    groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let start = stage1_ansatz(ground, &g.stage1, cfg.simplify)?;
            let s1 = Propagation::new(start, &hw, &pw, cfg.avqds, Drive::RealTime, Segment::Tau)
                .map_err(|e| e.context(format!("stage one of group {gi}")))?;
            let stage1_l2 = s1.current().l2();
            let stage1 = s1.into_ansatz();
            let stage2_l2 = g
                .branches
                .iter()
                .map(|(p3, _)| {
                    let a = stage2_ansatz(&stage1, p3, cfg.simplify)?;
                    let s2 = Propagation::new(a, &hw, &pw, cfg.avqds, Drive::RealTime, Segment::Time)
                        .map_err(|e| e.context(format!("stage two of group {gi} for P3 = {p3}")))?;
                    Ok((*p3, s2.current().l2()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreflightEntry {
                group: gi,
                stage1_l2,
                stage2_l2,
            })
        })
        .collect()
}

/// Runs every group and assembles the grid.
pub fn run_chi3(
    h: &PauliSum,
    ground: &Ansatz,
    pool: &OperatorPool,
    terms: &[Chi3TermSpec],
    cfg: &Chi3Config,
    reference: Option<&Propagator>,
) -> Result<(Chi3Grid, Vec<Chi3Group>, Vec<Chi3GroupResult>)> {
    let groups = group_terms(terms)?;
    preflight(h, ground, pool, &groups, cfg)?;
    let results = groups
        .par_iter()
        .map(|g| run_group(h, ground, pool, g, cfg, reference))
        .collect::<Result<Vec<_>>>()?;
    let data = TermRows::from_groups(terms, &groups, &results, cfg.tau_grid()?, cfg.t_mesh())?;
    let grid = assemble_chi3(terms, &data, &cfg.tau_mesh())?;
    Ok((grid, groups, results))
}

/// Term contributions from exact evolution of `ground`, at every `(tau, t)` pair given.
pub fn exact_term_rows(
    propagator: &Propagator,
    ground: &StateVector,
    terms: &[Chi3TermSpec],
    tau_samples: &[f64],
    t_mesh: &[f64],
) -> Result<TermRows> {
    let groups = group_terms(terms)?;
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); terms.len()];
    for g in &groups {
        let [p0, p1, _, _, p4, p5] = g.stage1;
        let mut left = ground.clone();
        left.apply_pauli(&p0)?;
        left.apply_pauli(&p1)?;
        let mut right = ground.clone();
        right.apply_pauli(&p5)?;
        right.apply_pauli(&p4)?;
        for (p3, reads) in &g.branches {
            let per_tau = tau_samples
                .par_iter()
                .map(|&tau| {
                    let l_tau = propagator.evolve(&left, tau)?;
                    let mut r_tau = propagator.evolve(&right, tau)?;
                    r_tau.apply_pauli(p3)?;
                    let mut out = vec![vec![0.0; t_mesh.len()]; reads.len()];
                    for (i, &t) in t_mesh.iter().enumerate() {
                        let l = propagator.evolve(&l_tau, t)?;
                        let r = propagator.evolve(&r_tau, t)?;
                        for (slot, (p2, _)) in reads.iter().enumerate() {
                            let mut pr = r.clone();
                            pr.apply_pauli(p2)?;
                            out[slot][i] = l.inner(&pr)?.im;
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            for (slot, &(_, term)) in reads.iter().enumerate() {
                rows[term] = per_tau.iter().map(|o| o[slot].clone()).collect();
            }
        }
    }
    Ok(TermRows {
        tau_samples: tau_samples.to_vec(),
        t_mesh: t_mesh.to_vec(),
        rows,
    })
}

/// `<Psi_a| M^z |Psi_b>` for the total magnetization over the stored eigenvectors.
pub fn magnetization_elements(eig: &EigenSystem, spec: &SpinChainSpec) -> Result<DMatrix<Complex64>> {
    eig.matrix_elements(&total_spin(spec, Axis::Z)?)
}

/// Closed-form `chi3_zzzz(t, tau, 0)` from eigenpairs; zero for negative times.
pub fn chi3_exact(eig: &EigenSystem, mz: &DMatrix<Complex64>, sites: usize, t: &[f64], tau: &[f64]) -> Chi3Grid {
    let e = eig.eigenvalues();
    let m = e.len();
    let e0 = e[0];
    let mut weights = Vec::new();
    for mu in 0..m {
        for nu in 0..m {
            for la in 0..m {
                let s = mz[(0, mu)] * mz[(mu, nu)] * mz[(nu, la)] * mz[(la, 0)];
                if s.norm() > 1e-15 {
                    weights.push((s, mu, nu, la));
                }
            }
        }
    }
    let pref = 2.0 / sites as f64;
    let values = DMatrix::from_fn(tau.len(), t.len(), |a, i| {
        let (tt, ta) = (t[i], tau[a]);
        if tt < 0.0 || ta < 0.0 {
            return 0.0;
        }
        let phase = |x: f64| Complex64::from_polar(1.0, x);
        let mut acc = ZERO;
        for &(s, mu, nu, la) in &weights {
            let (em, en, el) = (e[mu], e[nu], e[la]);
            let z = phase(e0 * (tt + ta) - em * tt - en * ta) + phase(en * (tt + ta) - el * tt - e0 * ta)
                - 2.0 * phase(em * (tt + ta) - en * tt - el * ta);
            acc += s * z;
        }
        pref * acc.im
    });
    Chi3Grid {
        t: t.to_vec(),
        tau: tau.to_vec(),
        values,
    }
}

/// Order of the separable 2D transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOrder {
    TFirst,
    TauFirst,
}

/// `chi(w_t, w_tau)` with pole flags; `values[(i_wtau, i_wt)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum2d {
    pub omega_t: Vec<f64>,
    pub omega_tau: Vec<f64>,
    pub values: DMatrix<Complex64>,
    pub pole: DMatrix<bool>,
}

impl Spectrum2d {
    pub fn magnitude(&self) -> DMatrix<f64> {
        self.values.map(|v| if v.re.is_finite() { v.norm() } else { 0.0 })
    }

    /// Interior local maxima of `|chi|`, strongest first, as `(w_t, w_tau, |chi|)`.
    pub fn peaks(&self) -> Vec<(f64, f64, f64)> {
        let mag = self.magnitude();
        let (r, c) = mag.shape();
        let mut out = Vec::new();
        for a in 1..r.saturating_sub(1) {
            for i in 1..c.saturating_sub(1) {
                let v = mag[(a, i)];
                let mut is_max = v > 0.0;
                for da in [-1i64, 0, 1] {
                    for di in [-1i64, 0, 1] {
                        if da == 0 && di == 0 {
                            continue;
                        }
                        let w = mag[((a as i64 + da) as usize, (i as i64 + di) as usize)];
                        if w > v || (w == v && (da, di) < (0, 0)) {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    out.push((self.omega_t[i], self.omega_tau[a], v));
                }
            }
        }
        out.sort_by(|x, y| y.2.total_cmp(&x.2));
        out
    }
}

fn pade_1d(times: &[f64], values: &[Complex64], omega: &[f64], eps: f64) -> Result<(Vec<Complex64>, Vec<bool>)> {
    let p = fit_pade(times, values)?;
    let v: Vec<_> = omega.iter().map(|&w| eval_pade(&p, w, eps)).collect();
    Ok((v.iter().map(|x| x.value).collect(), v.iter().map(|x| x.pole).collect()))
}

/// Separable Padé transform of a uniform grid along both axes.
pub fn chi3_2d_spectrum(
    grid: &Chi3Grid,
    omega_t: &[f64],
    omega_tau: &[f64],
    eps_t: f64,
    eps_tau: f64,
    order: TransformOrder,
) -> Result<Spectrum2d> {
    if !is_uniform(&grid.t) || !is_uniform(&grid.tau) {
        return Err(Error::Precondition("2D transform needs a uniform grid".into()));
    }
    let cplx = grid.values.map(|v| Complex64::new(v, 0.0));
    let (values, pole) = match order {
        TransformOrder::TFirst => {
            // rows (tau) -> w_t, then columns -> w_tau
            let stage: Vec<(Vec<Complex64>, Vec<bool>)> = (0..grid.tau.len())
                .into_par_iter()
                .map(|a| {
                    let row: Vec<Complex64> = cplx.row(a).iter().copied().collect();
                    pade_1d(&grid.t, &row, omega_t, eps_t)
                })
                .collect::<Result<_>>()?;
            let cols: Vec<(Vec<Complex64>, Vec<bool>)> = (0..omega_t.len())
                .into_par_iter()
                .map(|i| {
                    let col: Vec<Complex64> = stage.iter().map(|s| s.0[i]).collect();
                    pade_1d(&grid.tau, &col, omega_tau, eps_tau)
                })
                .collect::<Result<_>>()?;
            let values = DMatrix::from_fn(omega_tau.len(), omega_t.len(), |b, i| cols[i].0[b]);
            let pole = DMatrix::from_fn(omega_tau.len(), omega_t.len(), |b, i| {
                cols[i].1[b] || stage.iter().any(|s| s.1[i])
            });
            (values, pole)
        }
        TransformOrder::TauFirst => {
            let stage: Vec<(Vec<Complex64>, Vec<bool>)> = (0..grid.t.len())
                .into_par_iter()
                .map(|i| {
                    let col: Vec<Complex64> = cplx.column(i).iter().copied().collect();
                    pade_1d(&grid.tau, &col, omega_tau, eps_tau)
                })
                .collect::<Result<_>>()?;
            let rows: Vec<(Vec<Complex64>, Vec<bool>)> = (0..omega_tau.len())
                .into_par_iter()
                .map(|b| {
                    let row: Vec<Complex64> = stage.iter().map(|s| s.0[b]).collect();
                    pade_1d(&grid.t, &row, omega_t, eps_t)
                })
                .collect::<Result<_>>()?;
            let values = DMatrix::from_fn(omega_tau.len(), omega_t.len(), |b, i| rows[b].0[i]);
            let pole = DMatrix::from_fn(omega_tau.len(), omega_t.len(), |b, i| {
                rows[b].1[i] || stage.iter().any(|s| s.1[b])
            });
            (values, pole)
        }
    };
    Ok(Spectrum2d {
        omega_t: omega_t.to_vec(),
        omega_tau: omega_tau.to_vec(),
        values,
        pole,
    })
}

/// Closed-form double transform with finite broadening `eps` on both axes.
pub fn chi3_spectrum_oracle(
    eig: &EigenSystem,
    mz: &DMatrix<Complex64>,
    sites: usize,
    omega_t: &[f64],
    omega_tau: &[f64],
    eps: f64,
) -> Spectrum2d {
    let e = eig.eigenvalues();
    let m = e.len();
    let l = |w: f64, a: usize, b: usize| Complex64::new(1.0, 0.0) / Complex64::new(w + e[a] - e[b], eps);
    let mut weights = Vec::new();
    for mu in 0..m {
        for nu in 0..m {
            for la in 0..m {
                let s = mz[(0, mu)] * mz[(mu, nu)] * mz[(nu, la)] * mz[(la, 0)];
                if s.norm() > 1e-15 {
                    weights.push((s, mu, nu, la));
                }
            }
        }
    }
    let pref = Complex64::new(0.0, 1.0 / sites as f64);
    let values = DMatrix::from_fn(omega_tau.len(), omega_t.len(), |b, i| {
        let (wt, wu) = (omega_t[i], omega_tau[b]);
        let mut acc = ZERO;
        for &(s, mu, nu, la) in &weights {
            let first = l(wt, 0, mu) * l(wu, 0, nu) - l(wt, mu, 0) * l(wu, nu, 0);
            let second = l(wt, nu, la) * l(wu, nu, 0) - l(wt, la, nu) * l(wu, 0, nu);
            let split = l(wt, mu, nu) * l(wu, mu, la) - l(wt, nu, mu) * l(wu, la, mu);
            acc += s * (first + second - 2.0 * split);
        }
        pref * acc
    });
    Spectrum2d {
        omega_t: omega_t.to_vec(),
        omega_tau: omega_tau.to_vec(),
        pole: DMatrix::from_element(omega_tau.len(), omega_t.len(), false),
        values,
    }
}
