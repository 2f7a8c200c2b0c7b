//! McLachlan variational dynamics on pseudo-Trotter ansätze.
//!
//! For a state `|psi(theta)>` with derivative states `|d_mu>` the metric is
//! `M = 2 Re[<d_mu|d_nu> + <d_mu|psi><d_nu|psi>]`. Real-time propagation uses
//! `V_mu = 2 Im[<d_mu|H psi> + <psi|d_mu> E]` and imaginary-time propagation
//! `V_mu = 2 [-Re<d_mu|H psi> + E Re<d_mu|psi>]`. Both solve
//! `(M + delta I) theta_dot = V` and measure the McLachlan distance
//! `L^2 = 2 var(H) - V . theta_dot`.
//!
//! The ansatz grows between time steps by scanning an operator pool: every
//! candidate is appended at zero angle in a bordered solve and the batch with
//! the smallest resulting distances and pairwise disjoint supports is kept.

use nalgebra::{DMatrix, DMatrixView, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, Element, Segment};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, regularized_solve};
use crate::models::OperatorPool;
use crate::pauli::{PauliSum, PauliWord};
use crate::resources::{circuit_depth, cnot_count};
use crate::statevector::{apply_pauli_slice, pauli_into_slice, rotate_slice, sum_into_slice};

/// Smallest fractional drop of `L^2` that justifies appending an operator.
/// Nearly redundant directions otherwise trickle in with vanishing gains.
pub const MIN_RELATIVE_GAIN: f64 = 1e-3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const MINUS_I: Complex64 = Complex64::new(0.0, -1.0);

fn as_reals(v: &[Complex64]) -> &[f64] {
    // Complex<f64> is repr(C) with fields (re, im).
    unsafe { std::slice::from_raw_parts(v.as_ptr() as *const f64, v.len() * 2) }
}

/// Direction of propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    RealTime,
    ImaginaryTime,
}

/// Solution of the regularized equations of motion.
#[derive(Clone, Debug, PartialEq)]
pub struct EomSolution {
    pub theta_dot: DVector<f64>,
    pub l2: f64,
    pub var_h: f64,
}

/// Solves `(M + delta I) theta_dot = V` and evaluates `L^2 = 2 var_H - V . theta_dot`.
pub fn solve_eom(m: &DMatrix<f64>, v: &DVector<f64>, var_h: f64, delta: f64) -> Result<EomSolution> {
    if !(delta >= 0.0) {
        return Err(Error::Precondition("Tikhonov shift must be nonnegative".into()));
    }
    let theta_dot = regularized_solve(m, v, delta)?;
    let l2 = (2.0 * var_h - v.dot(&theta_dot)).max(0.0);
    Ok(EomSolution { theta_dot, l2, var_h })
}

/// Circuit state, derivative states and `H|psi>` at one parameter point.
#[derive(Clone, Debug, Default)]
pub struct TangentSpace {
    dim: usize,
    n: usize,
    psi: Vec<Complex64>,
    hpsi: Vec<Complex64>,
    derivs: Vec<Complex64>,
}

impl TangentSpace {
    pub fn psi(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn h_psi(&self) -> &[Complex64] {
        &self.hpsi
    }

    pub fn derivative(&self, mu: usize) -> &[Complex64] {
        &self.derivs[mu * self.dim..(mu + 1) * self.dim]
    }

    pub fn n_theta(&self) -> usize {
        self.n
    }

    /// Single forward sweep: each rotation spawns its derivative buffer, and
    /// every later element acts on the state and on all live buffers.
    pub fn compute(&mut self, ansatz: &Ansatz, angles: &[f64], h: &PauliSum) {
        let dim = ansatz.dim();
        let n = ansatz.n_theta();
        self.dim = dim;
        self.n = n;
        self.psi.clear();
        self.psi.resize(dim, ZERO);
        self.hpsi.resize(dim, ZERO);
        self.derivs.resize(n * dim, ZERO);
        self.psi[ansatz.reference()] = Complex64::new(1.0, 0.0);
        let mut k = 0;
        for e in ansatz.elements() {
            match e {
                Element::Rotation { generator, .. } => {
                    let theta = angles[k];
                    rotate_slice(&mut self.psi, theta, generator);
                    for buf in self.derivs[..k * dim].chunks_exact_mut(dim) {
                        rotate_slice(buf, theta, generator);
                    }
                    let d = &mut self.derivs[k * dim..(k + 1) * dim];
                    pauli_into_slice(&self.psi, d, generator);
                    d.iter_mut().for_each(|a| *a *= MINUS_I);
                    k += 1;
                }
                Element::Fixed(g) => {
                    g.apply(&mut self.psi);
                    for buf in self.derivs[..k * dim].chunks_exact_mut(dim) {
                        g.apply(buf);
                    }
                }
            }
        }
        sum_into_slice(h, &self.psi, &mut self.hpsi);
    }

    fn derivative_matrix(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(as_reals(&self.derivs[..self.n * self.dim]), 2 * self.dim, self.n)
    }
}

/// Metric, drive and solution at one parameter point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub m: DMatrix<f64>,
    pub v: DVector<f64>,
    pub energy: f64,
    pub variance: f64,
    pub solution: EomSolution,
    /// `<d_mu|psi>` for every angle.
    pub overlaps: Vec<Complex64>,
}

impl Evaluation {
    pub fn l2(&self) -> f64 {
        self.solution.l2
    }

    pub fn theta_dot(&self) -> &DVector<f64> {
        &self.solution.theta_dot
    }
}

/// Settings shared by the pool scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandConfig {
    pub l2_cut: f64,
    pub tikhonov: f64,
    pub max_new_ops_per_iteration: Option<usize>,
    pub max_rounds: usize,
}

/// Outcome of [`adaptive_expand`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpandReport {
    pub added: Vec<PauliWord>,
    pub rounds: usize,
    pub l2_before: f64,
    pub l2_after: f64,
    /// No pool operator lowered the distance while it was still above the cut.
    pub exhausted: bool,
}

impl ExpandReport {
    fn into_result(self, cut: f64) -> Result<Self> {
        if self.exhausted {
            Err(Error::PoolExhausted {
                achieved: self.l2_after,
                cut,
            })
        } else {
            Ok(self)
        }
    }
}

/// Trial distance of one candidate from a pool scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateScore {
    pub index: usize,
    pub l2: f64,
}

/// Evaluates McLachlan quantities for a fixed Hamiltonian and drive.
#[derive(Clone, Debug)]
pub struct Engine<'a> {
    h: &'a PauliSum,
    drive: Drive,
    tikhonov: f64,
    ws: TangentSpace,
    scratch: Vec<Complex64>,
}

impl<'a> Engine<'a> {
    pub fn new(h: &'a PauliSum, drive: Drive, tikhonov: f64) -> Result<Self> {
        h.check_hermitian()?;
        if !(tikhonov >= 0.0) {
            return Err(Error::Precondition("Tikhonov shift must be nonnegative".into()));
        }
        Ok(Engine {
            h,
            drive,
            tikhonov,
            ws: TangentSpace::default(),
            scratch: Vec::new(),
        })
    }

    pub fn hamiltonian(&self) -> &PauliSum {
        self.h
    }

    pub fn drive(&self) -> Drive {
        self.drive
    }

    pub fn tangent(&self) -> &TangentSpace {
        &self.ws
    }

    fn check(&self, ansatz: &Ansatz) -> Result<()> {
        if ansatz.qubit_count() != self.h.qubit_count() {
            return Err(Error::Dimension {
                expected: self.h.qubit_count(),
                found: ansatz.qubit_count(),
            });
        }
        Ok(())
    }

    /// Metric and drive at `angles` (the ansatz supplies the structure only).
    pub fn evaluate_at(&mut self, ansatz: &Ansatz, angles: &[f64]) -> Result<Evaluation> {
        self.check(ansatz)?;
        if angles.len() != ansatz.n_theta() {
            return Err(Error::Dimension {
                expected: ansatz.n_theta(),
                found: angles.len(),
            });
        }
        self.ws.compute(ansatz, angles, self.h);
        let n = self.ws.n;
        let dim = self.ws.dim;
        let psi = &self.ws.psi;
        let hpsi = &self.ws.hpsi;
        let energy = as_reals(psi).iter().zip(as_reals(hpsi)).map(|(a, b)| a * b).sum::<f64>();
        let h2: f64 = hpsi.iter().map(|a| a.norm_sqr()).sum();
        let variance = (h2 - energy * energy).max(0.0);

        // Columns: psi, -i psi, H psi, -i H psi.
        let mut probes = DMatrix::<f64>::zeros(2 * dim, 4);
        for i in 0..dim {
            let (p, hp) = (psi[i], hpsi[i]);
            let mp = p * MINUS_I;
            let mhp = hp * MINUS_I;
            probes[(2 * i, 0)] = p.re;
            probes[(2 * i + 1, 0)] = p.im;
            probes[(2 * i, 1)] = mp.re;
            probes[(2 * i + 1, 1)] = mp.im;
            probes[(2 * i, 2)] = hp.re;
            probes[(2 * i + 1, 2)] = hp.im;
            probes[(2 * i, 3)] = mhp.re;
            probes[(2 * i + 1, 3)] = mhp.im;
        }
        let d = self.ws.derivative_matrix();
        let dt = d.transpose();
        let proj = &dt * &probes;
        let mut gram = &dt * d;
        let overlaps: Vec<Complex64> = (0..n).map(|mu| Complex64::new(proj[(mu, 0)], proj[(mu, 1)])).collect();
        for mu in 0..n {
            for nu in 0..n {
                let g = overlaps[mu] * overlaps[nu];
                gram[(mu, nu)] = 2.0 * (gram[(mu, nu)] + g.re);
            }
        }
        // Symmetrize against rounding in the product.
        let m = (&gram + gram.transpose()) * 0.5;
        let v = match self.drive {
            Drive::RealTime => DVector::from_fn(n, |mu, _| 2.0 * proj[(mu, 3)] - 2.0 * energy * overlaps[mu].im),
            Drive::ImaginaryTime => {
                DVector::from_fn(n, |mu, _| -2.0 * proj[(mu, 2)] + 2.0 * energy * overlaps[mu].re)
            }
        };
        let solution = solve_eom(&m, &v, variance, self.tikhonov)?;
        Ok(Evaluation {
            m,
            v,
            energy,
            variance,
            solution,
            overlaps,
        })
    }

    pub fn evaluate(&mut self, ansatz: &Ansatz) -> Result<Evaluation> {
        let angles = ansatz.angles();
        self.evaluate_at(ansatz, &angles)
    }

    /// Trial distance for each pool generator appended at zero angle.
    ///
    /// Must follow an evaluation of the same ansatz; the bordered system is
    /// solved through a Schur complement of one Cholesky factorization.
    pub fn scan_pool(&mut self, current: &Evaluation, pool: &OperatorPool) -> Result<Vec<CandidateScore>> {
        let dim = self.ws.dim;
        let n = self.ws.n;
        let p = pool.len();
        if p == 0 {
            return Ok(Vec::new());
        }
        if let Some(g) = pool.generators().first() {
            if g.qubit_count() != self.h.qubit_count() {
                return Err(Error::Dimension {
                    expected: self.h.qubit_count(),
                    found: g.qubit_count(),
                });
            }
        }
        let psi = &self.ws.psi;
        let hpsi = &self.ws.hpsi;
        // Candidate derivative states d_c = -i A_c psi, stored as real columns.
        let mut cand = DMatrix::<f64>::zeros(2 * dim, p);
        let mut expect = vec![0.0; p];
        let mut drive_c = vec![0.0; p];
        self.scratch.resize(dim, ZERO);
        for (c, g) in pool.generators().iter().enumerate() {
            let a = &mut self.scratch;
            pauli_into_slice(psi, a, g);
            let mut e = 0.0;
            let mut re_ah = 0.0;
            let mut im_ah = 0.0;
            let mut col = cand.column_mut(c);
            for i in 0..dim {
                let ai = a[i];
                e += ai.re * psi[i].re + ai.im * psi[i].im;
                let ah = ai.conj() * hpsi[i];
                re_ah += ah.re;
                im_ah += ah.im;
                let d = ai * MINUS_I;
                col[2 * i] = d.re;
                col[2 * i + 1] = d.im;
            }
            expect[c] = e;
            drive_c[c] = match self.drive {
                Drive::RealTime => 2.0 * re_ah - 2.0 * e * current.energy,
                Drive::ImaginaryTime => 2.0 * im_ah,
            };
        }
        let l2 = current.l2();
        let delta = self.tikhonov;
        let mut scores = Vec::with_capacity(p);
        if n == 0 {
            for c in 0..p {
                let s = 2.0 - 2.0 * expect[c] * expect[c] + delta;
                let gain = drive_c[c] * drive_c[c] / s;
                scores.push(CandidateScore {
                    index: c,
                    l2: (l2 - gain).max(0.0),
                });
            }
            return Ok(scores);
        }
        let d = self.ws.derivative_matrix();
        let mut cols = d.transpose() * &cand;
        for c in 0..p {
            for mu in 0..n {
                cols[(mu, c)] = 2.0 * cols[(mu, c)] - 2.0 * expect[c] * current.overlaps[mu].im;
            }
        }
        let mut k = current.m.clone();
        for i in 0..n {
            k[(i, i)] += delta;
        }
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Solver("regularized metric is not positive definite".into()))?;
        let y = chol.solve(&cols);
        let theta_dot = current.theta_dot();
        for c in 0..p {
            let m_col = cols.column(c);
            let s = 2.0 - 2.0 * expect[c] * expect[c] + delta - m_col.dot(&y.column(c));
            let r = drive_c[c] - m_col.dot(theta_dot);
            let gain = if s > 0.0 { r * r / s } else { 0.0 };
            scores.push(CandidateScore {
                index: c,
                l2: (l2 - gain).max(0.0),
            });
        }
        Ok(scores)
    }

    /// Grows `ansatz` until its distance drops below `cfg.l2_cut` or the pool
    /// stops helping (flagged in the report).
    pub fn expand(
        &mut self,
        ansatz: &mut Ansatz,
        pool: &OperatorPool,
        cfg: &ExpandConfig,
        segment: Segment,
        mut current: Evaluation,
    ) -> Result<(Evaluation, ExpandReport)> {
        let mut report = ExpandReport {
            l2_before: current.l2(),
            l2_after: current.l2(),
            ..Default::default()
        };
        let coverable = pool.support();
        while current.l2() >= cfg.l2_cut {
            if report.rounds >= cfg.max_rounds {
                return Err(Error::PoolExhausted {
                    achieved: current.l2(),
                    cut: cfg.l2_cut,
                });
            }
            let mut scores = self.scan_pool(&current, pool)?;
            scores.sort_by(|a, b| a.l2.total_cmp(&b.l2).then(a.index.cmp(&b.index)));
            let l2 = current.l2();
            let improves = |s: &CandidateScore| s.l2 < l2 * (1.0 - MIN_RELATIVE_GAIN);
            if !scores.first().is_some_and(improves) {
                report.exhausted = true;
                break;
            }
            let limit = cfg.max_new_ops_per_iteration.unwrap_or(usize::MAX).max(1);
            let mut covered = 0u64;
            let mut picked = Vec::new();
            for s in scores.iter().take_while(|s| improves(s)) {
                if picked.len() >= limit || (covered & coverable) == coverable && !picked.is_empty() {
                    break;
                }
                let g = pool.generators()[s.index];
                if g.support() & covered == 0 {
                    covered |= g.support();
                    picked.push(g);
                }
            }
            for g in &picked {
                ansatz.push_rotation(*g, 0.0, segment)?;
            }
            report.added.extend(picked);
            report.rounds += 1;
            current = self.evaluate(ansatz)?;
        }
        report.l2_after = current.l2();
        Ok((current, report))
    }
}

/// `M` of the ansatz at its stored angles.
pub fn compute_m(ansatz: &Ansatz) -> Result<DMatrix<f64>> {
    let h = PauliSum::zero(ansatz.qubit_count());
    Ok(Engine::new(&h, Drive::RealTime, 1e-6)?.evaluate(ansatz)?.m)
}

/// Real-time `V` of the ansatz at its stored angles.
pub fn compute_v(ansatz: &Ansatz, h: &PauliSum) -> Result<DVector<f64>> {
    Ok(Engine::new(h, Drive::RealTime, 1e-6)?.evaluate(ansatz)?.v)
}

/// Adds pool operators at zero angle until the distance falls below the cut.
pub fn adaptive_expand(
    ansatz: &mut Ansatz,
    h: &PauliSum,
    pool: &OperatorPool,
    cfg: &ExpandConfig,
    drive: Drive,
    segment: Segment,
) -> Result<ExpandReport> {
    let mut engine = Engine::new(h, drive, cfg.tikhonov)?;
    let current = engine.evaluate(ansatz)?;
    engine.expand(ansatz, pool, cfg, segment, current)?.1.into_result(cfg.l2_cut)
}

/// Real-time propagation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvqdsConfig {
    pub l2_cut: f64,
    pub dtheta_max: f64,
    pub tikhonov: f64,
    pub max_new_ops_per_iteration: Option<usize>,
    pub dt_initial: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub grow: f64,
    pub shrink: f64,
    pub max_expand_rounds: usize,
    /// Keep propagating with the best reachable distance instead of failing when the pool runs dry.
    pub continue_when_exhausted: bool,
}

impl Default for AvqdsConfig {
    fn default() -> Self {
        AvqdsConfig {
            l2_cut: 1e-3,
            dtheta_max: 0.01,
            tikhonov: 1e-6,
            max_new_ops_per_iteration: None,
            dt_initial: 1e-3,
            dt_max: 0.1,
            dt_min: 1e-8,
            grow: 1.1,
            shrink: 0.5,
            max_expand_rounds: 200,
            continue_when_exhausted: false,
        }
    }
}

impl AvqdsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l2_cut", self.l2_cut),
            ("dtheta_max", self.dtheta_max),
            ("tikhonov", self.tikhonov),
            ("dt_initial", self.dt_initial),
            ("dt_max", self.dt_max),
            ("dt_min", self.dt_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Precondition(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.grow >= 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Precondition("grow must be >= 1 and shrink in (0, 1)".into()));
        }
        if self.max_new_ops_per_iteration == Some(0) || self.max_expand_rounds == 0 {
            return Err(Error::Precondition("expansion limits must be positive".into()));
        }
        Ok(())
    }

    pub fn expand_config(&self) -> ExpandConfig {
        ExpandConfig {
            l2_cut: self.l2_cut,
            tikhonov: self.tikhonov,
            max_new_ops_per_iteration: self.max_new_ops_per_iteration,
            max_rounds: self.max_expand_rounds,
        }
    }
}

/// Per accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub n_theta: usize,
    pub l2: f64,
    pub energy: f64,
    pub variance: f64,
    pub max_dtheta: f64,
    pub cnots: usize,
    pub depth: usize,
    pub added: usize,
}

impl StepDiagnostics {
    pub const HEADER: &'static str = "t\tdt\tn_theta\tl2\tenergy\tvar_h\tmax_dtheta\tcnots\tdepth";

    pub fn row(&self) -> String {
        format!(
            "{:.10}\t{:.6e}\t{}\t{:.6e}\t{:.12}\t{:.6e}\t{:.6e}\t{}\t{}",
            self.t, self.dt, self.n_theta, self.l2, self.energy, self.variance, self.max_dtheta, self.cnots, self.depth
        )
    }
}

/// Imaginary-time runs keep going when the pool saturates: the distance
/// shrinks with the variance as the state relaxes.
fn check_exhaustion(report: ExpandReport, drive: Drive, cfg: &AvqdsConfig) -> Result<ExpandReport> {
    match drive {
        Drive::RealTime if !cfg.continue_when_exhausted => report.into_result(cfg.l2_cut),
        _ => Ok(report),
    }
}

/// A running adaptive RK4 trajectory.
#[derive(Clone, Debug)]
pub struct Propagation<'a> {
    engine: Engine<'a>,
    pool: &'a OperatorPool,
    cfg: AvqdsConfig,
    segment: Segment,
    ansatz: Ansatz,
    current: Evaluation,
    t: f64,
    dt: f64,
    added_pending: usize,
}

impl<'a> Propagation<'a> {
    /// Evaluates the starting point and expands the ansatz if needed.
    pub fn new(
        ansatz: Ansatz,
        h: &'a PauliSum,
        pool: &'a OperatorPool,
        cfg: AvqdsConfig,
        drive: Drive,
        segment: Segment,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut engine = Engine::new(h, drive, cfg.tikhonov)?;
        let mut ansatz = ansatz;
        let current = engine.evaluate(&ansatz)?;
        let (current, report) = if current.l2() >= cfg.l2_cut {
            let (current, report) = engine.expand(&mut ansatz, pool, &cfg.expand_config(), segment, current)?;
            (current, check_exhaustion(report, drive, &cfg)?)
        } else {
            (current, ExpandReport::default())
        };
        Ok(Propagation {
            engine,
            pool,
            cfg,
            segment,
            ansatz,
            current,
            t: 0.0,
            dt: cfg.dt_initial,
            added_pending: report.added.len(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn into_ansatz(self) -> Ansatz {
        self.ansatz
    }

    pub fn current(&self) -> &Evaluation {
        &self.current
    }

    pub fn tangent(&self) -> &TangentSpace {
        self.engine.tangent()
    }

    /// Diagnostics describing the current point.
    pub fn diagnostics(&self, dt: f64, max_dtheta: f64) -> StepDiagnostics {
        StepDiagnostics {
            t: self.t,
            dt,
            n_theta: self.ansatz.n_theta(),
            l2: self.current.l2(),
            energy: self.current.energy,
            variance: self.current.variance,
            max_dtheta,
            cnots: cnot_count(&self.ansatz),
            depth: circuit_depth(&self.ansatz),
            added: self.added_pending,
        }
    }

    /// One accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<StepDiagnostics> {
        let remaining = t_limit - self.t;
        if !(remaining > 0.0) {
            return Err(Error::Precondition(format!(
                "step requested past the limit (t = {}, limit = {t_limit})",
                self.t
            )));
        }
        let theta = self.ansatz.angles();
        let n = theta.len();
        let k1 = self.current.theta_dot().clone();
        let rate = max_abs(k1.as_slice());
        let mut dt = (self.dt * self.cfg.grow).min(self.cfg.dt_max);
        if rate > 0.0 {
            dt = dt.min(0.95 * self.cfg.dtheta_max / rate);
        }
        let mut clipped = false;
        if dt >= remaining {
            dt = remaining;
            clipped = true;
        }
        let drive = self.engine.drive();
        loop {
            if dt < self.cfg.dt_min {
                return Err(Error::StepUnderflow {
                    time: self.t,
                    dt,
                    n_theta: n,
                });
            }
            let stage = |base: &[f64], k: &DVector<f64>, h: f64| -> Vec<f64> {
                base.iter().zip(k.iter()).map(|(a, b)| a + h * b).collect()
            };
            let k2 = self
                .engine
                .evaluate_at(&self.ansatz, &stage(&theta, &k1, 0.5 * dt))?
                .solution
                .theta_dot;
            let k3 = self
                .engine
                .evaluate_at(&self.ansatz, &stage(&theta, &k2, 0.5 * dt))?
                .solution
                .theta_dot;
            let k4 = self
                .engine
                .evaluate_at(&self.ansatz, &stage(&theta, &k3, dt))?
                .solution
                .theta_dot;
            let delta: Vec<f64> = (0..n)
                .map(|i| dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            let max_dtheta = max_abs(&delta);
            if max_dtheta > self.cfg.dtheta_max {
                dt *= self.cfg.shrink;
                clipped = false;
                continue;
            }
            let next: Vec<f64> = theta.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let eval = self.engine.evaluate_at(&self.ansatz, &next)?;
            if drive == Drive::ImaginaryTime
                && eval.energy > self.current.energy + 1e-13 * self.current.energy.abs().max(1.0)
            {
                dt *= self.cfg.shrink;
                clipped = false;
                continue;
            }
            self.ansatz.set_angles(&next)?;
            self.current = eval;
            self.t = if clipped { t_limit } else { self.t + dt };
            if !clipped {
                self.dt = dt;
            }
            self.added_pending = 0;
            if self.current.l2() >= self.cfg.l2_cut {
                let current = self.current.clone();
                let (current, report) = self.engine.expand(
                    &mut self.ansatz,
                    self.pool,
                    &self.cfg.expand_config(),
                    self.segment,
                    current,
                )?;
                let report = check_exhaustion(report, drive, &self.cfg)
                    .map_err(|e| e.context(format!("expansion at t = {:.6}", self.t)))?;
                self.current = current;
                self.added_pending = report.added.len();
            }
            return Ok(self.diagnostics(dt, max_dtheta));
        }
    }

    /// Steps to `t_end`, landing exactly on every checkpoint; `on_step` sees each accepted step.
    pub fn run<F>(&mut self, t_end: f64, checkpoints: &[f64], mut on_step: F) -> Result<()>
    where
        F: FnMut(&StepDiagnostics, &Propagation<'a>) -> Result<()>,
    {
        let mut marks: Vec<f64> = checkpoints
            .iter()
            .copied()
            .filter(|&c| c > self.t && c < t_end)
            .collect();
        marks.push(t_end);
        marks.sort_by(f64::total_cmp);
        marks.dedup();
        for mark in marks {
            while self.t < mark {
                let d = self.step(mark).map_err(|e| {
                    e.context(format!("propagation at t = {:.6} with {} angles", self.t, self.ansatz.n_theta()))
                })?;
                on_step(&d, self)?;
            }
        }
        Ok(())
    }
}

/// Imaginary-time ground-state preparation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvqiteConfig {
    pub l2_cut: f64,
    pub dtheta_max: f64,
    pub tikhonov: f64,
    pub max_new_ops_per_iteration: Option<usize>,
    pub dtau_initial: f64,
    pub dtau_max: f64,
    pub tau_max: f64,
    pub energy_rate_tol: f64,
    pub max_expand_rounds: usize,
}

impl Default for AvqiteConfig {
    fn default() -> Self {
        AvqiteConfig {
            l2_cut: 1e-5,
            dtheta_max: 0.05,
            tikhonov: 1e-6,
            max_new_ops_per_iteration: None,
            dtau_initial: 1e-2,
            dtau_max: 0.5,
            tau_max: 200.0,
            energy_rate_tol: 1e-8,
            max_expand_rounds: 200,
        }
    }
}

impl AvqiteConfig {
    /// Shipped settings for Hubbard chains with the UCCSD-derived pool.
    pub fn hubbard() -> Self {
        AvqiteConfig {
            l2_cut: 1e-3,
            ..AvqiteConfig::default()
        }
    }

    /// Shipped settings for encoded spin chains with the spin ground-state pool.
    pub fn spin() -> Self {
        AvqiteConfig {
            l2_cut: 1e-2,
            energy_rate_tol: 1e-10,
            ..AvqiteConfig::default()
        }
    }
}

impl AvqiteConfig {
    fn propagation_config(&self) -> AvqdsConfig {
        AvqdsConfig {
            l2_cut: self.l2_cut,
            dtheta_max: self.dtheta_max,
            tikhonov: self.tikhonov,
            max_new_ops_per_iteration: self.max_new_ops_per_iteration,
            dt_initial: self.dtau_initial,
            dt_max: self.dtau_max,
            dt_min: 1e-8,
            grow: 1.1,
            shrink: 0.5,
            max_expand_rounds: self.max_expand_rounds,
            continue_when_exhausted: false,
        }
    }
}

/// Result of imaginary-time preparation.
#[derive(Clone, Debug)]
pub struct AvqiteResult {
    pub ansatz: Ansatz,
    pub energy: f64,
    pub variance: f64,
    pub tau: f64,
    pub history: Vec<StepDiagnostics>,
}

/// Adaptive imaginary-time evolution from a basis reference state.
pub fn avqite_prepare(
    qubits: usize,
    reference: usize,
    h: &PauliSum,
    pool: &OperatorPool,
    cfg: &AvqiteConfig,
) -> Result<AvqiteResult> {
    if !(cfg.tau_max > 0.0) || !(cfg.energy_rate_tol > 0.0) {
        return Err(Error::Precondition("tau_max and energy_rate_tol must be positive".into()));
    }
    let ansatz = Ansatz::new(qubits, reference)?;
    let mut prop = Propagation::new(
        ansatz,
        h,
        pool,
        cfg.propagation_config(),
        Drive::ImaginaryTime,
        Segment::Ground,
    )?;
    let mut history = vec![prop.diagnostics(0.0, 0.0)];
    loop {
        let e0 = prop.current().energy;
        let flow = prop.current().v.dot(prop.current().theta_dot()).abs();
        if flow < cfg.energy_rate_tol && prop.current().l2() < cfg.l2_cut {
            break;
        }
        if prop.time() >= cfg.tau_max {
            return Err(Error::Stagnation {
                energy: e0,
                gradient_norm: prop.current().v.norm(),
            });
        }
        let d = prop.step(cfg.tau_max)?;
        history.push(d);
        let rate = (e0 - prop.current().energy).abs() / d.dt;
        if rate < cfg.energy_rate_tol && prop.current().l2() < cfg.l2_cut && d.added == 0 {
            break;
        }
    }
    let energy = prop.current().energy;
    let variance = prop.current().variance;
    let tau = prop.time();
    Ok(AvqiteResult {
        ansatz: prop.into_ansatz(),
        energy,
        variance,
        tau,
        history,
    })
}

/// Finite-difference reference for a derivative state (central differences).
pub fn finite_difference_derivative(ansatz: &Ansatz, mu: usize, h: f64) -> Result<Vec<Complex64>> {
    let mut plus = ansatz.clone();
    let mut minus = ansatz.clone();
    let mut angles = ansatz.angles();
    if mu >= angles.len() {
        return Err(Error::Precondition(format!("derivative index {mu} out of range")));
    }
    angles[mu] += h;
    plus.set_angles(&angles)?;
    angles[mu] -= 2.0 * h;
    minus.set_angles(&angles)?;
    let p = plus.prepare();
    let m = minus.prepare();
    Ok(p.amplitudes()
        .iter()
        .zip(m.amplitudes())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// `-i A psi` as a standalone vector.
pub fn generator_direction(psi: &[Complex64], generator: &PauliWord) -> Vec<Complex64> {
    let mut out = psi.to_vec();
    apply_pauli_slice(&mut out, generator);
    out.iter_mut().for_each(|a| *a *= MINUS_I);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_hubbard, pool_hamiltonian, HubbardChainSpec, PoolLabel};
    use crate::pauli::{parse_sum, parse_word};

    fn x_ansatz(theta: f64) -> Ansatz {
        let mut a = Ansatz::new(1, 0).unwrap();
        a.push_rotation(parse_word("X0", 1).unwrap(), theta, Segment::Time).unwrap();
        a
    }

    #[test]
    fn metric_single_rotation() {
        let m = compute_m(&x_ansatz(0.37)).unwrap();
        assert!((m[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn drive_examples() {
        let z = parse_sum("1*Z0", 1).unwrap();
        for theta in [0.0, 0.3, 1.1] {
            let v = compute_v(&x_ansatz(theta), &z).unwrap();
            assert!(v[0].abs() < 1e-14);
        }
        // Y-driven motion from |0> lies outside the X-rotation tangent space.
        let y = parse_sum("1*Y0", 1).unwrap();
        assert!(compute_v(&x_ansatz(0.0), &y).unwrap()[0].abs() < 1e-14);
        let x = parse_sum("1*X0", 1).unwrap();
        assert!((compute_v(&x_ansatz(0.0), &x).unwrap()[0] - 2.0).abs() < 1e-14);
        let ident = PauliSum::identity(1, 3.0);
        assert!(compute_v(&x_ansatz(0.4), &ident).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn eom_examples() {
        let theta = std::f64::consts::FRAC_PI_4;
        let z = parse_sum("1*Z0", 1).unwrap();
        let a = x_ansatz(theta);
        let var = a.prepare().variance(&z).unwrap();
        assert!((var - (2.0 * theta).sin().powi(2)).abs() < 1e-14);
        let sol = solve_eom(&compute_m(&a).unwrap(), &compute_v(&a, &z).unwrap(), var, 1e-6).unwrap();
        assert!(sol.theta_dot[0].abs() < 1e-14);
        assert!((sol.l2 - 2.0).abs() < 1e-12);

        let m = DMatrix::identity(3, 3);
        let v = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let sol = solve_eom(&m, &v, 10.0, 1e-6).unwrap();
        for i in 0..3 {
            assert!((sol.theta_dot[i] - v[i] / (1.0 + 1e-6)).abs() < 1e-15);
        }
        let sol = solve_eom(&m, &DVector::zeros(3), 0.25, 1e-6).unwrap();
        assert_eq!(sol.l2, 0.5);
    }

    #[test]
    fn duplicated_generator_gives_singular_metric() {
        let mut a = x_ansatz(0.2);
        a.push_rotation(parse_word("X0", 1).unwrap(), 0.5, Segment::Time).unwrap();
        let m = compute_m(&a).unwrap();
        assert!(m.determinant().abs() < 1e-12);
    }

    #[test]
    fn tangent_matches_single_derivatives() {
        let mut a = Ansatz::new(3, 0b101).unwrap();
        for (w, th) in [("Y0 X1", 0.3), ("Z1 Y2", -0.8), ("X0", 1.2), ("Y0 Y1 Y2", 0.5)] {
            a.push_rotation(parse_word(w, 3).unwrap(), th, Segment::Time).unwrap();
        }
        a.push_fixed(crate::ansatz::FixedGate::Hadamard(2)).unwrap();
        let h = parse_sum("0.4*Z0 Z1 + 0.7*X2", 3).unwrap();
        let mut ts = TangentSpace::default();
        ts.compute(&a, &a.angles(), &h);
        for mu in 0..a.n_theta() {
            let direct = a.derivative_state(mu).unwrap();
            assert!(direct.iter().zip(ts.derivative(mu)).all(|(x, y)| (x - y).norm() < 1e-14));
        }
    }

    #[test]
    fn zero_angle_expansion_keeps_state() {
        let spec = HubbardChainSpec::new(2, 1.0, 4.0).unwrap();
        let h = build_hubbard(&spec).unwrap();
        let pool = pool_hamiltonian(&h).unwrap();
        let mut a = Ansatz::new(4, spec.reference_index()).unwrap();
        let before = a.prepare();
        let cfg = AvqdsConfig::default().expand_config();
        let report = adaptive_expand(&mut a, &h, &pool, &cfg, Drive::RealTime, Segment::Time).unwrap();
        assert!(!report.added.is_empty());
        assert!(report.l2_after < cfg.l2_cut);
        assert_eq!(a.prepare(), before);
        assert_eq!(pool.label, PoolLabel::Hamiltonian);
    }

    #[test]
    fn expansion_noop_below_cut() {
        let h = parse_sum("1*Z0", 1).unwrap();
        let pool = OperatorPool::new(PoolLabel::SpinDyn, vec![parse_word("X0", 1).unwrap()]).unwrap();
        let mut a = Ansatz::new(1, 0).unwrap();
        let cfg = AvqdsConfig::default().expand_config();
        let report = adaptive_expand(&mut a, &h, &pool, &cfg, Drive::RealTime, Segment::Time).unwrap();
        assert!(report.added.is_empty());
        assert_eq!(a.n_theta(), 0);
    }

    #[test]
    fn exhausted_pool_is_reported() {
        let h = parse_sum("1*X0", 1).unwrap();
        let pool = OperatorPool::new(PoolLabel::SpinDyn, vec![parse_word("Z0", 1).unwrap()]).unwrap();
        let mut a = Ansatz::new(1, 0).unwrap();
        let cfg = AvqdsConfig::default().expand_config();
        let err = adaptive_expand(&mut a, &h, &pool, &cfg, Drive::RealTime, Segment::Time).unwrap_err();
        assert!(matches!(err, Error::PoolExhausted { .. }));
    }

    #[test]
    fn stationary_eigenstate() {
        let h = parse_sum("1*Z0 + 0.5*Z1", 2).unwrap();
        let pool = OperatorPool::new(PoolLabel::SpinDyn, vec![parse_word("X0", 2).unwrap()]).unwrap();
        let mut a = Ansatz::new(2, 0).unwrap();
        a.push_rotation(parse_word("Y0 X1", 2).unwrap(), 0.0, Segment::Time).unwrap();
        let mut prop = Propagation::new(a, &h, &pool, AvqdsConfig::default(), Drive::RealTime, Segment::Time).unwrap();
        prop.run(1.0, &[], |_, _| Ok(())).unwrap();
        assert_eq!(prop.ansatz().angles(), vec![0.0]);
        assert_eq!(prop.time(), 1.0);
    }

    #[test]
    fn diagonal_ground_needs_no_rotations() {
        let h = parse_sum("1*Z0 + 1*Z1", 2).unwrap();
        let pool = OperatorPool::new(PoolLabel::SpinGs, vec![parse_word("Y0", 2).unwrap()]).unwrap();
        let res = avqite_prepare(2, 0b11, &h, &pool, &AvqiteConfig::default()).unwrap();
        assert_eq!(res.ansatz.n_theta(), 0);
        assert_eq!(res.history.len(), 1);
        assert_eq!(res.energy, -2.0);
    }
}
