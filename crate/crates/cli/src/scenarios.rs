use avq_core::error::Error as CoreError;
use avq_core::greens::{lattice_momenta, momentum_gf, run_greens_function, GfResult, GfRun};
use avq_core::models::{
    build_hubbard, build_spin_chain, jw_annihilation, pool_hamiltonian, pool_size_formula, pool_spin_dyn,
    pool_spin_gs, pool_uccsd_qubit, HubbardChainSpec, OperatorPool, SpinChainSpec,
};
use avq_core::nonlinear::{
    chi3_2d_spectrum, chi3_exact, chi3_terms, group_terms, magnetization_elements, preflight, run_chi3, Chi3Config,
    Chi3Grid, Chi3Group, Chi3GroupResult, Spectrum2d, TransformOrder,
};
use avq_core::oracle::{diagonalize, diagonalize_in_subspace, EigenSystem};
use avq_core::pauli::PauliSum;
use avq_core::resources::{circuit_depth, cnot_count};
use avq_core::series::uniform_mesh;
use avq_core::spectral::{
    dft_spectrum, frequency_grid, lehmann_decomposition, pade_spectrum, spectral_function, LehmannData,
};
use avq_core::statevector::Propagator;
use avq_core::variational::avqite_prepare;
use avq_core::ansatz::Ansatz;
use num_complex::Complex64;

use crate::config::{Scenario, ScenarioConfig};
use crate::manifest::{OutputDir, Table};

/// Spacing of the uniform mesh the Green's function is resampled onto.
const GF_MESH_STEP: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{module}: {source}")]
    Compute {
        module: &'static str,
        source: CoreError,
    },
}

trait Context<T> {
    fn module(self, module: &'static str) -> Result<T, RunError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn module(self, module: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Compute { module, source })
    }
}

pub fn run(cfg: &ScenarioConfig, out: &mut OutputDir) -> Result<(), RunError> {
    match cfg.scenario {
        Scenario::PoolsAudit => {
            let table = pools_table(cfg)?;
            out.write_text("pools.tsv", &table)?;
            Ok(())
        }
        Scenario::HubbardGf => hubbard_gf(cfg, out),
        Scenario::SpinChi3 => spin_chi3(cfg, out),
        Scenario::SpectraOnly => spectra_only(cfg, out),
    }
}

pub fn pools_table(cfg: &ScenarioConfig) -> Result<String, RunError> {
    let mut t = Table::new(&["pool", "qubits", "size", "formula"]);
    let mut push = |pool: &OperatorPool, qubits: usize| {
        let formula = pool_size_formula(pool.label, qubits)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into());
        t.row([pool.label.to_string(), qubits.to_string(), pool.len().to_string(), formula]);
    };
    for &q in &cfg.pools.uccsd_qubits {
        push(&pool_uccsd_qubit(q).module("models")?, q);
    }
    for &sites in &cfg.pools.hubbard_sites {
        let spec = HubbardChainSpec::new(sites, cfg.hubbard.hopping, cfg.hubbard.interaction).module("models")?;
        let h = build_hubbard(&spec).module("models")?;
        push(&pool_hamiltonian(&h).module("models")?, spec.qubit_count());
    }
    for &q in &cfg.pools.spin_qubits {
        push(&pool_spin_gs(q).module("models")?, q);
        push(&pool_spin_dyn(q).module("models")?, q);
    }
    Ok(t.finish())
}

struct HubbardSystem {
    spec: HubbardChainSpec,
    h: PauliSum,
    eig: EigenSystem,
}

impl HubbardSystem {
    fn new(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let s = &cfg.hubbard;
        let spec = HubbardChainSpec::new(s.sites, s.hopping, s.interaction).module("models")?;
        let h = build_hubbard(&spec).module("models")?;
        let eig = diagonalize(&h).module("exact_oracle")?;
        Ok(HubbardSystem { spec, h, eig })
    }

    fn up_orbitals(&self) -> Vec<usize> {
        (0..self.spec.sites).map(|s| self.spec.orbital(s, false)).collect()
    }

    fn lehmann(&self) -> Result<LehmannData, RunError> {
        let cs = self
            .up_orbitals()
            .iter()
            .map(|&p| jw_annihilation(p, self.spec.qubit_count()))
            .collect::<Result<Vec<_>, _>>()
            .module("models")?;
        lehmann_decomposition(&self.eig, &cs, 0.0).module("spectral_analysis")
    }
}

fn ground_table(out: &mut OutputDir, ansatz: &Ansatz, h: &PauliSum, eig: &EigenSystem) -> Result<(), RunError> {
    let psi = ansatz.prepare();
    let energy = psi.expectation(h).module("statevector")?;
    let infidelity = (1.0 - psi.fidelity(&eig.ground_state()).module("statevector")?).max(0.0);
    let mut t = Table::new(&["energy", "exact_energy", "infidelity", "n_theta", "cnot", "depth"]);
    t.row([
        energy.to_string(),
        eig.eigenvalues()[0].to_string(),
        infidelity.to_string(),
        ansatz.n_theta().to_string(),
        cnot_count(ansatz).to_string(),
        circuit_depth(ansatz).to_string(),
    ]);
    t.comment(&format!("hamiltonian sha256 {}", eig.hamiltonian_hash()));
    out.write_text("ground.tsv", &t.finish())?;
    let mut bytes = Vec::new();
    psi.write_binary(&mut bytes)?;
    out.write("ground_state.bin", &bytes)?;
    Ok(())
}

fn trajectory_table(run: &GfRun, k: usize) -> String {
    let traj = &run.trajectories[k];
    let mut header = vec!["t".to_string()];
    for p in &run.orbitals {
        for a in 0..2 {
            header.push(format!("I_p{p}_a{a}"));
        }
    }
    for h in ["shell_mismatch", "infidelity", "cnot", "depth", "n_theta", "l2", "energy"] {
        header.push(h.to_string());
    }
    let mut t = Table::with_header(header);
    for s in &traj.samples {
        let mismatch = s.direct.iter().zip(&s.shell).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut row: Vec<String> = vec![s.t.to_string()];
        row.extend(s.direct.iter().map(|v| v.to_string()));
        row.push(mismatch.to_string());
        row.push(s.infidelity.map(|f| f.to_string()).unwrap_or_else(|| "nan".into()));
        row.push(s.cnots.to_string());
        row.push(s.depth.to_string());
        row.push(s.n_theta.to_string());
        row.push(s.l2.to_string());
        row.push(s.energy.to_string());
        t.row(row);
    }
    t.finish()
}

fn gf_tables(result: &GfResult) -> (String, String) {
    let m = result.orbitals.len();
    let mut header = vec!["t".to_string()];
    for p in 0..m {
        for q in 0..m {
            header.push(format!("re_G_{p}_{q}"));
            header.push(format!("im_G_{p}_{q}"));
        }
    }
    let mut real = Table::with_header(header);
    for (n, t) in result.mesh.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for p in 0..m {
            for q in 0..m {
                row.push(result.g[p][q][n].re.to_string());
                row.push(result.g[p][q][n].im.to_string());
            }
        }
        real.row(row);
    }
    let ks = lattice_momenta(m);
    let gk = momentum_gf(result, &ks);
    let mut header = vec!["t".to_string()];
    for k in &ks {
        header.push(format!("re_G_k{k:.4}"));
        header.push(format!("im_G_k{k:.4}"));
    }
    let mut mom = Table::with_header(header);
    for (n, t) in result.mesh.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for g in &gk {
            row.push(g[n].re.to_string());
            row.push(g[n].im.to_string());
        }
        mom.row(row);
    }
    (real.finish(), mom.finish())
}

fn spectra_files(
    cfg: &ScenarioConfig,
    out: &mut OutputDir,
    mesh: &[f64],
    gk0: &[Complex64],
    lehmann: &LehmannData,
) -> Result<(), RunError> {
    let g = &cfg.grids;
    let omega = frequency_grid(g.omega_min, g.omega_max, g.omega_step).module("spectral_analysis")?;
    let exact: Vec<_> = omega.iter().map(|&w| lehmann.green(w, g.eps)).collect();
    let exact = spectral_function(&omega, &exact, g.eps);
    for &tmax in &g.spectra_t_max {
        let n = mesh.iter().take_while(|&&t| t <= tmax + 1e-9).count();
        // The fit wants an even number of intervals.
        let n = if n % 2 == 0 { n.saturating_sub(1) } else { n };
        let pade = pade_spectrum(&mesh[..n], &gk0[..n], &omega, g.eps).module("spectral_analysis")?;
        let dft = dft_spectrum(&mesh[..n], &gk0[..n], &omega, g.eps).module("spectral_analysis")?;
        let mut t = Table::new(&["omega", "A_pade", "A_dft", "A_lehmann", "pade_pole"]);
        t.comment(&format!("k = 0, t_max = {tmax}, eps = {}", g.eps));
        for i in 0..omega.len() {
            t.row([
                omega[i].to_string(),
                pade.a[i].to_string(),
                dft.a[i].to_string(),
                exact.a[i].to_string(),
                u8::from(pade.pole[i]).to_string(),
            ]);
        }
        out.write_text(&format!("spectrum_tmax{tmax}.tsv"), &t.finish())?;
    }
    let mut t = Table::new(&["kind", "delta_e", "weight"]);
    for tr in lehmann.transitions(avq_core::spectral::TRANSITION_CUTOFF) {
        t.row([
            if tr.addition { "addition" } else { "removal" }.to_string(),
            tr.delta_e.to_string(),
            tr.weight.to_string(),
        ]);
    }
    t.comment(&format!("total weight {}", lehmann.total_weight()));
    out.write_text("lehmann_k0.tsv", &t.finish())?;
    Ok(())
}

fn hubbard_gf(cfg: &ScenarioConfig, out: &mut OutputDir) -> Result<(), RunError> {
    let sys = HubbardSystem::new(cfg)?;
    let nq = sys.spec.qubit_count();
    let ground = avqite_prepare(
        nq,
        sys.spec.reference_index(),
        &sys.h,
        &pool_uccsd_qubit(nq).module("models")?,
        &cfg.avqite(),
    )
    .module("adaptive_variational")?
    .ansatz;
    ground_table(out, &ground, &sys.h, &sys.eig)?;
    let reference = if cfg.oracle.reference_infidelity {
        Some(Propagator::new(&sys.h).module("statevector")?)
    } else {
        None
    };
    let pool = pool_hamiltonian(&sys.h).module("models")?;
    let run = run_greens_function(
        &sys.h,
        &ground,
        &pool,
        &sys.up_orbitals(),
        cfg.grids.t_max,
        &cfg.avqds,
        reference.as_ref(),
    )
    .module("greens_function")?;
    for k in 0..run.trajectories.len() {
        out.write_text(&format!("gf_traj_q{}_b{}.tsv", k / 2, k % 2), &trajectory_table(&run, k))?;
    }
    let result = GfResult::from_run(&run).module("greens_function")?;
    let (real, mom) = gf_tables(&result);
    out.write_text("gf_realspace.tsv", &real)?;
    out.write_text("gf_momentum.tsv", &mom)?;
    let gk0 = momentum_gf(&result, &[0.0]).remove(0);
    spectra_files(cfg, out, &result.mesh, &gk0, &sys.lehmann()?)
}

struct SpinSystem {
    spec: SpinChainSpec,
    h: PauliSum,
    eig: EigenSystem,
}

impl SpinSystem {
    fn new(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let s = &cfg.spin;
        let spec = SpinChainSpec::spin_one(s.sites, s.exchange, s.dm).module("models")?;
        let h = build_spin_chain(&spec).module("models")?;
        let eig = diagonalize_in_subspace(&h, &spec.encoding().encoded_indices(spec.sites)).module("exact_oracle")?;
        Ok(SpinSystem { spec, h, eig })
    }

    fn chi3_config(&self, cfg: &ScenarioConfig) -> Chi3Config {
        let g = &cfg.grids;
        Chi3Config {
            avqds: cfg.avqds,
            tau_max: g.tau_max,
            dtau: g.dtau,
            t_max: g.chi3_t_max,
            mesh_points: g.mesh_points,
            simplify: true,
            track_fidelity: cfg.oracle.reference_infidelity,
        }
    }
}

fn grid_table(grid: &Chi3Grid) -> String {
    let mut header = vec!["tau\\t".to_string()];
    header.extend(grid.t.iter().map(|t| t.to_string()));
    let mut table = Table::with_header(header);
    for (a, tau) in grid.tau.iter().enumerate() {
        let mut row = vec![tau.to_string()];
        row.extend(grid.values.row(a).iter().map(|v| v.to_string()));
        table.row(row);
    }
    table.finish()
}

fn spectrum2d_table(s: &Spectrum2d) -> String {
    let mut t = Table::new(&["omega_t", "omega_tau", "re", "im", "abs", "pole"]);
    for (b, wtau) in s.omega_tau.iter().enumerate() {
        for (a, wt) in s.omega_t.iter().enumerate() {
            let v = s.values[(b, a)];
            t.row([
                wt.to_string(),
                wtau.to_string(),
                v.re.to_string(),
                v.im.to_string(),
                v.norm().to_string(),
                u8::from(s.pole[(b, a)]).to_string(),
            ]);
        }
    }
    t.finish()
}

fn peaks_table(s: &Spectrum2d) -> String {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = Table::new(&["omega_t", "omega_tau", "f_t", "f_tau", "abs"]);
    for (wt, wtau, mag) in s.peaks() {
        t.row([wt, wtau, wt / two_pi, wtau / two_pi, mag]);
    }
    t.finish()
}

fn levels_table(eig: &EigenSystem) -> String {
    let e = eig.eigenvalues();
    let mut t = Table::new(&["index", "energy", "gap"]);
    for (i, v) in e.iter().enumerate() {
        t.row([i.to_string(), v.to_string(), (v - e[0]).to_string()]);
    }
    if e.len() > 1 {
        let w = e[1] - e[0];
        t.comment(&format!("omega_af = {w} (angular), {} (cyclic)", w / (2.0 * std::f64::consts::PI)));
    }
    t.finish()
}

fn exact_chi3(cfg: &ScenarioConfig, sys: &SpinSystem, out: &mut OutputDir) -> Result<Chi3Grid, RunError> {
    let c3 = sys.chi3_config(cfg);
    let mz = magnetization_elements(&sys.eig, &sys.spec).module("nonlinear_response")?;
    let grid = chi3_exact(&sys.eig, &mz, sys.spec.sites, &c3.t_mesh(), &c3.tau_mesh());
    out.write_text("chi3_exact.tsv", &grid_table(&grid))?;
    let spectrum = spectrum_2d(cfg, &grid)?;
    out.write_text("chi3_exact_2d.tsv", &spectrum2d_table(&spectrum))?;
    out.write_text("chi3_exact_2d_peaks.tsv", &peaks_table(&spectrum))?;
    Ok(grid)
}

fn spectrum_2d(cfg: &ScenarioConfig, grid: &Chi3Grid) -> Result<Spectrum2d, RunError> {
    let g = &cfg.grids;
    let om = frequency_grid(g.omega2d_min, g.omega2d_max, g.omega2d_step).module("spectral_analysis")?;
    chi3_2d_spectrum(grid, &om, &om, g.eps2d, g.eps2d, TransformOrder::TFirst).module("nonlinear_response")
}

fn traces_table(groups: &[Chi3Group], results: &[Chi3GroupResult]) -> String {
    let mut t = Table::new(&["group", "p3", "stage", "tau", "t", "cnot", "depth", "n_theta"]);
    for (gi, (g, r)) in groups.iter().zip(results).enumerate() {
        for s in &r.stage1 {
            for rec in &s.resources.records {
                t.row([
                    gi.to_string(),
                    "-".into(),
                    "1".into(),
                    s.tau.to_string(),
                    rec.time.to_string(),
                    rec.cnot_count.to_string(),
                    rec.depth.to_string(),
                    rec.n_theta.to_string(),
                ]);
            }
        }
        for ((p3, _), runs) in g.branches.iter().zip(&r.branches) {
            for s in runs {
                for rec in &s.resources.records {
                    t.row([
                        gi.to_string(),
                        p3.to_string(),
                        "2".into(),
                        s.tau.to_string(),
                        rec.time.to_string(),
                        rec.cnot_count.to_string(),
                        rec.depth.to_string(),
                        rec.n_theta.to_string(),
                    ]);
                }
            }
        }
    }
    t.finish()
}

fn fidelity_table(groups: &[Chi3Group], results: &[Chi3GroupResult]) -> String {
    let mut t = Table::new(&["group", "p3", "tau", "steps", "min_fidelity", "readout_mismatch"]);
    for (gi, (g, r)) in groups.iter().zip(results).enumerate() {
        for ((p3, _), runs) in g.branches.iter().zip(&r.branches) {
            for s in runs {
                t.row([
                    gi.to_string(),
                    p3.to_string(),
                    s.tau.to_string(),
                    s.steps.to_string(),
                    s.min_fidelity.map(|f| f.to_string()).unwrap_or_else(|| "nan".into()),
                    s.max_readout_mismatch.to_string(),
                ]);
            }
        }
    }
    t.finish()
}

fn spin_chi3(cfg: &ScenarioConfig, out: &mut OutputDir) -> Result<(), RunError> {
    let sys = SpinSystem::new(cfg)?;
    out.write_text("levels.tsv", &levels_table(&sys.eig))?;
    let exact = if cfg.oracle.exact_grid {
        Some(exact_chi3(cfg, &sys, out)?)
    } else {
        None
    };
    if !cfg.oracle.variational {
        return Ok(());
    }
    let nq = sys.spec.qubit_count();
    let ground = avqite_prepare(
        nq,
        sys.spec.reference_index(),
        &sys.h,
        &pool_spin_gs(nq).module("models")?,
        &cfg.avqite(),
    )
    .module("adaptive_variational")?
    .ansatz;
    ground_table(out, &ground, &sys.h, &sys.eig)?;
    let pool = pool_spin_dyn(nq).module("models")?;
    let terms = chi3_terms(&sys.spec).module("nonlinear_response")?;
    let groups = group_terms(&terms).module("nonlinear_response")?;
    let c3 = sys.chi3_config(cfg);
    let mut probe = c3;
    probe.avqds.continue_when_exhausted = true;
    let pre = preflight(&sys.h, &ground, &pool, &groups, &probe).module("nonlinear_response")?;
    let mut t = Table::new(&["group", "stage1_l2", "p3", "stage2_l2", "within_cut"]);
    for e in &pre {
        for (p3, l2) in &e.stage2_l2 {
            let ok = e.stage1_l2 < c3.avqds.l2_cut && *l2 < c3.avqds.l2_cut;
            t.row([
                e.group.to_string(),
                e.stage1_l2.to_string(),
                p3.to_string(),
                l2.to_string(),
                u8::from(ok).to_string(),
            ]);
        }
    }
    out.write_text("chi3_preflight.tsv", &t.finish())?;
    let reference = if c3.track_fidelity {
        Some(Propagator::new(&sys.h.widen(nq + 1).module("pauli_algebra")?).module("statevector")?)
    } else {
        None
    };
    let (grid, groups, results) =
        run_chi3(&sys.h, &ground, &pool, &terms, &c3, reference.as_ref()).module("nonlinear_response")?;
    out.write_text("chi3_grid.tsv", &grid_table(&grid))?;
    out.write_text("chi3_traces.tsv", &traces_table(&groups, &results))?;
    out.write_text("chi3_fidelity.tsv", &fidelity_table(&groups, &results))?;
    let spectrum = spectrum_2d(cfg, &grid)?;
    out.write_text("chi3_2d.tsv", &spectrum2d_table(&spectrum))?;
    out.write_text("chi3_2d_peaks.tsv", &peaks_table(&spectrum))?;
    if let Some(exact) = exact {
        let err = grid.relative_l2_error(&exact).module("nonlinear_response")?;
        let mut t = Table::new(&["relative_l2_error"]);
        t.row([err]);
        out.write_text("chi3_error.tsv", &t.finish())?;
    }
    Ok(())
}

fn spectra_only(cfg: &ScenarioConfig, out: &mut OutputDir) -> Result<(), RunError> {
    let sys = HubbardSystem::new(cfg)?;
    let lehmann = sys.lehmann()?;
    let t_end = cfg.grids.spectra_t_max.iter().copied().fold(0.0, f64::max);
    let mesh = uniform_mesh(t_end, GF_MESH_STEP).module("spectral_analysis")?;
    let gk0: Vec<_> = mesh.iter().map(|&t| lehmann.green_time(t)).collect();
    spectra_files(cfg, out, &mesh, &gk0, &lehmann)?;
    let spin = SpinSystem::new(cfg)?;
    out.write_text("levels.tsv", &levels_table(&spin.eig))?;
    if cfg.oracle.exact_grid {
        exact_chi3(cfg, &spin, out)?;
    }
    Ok(())
}
