use std::path::Path;

use crate::manifest::{sha256_hex, Manifest, Table};

const COLUMNS: &str = "\
fig2_gf_traces.tsv: t, the first six I components of trajectory (q=0, beta=0), infidelity, cnot, depth
fig3_spectrum_tmax*.tsv: omega, A_pade, A_dft, A_lehmann for each Green's-function truncation time
fig5_spin_resources.tsv: stage-two susceptibility traces at the first tau sample: group, p3, t, cnot, depth
fig6_chi3.tsv: chi(t, tau) matrix; first column tau, header row t
fig6_slice_tau.tsv: t, chi at the configured fixed tau
fig6_slice_t.tsv: tau, chi at the configured fixed t
fig6_2d.tsv: omega_t, omega_tau, re, im, abs, pole of the two-dimensional spectrum
";

struct Tsv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_tsv(path: &Path) -> Option<Tsv> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header = lines.next()?.strip_prefix("# ")?.split('\t').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect();
    Some(Tsv { header, rows })
}

fn column(t: &Tsv, name: &str) -> Option<usize> {
    t.header.iter().position(|h| h == name)
}

fn select(t: &Tsv, names: &[&str]) -> Option<String> {
    let idx: Vec<usize> = names.iter().map(|n| column(t, n)).collect::<Option<_>>()?;
    let mut out = Table::new(names);
    for r in &t.rows {
        out.row(idx.iter().map(|&i| r[i].as_str()));
    }
    Some(out.finish())
}

struct Bundle<'a> {
    src: &'a Path,
    manifest: &'a Manifest,
    files: Vec<(String, String)>,
    warnings: Vec<String>,
}

impl Bundle<'_> {
    fn input(&mut self, name: &str) -> Option<Tsv> {
        if self.manifest.find(name).is_none() {
            self.warnings.push(format!("missing input {name}"));
            return None;
        }
        let t = read_tsv(&self.src.join(name));
        if t.is_none() {
            self.warnings.push(format!("unreadable input {name}"));
        }
        t
    }

    fn first_available(&mut self, names: &[&str]) -> Option<(String, Tsv)> {
        for n in names {
            if self.manifest.find(n).is_some() {
                return self.input(n).map(|t| (n.to_string(), t));
            }
        }
        self.warnings.push(format!("missing input, tried {}", names.join(", ")));
        None
    }

    fn emit(&mut self, name: &str, body: Option<String>) {
        match body {
            Some(b) => self.files.push((name.to_string(), b)),
            None => self.warnings.push(format!("cannot build {name}: expected columns absent")),
        }
    }
}

fn fig2(b: &mut Bundle) {
    let Some(t) = b.input("gf_traj_q0_b0.tsv") else { return };
    let mut names: Vec<&str> = vec!["t"];
    names.extend(t.header.iter().filter(|h| h.starts_with("I_")).take(6).map(String::as_str));
    names.extend(["infidelity", "cnot", "depth"]);
    let body = select(&t, &names);
    b.emit("fig2_gf_traces.tsv", body);
}

fn fig3(b: &mut Bundle) {
    let names: Vec<String> = b
        .manifest
        .files
        .iter()
        .map(|f| f.path.clone())
        .filter(|p| p.starts_with("spectrum_tmax"))
        .collect();
    if names.is_empty() {
        b.warnings.push("missing input spectrum_tmax*.tsv".into());
    }
    for n in names {
        if let Some(t) = b.input(&n) {
            let body = select(&t, &["omega", "A_pade", "A_dft", "A_lehmann"]);
            b.emit(&format!("fig3_{n}"), body);
        }
    }
}

fn fig5(b: &mut Bundle) {
    let Some(t) = b.input("chi3_traces.tsv") else { return };
    let (Some(stage), Some(tau)) = (column(&t, "stage"), column(&t, "tau")) else {
        b.emit("fig5_spin_resources.tsv", None);
        return;
    };
    let first = t.rows.iter().find(|r| r[stage] == "2").map(|r| r[tau].clone());
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .filter(|r| r[stage] == "2" && Some(&r[tau]) == first.as_ref())
        .cloned()
        .collect();
    let filtered = Tsv {
        header: t.header.clone(),
        rows,
    };
    let body = select(&filtered, &["group", "p3", "t", "cnot", "depth"]);
    b.emit("fig5_spin_resources.tsv", body);
}

fn closest(values: &[f64], x: f64) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn fig6(b: &mut Bundle) {
    let slice_tau = b.manifest.config.grids.slice_tau;
    let slice_t = b.manifest.config.grids.slice_t;
    if let Some((name, t)) = b.first_available(&["chi3_grid.tsv", "chi3_exact.tsv"]) {
        let text = std::fs::read_to_string(b.src.join(&name)).unwrap_or_default();
        b.files.push(("fig6_chi3.tsv".into(), text));
        let ts: Vec<f64> = t.header[1..].iter().filter_map(|s| s.parse().ok()).collect();
        let taus: Vec<f64> = t.rows.iter().filter_map(|r| r[0].parse().ok()).collect();
        if ts.is_empty() || taus.is_empty() {
            b.emit("fig6_slice_tau.tsv", None);
            return;
        }
        let a = closest(&taus, slice_tau);
        let mut s = Table::new(&["t", "chi"]);
        s.comment(&format!("tau = {}", taus[a]));
        for (i, tv) in ts.iter().enumerate() {
            s.row([tv.to_string(), t.rows[a][i + 1].clone()]);
        }
        b.files.push(("fig6_slice_tau.tsv".into(), s.finish()));
        let i = closest(&ts, slice_t);
        let mut s = Table::new(&["tau", "chi"]);
        s.comment(&format!("t = {}", ts[i]));
        for (r, tau) in t.rows.iter().zip(&taus) {
            s.row([tau.to_string(), r[i + 1].clone()]);
        }
        b.files.push(("fig6_slice_t.tsv".into(), s.finish()));
    }
    if let Some((name, _)) = b.first_available(&["chi3_2d.tsv", "chi3_exact_2d.tsv"]) {
        let text = std::fs::read_to_string(b.src.join(&name)).unwrap_or_default();
        b.files.push(("fig6_2d.tsv".into(), text));
    }
}

/// Builds plot-ready bundles under `<output_dir>/plotdata`; returns the warnings raised.
pub fn emit(manifest_path: &Path) -> std::io::Result<Vec<String>> {
    let manifest = Manifest::load(manifest_path)?;
    let src = manifest_path.parent().unwrap_or(Path::new("."));
    let mut b = Bundle {
        src,
        manifest: &manifest,
        files: Vec::new(),
        warnings: Vec::new(),
    };
    if manifest.files.is_empty() {
        b.warnings.push("manifest lists no files; bundle is empty".into());
    } else {
        fig2(&mut b);
        fig3(&mut b);
        fig5(&mut b);
        fig6(&mut b);
    }
    if !manifest.is_complete() {
        b.warnings.push(format!(
            "source run is partial: {}",
            manifest.error.as_deref().unwrap_or("no error recorded")
        ));
    }
    let dir = src.join("plotdata");
    std::fs::create_dir_all(&dir)?;
    let mut index = Table::new(&["file", "sha256"]);
    for (name, body) in &b.files {
        std::fs::write(dir.join(name), body)?;
        index.row([name.clone(), sha256_hex(body.as_bytes())]);
    }
    for w in &b.warnings {
        index.comment(&format!("warning: {w}"));
    }
    std::fs::write(dir.join("index.tsv"), index.finish())?;
    std::fs::write(dir.join("columns.txt"), COLUMNS)?;
    Ok(b.warnings)
}
