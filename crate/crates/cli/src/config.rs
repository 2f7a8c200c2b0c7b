use std::path::{Path, PathBuf};

use avq_core::variational::{AvqdsConfig, AvqiteConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    HubbardGf,
    SpinChi3,
    PoolsAudit,
    SpectraOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubbardSection {
    pub sites: usize,
    pub hopping: f64,
    pub interaction: f64,
}

impl Default for HubbardSection {
    fn default() -> Self {
        HubbardSection {
            sites: 4,
            hopping: 1.0,
            interaction: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinSection {
    pub sites: usize,
    pub exchange: f64,
    pub dm: f64,
}

impl Default for SpinSection {
    fn default() -> Self {
        SpinSection {
            sites: 2,
            exchange: 1.0,
            dm: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Green's-function propagation time.
    pub t_max: f64,
    /// Truncations of the Green's-function series used for spectra.
    pub spectra_t_max: Vec<f64>,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_step: f64,
    pub eps: f64,
    pub tau_max: f64,
    pub dtau: f64,
    pub chi3_t_max: f64,
    pub mesh_points: usize,
    pub omega2d_min: f64,
    pub omega2d_max: f64,
    pub omega2d_step: f64,
    pub eps2d: f64,
    /// Fixed-`tau` and fixed-`t` slices of the susceptibility grid.
    pub slice_tau: f64,
    pub slice_t: f64,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            t_max: 10.0,
            spectra_t_max: vec![4.0, 7.0, 10.0],
            omega_min: -6.0,
            omega_max: 6.0,
            omega_step: 0.01,
            eps: 0.3,
            tau_max: 40.0,
            dtau: 0.5,
            chi3_t_max: 40.0,
            mesh_points: 401,
            omega2d_min: -2.0,
            omega2d_max: 2.0,
            omega2d_step: 0.02,
            eps2d: 0.1,
            slice_tau: 0.0,
            slice_t: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Oracle {
    /// Track infidelity against exact evolution.
    pub reference_infidelity: bool,
    /// Write the exact susceptibility grid and its spectrum.
    pub exact_grid: bool,
    /// Run the variational susceptibility pipeline.
    pub variational: bool,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle {
            reference_infidelity: true,
            exact_grid: true,
            variational: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolsSection {
    pub uccsd_qubits: Vec<usize>,
    pub hubbard_sites: Vec<usize>,
    pub spin_qubits: Vec<usize>,
}

impl Default for PoolsSection {
    fn default() -> Self {
        PoolsSection {
            uccsd_qubits: vec![8, 12],
            hubbard_sites: vec![4, 6],
            spin_qubits: vec![4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "always")]
    pub deterministic: bool,
    /// Required for Hubbard chains longer than four sites.
    #[serde(default)]
    pub long_run: bool,
    #[serde(default)]
    pub hubbard: HubbardSection,
    #[serde(default)]
    pub spin: SpinSection,
    #[serde(default)]
    pub avqds: AvqdsConfig,
    /// Ground-state settings; the model preset when absent.
    #[serde(default)]
    pub avqite: Option<AvqiteConfig>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub oracle: Oracle,
    #[serde(default)]
    pub pools: PoolsSection,
}

fn always() -> bool {
    true
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: PathBuf::new(),
            source,
        })?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Materializes every default so the manifest records the exact settings used.
    pub fn resolved(mut self) -> Self {
        if self.avqite.is_none() {
            self.avqite = Some(match self.scenario {
                Scenario::SpinChi3 => AvqiteConfig::spin(),
                _ => AvqiteConfig::hubbard(),
            });
        }
        self
    }

    pub fn avqite(&self) -> AvqiteConfig {
        self.avqite.unwrap_or_else(AvqiteConfig::hubbard)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.deterministic {
            return Err(invalid("deterministic = false is not supported"));
        }
        self.avqds.validate().map_err(|e| invalid(format!("avqds: {e}")))?;
        let g = &self.grids;
        match self.scenario {
            Scenario::HubbardGf | Scenario::SpectraOnly => {
                let h = &self.hubbard;
                if h.sites < 2 {
                    return Err(invalid("hubbard.sites must be at least 2"));
                }
                if h.sites > 4 && !self.long_run {
                    return Err(invalid(format!(
                        "hubbard.sites = {} needs long_run = true (hours of compute)",
                        h.sites
                    )));
                }
                positive("hubbard.hopping", h.hopping)?;
                if !(h.interaction >= 0.0) {
                    return Err(invalid("hubbard.interaction must be non-negative"));
                }
                positive("grids.t_max", g.t_max)?;
                positive("grids.omega_step", g.omega_step)?;
                positive("grids.eps", g.eps)?;
                if !(g.omega_max > g.omega_min) {
                    return Err(invalid("grids.omega_max must exceed grids.omega_min"));
                }
                if g.spectra_t_max.is_empty() {
                    return Err(invalid("grids.spectra_t_max must list at least one time"));
                }
                for &t in &g.spectra_t_max {
                    positive("grids.spectra_t_max entry", t)?;
                    if self.scenario == Scenario::HubbardGf && t > g.t_max + 1e-12 {
                        return Err(invalid(format!("spectra_t_max entry {t} exceeds grids.t_max")));
                    }
                }
            }
            _ => {}
        }
        match self.scenario {
            Scenario::SpinChi3 | Scenario::SpectraOnly => {
                let s = &self.spin;
                if s.sites < 1 {
                    return Err(invalid("spin.sites must be at least 1"));
                }
                positive("spin.exchange", s.exchange)?;
                positive("grids.tau_max", g.tau_max)?;
                positive("grids.dtau", g.dtau)?;
                positive("grids.chi3_t_max", g.chi3_t_max)?;
                positive("grids.omega2d_step", g.omega2d_step)?;
                positive("grids.eps2d", g.eps2d)?;
                if g.mesh_points < 2 {
                    return Err(invalid("grids.mesh_points must be at least 2"));
                }
                if !(g.omega2d_max > g.omega2d_min) {
                    return Err(invalid("grids.omega2d_max must exceed grids.omega2d_min"));
                }
            }
            _ => {}
        }
        if self.scenario == Scenario::PoolsAudit
            && self.pools.uccsd_qubits.is_empty()
            && self.pools.hubbard_sites.is_empty()
            && self.pools.spin_qubits.is_empty()
        {
            return Err(invalid("pools section lists nothing to audit"));
        }
        Ok(())
    }
}
