use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<FileRecord>,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }

    pub fn find(&self, path: &str) -> Option<&FileRecord> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes text outputs into one directory and remembers their hashes.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        self.write(name, text.as_bytes())
    }

    pub fn finish(mut self, config: &ScenarioConfig, error: Option<String>) -> std::io::Result<Manifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            status: if error.is_none() { "complete" } else { "partial" }.to_string(),
            error,
            files: self.files,
            config: config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| std::io::Error::other(e.to_string()))?;
        std::fs::write(self.root.join(MANIFEST_NAME), text)?;
        Ok(manifest)
    }
}

/// Tab-separated table with a `#`-prefixed header line.
pub struct Table {
    out: String,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        let mut out = String::from("# ");
        out.push_str(&columns.join("\t"));
        out.push('\n');
        Table { out }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        let cols: Vec<&str> = header.iter().map(String::as_str).collect();
        Self::new(&cols)
    }

    pub fn comment(&mut self, text: &str) {
        for line in text.lines() {
            self.out.push_str("# ");
            self.out.push_str(line);
            self.out.push('\n');
        }
    }

    pub fn row<I, T>(&mut self, cells: I)
    where
        I: IntoIterator<Item = T>,
        T: std::fmt::Display,
    {
        let mut first = true;
        for c in cells {
            if !first {
                self.out.push('\t');
            }
            let _ = write!(self.out, "{c}");
            first = false;
        }
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}
