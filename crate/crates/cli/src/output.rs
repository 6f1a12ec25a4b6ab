//! Staged outputs: everything a command produces is held in memory and only
//! written, file by file through a temp path and rename, once the command
//! has succeeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use demoscope::util::{atomic_write, sha256_hex};
use demoscope::Result;

use crate::manifest::RunManifest;

pub const PROVENANCE_FILE: &str = "PROVENANCE";

/// `demoscope <version> | command=<c> | config=sha256:<h> | seed=<s>`. The
/// hash covers the effective manifest minus output directory and thread
/// count, neither of which changes results.
pub fn provenance_line(command: &str, m: &RunManifest, seed: u64) -> Result<String> {
    let mut hashed = m.clone();
    hashed.out = None;
    hashed.jobs = None;
    hashed.seed = Some(seed);
    let h = sha256_hex(serde_json::to_string(&hashed)?.as_bytes());
    Ok(format!("demoscope {} | command={command} | config=sha256:{h} | seed={seed}", env!("CARGO_PKG_VERSION")))
}

pub struct Outputs {
    dir: PathBuf,
    line: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path, line: String) -> Self {
        Self { dir: dir.to_path_buf(), line, files: Vec::new() }
    }

    pub fn line(&self) -> &str {
        &self.line
    }

    /// CSV or JSON-lines text; the provenance line is appended as a `#`
    /// comment.
    pub fn text(&mut self, name: &str, mut body: String) {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str(&format!("# {}\n", self.line));
        self.files.push((name.to_string(), body.into_bytes()));
    }

    pub fn markdown(&mut self, name: &str, mut body: String) {
        if !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str(&format!("\n<!-- {} -->\n", self.line));
        self.files.push((name.to_string(), body.into_bytes()));
    }

    /// Binary or strict-JSON output; provenance goes to the PROVENANCE file only.
    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every file, then merges their entries into PROVENANCE.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        if self.files.is_empty() {
            return Ok(written);
        }
        for (name, bytes) in &self.files {
            let p = self.dir.join(name);
            atomic_write(&p, bytes)?;
            written.push(p);
        }
        let prov_path = self.dir.join(PROVENANCE_FILE);
        let mut entries: BTreeMap<String, String> = match fs::read_to_string(&prov_path) {
            Ok(text) => text
                .lines()
                .filter_map(|l| l.split_once('\t').map(|(a, b)| (a.to_string(), b.to_string())))
                .collect(),
            Err(_) => BTreeMap::new(),
        };
        for (name, _) in &self.files {
            entries.insert(name.clone(), self.line.clone());
        }
        if !entries.is_empty() {
            let body: String = entries.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
            atomic_write(&prov_path, body.as_bytes())?;
        }
        Ok(written)
    }
}
