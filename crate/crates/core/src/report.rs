//! Versioned report documents.
//!
//! A report has three parts. `provenance` records how it was produced (input
//! hash, seed, tolerances, versions). `result` holds only seed-independent
//! values, so two runs on the same input agree on it byte for byte.
//! `diagnostics` holds residuals, each with the tolerance it was tested
//! against.

use serde::Serialize;
use serde_json::Value;
use sha2::{ Digest, Sha256 };

use crate::connection::format::FORMAT_VERSION;
use crate::linalg::RANK_RTOL;

pub const REPORT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String { Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect() }

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Versions {
    pub pmpo: &'static str,
    pub report: u32,
    pub connection_format: u32,
}

impl Default for Versions {
    fn default() -> Self { Self { pmpo: env!("CARGO_PKG_VERSION"), report: REPORT_VERSION, connection_format: FORMAT_VERSION } }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub input: String,
    pub input_sha256: String,
    pub seed: u64,
    pub tol: f64,
    pub rank_rtol: f64,
    pub max_depth: usize,
    pub versions: Versions,
}

impl Provenance {
    pub fn new(command: &str, input: &str, input_bytes: &[u8], seed: u64, tol: f64, max_depth: usize) -> Self {
        Self {
            command: command.to_string(),
            input: input.to_string(),
            input_sha256: sha256_hex(input_bytes),
            seed,
            tol,
            rank_rtol: RANK_RTOL,
            max_depth,
            versions: Versions::default(),
        }
    }
}

/// One residual compared against its tolerance.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self { name: name.into(), value, tol, pass: value < tol }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub result: Value,
    pub diagnostics: Vec<Check>,
    pub pass: bool,
    #[serde(skip)]
    pub table: String,
}

impl Report {
    /// `pass` is the conjunction of `result_pass` and every diagnostic.
    pub fn new(provenance: Provenance, result: Value, diagnostics: Vec<Check>, result_pass: bool, table: String) -> Self {
        let pass = result_pass && diagnostics.iter().all(|c| c.pass);
        Self { provenance, result, diagnostics, pass, table }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// The seed-independent part as canonical JSON.
    pub fn result_json(&self) -> String { serde_json::to_string(&self.result).expect("result serializes") }

    pub fn to_table(&self) -> String {
        let p = &self.provenance;
        let mut out = String::new();
        out.push_str(&format!("# {} on {}\n", p.command, p.input));
        out.push_str(&format!("# sha256 {}\n", p.input_sha256));
        out.push_str(&format!("# seed {}  tol {:e}  rank_rtol {:e}  max_depth {}  pmpo {}\n", p.seed, p.tol, p.rank_rtol, p.max_depth, p.versions.pmpo));
        out.push_str(&self.table);
        if !self.diagnostics.is_empty() {
            let w = self.diagnostics.iter().map(|c| c.name.len()).max().unwrap_or(0);
            out.push_str("\ncheck\n");
            for c in &self.diagnostics {
                let tag = if c.pass { "ok" } else { "FAIL" };
                out.push_str(&format!("  {:w$}  {:.3e} < {:.0e}  {tag}\n", c.name, c.value, c.tol));
            }
        }
        out.push_str(if self.pass { "PASS\n" } else { "FAIL\n" });
        out
    }
}

/// Plain fixed-width table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().enumerate().map(|(i, c)| format!("{:>1$}", c, w[i])).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}
