//! Command-line front end. Every command except `builtin` emits a [`Report`].
//!
//! Exit status: 0 when every check passes, 1 on a numeric failure (including
//! depth exceeded), 2 on unreadable or invalid input.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{ ArgAction, Parser, Subcommand, ValueEnum };
use serde::Serialize;
use serde_json::{ json, Value };
use thiserror::Error;

use crate::connection::builders::{ build_cyclic_group, build_dynkin, build_trivial };
use crate::connection::format::{ fmt_f64, from_json, to_json, FormatError };
use crate::connection::{ check_biunitarity, ConnError, Model };
use crate::decomp::{ discover_irreducibles, sector_statistics, DecompError, Decomposition, DEFAULT_MAX_DEPTH };
use crate::graphs::validate_square;
use crate::linalg::{ SpMat, ONE, RANK_RTOL };
use crate::mpo::{ operator_rank, pmpo, shift2, Pmpo };
use crate::report::{ table, Check, Provenance, Report };
use crate::strings::{ flat_fields, string_ops, TraceData };

pub const EXIT_PASS: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("invalid builtin `{0}` (expected dynkin:<X_n>, trivial:<d> or cyclic:<n>)")]
    Builtin(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Conn(#[from] ConnError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}
pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Decomp(DecompError::Conn(_) | DecompError::Graph(_) | DecompError::NotAType(_) | DecompError::Shape(_)) => EXIT_INPUT,
            CliError::Decomp(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}

/// `K` for a single value or `A..B` for the inclusive range A..=B.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KRange {
    pub lo: usize,
    pub hi: usize,
}

impl KRange {
    pub fn iter(&self) -> std::ops::RangeInclusive<usize> { self.lo..=self.hi }
}

impl FromStr for KRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad k `{s}`"));
        let (lo, hi) = match s.split_once("..") {
            Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
            None => (num(s)?, num(s)?),
        };
        if lo == 0 || hi < lo {
            return Err(format!("k range `{s}` must satisfy 1 ≤ lo ≤ hi"));
        }
        Ok(Self { lo, hi })
    }
}

impl fmt::Display for KRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi { write!(f, "{}", self.lo) } else { write!(f, "{}..{}", self.lo, self.hi) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "pmpo", version, about = "Bi-unitary connections, projector MPOs and higher relative commutants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    /// write the output here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

/// INPUT is a connection document path or `builtin:<family>:<param>`.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the connection document of a built-in example.
    Builtin { family: String, param: String },
    /// Bi-unitarity and square residuals.
    Check { input: String },
    /// Irreducible sectors and their fusion data.
    Decompose {
        input: String,
        /// largest n of the L table
        #[arg(short = 'n', default_value_t = 4)]
        n: usize,
    },
    /// Rank and idempotency of P^k.
    Pmpo {
        input: String,
        #[arg(short = 'k', default_value = "1..3")]
        k: KRange,
    },
    /// Flat-field dimension.
    Relcomm {
        input: String,
        #[arg(short = 'k', default_value = "1..3")]
        k: KRange,
        /// include an orthonormal flat-field basis
        #[arg(long)]
        basis: bool,
    },
    /// Compare rank P^k with the flat-field dimension.
    VerifyTheorem {
        input: String,
        #[arg(short = 'k', default_value = "1..3")]
        k: KRange,
    },
    /// Path-count convergence diagnostics.
    Stats {
        input: String,
        #[arg(short = 'n', default_value_t = 6)]
        n: usize,
    },
}

/// Options shared by every command, validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub tol: f64,
    pub seed: u64,
    pub max_depth: usize,
    pub format: OutputFormat,
    pub verbosity: u8,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        if !(cli.tol > 0.0 && cli.tol <= 1e-2) {
            return Err(CliError::Config(format!("--tol {} outside (0, 1e-2]", cli.tol)));
        }
        if cli.max_depth == 0 {
            return Err(CliError::Config("--max-depth must be at least 1".into()));
        }
        Ok(Self { tol: cli.tol, seed: cli.seed, max_depth: cli.max_depth, format: cli.format, verbosity: cli.verbose })
    }
}

/// What the binary prints and returns.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub output: String,
    /// the output is a diagnostic meant for stderr
    pub is_error: bool,
}

impl Outcome {
    fn ok(code: i32, output: String) -> Self { Self { code, output, is_error: false } }

    fn err(code: i32, output: String) -> Self { Self { code, output, is_error: true } }
}

pub fn builtin(family: &str, param: &str) -> CliResult<Model> {
    let bad = || CliError::Builtin(format!("{family}:{param}"));
    let num = || param.parse::<usize>().map_err(|_| bad());
    Ok(match family {
        "dynkin" => build_dynkin(param, None)?,
        "trivial" => build_trivial(num()?)?,
        "cyclic" => build_cyclic_group(num()?)?,
        _ => return Err(bad()),
    })
}

/// Model plus the bytes its hash is taken over. Builtins hash their
/// serialized document.
pub fn load(input: &str) -> CliResult<(Model, Vec<u8>)> {
    if let Some(spec) = input.strip_prefix("builtin:") {
        let (family, param) = spec.split_once(':').ok_or_else(|| CliError::Builtin(spec.to_string()))?;
        let m = builtin(family, param)?;
        let bytes = to_json(&m).into_bytes();
        return Ok((m, bytes));
    }
    let path = PathBuf::from(input);
    let bytes = std::fs::read(&path).map_err(|source| CliError::Read { path: path.clone(), source })?;
    let text = String::from_utf8_lossy(&bytes);
    Ok((from_json(&text)?, bytes))
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> CliResult<Outcome> {
    let cfg = RunConfig::from_cli(cli)?;
    if let Command::Builtin { family, param } = &cli.command {
        return Ok(Outcome::ok(EXIT_PASS, to_json(&builtin(family, param)?)));
    }
    let report = run_report(&cli.command, &cfg)?;
    let output = match cfg.format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Table if cfg.verbosity > 0 => format!("{}\nresult {}\n", report.to_table(), report.result_json()),
        OutputFormat::Table => report.to_table(),
    };
    Ok(Outcome::ok(if report.pass { EXIT_PASS } else { EXIT_NUMERIC }, output))
}

/// Parse arguments, run, and map errors to exit codes. Output goes to
/// `--out` when given.
pub fn main_with<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return if e.use_stderr() { Outcome::err(EXIT_INPUT, e.to_string()) } else { Outcome::ok(EXIT_PASS, e.to_string()) };
        }
    };
    let out = match run(&cli) {
        Ok(o) => o,
        Err(e) => return Outcome::err(e.exit_code(), format!("error: {e}\n")),
    };
    match &cli.out {
        Some(path) => match std::fs::write(path, &out.output) {
            Ok(()) => Outcome::ok(out.code, String::new()),
            Err(source) => {
                let e = CliError::Write { path: path.clone(), source };
                Outcome::err(e.exit_code(), format!("error: {e}\n"))
            }
        },
        None => out,
    }
}

pub fn run_report(cmd: &Command, cfg: &RunConfig) -> CliResult<Report> {
    let (name, input) = match cmd {
        Command::Builtin { .. } => return Err(CliError::Config("builtin does not produce a report".into())),
        Command::Check { input } => ("check", input),
        Command::Decompose { input, .. } => ("decompose", input),
        Command::Pmpo { input, .. } => ("pmpo", input),
        Command::Relcomm { input, .. } => ("relcomm", input),
        Command::VerifyTheorem { input, .. } => ("verify-theorem", input),
        Command::Stats { input, .. } => ("stats", input),
    };
    let (model, bytes) = load(input)?;
    let prov = Provenance::new(name, input, &bytes, cfg.seed, cfg.tol, cfg.max_depth);
    let decomposed = || discover_irreducibles(&model, cfg.max_depth, cfg.seed, cfg.tol);
    Ok(match cmd {
        Command::Builtin { .. } => unreachable!(),
        Command::Check { .. } => check(prov, &model, cfg),
        Command::Decompose { n, .. } => decompose(prov, &decomposed()?, *n, cfg),
        Command::Pmpo { k, .. } => pmpo_report(prov, &decomposed()?, *k, cfg),
        Command::Relcomm { k, basis, .. } => relcomm(prov, &decomposed()?, *k, *basis, cfg),
        Command::VerifyTheorem { k, .. } => verify(prov, &decomposed()?, *k, cfg),
        Command::Stats { n, .. } => stats(prov, &decomposed()?, *n, cfg)?,
    })
}

fn check(prov: Provenance, m: &Model, cfg: &RunConfig) -> Report {
    let sq = validate_square(&m.scheme, cfg.tol);
    let bi = check_biunitarity(&m.w, cfg.tol);
    let structural = sq.positive && sq.connected && sq.enough_edges && sq.layers_ok && sq.gammas_above_one;
    let mismatches = bi.original.dimension_mismatches.len() + bi.renormalized.dimension_mismatches.len();
    let diagnostics = vec![
        Check::new("square eigen-equations", sq.max_residual(), cfg.tol),
        Check::new("unitarity U U* - 1", bi.original.residual_left, cfg.tol),
        Check::new("unitarity U* U - 1", bi.original.residual_right, cfg.tol),
        Check::new("renormalized U U* - 1", bi.renormalized.residual_left, cfg.tol),
        Check::new("renormalized U* U - 1", bi.renormalized.residual_right, cfg.tol),
    ];
    let result = json!({
        "tol": cfg.tol,
        "cells": m.w.nnz(),
        "gamma1": fmt_f64(m.scheme.gamma1),
        "gamma2": fmt_f64(m.scheme.gamma2),
        "positive": sq.positive,
        "connected": sq.connected,
        "enough_edges": sq.enough_edges,
        "layers_ok": sq.layers_ok,
        "gammas_above_one": sq.gammas_above_one,
        "dimension_mismatches": mismatches,
    });
    let t = format!(
        "cells {}  gamma1 {:.12}  gamma2 {:.12}\nstructure {}  dimension mismatches {mismatches}\n",
        m.w.nnz(),
        m.scheme.gamma1,
        m.scheme.gamma2,
        if structural { "ok" } else { "FAIL" },
    );
    Report::new(prov, result, diagnostics, structural && mismatches == 0, t)
}

#[derive(Serialize)]
struct FusionResult {
    tol: f64,
    labels: Vec<String>,
    d: Vec<String>,
    w: String,
    adjoint: &'static str,
    conj: Vec<String>,
    /// N[a][b][c] = N_ab^c
    n: Vec<Vec<Vec<u64>>>,
    /// M[a][x][y] = M_xa^y
    m: Vec<Vec<Vec<u64>>>,
    /// L[n][a]
    l: Vec<Vec<u64>>,
}

/// max |d_a d_b − Σ_c N_ab^c d_c|
pub fn dimension_residual(dec: &Decomposition) -> f64 {
    let f = &dec.fusion;
    let k = f.labels.len();
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let s: f64 = (0..k).map(|c| f.n[a][b][c] as f64 * f.d[c]).sum();
            worst = worst.max((f.d[a] * f.d[b] - s).abs());
        }
    }
    worst
}

/// max_y |Σ_{x,a} d_a μ_x M_xa^y − w μ_y| with Σ μ_x² = w.
pub fn mu_residual(dec: &Decomposition) -> f64 {
    let f = &dec.fusion;
    let mu = &dec.scheme.layers.mu[0];
    (0..mu.len())
        .map(|y| {
            let s: f64 = (0..f.labels.len()).map(|a| (0..mu.len()).map(|x| f.d[a] * mu[x] * f.m[a][x][y] as f64).sum::<f64>()).sum();
            (s - f.w * mu[y]).abs()
        })
        .fold(0.0, f64::max)
}

fn decompose(prov: Provenance, dec: &Decomposition, nmax: usize, cfg: &RunConfig) -> Report {
    let f = &dec.fusion;
    let l: Vec<Vec<u64>> = (0..=nmax).map(|n| f.l(n)).collect();
    let result = FusionResult {
        tol: cfg.tol,
        labels: f.labels.clone(),
        d: f.d.iter().map(|&d| fmt_f64(d)).collect(),
        w: fmt_f64(f.w),
        adjoint: f.adjoint.name(),
        conj: f.conj.iter().map(|&c| f.labels[c].clone()).collect(),
        n: f.n.clone(),
        m: f.m.clone(),
        l: l.clone(),
    };
    let g2 = dec.scheme.gamma2;
    let l_res = l.iter().enumerate().map(|(n, ln)| {
        let s: f64 = ln.iter().zip(&f.d).map(|(&x, d)| x as f64 * d).sum();
        (s - g2.powi(2 * n as i32)).abs() / g2.powi(2 * n as i32)
    }).fold(0.0, f64::max);
    let diagnostics = vec![
        Check::new("d_a eigen-equation", f.d_residual, cfg.tol),
        Check::new("d_a d_b - sum N d_c", dimension_residual(dec), 1e-8),
        Check::new("sum d mu M - w mu", mu_residual(dec), 1e-8),
        Check::new("sum L d - gamma2^2n (relative)", l_res, 1e-6),
    ];
    let rows: Vec<Vec<String>> = (0..f.labels.len())
        .map(|a| vec![f.labels[a].clone(), format!("{:.12}", f.d[a]), f.labels[f.conj[a]].clone(), dec.sectors[a].depth.to_string()])
        .collect();
    let mut t = format!("sectors {}  w {:.12}  adjoint {}\n", f.labels.len(), f.w, f.adjoint.name());
    t.push_str(&table(&["a", "d_a", "conj", "depth"], &rows));
    t.push_str("\nN_ab^c (rows a·b, entries over c)\n");
    for a in 0..f.labels.len() {
        for b in 0..f.labels.len() {
            let cs: Vec<String> = f.n[a][b].iter().map(u64::to_string).collect();
            t.push_str(&format!("  {}·{}: {}\n", f.labels[a], f.labels[b], cs.join(" ")));
        }
    }
    Report::new(prov, serde_json::to_value(result).expect("serializes"), diagnostics, true, t)
}

fn max_abs(m: &SpMat) -> f64 { m.max_abs() }

/// max_{a,b} |O_a O_b − Σ_c N_ba^c O_c|
pub fn fusion_residual(dec: &Decomposition, pm: &Pmpo) -> f64 {
    let n = &dec.fusion.n;
    let k = pm.o.len();
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let mut diff = pm.o[a].matmul(&pm.o[b]);
            for c in 0..k {
                if n[b][a][c] > 0 {
                    diff = diff.add_scaled(-ONE * n[b][a][c] as f64, &pm.o[c]);
                }
            }
            worst = worst.max(max_abs(&diff));
        }
    }
    worst
}

fn pmpo_report(prov: Provenance, dec: &Decomposition, ks: KRange, cfg: &RunConfig) -> Report {
    let mut rows = Vec::new();
    let mut per_k = Vec::new();
    let mut diagnostics = Vec::new();
    for k in ks.iter() {
        let pm = pmpo(dec, k);
        let rank = operator_rank(&pm.p, RANK_RTOL);
        let idem = pm.p.matmul(&pm.p).dist(&pm.p);
        let s = shift2(&pm.basis);
        let shift = s.matmul(&pm.p).dist(&pm.p.matmul(&s));
        let fusion = fusion_residual(dec, &pm);
        diagnostics.push(Check::new(format!("k={k} P^2 - P"), idem, cfg.tol));
        diagnostics.push(Check::new(format!("k={k} shift2 P - P shift2"), shift, cfg.tol));
        diagnostics.push(Check::new(format!("k={k} O_a O_b - sum N O_c"), fusion, 1e-8f64.max(cfg.tol)));
        rows.push(vec![k.to_string(), pm.basis.len().to_string(), rank.to_string(), format!("{idem:.3e}")]);
        per_k.push(json!({ "k": k, "loops": pm.basis.len(), "rank": rank }));
    }
    let t = table(&["k", "loops", "rank P", "|P^2-P|"], &rows);
    Report::new(prov, json!({ "tol": cfg.tol, "k": per_k }), diagnostics, true, t)
}

fn string_legend(pm: &Pmpo, dec: &Decomposition, i: usize) -> String {
    let g = &dec.scheme.g;
    let (p1, p2) = pm.basis.string_pair(i);
    let ids = |p: &[u32]| p.iter().map(|&e| g.edges[e as usize].id.clone()).collect::<Vec<_>>().join(".");
    format!("{}|{}", ids(&p1), ids(&p2))
}

fn relcomm(prov: Provenance, dec: &Decomposition, ks: KRange, with_basis: bool, cfg: &RunConfig) -> Report {
    let mut rows = Vec::new();
    let mut per_k = Vec::new();
    for k in ks.iter() {
        let pm = pmpo(dec, k);
        let trace = TraceData::new(&pm.basis, &dec.scheme, dec.fusion.w).expect("scheme is normalized");
        let ff = flat_fields(&dec.w_tilde, &pm.basis, dec.scheme.base, with_basis.then_some(&trace));
        rows.push(vec![k.to_string(), pm.basis.len().to_string(), ff.constraints.to_string(), ff.dim.to_string()]);
        let mut entry = json!({ "k": k, "dim": ff.dim });
        if let Some(b) = ff.basis {
            let fields: Vec<Value> = b.iter().map(|f| {
                let coeffs: Vec<Value> = f.iter().enumerate().filter(|(_, v)| v.norm() > cfg.tol).map(|(i, v)| {
                    json!([string_legend(&pm, dec, i), fmt_f64(v.re), fmt_f64(v.im)])
                }).collect();
                Value::Array(coeffs)
            }).collect();
            entry["basis"] = Value::Array(fields);
        }
        per_k.push(entry);
    }
    let t = table(&["k", "strings", "constraints", "flat dim"], &rows);
    Report::new(prov, json!({ "tol": cfg.tol, "k": per_k }), vec![], true, t)
}

/// Rank P^k, rank P̃^k and the flat-field dimension for one k.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TheoremRow {
    pub k: usize,
    pub rank_p: usize,
    pub rank_p_tilde: usize,
    pub flat_dim: usize,
    pub pass: bool,
}

pub fn theorem_row(dec: &Decomposition, k: usize) -> (TheoremRow, Pmpo, f64) {
    let pm = pmpo(dec, k);
    let ops = string_ops(&pm, &dec.scheme.layers);
    let rank_p = operator_rank(&pm.p, RANK_RTOL);
    let rank_p_tilde = operator_rank(&ops.p, RANK_RTOL);
    let flat_dim = flat_fields(&dec.w_tilde, &pm.basis, dec.scheme.base, None).dim;
    let idem = ops.p.matmul(&ops.p).dist(&ops.p);
    let pass = rank_p == flat_dim && rank_p_tilde == flat_dim;
    (TheoremRow { k, rank_p, rank_p_tilde, flat_dim, pass }, pm, idem)
}

fn verify(prov: Provenance, dec: &Decomposition, ks: KRange, cfg: &RunConfig) -> Report {
    let mut rows = Vec::new();
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for k in ks.iter() {
        let (row, pm, idem_t) = theorem_row(dec, k);
        let idem = pm.p.matmul(&pm.p).dist(&pm.p);
        diagnostics.push(Check::new(format!("k={k} P^2 - P"), idem, cfg.tol));
        diagnostics.push(Check::new(format!("k={k} P~^2 - P~"), idem_t, cfg.tol));
        rows.push(vec![
            k.to_string(),
            row.rank_p.to_string(),
            row.rank_p_tilde.to_string(),
            row.flat_dim.to_string(),
            (if row.pass { "PASS" } else { "FAIL" }).to_string(),
        ]);
        out.push(row);
    }
    let all = out.iter().all(|r| r.pass);
    let t = table(&["k", "rank P", "rank P~", "flat dim", ""], &rows);
    Report::new(prov, json!({ "tol": cfg.tol, "k": out }), diagnostics, all, t)
}

fn stats(prov: Provenance, dec: &Decomposition, nmax: usize, cfg: &RunConfig) -> CliResult<Report> {
    let w = dec.fusion.w;
    let kappa_lim: Vec<f64> = dec.scheme.layers.mu[0].iter().map(|m| m / w.sqrt()).collect();
    let lambda_lim: Vec<f64> = dec.fusion.d.iter().map(|d| d / w.sqrt()).collect();
    let strs = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>();
    let mut per_n = Vec::new();
    let mut rows = Vec::new();
    for n in 1..=nmax {
        let s = sector_statistics(dec, n)?;
        let dk = s.kappa.iter().zip(&kappa_lim).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dl = s.lambda.iter().zip(&lambda_lim).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push(vec![n.to_string(), format!("{:.6e}", s.alpha), format!("{dk:.3e}"), format!("{:.6e}", s.beta), format!("{dl:.3e}")]);
        per_n.push(json!({
            "n": n,
            "K": s.k_counts,
            "alpha": fmt_f64(s.alpha),
            "kappa": strs(&s.kappa),
            "L": s.l,
            "beta": fmt_f64(s.beta),
            "lambda": strs(&s.lambda),
        }));
    }
    let result = json!({
        "tol": cfg.tol,
        "kappa_limit": strs(&kappa_lim),
        "lambda_limit": strs(&lambda_lim),
        "n": per_n,
    });
    let t = table(&["n", "alpha", "|kappa - mu/sqrt w|", "beta", "|lambda - d/sqrt w|"], &rows);
    Ok(Report::new(prov, result, vec![], true, t))
}
