//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::make_domain;
use crate::program::Program;
use crate::reduce::{parse_meta_theorems, Simplifier};
use crate::smt::{find_solver, SmtProfile, SolverConfig};
use crate::verifier::{pm_check, EngineConfig, EngineKind, Report};

#[derive(Parser, Debug)]
#[command(name = "masq", version, about = "Verify and quantify masking of straight-line arithmetic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check one program.
    Check {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Check every `.mv` file in a directory and print a summary table.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Engine {
    TypeOnly,
    Bruteforce,
    Smt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Bv,
    Int,
}

#[derive(Args, Debug, Clone)]
struct Opts {
    /// Bit width n of the domain (1..=16).
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Field polynomial for `@`, e.g. 0x11d.
    #[arg(long, value_parser = parse_hex)]
    poly: Option<u32>,
    #[arg(long, value_enum, default_value_t = Engine::Bruteforce)]
    engine: Engine,
    /// Compute the quantitative masking strength of every variable.
    #[arg(long)]
    qms: bool,
    /// Solver command; the script path is appended. Defaults to z3 or cvc5 on PATH.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, value_enum, default_value_t = Profile::Bv)]
    solver_profile: Profile,
    /// Write every SMT query to this directory.
    #[arg(long)]
    emit_smt: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Maximum evaluations per expression.
    #[arg(long, default_value_t = crate::counting::DEFAULT_BUDGET)]
    budget: u64,
    /// Per-variable time limit in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Extra meta-theorems, one `pattern => replacement` per line.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Include elapsed times in the output.
    #[arg(long)]
    timings: bool,
    /// Analyze variables concurrently.
    #[arg(long)]
    parallel_vars: bool,
}

fn parse_hex(s: &str) -> Result<u32, String> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(digits, 16).map_err(|e| format!("bad hex `{s}`: {e}"))
}

impl Opts {
    fn config(&self) -> Result<EngineConfig, String> {
        let domain = make_domain(self.bits, self.poly).map_err(|e| e.to_string())?;
        let engine = match self.engine {
            Engine::TypeOnly => EngineKind::TypeOnly,
            Engine::Bruteforce => EngineKind::Bruteforce,
            Engine::Smt => EngineKind::Smt,
        };
        let mut cfg = EngineConfig::new(domain, engine);
        cfg.qms = self.qms;
        cfg.budget = self.budget;
        cfg.timeout = Some(Duration::from_secs(self.timeout));
        cfg.jobs = self.jobs.max(1);
        cfg.parallel_vars = self.parallel_vars;
        cfg.timings = self.timings;
        if let Some(path) = &self.meta {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let extra = parse_meta_theorems(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            cfg.simplifier = Simplifier::default().with_extra(extra);
        }
        if engine == EngineKind::Smt || self.emit_smt.is_some() {
            let cmd = match self.solver.clone().or_else(find_solver) {
                Some(cmd) => cmd,
                None if engine == EngineKind::Smt => {
                    return Err("--engine smt needs a solver: pass --solver or put z3/cvc5 on PATH".into())
                }
                None => String::new(),
            };
            cfg.solver = Some(SolverConfig {
                cmd,
                profile: match self.solver_profile {
                    Profile::Bv => SmtProfile::Bv,
                    Profile::Int => SmtProfile::Int,
                },
                timeout: Duration::from_secs(self.timeout),
                emit_dir: self.emit_smt.clone(),
            });
        }
        Ok(cfg)
    }
}

/// Parses `args` (without the program name) and runs, writing to the given
/// streams. Returns the exit code.
pub fn run_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let argv = std::iter::once("masq".to_string()).chain(args.iter().cloned());
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match cli.command {
        Command::Check { file, opts } => check(&file, &opts, out, err),
        Command::Corpus { dir, opts } => corpus(&dir, &opts, out, err),
    }
}

/// Entry point for the binary.
pub fn run(args: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn load(path: &Path) -> Result<Program, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Program::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn analyze(path: &Path, cfg: &EngineConfig) -> Result<Report, String> {
    let p = load(path)?;
    p.validate_domain(&cfg.domain).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(pm_check(&p, cfg))
}

fn check(file: &Path, opts: &Opts, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match opts.config() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    match analyze(file, &cfg) {
        Ok(report) => {
            let text = match opts.format {
                Format::Text => report.to_text(),
                Format::Json => report.to_json() + "\n",
            };
            let _ = out.write_all(text.as_bytes());
            report.exit_code()
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

#[derive(Serialize)]
struct CorpusEntry {
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_ms: Option<f64>,
}

/// Runs every `.mv` file in `dir` (sorted by name) and returns one entry per
/// file; a failing file does not stop the sweep.
fn run_corpus(dir: &Path, cfg: &EngineConfig) -> Result<Vec<CorpusEntry>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mv"))
        .collect();
    files.sort();
    // files run concurrently; counting inside each stays serial
    let mut per_file = cfg.clone();
    per_file.jobs = 1;
    let per_file = Arc::new(per_file);
    let work = || {
        files
            .par_iter()
            .map(|path| {
                let start = Instant::now();
                let result = analyze(path, &per_file);
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let elapsed_ms = cfg.timings.then(|| start.elapsed().as_secs_f64() * 1e3);
                match result {
                    Ok(r) => CorpusEntry {
                        file: name,
                        report: Some(r),
                        error: None,
                        elapsed_ms,
                    },
                    Err(e) => CorpusEntry {
                        file: name,
                        report: None,
                        error: Some(e),
                        elapsed_ms,
                    },
                }
            })
            .collect()
    };
    Ok(match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    })
}

fn corpus(dir: &Path, opts: &Opts, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match opts.config() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let entries = match run_corpus(dir, &cfg) {
        Ok(e) => e,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let code = entries
        .iter()
        .map(|e| e.report.as_ref().map_or(2, Report::exit_code))
        .max()
        .unwrap_or(0);
    match opts.format {
        Format::Json => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&entries).expect("serializable"));
        }
        Format::Text => {
            let _ = out.write_all(corpus_table(&entries, cfg.qms).as_bytes());
        }
    }
    code
}

fn corpus_table(entries: &[CorpusEntry], qms: bool) -> String {
    let mut rows = vec![vec![
        "file".to_string(),
        "program".into(),
        "|X_i|".into(),
        "#SDD".into(),
        "#Count".into(),
    ]];
    if qms {
        rows[0].push("QMS".into());
    }
    let timed = entries.iter().any(|e| e.elapsed_ms.is_some());
    if timed {
        rows[0].push("time".into());
    }
    rows[0].push("status".into());
    for e in entries {
        let mut row = vec![e.file.clone()];
        match &e.report {
            Some(r) => {
                row.push(r.program.clone());
                row.push(r.totals.internals.to_string());
                row.push(r.totals.sdd.to_string());
                row.push(r.totals.counted.to_string());
                if qms {
                    row.push(r.program_qms.map(|q| format!("{:.3}", q.value())).unwrap_or_else(|| "-".into()));
                }
            }
            None => {
                row.extend(std::iter::repeat_n("-".to_string(), if qms { 5 } else { 4 }));
            }
        }
        if timed {
            row.push(e.elapsed_ms.map(|ms| format!("{ms:.1}ms")).unwrap_or_default());
        }
        row.push(match &e.report {
            None => "ERROR".into(),
            Some(r) => match r.exit_code() {
                0 => "masked".into(),
                1 if r.totals.sdd > 0 => "leaky".into(),
                1 => "unresolved".into(),
                _ => "inconclusive".into(),
            },
        });
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:w$}")).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    for e in entries {
        if let Some(msg) = &e.error {
            s.push_str(&format!("{}: {msg}\n", e.file));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
    }

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(&args, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn check_exit_codes() {
        let cube = corpus_dir().join("cube.mv");
        let (code, out, _) = run_args(&["check", cube.to_str().unwrap(), "--bits", "8"]);
        assert_eq!(code, 1);
        assert!(out.contains("x2") && out.contains("SDD"));
        let sec = corpus_dir().join("secmult.mv");
        assert_eq!(run_args(&["check", sec.to_str().unwrap()]).0, 0);
        assert_eq!(run_args(&["check", "/no/such/file.mv"]).0, 2);
        assert_eq!(run_args(&["check"]).0, 2);
        assert_eq!(run_args(&["check", cube.to_str().unwrap(), "--bits", "0"]).0, 2);
        assert_eq!(run_args(&["check", cube.to_str().unwrap(), "--poly", "0x11c"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn json_qms() {
        let cube = corpus_dir().join("cube.mv");
        let (code, out, _) = run_args(&[
            "check",
            cube.to_str().unwrap(),
            "--qms",
            "--engine",
            "bruteforce",
            "--format",
            "json",
        ]);
        assert_eq!(code, 1);
        let r = Report::from_json(&out).unwrap();
        let q = r.verdict("x2").unwrap().qms.unwrap();
        assert_eq!((q.num, q.den), (253, 256));
        assert_eq!(r.poly, "0x11d");
    }

    #[test]
    fn corpus_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (code, out, _) = run_args(&["corpus", dir.path().to_str().unwrap()]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 1);
        std::fs::copy(corpus_dir().join("cube.mv"), dir.path().join("cube.mv")).unwrap();
        std::fs::write(dir.path().join("broken.mv"), "fn B(k: secret) { y = ; }").unwrap();
        let (code, out, _) = run_args(&["corpus", dir.path().to_str().unwrap()]);
        assert_eq!(code, 2);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[1].starts_with("broken.mv") && lines[1].ends_with("ERROR"));
        assert!(lines[2].starts_with("cube.mv"));
        let cols: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(cols, ["cube.mv", "Cube", "11", "2", "2", "leaky"]);
    }

    #[test]
    fn emit_smt_files() {
        let Some(_) = find_solver() else {
            return;
        };
        let dir = tempfile::tempdir().unwrap();
        let cube = corpus_dir().join("cube.mv");
        let (code, _, err) = run_args(&[
            "check",
            cube.to_str().unwrap(),
            "--bits",
            "2",
            "--engine",
            "smt",
            "--qms",
            "--emit-smt",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 1, "{err}");
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert!(names.iter().any(|n| n.starts_with("x2_q") && n.ends_with("_4.smt2")), "{names:?}");
    }
}
