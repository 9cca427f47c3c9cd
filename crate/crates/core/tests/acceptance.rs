//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use masq::counting::Counter;
use masq::smt::{find_solver, qms_smt, SolverConfig};
use masq::verifier::{pm_check, qms_compute, EngineConfig, EngineKind, Method, Report};
use masq::{make_domain, simplify, DistType, Program, Rule, TypeChecker};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn cube() -> Program {
    Program::parse(&std::fs::read_to_string(corpus().join("cube.mv")).unwrap()).unwrap()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = masq::cli::run_with(&args, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn type_inference_golden() -> Outcome {
    let start = Instant::now();
    let path = corpus().join("cube.mv");
    let (code, out, err) = cli(&["check", path.to_str().unwrap(), "--engine", "type-only", "--format", "json"]);
    let elapsed = start.elapsed();
    let Ok(report) = Report::from_json(&out) else {
        return Outcome::Fail(format!("no report (exit {code}): {err}"));
    };
    let got: Vec<String> = report.variables.iter().map(|v| format!("{}:{}", v.name, v.ty)).collect();
    let want = "x:RUD x0:SID x1:SID x2:UKD x3:UKD x4:RUD x5:RUD x6:UKD x7:RUD x8:SID x9:RUD";
    check(
        got.join(" ") == want && elapsed < Duration::from_secs(1),
        format!("{} in {:.3}s", got.join(" "), elapsed.as_secs_f64()),
    )
}

fn hybrid_verdicts() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig::new(make_domain(8, None).unwrap(), EngineKind::Bruteforce);
    let r = pm_check(&cube(), &cfg);
    let elapsed = start.elapsed();
    let sdd: Vec<&str> = r
        .variables
        .iter()
        .filter(|v| v.ty == DistType::Sdd)
        .map(|v| v.name.as_str())
        .collect();
    let counted: Vec<&str> = r
        .variables
        .iter()
        .filter(|v| v.method == Method::CountingBruteforce)
        .map(|v| v.name.as_str())
        .collect();
    let x6 = r.verdict("x6").unwrap();
    let x6_ok = x6.ty == DistType::Sid && x6.method == Method::ReducedTypeRule && x6.rule_trace == [Rule::NoKey];
    let reduced = simplify(cube().expr_of("x6").unwrap(), &cfg.domain).to_string();
    check(
        sdd == ["x2", "x3"] && counted == ["x2", "x3"] && x6_ok && reduced == "(r0 @ r0) @ r0" && elapsed < Duration::from_secs(60),
        format!(
            "#SDD={} {sdd:?}, #Count={} {counted:?}, x6 -> {reduced} : {} via {:?}, {:.3}s",
            sdd.len(),
            counted.len(),
            x6.ty,
            x6.rule_trace,
            elapsed.as_secs_f64()
        ),
    )
}

fn qms_reproduction() -> Outcome {
    let start = Instant::now();
    let cfg = EngineConfig::new(make_domain(8, None).unwrap(), EngineKind::Bruteforce);
    let r = qms_compute(&cube(), &cfg);
    let elapsed = start.elapsed();
    let (Some(x2), Some(x3)) = (r.verdict("x2").and_then(|v| v.qms), r.verdict("x3").and_then(|v| v.qms)) else {
        return Outcome::Fail("missing QMS for x2/x3".into());
    };
    let rounded = (x2.value() * 1000.0).round() / 1000.0;
    check(
        x2.ratio() == x3.ratio() && (rounded - 0.988).abs() <= 0.0005 && elapsed < Duration::from_secs(600),
        format!(
            "QMS_x2 = {}/{}, QMS_x3 = {}/{} = {:.3}, program {}, {:.3}s",
            x2.num,
            x2.den,
            x3.num,
            x3.den,
            x2.value(),
            r.program_qms.map(|q| q.to_string()).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

fn secmult_control() -> Outcome {
    let path = corpus().join("secmult.mv");
    let (code, out, err) = cli(&["check", path.to_str().unwrap(), "--qms", "--format", "json"]);
    let Ok(r) = Report::from_json(&out) else {
        return Outcome::Fail(format!("no report (exit {code}): {err}"));
    };
    let one = r.program_qms.is_some_and(|q| q.num == q.den);
    check(
        code == 0 && one && r.totals.sdd == 0,
        format!(
            "exit {code}, program_qms {}, #SDD {}",
            r.program_qms.map(|q| q.to_string()).unwrap_or_else(|| "missing".into()),
            r.totals.sdd
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut violations = Vec::new();
    let (mut vars, mut typed, mut by_rules) = (0usize, [0usize; 4], 0usize);
    for i in 0..500 {
        let bits = rng.gen_range(1..=2);
        let d = make_domain(bits, None).unwrap();
        let p = common::random_program(&mut rng, bits, 2, 3);
        let counter = Counter::new(&d);
        let report = pm_check(&p, &EngineConfig::new(d.clone(), EngineKind::Bruteforce));
        let mut tc = TypeChecker::new();
        for v in &report.variables {
            vars += 1;
            let e = p.expr_of(&v.name).unwrap();
            let uniform = counter.check_uniform(e).unwrap();
            let q = counter.qms_exact(e).unwrap();
            let si = q.is_one();
            let reduced = simplify(e, &d);
            let rq = counter.qms_exact(&reduced).unwrap();
            let judgements = [
                ("verdict", v.ty),
                ("rules", tc.infer(e).ty),
                ("reduced rules", TypeChecker::new().infer(&reduced).ty),
            ];
            by_rules += usize::from(judgements[1].1 != DistType::Ukd);
            for (what, ty) in judgements {
                let ok = match ty {
                    DistType::Rud => uniform,
                    DistType::Sid => si,
                    DistType::Sdd => !si,
                    DistType::Ukd => what != "verdict",
                };
                if !ok {
                    violations.push(format!("program {i} n={bits} {}: {what} {ty} but uniform={uniform} si={si}: {e}", v.name));
                }
            }
            typed[match v.ty {
                DistType::Rud => 0,
                DistType::Sid => 1,
                DistType::Sdd => 2,
                DistType::Ukd => 3,
            }] += 1;
            if q.ratio() != rq.ratio() {
                violations.push(format!(
                    "program {i} n={bits} {}: qms {}/{} vs reduced {}/{}: {e} -> {reduced}",
                    v.name, q.num, q.den, rq.num, rq.den
                ));
            }
            if uniform && !si {
                violations.push(format!("program {i} {}: uniform but not SI", v.name));
            }
        }
    }
    let elapsed = start.elapsed();
    for v in violations.iter().take(10) {
        eprintln!("  violation: {v}");
    }
    check(
        violations.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "500 programs, {vars} variables (RUD {} SID {} SDD {} UKD {}; {by_rules} typed by rules alone), {} violations, {:.1}s",
            typed[0],
            typed[1],
            typed[2],
            typed[3],
            violations.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn smt_agreement() -> Outcome {
    let Some(solver) = find_solver() else {
        return Outcome::Skip("no SMT solver (z3 or cvc5) on PATH; criteria 1-5 do not need one".into());
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut failures = Vec::new();
    let mut max_queries = 0;
    let cfg = SolverConfig::new(solver.clone());
    let mut done = 0;
    while done < 50 {
        let bits = rng.gen_range(1..=4);
        let randoms = rng.gen_range(0..=(8 / bits).min(3) as usize);
        let d = make_domain(bits, None).unwrap();
        let e = common::random_expr(&mut rng, bits, randoms, 3);
        let m = e.rvars().len() as u32 * bits;
        if m > 8 || e.vars().len() as u32 * bits > 12 {
            continue;
        }
        done += 1;
        let exact = masq::qms_exact(&e, &d).unwrap();
        match qms_smt(&e, &d, &cfg, "q") {
            Ok(r) => {
                max_queries = max_queries.max(r.queries);
                if r.qms.ratio() != exact.ratio() || r.queries > m + 1 {
                    failures.push(format!(
                        "{e} at n={bits}: smt {}/{} in {} queries, exact {}/{}",
                        r.qms.num, r.qms.den, r.queries, exact.num, exact.den
                    ));
                }
            }
            Err(err) => failures.push(format!("{e}: {err}")),
        }
    }
    for f in failures.iter().take(10) {
        eprintln!("  mismatch: {f}");
    }
    check(
        failures.is_empty(),
        format!(
            "50 expressions with {solver}, {} mismatches, at most {max_queries} queries per search, {:.1}s",
            failures.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = corpus();
    let dir = dir.to_str().unwrap();
    let (c1, serial, _) = cli(&["corpus", dir, "--qms", "--format", "json", "--jobs", "1"]);
    let (c8, parallel, _) = cli(&["corpus", dir, "--qms", "--format", "json", "--jobs", "8"]);
    let mut same = c1 == c8 && serial == parallel && !serial.is_empty();
    let mut files = 0;
    for entry in std::fs::read_dir(corpus()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|x| x == "mv") {
            files += 1;
            let p = path.to_str().unwrap();
            let a = cli(&["check", p, "--qms", "--format", "json", "--jobs", "1"]);
            let b = cli(&["check", p, "--qms", "--format", "json", "--jobs", "8"]);
            same &= a == b;
        }
    }
    check(
        same,
        format!("corpus of {files} programs, {} bytes of JSON, jobs 1 vs 8", serial.len()),
    )
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("type inference golden list on Cube", type_inference_golden),
        ("hybrid verdicts on Cube at n=8", hybrid_verdicts),
        ("QMS of the leaky Cube variables", qms_reproduction),
        ("SecMult positive control", secmult_control),
        ("random programs against exhaustive semantics", oracle_equivalence),
        ("SMT and brute-force QMS agree", smt_agreement),
        ("JSON reports independent of --jobs", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {}: {tag} - {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
