//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//!     cargo test -p gradgen-cli --test acceptance

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gradgen::ast::{Expr, FunctionDef, Program, Stmt};
use gradgen::check::{check, inactive_sensitivity, sample_points, InputSpecs, Tolerance};
use gradgen::corpus::{corpus, hand_written, CorpusEntry};
use gradgen::frontend::{emit, emit_program, parse_str};
use gradgen::optimize::{run_pipeline, PassConfig};
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{truncate_loop_adjoint, Differentiator, GradOptions};

const CORPUS_SEED: u64 = 21;
const CORPUS_RANDOM: usize = 60;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn programs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn entry(name: &str) -> CorpusEntry {
    hand_written().into_iter().find(|e| e.name == name).expect("bundled program")
}

fn parse(src: &str) -> Program {
    parse_str(src).expect("program parses")
}

fn scalar(out: &[Value]) -> f64 {
    assert_eq!(out.len(), 1, "expected one result");
    out[0].as_f64().expect("numeric result")
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t > limit {
        Err(format!("took {t:?}, limit {limit:?}"))
    } else {
        Ok(t)
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn square_golden() -> Outcome {
    let start = Instant::now();
    let e = entry("square");
    let p = parse(&e.source);
    let g = Differentiator::new().grad(&p, "f", &GradOptions::new(vec![0])).map_err(|e| e.to_string())?;
    // the published listing with the library namespace dropped
    let golden = parse(
        "def dfdx(x, by=1.0):\n    # Grad of: y = x * x\n    _bx = unbroadcast(by * x, x)\n    _bx2 = unbroadcast(by * x, x)\n    bx = _bx\n    bx = add_grad(bx, _bx2)\n    return bx\n",
    );
    let want = golden.get("dfdx").unwrap();
    ensure(&g.fn_ast == want, || format!("structure differs:\n{}", g.source))?;
    let mut assigns_y = false;
    for s in &g.fn_ast.body {
        s.visit(&mut |t| {
            if matches!(t, Stmt::Assign { target, .. } if target == "y") {
                assigns_y = true;
            }
        });
    }
    ensure(!assigns_y, || "primal statement y = x * x survived".into())?;
    let out = eval(&g.program_with(&p), "dfdx", &[Value::Scalar(2.0)], &EvalOptions::default(), &mut NoopObserver)
        .map_err(|e| e.to_string())?;
    let v = scalar(&out);
    ensure(v == 4.0, || format!("dfdx(2) = {v}"))?;
    let t = within(Duration::from_secs(1), start)?;
    Ok(format!("dfdx(2.0) = {v}, {t:?}"))
}

fn injection() -> Outcome {
    let e = entry("inject");
    let p = parse(&e.source);
    let g = Differentiator::new().grad(&p, "f", &GradOptions::new(vec![0])).map_err(|e| e.to_string())?;
    let out = eval(&g.program_with(&p), g.name(), &[Value::Scalar(2.0)], &EvalOptions { checked: true }, &mut NoopObserver)
        .map_err(|e| e.to_string())?;
    let v = scalar(&out);
    ensure(v == 2.0, || format!("df(2) = {v}"))?;
    Ok(format!("df(2) = {v}"))
}

fn loop_program() -> Outcome {
    let start = Instant::now();
    let e = entry("loop");
    let p = parse(&e.source);
    let g = Differentiator::new().grad(&p, "loop", &GradOptions::new(vec![0])).map_err(|e| e.to_string())?;
    let r = check(&p, "loop", &g, &e.specs, 10, 0, Tolerance::default()).map_err(|e| e.to_string())?;
    ensure(r.points == 10, || format!("{} points", r.points))?;
    ensure(r.pass, || r.to_text())?;
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!("10 points, max rel err {:.2e}, {t:?}", r.max_rel_err))
}

fn mlp_end_to_end() -> Outcome {
    let start = Instant::now();
    let specs: InputSpecs =
        serde_json::from_str(&std::fs::read_to_string(programs().join("mlp.inputs.json")).unwrap()).unwrap();
    let shapes: Vec<String> = specs.params.iter().map(|s| format!("{s:?}")).collect();
    ensure(
        shapes[0].contains("[2, 4]") && shapes[1].contains("[4, 8]") && shapes[3].contains("[8, 3]"),
        || format!("instance is not batch 2, input 4, hidden 8, output 3: {shapes:?}"),
    )?;
    let o = Command::new(env!("CARGO_BIN_EXE_gradgen"))
        .current_dir(programs())
        .args(["--json", "check", "mlp.tsl", "mlp", "--wrt", "1,2,3,4", "--points", "5"])
        .output()
        .map_err(|e| e.to_string())?;
    let out = String::from_utf8_lossy(&o.stdout);
    ensure(o.status.code() == Some(0), || {
        format!("exit {:?}\n{out}{}", o.status.code(), String::from_utf8_lossy(&o.stderr))
    })?;
    let j: serde_json::Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
    ensure(j["pass"] == true, || out.to_string())?;
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!("max rel err {:.2e}, {t:?}", j["max_rel_err"].as_f64().unwrap_or(f64::NAN)))
}

fn count_constructs(f: &FunctionDef) -> usize {
    let mut n = 0;
    for s in &f.body {
        s.visit(&mut |t| {
            if matches!(t, Stmt::GradOf { .. }) {
                n += 1;
            }
            for e in t.exprs() {
                e.visit(&mut |x| {
                    if matches!(x, Expr::DerivRef(..)) || matches!(x, Expr::Call { func, .. } if func == "grad") {
                        n += 1;
                    }
                });
            }
        });
    }
    n
}

fn median(v: &mut [u128]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn ahead_of_time() -> Outcome {
    let e = entry("mlp");
    let p = parse(&e.source);
    let d = Differentiator::new();
    let opts = GradOptions::new(e.wrt.clone());
    let g = d.grad(&p, "mlp", &opts).map_err(|e| e.to_string())?;
    let transforms = d.transform_count();
    let constructs: usize = g.functions().iter().map(count_constructs).sum();
    ensure(constructs == 0, || format!("{constructs} transformation constructs in generated code"))?;

    let gp = g.program_with(&p);
    let args = sample_points(&p, "mlp", &e.specs, 1, 0).map_err(|e| e.to_string())?.remove(0);
    let (mut second, mut hundredth) = (Vec::new(), Vec::new());
    for _ in 0..50 {
        for call in 1..=100 {
            let g = d.grad(&p, "mlp", &opts).map_err(|e| e.to_string())?;
            let t = Instant::now();
            eval(&gp, g.name(), &args, &EvalOptions::default(), &mut NoopObserver).map_err(|e| e.to_string())?;
            let ns = t.elapsed().as_nanos();
            match call {
                2 => second.push(ns),
                100 => hundredth.push(ns),
                _ => {}
            }
        }
    }
    ensure(d.transform_count() == transforms, || {
        format!("{} transformations after repeated grad() calls, {transforms} before", d.transform_count())
    })?;
    let ratio = median(&mut hundredth) / median(&mut second);
    ensure((0.5..=2.0).contains(&ratio), || format!("call 100 / call 2 median ratio {ratio:.3}"))?;
    Ok(format!("{transforms} functions transformed once each, call 100 / call 2 median ratio {ratio:.3}, 0 constructs"))
}

fn full_corpus() -> Vec<CorpusEntry> {
    corpus(CORPUS_SEED, CORPUS_RANDOM)
}

fn bits(out: &[Value]) -> Vec<u64> {
    out.iter().flat_map(|v| v.to_f64_vec().unwrap()).map(f64::to_bits).collect()
}

fn optimized(p: &Program) -> Program {
    let mut q = p.clone();
    for f in &p.functions {
        q.upsert(run_pipeline(f, &PassConfig::default()).0);
    }
    q
}

fn optimizer_soundness() -> Outcome {
    let d = Differentiator::new();
    let entries = full_corpus();
    ensure(entries.len() >= 50, || format!("corpus has {} programs", entries.len()))?;
    let mut evaluations = 0;
    for e in &entries {
        let p = parse(&e.source);
        let g = d
            .grad(&p, &e.function, &GradOptions::new(e.wrt.clone()).unoptimized())
            .map_err(|err| format!("{}: {err}", e.name))?;
        let gp = g.program_with(&p);
        for prog in [&p, &gp] {
            for f in &prog.functions {
                let once = run_pipeline(f, &PassConfig::default()).0;
                let twice = run_pipeline(&once, &PassConfig::default()).0;
                ensure(once == twice, || format!("{}: `{}` not idempotent\n{}", e.name, f.name, emit(&once)))?;
            }
        }
        let (p2, gp2) = (optimized(&p), optimized(&gp));
        let opts = EvalOptions::default();
        for args in sample_points(&p, &e.function, &e.specs, 5, 4).map_err(|err| err.to_string())? {
            for (before_p, after_p, name) in [(&p, &p2, e.function.as_str()), (&gp, &gp2, g.name())] {
                let before = eval(before_p, name, &args, &opts, &mut NoopObserver).map_err(|err| err.to_string())?;
                let after = eval(after_p, name, &args, &opts, &mut NoopObserver).map_err(|err| err.to_string())?;
                ensure(bits(&before) == bits(&after), || format!("{}: `{name}` changed under optimization", e.name))?;
                evaluations += 1;
            }
        }
    }
    Ok(format!("{} programs, {evaluations} bitwise comparisons, idempotent", entries.len()))
}

fn stack_balance() -> Outcome {
    let d = Differentiator::new();
    let mut runs = 0;
    for e in &full_corpus() {
        let p = parse(&e.source);
        let points = sample_points(&p, &e.function, &e.specs, 5, 8).map_err(|err| err.to_string())?;
        for optimize in [false, true] {
            let mut o = GradOptions::new(e.wrt.clone());
            o.optimize = optimize;
            let g = d.grad(&p, &e.function, &o).map_err(|err| format!("{}: {err}", e.name))?;
            let gp = g.program_with(&p);
            for args in &points {
                eval(&gp, g.name(), args, &EvalOptions { checked: true }, &mut NoopObserver)
                    .map_err(|err| format!("{}: {err}", e.name))?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} checked gradient runs"))
}

fn activity_soundness() -> Outcome {
    let mut sites = 0;
    let mut worst = 0.0f64;
    for e in &full_corpus() {
        let p = parse(&e.source);
        for args in sample_points(&p, &e.function, &e.specs, 5, 6).map_err(|err| err.to_string())? {
            for s in inactive_sensitivity(&p, &e.function, &e.wrt, &args).map_err(|err| err.to_string())? {
                sites += 1;
                worst = worst.max(s.max_abs_fd);
                ensure(s.max_abs_fd <= 1e-8, || {
                    format!("{}: inactive `{}` at {} moves by {:e}", e.name, s.name, s.span, s.max_abs_fd)
                })?;
            }
        }
    }
    ensure(sites > 0, || "no inactive definitions in the corpus".into())?;
    Ok(format!("{sites} inactive definition sites, max |FD| {worst:e}"))
}

fn truncation() -> Outcome {
    let p = parse("def f(x):\n    for _ in range(4):\n        x = x * 0.5\n    return x\n");
    let mut got = Vec::new();
    for (keep, want) in [(2, 0.25), (4, 0.0625)] {
        let g = truncate_loop_adjoint(&p, "f", &GradOptions::new(vec![0]), 0, keep).map_err(|e| e.to_string())?;
        let out = eval(&g.program_with(&p), g.name(), &[Value::Scalar(1.0)], &EvalOptions { checked: true }, &mut NoopObserver)
            .map_err(|e| e.to_string())?;
        let v = scalar(&out);
        ensure(v == want, || format!("k={keep}: {v}, expected {want}"))?;
        got.push(format!("k={keep} -> {v}"));
    }
    Ok(got.join(", "))
}

fn round_trip() -> Outcome {
    let entries = full_corpus();
    let mut sources = Vec::new();
    for e in &entries {
        let once = emit_program(&parse(&e.source));
        let twice = emit_program(&parse(&once));
        ensure(once == twice, || format!("{}: emit(parse(.)) is not a fixpoint", e.name))?;
        sources.push(once);
    }
    let generate = || -> Result<Vec<String>, String> {
        let d = Differentiator::new();
        entries
            .iter()
            .map(|e| {
                d.grad(&parse(&e.source), &e.function, &GradOptions::new(e.wrt.clone()))
                    .map(|g| g.source.clone())
                    .map_err(|err| format!("{}: {err}", e.name))
            })
            .collect()
    };
    let (a, b) = (generate()?, generate()?);
    for ((e, x), y) in entries.iter().zip(&a).zip(&b) {
        ensure(x == y, || format!("{}: generated source differs between runs", e.name))?;
        let again = emit_program(&parse(x));
        ensure(&again == x, || format!("{}: generated source does not round-trip", e.name))?;
    }
    let cli = |_: usize| {
        Command::new(env!("CARGO_BIN_EXE_gradgen"))
            .current_dir(programs())
            .args(["grad", "mlp.tsl", "mlp", "--wrt", "1,2,3,4"])
            .output()
            .map(|o| o.stdout)
            .map_err(|e| e.to_string())
    };
    ensure(cli(0)? == cli(1)?, || "CLI output differs between processes".into())?;
    Ok(format!("{} programs and their gradients", entries.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("square golden", square_golden),
        ("injection semantics", injection),
        ("loop/conditional program", loop_program),
        ("mlp end-to-end", mlp_end_to_end),
        ("ahead-of-time, no runtime overhead", ahead_of_time),
        ("optimizer soundness", optimizer_soundness),
        ("stack balance", stack_balance),
        ("activity soundness", activity_soundness),
        ("truncated loop adjoint", truncation),
        ("round-trip and determinism", round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
