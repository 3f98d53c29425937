use std::path::PathBuf;
use std::process::{Command, Output};

fn programs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn gradgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradgen"))
        .current_dir(programs())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn grad_square_prints_the_gradient() {
    let o = gradgen(&["grad", "square.tsl", "f", "--wrt", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("def dfdx(x, by=1.0):"), "{s}");
    assert_eq!(s.matches("unbroadcast(by * x, x)").count(), 2);
    assert!(s.contains("add_grad(bx, _bx2)"));
}

#[test]
fn grad_mlp_has_four_adjoints() {
    let o = gradgen(&["grad", "mlp.tsl", "mlp", "--wrt", "1,2,3,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("return bw1, bb1, bwout, bbout"), "{s}");
}

#[test]
fn grad_writes_output_file_and_json() {
    let dir = std::env::temp_dir().join(format!("gradgen-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("dfdx.tsl");
    let o = gradgen(&["-O0", "grad", "square.tsl", "f", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("y = x * x"), "unoptimized output keeps the primal: {text}");

    let o = gradgen(&["--json", "grad", "square.tsl", "f"]);
    let j: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(j["name"], "dfdx");
    assert_eq!(j["adjoints"]["bx"], "x");
}

#[test]
fn missing_file_is_a_usage_error() {
    let o = gradgen(&["grad", "missing.tsl", "f", "--wrt", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("file not found"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(gradgen(&["grad"]).status.code(), Some(2));
    assert_eq!(gradgen(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(gradgen(&["bench", "--runs", "0"]).status.code(), Some(2));
}

#[test]
fn subset_violation_exits_one_with_diagnostics() {
    let dir = std::env::temp_dir().join(format!("gradgen-subset-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("rec.tsl");
    std::fs::write(&f, "def f(x):\n    while x > 0:\n        x = x - 1\n        return x\n    return x\n").unwrap();
    let o = gradgen(&["grad", f.to_str().unwrap(), "f"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn run_evaluates_generated_and_plain_functions() {
    let o = gradgen(&["run", "square.tsl", "dfdx", "--args", "[2.0]"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "4.0");

    let o = gradgen(&["run", "loop.tsl", "loop", "--args", "[[2.0,2.0], 1]"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "2.0");
}

#[test]
fn run_with_wrong_arity_is_a_usage_error() {
    let o = gradgen(&["run", "square.tsl", "f", "--args", "[1.0, 2.0]"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_context() {
    let o = gradgen(&["run", "loop.tsl", "loop", "--args", "[[1.0, 2.0], 2.5]"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("in loop at line"), "{}", stderr(&o));
}

#[test]
fn check_passes_on_bundled_programs() {
    let o = gradgen(&["check", "mlp.tsl", "mlp", "--wrt", "1,2,3,4", "--points", "5", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let o = gradgen(&["--json", "check", "loop.tsl", "loop", "--wrt", "0", "--points", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let j: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(j["pass"], true);
    assert_eq!(j["points"], 10);
}

#[test]
fn check_fails_with_a_corrupted_adjoint() {
    let dir = std::env::temp_dir().join(format!("gradgen-adj-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let adj = dir.join("bad.tsl");
    std::fs::write(&adj, "def adjoint_tanh(result, arg1):\n    d[arg1] = 2.0 * d[result]\n").unwrap();
    let o = gradgen(&["--adjoints", adj.to_str().unwrap(), "check", "mlp.tsl", "mlp", "--wrt", "1,2,3,4"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn opt_simplifies_user_code() {
    let dir = std::env::temp_dir().join(format!("gradgen-opt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("o.tsl");
    std::fs::write(&f, "def f(x):\n    a = x * 1.0\n    b = a + x\n    c = 3.0\n    return b\n").unwrap();
    let o = gradgen(&["opt", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "def f(x):\n    a = x\n    b = a + x\n    return b\n");
}

#[test]
fn bench_emits_csv() {
    let o = gradgen(&["bench", "--program", "loop", "--sizes", "1,2", "--runs", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "size,median_ns,mean_ns,first_call_ns");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[1].split(',').count(), 4);
}
