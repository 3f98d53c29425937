use gradgen::ast::Program;
use gradgen::check::{check, InputSpecs, Tolerance};
use gradgen::frontend::{emit, parse_str};
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{grad, truncate_loop_adjoint, GradOptions, TransformError};

fn programs_dir() -> String {
    format!("{}/../../programs", env!("CARGO_MANIFEST_DIR"))
}

fn load(name: &str) -> Program {
    parse_str(&std::fs::read_to_string(format!("{}/{name}.tsl", programs_dir())).unwrap()).unwrap()
}

fn specs(name: &str) -> InputSpecs {
    serde_json::from_str(&std::fs::read_to_string(format!("{}/{name}.inputs.json", programs_dir())).unwrap()).unwrap()
}

fn run(p: &Program, f: &str, args: &[Value]) -> Vec<Value> {
    eval(p, f, args, &EvalOptions { checked: true }, &mut NoopObserver).unwrap()
}

fn scalar_grad(src: &str, x: f64) -> f64 {
    let p = parse_str(src).unwrap();
    let g = grad(&p, &p.functions[0].name, &GradOptions::new(vec![0])).unwrap();
    run(&g.program_with(&p), g.name(), &[Value::Scalar(x)])[0].as_f64().unwrap()
}

#[test]
fn square_unoptimized_keeps_primal() {
    let p = load("square");
    let raw = grad(&p, "f", &GradOptions::new(vec![0]).unoptimized()).unwrap();
    assert!(raw.source.contains("    y = x * x\n"), "{}", raw.source);
    let g = grad(&p, "f", &GradOptions::new(vec![0])).unwrap();
    assert!(
        !g.fn_ast.body.iter().any(|s| matches!(s, gradgen::ast::Stmt::Assign { target, .. } if target == "y")),
        "{}",
        g.source
    );
    assert_eq!(run(&g.program_with(&p), g.name(), &[Value::Scalar(2.0)])[0].as_f64().unwrap(), 4.0);
}

#[test]
fn loop_gradient_matches_oracle() {
    let p = load("loop");
    let g = grad(&p, "loop", &GradOptions::new(vec![0])).unwrap();
    let s = specs("loop");
    let r = check(&p, "loop", &g, &s.params, 10, 5, Tolerance::default()).unwrap();
    assert!(r.pass, "{}\n{}", g.source, r.to_text());
    let out = run(&g.program_with(&p), g.name(), &[Value::vector(vec![0.9, 0.8]), Value::Int(3)]);
    assert_eq!(out[0].to_f64_vec().unwrap(), vec![0.5, 0.5]);
}

#[test]
fn mlp_gradient_matches_oracle() {
    let p = load("mlp");
    let g = grad(&p, "mlp", &GradOptions::new(vec![1, 2, 3, 4])).unwrap();
    let s = specs("mlp");
    let r = check(&p, "mlp", &g, &s.params, 3, 11, Tolerance::default()).unwrap();
    assert!(r.pass, "{}\n{}", g.source, r.to_text());
}

#[test]
fn injection_halves_gradient() {
    let p = load("inject");
    let g = grad(&p, "f", &GradOptions::new(vec![0])).unwrap();
    let out = run(&g.program_with(&p), g.name(), &[Value::Scalar(2.0)]);
    assert_eq!(out[0].as_f64().unwrap(), 2.0);
}

#[test]
fn empty_and_zeroing_injections() {
    assert_eq!(scalar_grad("def f(x):\n    with grad_of(x) as dx:\n        dx = dx\n    return x * x\n", 3.0), 6.0);
    assert_eq!(scalar_grad("def f(x):\n    with grad_of(x) as dx:\n        dx = 0.0\n    return x * x\n", 3.0), 0.0);
}

#[test]
fn grad_of_non_wrt_parameter_is_rejected() {
    let p = parse_str("def f(x, w):\n    with grad_of(w) as dw:\n        dw = 0.0\n    return x * w\n").unwrap();
    let e = grad(&p, "f", &GradOptions::new(vec![0])).unwrap_err();
    assert!(matches!(e, TransformError::GradOfTarget { .. }), "{e}");
}

#[test]
fn truncated_loop_adjoint() {
    let p = load("halving");
    let full = grad(&p, "f", &GradOptions::new(vec![0])).unwrap();
    let at = |g: &gradgen::transform::GradResult| run(&g.program_with(&p), g.name(), &[Value::Scalar(1.3)])[0].as_f64().unwrap();
    assert_eq!(at(&full), 0.0625);
    let base = GradOptions::new(vec![0]);
    assert_eq!(at(&truncate_loop_adjoint(&p, "f", &base, 0, 2).unwrap()), 0.25);
    assert_eq!(at(&truncate_loop_adjoint(&p, "f", &base, 0, 4).unwrap()), 0.0625);
    assert_eq!(at(&truncate_loop_adjoint(&p, "f", &base, 0, 9).unwrap()), 0.0625);
    assert_eq!(at(&truncate_loop_adjoint(&p, "f", &base, 0, 0).unwrap()), 1.0);
    assert!(matches!(
        truncate_loop_adjoint(&p, "f", &base, 1, 2),
        Err(TransformError::UnknownLoop(1))
    ));
}

#[test]
fn inactive_statement_passes_through() {
    let p = parse_str("def f(x, n):\n    k = n + 1\n    y = x * k\n    return y\n").unwrap();
    let g = grad(&p, "f", &GradOptions::new(vec![0])).unwrap();
    assert!(g.source.contains("k = n + 1"));
    assert!(!g.source.contains("bk"), "{}", g.source);
    assert!(!g.source.contains("bn"), "{}", g.source);
}

#[test]
fn higher_order_is_rejected() {
    let p = load("loop");
    let g = grad(&p, "loop", &GradOptions::new(vec![0])).unwrap();
    let gp = g.program_with(&p);
    let e = grad(&gp, g.name(), &GradOptions::new(vec![0])).unwrap_err();
    assert!(matches!(e, TransformError::HigherOrder { .. }), "{e}");
}

#[test]
fn recursion_is_rejected() {
    let p = parse_str("def f(x):\n    y = g(x)\n    return y\n\ndef g(x):\n    y = f(x)\n    return y\n").unwrap();
    let e = grad(&p, "f", &GradOptions::new(vec![0])).unwrap_err();
    assert!(matches!(e, TransformError::Recursion(_)), "{e}");
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let p = parse_str("def f(x, w):\n    return x * 2.0\n").unwrap();
    let g = grad(&p, "f", &GradOptions::new(vec![0, 1])).unwrap();
    let out = run(&g.program_with(&p), g.name(), &[Value::Scalar(1.0), Value::vector(vec![1.0, 2.0])]);
    assert_eq!(out[0].as_f64().unwrap(), 2.0);
    assert_eq!(out[1].to_f64_vec().unwrap(), vec![0.0, 0.0]);
}

#[test]
fn generated_source_reparses() {
    for (name, f, wrt) in [("loop", "loop", vec![0]), ("mlp", "mlp", vec![1, 2, 3, 4]), ("square", "f", vec![0])] {
        let p = load(name);
        for opt in [true, false] {
            let mut o = GradOptions::new(wrt.clone());
            o.optimize = opt;
            let g = grad(&p, f, &o).unwrap();
            let back = parse_str(&g.source).unwrap();
            assert_eq!(back.functions[0], g.fn_ast, "{}", g.source);
            assert_eq!(emit(&back.functions[0]), emit(&g.fn_ast));
        }
    }
}
