use gradgen::ast::{FunctionDef, Stmt};
use gradgen::frontend::{emit, parse_str};
use gradgen::optimize::{copy_prop, dce, run_pipeline, simplify, PassConfig};
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{grad, GradOptions};

fn func(src: &str) -> FunctionDef {
    parse_str(src).unwrap().functions.remove(0)
}

fn optimized(src: &str) -> String {
    emit(&run_pipeline(&func(src), &PassConfig::default()).0)
}

#[test]
fn zero_then_accumulate_becomes_assignment() {
    let f = simplify(&func("def f(x):\n    dx = 0\n    dx += 2\n    return dx\n"));
    assert_eq!(emit(&f), "def f(x):\n    dx = 2\n    return dx\n");
}

#[test]
fn accumulation_inside_a_loop_is_kept() {
    let src = "def f(x, n):\n    dx = 0\n    for _ in range(n):\n        dx += x\n    return dx\n";
    assert_eq!(emit(&simplify(&func(src))), src);
    assert_eq!(optimized(src), src);
}

#[test]
fn multiplicative_identity() {
    let f = simplify(&func("def f(x):\n    y = x * 1.0\n    return y\n"));
    assert_eq!(emit(&f), "def f(x):\n    y = x\n    return y\n");
}

#[test]
fn adding_zero_is_kept_for_negative_zero() {
    // -0.0 + 0 is +0.0, so dropping the addition would change the bits
    let src = "def f(x):\n    y = x + 0.0\n    return y\n";
    assert_eq!(optimized(src), src);
    let p = parse_str(src).unwrap();
    let out = eval(&p, "f", &[Value::Scalar(-0.0)], &EvalOptions::default(), &mut NoopObserver).unwrap();
    assert_eq!(out[0].as_f64().unwrap().to_bits(), 0.0f64.to_bits());
}

#[test]
fn nothing_dead_is_unchanged() {
    let src = "def f(x):\n    return x\n";
    assert_eq!(optimized(src), src);
}

#[test]
fn empty_pipeline_is_identity() {
    let f = func("def f(x):\n    y = x * 1.0\n    z = 3.0\n    return y\n");
    let (g, w) = run_pipeline(&f, &PassConfig::none());
    assert_eq!(g, f);
    assert!(w.is_empty());
}

#[test]
fn dead_push_and_pop_go_together() {
    let src = "def f(x):\n    a = x\n    push(a, 0)\n    a = x * 2.0\n    a = pop(0)\n    return x\n";
    let g = dce(&func(src));
    assert_eq!(emit(&g), "def f(x):\n    return x\n");

    let live = "def f(x):\n    a = x\n    push(a, 0)\n    a = x * 2.0\n    a = pop(0)\n    return a\n";
    let g = dce(&func(live));
    assert!(emit(&g).contains("push(a, 0)"));
    assert!(emit(&g).contains("a = pop(0)"));
}

#[test]
fn copies_of_generated_temporaries_are_forwarded() {
    let g = copy_prop(&func("def f(x):\n    _t = x\n    y = _t * 2.0\n    return y\n"));
    assert_eq!(emit(&g), "def f(x):\n    _t = x\n    y = x * 2.0\n    return y\n");
    // user names are left alone
    let src = "def f(x):\n    t = x\n    y = t * 2.0\n    return y\n";
    assert_eq!(emit(&copy_prop(&func(src))), src);
}

#[test]
fn pipeline_turns_raw_square_gradient_into_the_listing() {
    let p = parse_str("def f(x):\n    return x * x\n").unwrap();
    let raw = grad(&p, "f", &GradOptions::new(vec![0]).unoptimized()).unwrap();
    let (g, w) = run_pipeline(&raw.fn_ast, &PassConfig::default());
    assert!(w.is_empty());
    let body: Vec<&Stmt> = g.body.iter().filter(|s| !s.is_comment()).collect();
    assert_eq!(body.len(), 5);
    assert_eq!(
        emit(&g),
        "def dfdx(x, by=1.0):\n    # Grad of: y = x * x\n    _bx = unbroadcast(by * x, x)\n    _bx2 = unbroadcast(by * x, x)\n    bx = _bx\n    bx = add_grad(bx, _bx2)\n    return bx\n"
    );
}

#[test]
fn non_convergence_warns() {
    let p = parse_str("def f(x):\n    return x * x\n").unwrap();
    let raw = grad(&p, "f", &GradOptions::new(vec![0]).unoptimized()).unwrap();
    let cfg = PassConfig {
        max_iterations: 1,
        ..PassConfig::default()
    };
    let (_, w) = run_pipeline(&raw.fn_ast, &cfg);
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].code, "no-fixpoint");
}
