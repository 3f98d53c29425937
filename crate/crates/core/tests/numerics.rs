use gradgen::ast::Span;
use gradgen::check::{check, finite_diff, sample_points, CheckError, Tolerance};
use gradgen::corpus::hand_written;
use gradgen::frontend::parse_str;
use gradgen::registry::Registry;
use gradgen::runtime::{eval, EvalOptions, NoopObserver, Observer, Value};
use gradgen::transform::{Differentiator, GradOptions};

fn mlp() -> gradgen::corpus::CorpusEntry {
    hand_written().into_iter().find(|e| e.name == "mlp").unwrap()
}

#[test]
fn central_differences_are_second_order() {
    // analytic derivatives, step large enough that truncation dominates round-off
    let cases = [
        ("def f(x):\n    return exp(x)\n", 0.7f64, 0.7f64.exp()),
        ("def f(x):\n    return tanh(x)\n", 0.4, 1.0 - 0.4f64.tanh().powi(2)),
        ("def f(x):\n    return log(x)\n", 1.5, 1.0 / 1.5),
    ];
    for (src, x, exact) in cases {
        let p = parse_str(src).unwrap();
        let err = |h: f64| {
            let g = finite_diff(&p, "f", &[Value::Scalar(x)], &[0], h).unwrap();
            (g[0][0] - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.0..=5.0).contains(&ratio), "{src}: ratio {ratio}");
    }
}

#[test]
fn mlp_oracle_has_the_weight_shape_and_agrees_with_one_sided_differences() {
    let e = mlp();
    let p = parse_str(&e.source).unwrap();
    let args = sample_points(&p, "mlp", &e.specs, 1, 2).unwrap().remove(0);
    let central = finite_diff(&p, "mlp", &args, &[1], 1e-6).unwrap().remove(0);
    assert_eq!(central.len(), 4 * 8);

    let eval_at = |a: &[Value]| eval(&p, "mlp", a, &EvalOptions::default(), &mut NoopObserver).unwrap()[0].as_f64().unwrap();
    let f0 = eval_at(&args);
    let w = args[1].to_f64_vec().unwrap();
    for (i, c) in central.iter().enumerate() {
        let h = 1e-7 * w[i].abs().max(1.0);
        let mut data = w.clone();
        data[i] += h;
        let mut a = args.clone();
        a[1] = Value::from_parts(vec![4, 8], data);
        let forward = (eval_at(&a) - f0) / h;
        if c.abs() > 1e-3 {
            assert!(((forward - c) / c).abs() < 1e-4, "w1[{i}]: {forward} vs {c}");
        } else {
            assert!((forward - c).abs() < 1e-7, "w1[{i}]: {forward} vs {c}");
        }
    }
}

#[test]
fn wrong_tanh_adjoint_is_caught() {
    let e = mlp();
    let p = parse_str(&e.source).unwrap();
    let mut r = Registry::with_builtins();
    r.load_source("def adjoint_tanh(result, arg1):\n    d[arg1] = d[result]\n", true).unwrap();
    let d = Differentiator::with_registry(r);
    let g = d.grad(&p, "mlp", &GradOptions::new(e.wrt.clone())).unwrap();
    let report = check(&p, "mlp", &g, &e.specs, 3, 0, Tolerance::default()).unwrap();
    assert!(!report.pass);
    assert!(!report.failures.is_empty());
}

#[test]
fn reports_are_deterministic_under_a_seed() {
    let e = mlp();
    let p = parse_str(&e.source).unwrap();
    let g = Differentiator::new().grad(&p, "mlp", &GradOptions::new(e.wrt.clone())).unwrap();
    let a = check(&p, "mlp", &g, &e.specs, 3, 9, Tolerance::default()).unwrap();
    let b = check(&p, "mlp", &g, &e.specs, 3, 9, Tolerance::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn discontinuity_dense_functions_are_refused() {
    let p = parse_str("def f(x):\n    if x > 0.5:\n        x = x * 2.0\n    return x\n").unwrap();
    let specs = [gradgen::check::InputSpec::Fixed {
        value: serde_json::json!(0.50001),
    }];
    assert!(matches!(
        sample_points(&p, "f", &specs, 2, 0),
        Err(CheckError::TooManyRejections(200))
    ));
}

#[test]
fn cross_entropy_matches_a_scalar_loop() {
    let e = mlp();
    let logits = [[0.3, -1.2, 0.8], [2.0, 0.1, -0.4]];
    let label = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
    let flat = |m: [[f64; 3]; 2]| Value::from_parts(vec![2, 3], m.iter().flatten().copied().collect());
    let prog = format!("{}\ndef loss(out, label):\n    return mean(softmax_crossent(out, label))\n", e.source);
    let p2 = parse_str(&prog).unwrap();
    let got = eval(&p2, "loss", &[flat(logits), flat(label)], &EvalOptions::default(), &mut NoopObserver).unwrap()[0]
        .as_f64()
        .unwrap();
    let mut want = 0.0;
    for (row, y) in logits.iter().zip(&label) {
        let mut z = 0.0;
        for v in row {
            z += v.exp();
        }
        for (v, t) in row.iter().zip(y) {
            want -= (v - z.ln()) * t;
        }
    }
    want /= 2.0;
    assert!((got - want).abs() < 1e-14, "{got} vs {want}");
}

#[derive(Default)]
struct Warnings(Vec<(String, Span)>);

impl Observer for Warnings {
    fn on_warning(&mut self, _function: &str, span: Span, message: &str) {
        self.0.push((message.to_string(), span));
    }
}

#[test]
fn checked_mode_warns_on_division_by_zero_and_bad_log() {
    let p = parse_str("def f(x):\n    a = 1.0 / x\n    b = log(x)\n    return a + b\n").unwrap();
    let mut w = Warnings::default();
    let out = eval(&p, "f", &[Value::Scalar(0.0)], &EvalOptions { checked: true }, &mut w).unwrap();
    assert!(out[0].as_f64().unwrap().is_nan());
    let messages: Vec<&str> = w.0.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(messages, ["division by zero", "log of a non-positive number"]);
    assert_eq!((w.0[0].1.line, w.0[1].1.line), (2, 3));

    let mut quiet = Warnings::default();
    eval(&p, "f", &[Value::Scalar(0.0)], &EvalOptions::default(), &mut quiet).unwrap();
    assert!(quiet.0.is_empty());
}
