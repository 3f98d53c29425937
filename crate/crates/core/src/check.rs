//! Gradient verification against central finite differences.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{activity, build_cfg, stmt_defs, StmtTable};
use crate::ast::{Program, Span, Stmt};
use crate::runtime::{eval, EvalOptions, NoopObserver, Observer, RuntimeError, Value};
use crate::transform::GradResult;

pub const DEFAULT_H_SCALE: f64 = 1e-6;
pub const BOUNDARY_MARGIN: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("`{0}` returned a {1}, not a scalar; contract it with an explicit seed before checking")]
    NonScalar(String, &'static str),
    #[error("no usable input after {0} draws: every sample was within {BOUNDARY_MARGIN} of a branch boundary")]
    TooManyRejections(usize),
    #[error("{0} input specs given for {1} parameters")]
    Arity(usize, usize),
    #[error("gradient returned {got} values, expected {expected}")]
    GradArity { got: usize, expected: usize },
    #[error("wrt index {0} is not an array or scalar input")]
    BadWrt(usize),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// How to draw one argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Scalar { low: f64, high: f64 },
    Array { shape: Vec<usize>, low: f64, high: f64 },
    /// Uniform integer in `low..=high`.
    Int { low: i64, high: i64 },
    /// Rows of the last axis are one-hot with a random hot position.
    OneHot { shape: Vec<usize> },
    Fixed { value: serde_json::Value },
}

impl InputSpec {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Value, RuntimeError> {
        Ok(match self {
            InputSpec::Scalar { low, high } => Value::Scalar(rng.gen_range(*low..=*high)),
            InputSpec::Array { shape, low, high } => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(*low..=*high)).collect();
                Value::array(shape.clone(), data)?
            }
            InputSpec::Int { low, high } => Value::Int(rng.gen_range(*low..=*high)),
            InputSpec::OneHot { shape } => {
                let n: usize = shape.iter().product();
                let k = *shape.last().unwrap_or(&1);
                let mut data = vec![0.0; n];
                for row in 0..n / k.max(1) {
                    data[row * k + rng.gen_range(0..k)] = 1.0;
                }
                Value::array(shape.clone(), data)?
            }
            InputSpec::Fixed { value } => Value::from_json(value)?,
        })
    }
}

/// Per-parameter input description stored next to a program as
/// `<name>.inputs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpecs {
    pub function: String,
    pub params: Vec<InputSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub input: String,
    pub param: String,
    pub element: usize,
    pub got: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamError {
    pub param: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub function: String,
    pub wrt: Vec<usize>,
    pub points: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
    pub per_param: Vec<ParamError>,
    pub failures: Vec<Failure>,
}

impl CheckReport {
    /// The summary object with the stable key set.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "function": self.function,
            "wrt": self.wrt,
            "points": self.points,
            "max_rel_err": self.max_rel_err,
            "max_abs_err": self.max_abs_err,
            "pass": self.pass,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "function: {}\nwrt: {:?}\npoints: {}\n",
            self.function, self.wrt, self.points
        );
        for p in &self.per_param {
            s.push_str(&format!(
                "  {}: max_rel_err {:.3e}, max_abs_err {:.3e}\n",
                p.param, p.max_rel_err, p.max_abs_err
            ));
        }
        s.push_str(&format!(
            "max_rel_err: {:.3e}\nmax_abs_err: {:.3e}\n",
            self.max_rel_err, self.max_abs_err
        ));
        for f in self.failures.iter().take(10) {
            s.push_str(&format!(
                "  FAIL input {} {}[{}]: got {} expected {}\n",
                f.input, f.param, f.element, f.got, f.expected
            ));
        }
        if self.failures.len() > 10 {
            s.push_str(&format!("  ... {} more failures\n", self.failures.len() - 10));
        }
        s.push_str(if self.pass { "PASS\n" } else { "FAIL\n" });
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    /// Elements whose expected magnitude is at most this are compared
    /// absolutely against it.
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-5, abs: 1e-8 }
    }
}

fn scalar_output(function: &str, out: &[Value]) -> Result<f64, CheckError> {
    match out {
        [Value::Scalar(v)] => Ok(*v),
        [Value::Int(v)] => Ok(*v as f64),
        [other] => Err(CheckError::NonScalar(function.to_string(), other.kind())),
        _ => Err(CheckError::NonScalar(function.to_string(), "tuple")),
    }
}

fn eval_scalar(program: &Program, function: &str, args: &[Value]) -> Result<f64, CheckError> {
    let out = eval(program, function, args, &EvalOptions::default(), &mut NoopObserver)?;
    scalar_output(function, &out)
}

fn with_element(v: &Value, i: usize, x: f64) -> Value {
    match v {
        Value::Array(a) => {
            let mut data = a.data.clone();
            data[i] = x;
            Value::from_parts(a.shape.clone(), data)
        }
        _ => Value::Scalar(x),
    }
}

/// Central differences of a scalar-valued function with respect to each
/// listed argument, one entry per element, with step
/// `h_scale * max(1, |x_i|)`.
pub fn finite_diff(
    program: &Program,
    function: &str,
    args: &[Value],
    wrt: &[usize],
    h_scale: f64,
) -> Result<Vec<Vec<f64>>, CheckError> {
    eval_scalar(program, function, args)?;
    let mut grads = Vec::with_capacity(wrt.len());
    for &w in wrt {
        let base = args.get(w).ok_or(CheckError::BadWrt(w))?;
        let xs = match base {
            Value::Scalar(_) | Value::Array(_) => base.to_f64_vec()?,
            _ => return Err(CheckError::BadWrt(w)),
        };
        let mut g = Vec::with_capacity(xs.len());
        let mut a = args.to_vec();
        for (i, &x) in xs.iter().enumerate() {
            let h = h_scale * x.abs().max(1.0);
            let (xp, xm) = (x + h, x - h);
            a[w] = with_element(base, i, xp);
            let fp = eval_scalar(program, function, &a)?;
            a[w] = with_element(base, i, xm);
            let fm = eval_scalar(program, function, &a)?;
            // divide by the step actually taken after rounding
            g.push((fp - fm) / (xp - xm));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Flags evaluations in which some comparison is within the margin of
/// flipping.
#[derive(Default)]
struct BoundaryWatch {
    hit: bool,
}

impl Observer for BoundaryWatch {
    fn on_compare(&mut self, _function: &str, _span: Span, lhs: f64, rhs: f64) {
        if (lhs - rhs).abs() < BOUNDARY_MARGIN {
            self.hit = true;
        }
    }
}

/// True when evaluating `function` at `args` compares two numbers closer
/// than the boundary margin.
pub fn near_boundary(program: &Program, function: &str, args: &[Value]) -> Result<bool, RuntimeError> {
    let mut w = BoundaryWatch::default();
    eval(program, function, args, &EvalOptions::default(), &mut w)?;
    Ok(w.hit)
}

/// Draw `n` inputs away from branch boundaries. Deterministic in `seed`.
pub fn sample_points(
    program: &Program,
    function: &str,
    specs: &[InputSpec],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<Value>>, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let budget = 100 * n.max(1);
    let mut draws = 0;
    while out.len() < n {
        if draws == budget {
            return Err(CheckError::TooManyRejections(budget));
        }
        draws += 1;
        let args = specs
            .iter()
            .map(|s| s.sample(&mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        if !near_boundary(program, function, &args)? {
            out.push(args);
        }
    }
    Ok(out)
}

fn digest(args: &[Value]) -> String {
    let text = serde_json::Value::Array(args.iter().map(Value::to_json).collect()).to_string();
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Compare `grad` against finite differences of `function` at `n_points`
/// inputs drawn from `specs`.
/// (wrt position, element, gradient value, finite-difference value)
type Comparison = (usize, usize, f64, f64);

pub fn check(
    program: &Program,
    function: &str,
    grad: &GradResult,
    specs: &[InputSpec],
    n_points: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<CheckReport, CheckError> {
    let f = program
        .get(function)
        .ok_or_else(|| RuntimeError::new(format!("no function named `{function}`")))?;
    if specs.len() != f.params.len() {
        return Err(CheckError::Arity(specs.len(), f.params.len()));
    }
    let points = sample_points(program, function, specs, n_points, seed)?;
    let gp = grad.program_with(program);
    let names: Vec<String> = grad.wrt.iter().map(|w| f.params[*w].name.clone()).collect();

    let per_point: Vec<Result<Vec<Comparison>, CheckError>> = points
        .par_iter()
        .map(|args| {
            let got = eval(&gp, grad.name(), args, &EvalOptions::default(), &mut NoopObserver)?;
            if got.len() != grad.wrt.len() {
                return Err(CheckError::GradArity {
                    got: got.len(),
                    expected: grad.wrt.len(),
                });
            }
            let expected = finite_diff(program, function, args, &grad.wrt, DEFAULT_H_SCALE)?;
            let mut rows = Vec::new();
            for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
                let g = g.to_f64_vec()?;
                if g.len() != e.len() {
                    return Err(CheckError::Runtime(RuntimeError::new(format!(
                        "gradient for `{}` has {} elements, expected {}",
                        names[k],
                        g.len(),
                        e.len()
                    ))));
                }
                for (i, (a, b)) in g.iter().zip(e).enumerate() {
                    rows.push((k, i, *a, *b));
                }
            }
            Ok(rows)
        })
        .collect();

    let mut per_param: Vec<ParamError> = names
        .iter()
        .map(|n| ParamError {
            param: n.clone(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        })
        .collect();
    let mut failures = Vec::new();
    for (args, rows) in points.iter().zip(per_point) {
        let rows = rows?;
        let d = digest(args);
        for (k, i, got, expected) in rows {
            let abs = (got - expected).abs();
            let p = &mut per_param[k];
            let ok = if expected.abs() > tol.abs {
                let rel = abs / expected.abs();
                p.max_rel_err = p.max_rel_err.max(rel);
                rel <= tol.rel
            } else {
                p.max_abs_err = p.max_abs_err.max(abs);
                abs <= tol.abs
            };
            if !ok || got.is_nan() {
                failures.push(Failure {
                    input: d.clone(),
                    param: names[k].clone(),
                    element: i,
                    got,
                    expected,
                });
            }
        }
    }
    let max_rel_err = per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    let max_abs_err = per_param.iter().map(|p| p.max_abs_err).fold(0.0, f64::max);
    Ok(CheckReport {
        function: function.to_string(),
        wrt: grad.wrt.clone(),
        points: points.len(),
        max_rel_err,
        max_abs_err,
        pass: failures.is_empty(),
        per_param,
        failures,
    })
}

/// Sensitivity of one variable that activity analysis marked inactive at
/// one of its definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct InactiveSite {
    pub name: String,
    pub span: Span,
    /// Largest |finite difference| of the defined value with respect to any
    /// element of any differentiated input.
    pub max_abs_fd: f64,
}

/// Records every value bound at the watched definition sites, in order.
struct SiteRecorder<'s> {
    function: &'s str,
    sites: &'s [(Span, String)],
    values: Vec<Vec<f64>>,
}

impl Observer for SiteRecorder<'_> {
    fn on_assign(&mut self, function: &str, span: Span, name: &str, value: &Value) {
        if function != self.function {
            return;
        }
        if let Some(k) = self.sites.iter().position(|(s, n)| same_place(*s, span) && n == name) {
            if let Ok(v) = value.to_f64_vec() {
                self.values[k].extend(v);
            }
        }
    }
}

// spans compare equal regardless of position, so match on line and column
fn same_place(a: Span, b: Span) -> bool {
    (a.line, a.col) == (b.line, b.col)
}

fn record_sites(
    program: &Program,
    function: &str,
    sites: &[(Span, String)],
    args: &[Value],
) -> Result<Vec<Vec<f64>>, CheckError> {
    let mut r = SiteRecorder {
        function,
        sites,
        values: vec![Vec::new(); sites.len()],
    };
    eval(program, function, args, &EvalOptions::default(), &mut r)?;
    Ok(r.values)
}

/// Perturb each differentiated input element by the finite-difference step
/// and measure how much every inactive definition moves.
pub fn inactive_sensitivity(
    program: &Program,
    function: &str,
    wrt: &[usize],
    args: &[Value],
) -> Result<Vec<InactiveSite>, CheckError> {
    let f = program
        .get(function)
        .ok_or_else(|| RuntimeError::new(format!("no function named `{function}`")))?;
    let table = StmtTable::new(f);
    let cfg = build_cfg(f, &table);
    let mut wrt_names = BTreeSet::new();
    for &w in wrt {
        wrt_names.insert(f.params.get(w).ok_or(CheckError::BadWrt(w))?.name.clone());
    }
    let act = activity(f, &table, &cfg, &wrt_names);
    let mut sites: Vec<(Span, String)> = Vec::new();
    for (id, s) in table.iter() {
        for t in stmt_defs(s) {
            let defines = matches!(
                s,
                Stmt::Assign { .. } | Stmt::MultiAssign { .. } | Stmt::AugAssign { .. } | Stmt::IndexAssign { .. }
            );
            if defines && !act.active_after(id, &t) && !sites.iter().any(|(sp, n)| same_place(*sp, s.span()) && *n == t) {
                sites.push((s.span(), t));
            }
        }
    }
    let mut worst = vec![0.0f64; sites.len()];
    for &w in wrt {
        let base = args.get(w).ok_or(CheckError::BadWrt(w))?;
        let xs = base.to_f64_vec()?;
        let mut a = args.to_vec();
        for (i, &x) in xs.iter().enumerate() {
            let h = DEFAULT_H_SCALE * x.abs().max(1.0);
            let (xp, xm) = (x + h, x - h);
            a[w] = with_element(base, i, xp);
            let vp = record_sites(program, function, &sites, &a)?;
            a[w] = with_element(base, i, xm);
            let vm = record_sites(program, function, &sites, &a)?;
            for (k, (p, m)) in vp.iter().zip(&vm).enumerate() {
                if p.len() != m.len() {
                    // control flow changed under the perturbation
                    worst[k] = f64::INFINITY;
                    continue;
                }
                for (u, v) in p.iter().zip(m) {
                    let fd = ((u - v) / (xp - xm)).abs();
                    if fd > worst[k] || fd.is_nan() {
                        worst[k] = if fd.is_nan() { f64::INFINITY } else { fd };
                    }
                }
            }
        }
    }
    Ok(sites
        .into_iter()
        .zip(worst)
        .map(|((span, name), max_abs_fd)| InactiveSite { name, span, max_abs_fd })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_str;

    #[test]
    fn square_derivative_is_two_x() {
        let p = parse_str("def f(x):\n    return x * x\n").unwrap();
        let g = finite_diff(&p, "f", &[Value::Scalar(2.0)], &[0], DEFAULT_H_SCALE).unwrap();
        assert!((g[0][0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn exp_derivative_at_zero() {
        let p = parse_str("def f(x):\n    return exp(x)\n").unwrap();
        let g = finite_diff(&p, "f", &[Value::Scalar(0.0)], &[0], DEFAULT_H_SCALE).unwrap();
        assert!((g[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn array_output_is_rejected() {
        let p = parse_str("def f(x):\n    return x * 2.0\n").unwrap();
        let e = finite_diff(&p, "f", &[Value::vector(vec![1.0, 2.0])], &[0], DEFAULT_H_SCALE);
        assert!(matches!(e, Err(CheckError::NonScalar(..))));
    }

    #[test]
    fn sampling_is_deterministic_and_avoids_boundaries() {
        let p = parse_str("def f(x):\n    if x > 1.0:\n        x = x * 2.0\n    return x\n").unwrap();
        let specs = [InputSpec::Scalar { low: 0.9999, high: 1.0001 }];
        assert!(matches!(
            sample_points(&p, "f", &specs, 2, 1),
            Err(CheckError::TooManyRejections(200))
        ));
        let specs = [InputSpec::Scalar { low: 0.0, high: 2.0 }];
        let a = sample_points(&p, "f", &specs, 5, 9).unwrap();
        let b = sample_points(&p, "f", &specs, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = InputSpec::OneHot { shape: vec![4, 3] }.sample(&mut rng).unwrap();
        let d = v.to_f64_vec().unwrap();
        for row in d.chunks(3) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let s: InputSpecs = serde_json::from_str(
            r#"{"function": "loop", "params": [{"kind": "array", "shape": [2], "low": 0.1, "high": 2.0}, {"kind": "int", "low": 1, "high": 5}]}"#,
        )
        .unwrap();
        assert_eq!(s.params.len(), 2);
        let back: InputSpecs = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
