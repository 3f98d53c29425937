//! Test corpus: the hand-written programs plus seeded random programs in
//! the differentiable subset (straight-line code, branches, `for` and
//! `while` loops, element assignment, helper calls).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check::{InputSpec, InputSpecs};

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub source: String,
    pub function: String,
    pub specs: Vec<InputSpec>,
    pub wrt: Vec<usize>,
}

const HAND_WRITTEN: &[(&str, &str, &str, &[usize])] = &[
    ("square", include_str!("../../../programs/square.tsl"), include_str!("../../../programs/square.inputs.json"), &[0]),
    ("loop", include_str!("../../../programs/loop.tsl"), include_str!("../../../programs/loop.inputs.json"), &[0]),
    ("inject", include_str!("../../../programs/inject.tsl"), include_str!("../../../programs/inject.inputs.json"), &[0]),
    ("halving", include_str!("../../../programs/halving.tsl"), include_str!("../../../programs/halving.inputs.json"), &[0]),
    ("mlp", include_str!("../../../programs/mlp.tsl"), include_str!("../../../programs/mlp.inputs.json"), &[1, 2, 3, 4]),
];

pub fn hand_written() -> Vec<CorpusEntry> {
    HAND_WRITTEN
        .iter()
        .map(|(name, src, specs, wrt)| {
            let s: InputSpecs = serde_json::from_str(specs).expect("bundled input spec");
            CorpusEntry {
                name: name.to_string(),
                source: src.to_string(),
                function: s.function,
                specs: s.params,
                wrt: wrt.to_vec(),
            }
        })
        .collect()
}

/// Hand-written programs followed by `n_random` generated ones.
pub fn corpus(seed: u64, n_random: usize) -> Vec<CorpusEntry> {
    let mut out = hand_written();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_random {
        out.push(random_program(&mut rng, i));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Scalar,
    Vector,
}

struct Writer<'r> {
    rng: &'r mut ChaCha8Rng,
    lines: Vec<String>,
    vars: Vec<(String, Kind)>,
    next: usize,
    helper: bool,
    loops: usize,
}

const LITERALS: &[&str] = &["0.5", "1.5", "2.0", "0.25", "3.0"];

impl Writer<'_> {
    fn pick(&mut self, kind: Option<Kind>) -> (String, Kind) {
        let pool: Vec<&(String, Kind)> = self
            .vars
            .iter()
            .filter(|(_, k)| kind.is_none_or(|want| *k == want))
            .collect();
        let (n, k) = pool.choose(self.rng).expect("nonempty pool");
        (n.clone(), *k)
    }

    fn leaf(&mut self, kind: Option<Kind>) -> (String, Kind) {
        if kind != Some(Kind::Vector) && self.rng.gen_bool(0.2) {
            return (LITERALS.choose(self.rng).unwrap().to_string(), Kind::Scalar);
        }
        self.pick(kind)
    }

    /// A bounded expression; `kind` forces the result kind when given.
    fn expr(&mut self, depth: usize, kind: Option<Kind>) -> (String, Kind) {
        if depth == 0 {
            return self.leaf(kind);
        }
        let choice = self.rng.gen_range(0..9);
        match (choice, kind) {
            (0, Some(Kind::Scalar)) | (0, None) => {
                let (v, _) = self.pick(Some(Kind::Vector));
                let f = ["sum", "mean"].choose(self.rng).unwrap();
                (format!("{f}({v})"), Kind::Scalar)
            }
            (1, Some(Kind::Scalar)) => {
                let (a, _) = self.pick(Some(Kind::Vector));
                let (b, _) = self.expr(depth - 1, Some(Kind::Vector));
                (format!("dot({a}, {b})"), Kind::Scalar)
            }
            (2, _) => {
                let (e, k) = self.expr(depth - 1, kind);
                (format!("tanh({e})"), k)
            }
            (3, _) => {
                let (e, k) = self.expr(depth - 1, kind);
                (format!("exp(tanh({e}))"), k)
            }
            (4, _) => {
                let (e, k) = self.expr(depth - 1, kind);
                (format!("log(1.0 + {} * {})", wrap(&e), wrap(&e)), k)
            }
            (5, _) => {
                let (e, k) = self.expr(depth - 1, kind);
                (format!("-{}", wrap(&e)), k)
            }
            (6, _) if self.helper => {
                let (a, k) = self.expr(depth - 1, kind);
                let (b, _) = self.expr(depth - 1, Some(Kind::Scalar));
                (format!("h({a}, {b})"), k)
            }
            (7, _) => {
                let (a, k) = self.expr(depth - 1, kind);
                let (b, _) = self.expr(depth - 1, Some(Kind::Scalar));
                (format!("{} / (1.0 + {} * {})", wrap(&a), wrap(&b), wrap(&b)), k)
            }
            _ => {
                let op = ["+", "-", "*"].choose(self.rng).unwrap();
                let (a, ka) = self.expr(depth - 1, kind);
                let other = if kind == Some(Kind::Scalar) { Some(Kind::Scalar) } else { None };
                let (b, kb) = self.expr(depth - 1, other);
                let k = if ka == Kind::Vector || kb == Kind::Vector { Kind::Vector } else { Kind::Scalar };
                (format!("{} {op} {}", wrap(&a), wrap(&b)), k)
            }
        }
    }

    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("v{}", self.next)
    }

    fn emit(&mut self, indent: usize, line: String) {
        self.lines.push(format!("{}{}", "    ".repeat(indent), line));
    }

    /// Reassignment that keeps the variable's kind and stays bounded
    /// inside loops.
    fn update(&mut self, indent: usize) {
        let (v, k) = self.pick(None);
        let (e, _) = self.expr(1, if k == Kind::Scalar { Some(Kind::Scalar) } else { None });
        let line = match self.rng.gen_range(0..4) {
            0 if self.loops > 0 => format!("{v} = {v} * 0.5 + 0.25 * tanh({e})"),
            0 => format!("{v} = {v} * {}", wrap(&e)),
            1 => format!("{v} += 0.5 * tanh({e})"),
            2 => format!("{v} *= 0.5"),
            _ => format!("{v} = tanh({v}) - 0.25 * {}", wrap(&e)),
        };
        self.emit(indent, line);
    }

    fn stmt(&mut self, indent: usize) {
        match self.rng.gen_range(0..10) {
            0..=2 => {
                let (e, k) = self.expr(2, None);
                let v = self.fresh();
                self.emit(indent, format!("{v} = {e}"));
                if indent == 1 {
                    self.vars.push((v, k));
                }
            }
            3 | 4 => self.update(indent),
            5 => {
                let (c, _) = self.pick(None);
                let cond = match self.vars.iter().find(|(n, _)| *n == c).unwrap().1 {
                    Kind::Vector => format!("sum({c}) > 0.3"),
                    Kind::Scalar => format!("{c} < 0.2"),
                };
                self.emit(indent, format!("if {cond}:"));
                self.update(indent + 1);
                if self.rng.gen_bool(0.5) {
                    self.emit(indent, "else:".into());
                    self.update(indent + 1);
                }
            }
            6 if self.loops == 0 => {
                let var = ["i", "_"].choose(self.rng).unwrap().to_string();
                self.emit(indent, format!("for {var} in range(n):"));
                self.loops += 1;
                for _ in 0..self.rng.gen_range(1..=2) {
                    self.update(indent + 1);
                }
                if var == "i" {
                    let (v, _) = self.pick(None);
                    self.emit(indent + 1, format!("{v} = {v} * (1.0 - 0.1 * i)"));
                }
                self.loops -= 1;
            }
            7 if self.loops == 0 => {
                self.emit(indent, "k = 0".into());
                self.emit(indent, "while k < n:".into());
                self.loops += 1;
                self.update(indent + 1);
                self.emit(indent + 1, "k += 1".into());
                self.loops -= 1;
            }
            8 => {
                let (v, _) = self.pick(Some(Kind::Vector));
                let (e, _) = self.expr(1, Some(Kind::Scalar));
                let i = self.rng.gen_range(0..3);
                self.emit(indent, format!("{v}[{i}] = tanh({e})"));
            }
            _ => {
                self.emit(indent, "m = n + 1".into());
                let (v, k) = self.pick(None);
                let s = if k == Kind::Vector { format!("sum({v})") } else { v.clone() };
                let c = self.fresh();
                self.emit(indent, format!("{c} = {s} * m"));
                if indent == 1 {
                    self.vars.push((c, Kind::Scalar));
                }
            }
        }
    }
}

fn wrap(e: &str) -> String {
    let simple = e.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.');
    let call = e.ends_with(')') && e.find('(').is_some_and(|i| e[..i].chars().all(|c| c.is_alphanumeric() || c == '_') && balanced_call(e, i));
    if simple || call {
        e.to_string()
    } else {
        format!("({e})")
    }
}

/// True when the parenthesis opened at `open` closes at the end of `e`.
fn balanced_call(e: &str, open: usize) -> bool {
    let mut depth = 0;
    for (i, c) in e.char_indices().skip(open) {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return i == e.len() - 1;
                }
            }
            _ => {}
        }
    }
    false
}

/// One random program `f(x, w, n)` with `x` a 3-vector, `w` a scalar and
/// `n` a small trip count; differentiated with respect to `x` and `w`.
pub fn random_program(rng: &mut ChaCha8Rng, index: usize) -> CorpusEntry {
    let helper = rng.gen_bool(0.4);
    let mut w = Writer {
        rng,
        lines: Vec::new(),
        vars: vec![("x".into(), Kind::Vector), ("w".into(), Kind::Scalar)],
        next: 0,
        helper,
        loops: 0,
    };
    for _ in 0..w.rng.gen_range(3..=7) {
        w.stmt(1);
    }
    let (a, ka) = w.pick(Some(Kind::Vector));
    let (b, _) = w.pick(Some(Kind::Scalar));
    let ret = if ka == Kind::Vector { format!("sum({a}) + {b}") } else { a };
    let v = w.fresh();
    w.emit(1, format!("{v} = {ret}"));
    w.emit(1, format!("return {v}"));

    let mut source = String::new();
    if helper {
        source.push_str("def h(a, b):\n    return tanh(a * b) + a\n\n");
    }
    source.push_str("def f(x, w, n):\n");
    for l in &w.lines {
        source.push_str(l);
        source.push('\n');
    }
    CorpusEntry {
        name: format!("random{index}"),
        source,
        function: "f".into(),
        specs: vec![
            InputSpec::Array {
                shape: vec![3],
                low: -1.0,
                high: 1.0,
            },
            InputSpec::Scalar { low: -1.0, high: 1.0 },
            InputSpec::Int { low: 1, high: 3 },
        ],
        wrt: vec![0, 1],
    }
}
