use std::collections::BTreeSet;

use crate::ast::{FunctionDef, Stmt};

use super::StmtTable;

/// Names written and read by each statement, indexed by statement id.
/// Compound statements only count their own header (condition, trip
/// count, loop variable), not their bodies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DefUse {
    pub defs: Vec<BTreeSet<String>>,
    pub uses: Vec<BTreeSet<String>>,
}

pub fn def_use(f: &FunctionDef) -> DefUse {
    let table = StmtTable::new(f);
    let mut du = DefUse::default();
    for (_, s) in table.iter() {
        du.defs.push(stmt_defs(s));
        du.uses.push(stmt_uses(s));
    }
    du
}

pub fn stmt_defs(s: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match s {
        Stmt::Assign { target, .. }
        | Stmt::AugAssign { target, .. }
        | Stmt::IndexAssign { target, .. } => {
            out.insert(target.clone());
        }
        Stmt::MultiAssign { targets, .. } => out.extend(targets.iter().cloned()),
        Stmt::ForRange { var, .. } => {
            out.insert(var.clone());
        }
        Stmt::GradOf { alias, .. } => {
            out.insert(alias.clone());
        }
        _ => {}
    }
    out
}

pub fn stmt_uses(s: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for e in s.exprs() {
        e.collect_reads(&mut out);
    }
    match s {
        Stmt::AugAssign { target, .. } | Stmt::IndexAssign { target, .. } => {
            out.insert(target.clone());
        }
        Stmt::GradOf { param, .. } => {
            out.insert(param.clone());
        }
        _ => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_str;

    fn first(src: &str) -> (BTreeSet<String>, BTreeSet<String>) {
        let p = parse_str(src).unwrap();
        let du = def_use(&p.functions[0]);
        (du.defs[0].clone(), du.uses[0].clone())
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn plain_assignment() {
        let (d, u) = first("def f(x):\n    y = x * x\n    return y\n");
        assert_eq!(d, set(&["y"]));
        assert_eq!(u, set(&["x"]));
    }

    #[test]
    fn index_assignment_is_a_partial_update() {
        let (d, u) = first("def f(a, i, b):\n    a[i] = b\n    return a\n");
        assert_eq!(d, set(&["a"]));
        assert_eq!(u, set(&["a", "b", "i"]));
    }

    #[test]
    fn augmented_assignment_reads_its_target() {
        let (d, u) = first("def f(x):\n    x /= 2\n    return x\n");
        assert_eq!(d, set(&["x"]));
        assert_eq!(u, set(&["x"]));
    }

    #[test]
    fn call_arguments_are_uses() {
        let (d, u) = first("def f(x, w):\n    h = tanh(dot(x, w))\n    return h\n");
        assert_eq!(d, set(&["h"]));
        assert_eq!(u, set(&["w", "x"]));
    }
}
