use std::collections::{BTreeSet, VecDeque};

use crate::ast::{FunctionDef, Stmt};

use super::{stmt_uses, Cfg, StmtTable};

/// Result of forward activity analysis: which variables may depend on the
/// differentiation inputs before and after each statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityInfo {
    pub wrt: BTreeSet<String>,
    /// Indexed by statement id; comments get empty sets.
    pub active_in: Vec<BTreeSet<String>>,
    pub active_out: Vec<BTreeSet<String>>,
    /// A statement is active when it defines an active variable, returns an
    /// active value, injects into a wrt gradient, or encloses an active statement.
    pub active_stmt: Vec<bool>,
}

impl ActivityInfo {
    pub fn is_active(&self, id: usize) -> bool {
        self.active_stmt[id]
    }

    pub fn active_after(&self, id: usize, name: &str) -> bool {
        self.active_out[id].contains(name)
    }

    pub fn active_before(&self, id: usize, name: &str) -> bool {
        self.active_in[id].contains(name)
    }

    /// Every name that is active anywhere in the function.
    pub fn active_names(&self) -> BTreeSet<String> {
        let mut out = self.wrt.clone();
        for s in self.active_out.iter().chain(&self.active_in) {
            out.extend(s.iter().cloned());
        }
        out
    }
}

/// Transfer function of one statement. Assignments from an expression that
/// reads nothing active kill their target; element assignment only adds.
fn transfer(s: &Stmt, active: &mut BTreeSet<String>) {
    let reads_active = |s: &Stmt, active: &BTreeSet<String>| {
        s.exprs()
            .iter()
            .any(|e| e.reads().iter().any(|n| active.contains(n)))
    };
    match s {
        Stmt::Assign { target, .. } => {
            if reads_active(s, active) {
                active.insert(target.clone());
            } else {
                active.remove(target);
            }
        }
        Stmt::MultiAssign { targets, .. } => {
            let a = reads_active(s, active);
            for t in targets {
                if a {
                    active.insert(t.clone());
                } else {
                    active.remove(t);
                }
            }
        }
        Stmt::AugAssign { target, .. } | Stmt::IndexAssign { target, .. } => {
            if reads_active(s, active) {
                active.insert(target.clone());
            }
        }
        Stmt::ForRange { var, .. } => {
            active.remove(var);
        }
        _ => {}
    }
}

pub fn activity(
    f: &FunctionDef,
    table: &StmtTable<'_>,
    cfg: &Cfg,
    wrt: &BTreeSet<String>,
) -> ActivityInfo {
    let n = table.len();
    let mut info = ActivityInfo {
        wrt: wrt.clone(),
        active_in: vec![BTreeSet::new(); n],
        active_out: vec![BTreeSet::new(); n],
        active_stmt: vec![false; n],
    };
    let nb = cfg.blocks.len();
    let mut block_in: Vec<BTreeSet<String>> = vec![BTreeSet::new(); nb];
    let mut block_out: Vec<Option<BTreeSet<String>>> = vec![None; nb];
    block_in[cfg.entry] = wrt.clone();

    let mut work: VecDeque<usize> = (0..nb).collect();
    let mut queued = vec![true; nb];
    while let Some(b) = work.pop_front() {
        queued[b] = false;
        let mut cur = if b == cfg.entry {
            wrt.clone()
        } else {
            BTreeSet::new()
        };
        for e in cfg.predecessors(b) {
            if let Some(o) = &block_out[e.from] {
                cur.extend(o.iter().cloned());
            }
        }
        block_in[b] = cur.clone();
        for id in &cfg.blocks[b].stmts {
            transfer(table.stmt(*id), &mut cur);
        }
        if block_out[b].as_ref() != Some(&cur) {
            block_out[b] = Some(cur);
            for e in cfg.successors(b) {
                if !queued[e.to] {
                    queued[e.to] = true;
                    work.push_back(e.to);
                }
            }
        }
    }

    for (b, block) in cfg.blocks.iter().enumerate() {
        let mut cur = block_in[b].clone();
        for id in &block.stmts {
            info.active_in[*id] = cur.clone();
            transfer(table.stmt(*id), &mut cur);
            info.active_out[*id] = cur.clone();
        }
    }
    // Statements outside the CFG (inside grad_of bodies) see the state at
    // their enclosing statement.
    for (id, s) in table.iter() {
        if let Stmt::GradOf { body, .. } = s {
            let state = info.active_in[id].clone();
            for inner in body {
                inner.visit(&mut |t| {
                    let tid = table.id(t);
                    info.active_in[tid] = state.clone();
                    info.active_out[tid] = state.clone();
                });
            }
        }
    }

    for s in &f.body {
        mark(s, table, &mut info);
    }
    info
}

fn mark(s: &Stmt, table: &StmtTable<'_>, info: &mut ActivityInfo) -> bool {
    let id = table.id(s);
    let reads_active = stmt_uses(s).iter().any(|n| info.active_in[id].contains(n));
    let mut active = match s {
        Stmt::Assign { target, .. }
        | Stmt::AugAssign { target, .. }
        | Stmt::IndexAssign { target, .. } => info.active_out[id].contains(target) && reads_active,
        Stmt::MultiAssign { targets, .. } => {
            reads_active && targets.iter().any(|t| info.active_out[id].contains(t))
        }
        Stmt::Return { .. } => reads_active,
        Stmt::GradOf { param, .. } => info.wrt.contains(param),
        _ => false,
    };
    let nested: Vec<&Stmt> = s.bodies().into_iter().flatten().collect();
    if !matches!(s, Stmt::GradOf { .. }) {
        for inner in nested {
            active |= mark(inner, table, info);
        }
    }
    info.active_stmt[id] = active;
    active
}
