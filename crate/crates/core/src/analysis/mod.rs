//! Control flow graphs and forward dataflow over function bodies.

mod activity;
mod cfg;
mod defuse;

use std::collections::HashMap;

pub use activity::{activity, ActivityInfo};
pub use cfg::{build_cfg, Block, Cfg, Edge, EdgeKind};
pub use defuse::{def_use, stmt_defs, stmt_uses, DefUse};

use crate::ast::{FunctionDef, Stmt};

/// Pre-order numbering of every statement in a function body (nested
/// bodies included). Ids are stable for as long as the AST is borrowed.
pub struct StmtTable<'a> {
    stmts: Vec<&'a Stmt>,
    ids: HashMap<*const Stmt, usize>,
}

impl<'a> StmtTable<'a> {
    pub fn new(f: &'a FunctionDef) -> Self {
        let mut t = StmtTable {
            stmts: Vec::new(),
            ids: HashMap::new(),
        };
        fn walk<'a>(t: &mut StmtTable<'a>, body: &'a [Stmt]) {
            for s in body {
                t.ids.insert(s as *const Stmt, t.stmts.len());
                t.stmts.push(s);
                for b in s.bodies() {
                    walk(t, b);
                }
            }
        }
        walk(&mut t, &f.body);
        t
    }

    pub fn len(&self) -> usize {
        self.stmts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stmts.is_empty()
    }

    /// Id of a statement borrowed from the same function.
    pub fn id(&self, s: &Stmt) -> usize {
        self.ids[&(s as *const Stmt)]
    }

    pub fn try_id(&self, s: &Stmt) -> Option<usize> {
        self.ids.get(&(s as *const Stmt)).copied()
    }

    pub fn stmt(&self, id: usize) -> &'a Stmt {
        self.stmts[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &'a Stmt)> + '_ {
        self.stmts.iter().copied().enumerate()
    }
}
