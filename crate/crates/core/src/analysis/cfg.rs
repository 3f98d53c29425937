use std::fmt::Write as _;

use crate::ast::{FunctionDef, Stmt};
use crate::diag::Diagnostic;
use crate::frontend::stmt_summary;

use super::StmtTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Fallthrough,
    TrueBranch,
    FalseBranch,
    LoopBack,
}

impl EdgeKind {
    fn label(self) -> &'static str {
        match self {
            EdgeKind::Fallthrough => "",
            EdgeKind::TrueBranch => "true",
            EdgeKind::FalseBranch => "false",
            EdgeKind::LoopBack => "loop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// A basic block: statement ids in execution order. A block ending in an
/// `if` or loop statement evaluates its condition there and branches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Block {
    pub stmts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    pub entry: usize,
    pub exit: usize,
    pub warnings: Vec<Diagnostic>,
}

impl Cfg {
    pub fn successors(&self, b: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == b)
    }

    pub fn predecessors(&self, b: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == b)
    }

    pub fn loop_back_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::LoopBack).count()
    }

    /// Graphviz rendering; each node lists the source lines of its statements.
    pub fn to_dot(&self, f: &FunctionDef, table: &StmtTable<'_>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", f.name);
        let _ = writeln!(out, "  node [shape=box, fontname=monospace];");
        for (i, b) in self.blocks.iter().enumerate() {
            let mut label = String::new();
            for id in &b.stmts {
                let s = table.stmt(*id);
                let _ = write!(label, "{}: {}\\l", s.span().line, escape(&stmt_summary(s)));
            }
            if label.is_empty() {
                label = if i == self.entry { "entry".into() } else { "join".into() };
            }
            let _ = writeln!(out, "  b{i} [label=\"{label}\"];");
        }
        for e in &self.edges {
            match e.kind {
                EdgeKind::Fallthrough => {
                    let _ = writeln!(out, "  b{} -> b{};", e.from, e.to);
                }
                k => {
                    let _ = writeln!(out, "  b{} -> b{} [label=\"{}\"];", e.from, e.to, k.label());
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Build the structured CFG of `f`. Comments are not placed in blocks.
pub fn build_cfg(f: &FunctionDef, table: &StmtTable<'_>) -> Cfg {
    let mut b = Builder {
        table,
        cfg: Cfg {
            blocks: vec![Block::default()],
            edges: Vec::new(),
            entry: 0,
            exit: 0,
            warnings: Vec::new(),
        },
    };
    let end = b.body(&f.body, 0);
    b.cfg.exit = end;
    b.cfg
}

struct Builder<'t, 'a> {
    table: &'t StmtTable<'a>,
    cfg: Cfg,
}

impl Builder<'_, '_> {
    fn new_block(&mut self) -> usize {
        self.cfg.blocks.push(Block::default());
        self.cfg.blocks.len() - 1
    }

    fn edge(&mut self, from: usize, to: usize, kind: EdgeKind) {
        self.cfg.edges.push(Edge { from, to, kind });
    }

    /// Lay out `stmts` starting in block `cur`; returns the block control
    /// reaches afterwards.
    fn body(&mut self, stmts: &[Stmt], mut cur: usize) -> usize {
        let mut returned = false;
        for s in stmts {
            if s.is_comment() {
                continue;
            }
            if returned {
                self.cfg.warnings.push(Diagnostic::warning(
                    "unreachable",
                    "statement after return is unreachable",
                    s.span(),
                ));
                continue;
            }
            let id = self.table.id(s);
            match s {
                Stmt::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    self.cfg.blocks[cur].stmts.push(id);
                    let then_b = self.new_block();
                    self.edge(cur, then_b, EdgeKind::TrueBranch);
                    let then_end = self.body(then_body, then_b);
                    let has_else = else_body.iter().any(|s| !s.is_comment());
                    let else_end = if has_else {
                        let else_b = self.new_block();
                        self.edge(cur, else_b, EdgeKind::FalseBranch);
                        Some(self.body(else_body, else_b))
                    } else {
                        None
                    };
                    let join = self.new_block();
                    self.edge(then_end, join, EdgeKind::Fallthrough);
                    match else_end {
                        Some(e) => self.edge(e, join, EdgeKind::Fallthrough),
                        None => self.edge(cur, join, EdgeKind::FalseBranch),
                    }
                    cur = join;
                }
                Stmt::ForRange { body, .. } | Stmt::While { body, .. } => {
                    let head = self.new_block();
                    self.edge(cur, head, EdgeKind::Fallthrough);
                    self.cfg.blocks[head].stmts.push(id);
                    let body_b = self.new_block();
                    self.edge(head, body_b, EdgeKind::TrueBranch);
                    let body_end = self.body(body, body_b);
                    self.edge(body_end, head, EdgeKind::LoopBack);
                    let post = self.new_block();
                    self.edge(head, post, EdgeKind::FalseBranch);
                    cur = post;
                }
                Stmt::Return { .. } => {
                    self.cfg.blocks[cur].stmts.push(id);
                    returned = true;
                }
                // grad_of bodies run in the adjoint; the primal sees one opaque statement.
                _ => self.cfg.blocks[cur].stmts.push(id),
            }
        }
        cur
    }
}
