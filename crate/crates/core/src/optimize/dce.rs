use std::collections::BTreeSet;

use crate::ast::{Expr, FunctionDef, Literal, Stmt, UnaryOp};

/// Dead code elimination by backward liveness over the structured body.
/// Roots are the return value, `print` and live stack pushes. A stack slot
/// is live when any of its pops defines a live value; dead slots lose both
/// their pushes and their pops so the stack stays balanced.
pub fn dce(f: &FunctionDef) -> FunctionDef {
    let mut slots = BTreeSet::new();
    loop {
        let mut pass = Sweep {
            live_slots: &slots,
            found: BTreeSet::new(),
        };
        let body = pass.block(&f.body, &BTreeSet::new()).0;
        if pass.found.is_subset(&slots) {
            return FunctionDef {
                body: drop_dangling_comments(body),
                ..f.clone()
            };
        }
        slots.extend(pass.found);
    }
}

fn slot_of(e: &Expr) -> Option<i64> {
    match e {
        Expr::Call { func, args, .. } if func == "pop" && args.len() == 1 => match &args[0] {
            Expr::Lit(Literal::Int(n), _) => Some(*n),
            _ => None,
        },
        _ => None,
    }
}

fn push_of(s: &Stmt) -> Option<(&Expr, i64)> {
    match s {
        Stmt::ExprStmt {
            value: Expr::Call { func, args, .. },
            ..
        } if func == "push" && args.len() == 2 => match &args[1] {
            Expr::Lit(Literal::Int(n), _) => Some((&args[0], *n)),
            _ => None,
        },
        _ => None,
    }
}

struct Sweep<'s> {
    live_slots: &'s BTreeSet<i64>,
    found: BTreeSet<i64>,
}

type Live = BTreeSet<String>;

impl Sweep<'_> {
    /// Returns the surviving statements and the names live on entry.
    fn block(&mut self, stmts: &[Stmt], live_out: &Live) -> (Vec<Stmt>, Live) {
        let mut live = live_out.clone();
        let mut kept = Vec::with_capacity(stmts.len());
        for s in stmts.iter().rev() {
            if let Some(s) = self.stmt(s, &mut live) {
                kept.push(s);
            }
        }
        kept.reverse();
        (kept, live)
    }

    fn stmt(&mut self, s: &Stmt, live: &mut Live) -> Option<Stmt> {
        match s {
            Stmt::Assign { target, value, .. } => {
                let slot = slot_of(value);
                let needed = live.contains(target);
                if needed {
                    if let Some(n) = slot {
                        self.found.insert(n);
                    }
                }
                let keep = needed || slot.is_some_and(|n| self.live_slots.contains(&n));
                if !keep {
                    return None;
                }
                live.remove(target);
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::MultiAssign { targets, value, .. } => {
                if !targets.iter().any(|t| live.contains(t)) {
                    return None;
                }
                for t in targets {
                    live.remove(t);
                }
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::AugAssign { target, value, .. } => {
                if !live.contains(target) {
                    return None;
                }
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::IndexAssign {
                target,
                index,
                value,
                ..
            } => {
                let slot = slot_of(value);
                let needed = live.contains(target);
                if needed {
                    if let Some(n) = slot {
                        self.found.insert(n);
                    }
                }
                if !(needed || slot.is_some_and(|n| self.live_slots.contains(&n))) {
                    return None;
                }
                live.insert(target.clone());
                index.collect_reads(live);
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::ExprStmt { value, .. } => {
                if let Some((arg, n)) = push_of(s) {
                    if !self.live_slots.contains(&n) {
                        return None;
                    }
                    arg.collect_reads(live);
                    return Some(s.clone());
                }
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::Return { value, .. } => {
                live.clear();
                value.collect_reads(live);
                Some(s.clone())
            }
            Stmt::Comment(..) => Some(s.clone()),
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => {
                let (t, lt) = self.block(then_body, live);
                let (e, le) = self.block(else_body, live);
                if t.iter().all(Stmt::is_comment) && e.iter().all(Stmt::is_comment) {
                    return None;
                }
                *live = lt;
                live.extend(le);
                cond.collect_reads(live);
                Some(if t.iter().all(Stmt::is_comment) {
                    Stmt::If {
                        cond: negate(cond),
                        then_body: e,
                        else_body: Vec::new(),
                        span: *span,
                    }
                } else {
                    Stmt::If {
                        cond: cond.clone(),
                        then_body: t,
                        else_body: e,
                        span: *span,
                    }
                })
            }
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => {
                let (b, entry) = self.loop_body(body, live, Some(var));
                if b.iter().all(Stmt::is_comment) && !live.contains(var) {
                    return None;
                }
                live.extend(entry);
                count.collect_reads(live);
                Some(Stmt::ForRange {
                    var: var.clone(),
                    count: count.clone(),
                    body: b,
                    span: *span,
                })
            }
            Stmt::While { cond, body, span } => {
                let mut after = live.clone();
                cond.collect_reads(&mut after);
                let (b, entry) = self.loop_body(body, &after, None);
                if b.iter().all(Stmt::is_comment) {
                    return None;
                }
                *live = after;
                live.extend(entry);
                Some(Stmt::While {
                    cond: cond.clone(),
                    body: b,
                    span: *span,
                })
            }
            Stmt::GradOf { param, body, .. } => {
                // only present in user code; the block reads and writes its alias
                let mut inner = live.clone();
                for s in body {
                    s.visit(&mut |t| {
                        for e in t.exprs() {
                            e.collect_reads(&mut inner);
                        }
                    });
                }
                live.extend(inner);
                live.insert(param.clone());
                Some(s.clone())
            }
        }
    }

    /// Iterate the body until the set live at its entry stops growing.
    fn loop_body(&mut self, body: &[Stmt], live_out: &Live, var: Option<&String>) -> (Vec<Stmt>, Live) {
        let mut exit = live_out.clone();
        loop {
            let found_before = self.found.clone();
            let (b, mut entry) = self.block(body, &exit);
            if let Some(v) = var {
                entry.remove(v);
            }
            let mut next = live_out.clone();
            next.extend(entry.iter().cloned());
            if next == exit {
                return (b, entry);
            }
            self.found = found_before;
            exit = next;
        }
    }
}

fn negate(cond: &Expr) -> Expr {
    match cond {
        Expr::Unary {
            op: UnaryOp::Not,
            operand,
            ..
        } => (**operand).clone(),
        other => Expr::unary(UnaryOp::Not, other.clone()),
    }
}

/// Drop comments that no longer precede a statement in their block.
fn drop_dangling_comments(stmts: Vec<Stmt>) -> Vec<Stmt> {
    let mut out: Vec<Stmt> = Vec::with_capacity(stmts.len());
    let mut pending: Vec<Stmt> = Vec::new();
    for s in stmts {
        let s = match s {
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => Stmt::If {
                cond,
                then_body: drop_dangling_comments(then_body),
                else_body: drop_dangling_comments(else_body),
                span,
            },
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => Stmt::ForRange {
                var,
                count,
                body: drop_dangling_comments(body),
                span,
            },
            Stmt::While { cond, body, span } => Stmt::While {
                cond,
                body: drop_dangling_comments(body),
                span,
            },
            other => other,
        };
        if s.is_comment() {
            // a generated group header directly followed by another comment lost its group
            pending.retain(|c| !matches!(c, Stmt::Comment(t, _) if t.starts_with("Grad of:")));
            pending.push(s);
        } else {
            out.append(&mut pending);
            out.push(s);
        }
    }
    out
}
