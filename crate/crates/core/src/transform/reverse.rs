//! Reverse sweep over the forward plan.

use std::collections::{BTreeSet, HashMap};

use crate::ast::{BinOp, Expr, Span, Stmt};
use crate::registry::{accumulate, Contribution};

use super::gen::{Gen, LoopCount, Op, OpKind, Plan};
use super::TransformError;

/// Which adjoints hold a value at a program point. `init`: the adjoint
/// variable carries the current accumulated gradient. `bound`: the adjoint
/// variable exists at runtime (possibly stale), so `zeros_like` can use it.
/// Both are keyed by primal name.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct AdjState {
    pub init: BTreeSet<String>,
    pub bound: BTreeSet<String>,
}

impl AdjState {
    pub fn seeded(result: &str) -> Self {
        let s: BTreeSet<String> = [result.to_string()].into();
        AdjState {
            init: s.clone(),
            bound: s,
        }
    }
}

impl<'a, 'c> Gen<'a, 'c> {
    fn materialize(&mut self, v: &str, bound: &BTreeSet<String>) -> Stmt {
        let bv = self.names.adjoint(v);
        let like = if bound.contains(v) { bv.clone() } else { v.to_string() };
        Stmt::assign(bv, Expr::call("zeros_like", vec![Expr::name(like)]))
    }

    /// Make both branch states agree on which adjoints are initialized by
    /// zero-filling the missing ones at the end of each branch.
    fn join(&mut self, a: AdjState, a_out: &mut Vec<Stmt>, b: AdjState, b_out: &mut Vec<Stmt>) -> AdjState {
        let init: BTreeSet<String> = a.init.union(&b.init).cloned().collect();
        let mut a_bound = a.bound.clone();
        for v in init.difference(&a.init) {
            let s = self.materialize(v, &a.bound);
            a_out.push(s);
            a_bound.insert(v.clone());
        }
        let mut b_bound = b.bound.clone();
        for v in init.difference(&b.init) {
            let s = self.materialize(v, &b.bound);
            b_out.push(s);
            b_bound.insert(v.clone());
        }
        AdjState {
            init,
            bound: a_bound.intersection(&b_bound).cloned().collect(),
        }
    }

    /// `full == false` emits only the pops, restoring primal state without
    /// touching adjoints (truncated loop iterations).
    pub(super) fn rev_block(
        &mut self,
        plan: &[Plan],
        st: &mut AdjState,
        full: bool,
        out: &mut Vec<Stmt>,
    ) -> Result<(), TransformError> {
        for item in plan.iter().rev() {
            match item {
                Plan::Group { comment, ops } => {
                    let mut stmts = Vec::new();
                    let mut any = false;
                    for op in ops.iter().rev() {
                        let pop = op.restore.as_ref().map(|r| r.pop_stmt());
                        if op.restore_before {
                            stmts.extend(pop.clone());
                        }
                        if full {
                            let adj = self.op_adjoint(op, st)?;
                            any |= !adj.is_empty();
                            stmts.extend(adj);
                        }
                        if !op.restore_before {
                            stmts.extend(pop);
                        }
                    }
                    if any {
                        out.push(Stmt::comment(comment.clone()));
                    }
                    out.extend(stmts);
                }
                Plan::Restores(rs) => out.extend(rs.iter().rev().map(|r| r.pop_stmt())),
                Plan::If {
                    cond_var,
                    slot,
                    then_plan,
                    else_plan,
                } => {
                    out.push(Stmt::assign(cond_var, Expr::call("pop", vec![Expr::int(*slot)])));
                    let mut ts = st.clone();
                    let mut t_out = Vec::new();
                    self.rev_block(then_plan, &mut ts, full, &mut t_out)?;
                    let mut es = st.clone();
                    let mut e_out = Vec::new();
                    self.rev_block(else_plan, &mut es, full, &mut e_out)?;
                    if full {
                        *st = self.join(ts, &mut t_out, es, &mut e_out);
                    }
                    if !t_out.is_empty() || !e_out.is_empty() {
                        out.push(Stmt::If {
                            cond: Expr::name(cond_var),
                            then_body: t_out,
                            else_body: e_out,
                            span: Span::default(),
                        });
                    }
                }
                Plan::Loop {
                    ordinal,
                    counter,
                    var,
                    var_restore,
                    count,
                    body,
                } => {
                    let count_expr = match count {
                        LoopCount::Expr(e) => e.clone(),
                        LoopCount::Popped { trip, slot } => {
                            out.push(Stmt::assign(trip, Expr::call("pop", vec![Expr::int(*slot)])));
                            Expr::name(trip)
                        }
                    };
                    let keep = if full { self.truncations.get(ordinal).copied() } else { None };
                    let before = st.clone();
                    let mut entry = st.clone();
                    let (mut b_out, exit) = loop {
                        entry.bound = before.bound.union(&entry.init.difference(&before.init).cloned().collect()).cloned().collect();
                        let mut s = entry.clone();
                        let mut b_out = Vec::new();
                        if let Some(v) = var {
                            // var = count - 1 - k
                            let idx = Expr::binary(
                                BinOp::Sub,
                                Expr::binary(BinOp::Sub, count_expr.clone(), Expr::int(1)),
                                Expr::name(counter),
                            );
                            b_out.push(Stmt::assign(v, idx));
                        }
                        match keep {
                            Some(k) => {
                                let mut ts = s.clone();
                                let mut t_out = Vec::new();
                                self.rev_block(body, &mut ts, true, &mut t_out)?;
                                let mut es = s.clone();
                                let mut e_out = Vec::new();
                                self.rev_block(body, &mut es, false, &mut e_out)?;
                                s = self.join(ts, &mut t_out, es, &mut e_out);
                                b_out.push(Stmt::If {
                                    cond: Expr::binary(BinOp::Lt, Expr::name(counter), Expr::int(k as i64)),
                                    then_body: t_out,
                                    else_body: e_out,
                                    span: Span::default(),
                                });
                            }
                            None => self.rev_block(body, &mut s, full, &mut b_out)?,
                        }
                        if !full || s.init.is_subset(&entry.init) {
                            break (b_out, s);
                        }
                        entry.init.extend(s.init.iter().cloned());
                    };
                    if full {
                        for v in entry.init.difference(&before.init).cloned().collect::<Vec<_>>() {
                            let m = self.materialize(&v, &before.bound);
                            out.push(m);
                        }
                        for v in entry.init.difference(&exit.init).cloned().collect::<Vec<_>>() {
                            let m = self.materialize(&v, &exit.bound);
                            b_out.push(m);
                        }
                        *st = entry;
                    }
                    out.push(Stmt::ForRange {
                        var: counter.clone(),
                        count: count_expr,
                        body: b_out,
                        span: Span::default(),
                    });
                    if let Some(r) = var_restore {
                        out.push(r.pop_stmt());
                    }
                }
            }
        }
        Ok(())
    }

    fn write(&mut self, contribs: Vec<Contribution>, st: &mut AdjState, reads: Option<&str>) -> Vec<Stmt> {
        let initialized: BTreeSet<String> = st
            .init
            .clone()
            .iter()
            .map(|p| self.names.adjoint(p))
            .collect();
        for c in &contribs {
            st.init.insert(c.primal.clone());
            st.bound.insert(c.primal.clone());
        }
        accumulate(contribs, &mut self.names, &initialized, reads)
    }

    fn op_adjoint(&mut self, op: &Op, st: &mut AdjState) -> Result<Vec<Stmt>, TransformError> {
        let target = op.kind.target().to_string();
        if let OpKind::Element { index, value, .. } = &op.kind {
            if !st.init.contains(&target) {
                return Ok(Vec::new());
            }
            let ba = self.names.adjoint(&target);
            let mut out = Vec::new();
            if let Some(w) = value {
                let c = Contribution {
                    primal: w.clone(),
                    adjoint: self.names.adjoint(w),
                    value: Expr::index(Expr::name(&ba), index.clone()),
                };
                out.extend(self.write(vec![c], st, Some(&ba)));
            }
            out.push(Stmt::IndexAssign {
                target: ba,
                index: index.clone(),
                value: Expr::float(0.0),
                span: Span::default(),
            });
            return Ok(out);
        }
        let live = st.init.remove(&target);
        if !live || !op.active() {
            return Ok(Vec::new());
        }
        let br = self.names.adjoint(&target);
        match &op.kind {
            OpKind::Template { template, binding, .. } => {
                let t = self.registry.get(template)?;
                let contribs: Vec<Contribution> = t
                    .instantiate(binding, &mut self.names)?
                    .into_iter()
                    .filter(|c| op.active_operands.contains(&c.primal))
                    .collect();
                Ok(self.write(contribs, st, Some(&br)))
            }
            OpKind::Copy { source, .. } => {
                let Some(w) = source else { return Ok(Vec::new()) };
                let c = Contribution {
                    primal: w.clone(),
                    adjoint: self.names.adjoint(w),
                    value: Expr::name(&br),
                };
                Ok(self.write(vec![c], st, Some(&br)))
            }
            OpKind::Call { callee, args, .. } => self.call_adjoint(callee, args, &br, op, st),
            OpKind::Element { .. } | OpKind::Passive { .. } => Ok(Vec::new()),
        }
    }

    fn call_adjoint(
        &mut self,
        callee: &str,
        args: &[Expr],
        br: &str,
        op: &Op,
        st: &mut AdjState,
    ) -> Result<Vec<Stmt>, TransformError> {
        let positions: Vec<usize> = args
            .iter()
            .enumerate()
            .filter(|(_, a)| a.as_name().is_some_and(|n| op.active_operands.contains(n)))
            .map(|(i, _)| i)
            .collect();
        if callee == self.function {
            return Err(TransformError::Recursion(format!("{callee} -> {callee}")));
        }
        let g = (self.callee_grad)(callee, positions.clone())?;
        if !self.callees.iter().any(|c| c.name() == g.name()) {
            self.callees.push(g.clone());
        }
        let mut call_args = args.to_vec();
        call_args.push(Expr::name(br));
        let call = Expr::call(g.name(), call_args);
        let primals: Vec<String> = positions
            .iter()
            .map(|i| args[*i].as_name().unwrap().to_string())
            .collect();

        let mut out = Vec::new();
        if primals.len() == 1 && !st.init.contains(&primals[0]) {
            let ba = self.names.adjoint(&primals[0]);
            st.init.insert(primals[0].clone());
            st.bound.insert(primals[0].clone());
            out.push(Stmt::assign(ba, call));
            return Ok(out);
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        let temps: Vec<String> = primals
            .iter()
            .map(|p| {
                let k = seen.entry(p).or_default();
                *k += 1;
                self.names.temp(p, *k)
            })
            .collect();
        if temps.len() == 1 {
            out.push(Stmt::assign(&temps[0], call));
        } else {
            out.push(Stmt::MultiAssign {
                targets: temps.clone(),
                value: call,
                span: Span::default(),
            });
        }
        for (p, t) in primals.iter().zip(&temps) {
            let bp = self.names.adjoint(p);
            let v = if st.init.contains(p) {
                Expr::call("add_grad", vec![Expr::name(&bp), Expr::name(t)])
            } else {
                Expr::name(t)
            };
            st.init.insert(p.clone());
            st.bound.insert(p.clone());
            out.push(Stmt::assign(bp, v));
        }
        Ok(out)
    }
}
