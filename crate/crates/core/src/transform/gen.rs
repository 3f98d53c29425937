//! Forward sweep: three-address decomposition of active statements, stack
//! pushes for overwritten values, and a plan the reverse sweep walks backwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::analysis::{activity, build_cfg, stmt_uses, ActivityInfo, StmtTable};
use crate::ast::{assigned_names, BinOp, Expr, FunctionDef, Param, Program, Span, Stmt, UnaryOp};
use crate::diag::Diagnostic;
use crate::frontend::stmt_summary;
use crate::registry::{Binding, Mangler, Registry};
use crate::runtime::{intrinsic_signature, INTRINSICS};

use super::normalize::{normalize, rename_stmts};
use super::{GradOptions, GradResult, SlotPurpose, StackSlot, TransformError};

pub(crate) type CalleeGrad<'c> = dyn FnMut(&str, Vec<usize>) -> Result<Arc<GradResult>, TransformError> + 'c;

pub(crate) struct Generated {
    pub def: FunctionDef,
    pub slots: Vec<StackSlot>,
    pub callees: Vec<Arc<GradResult>>,
    pub adjoints: BTreeMap<String, String>,
    pub warnings: Vec<Diagnostic>,
}

/// A saved value to pop back during the reverse sweep.
#[derive(Debug, Clone)]
pub(super) struct Restore {
    pub var: String,
    pub slot: i64,
    pub index: Option<Expr>,
}

impl Restore {
    pub fn pop_stmt(&self) -> Stmt {
        let value = Expr::call("pop", vec![Expr::int(self.slot)]);
        match &self.index {
            None => Stmt::assign(&self.var, value),
            Some(i) => Stmt::IndexAssign {
                target: self.var.clone(),
                index: i.clone(),
                value,
                span: Span::default(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub(super) enum OpKind {
    Template {
        target: String,
        template: String,
        binding: Binding,
    },
    Copy {
        target: String,
        source: Option<String>,
    },
    Call {
        target: String,
        callee: String,
        args: Vec<Expr>,
    },
    /// `a[i] = v`
    Element {
        target: String,
        index: Expr,
        value: Option<String>,
    },
    /// No adjoint: logic, constants, inactive operands.
    Passive { target: String },
}

impl OpKind {
    pub(super) fn target(&self) -> &str {
        match self {
            OpKind::Template { target, .. }
            | OpKind::Copy { target, .. }
            | OpKind::Call { target, .. }
            | OpKind::Element { target, .. }
            | OpKind::Passive { target } => target,
        }
    }

    fn retarget(&mut self, name: &str) {
        match self {
            OpKind::Template { target, binding, .. } => {
                binding.0.insert("result".into(), Expr::name(name));
                *target = name.to_string();
            }
            OpKind::Copy { target, .. }
            | OpKind::Call { target, .. }
            | OpKind::Element { target, .. }
            | OpKind::Passive { target } => *target = name.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub(super) struct Op {
    pub kind: OpKind,
    pub fwd: Expr,
    pub operands: BTreeSet<String>,
    pub active_operands: BTreeSet<String>,
    pub reads_result: bool,
    pub restore: Option<Restore>,
    pub restore_before: bool,
}

impl Op {
    pub fn active(&self) -> bool {
        !self.active_operands.is_empty()
    }
}

#[derive(Debug, Clone)]
pub(super) enum LoopCount {
    Expr(Expr),
    Popped { trip: String, slot: i64 },
}

#[derive(Debug, Clone)]
pub(super) enum Plan {
    Group { comment: String, ops: Vec<Op> },
    Restores(Vec<Restore>),
    If {
        cond_var: String,
        slot: i64,
        then_plan: Vec<Plan>,
        else_plan: Vec<Plan>,
    },
    Loop {
        ordinal: usize,
        counter: String,
        var: Option<String>,
        var_restore: Option<Restore>,
        count: LoopCount,
        body: Vec<Plan>,
    },
}

/// Template parameter name (if any) and the atom bound to it.
type Operand = (Option<String>, Expr);

pub(super) struct Gen<'a, 'c> {
    pub registry: &'a Registry,
    pub program: &'a Program,
    pub function: String,
    pub table: StmtTable<'a>,
    pub act: ActivityInfo,
    pub names: Mangler,
    pub slots: Vec<StackSlot>,
    pub callees: Vec<Arc<GradResult>>,
    pub callee_grad: &'c mut CalleeGrad<'c>,
    pub loop_ordinal: HashMap<usize, usize>,
    pub truncations: HashMap<usize, usize>,
    counters: HashMap<&'static str, usize>,
    no_save: BTreeSet<String>,
    loop_depth: usize,
}

pub(crate) fn generate<'c>(
    registry: &Registry,
    program: &Program,
    f: &FunctionDef,
    opts: &GradOptions,
    wrt: &[String],
    grad_name: &str,
    callee_grad: &'c mut CalleeGrad<'c>,
) -> Result<Generated, TransformError> {
    let mut taken = f.all_names();
    taken.extend(program.functions.iter().map(|g| g.name.clone()));
    taken.extend(INTRINSICS.iter().map(|(n, _)| n.to_string()));
    taken.extend(["range", "print", grad_name].map(String::from));
    let norm = normalize(f, &mut taken)?;
    for inj in &norm.injections {
        if !wrt.contains(&inj.param) {
            return Err(TransformError::GradOfTarget {
                param: inj.param.clone(),
                span: inj.span,
            });
        }
    }

    let table = StmtTable::new(&norm.def);
    let cfg = build_cfg(&norm.def, &table);
    let wrt_set: BTreeSet<String> = wrt.iter().cloned().collect();
    let act = activity(&norm.def, &table, &cfg, &wrt_set);

    let mut names = Mangler::new("b", taken);
    let seed = match &opts.seed_param {
        Some(s) => {
            names.pin(&norm.result, s);
            s.clone()
        }
        None => names.adjoint(&norm.result),
    };

    let mut loop_ordinal = HashMap::new();
    for (id, s) in table.iter() {
        if matches!(s, Stmt::ForRange { .. } | Stmt::While { .. }) {
            let n = loop_ordinal.len();
            loop_ordinal.insert(id, n);
        }
    }
    let mut truncations = HashMap::new();
    for t in &opts.truncations {
        if t.loop_id >= loop_ordinal.len() {
            return Err(TransformError::UnknownLoop(t.loop_id));
        }
        truncations.insert(t.loop_id, t.keep);
    }

    let body_stmts = &norm.def.body[..norm.def.body.len() - 1];
    let mut g = Gen {
        registry,
        program,
        function: f.name.clone(),
        table,
        act,
        names,
        slots: Vec::new(),
        callees: Vec::new(),
        callee_grad,
        loop_ordinal,
        truncations,
        counters: HashMap::new(),
        no_save: BTreeSet::new(),
        loop_depth: 0,
    };

    let mut body = Vec::new();
    let mut defined: BTreeSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
    let plan = g.fwd_block(body_stmts, &mut defined, &mut body)?;

    let saved_result = if opts.preserve_result {
        let r = g.names.fresh_name("result");
        body.push(Stmt::assign(&r, Expr::name(&norm.result)));
        Some(r)
    } else {
        None
    };

    let mut state = super::reverse::AdjState::seeded(&norm.result);
    g.rev_block(&plan, &mut state, true, &mut body)?;

    let mut returns = Vec::new();
    for p in wrt {
        let bp = g.names.adjoint(p);
        if !state.init.contains(p) {
            body.push(Stmt::assign(&bp, Expr::call("zeros_like", vec![Expr::name(p)])));
            state.init.insert(p.clone());
        }
        returns.push(bp);
    }
    for inj in &norm.injections {
        let bp = g.names.adjoint(&inj.param);
        body.extend(rename_stmts(&inj.body, &inj.alias, &bp));
    }
    let mut ret: Vec<Expr> = saved_result.iter().map(Expr::name).collect();
    ret.extend(returns.iter().map(Expr::name));
    let value = if ret.len() == 1 {
        ret.pop().unwrap()
    } else {
        Expr::Tuple(ret, Span::default())
    };
    body.push(Stmt::Return {
        value,
        span: Span::default(),
    });

    let mut params = f.params.clone();
    params.push(Param {
        name: seed,
        default: Some(Expr::float(1.0)),
    });
    Ok(Generated {
        def: FunctionDef {
            name: grad_name.to_string(),
            params,
            body,
            span: f.span,
        },
        slots: g.slots,
        callees: g.callees,
        adjoints: g.names.adjoint_map(),
        warnings: cfg.warnings,
    })
}

fn push_stmt(value: Expr, slot: i64) -> Stmt {
    Stmt::expr(Expr::call("push", vec![value, Expr::int(slot)]))
}

impl<'a, 'c> Gen<'a, 'c> {
    pub(super) fn fresh_indexed(&mut self, prefix: &'static str) -> String {
        let n = self.counters.entry(prefix).or_default();
        loop {
            let name = format!("{prefix}{n}");
            *n += 1;
            if !self.names.is_taken(&name) {
                self.names.reserve(&name);
                return name;
            }
        }
    }

    fn new_slot(&mut self, purpose: SlotPurpose, variable: Option<&str>) -> i64 {
        let id = self.slots.len() as i64;
        self.slots.push(StackSlot {
            id,
            purpose,
            variable: variable.map(String::from),
        });
        id
    }

    fn should_save(&self, name: &str, defined: &BTreeSet<String>) -> bool {
        !self.no_save.contains(name) && (defined.contains(name) || self.loop_depth > 0)
    }

    /// Push `name` when its current value may be needed later.
    fn save(&mut self, name: &str, defined: &BTreeSet<String>, out: &mut Vec<Stmt>) -> Option<Restore> {
        if !self.should_save(name, defined) {
            return None;
        }
        let slot = self.new_slot(SlotPurpose::OverwrittenValue, Some(name));
        out.push(push_stmt(Expr::name(name), slot));
        Some(Restore {
            var: name.to_string(),
            slot,
            index: None,
        })
    }

    fn fwd_block(
        &mut self,
        stmts: &'a [Stmt],
        defined: &mut BTreeSet<String>,
        out: &mut Vec<Stmt>,
    ) -> Result<Vec<Plan>, TransformError> {
        let mut plan = Vec::new();
        for s in stmts {
            self.fwd_stmt(s, defined, out, &mut plan)?;
        }
        Ok(plan)
    }

    fn fwd_stmt(
        &mut self,
        s: &'a Stmt,
        defined: &mut BTreeSet<String>,
        out: &mut Vec<Stmt>,
        plan: &mut Vec<Plan>,
    ) -> Result<(), TransformError> {
        let id = self.table.id(s);
        let active = self.act.is_active(id);
        match s {
            Stmt::Assign { target, value, .. } if active => {
                let mut live = self.act.active_in[id].clone();
                let mut pending = Vec::new();
                let atom = self.decompose(value, &mut pending, &mut live)?;
                let ops = self.finish_ops(target, atom, pending, &live);
                let mut done = Vec::new();
                for mut op in ops {
                    let t = op.kind.target().to_string();
                    if op.operands.len() == 1 && op.operands.contains(&t) && matches!(op.kind, OpKind::Copy { .. }) {
                        continue; // v = v
                    }
                    op.restore = self.save(&t, defined, out);
                    op.restore_before = op.operands.contains(&t);
                    out.push(Stmt::assign(&t, op.fwd.clone()));
                    defined.insert(t);
                    done.push(op);
                }
                plan.push(Plan::Group {
                    comment: format!("Grad of: {}", stmt_summary(s)),
                    ops: done,
                });
            }
            Stmt::Assign { target, .. } => {
                if let Some(r) = self.save(target, defined, out) {
                    plan.push(Plan::Restores(vec![r]));
                }
                out.push(s.clone());
                defined.insert(target.clone());
            }
            Stmt::MultiAssign { targets, span, .. } => {
                if active {
                    return Err(TransformError::Unsupported {
                        message: "assignment of several values from an active call is not differentiable".into(),
                        span: *span,
                    });
                }
                let mut rs = Vec::new();
                for t in targets {
                    rs.extend(self.save(t, defined, out));
                }
                if !rs.is_empty() {
                    plan.push(Plan::Restores(rs));
                }
                out.push(s.clone());
                defined.extend(targets.iter().cloned());
            }
            Stmt::IndexAssign {
                target,
                index,
                value,
                span,
            } => {
                let mut live = self.act.active_in[id].clone();
                let mut pending = Vec::new();
                let (idx, val) = if active {
                    let i = self.decompose(index, &mut pending, &mut live)?;
                    let v = self.decompose(value, &mut pending, &mut live)?;
                    (i, v)
                } else {
                    (index.clone(), value.clone())
                };
                let mut ops = Vec::new();
                for mut op in pending {
                    let t = op.kind.target().to_string();
                    op.restore = self.save(&t, defined, out);
                    out.push(Stmt::assign(&t, op.fwd.clone()));
                    ops.push(op);
                }
                let slot = self.new_slot(SlotPurpose::OverwrittenValue, Some(target));
                out.push(push_stmt(Expr::index(Expr::name(target), idx.clone()), slot));
                out.push(Stmt::IndexAssign {
                    target: target.clone(),
                    index: idx.clone(),
                    value: val.clone(),
                    span: *span,
                });
                let restore = Restore {
                    var: target.clone(),
                    slot,
                    index: Some(idx.clone()),
                };
                if !active {
                    plan.push(Plan::Restores(vec![restore]));
                    return Ok(());
                }
                let value_name = val.as_name().filter(|n| live.contains(*n)).map(String::from);
                ops.push(Op {
                    kind: OpKind::Element {
                        target: target.clone(),
                        index: idx,
                        value: value_name.clone(),
                    },
                    fwd: val.clone(),
                    operands: val.reads(),
                    active_operands: value_name.into_iter().chain([target.clone()]).collect(),
                    reads_result: false,
                    restore: Some(restore),
                    restore_before: false,
                });
                plan.push(Plan::Group {
                    comment: format!("Grad of: {}", stmt_summary(s)),
                    ops,
                });
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => {
                let c = self.fresh_indexed("_cond");
                self.no_save.insert(c.clone());
                let slot = self.new_slot(SlotPurpose::BranchFlag, None);
                out.push(Stmt::assign(&c, cond.clone()));
                let mut d1 = defined.clone();
                let mut t_out = Vec::new();
                let then_plan = self.fwd_block(then_body, &mut d1, &mut t_out)?;
                let mut d2 = defined.clone();
                let mut e_out = Vec::new();
                let else_plan = self.fwd_block(else_body, &mut d2, &mut e_out)?;
                defined.extend(d1);
                defined.extend(d2);
                out.push(Stmt::If {
                    cond: Expr::name(&c),
                    then_body: t_out,
                    else_body: e_out,
                    span: *span,
                });
                out.push(push_stmt(Expr::name(&c), slot));
                plan.push(Plan::If {
                    cond_var: c,
                    slot,
                    then_plan,
                    else_plan,
                });
            }
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => {
                let ordinal = self.loop_ordinal[&id];
                let assigned = assigned_names(body);
                let count_reads = count.reads();
                let stable = !count_reads.contains(var) && count_reads.is_disjoint(&assigned);
                let (count_fwd, count_plan) = if stable {
                    (count.clone(), LoopCount::Expr(count.clone()))
                } else {
                    let trip = self.fresh_indexed("_trip");
                    self.no_save.insert(trip.clone());
                    out.push(Stmt::assign(&trip, count.clone()));
                    let slot = self.new_slot(SlotPurpose::LoopTripCount, Some(&trip));
                    (Expr::name(&trip), LoopCount::Popped { trip, slot })
                };
                let var_restore = self.save(var, defined, out);
                let counter = self.fresh_indexed("_k");
                self.no_save.insert(counter.clone());
                defined.extend(assigned);
                defined.insert(var.clone());
                self.loop_depth += 1;
                let mut b_out = Vec::new();
                let body_plan = self.fwd_block(body, defined, &mut b_out);
                self.loop_depth -= 1;
                let body_plan = body_plan?;
                out.push(Stmt::ForRange {
                    var: var.clone(),
                    count: count_fwd,
                    body: b_out,
                    span: *span,
                });
                if let LoopCount::Popped { trip, slot } = &count_plan {
                    out.push(push_stmt(Expr::name(trip), *slot));
                }
                let reads_var = body.iter().any(|b| {
                    let mut r = false;
                    b.visit(&mut |t| r |= stmt_uses(t).contains(var));
                    r
                });
                plan.push(Plan::Loop {
                    ordinal,
                    counter,
                    var: reads_var.then(|| var.clone()),
                    var_restore,
                    count: count_plan,
                    body: body_plan,
                });
            }
            Stmt::While { cond, body, span } => {
                let ordinal = self.loop_ordinal[&id];
                let trip = self.fresh_indexed("_trip");
                self.no_save.insert(trip.clone());
                out.push(Stmt::assign(&trip, Expr::int(0)));
                let counter = self.fresh_indexed("_k");
                self.no_save.insert(counter.clone());
                defined.extend(assigned_names(body));
                self.loop_depth += 1;
                let mut b_out = vec![Stmt::assign(
                    &trip,
                    Expr::binary(BinOp::Add, Expr::name(&trip), Expr::int(1)),
                )];
                let body_plan = self.fwd_block(body, defined, &mut b_out);
                self.loop_depth -= 1;
                let body_plan = body_plan?;
                out.push(Stmt::While {
                    cond: cond.clone(),
                    body: b_out,
                    span: *span,
                });
                let slot = self.new_slot(SlotPurpose::LoopTripCount, Some(&trip));
                out.push(push_stmt(Expr::name(&trip), slot));
                plan.push(Plan::Loop {
                    ordinal,
                    counter,
                    var: None,
                    var_restore: None,
                    count: LoopCount::Popped { trip, slot },
                    body: body_plan,
                });
            }
            Stmt::ExprStmt { .. } | Stmt::Comment(..) => out.push(s.clone()),
            Stmt::Return { span, .. } | Stmt::GradOf { span, .. } | Stmt::AugAssign { span, .. } => {
                return Err(TransformError::Unsupported {
                    message: format!("unexpected `{}` after normalization", stmt_summary(s)),
                    span: *span,
                })
            }
        }
        Ok(())
    }

    /// Name the last op after the assignment target. When the last op reads
    /// its own target and the adjoint needs the result value, keep the
    /// temporary and copy it instead.
    fn finish_ops(&mut self, target: &str, atom: Expr, mut ops: Vec<Op>, live: &BTreeSet<String>) -> Vec<Op> {
        let copy = |source: Expr| {
            let name = source.as_name().map(String::from);
            let active: BTreeSet<String> = name.iter().filter(|n| live.contains(*n)).cloned().collect();
            Op {
                kind: OpKind::Copy {
                    target: target.to_string(),
                    source: active.iter().next().cloned(),
                },
                operands: source.reads(),
                fwd: source,
                active_operands: active,
                reads_result: false,
                restore: None,
                restore_before: false,
            }
        };
        match ops.last_mut() {
            None => vec![copy(atom)],
            Some(last) if last.operands.contains(target) && last.reads_result => {
                ops.push(copy(atom));
                ops
            }
            Some(last) => {
                last.kind.retarget(target);
                ops
            }
        }
    }

    fn temp(&mut self) -> String {
        self.fresh_indexed("_t")
    }

    /// Reduce `e` to an atom, appending one op per operation.
    fn decompose(&mut self, e: &Expr, ops: &mut Vec<Op>, live: &mut BTreeSet<String>) -> Result<Expr, TransformError> {
        if e.is_atom() {
            return Ok(e.clone());
        }
        let (template, fwd, binds): (Option<String>, Expr, Vec<Operand>) = match e {
            Expr::Binary { op, lhs, rhs, span } => {
                let l = self.decompose(lhs, ops, live)?;
                let r = self.decompose(rhs, ops, live)?;
                let fwd = Expr::Binary {
                    op: *op,
                    lhs: Box::new(l.clone()),
                    rhs: Box::new(r.clone()),
                    span: *span,
                };
                let t = (!matches!(op, BinOp::And | BinOp::Or)).then(|| op.template_name().to_string());
                (t, fwd, vec![(None, l), (None, r)])
            }
            Expr::Unary { op, operand, span } => {
                let a = self.decompose(operand, ops, live)?;
                let fwd = Expr::Unary {
                    op: *op,
                    operand: Box::new(a.clone()),
                    span: *span,
                };
                let t = (*op == UnaryOp::Neg).then(|| op.template_name().to_string());
                (t, fwd, vec![(None, a)])
            }
            Expr::Index { base, index, span } => {
                let b = self.decompose(base, ops, live)?;
                let i = self.decompose(index, ops, live)?;
                let fwd = Expr::Index {
                    base: Box::new(b.clone()),
                    index: Box::new(i.clone()),
                    span: *span,
                };
                (Some("index".into()), fwd, vec![(None, b), (None, i)])
            }
            Expr::Call {
                func,
                args,
                kwargs,
                span,
            } => {
                let mut a = Vec::new();
                for x in args {
                    a.push(self.decompose(x, ops, live)?);
                }
                let mut k = Vec::new();
                for (n, x) in kwargs {
                    k.push((n.clone(), self.decompose(x, ops, live)?));
                }
                let fwd = Expr::Call {
                    func: func.clone(),
                    args: a.clone(),
                    kwargs: k.clone(),
                    span: *span,
                };
                if let Some(callee) = self.program.get(func) {
                    return Ok(self.push_call(callee, fwd, a, k, ops, live));
                }
                let binds = a
                    .into_iter()
                    .map(|x| (None, x))
                    .chain(k.into_iter().map(|(n, x)| (Some(n), x)))
                    .collect();
                let t = (func != "zeros_like").then(|| func.clone());
                (t, fwd, binds)
            }
            Expr::Tuple(..) => (None, e.clone(), Vec::new()),
            Expr::Name(..) | Expr::Lit(..) | Expr::DerivRef(..) => unreachable!("atoms"),
        };

        let target = self.temp();
        let operands = fwd.reads();
        let active_operands: BTreeSet<String> = operands.intersection(live).cloned().collect();
        let kind = match template {
            Some(name) if !active_operands.is_empty() => {
                let t = self.registry.lookup(&name).ok_or_else(|| TransformError::Unregistered {
                    name: name.clone(),
                    span: e.span(),
                })?;
                let sig = intrinsic_signature(&name);
                let mut binding = Binding::new().name("result", &target);
                let mut positional = 0;
                for (kw, x) in binds {
                    let param = match kw {
                        None => {
                            positional += 1;
                            t.primal_params.get(positional).cloned()
                        }
                        Some(k) if t.primal_params.contains(&k) => Some(k),
                        Some(k) => sig
                            .and_then(|s| s.iter().position(|(n, _)| *n == k))
                            .and_then(|i| t.primal_params.get(i + 1).cloned()),
                    };
                    let param = param.ok_or_else(|| TransformError::Unsupported {
                        message: format!("too many arguments for the adjoint of `{name}`"),
                        span: e.span(),
                    })?;
                    binding = binding.bind(&param, x);
                }
                live.insert(target.clone());
                let reads_result = t.requires_primal_values.contains("result");
                return Ok(self.push_op(
                    ops,
                    Op {
                        kind: OpKind::Template {
                            target: target.clone(),
                            template: name,
                            binding,
                        },
                        fwd,
                        operands,
                        active_operands,
                        reads_result,
                        restore: None,
                        restore_before: false,
                    },
                ));
            }
            _ => OpKind::Passive { target: target.clone() },
        };
        Ok(self.push_op(
            ops,
            Op {
                kind,
                fwd,
                operands,
                active_operands: BTreeSet::new(),
                reads_result: false,
                restore: None,
                restore_before: false,
            },
        ))
    }

    fn push_op(&mut self, ops: &mut Vec<Op>, op: Op) -> Expr {
        let t = Expr::name(op.kind.target());
        ops.push(op);
        t
    }

    /// A call to a user function: arguments resolved to the callee's
    /// positional parameters so the callee gradient can be called with them.
    fn push_call(
        &mut self,
        callee: &FunctionDef,
        fwd: Expr,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
        ops: &mut Vec<Op>,
        live: &mut BTreeSet<String>,
    ) -> Expr {
        let mut full: Vec<Option<Expr>> = vec![None; callee.params.len()];
        for (i, a) in args.into_iter().enumerate() {
            if i < full.len() {
                full[i] = Some(a);
            }
        }
        for (k, a) in kwargs {
            if let Some(i) = callee.param_index(&k) {
                full[i] = Some(a);
            }
        }
        let resolved: Vec<Expr> = full
            .into_iter()
            .zip(&callee.params)
            .map(|(a, p)| a.or_else(|| p.default.clone()).unwrap_or(Expr::Lit(crate::ast::Literal::None, Span::default())))
            .collect();
        let target = self.temp();
        let operands = fwd.reads();
        let active_operands: BTreeSet<String> = operands.intersection(live).cloned().collect();
        if !active_operands.is_empty() {
            live.insert(target.clone());
        }
        self.push_op(
            ops,
            Op {
                kind: OpKind::Call {
                    target,
                    callee: callee.name.clone(),
                    args: resolved,
                },
                fwd,
                operands,
                active_operands,
                reads_result: false,
                restore: None,
                restore_before: false,
            },
        )
    }
}
