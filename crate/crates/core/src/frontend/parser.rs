use super::lexer::{tokenize, Tok, Token};
use crate::ast::{AugOp, BinOp, Expr, FunctionDef, Literal, Param, Program, Span, Stmt, UnaryOp};
use crate::diag::Diagnostic;

type PResult<T> = Result<T, Diagnostic>;

/// Parse a whole source file.
pub fn parse_program(text: &str) -> PResult<Program> {
    Parser::new(text, false)?.program()
}

/// Parse adjoint template definitions, where `d[name]` denotes a derivative slot.
pub fn parse_templates(text: &str) -> PResult<Program> {
    Parser::new(text, true)?.program()
}

/// Parse a single expression (used by the CLI and tests).
pub fn parse_expr(text: &str) -> PResult<Expr> {
    let mut p = Parser::new(text, false)?;
    let e = p.expr()?;
    p.skip_newlines();
    p.expect(&Tok::Eof, "end of expression")?;
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    template: bool,
}

impl Parser {
    fn new(text: &str, template: bool) -> PResult<Self> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
            template,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error_here(&self, what: &str) -> Diagnostic {
        Diagnostic::error(
            "syntax",
            format!("expected {what}, found {}", self.peek().describe()),
            self.span(),
        )
    }

    fn expect(&mut self, t: &Tok, what: &str) -> PResult<Token> {
        if self.peek() == t {
            Ok(self.bump())
        } else {
            Err(self.error_here(what))
        }
    }

    fn name(&mut self, what: &str) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Name(n) => {
                let span = self.span();
                self.bump();
                Ok((n, span))
            }
            _ => Err(self.error_here(what)),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Comment(_)) {
            self.bump();
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut functions = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::Eof => break,
                Tok::Def => functions.push(self.funcdef()?),
                _ => return Err(self.error_here("`def`")),
            }
        }
        Ok(Program { functions })
    }

    fn funcdef(&mut self) -> PResult<FunctionDef> {
        let span = self.expect(&Tok::Def, "`def`")?.span;
        let (name, _) = self.name("function name")?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                let (pname, _) = self.name("parameter name")?;
                let default = if self.eat(&Tok::Assign) {
                    Some(self.expr()?)
                } else {
                    None
                };
                params.push(Param {
                    name: pname,
                    default,
                });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        self.expect(&Tok::Colon, "`:`")?;
        let body = self.block()?;
        Ok(FunctionDef {
            name,
            params,
            body,
            span,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(&Tok::Newline, "end of line")?;
        self.expect(&Tok::Indent, "an indented block")?;
        let mut body = Vec::new();
        while !matches!(self.peek(), Tok::Dedent | Tok::Eof) {
            body.push(self.stmt()?);
        }
        if body.iter().all(Stmt::is_comment) {
            return Err(self.error_here("a statement"));
        }
        self.expect(&Tok::Dedent, "end of block")?;
        Ok(body)
    }

    fn end_of_stmt(&mut self) -> PResult<()> {
        self.expect(&Tok::Newline, "end of line").map(|_| ())
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Comment(text) => {
                self.bump();
                Ok(Stmt::Comment(text, span))
            }
            Tok::Return => {
                self.bump();
                let value = self.expr_list(span)?;
                self.end_of_stmt()?;
                Ok(Stmt::Return { value, span })
            }
            Tok::If => {
                self.bump();
                let cond = self.expr()?;
                self.expect(&Tok::Colon, "`:`")?;
                let then_body = self.block()?;
                let else_body = if self.peek() == &Tok::Else {
                    self.bump();
                    self.expect(&Tok::Colon, "`:`")?;
                    self.block()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::If {
                    cond,
                    then_body,
                    else_body,
                    span,
                })
            }
            Tok::For => {
                self.bump();
                let (var, _) = self.name("loop variable")?;
                self.expect(&Tok::In, "`in`")?;
                match self.name("`range`")? {
                    (r, _) if r == "range" => {}
                    (_, s) => {
                        return Err(Diagnostic::error(
                            "syntax",
                            "only `for NAME in range(n)` loops are supported",
                            s,
                        ))
                    }
                }
                self.expect(&Tok::LParen, "`(`")?;
                let count = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                self.expect(&Tok::Colon, "`:`")?;
                let body = self.block()?;
                Ok(Stmt::ForRange {
                    var,
                    count,
                    body,
                    span,
                })
            }
            Tok::While => {
                self.bump();
                let cond = self.expr()?;
                self.expect(&Tok::Colon, "`:`")?;
                let body = self.block()?;
                Ok(Stmt::While { cond, body, span })
            }
            Tok::With => {
                self.bump();
                match self.name("`grad_of`")? {
                    (g, _) if g == "grad_of" => {}
                    (_, s) => {
                        return Err(Diagnostic::error(
                            "syntax",
                            "only `with grad_of(param) as name:` blocks are supported",
                            s,
                        ))
                    }
                }
                self.expect(&Tok::LParen, "`(`")?;
                let (param, _) = self.name("parameter name")?;
                self.expect(&Tok::RParen, "`)`")?;
                self.expect(&Tok::As, "`as`")?;
                let (alias, _) = self.name("alias name")?;
                self.expect(&Tok::Colon, "`:`")?;
                let body = self.block()?;
                Ok(Stmt::GradOf {
                    param,
                    alias,
                    body,
                    span,
                })
            }
            Tok::Name(target) => self.simple_stmt(target, span),
            _ => Err(self.error_here("a statement")),
        }
    }

    fn simple_stmt(&mut self, target: String, span: Span) -> PResult<Stmt> {
        let aug = match self.peek_at(1) {
            Tok::PlusEq => Some(AugOp::Add),
            Tok::MinusEq => Some(AugOp::Sub),
            Tok::StarEq => Some(AugOp::Mul),
            Tok::SlashEq => Some(AugOp::Div),
            _ => None,
        };
        if let Some(op) = aug {
            self.bump();
            self.bump();
            let value = self.expr()?;
            self.end_of_stmt()?;
            return Ok(Stmt::AugAssign {
                target,
                op,
                value,
                span,
            });
        }
        match self.peek_at(1) {
            Tok::Assign => {
                self.bump();
                self.bump();
                let value = self.expr()?;
                self.end_of_stmt()?;
                Ok(Stmt::Assign {
                    target,
                    value,
                    span,
                })
            }
            Tok::Comma => {
                let mut targets = Vec::new();
                loop {
                    targets.push(self.name("assignment target")?.0);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::Assign, "`=`")?;
                let value = self.expr()?;
                self.end_of_stmt()?;
                Ok(Stmt::MultiAssign {
                    targets,
                    value,
                    span,
                })
            }
            _ => {
                let lhs = self.expr()?;
                if self.eat(&Tok::Assign) {
                    let value = self.expr()?;
                    self.end_of_stmt()?;
                    return match lhs {
                        Expr::Index { base, index, .. } => match *base {
                            Expr::Name(target, _) => Ok(Stmt::IndexAssign {
                                target,
                                index: *index,
                                value,
                                span,
                            }),
                            // d[x] = ... inside a template
                            Expr::DerivRef(..) | Expr::Index { .. } => Err(Diagnostic::error(
                                "syntax",
                                "index assignment target must be a plain name",
                                span,
                            )),
                            _ => Err(Diagnostic::error(
                                "syntax",
                                "index assignment target must be a plain name",
                                span,
                            )),
                        },
                        Expr::DerivRef(slot, s) if self.template => Ok(Stmt::IndexAssign {
                            target: "d".into(),
                            index: Expr::Name(slot, s),
                            value,
                            span,
                        }),
                        _ => Err(Diagnostic::error("syntax", "invalid assignment target", span)),
                    };
                }
                if !matches!(lhs, Expr::Call { .. }) {
                    return Err(Diagnostic::error(
                        "syntax",
                        "only calls may be used as statements",
                        span,
                    ));
                }
                self.end_of_stmt()?;
                Ok(Stmt::ExprStmt { value: lhs, span })
            }
        }
    }

    /// `expr ("," expr)*`, folded into a tuple when more than one.
    fn expr_list(&mut self, span: Span) -> PResult<Expr> {
        let first = self.expr()?;
        if self.peek() != &Tok::Comma {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(&Tok::Comma) {
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items, span))
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.peek() == &Tok::Or {
            let span = self.bump().span;
            let rhs = self.and_expr()?;
            lhs = Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.peek() == &Tok::And {
            let span = self.bump().span;
            let rhs = self.not_expr()?;
            lhs = Expr::Binary {
                op: BinOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.peek() == &Tok::Not {
            let span = self.bump().span;
            let operand = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                operand: Box::new(operand),
                span,
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Gt => BinOp::Gt,
            Tok::Le => BinOp::Le,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::NotEq => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let span = self.bump().span;
        let rhs = self.additive()?;
        if matches!(
            self.peek(),
            Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge | Tok::EqEq | Tok::NotEq
        ) {
            return Err(Diagnostic::error(
                "syntax",
                "chained comparisons are not supported",
                self.span(),
            ));
        }
        Ok(Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span,
        })
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let span = self.bump().span;
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let span = self.bump().span;
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                span,
            };
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek() == &Tok::Minus {
            let span = self.bump().span;
            let operand = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                operand: Box::new(operand),
                span,
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        while self.peek() == &Tok::LBracket {
            let span = self.bump().span;
            let first = self.expr()?;
            let index = if self.peek() == &Tok::Comma {
                let mut items = vec![first];
                while self.eat(&Tok::Comma) {
                    items.push(self.expr()?);
                }
                Expr::Tuple(items, span)
            } else {
                first
            };
            self.expect(&Tok::RBracket, "`]`")?;
            e = match e {
                Expr::Name(ref n, s) if self.template && n == "d" => match index {
                    Expr::Name(slot, _) => Expr::DerivRef(slot, s),
                    _ => {
                        return Err(Diagnostic::error(
                            "syntax",
                            "d[...] must name a template parameter",
                            s,
                        ))
                    }
                },
                base => Expr::Index {
                    base: Box::new(base),
                    index: Box::new(index),
                    span,
                },
            };
        }
        Ok(e)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Lit(Literal::Int(v), span))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Lit(Literal::Float(v), span))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Lit(Literal::Bool(true), span))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Lit(Literal::Bool(false), span))
            }
            Tok::NoneLit => {
                self.bump();
                Ok(Expr::Lit(Literal::None, span))
            }
            Tok::Name(n) => {
                self.bump();
                if self.peek() == &Tok::LParen {
                    self.call(n, span)
                } else {
                    Ok(Expr::Name(n, span))
                }
            }
            Tok::LParen => {
                self.bump();
                let first = self.expr()?;
                if self.peek() == &Tok::Comma {
                    let mut items = vec![first];
                    while self.eat(&Tok::Comma) {
                        items.push(self.expr()?);
                    }
                    self.expect(&Tok::RParen, "`)`")?;
                    return Ok(Expr::Tuple(items, span));
                }
                self.expect(&Tok::RParen, "`)`")?;
                Ok(first)
            }
            _ => Err(self.error_here("an expression")),
        }
    }

    fn call(&mut self, func: String, span: Span) -> PResult<Expr> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, Expr)> = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                let is_kw = matches!(self.peek(), Tok::Name(_)) && self.peek_at(1) == &Tok::Assign;
                if is_kw {
                    let (k, ks) = self.name("keyword")?;
                    self.bump();
                    let v = self.expr()?;
                    if kwargs.iter().any(|(n, _)| *n == k) {
                        return Err(Diagnostic::error(
                            "syntax",
                            format!("keyword argument `{k}` repeated"),
                            ks,
                        ));
                    }
                    kwargs.push((k, v));
                } else {
                    if !kwargs.is_empty() {
                        return Err(Diagnostic::error(
                            "syntax",
                            "positional argument after keyword argument",
                            self.span(),
                        ));
                    }
                    args.push(self.expr()?);
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(Expr::Call {
            func,
            args,
            kwargs,
            span,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function() {
        let p = parse_program("def f(x):\n  return x * x").unwrap();
        assert_eq!(p.functions.len(), 1);
        let f = &p.functions[0];
        assert_eq!(f.name, "f");
        assert_eq!(f.param_names(), vec!["x"]);
        assert_eq!(
            f.body,
            vec![Stmt::Return {
                value: Expr::binary(BinOp::Mul, Expr::name("x"), Expr::name("x")),
                span: Span::default(),
            }]
        );
    }

    #[test]
    fn empty_program_is_empty() {
        assert!(parse_program("").unwrap().functions.is_empty());
        assert!(parse_program("\n\n# only a comment\n").unwrap().functions.is_empty());
    }

    #[test]
    fn dangling_operator_reports_line_two() {
        let d = parse_program("def f(x):\n  return x +").unwrap_err();
        assert!(d.is_error());
        assert_eq!(d.span.line, 2);
    }

    #[test]
    fn precedence_and_unary() {
        let e = parse_expr("-a + b * c > 1 and not d").unwrap();
        match e {
            Expr::Binary { op: BinOp::And, lhs, .. } => match *lhs {
                Expr::Binary { op: BinOp::Gt, lhs, .. } => match *lhs {
                    Expr::Binary { op: BinOp::Add, lhs, rhs, .. } => {
                        assert!(matches!(*lhs, Expr::Unary { op: UnaryOp::Neg, .. }));
                        assert!(matches!(*rhs, Expr::Binary { op: BinOp::Mul, .. }));
                    }
                    other => panic!("{other:?}"),
                },
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn statements_of_every_kind() {
        let src = "\
def g(a, n, k=2):
    b = a * 2.0
    b += 1.0
    a[0] = b
    for i in range(n):
        if b > 1:
            b /= 2
        else:
            b = b
    while b < 10:
        b = b * 3
    with grad_of(a) as da:
        print(da)
    u, v = h(a, axis=-1)
    return b, u
";
        let p = parse_program(src).unwrap();
        let f = &p.functions[0];
        assert_eq!(f.params[2].default, Some(Expr::int(2)));
        assert_eq!(f.body.len(), 8);
        assert!(matches!(f.body[2], Stmt::IndexAssign { .. }));
        assert!(matches!(f.body[6], Stmt::MultiAssign { .. }));
        assert!(matches!(f.body[7], Stmt::Return { value: Expr::Tuple(..), .. }));
    }

    #[test]
    fn template_mode_reads_derivative_slots() {
        let p = parse_templates("def adjoint_mul(result, arg1, arg2):\n    d[arg1] = arg2 * d[result]\n")
            .unwrap();
        match &p.functions[0].body[0] {
            Stmt::IndexAssign { target, index, value, .. } => {
                assert_eq!(target, "d");
                assert_eq!(index, &Expr::name("arg1"));
                assert!(matches!(value, Expr::Binary { rhs, .. } if matches!(**rhs, Expr::DerivRef(..))));
            }
            other => panic!("{other:?}"),
        }
        // outside template mode `d` is an ordinary array name
        let q = parse_expr("d[x]").unwrap();
        assert!(matches!(q, Expr::Index { .. }));
    }

    #[test]
    fn non_call_expression_statement_rejected() {
        assert!(parse_program("def f(x):\n    x + 1\n    return x\n").is_err());
    }
}
