use crate::ast::Span;
use crate::diag::Diagnostic;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Def,
    Return,
    If,
    Else,
    For,
    In,
    While,
    With,
    As,
    And,
    Or,
    Not,
    True,
    False,
    NoneLit,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    PlusEq,
    MinusEq,
    StarEq,
    SlashEq,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    NotEq,
    Comment(String),
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("name `{n}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Float(v) => format!("number `{v:?}`"),
            Tok::Comment(_) => "comment".into(),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", symbol(other)),
        }
    }
}

fn symbol(t: &Tok) -> &'static str {
    match t {
        Tok::Def => "def",
        Tok::Return => "return",
        Tok::If => "if",
        Tok::Else => "else",
        Tok::For => "for",
        Tok::In => "in",
        Tok::While => "while",
        Tok::With => "with",
        Tok::As => "as",
        Tok::And => "and",
        Tok::Or => "or",
        Tok::Not => "not",
        Tok::True => "True",
        Tok::False => "False",
        Tok::NoneLit => "None",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::LBracket => "[",
        Tok::RBracket => "]",
        Tok::Comma => ",",
        Tok::Colon => ":",
        Tok::Assign => "=",
        Tok::PlusEq => "+=",
        Tok::MinusEq => "-=",
        Tok::StarEq => "*=",
        Tok::SlashEq => "/=",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Lt => "<",
        Tok::Gt => ">",
        Tok::Le => "<=",
        Tok::Ge => ">=",
        Tok::EqEq => "==",
        Tok::NotEq => "!=",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "def" => Tok::Def,
        "return" => Tok::Return,
        "if" => Tok::If,
        "else" => Tok::Else,
        "for" => Tok::For,
        "in" => Tok::In,
        "while" => Tok::While,
        "with" => Tok::With,
        "as" => Tok::As,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "True" => Tok::True,
        "False" => Tok::False,
        "None" => Tok::NoneLit,
        _ => return None,
    })
}

/// Split source text into tokens, synthesizing NEWLINE/INDENT/DEDENT from
/// line structure. Full-line comments become `Comment` tokens placed at the
/// indentation of the next code line; trailing comments are dropped.
pub fn tokenize(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut pending_comments: Vec<Token> = Vec::new();
    let mut depth = 0usize;
    let mut last_line = 1u32;

    for (idx, raw_line) in text.split('\n').enumerate() {
        let line_no = idx as u32 + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let chars: Vec<char> = line.chars().collect();
        let indent = chars.iter().take_while(|c| **c == ' ' || **c == '\t').count();
        let rest = &chars[indent..];

        if depth == 0 {
            if rest.is_empty() {
                continue;
            }
            if rest[0] == '#' {
                let body: String = rest[1..].iter().collect();
                pending_comments.push(Token {
                    tok: Tok::Comment(body.trim().to_string()),
                    span: Span::new(line_no, indent as u32 + 1),
                });
                continue;
            }
            let top = *indents.last().unwrap();
            if indent > top {
                indents.push(indent);
                out.push(Token {
                    tok: Tok::Indent,
                    span: Span::new(line_no, 1),
                });
            } else if indent < top {
                while indent < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token {
                        tok: Tok::Dedent,
                        span: Span::new(line_no, 1),
                    });
                }
                if indent != *indents.last().unwrap() {
                    return Err(Diagnostic::error(
                        "syntax",
                        "inconsistent dedent",
                        Span::new(line_no, indent as u32 + 1),
                    ));
                }
            }
            for mut c in pending_comments.drain(..) {
                c.span.col = indent as u32 + 1;
                out.push(c);
            }
        }

        let mut i = indent;
        while i < chars.len() {
            let c = chars[i];
            let span = Span::new(line_no, i as u32 + 1);
            if c == ' ' || c == '\t' {
                i += 1;
                continue;
            }
            if c == '#' {
                break;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = keyword(&word).unwrap_or(Tok::Name(word));
                out.push(Token { tok, span });
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                let mut is_float = false;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lexeme: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    Tok::Float(lexeme.parse().map_err(|_| {
                        Diagnostic::error("syntax", format!("bad number `{lexeme}`"), span)
                    })?)
                } else {
                    Tok::Int(lexeme.parse().map_err(|_| {
                        Diagnostic::error("syntax", format!("integer `{lexeme}` out of range"), span)
                    })?)
                };
                out.push(Token { tok, span });
                continue;
            }
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                ('+', Some('=')) => (Tok::PlusEq, 2),
                ('-', Some('=')) => (Tok::MinusEq, 2),
                ('*', Some('=')) => (Tok::StarEq, 2),
                ('/', Some('=')) => (Tok::SlashEq, 2),
                ('<', Some('=')) => (Tok::Le, 2),
                ('>', Some('=')) => (Tok::Ge, 2),
                ('=', Some('=')) => (Tok::EqEq, 2),
                ('!', Some('=')) => (Tok::NotEq, 2),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                ('/', _) => (Tok::Slash, 1),
                ('<', _) => (Tok::Lt, 1),
                ('>', _) => (Tok::Gt, 1),
                ('=', _) => (Tok::Assign, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('[', _) => (Tok::LBracket, 1),
                (']', _) => (Tok::RBracket, 1),
                (',', _) => (Tok::Comma, 1),
                (':', _) => (Tok::Colon, 1),
                _ => {
                    return Err(Diagnostic::error(
                        "syntax",
                        format!("unexpected character `{c}`"),
                        span,
                    ))
                }
            };
            match tok {
                Tok::LParen | Tok::LBracket => depth += 1,
                Tok::RParen | Tok::RBracket => depth = depth.saturating_sub(1),
                _ => {}
            }
            out.push(Token { tok, span });
            i += width;
        }
        if depth == 0 && !matches!(out.last().map(|t| &t.tok), None | Some(Tok::Newline)) {
            out.push(Token {
                tok: Tok::Newline,
                span: Span::new(line_no, chars.len() as u32 + 1),
            });
        }
        last_line = line_no;
    }

    if depth > 0 {
        return Err(Diagnostic::error(
            "syntax",
            "unclosed bracket at end of input",
            Span::new(last_line, 1),
        ));
    }
    let end = Span::new(last_line, 1);
    if !matches!(out.last().map(|t| &t.tok), None | Some(Tok::Newline)) {
        out.push(Token {
            tok: Tok::Newline,
            span: end,
        });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token {
            tok: Tok::Dedent,
            span: end,
        });
    }
    out.push(Token { tok: Tok::Eof, span: end });
    Ok(out)
}
