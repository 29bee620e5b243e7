//! Line-oriented network description format.
//!
//! ```text
//! # telegraph gene
//! species continuous: P
//! species discrete: G
//! param k1 = 2.0
//! range G = [0, 1]
//! bound = 10.0
//! reaction prod class=C h=[+1] e=[0] rate = k1*G
//! reaction on   class=D h=[0]  e=[+1] rate = a*(1-G)
//! ```
//!
//! Statements may appear in any order; `#` starts a comment. Rates use
//! `+ - * ^`, parentheses, numeric literals, declared names, division by a
//! constant, and `cutoff(k[, X...])` for truncated rates.

use super::{NetworkBuilder, NetworkError, RateExpr, ReactionClass, ReactionNetwork, Symbol};

/// Parses and validates a network description document.
pub fn parse_network(text: &str) -> Result<ReactionNetwork, NetworkError> {
    let mut builder = NetworkBuilder::new();
    let mut reactions: Vec<(usize, usize, &str)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let offset = line.len() - trimmed.len();
        let (keyword, rest) = split_word(trimmed);
        let rest_col = offset + keyword.len() + 1;
        match keyword {
            "species" => {
                let (kind, names) = rest.split_once(':').ok_or_else(|| syntax(
                    line_no,
                    rest_col,
                    "expected `species continuous: ...` or `species discrete: ...`",
                ))?;
                let kind = kind.trim();
                for name in names.split(|c: char| c == ',' || c.is_whitespace()) {
                    if name.is_empty() {
                        continue;
                    }
                    check_ident(name, line_no, col_of(raw, name))?;
                    builder = match kind {
                        "continuous" => builder.continuous(name),
                        "discrete" => builder.discrete(name),
                        other => {
                            return Err(syntax(
                                line_no,
                                col_of(raw, other),
                                &format!("unknown species kind `{other}`"),
                            ))
                        }
                    };
                }
            }
            "param" => {
                let (name, value) = rest.split_once('=').ok_or_else(|| {
                    syntax(line_no, rest_col, "expected `param NAME = VALUE`")
                })?;
                let name = name.trim();
                check_ident(name, line_no, col_of(raw, name))?;
                let value = parse_real(value.trim(), line_no, col_of(raw, value.trim()))?;
                builder = builder.param(name, value);
            }
            "bound" => {
                let value = rest.trim_start().strip_prefix('=').ok_or_else(|| {
                    syntax(line_no, rest_col, "expected `bound = VALUE`")
                })?;
                let value = parse_real(value.trim(), line_no, col_of(raw, value.trim()))?;
                builder = builder.rate_bound(value);
            }
            "range" => {
                let (name, interval) = rest.split_once('=').ok_or_else(|| {
                    syntax(line_no, rest_col, "expected `range NAME = [LO, HI]`")
                })?;
                let name = name.trim();
                let body = interval
                    .trim()
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| syntax(line_no, col_of(raw, interval.trim()), "expected `[LO, HI]`"))?;
                let (lo, hi) = body.split_once(',').ok_or_else(|| {
                    syntax(line_no, col_of(raw, body), "expected `[LO, HI]`")
                })?;
                let lo = parse_real(lo.trim(), line_no, col_of(raw, lo.trim()))?;
                let hi = parse_real(hi.trim(), line_no, col_of(raw, hi.trim()))?;
                builder = builder.range(name, lo, hi);
            }
            "reaction" => reactions.push((line_no, offset, trimmed)),
            other => {
                return Err(syntax(
                    line_no,
                    offset + 1,
                    &format!("unknown statement `{other}`"),
                ))
            }
        }
    }

    // Reactions are resolved after every declaration has been seen.
    for (line_no, offset, stmt) in reactions {
        builder = parse_reaction(builder, stmt, line_no, offset)?;
    }
    builder.build()
}

fn parse_reaction(
    builder: NetworkBuilder,
    stmt: &str,
    line_no: usize,
    offset: usize,
) -> Result<NetworkBuilder, NetworkError> {
    let (_, rest) = split_word(stmt);
    let mut pos = stmt.len() - rest.len();
    let (id, mut rest) = split_word(rest.trim_start());
    if id.is_empty() {
        return Err(syntax(line_no, offset + pos + 1, "missing reaction id"));
    }
    check_ident(id, line_no, offset + pos + 1)?;

    let n = builder.continuous.len();
    let d = builder.discrete.len();
    let mut class = None;
    let mut h = None;
    let mut e = None;
    loop {
        let trimmed = rest.trim_start();
        pos = stmt.len() - trimmed.len();
        if trimmed.is_empty() {
            return Err(syntax(line_no, offset + pos + 1, "missing `rate = ...`"));
        }
        if let Some(after) = trimmed.strip_prefix("rate") {
            let after_trim = after.trim_start();
            if let Some(expr_src) = after_trim.strip_prefix('=') {
                let expr_col = offset + stmt.len() - expr_src.len() + 1;
                let rate = parse_expr_at(
                    expr_src,
                    expr_col,
                    line_no,
                    &builder.continuous,
                    &builder.discrete,
                    &builder.params,
                )?;
                let class = class.ok_or_else(|| {
                    syntax(line_no, offset + 1, "reaction is missing `class=C|D`")
                })?;
                let reaction = super::Reaction {
                    id: id.to_string(),
                    class,
                    h: h.unwrap_or_else(|| vec![0; n]),
                    e: e.unwrap_or_else(|| vec![0; d]),
                    rate,
                };
                return Ok(builder.reaction_expr(reaction));
            }
        }
        let (attr, tail) = take_attribute(trimmed);
        rest = tail;
        let (key, value) = attr
            .split_once('=')
            .ok_or_else(|| syntax(line_no, offset + pos + 1, &format!("expected KEY=VALUE, found `{attr}`")))?;
        let value_col = offset + pos + key.len() + 2;
        match key.trim() {
            "class" => {
                class = Some(match value.trim() {
                    "C" => ReactionClass::Continuous,
                    "D" => ReactionClass::Discrete,
                    other => {
                        return Err(syntax(
                            line_no,
                            value_col,
                            &format!("class must be C or D, found `{other}`"),
                        ))
                    }
                })
            }
            "h" => h = Some(parse_int_list(value, line_no, value_col)?),
            "e" => e = Some(parse_int_list(value, line_no, value_col)?),
            other => {
                return Err(syntax(
                    line_no,
                    offset + pos + 1,
                    &format!("unknown reaction attribute `{other}`"),
                ))
            }
        }
    }
}

/// Splits `key=[...]` or `key=value` off the front of `s`.
fn take_attribute(s: &str) -> (&str, &str) {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            c if c.is_whitespace() && depth == 0 => return (&s[..i], &s[i..]),
            _ => {}
        }
    }
    (s, "")
}

fn parse_int_list(src: &str, line: usize, col: usize) -> Result<Vec<i64>, NetworkError> {
    let body = src
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| syntax(line, col, "expected an integer list like [+1, 0]"))?;
    if body.trim().is_empty() {
        return Ok(Vec::new());
    }
    body.split(',')
        .map(|t| {
            let t = t.trim();
            let t = t.strip_prefix('+').unwrap_or(t);
            t.parse::<i64>()
                .map_err(|_| syntax(line, col, &format!("`{t}` is not an integer")))
        })
        .collect()
}

fn split_word(s: &str) -> (&str, &str) {
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

fn col_of(line: &str, part: &str) -> usize {
    let base = line.as_ptr() as usize;
    let p = part.as_ptr() as usize;
    if p >= base && p <= base + line.len() {
        p - base + 1
    } else {
        1
    }
}

fn syntax(line: usize, column: usize, message: &str) -> NetworkError {
    NetworkError::Syntax {
        line,
        column,
        message: message.to_string(),
    }
}

fn check_ident(name: &str, line: usize, column: usize) -> Result<(), NetworkError> {
    let mut chars = name.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ok || name == "cutoff" {
        return Err(syntax(line, column, &format!("invalid identifier `{name}`")));
    }
    Ok(())
}

fn parse_real(s: &str, line: usize, column: usize) -> Result<f64, NetworkError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, column, &format!("`{s}` is not a finite number")))
}

/// Parses a standalone rate expression (line 1, column 1).
pub(crate) fn parse_rate_expr(
    src: &str,
    continuous: &[String],
    discrete: &[String],
    params: &[(String, f64)],
) -> Result<RateExpr, NetworkError> {
    parse_expr_at(src, 1, 1, continuous, discrete, params)
}

fn parse_expr_at(
    src: &str,
    col0: usize,
    line: usize,
    continuous: &[String],
    discrete: &[String],
    params: &[(String, f64)],
) -> Result<RateExpr, NetworkError> {
    let tokens = tokenize(src, line, col0)?;
    let mut p = ExprParser {
        tokens,
        pos: 0,
        line,
        end_col: col0 + src.len(),
        continuous,
        discrete,
        params,
    };
    let e = p.expr()?;
    if let Some(t) = p.tokens.get(p.pos) {
        return Err(syntax(line, t.col, &format!("unexpected `{}`", t.kind)));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl std::fmt::Display for TokKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => f.write_str(s),
            TokKind::Op(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    col: usize,
}

fn tokenize(src: &str, line: usize, col0: usize) -> Result<Vec<Token>, NetworkError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text
                .parse::<f64>()
                .map_err(|_| syntax(line, col, &format!("malformed number `{text}`")))?;
            out.push(Token {
                kind: TokKind::Num(v),
                col,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                col,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                kind: TokKind::Op(c),
                col,
            });
            i += 1;
        } else {
            return Err(syntax(line, col, &format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    line: usize,
    end_col: usize,
    continuous: &'a [String],
    discrete: &'a [String],
    params: &'a [(String, f64)],
}

impl ExprParser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token {
                kind: TokKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn col(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn expect_op(&mut self, op: char) -> Result<(), NetworkError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(syntax(self.line, self.col(), &format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<RateExpr, NetworkError> {
        let mut terms = vec![self.term()?];
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let t = self.term()?;
            terms.push(if op == '-' {
                RateExpr::product(vec![RateExpr::Const(-1.0), t])
            } else {
                t
            });
        }
        Ok(RateExpr::sum(terms))
    }

    fn term(&mut self) -> Result<RateExpr, NetworkError> {
        let mut factors = vec![self.unary()?];
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            let col = self.col();
            self.pos += 1;
            let f = self.unary()?;
            if op == '/' {
                match f {
                    RateExpr::Const(c) if c != 0.0 => factors.push(RateExpr::Const(1.0 / c)),
                    _ => {
                        return Err(syntax(
                            self.line,
                            col,
                            "division is only allowed by a nonzero numeric constant",
                        ))
                    }
                }
            } else {
                factors.push(f);
            }
        }
        Ok(RateExpr::product(factors))
    }

    fn unary(&mut self) -> Result<RateExpr, NetworkError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(RateExpr::product(vec![RateExpr::Const(-1.0), inner]));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<RateExpr, NetworkError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let col = self.col();
            match self.tokens.get(self.pos).map(|t| t.kind.clone()) {
                Some(TokKind::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                    self.pos += 1;
                    Ok(RateExpr::pow(base, v as u32))
                }
                _ => Err(syntax(
                    self.line,
                    col,
                    "exponent must be a nonnegative integer literal",
                )),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<RateExpr, NetworkError> {
        let col = self.col();
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| syntax(self.line, col, "unexpected end of expression"))?;
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(RateExpr::Const(v)),
            TokKind::Op('(') => {
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            TokKind::Ident(name) if name == "cutoff" => self.cutoff(),
            TokKind::Ident(name) => self.resolve(&name, tok.col).map(RateExpr::Sym),
            TokKind::Op(c) => Err(syntax(self.line, tok.col, &format!("unexpected `{c}`"))),
        }
    }

    fn cutoff(&mut self) -> Result<RateExpr, NetworkError> {
        self.expect_op('(')?;
        let col = self.col();
        let scale = match self.expr()? {
            RateExpr::Const(c) if c > 0.0 => c,
            _ => return Err(syntax(self.line, col, "cutoff scale must be a positive constant")),
        };
        let mut wrt = Vec::new();
        while self.peek_op() == Some(',') {
            self.pos += 1;
            let col = self.col();
            match self.tokens.get(self.pos).map(|t| t.kind.clone()) {
                Some(TokKind::Ident(name)) => {
                    self.pos += 1;
                    match self.resolve(&name, col)? {
                        Symbol::Continuous(i) => wrt.push(i),
                        _ => {
                            return Err(syntax(
                                self.line,
                                col,
                                "cutoff derivatives are taken in continuous species only",
                            ))
                        }
                    }
                }
                _ => return Err(syntax(self.line, col, "expected a species name")),
            }
        }
        self.expect_op(')')?;
        Ok(RateExpr::Cutoff { scale, wrt })
    }

    fn resolve(&self, name: &str, col: usize) -> Result<Symbol, NetworkError> {
        if let Some(i) = self.continuous.iter().position(|s| s == name) {
            Ok(Symbol::Continuous(i))
        } else if let Some(j) = self.discrete.iter().position(|s| s == name) {
            Ok(Symbol::Discrete(j))
        } else if let Some(p) = self.params.iter().position(|(s, _)| s == name) {
            Ok(Symbol::Param(p))
        } else {
            Err(NetworkError::UndeclaredSymbol {
                name: name.to_string(),
                line: self.line,
                column: col,
            })
        }
    }
}
