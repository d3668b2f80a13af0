//! Text form of programs.
//!
//! ```text
//! def train(w, g, m, v, lr):
//!   g2 = square(g)
//!   m = interp(g, m, 0.9)
//!   update = m * lr
//!   return update, m, v
//! ```
//!
//! `+ - * /` are written infix; everything else uses call syntax. Constants
//! print as the shortest decimal that round-trips to the same 64-bit float.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use super::{Arg, Program, Statement, INPUTS, RETURNS};
use crate::function::Function;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}: unknown function `{name}`")]
    UnknownFunction { line: usize, name: String },
    #[error("{line}: undefined variable `{name}`")]
    UndefinedVariable { line: usize, name: String },
}

pub(crate) fn print(p: &Program) -> String {
    let mut out = String::from("def train(w, g, m, v, lr):\n");
    for s in &p.statements {
        out.push_str("  ");
        out.push_str(&s.out);
        out.push_str(" = ");
        match (s.function.infix(), s.args.as_slice()) {
            (Some(op), [a, b]) => {
                write_arg(&mut out, a);
                let _ = write!(out, " {op} ");
                write_arg(&mut out, b);
            }
            _ => {
                out.push_str(s.function.name());
                out.push('(');
                for (i, a) in s.args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_arg(&mut out, a);
                }
                out.push(')');
            }
        }
        out.push('\n');
    }
    out.push_str("  return update, m, v\n");
    out
}

fn write_arg(out: &mut String, a: &Arg) {
    match a {
        Arg::Var(n) => out.push_str(n),
        Arg::Const(c) => {
            let _ = write!(out, "{c:?}");
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Op(char),
    LParen,
    RParen,
    Comma,
    Eq,
    Colon,
}

struct Lexer<'a> {
    line: usize,
    chars: Vec<(usize, char)>,
    pos: usize,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn tokenize(line: usize, src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer {
            line,
            chars: src.chars().enumerate().map(|(i, c)| (i + 1, c)).collect(),
            pos: 0,
            _src: src,
        };
        let mut toks = Vec::new();
        while let Some(&(col, c)) = lx.chars.get(lx.pos) {
            if c.is_whitespace() {
                lx.pos += 1;
                continue;
            }
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '=' => Tok::Eq,
                ':' => Tok::Colon,
                '+' | '-' | '*' | '/' => Tok::Op(c),
                c if c.is_ascii_digit() || c == '.' => {
                    toks.push((col, lx.number()?));
                    continue;
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = lx.pos;
                    while lx
                        .chars
                        .get(lx.pos)
                        .is_some_and(|&(_, c)| c.is_alphanumeric() || c == '_')
                    {
                        lx.pos += 1;
                    }
                    let ident: String = lx.chars[start..lx.pos].iter().map(|&(_, c)| c).collect();
                    toks.push((col, Tok::Ident(ident)));
                    continue;
                }
                other => return Err(lx.error(col, alloc::format!("unexpected character `{other}`"))),
            };
            lx.pos += 1;
            toks.push((col, tok));
        }
        Ok(toks)
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let col = self.chars[start].0;
        let mut prev = ' ';
        while let Some(&(_, c)) = self.chars.get(self.pos) {
            let ok = c.is_ascii_digit()
                || c == '.'
                || c == 'e'
                || c == 'E'
                || ((c == '-' || c == '+') && (prev == 'e' || prev == 'E'));
            if !ok {
                break;
            }
            prev = c;
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().map(|&(_, c)| c).collect();
        text.parse::<f64>()
            .map(Tok::Number)
            .map_err(|_| self.error(col, alloc::format!("bad number `{text}`")))
    }

    fn error(&self, column: usize, message: String) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            column,
            message,
        }
    }
}

/// Cursor over one line's tokens.
struct Line {
    line: usize,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end_col: usize,
}

impl Line {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(c, _)| *c)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            column: self.col(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(alloc::format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(alloc::format!("expected {what}"))),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.error("unexpected trailing tokens"))
        } else {
            Ok(())
        }
    }

    /// variable, number, `-number`, `inf`, `NaN`
    fn atom(&mut self) -> Result<Arg, ParseError> {
        match self.next() {
            Some(Tok::Number(x)) => Ok(Arg::Const(x)),
            Some(Tok::Op('-')) => match self.next() {
                Some(Tok::Number(x)) => Ok(Arg::Const(-x)),
                Some(Tok::Ident(s)) if s == "inf" => Ok(Arg::Const(f64::NEG_INFINITY)),
                _ => {
                    self.pos -= 1;
                    Err(self.error("expected number after `-`"))
                }
            },
            Some(Tok::Ident(s)) if s == "inf" => Ok(Arg::Const(f64::INFINITY)),
            Some(Tok::Ident(s)) if s == "NaN" => Ok(Arg::Const(f64::NAN)),
            Some(Tok::Ident(s)) => Ok(Arg::Var(s)),
            _ => {
                self.pos -= 1;
                Err(self.error("expected variable or constant"))
            }
        }
    }
}

fn is_blank(src: &str) -> bool {
    let t = src.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses the text form. Reads of undefined variables and unknown
/// function names are rejected.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !is_blank(l));

    let tokenize = |n: usize, l: &str| -> Result<Line, ParseError> {
        Ok(Line {
            line: n,
            toks: Lexer::tokenize(n, l)?,
            pos: 0,
            end_col: l.chars().count() + 1,
        })
    };

    let (n, header) = lines.next().ok_or(ParseError::Syntax {
        line: 1,
        column: 1,
        message: "empty program".into(),
    })?;
    parse_header(tokenize(n, header)?)?;

    let mut defined: Vec<String> = INPUTS.iter().map(|s| s.to_string()).collect();
    let mut statements = Vec::new();
    let mut saw_return = false;
    let mut last_line = n;
    for (n, src) in lines {
        last_line = n;
        let mut line = tokenize(n, src)?;
        if saw_return {
            return Err(line.error("statement after return"));
        }
        if line.peek() == Some(&Tok::Ident("return".into())) {
            line.pos += 1;
            parse_returns(&mut line, &defined)?;
            saw_return = true;
            continue;
        }
        let s = parse_statement(&mut line)?;
        for a in &s.args {
            if let Arg::Var(name) = a {
                if !defined.contains(name) {
                    return Err(ParseError::UndefinedVariable {
                        line: n,
                        name: name.clone(),
                    });
                }
            }
        }
        if !defined.contains(&s.out) {
            defined.push(s.out.clone());
        }
        statements.push(s);
    }
    if !saw_return {
        return Err(ParseError::Syntax {
            line: last_line + 1,
            column: 1,
            message: "missing `return update, m, v`".into(),
        });
    }
    Ok(Program { statements })
}

fn parse_header(mut line: Line) -> Result<(), ParseError> {
    if line.ident("`def`")? != "def" {
        line.pos -= 1;
        return Err(line.error("expected `def`"));
    }
    if line.ident("`train`")? != "train" {
        line.pos -= 1;
        return Err(line.error("expected `train`"));
    }
    line.expect(Tok::LParen, "`(`")?;
    for (i, want) in INPUTS.iter().enumerate() {
        if i > 0 {
            line.expect(Tok::Comma, "`,`")?;
        }
        let got = line.ident(want)?;
        if got != *want {
            line.pos -= 1;
            return Err(line.error(alloc::format!("parameter {} must be `{want}`", i + 1)));
        }
    }
    line.expect(Tok::RParen, "`)`")?;
    line.expect(Tok::Colon, "`:`")?;
    line.finish()
}

fn parse_returns(line: &mut Line, defined: &[String]) -> Result<(), ParseError> {
    for (i, want) in RETURNS.iter().enumerate() {
        if i > 0 {
            line.expect(Tok::Comma, "`,`")?;
        }
        let got = line.ident(want)?;
        if got != *want {
            line.pos -= 1;
            return Err(line.error("returns must be `update, m, v`"));
        }
        if !defined.iter().any(|d| d == want) {
            return Err(ParseError::UndefinedVariable {
                line: line.line,
                name: got,
            });
        }
    }
    line.finish()
}

fn parse_statement(line: &mut Line) -> Result<Statement, ParseError> {
    let out = line.ident("assignment target")?;
    if matches!(out.as_str(), "inf" | "NaN" | "return" | "def") {
        line.pos -= 1;
        return Err(line.error(alloc::format!("`{out}` is reserved")));
    }
    line.expect(Tok::Eq, "`=`")?;
    let start = line.pos;
    // call form: ident '(' ...
    if let (Some(Tok::Ident(name)), Some((_, Tok::LParen))) =
        (line.peek().cloned(), line.toks.get(line.pos + 1))
    {
        let function = Function::from_name(&name).ok_or(ParseError::UnknownFunction {
            line: line.line,
            name: name.clone(),
        })?;
        line.pos += 2;
        let mut args = Vec::new();
        if line.peek() != Some(&Tok::RParen) {
            loop {
                args.push(line.atom()?);
                match line.peek() {
                    Some(Tok::Comma) => line.pos += 1,
                    _ => break,
                }
            }
        }
        line.expect(Tok::RParen, "`)`")?;
        line.finish()?;
        if args.len() != function.arity() {
            line.pos = start;
            return Err(line.error(alloc::format!(
                "{} takes {} argument(s), got {}",
                function.name(),
                function.arity(),
                args.len()
            )));
        }
        return Ok(Statement { out, function, args });
    }
    let lhs = line.atom()?;
    let function = match line.next() {
        Some(Tok::Op(op)) => Function::from_infix(op).expect("lexer only emits + - * /"),
        _ => {
            line.pos -= 1;
            return Err(line.error("expected function call or binary operator"));
        }
    };
    let rhs = line.atom()?;
    line.finish()?;
    Ok(Statement {
        out,
        function,
        args: alloc::vec![lhs, rhs],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::program::{mutate, MutationConfig};
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn lion_listing_shape() {
        let p = parse(assets::LION_TEXT).unwrap();
        assert_eq!(p.len(), 6);
        let wd = p
            .statements
            .iter()
            .filter(|s| s.out == "wd" || (s.out == "update" && s.function == Function::Add))
            .count();
        assert_eq!(wd, 2);
    }

    #[test]
    fn unknown_function() {
        let err = parse("def train(w, g, m, v, lr):\n  x = bogus(g)\n  return update, m, v\n")
            .unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownFunction {
                line: 2,
                name: "bogus".into()
            }
        );
    }

    #[test]
    fn undefined_variable() {
        let err = parse("def train(w, g, m, v, lr):\n  update = y * lr\n  return update, m, v\n")
            .unwrap_err();
        assert!(matches!(err, ParseError::UndefinedVariable { line: 2, .. }));
        let err = parse("def train(w, g, m, v, lr):\n  x = g * lr\n  return update, m, v\n")
            .unwrap_err();
        assert!(matches!(err, ParseError::UndefinedVariable { line: 3, .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("def train(w, g, m, v, lr):\n  x = g ^ lr\n  return update, m, v\n")
            .unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax {
                line: 2,
                column: 9,
                message: "unexpected character `^`".into()
            }
        );
        let err = parse("def train(w, g, m, lr):\n  return update, m, v\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 1, .. }));
        let err = parse("def train(w, g, m, v, lr):\n  update = sin(g, g)\n  return update, m, v\n")
            .unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 2, .. }));
        let err = parse("def train(w, g, m, v, lr):\n  update = g * lr\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 3, .. }));
    }

    #[test]
    fn constants_round_trip_exactly() {
        let text = "def train(w, g, m, v, lr):\n  a = g * -0.5\n  b = -1e-8 + a\n  c = interpolate(b, a, 0.8999999761581421)\n  d = c / 1e300\n  update = d * -0.0\n  return update, m, v\n";
        let p = parse(text).unwrap();
        assert_eq!(p.print(), text);
        let Arg::Const(c) = p.statements[4].args[1] else { panic!() };
        assert_eq!(c.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn non_finite_constants() {
        let text = "def train(w, g, m, v, lr):\n  a = g * inf\n  b = a - -inf\n  update = b * NaN\n  return update, m, v\n";
        let p = parse(text).unwrap();
        assert_eq!(p.print(), text);
    }

    #[test]
    fn listings_reprint_canonically() {
        for text in [assets::ADAMW_TEXT, assets::RAW_LION_TEXT, assets::ADAGRAD_LIKE_TEXT] {
            let p = parse(text).unwrap();
            let printed = p.print();
            assert_eq!(parse(&printed).unwrap(), p);
            assert_eq!(parse(&printed).unwrap().print(), printed);
        }
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(seed in any::<u64>(), steps in 0usize..30) {
            let mut rng = seeded(seed, 0);
            let cfg = MutationConfig::default();
            let mut p = assets::adamw();
            for _ in 0..steps {
                if let Some(child) = mutate(&p, &cfg, &mut rng) {
                    if child.compile().is_ok() {
                        p = child;
                    }
                }
            }
            let text = p.print();
            let q = parse(&text).unwrap();
            prop_assert_eq!(&q, &p);
            prop_assert_eq!(q.print(), text);
        }
    }
}
