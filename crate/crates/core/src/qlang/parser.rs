//! Recursive-descent parser for query text.

use thiserror::Error;

use super::ast::{BinOp, DomainDecl, Expr, Query, UnOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {pos}: {message}")]
pub struct ParseError {
    /// Byte offset into the query text.
    pub pos: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    /// Unsigned magnitude; sign handled by the parser.
    Int(u64),
    Punct(&'static str),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

const PUNCT: [&str; 20] = [
    "&&", "||", "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "/", "%", "!", "(", ")", ".", ";",
    ",", "=",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                pos: start,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = src[start..i].parse::<u64>().map_err(|_| ParseError {
                pos: start,
                message: "integer literal out of range".into(),
            })?;
            out.push(Token {
                tok: Tok::Int(n),
                pos: start,
            });
        } else {
            let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) else {
                return Err(ParseError {
                    pos: i,
                    message: format!(
                        "unexpected character `{}`",
                        src[i..].chars().next().unwrap()
                    ),
                });
            };
            if *p == "=" {
                return Err(ParseError {
                    pos: i,
                    message: "assignment is not allowed in a query; use `==`".into(),
                });
            }
            out.push(Token {
                tok: Tok::Punct(p),
                pos: i,
            });
            i += p.len();
        }
    }
    out.push(Token {
        tok: Tok::End,
        pos: src.len(),
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::End => "end of query".into(),
        }
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat(p) {
            Ok(())
        } else {
            self.error(format!("expected `{p}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(s)
            }
            _ => self.error(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        let mut decls = vec![self.decl()?];
        let mut seen: Vec<&str> = Vec::new();
        loop {
            if self.eat(";") {
                decls.push(self.decl()?);
            } else if self.eat(".") {
                break;
            } else {
                return self.error(format!(
                    "expected `;` or `.` after domain declaration, found {}",
                    self.describe()
                ));
            }
        }
        for d in &decls {
            for v in &d.vars {
                if seen.contains(&v.as_str()) {
                    return Err(ParseError {
                        pos: 0,
                        message: format!("duplicate variable `{v}`"),
                    });
                }
                seen.push(v);
            }
        }
        let constraint = self.expr()?;
        if *self.peek() != Tok::End {
            return self.error(format!("unexpected {} after constraint", self.describe()));
        }
        Ok(Query { decls, constraint })
    }

    fn decl(&mut self) -> Result<DomainDecl, ParseError> {
        let class = self.ident("class name")?;
        let star = self.eat("*");
        let mut vars = vec![self.ident("domain variable")?];
        // Variables may be separated by commas or just whitespace.
        while self.eat(",") || matches!(self.peek(), Tok::Ident(_)) {
            vars.push(self.ident("domain variable")?);
        }
        Ok(DomainDecl { class, star, vars })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(0)
    }

    fn binary_level(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: [&[(&str, BinOp)]; 6] = [
            &[("||", BinOp::Or)],
            &[("&&", BinOp::And)],
            &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
            &[
                ("<=", BinOp::Le),
                (">=", BinOp::Ge),
                ("<", BinOp::Lt),
                (">", BinOp::Gt),
            ],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
            &[("*", BinOp::Mul), ("/", BinOp::Div), ("%", BinOp::Mod)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary_level(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.eat(sym) {
                    let rhs = self.binary_level(level + 1)?;
                    lhs = Expr::binary(*op, lhs, rhs);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Tok::Punct("-")) {
            let minus = self.pos();
            let next = &self.toks[self.at + 1];
            // `-7` directly adjacent is a literal; anything else negates.
            if let Tok::Int(n) = next.tok {
                if next.pos == minus + 1 {
                    self.bump();
                    self.bump();
                    return negative_literal(n, minus).map(Expr::Int);
                }
            }
            self.bump();
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat("!") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos();
        let base = self.primary()?;
        if !matches!(self.peek(), Tok::Punct(".")) {
            return Ok(base);
        }
        let Expr::Var(var) = base else {
            return Err(ParseError {
                pos: start,
                message: "only a domain variable may be used as a receiver".into(),
            });
        };
        self.bump();
        let member = self.ident("field or method name")?;
        let e = if self.eat("(") {
            let mut args = Vec::new();
            if !self.eat(")") {
                loop {
                    args.push(self.expr()?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            Expr::Call {
                var,
                method: member,
                args,
            }
        } else {
            Expr::Field { var, field: member }
        };
        if matches!(self.peek(), Tok::Punct(".")) {
            return self.error("chained member access is not supported");
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let e = match self.peek().clone() {
            Tok::Int(n) => i64::try_from(n).map(Expr::Int).map_err(|_| ParseError {
                pos,
                message: "integer literal out of range".into(),
            })?,
            Tok::Ident(s) => match s.as_str() {
                "true" => Expr::Bool(true),
                "false" => Expr::Bool(false),
                "null" => Expr::Null,
                _ => Expr::Var(s),
            },
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                return Ok(e);
            }
            _ => return self.error(format!("expected an expression, found {}", self.describe())),
        };
        self.bump();
        Ok(e)
    }
}

fn negative_literal(n: u64, pos: usize) -> Result<i64, ParseError> {
    if n == 1u64 << 63 {
        Ok(i64::MIN)
    } else {
        i64::try_from(n).map(|v| -v).map_err(|_| ParseError {
            pos,
            message: "integer literal out of range".into(),
        })
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "true" | "false" | "null")
}

pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let toks = lex(text)?;
    Parser { toks, at: 0 }.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn molecule_join() {
        let q = parse_query("Molecule* m1 m2. m1.x == m2.x && m1.y == m2.y && m1 != m2").unwrap();
        assert_eq!(q.decls.len(), 1);
        assert!(q.decls[0].star);
        assert_eq!(q.decls[0].vars, ["m1", "m2"]);
        let c = q.constraint.conjuncts();
        assert_eq!(c.len(), 3);
        assert_eq!(
            *c[2],
            Expr::binary(BinOp::Ne, Expr::Var("m1".into()), Expr::Var("m2".into()))
        );
    }

    #[test]
    fn two_decls() {
        let q = parse_query(
            "FieldExpression fe; FieldDefinition fd. fe.id == fd.name && fe.type == fd.type && fe.field != fd",
        )
        .unwrap();
        assert_eq!(q.decls.len(), 2);
        assert!(!q.decls[0].star && !q.decls[1].star);
    }

    #[test]
    fn missing_constraint() {
        let e = parse_query("Molecule m").unwrap_err();
        assert_eq!(e.pos, 10);
        assert!(e.message.contains("`.`"), "{e}");
    }

    #[test]
    fn precedence() {
        let q = parse_query("A a. a.x + 2 * 3 < 4 || !a.b && a.c == 1").unwrap();
        assert_eq!(
            q.constraint.to_string(),
            "(((a.x + (2 * 3)) < 4) || ((!a.b) && (a.c == 1)))"
        );
    }

    #[test]
    fn left_associative() {
        let q = parse_query("A a. a.x - 1 - 2 == 0").unwrap();
        assert_eq!(q.constraint.to_string(), "(((a.x - 1) - 2) == 0)");
    }

    #[test]
    fn negative_literals() {
        let q = parse_query("A a. a.x < -5 && a.x - 3 > - 2").unwrap();
        assert_eq!(
            q.constraint.to_string(),
            "((a.x < -5) && ((a.x - 3) > (- 2)))"
        );
        let q = parse_query("A a. a.x == -9223372036854775808").unwrap();
        assert_eq!(
            q.constraint.conjuncts()[0].to_string(),
            "(a.x == -9223372036854775808)"
        );
    }

    #[test]
    fn rejections() {
        for bad in [
            "A a. a.b.c == 1",
            "A a a. true",
            "A a; B a. true",
            "A a. a.x = 1",
            "A a. a.x ==",
            "A. true",
            "A a. true true",
        ] {
            assert!(parse_query(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn commas_between_variables() {
        let q = parse_query("P p1, p2. p1 != p2").unwrap();
        assert_eq!(q.decls[0].vars, ["p1", "p2"]);
    }

    #[test]
    fn calls() {
        let q = parse_query("Output_Buffer z. z.count() < 0 && z.at(1, z.n) == 2").unwrap();
        assert_eq!(
            q.to_string(),
            "Output_Buffer z. ((z.count() < 0) && (z.at(1, z.n) == 2))"
        );
    }
}
