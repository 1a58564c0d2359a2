//! Recursive-descent parser for the expression grammar.
//!
//! Standard infix with `+ - * / ^`, parentheses, function application
//! `sin(...)` etc.; variables are ASCII identifiers; numbers are decimal or
//! rational `p/q` (the latter arriving naturally as constant-folded division).
//! Exponents are integer literals, optionally signed.

use super::{Expr, Rational, UnaryFn};
use crate::error::ExprError;
use num_bigint::BigInt;

pub fn parse(text: &str, names: &[String]) -> Result<Expr, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        names,
        text_len: text.len(),
    };
    let expr = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            offset: tok.offset,
            message: format!("unexpected trailing input `{}`", tok.kind.describe()),
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(Rational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(_) => "number".to_string(),
            TokenKind::Ident(name) => name.clone(),
            TokenKind::Plus => "+".to_string(),
            TokenKind::Minus => "-".to_string(),
            TokenKind::Star => "*".to_string(),
            TokenKind::Slash => "/".to_string(),
            TokenKind::Caret => "^".to_string(),
            TokenKind::LParen => "(".to_string(),
            TokenKind::RParen => ")".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let offset = i;
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
            }
            b'+' => {
                tokens.push(Token { kind: TokenKind::Plus, offset });
                i += 1;
            }
            b'-' => {
                tokens.push(Token { kind: TokenKind::Minus, offset });
                i += 1;
            }
            b'*' => {
                tokens.push(Token { kind: TokenKind::Star, offset });
                i += 1;
            }
            b'/' => {
                tokens.push(Token { kind: TokenKind::Slash, offset });
                i += 1;
            }
            b'^' => {
                tokens.push(Token { kind: TokenKind::Caret, offset });
                i += 1;
            }
            b'(' => {
                tokens.push(Token { kind: TokenKind::LParen, offset });
                i += 1;
            }
            b')' => {
                tokens.push(Token { kind: TokenKind::RParen, offset });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut frac_digits = 0usize;
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    frac_digits = i - frac_start;
                    if frac_digits == 0 && i - start == 1 {
                        return Err(ExprError::Syntax {
                            offset: start,
                            message: "expected digits in number".to_string(),
                        });
                    }
                }
                let digits: String = text[start..i].chars().filter(|c| *c != '.').collect();
                let numer: BigInt = digits.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: "invalid number".to_string(),
                })?;
                let denom = BigInt::from(10u32).pow(frac_digits as u32);
                tokens.push(Token {
                    kind: TokenKind::Number(Rational::new(numer, denom)),
                    offset: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
            }
            other => {
                return Err(ExprError::Syntax {
                    offset,
                    message: format!("unexpected character `{}`", other as char),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'a [String],
    text_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn eof_offset(&self) -> usize {
        self.text_len
    }

    fn expect(&mut self, kind: &TokenKind) -> Result<(), ExprError> {
        match self.next() {
            Some(tok) if &tok.kind == kind => Ok(()),
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!(
                    "expected `{}`, found `{}`",
                    kind.describe(),
                    tok.kind.describe()
                ),
            }),
            None => Err(ExprError::Syntax {
                offset: self.eof_offset(),
                message: format!("expected `{}`, found end of input", kind.describe()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut terms = vec![self.term()?];
        while let Some(tok) = self.peek() {
            match tok.kind {
                TokenKind::Plus => {
                    self.next();
                    terms.push(self.term()?);
                }
                TokenKind::Minus => {
                    self.next();
                    terms.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(Expr::sum(terms))
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.factor()?;
        while let Some(tok) = self.peek() {
            match tok.kind {
                TokenKind::Star => {
                    self.next();
                    let rhs = self.factor()?;
                    acc = Expr::mul(acc, rhs);
                }
                TokenKind::Slash => {
                    self.next();
                    let rhs = self.factor()?;
                    acc = Expr::quot(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if let Some(tok) = self.peek() {
            if tok.kind == TokenKind::Minus {
                self.next();
                return Ok(Expr::neg(self.factor()?));
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if let Some(tok) = self.peek() {
            if tok.kind == TokenKind::Caret {
                self.next();
                let exponent = self.integer_exponent()?;
                return Ok(Expr::int_pow(base, exponent));
            }
        }
        Ok(base)
    }

    fn integer_exponent(&mut self) -> Result<i32, ExprError> {
        let mut sign = 1i64;
        loop {
            match self.peek().map(|t| t.kind.clone()) {
                Some(TokenKind::Minus) => {
                    sign = -sign;
                    self.next();
                }
                Some(TokenKind::Plus) => {
                    self.next();
                }
                _ => break,
            }
        }
        match self.next() {
            Some(Token {
                kind: TokenKind::Number(r),
                offset,
            }) => {
                if r.denom() != &BigInt::from(1) {
                    return Err(ExprError::Syntax {
                        offset,
                        message: "exponent must be an integer".to_string(),
                    });
                }
                let value: i64 = r
                    .numer()
                    .try_into()
                    .map_err(|_| ExprError::Syntax {
                        offset,
                        message: "exponent out of range".to_string(),
                    })?;
                let signed = sign * value;
                i32::try_from(signed).map_err(|_| ExprError::Syntax {
                    offset,
                    message: "exponent out of range".to_string(),
                })
            }
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!(
                    "expected integer exponent, found `{}`",
                    tok.kind.describe()
                ),
            }),
            None => Err(ExprError::Syntax {
                offset: self.eof_offset(),
                message: "expected integer exponent, found end of input".to_string(),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.next() {
            Some(Token {
                kind: TokenKind::Number(r),
                ..
            }) => Ok(Expr::constant(r)),
            Some(Token {
                kind: TokenKind::Ident(name),
                offset,
            }) => {
                let is_call = matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokenKind::LParen,
                        ..
                    })
                );
                if is_call {
                    if let Some(f) = UnaryFn::from_name(&name) {
                        self.next(); // consume '('
                        let arg = self.expr()?;
                        self.expect(&TokenKind::RParen)?;
                        return Ok(Expr::apply(f, arg));
                    }
                    return Err(ExprError::Syntax {
                        offset,
                        message: format!("unknown function `{name}`"),
                    });
                }
                match self.names.iter().position(|n| n == &name) {
                    Some(index) => Ok(Expr::var(index)),
                    None => Err(ExprError::UndeclaredVariable { name, offset }),
                }
            }
            Some(Token {
                kind: TokenKind::LParen,
                ..
            }) => {
                let inner = self.expr()?;
                self.expect(&TokenKind::RParen)?;
                Ok(inner)
            }
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("expected expression, found `{}`", tok.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.eof_offset(),
                message: "expected expression, found end of input".to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    #[test]
    fn parses_zero() {
        let e = parse("0", &names()).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn parses_power_sum() {
        let e = parse("x^2 + y^2", &names()).unwrap();
        match &e {
            Expr::Sum(terms) => {
                assert_eq!(terms.len(), 2);
                assert!(matches!(terms[0], Expr::Pow(_, 2)));
                assert!(matches!(terms[1], Expr::Pow(_, 2)));
            }
            other => panic!("expected sum, got {other:?}"),
        }
    }

    #[test]
    fn parses_function_application() {
        let e = parse("sin(x * y)", &names()).unwrap();
        let got = e.eval(&[1.0, 2.0]).unwrap();
        assert!((got - 2.0f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rational_literal_folds() {
        let e = parse("3/4", &names()).unwrap();
        assert_eq!(e, Expr::rational(3, 4));
        let e = parse("0.25", &names()).unwrap();
        assert_eq!(e, Expr::rational(1, 4));
    }

    #[test]
    fn undeclared_variable_reports_offset() {
        match parse("x + zz", &names()) {
            Err(ExprError::UndeclaredVariable { name, offset }) => {
                assert_eq!(name, "zz");
                assert_eq!(offset, 4);
            }
            other => panic!("expected undeclared variable, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_offset() {
        match parse("x + * y", &names()) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = parse("-x^2", &names()).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0]).unwrap(), -9.0);
    }

    #[test]
    fn negative_exponent() {
        let e = parse("x^-2", &names()).unwrap();
        assert_eq!(e.eval(&[2.0, 0.0]).unwrap(), 0.25);
    }
}
