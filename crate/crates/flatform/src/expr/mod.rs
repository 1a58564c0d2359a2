//! Minimal symbolic kernel: expression trees over chart variables with exact
//! rational constants, exact differentiation, conservative simplification and
//! double-precision evaluation.
//!
//! Simplification is deliberately conservative (constant folding, 0/1
//! identities, flattening of sums and products). Correctness downstream rests
//! on evaluation equality, not on structural canonical forms.

mod parse;

pub use parse::parse;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use std::fmt::Write as _;

use crate::error::{EvalErrorKind, ExprError};

pub type Rational = BigRational;

/// Exact rational constant with a cached double approximation.
#[derive(Debug, Clone)]
pub struct Constant {
    exact: Rational,
    approx: f64,
}

impl PartialEq for Constant {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

impl Constant {
    pub fn new(exact: Rational) -> Self {
        let approx = exact.to_f64().unwrap_or(f64::NAN);
        Self { exact, approx }
    }

    pub fn exact(&self) -> &Rational {
        &self.exact
    }

    pub fn approx(&self) -> f64 {
        self.approx
    }

    pub fn is_zero(&self) -> bool {
        self.exact.is_zero()
    }
}

/// Unary elementary functions supported by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Ln => "ln",
            UnaryFn::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(UnaryFn::Sin),
            "cos" => Some(UnaryFn::Cos),
            "exp" => Some(UnaryFn::Exp),
            "ln" => Some(UnaryFn::Ln),
            "sqrt" => Some(UnaryFn::Sqrt),
            _ => None,
        }
    }
}

/// Symbolic expression over the variables of an owning chart.
///
/// Variables are stored as indices into the chart's ordered name list.
/// Expressions are immutable after construction and safe to share across
/// concurrent evaluators.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Constant),
    Var(usize),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    Neg(Box<Expr>),
    Quot(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Fun(UnaryFn, Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::integer(0)
    }

    pub fn one() -> Expr {
        Expr::integer(1)
    }

    pub fn integer(k: i64) -> Expr {
        Expr::Const(Constant::new(Rational::from_integer(k.into())))
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        assert!(den != 0, "rational constant with zero denominator");
        Expr::Const(Constant::new(Rational::new(num.into(), den.into())))
    }

    pub fn constant(value: Rational) -> Expr {
        Expr::Const(Constant::new(value))
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if c.exact == Rational::from_integer(1.into()))
    }

    fn as_const(&self) -> Option<&Constant> {
        match self {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Flattening, constant-folding sum constructor.
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut acc = Rational::zero();
        let mut rest: Vec<Expr> = Vec::with_capacity(terms.len());
        let mut stack: Vec<Expr> = terms;
        stack.reverse();
        while let Some(t) = stack.pop() {
            match t {
                Expr::Sum(inner) => {
                    for e in inner.into_iter().rev() {
                        stack.push(e);
                    }
                }
                Expr::Const(c) => acc += c.exact,
                other => rest.push(other),
            }
        }
        if !acc.is_zero() {
            rest.insert(0, Expr::constant(acc));
        }
        match rest.len() {
            0 => Expr::zero(),
            1 => rest.pop().unwrap(),
            _ => Expr::Sum(rest),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, Expr::neg(b)])
    }

    /// Flattening, constant-folding product constructor. A zero factor
    /// annihilates the whole product.
    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut acc = Rational::from_integer(1.into());
        let mut rest: Vec<Expr> = Vec::with_capacity(factors.len());
        let mut stack: Vec<Expr> = factors;
        stack.reverse();
        let mut negate = false;
        while let Some(f) = stack.pop() {
            match f {
                Expr::Prod(inner) => {
                    for e in inner.into_iter().rev() {
                        stack.push(e);
                    }
                }
                Expr::Const(c) => {
                    if c.is_zero() {
                        return Expr::zero();
                    }
                    acc *= c.exact;
                }
                Expr::Neg(inner) => {
                    negate = !negate;
                    stack.push(*inner);
                }
                other => rest.push(other),
            }
        }
        if negate {
            acc = -acc;
        }
        if rest.is_empty() {
            return Expr::constant(acc);
        }
        let one = Rational::from_integer(1.into());
        let minus_one = Rational::from_integer((-1).into());
        let body = if rest.len() == 1 {
            rest.pop().unwrap()
        } else {
            Expr::Prod(rest)
        };
        if acc == one {
            body
        } else if acc == minus_one {
            // canonical form: -e rather than -1 * e
            Expr::neg(body)
        } else {
            match body {
                Expr::Prod(mut v) => {
                    v.insert(0, Expr::constant(acc));
                    Expr::Prod(v)
                }
                single => Expr::Prod(vec![Expr::constant(acc), single]),
            }
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::product(vec![a, b])
    }

    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::constant(-c.exact),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn quot(num: Expr, den: Expr) -> Expr {
        if num.is_zero() {
            return Expr::zero();
        }
        if den.is_one() {
            return num;
        }
        if let (Some(a), Some(b)) = (num.as_const(), den.as_const()) {
            if !b.is_zero() {
                return Expr::constant(a.exact.clone() / b.exact.clone());
            }
        }
        if let Some(b) = den.as_const() {
            if !b.is_zero() {
                let inv = Expr::constant(Rational::from_integer(1.into()) / b.exact.clone());
                return Expr::mul(inv, num);
            }
        }
        Expr::Quot(Box::new(num), Box::new(den))
    }

    pub fn int_pow(base: Expr, exponent: i32) -> Expr {
        match exponent {
            0 => Expr::one(),
            1 => base,
            _ => match base {
                Expr::Const(c) => {
                    if c.is_zero() && exponent < 0 {
                        Expr::Pow(Box::new(Expr::Const(c)), exponent)
                    } else {
                        let p = c.exact.pow(exponent);
                        Expr::constant(p)
                    }
                }
                Expr::Pow(inner, j) => match j.checked_mul(exponent) {
                    Some(k) => Expr::int_pow(*inner, k),
                    None => Expr::Pow(Box::new(Expr::Pow(inner, j)), exponent),
                },
                other => Expr::Pow(Box::new(other), exponent),
            },
        }
    }

    pub fn apply(f: UnaryFn, arg: Expr) -> Expr {
        if let Some(c) = arg.as_const() {
            if c.is_zero() {
                match f {
                    UnaryFn::Sin | UnaryFn::Sqrt => return Expr::zero(),
                    UnaryFn::Cos | UnaryFn::Exp => return Expr::one(),
                    UnaryFn::Ln => {}
                }
            } else if arg.is_one() {
                match f {
                    UnaryFn::Ln => return Expr::zero(),
                    UnaryFn::Sqrt => return Expr::one(),
                    _ => {}
                }
            }
        }
        Expr::Fun(f, Box::new(arg))
    }

    /// Exact symbolic partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Sum(terms) => Expr::sum(terms.iter().map(|t| t.differentiate(var)).collect()),
            Expr::Prod(factors) => {
                let mut terms = Vec::with_capacity(factors.len());
                for (i, f) in factors.iter().enumerate() {
                    let df = f.differentiate(var);
                    if df.is_zero() {
                        continue;
                    }
                    let mut group = Vec::with_capacity(factors.len());
                    for (j, g) in factors.iter().enumerate() {
                        if i == j {
                            group.push(df.clone());
                        } else {
                            group.push(g.clone());
                        }
                    }
                    terms.push(Expr::product(group));
                }
                Expr::sum(terms)
            }
            Expr::Neg(inner) => Expr::neg(inner.differentiate(var)),
            Expr::Quot(num, den) => {
                let dn = num.differentiate(var);
                let dd = den.differentiate(var);
                let numerator = Expr::sub(
                    Expr::mul(dn, (**den).clone()),
                    Expr::mul((**num).clone(), dd),
                );
                Expr::quot(numerator, Expr::int_pow((**den).clone(), 2))
            }
            Expr::Pow(base, k) => {
                let db = base.differentiate(var);
                Expr::product(vec![
                    Expr::integer(*k as i64),
                    Expr::int_pow((**base).clone(), k - 1),
                    db,
                ])
            }
            Expr::Fun(f, arg) => {
                let da = arg.differentiate(var);
                let outer = match f {
                    UnaryFn::Sin => Expr::apply(UnaryFn::Cos, (**arg).clone()),
                    UnaryFn::Cos => {
                        return Expr::neg(Expr::mul(
                            Expr::apply(UnaryFn::Sin, (**arg).clone()),
                            da,
                        ))
                    }
                    UnaryFn::Exp => self.clone(),
                    UnaryFn::Ln => return Expr::quot(da, (**arg).clone()),
                    UnaryFn::Sqrt => {
                        return Expr::quot(
                            da,
                            Expr::mul(Expr::integer(2), Expr::apply(UnaryFn::Sqrt, (**arg).clone())),
                        )
                    }
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Rebuilds the tree through the smart constructors (idempotent).
    pub fn simplified(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Sum(terms) => Expr::sum(terms.iter().map(Expr::simplified).collect()),
            Expr::Prod(factors) => Expr::product(factors.iter().map(Expr::simplified).collect()),
            Expr::Neg(inner) => Expr::neg(inner.simplified()),
            Expr::Quot(a, b) => Expr::quot(a.simplified(), b.simplified()),
            Expr::Pow(base, k) => Expr::int_pow(base.simplified(), *k),
            Expr::Fun(f, arg) => Expr::apply(*f, arg.simplified()),
        }
    }

    /// Replaces `Var(i)` with `subs[i]` throughout.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => subs[*i].clone(),
            Expr::Sum(terms) => Expr::sum(terms.iter().map(|t| t.substitute(subs)).collect()),
            Expr::Prod(factors) => {
                Expr::product(factors.iter().map(|f| f.substitute(subs)).collect())
            }
            Expr::Neg(inner) => Expr::neg(inner.substitute(subs)),
            Expr::Quot(a, b) => Expr::quot(a.substitute(subs), b.substitute(subs)),
            Expr::Pow(base, k) => Expr::int_pow(base.substitute(subs), *k),
            Expr::Fun(f, arg) => Expr::apply(*f, arg.substitute(subs)),
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Sum(v) | Expr::Prod(v) => v.iter().filter_map(Expr::max_var).max(),
            Expr::Neg(e) => e.max_var(),
            Expr::Quot(a, b) => a.max_var().max(b.max_var()),
            Expr::Pow(e, _) => e.max_var(),
            Expr::Fun(_, e) => e.max_var(),
        }
    }

    /// Evaluates at the coordinate vector. Domain violations are reported with
    /// the path of child indices leading to the offending sub-expression.
    pub fn eval(&self, coords: &[f64]) -> Result<f64, ExprError> {
        let mut path = Vec::new();
        self.eval_inner(coords, &mut path)
    }

    fn eval_inner(&self, coords: &[f64], path: &mut Vec<usize>) -> Result<f64, ExprError> {
        let fail = |path: &[usize], kind: EvalErrorKind| {
            Err(ExprError::Eval {
                path: path.to_vec(),
                kind,
            })
        };
        let value = match self {
            Expr::Const(c) => c.approx,
            Expr::Var(i) => coords[*i],
            Expr::Sum(terms) => {
                let mut acc = 0.0;
                for (i, t) in terms.iter().enumerate() {
                    path.push(i);
                    acc += t.eval_inner(coords, path)?;
                    path.pop();
                }
                acc
            }
            Expr::Prod(factors) => {
                let mut acc = 1.0;
                for (i, f) in factors.iter().enumerate() {
                    path.push(i);
                    acc *= f.eval_inner(coords, path)?;
                    path.pop();
                }
                acc
            }
            Expr::Neg(inner) => {
                path.push(0);
                let v = inner.eval_inner(coords, path)?;
                path.pop();
                -v
            }
            Expr::Quot(num, den) => {
                path.push(0);
                let a = num.eval_inner(coords, path)?;
                path.pop();
                path.push(1);
                let b = den.eval_inner(coords, path)?;
                path.pop();
                if b == 0.0 {
                    return fail(path, EvalErrorKind::DivisionByZero);
                }
                a / b
            }
            Expr::Pow(base, k) => {
                path.push(0);
                let b = base.eval_inner(coords, path)?;
                path.pop();
                if b == 0.0 && *k < 0 {
                    return fail(path, EvalErrorKind::DivisionByZero);
                }
                b.powi(*k)
            }
            Expr::Fun(f, arg) => {
                path.push(0);
                let a = arg.eval_inner(coords, path)?;
                path.pop();
                match f {
                    UnaryFn::Sin => a.sin(),
                    UnaryFn::Cos => a.cos(),
                    UnaryFn::Exp => a.exp(),
                    UnaryFn::Ln => {
                        if a <= 0.0 {
                            return fail(path, EvalErrorKind::LogNonPositive);
                        }
                        a.ln()
                    }
                    UnaryFn::Sqrt => {
                        if a < 0.0 {
                            return fail(path, EvalErrorKind::SqrtNegative);
                        }
                        a.sqrt()
                    }
                }
            }
        };
        if !value.is_finite() {
            return fail(path, EvalErrorKind::NonFinite);
        }
        Ok(value)
    }

    /// Renders against the given variable names; `parse` of the output yields
    /// a structurally equal tree after `simplified()`.
    pub fn to_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        self.write_prec(names, &mut out, 0);
        out
    }

    fn write_prec(&self, names: &[String], out: &mut String, parent: u8) {
        let prec = self.precedence();
        let need_parens = prec < parent;
        if need_parens {
            out.push('(');
        }
        match self {
            Expr::Const(c) => {
                if c.exact.is_negative() {
                    // negative constants render through unary minus
                    out.push('-');
                    write_rational(out, &(-c.exact.clone()));
                } else {
                    write_rational(out, &c.exact);
                }
            }
            Expr::Var(i) => out.push_str(&names[*i]),
            Expr::Sum(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    if i == 0 {
                        t.write_prec(names, out, 1);
                    } else if let Expr::Neg(inner) = t {
                        out.push_str(" - ");
                        inner.write_prec(names, out, 2);
                    } else {
                        out.push_str(" + ");
                        t.write_prec(names, out, 2);
                    }
                }
            }
            Expr::Prod(factors) => {
                for (i, f) in factors.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" * ");
                    }
                    f.write_prec(names, out, if i == 0 { 3 } else { 4 });
                }
            }
            Expr::Neg(inner) => {
                out.push('-');
                inner.write_prec(names, out, 4);
            }
            Expr::Quot(a, b) => {
                a.write_prec(names, out, 3);
                out.push_str(" / ");
                b.write_prec(names, out, 4);
            }
            Expr::Pow(base, k) => {
                base.write_prec(names, out, 5);
                let _ = write!(out, "^{}", k);
            }
            Expr::Fun(f, arg) => {
                out.push_str(f.name());
                out.push('(');
                arg.write_prec(names, out, 0);
                out.push(')');
            }
        }
        if need_parens {
            out.push(')');
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Sum(_) => 1,
            Expr::Neg(_) => 2,
            Expr::Prod(_) | Expr::Quot(_, _) => 3,
            Expr::Pow(_, _) => 4,
            Expr::Const(c) => {
                if c.exact.is_negative() {
                    2
                } else {
                    5
                }
            }
            Expr::Var(_) | Expr::Fun(_, _) => 5,
        }
    }
}

fn write_rational(out: &mut String, r: &Rational) {
    if r.denom() == &num_bigint::BigInt::from(1) {
        let _ = write!(out, "{}", r.numer());
    } else {
        let _ = write!(out, "{}/{}", r.numer(), r.denom());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names2() -> Vec<String> {
        vec!["x".to_string(), "y".to_string()]
    }

    fn p(text: &str) -> Expr {
        parse(text, &names2()).unwrap()
    }

    #[test]
    fn evaluates_polynomial() {
        let e = p("x^2 + y^2");
        assert_relative_eq!(e.eval(&[3.0, 4.0]).unwrap(), 25.0);
    }

    #[test]
    fn diff_polynomial() {
        let e = p("x^2 + y^2");
        let dx = e.differentiate(0);
        assert_eq!(dx, p("2 * x"));
    }

    #[test]
    fn diff_chain_rule() {
        let e = p("sin(x * y)");
        let dx = e.differentiate(0);
        // y * cos(x y), up to factor ordering
        for (x, y) in [(1.0, 2.0), (0.3, -0.7), (2.0, 0.5)] {
            let got = dx.eval(&[x, y]).unwrap();
            assert_relative_eq!(got, y * (x * y).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn diff_constant_is_zero() {
        assert!(Expr::rational(7, 3).differentiate(0).is_zero());
    }

    #[test]
    fn eval_division_by_zero_reports_path() {
        let e = p("1 / x");
        match e.eval(&[0.0, 0.0]) {
            Err(ExprError::Eval { kind, .. }) => {
                assert_eq!(kind, EvalErrorKind::DivisionByZero)
            }
            other => panic!("expected domain violation, got {other:?}"),
        }
    }

    #[test]
    fn eval_ln_domain() {
        let e = p("ln(x)");
        assert!(e.eval(&[-1.0, 0.0]).is_err());
        assert_relative_eq!(e.eval(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn fixture_h_of_example() {
        // h(x) = 1 + x^2 evaluates to 5 at x = 2
        let e = p("1 + x^2");
        assert_relative_eq!(e.eval(&[2.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn print_parse_roundtrip_structural() {
        let exprs = [
            "x^2 + y^2",
            "sin(x * y) - cos(y)^3",
            "1/2 * x + 3/4",
            "(x + y) / (x - y)",
            "-x^2",
            "exp(x) * ln(y + 2) - sqrt(x^2 + 1)",
            "x^-2 + 2 * x * y",
        ];
        for s in exprs {
            let e = p(s).simplified();
            let text = e.to_text(&names2());
            let back = parse(&text, &names2()).unwrap().simplified();
            assert_eq!(back, e, "roundtrip failed for {s} printed as {text}");
        }
    }

    #[test]
    fn finite_difference_matches_symbolic_derivative() {
        // random-ish cubic/quartic polynomials in 3 vars against central differences
        let names: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let polys = [
            "x^4 - 2 * x^2 * y + y * z^2 - 3 * z + 1/2 * x * y * z",
            "x * y * z + x^3 - y^4 + 2 * z^2 * x",
        ];
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rand01 = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for ptxt in polys {
            let e = parse(ptxt, &names).unwrap();
            for var in 0..3 {
                let de = e.differentiate(var);
                for _ in 0..100 {
                    let q = [
                        rand01() * 2.0 - 1.0,
                        rand01() * 2.0 - 1.0,
                        rand01() * 2.0 - 1.0,
                    ];
                    let h = 1e-5;
                    let mut qp = q;
                    let mut qm = q;
                    qp[var] += h;
                    qm[var] -= h;
                    let fd =
                        (e.eval(&qp).unwrap() - e.eval(&qm).unwrap()) / (2.0 * h);
                    let exact = de.eval(&q).unwrap();
                    assert!(
                        (fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                        "poly {ptxt} var {var}: fd {fd} vs exact {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let e = p("sin(x * y) * exp(x) + x^3 * y^2");
        let dxy = e.differentiate(0).differentiate(1);
        let dyx = e.differentiate(1).differentiate(0);
        for (x, y) in [(0.2, 0.4), (1.0, -0.5), (-1.1, 0.9)] {
            let a = dxy.eval(&[x, y]).unwrap();
            let b = dyx.eval(&[x, y]).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));
        }
    }

    #[test]
    fn linearity_of_differentiation() {
        let e1 = p("sin(x * y)");
        let e2 = p("x^3 - y");
        let combo = Expr::add(
            Expr::mul(Expr::rational(3, 2), e1.clone()),
            Expr::mul(Expr::integer(-2), e2.clone()),
        );
        let d_combo = combo.differentiate(0);
        let d_parts = Expr::add(
            Expr::mul(Expr::rational(3, 2), e1.differentiate(0)),
            Expr::mul(Expr::integer(-2), e2.differentiate(0)),
        );
        for (x, y) in [(0.1, 0.2), (0.7, -0.9), (-0.4, 1.3)] {
            let a = d_combo.eval(&[x, y]).unwrap();
            let b = d_parts.eval(&[x, y]).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
