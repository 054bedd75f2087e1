use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::ExprError;

/// Basis functions, ordered by growth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Basis {
    Const,
    LnN,
    N,
    NLnN,
}

impl Basis {
    pub const ALL: [Basis; 4] = [Basis::Const, Basis::LnN, Basis::N, Basis::NLnN];

    /// Evaluates the basis function. `0 ln 0` is taken to be 0.
    pub fn eval(self, n: f64) -> f64 {
        match self {
            Basis::Const => 1.0,
            Basis::LnN => n.ln(),
            Basis::N => n,
            Basis::NLnN => {
                if n == 0.0 {
                    0.0
                } else {
                    n * n.ln()
                }
            }
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Basis::Const => "1",
            Basis::LnN => "ln(n)",
            Basis::N => "n",
            Basis::NLnN => "n*ln(n)",
        }
    }

    fn from_powers(n_pow: u32, ln_pow: u32) -> Option<Basis> {
        match (n_pow, ln_pow) {
            (0, 0) => Some(Basis::Const),
            (0, 1) => Some(Basis::LnN),
            (1, 0) => Some(Basis::N),
            (1, 1) => Some(Basis::NLnN),
            _ => None,
        }
    }

    fn has_log(self) -> bool {
        matches!(self, Basis::LnN | Basis::NLnN)
    }
}

/// A rational linear combination of the four basis functions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LinLogExpr {
    coeffs: BTreeMap<Basis, BigRational>,
}

impl LinLogExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(basis: Basis, coeff: BigRational) -> Self {
        let mut e = Self::zero();
        e.add_term(basis, coeff);
        e
    }

    pub fn constant(c: BigRational) -> Self {
        Self::term(Basis::Const, c)
    }

    /// Convenience constructor from an integer coefficient.
    pub fn int(basis: Basis, c: i64) -> Self {
        Self::term(basis, BigRational::from_integer(BigInt::from(c)))
    }

    pub fn add_term(&mut self, basis: Basis, coeff: BigRational) {
        let entry = self.coeffs.entry(basis).or_insert_with(BigRational::zero);
        *entry += coeff;
        if entry.is_zero() {
            self.coeffs.remove(&basis);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, basis: Basis) -> BigRational {
        self.coeffs.get(&basis).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn coeff_f64(&self, basis: Basis) -> f64 {
        self.coeffs.get(&basis).map_or(0.0, rat_to_f64)
    }

    /// Nonzero terms from least to most significant.
    pub fn terms(&self) -> impl Iterator<Item = (Basis, &BigRational)> {
        self.coeffs.iter().map(|(b, c)| (*b, c))
    }

    pub fn scale(&self, k: &BigRational) -> Self {
        let mut out = Self::zero();
        for (b, c) in self.terms() {
            out.add_term(b, c * k);
        }
        out
    }

    /// True when every nonzero coefficient sits on `basis`.
    pub fn is_only(&self, basis: Basis) -> bool {
        self.coeffs.keys().all(|b| *b == basis)
    }

    pub fn has_log(&self) -> bool {
        self.coeffs.keys().any(|b| b.has_log())
    }

    /// Most significant basis with a nonzero coefficient, without sign checks.
    pub fn top_basis(&self) -> Option<Basis> {
        self.coeffs.keys().next_back().copied()
    }

    /// Most significant basis; its coefficient must be positive.
    pub fn leading_term(&self) -> Result<Basis, ExprError> {
        let (b, c) = self.coeffs.iter().next_back().ok_or(ExprError::EmptyExpr)?;
        if !c.is_positive() {
            return Err(ExprError::NonPositiveLeadingCoefficient);
        }
        Ok(*b)
    }

    /// Evaluates at `n >= 1`. Smaller `n` is accepted only when no log basis is present.
    pub fn eval(&self, n: f64) -> Result<f64, ExprError> {
        if n < 1.0 && self.has_log() {
            return Err(ExprError::Domain(format!(
                "cannot evaluate {self} at n = {n} without the 0 ln 0 convention"
            )));
        }
        Ok(self.eval_raw(n))
    }

    /// Evaluates at `n >= 0` using `0 ln 0 = 0`. `ln 0` itself is still a domain error.
    pub fn eval_zero_convention(&self, n: f64) -> Result<f64, ExprError> {
        if n < 0.0 || (n == 0.0 && !self.coeff(Basis::LnN).is_zero()) {
            return Err(ExprError::Domain(format!("cannot evaluate {self} at n = {n}")));
        }
        Ok(self.eval_raw(n))
    }

    /// Evaluates without any domain check.
    pub fn eval_raw(&self, n: f64) -> f64 {
        self.coeffs.iter().map(|(b, c)| rat_to_f64(c) * b.eval(n)).sum()
    }

    pub fn parse(text: &str) -> Result<Self, ExprError> {
        Parser::new(text).parse_expr()
    }
}

impl Add for &LinLogExpr {
    type Output = LinLogExpr;
    fn add(self, rhs: &LinLogExpr) -> LinLogExpr {
        let mut out = self.clone();
        for (b, c) in rhs.terms() {
            out.add_term(b, c.clone());
        }
        out
    }
}

impl Sub for &LinLogExpr {
    type Output = LinLogExpr;
    fn sub(self, rhs: &LinLogExpr) -> LinLogExpr {
        self + &(-rhs)
    }
}

impl Neg for &LinLogExpr {
    type Output = LinLogExpr;
    fn neg(self) -> LinLogExpr {
        self.scale(&-BigRational::one())
    }
}

impl FromStr for LinLogExpr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for LinLogExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (b, c)) in self.coeffs.iter().rev().enumerate() {
            let neg = c.is_negative();
            match (i, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let mag = c.abs();
            if *b == Basis::Const {
                write!(f, "{}", fmt_rational(&mag))?;
            } else if mag.is_one() {
                f.write_str(b.symbol())?;
            } else {
                write!(f, "{}*{}", fmt_rational(&mag), b.symbol())?;
            }
        }
        Ok(())
    }
}

/// Floating-point copy of a [`LinLogExpr`] for hot loops.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinLogF64 {
    /// Coefficients indexed as `[1, ln n, n, n ln n]`.
    pub c: [f64; 4],
}

impl LinLogF64 {
    /// Evaluates with `0 ln 0 = 0`; callers guarantee `n >= 1` when `ln n` is present.
    #[inline]
    pub fn eval(&self, n: f64) -> f64 {
        let ln = if n > 0.0 { n.ln() } else { 0.0 };
        self.c[0] + self.c[1] * ln + self.c[2] * n + self.c[3] * n * ln
    }
}

impl From<&LinLogExpr> for LinLogF64 {
    fn from(e: &LinLogExpr) -> Self {
        let mut c = [0.0; 4];
        for (b, v) in e.terms() {
            c[b as usize] = rat_to_f64(v);
        }
        LinLogF64 { c }
    }
}

pub(crate) fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Formats a rational as an exact decimal when possible, else as `p/q`.
pub fn fmt_rational(r: &BigRational) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let mut d = r.denom().clone();
    let (two, five) = (BigInt::from(2), BigInt::from(5));
    let (mut a, mut b) = (0u32, 0u32);
    while (&d % &two).is_zero() {
        d /= &two;
        a += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        b += 1;
    }
    if !d.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let k = a.max(b);
    let scaled = (r.numer() * BigInt::from(10).pow(k)) / r.denom();
    let neg = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let k = k as usize;
    let padded = if digits.len() <= k { format!("{}{}", "0".repeat(k + 1 - digits.len()), digits) } else { digits };
    let (int, frac) = padded.split_at(padded.len() - k);
    let frac = frac.trim_end_matches('0');
    format!("{}{}.{}", if neg { "-" } else { "" }, int, frac)
}

/// Parses a decimal, scientific, or `p/q` literal exactly.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let p = parse_rational(p)?;
        let q = parse_rational(q)?;
        if q.is_zero() {
            return None;
        }
        return Some(p / q);
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (mant, exp) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (ip, fp) = mant.split_once('.').unwrap_or((mant, ""));
    if ip.is_empty() && fp.is_empty() {
        return None;
    }
    if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{ip}{fp}").parse().ok()?;
    let scale = exp - fp.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(digits);
    if scale >= 0 {
        r *= BigRational::from_integer(ten.pow(scale as u32));
    } else {
        r /= BigRational::from_integer(ten.pow((-scale) as u32));
    }
    Some(if neg { -r } else { r })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
    N,
    Ln,
    Plus,
    Minus,
    Star,
    Slash,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    err: Option<ExprError>,
}

impl Parser {
    fn new(text: &str) -> Self {
        let mut p = Parser { toks: Vec::new(), pos: 0, err: None };
        if let Err(e) = p.lex(text) {
            p.err = Some(e);
        }
        p
    }

    fn lex(&mut self, text: &str) -> Result<(), ExprError> {
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let ch = bytes[i] as char;
            if ch.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = match ch {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                'n' => Tok::N,
                'l' => {
                    let rest: String = text[i..].chars().filter(|c| !c.is_whitespace()).take(5).collect();
                    if rest != "ln(n)" {
                        return Err(ExprError::Syntax { pos: i, msg: "expected ln(n)".into() });
                    }
                    let mut seen = 0;
                    while seen < 5 {
                        if !(bytes[i] as char).is_whitespace() {
                            seen += 1;
                        }
                        i += 1;
                    }
                    self.toks.push((start, Tok::Ln));
                    continue;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let mut j = i;
                    while j < bytes.len() {
                        let c = bytes[j] as char;
                        let exp_sign = (c == '+' || c == '-') && j > i && matches!(bytes[j - 1], b'e' | b'E');
                        if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                            j += 1;
                        } else {
                            break;
                        }
                    }
                    let lit = &text[i..j];
                    let r = parse_rational(lit)
                        .ok_or_else(|| ExprError::Syntax { pos: i, msg: format!("bad number {lit:?}") })?;
                    self.toks.push((start, Tok::Num(r)));
                    i = j;
                    continue;
                }
                other => {
                    return Err(ExprError::Syntax { pos: i, msg: format!("unexpected character {other:?}") })
                }
            };
            self.toks.push((start, tok));
            i += 1;
        }
        Ok(())
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or_else(|| self.toks.last().map_or(0, |(p, _)| p + 1), |(p, _)| *p)
    }

    fn syntax(&self, msg: &str) -> ExprError {
        ExprError::Syntax { pos: self.offset(), msg: msg.into() }
    }

    fn parse_expr(mut self) -> Result<LinLogExpr, ExprError> {
        if let Some(e) = self.err.take() {
            return Err(e);
        }
        if self.toks.is_empty() {
            return Err(self.syntax("empty expression"));
        }
        let mut out = LinLogExpr::zero();
        let mut sign = BigRational::one();
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            sign = -sign;
        }
        loop {
            let (b, c) = self.parse_term()?;
            out.add_term(b, c * &sign);
            match self.peek() {
                None => break,
                Some(Tok::Plus) => sign = BigRational::one(),
                Some(Tok::Minus) => sign = -BigRational::one(),
                Some(_) => return Err(self.syntax("expected + or -")),
            }
            self.pos += 1;
        }
        Ok(out)
    }

    fn parse_term(&mut self) -> Result<(Basis, BigRational), ExprError> {
        let mut coeff = BigRational::one();
        let (mut np, mut lp) = (0u32, 0u32);
        loop {
            match self.peek().cloned() {
                Some(Tok::Num(r)) => {
                    self.pos += 1;
                    coeff *= r;
                    if self.peek() == Some(&Tok::Slash) {
                        self.pos += 1;
                        match self.peek().cloned() {
                            Some(Tok::Num(d)) if !d.is_zero() => {
                                self.pos += 1;
                                coeff /= d;
                            }
                            _ => return Err(self.syntax("expected nonzero number after /")),
                        }
                    }
                }
                Some(Tok::N) => {
                    self.pos += 1;
                    np += 1;
                }
                Some(Tok::Ln) => {
                    self.pos += 1;
                    lp += 1;
                }
                _ => return Err(self.syntax("expected number, n or ln(n)")),
            }
            if self.peek() == Some(&Tok::Star) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let basis = Basis::from_powers(np, lp).ok_or_else(|| {
            ExprError::NonLinear(format!("term with n^{np} * ln(n)^{lp}"))
        })?;
        Ok((basis, coeff))
    }
}
