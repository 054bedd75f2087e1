use std::fmt;
use std::str::FromStr;

use super::ExprError;

/// Coefficients smaller than this are treated as cancelled.
const MU_EPS: f64 = 1e-12;

/// One term `mu * c^nu * ln(c)^xi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiTerm {
    pub mu: f64,
    pub nu: f64,
    pub xi: u8,
}

impl PsiTerm {
    pub fn new(mu: f64, nu: f64, xi: u8) -> Self {
        assert!(xi <= 1, "log power must be 0 or 1");
        PsiTerm { mu, nu, xi }
    }

    fn eval(&self, c: f64) -> f64 {
        let p = if self.nu == 0.0 { 1.0 } else { c.powf(self.nu) };
        let l = if self.xi == 1 { c.ln() } else { 1.0 };
        self.mu * p * l
    }
}

/// Canonical sum of [`PsiTerm`]s, ordered by `(nu, xi)` with no repeated key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PsiExpr {
    terms: Vec<PsiTerm>,
}

fn same_nu(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

impl PsiExpr {
    pub fn new(mut terms: Vec<PsiTerm>) -> Self {
        terms.retain(|t| t.mu != 0.0);
        terms.sort_by(|a, b| a.nu.total_cmp(&b.nu).then(a.xi.cmp(&b.xi)));
        let mut merged: Vec<PsiTerm> = Vec::with_capacity(terms.len());
        for t in terms {
            if let Some(last) = merged.iter_mut().rev().take_while(|m| same_nu(m.nu, t.nu)).find(|m| m.xi == t.xi) {
                last.mu += t.mu;
            } else {
                merged.push(t);
            }
        }
        merged.retain(|t| t.mu.abs() >= MU_EPS);
        merged.sort_by(|a, b| a.nu.total_cmp(&b.nu).then(a.xi.cmp(&b.xi)));
        PsiExpr { terms: merged }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn monomial(mu: f64, nu: f64, xi: u8) -> Self {
        Self::new(vec![PsiTerm::new(mu, nu, xi)])
    }

    pub fn terms(&self) -> &[PsiTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn log_terms(&self) -> usize {
        self.terms.iter().filter(|t| t.xi == 1).count()
    }

    pub fn add(&self, other: &PsiExpr) -> PsiExpr {
        PsiExpr::new(self.terms.iter().chain(other.terms.iter()).copied().collect())
    }

    pub fn scale(&self, k: f64) -> PsiExpr {
        PsiExpr::new(self.terms.iter().map(|t| PsiTerm { mu: t.mu * k, ..*t }).collect())
    }

    /// Multiplies by `c^a`.
    pub fn shift(&self, a: f64) -> PsiExpr {
        PsiExpr::new(self.terms.iter().map(|t| PsiTerm { nu: t.nu + a, ..*t }).collect())
    }

    pub fn eval(&self, c: f64) -> Result<f64, ExprError> {
        if c <= 0.0 && self.terms.iter().any(|t| t.xi == 1 || t.nu.fract() != 0.0) {
            return Err(ExprError::Domain(format!("psi is undefined at c = {c}")));
        }
        Ok(self.terms.iter().map(|t| t.eval(c)).sum())
    }

    /// `psi(c) / c^max_nu` for `c > 0`; same sign as `psi(c)` but free of overflow.
    pub fn eval_scaled(&self, c: f64) -> f64 {
        let top = self.terms.iter().map(|t| t.nu).fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return 0.0;
        }
        self.terms.iter().map(|t| PsiTerm { nu: t.nu - top, ..*t }.eval(c)).sum()
    }

    pub fn derive(&self) -> PsiExpr {
        let mut out = Vec::with_capacity(self.terms.len() * 2);
        for t in &self.terms {
            if t.nu != 0.0 {
                out.push(PsiTerm::new(t.mu * t.nu, t.nu - 1.0, t.xi));
            }
            if t.xi == 1 {
                out.push(PsiTerm::new(t.mu, t.nu - 1.0, 0));
            }
        }
        PsiExpr::new(out)
    }

    /// Divides by `c^a` with `a` the smallest exponent.
    pub fn simplify_divide(&self) -> Result<PsiExpr, ExprError> {
        let a = self.terms.first().ok_or(ExprError::ZeroExpr)?.nu;
        Ok(PsiExpr { terms: self.terms.iter().map(|t| PsiTerm { nu: t.nu - a, ..*t }).collect() })
    }

    /// Value at `c = 1`: log terms vanish.
    pub fn at_one(&self) -> f64 {
        self.terms.iter().filter(|t| t.xi == 0).map(|t| t.mu).sum()
    }

    pub fn parse(text: &str) -> Result<Self, ExprError> {
        parse_psi(text)
    }
}

impl fmt::Display for PsiExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, t) in self.terms.iter().rev().enumerate() {
            let neg = t.mu < 0.0;
            match (i, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let mag = t.mu.abs();
            let mut parts: Vec<String> = Vec::new();
            if t.nu != 0.0 {
                parts.push(if t.nu == 1.0 { "c".into() } else { format!("c^{}", t.nu) });
            }
            if t.xi == 1 {
                parts.push("ln(c)".into());
            }
            if mag != 1.0 || parts.is_empty() {
                parts.insert(0, format!("{mag}"));
            }
            f.write_str(&parts.join("*"))?;
        }
        Ok(())
    }
}

impl FromStr for PsiExpr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_psi(s)
    }
}

fn parse_psi(text: &str) -> Result<PsiExpr, ExprError> {
    let s: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let err = |pos: usize, msg: &str| ExprError::Syntax { pos, msg: msg.into() };
    if s.is_empty() {
        return Err(err(0, "empty expression"));
    }
    let mut i = 0;
    let mut terms = Vec::new();
    let mut sign = 1.0;
    if s[0] == '-' {
        sign = -1.0;
        i = 1;
    }
    loop {
        let (mut mu, mut nu, mut xi) = (sign, 0.0, 0u8);
        loop {
            if i >= s.len() {
                return Err(err(i, "expected factor"));
            }
            if s[i].is_ascii_digit() || s[i] == '.' {
                let (v, j) = read_number(&s, i).ok_or_else(|| err(i, "bad number"))?;
                mu *= v;
                i = j;
            } else if s[i] == 'c' {
                i += 1;
                let mut p = 1.0;
                if i < s.len() && s[i] == '^' {
                    i += 1;
                    let paren = i < s.len() && s[i] == '(';
                    if paren {
                        i += 1;
                    }
                    let neg = i < s.len() && s[i] == '-';
                    if neg {
                        i += 1;
                    }
                    let (v, j) = read_number(&s, i).ok_or_else(|| err(i, "bad exponent"))?;
                    i = j;
                    if paren {
                        if i >= s.len() || s[i] != ')' {
                            return Err(err(i, "expected )"));
                        }
                        i += 1;
                    }
                    p = if neg { -v } else { v };
                }
                nu += p;
            } else if s[i..].starts_with(&['l', 'n', '(', 'c', ')']) {
                i += 5;
                if xi == 1 {
                    return Err(err(i, "ln(c) may appear at most once per term"));
                }
                xi = 1;
            } else {
                return Err(err(i, "expected number, c or ln(c)"));
            }
            if i < s.len() && s[i] == '*' {
                i += 1;
            } else {
                break;
            }
        }
        terms.push(PsiTerm::new(mu, nu, xi));
        if i >= s.len() {
            break;
        }
        sign = match s[i] {
            '+' => 1.0,
            '-' => -1.0,
            _ => return Err(err(i, "expected + or -")),
        };
        i += 1;
    }
    Ok(PsiExpr::new(terms))
}

fn read_number(s: &[char], start: usize) -> Option<(f64, usize)> {
    let mut j = start;
    while j < s.len() {
        let c = s[j];
        let exp_sign = (c == '+' || c == '-') && j > start && matches!(s[j - 1], 'e' | 'E');
        if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
            j += 1;
        } else {
            break;
        }
    }
    let lit: String = s[start..j].iter().collect();
    lit.parse::<f64>().ok().map(|v| (v, j))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quickselect_psi() -> PsiExpr {
        PsiExpr::new(vec![PsiTerm::new(5.0, 1.5, 1), PsiTerm::new(-2.0, 2.5, 0), PsiTerm::new(2.0, 0.0, 0)])
    }

    #[test]
    fn eval_examples() {
        let psi = quickselect_psi();
        assert!(psi.eval(1.0).unwrap().abs() < 1e-15);
        assert_eq!(PsiExpr::monomial(1.0, 1.0, 0).eval(7.0).unwrap(), 7.0);
        let p1 = PsiExpr::parse("7.5*ln(c) + 5 - 5*c").unwrap();
        assert!((p1.eval(2.0).unwrap() - (7.5 * 2f64.ln() - 5.0)).abs() < 1e-12);
        assert!(PsiExpr::monomial(1.0, 0.5, 0).eval(-1.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let d = quickselect_psi().derive();
        let want = PsiExpr::new(vec![
            PsiTerm::new(7.5, 0.5, 1),
            PsiTerm::new(5.0, 0.5, 0),
            PsiTerm::new(-5.0, 1.5, 0),
        ]);
        assert_eq!(d, want);
        assert_eq!(PsiExpr::monomial(1.0, 0.0, 1).derive(), PsiExpr::monomial(1.0, -1.0, 0));
        assert!(PsiExpr::monomial(4.0, 0.0, 0).derive().is_zero());
    }

    #[test]
    fn simplify_divide_examples() {
        let d = quickselect_psi().derive().simplify_divide().unwrap();
        assert_eq!(d, PsiExpr::parse("7.5*ln(c) + 5 - 5*c").unwrap());
        assert_eq!(PsiExpr::monomial(3.0, 2.0, 0).simplify_divide().unwrap(), PsiExpr::monomial(3.0, 0.0, 0));
        let e = PsiExpr::parse("2 - c^-1").unwrap().simplify_divide().unwrap();
        assert_eq!(e, PsiExpr::parse("2*c - 1").unwrap());
        assert_eq!(PsiExpr::zero().simplify_divide(), Err(ExprError::ZeroExpr));
    }

    #[test]
    fn at_one_examples() {
        assert_eq!(quickselect_psi().at_one(), 0.0);
        assert_eq!(PsiExpr::parse("7.5*c^-1 - 5").unwrap().at_one(), 2.5);
        assert_eq!(PsiExpr::zero().at_one(), 0.0);
    }

    #[test]
    fn merges_and_drops() {
        let e = PsiExpr::new(vec![PsiTerm::new(1.0, 2.0, 0), PsiTerm::new(-1.0, 2.0, 0), PsiTerm::new(3.0, 1.0, 1)]);
        assert_eq!(e.terms().len(), 1);
        let e = PsiExpr::new(vec![PsiTerm::new(1.0, 0.5, 0), PsiTerm::new(1.0, 0.5, 1), PsiTerm::new(2.0, 0.5, 0)]);
        assert_eq!(e.terms(), &[PsiTerm::new(3.0, 0.5, 0), PsiTerm::new(1.0, 0.5, 1)]);
    }

    #[test]
    fn display_round_trips() {
        let psi = quickselect_psi();
        assert_eq!(psi.to_string(), "-2*c^2.5 + 5*c^1.5*ln(c) + 2");
        assert_eq!(PsiExpr::parse(&psi.to_string()).unwrap(), psi);
        let e = PsiExpr::parse("c^(-1.25)*ln(c) - ln(c) + 1e-3").unwrap();
        assert_eq!(PsiExpr::parse(&e.to_string()).unwrap(), e);
        assert_eq!(PsiExpr::zero().to_string(), "0");
    }
}
