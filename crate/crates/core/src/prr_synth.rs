//! Synthesis of exponential tail bounds for recurrences.
//!
//! Given `f`, we look for `alpha > 1` such that for every `2 <= n <= n*`
//!
//! ```text
//! alpha^f(n) >= alpha^a(n) * E[alpha^f(h(n))]
//! ```
//!
//! after which `Pr[T(n*) >= kappa] <= alpha^(f(n*) - kappa)`. The condition
//! is strengthened into a univariate inequality `psi(c) >= 0` with
//! `c = alpha^g(n)`, `psi` is shown to be nonnegative exactly on `[1, c*]`,
//! and `alpha` is solved from `alpha^g(n*) <= c*`.
//!
//! Children of size at most 1 cost nothing, so the exponent used for a child
//! of size `h` is `f(h)` for `h >= 2` and `0` otherwise.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{fmt_rational, rat_to_f64, Basis, ExprError, LinLogExpr, LinLogF64, PsiExpr, PsiTerm};
use crate::prr_model::{gamma_f64, NStar, PrrSpec};

/// Upper end of the doubling search for `c*`.
pub const CSTAR_CAP: f64 = 1_152_921_504_606_846_976.0; // 2^60
/// Default relative width of the `c*` bracket.
pub const CSTAR_REL_TOL: f64 = 1e-6;
const CSTAR_MAX_ITERS: usize = 200;
/// Block counts tried when the spec leaves `B` at 0.
pub const AUTO_BLOCKS: [u32; 6] = [2, 4, 8, 16, 32, 64];
/// Largest `n_max` accepted by [`verify_condition_numeric`].
pub const VERIFY_MAX_N: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("shape {0} is supported in verify mode only")]
    UnsupportedShape(&'static str),
    #[error("condition is not reducible: {0}")]
    NotReducible(String),
    #[error("trivial bound: {0}")]
    TrivialBound(String),
    #[error("kappa(n*) = {kappa} is below f(n*) = {f}")]
    KappaBelowF { kappa: f64, f: f64 },
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("invalid alpha: {0}")]
    BadAlpha(String),
    #[error("n_max = {0} exceeds {VERIFY_MAX_N}")]
    TooLarge(u64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Lower summation limit of a range sum whose upper limit is `n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerLimit {
    Zero,
    CeilHalf,
    FloorHalf,
}

impl fmt::Display for LowerLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LowerLimit::Zero => "0",
            LowerLimit::CeilHalf => "⌈n/2⌉",
            LowerLimit::FloorHalf => "⌊n/2⌋",
        })
    }
}

/// `(weight / n) * sum_{i = lo}^{n-1} alpha^summand(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSum {
    pub weight: BigRational,
    pub lo: LowerLimit,
    pub summand: LinLogExpr,
}

/// How the sums were removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// `f = q n + s`: integrate `alpha^(q x)`.
    IntegralLinear,
    /// `f = q ln n + s`: integrate `x^(q ln alpha)`.
    IntegralLog,
    /// Anything else: partition the range into blocks bounded by their right end.
    Blocks(u32),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::IntegralLinear => f.write_str("integral (linear exponent)"),
            Strategy::IntegralLog => f.write_str("integral (logarithmic exponent)"),
            Strategy::Blocks(b) => write!(f, "{b}-block partition"),
        }
    }
}

/// `mu * n^n_pow * (ln alpha)^ln_alpha_pow * alpha^exp(n)` with `exp` over `[1, ln n, n, n ln n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTerm {
    pub mu: f64,
    pub n_pow: i32,
    pub ln_alpha_pow: i32,
    pub exp: [f64; 4],
    /// Block terms whose sample point `theta * n` may fall below 1; the true
    /// exponent there is `a(n) + f(1)`.
    pub floor_theta: Option<f64>,
}

impl CondTerm {
    fn new(mu: f64, n_pow: i32, ln_alpha_pow: i32, exp: [f64; 4]) -> Self {
        CondTerm { mu, n_pow, ln_alpha_pow, exp, floor_theta: None }
    }

    /// `ln |term|` and sign at `(alpha, n)`.
    pub fn log_eval(&self, alpha: f64, n: f64) -> (f64, f64) {
        let e = LinLogF64 { c: self.exp }.eval(n);
        let la = alpha.ln();
        let l = self.mu.abs().ln() + self.n_pow as f64 * n.ln() + self.ln_alpha_pow as f64 * la.ln() + e * la;
        (l, self.mu.signum())
    }
}

/// The condition at some stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionExpr {
    /// `alpha^lhs >= alpha^toll * sum of range sums`.
    Sums { lhs: LinLogExpr, toll: LinLogExpr, sums: Vec<RangeSum> },
    /// `sum of terms >= 0`, stronger than the original.
    Closed { strategy: Strategy, terms: Vec<CondTerm>, f0: LinLogExpr, toll: LinLogExpr },
}

fn in_var(e: &LinLogExpr, v: &str) -> String {
    e.to_string().replace("ln(n)", "\u{1}").replace('n', v).replace('\u{1}', &format!("ln({v})"))
}

fn fmt_num(x: f64) -> String {
    let s = format!("{:.6}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn fmt_exp(e: &[f64; 4]) -> String {
    let mut parts: Vec<(f64, &str)> = Vec::new();
    for (i, sym) in [(3, "n*ln(n)"), (2, "n"), (1, "ln(n)"), (0, "")] {
        if e[i] != 0.0 {
            parts.push((e[i], sym));
        }
    }
    if parts.is_empty() {
        return "0".into();
    }
    let mut out = String::new();
    for (k, (c, sym)) in parts.iter().enumerate() {
        let sign = if *c < 0.0 { "-" } else { "+" };
        if k == 0 {
            if *c < 0.0 {
                out.push('-');
            }
        } else {
            out.push_str(&format!(" {sign} "));
        }
        let mag = c.abs();
        if sym.is_empty() {
            out.push_str(&fmt_num(mag));
        } else if mag == 1.0 {
            out.push_str(sym);
        } else {
            out.push_str(&format!("{}*{}", fmt_num(mag), sym));
        }
    }
    out
}

impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionExpr::Sums { lhs, toll, sums } => {
                write!(f, "α^({lhs}) ≥ α^({toll})·(1/n)·(")?;
                for (k, s) in sums.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" + ")?;
                    }
                    if !s.weight.is_one() {
                        write!(f, "{}·", fmt_rational(&s.weight))?;
                    }
                    write!(f, "Σ_{{i={}}}^{{n-1}} α^({})", s.lo, in_var(&s.summand, "i"))?;
                }
                f.write_str(")")
            }
            ConditionExpr::Closed { terms, .. } => {
                for (k, t) in terms.iter().enumerate() {
                    let neg = t.mu < 0.0;
                    match (k, neg) {
                        (0, true) => f.write_str("-")?,
                        (0, false) => {}
                        (_, true) => f.write_str(" - ")?,
                        (_, false) => f.write_str(" + ")?,
                    }
                    let mut parts = vec![];
                    if t.mu.abs() != 1.0 {
                        parts.push(fmt_num(t.mu.abs()));
                    }
                    if t.n_pow != 0 {
                        parts.push(if t.n_pow == 1 { "n".into() } else { format!("n^{}", t.n_pow) });
                    }
                    if t.ln_alpha_pow != 0 {
                        parts.push("ln(α)".into());
                    }
                    parts.push(format!("α^({})", fmt_exp(&t.exp)));
                    f.write_str(&parts.join("·"))?;
                }
                f.write_str(" ≥ 0")
            }
        }
    }
}

fn vec4(e: &LinLogExpr) -> [f64; 4] {
    LinLogF64::from(e).c
}

fn add4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

fn same4(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}

/// Step 1: the condition with explicit range sums.
pub fn gen_condition(spec: &PrrSpec) -> Result<ConditionExpr, SynthError> {
    let half = spec.shape.half_weight().ok_or(SynthError::UnsupportedShape("twocall_split"))?;
    let uni = BigRational::one() - &half;
    let mut sums = Vec::new();
    if !half.is_zero() {
        for lo in [LowerLimit::CeilHalf, LowerLimit::FloorHalf] {
            sums.push(RangeSum { weight: half.clone(), lo, summand: spec.f.clone() });
        }
    }
    if !uni.is_zero() {
        sums.push(RangeSum { weight: uni, lo: LowerLimit::Zero, summand: spec.f.clone() });
    }
    Ok(ConditionExpr::Sums { lhs: spec.f.clone(), toll: spec.toll.clone(), sums })
}

/// Closed-form upper bound of `sum_{i=l}^{r} alpha^summand(i)` when the
/// summand admits one: returns the symbolic text and a numeric evaluator.
pub fn integral_bound(summand: &LinLogExpr) -> Option<(String, Box<dyn Fn(f64, f64, f64) -> f64>)> {
    let q = summand.coeff(Basis::N);
    let p = summand.coeff(Basis::LnN);
    let s0 = rat_to_f64(&summand.coeff(Basis::Const));
    if summand.coeff(Basis::NLnN).is_zero() && p.is_zero() && q.is_positive() {
        let qs = fmt_rational(&q);
        let qf = rat_to_f64(&q);
        let text = format!("α^({s})·(α^({qs}(r+1)) − α^({qs}l))/({qs}·ln α)", s = fmt_num(s0));
        let text = if s0 == 0.0 { format!("(α^({qs}(r+1)) − α^({qs}l))/({qs}·ln α)") } else { text };
        let eval = move |alpha: f64, l: f64, r: f64| {
            let la = alpha.ln();
            alpha.powf(s0) * (alpha.powf(qf * (r + 1.0)) - alpha.powf(qf * l)) / (qf * la)
        };
        return Some((text, Box::new(eval)));
    }
    if summand.coeff(Basis::NLnN).is_zero() && q.is_zero() && p.is_positive() {
        let ps = fmt_rational(&p);
        let pf = rat_to_f64(&p);
        let text = format!("α^({})·((r+1)^({ps}·ln α+1) − l^({ps}·ln α+1))/({ps}·ln α+1)", fmt_num(s0));
        let eval = move |alpha: f64, l: f64, r: f64| {
            let e = pf * alpha.ln() + 1.0;
            alpha.powf(s0) * ((r + 1.0).powf(e) - l.powf(e)) / e
        };
        return Some((text, Box::new(eval)));
    }
    None
}

fn f0_nondecreasing(f0: &LinLogExpr) -> bool {
    let (q1, q2, q3) = (f0.coeff_f64(Basis::NLnN), f0.coeff_f64(Basis::N), f0.coeff_f64(Basis::LnN));
    let d = |x: f64| q1 * (x.ln() + 1.0) + q2 + q3 / x;
    if q1 < 0.0 || (q1 == 0.0 && q2 < 0.0) || (q1 == 0.0 && q2 == 0.0 && q3 < 0.0) {
        return false;
    }
    let grid = (0..4000).map(|k| 1.0 + k as f64 * 0.005).chain((0..300).map(|k| 21.0 * 1.15f64.powi(k)));
    grid.take_while(|x| x.is_finite()).all(|x| d(x) >= -1e-12)
}

/// Step 2: replace every range sum by a closed-form upper bound.
pub fn overapprox_sums(cond: &ConditionExpr, blocks: u32) -> Result<ConditionExpr, SynthError> {
    let ConditionExpr::Sums { lhs, toll, sums } = cond else {
        return Ok(cond.clone());
    };
    let weight = |lo: LowerLimit| {
        sums.iter().find(|s| s.lo == lo).map_or(0.0, |s| rat_to_f64(&s.weight))
    };
    let (gamma, uni) = (weight(LowerLimit::CeilHalf), weight(LowerLimit::Zero));
    let s = lhs.coeff(Basis::Const);
    let f0 = lhs - &LinLogExpr::constant(s.clone());
    if f0.is_zero() {
        return Err(SynthError::NotReducible("f has no growing term".into()));
    }
    let mut toll = toll.clone();
    if s.is_negative() {
        toll.add_term(Basis::Const, -s.clone());
    }
    let a = vec4(&toll);
    let mut terms = Vec::new();
    let strategy = if f0.is_only(Basis::N) {
        let q = f0.coeff_f64(Basis::N);
        terms.push(CondTerm::new(q, 1, 1, [0.0, 0.0, q, 0.0]));
        terms.push(CondTerm::new(-(2.0 * gamma + uni), 0, 0, add4(a, [0.0, 0.0, q, 0.0])));
        terms.push(CondTerm::new(2.0 * gamma, 0, 0, add4(a, [0.0, 0.0, q / 2.0, 0.0])));
        terms.push(CondTerm::new(uni, 0, 0, a));
        Strategy::IntegralLinear
    } else if f0.is_only(Basis::LnN) && uni == 0.0 {
        let q = f0.coeff_f64(Basis::LnN);
        terms.push(CondTerm::new(1.0, 1, 0, [0.0, q, 0.0, 0.0]));
        terms.push(CondTerm::new(q, 1, 1, [0.0, q, 0.0, 0.0]));
        terms.push(CondTerm::new(-2.0 * gamma, 1, 0, add4(a, [0.0, q, 0.0, 0.0])));
        terms.push(CondTerm::new(gamma, 1, 0, add4(a, [-q * std::f64::consts::LN_2, q, 0.0, 0.0])));
        Strategy::IntegralLog
    } else {
        if blocks == 0 {
            return Err(SynthError::NotReducible("block partition needs B >= 1".into()));
        }
        if !f0_nondecreasing(&f0) {
            return Err(SynthError::NotReducible(format!("{f0} is not nondecreasing on [1, ∞)")));
        }
        if f0.eval_raw(1.0) + rat_to_f64(&s).max(0.0) < 0.0 {
            return Err(SynthError::NotReducible("f(1) is negative".into()));
        }
        let bf = blocks as f64;
        terms.push(CondTerm::new(bf, 0, 0, vec4(&f0)));
        let (q1, q2, q3) = (f0.coeff_f64(Basis::NLnN), f0.coeff_f64(Basis::N), f0.coeff_f64(Basis::LnN));
        let at = |theta: f64| [q3 * theta.ln(), q3, q2 * theta + q1 * theta * theta.ln(), q1 * theta];
        if gamma > 0.0 {
            for i in 1..=blocks {
                let theta = (bf + i as f64) / (2.0 * bf);
                terms.push(CondTerm::new(-2.0 * gamma, 0, 0, add4(a, at(theta))));
            }
        }
        if uni > 0.0 {
            for i in 1..=blocks {
                let theta = i as f64 / bf;
                let mut t = CondTerm::new(-uni, 0, 0, add4(a, at(theta)));
                if 2.0 * theta < 1.0 {
                    t.floor_theta = Some(theta);
                }
                terms.push(t);
            }
        }
        Strategy::Blocks(blocks)
    };
    let mut merged: Vec<CondTerm> = Vec::new();
    for t in terms.into_iter().filter(|t| t.mu != 0.0) {
        match merged.iter_mut().find(|m| {
            m.n_pow == t.n_pow && m.ln_alpha_pow == t.ln_alpha_pow && same4(&m.exp, &t.exp) && m.floor_theta == t.floor_theta
        }) {
            Some(m) => m.mu += t.mu,
            None => merged.push(t),
        }
    }
    merged.retain(|t| t.mu != 0.0);
    Ok(ConditionExpr::Closed { strategy, terms: merged, f0, toll })
}

/// Sign of a `PsiExpr` on `[1, ∞)`, when it can be certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaySign {
    NonPos,
    NonNeg,
}

/// Certifies a constant sign on `[1, ∞)` from the value at 1 and the sign of the derivative.
pub fn sign_on_ray(psi: &PsiExpr) -> Option<RaySign> {
    if psi.is_zero() {
        return Some(RaySign::NonPos);
    }
    let s = psi.simplify_divide().ok()?;
    if s.terms().iter().all(|t| t.mu <= 0.0) {
        return Some(RaySign::NonPos);
    }
    if s.terms().iter().all(|t| t.mu >= 0.0) {
        return Some(RaySign::NonNeg);
    }
    let v = s.at_one();
    let d = s.derive();
    match sign_on_ray(&d)? {
        RaySign::NonPos if v <= 0.0 => Some(RaySign::NonPos),
        RaySign::NonNeg if v >= 0.0 => Some(RaySign::NonNeg),
        _ => None,
    }
}

fn ratio_eval(b: usize, g: Basis, n: f64) -> f64 {
    Basis::ALL[b].eval(n) / g.eval(n)
}

/// Infimum and supremum over integers `n >= 2` of `sum_b res[b] * b(n) / g(n)`.
pub fn residual_range(res: &[f64; 4], g: Basis) -> (f64, f64) {
    let r = |n: f64| (0..4).filter(|&b| res[b] != 0.0).map(|b| res[b] * ratio_eval(b, g, n)).sum::<f64>();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut see = |v: f64| {
        lo = lo.min(v);
        hi = hi.max(v);
    };
    for n in 2..=5000 {
        see(r(n as f64));
    }
    let mut n = 5000.0f64;
    while n < 1e250 {
        n *= 1.02;
        see(r(n.floor()));
    }
    let top = (0..4).rev().find(|&b| res[b] != 0.0 && Basis::ALL[b] > g);
    match top {
        Some(b) if res[b] > 0.0 => hi = f64::INFINITY,
        Some(_) => lo = f64::NEG_INFINITY,
        None => see(0.0),
    }
    (lo, hi)
}

/// Step 3: substitute `c = alpha^g(n)` (or `c = alpha` for the logarithmic
/// strategy), remove the remaining `n`-dependence and return `psi`.
pub fn substitute_simplify(cond: &ConditionExpr) -> Result<(PsiExpr, Basis), SynthError> {
    let ConditionExpr::Closed { strategy, terms, f0, toll } = cond else {
        return Err(SynthError::NotReducible("condition still contains sums".into()));
    };
    if *strategy == Strategy::IntegralLog {
        return substitute_alpha(terms).map(|p| (p, Basis::Const));
    }
    let g = f0.top_basis().ok_or_else(|| SynthError::NotReducible("f is constant".into()))?;
    let gi = g as usize;
    let (g_n, g_ln) = (matches!(g, Basis::N | Basis::NLnN) as i32, matches!(g, Basis::LnN | Basis::NLnN) as i32);
    let nfac = |t: &CondTerm| (t.n_pow - t.ln_alpha_pow * g_n, -t.ln_alpha_pow * g_ln);
    let first = nfac(&terms[0]);
    if terms.iter().any(|t| nfac(t) != first) {
        return Err(SynthError::NotReducible("terms carry different powers of n".into()));
    }
    if terms.iter().any(|t| t.ln_alpha_pow > 1 || t.ln_alpha_pow < 0) {
        return Err(SynthError::NotReducible("unsupported power of ln(alpha)".into()));
    }
    let residual = |t: &CondTerm| {
        let mut r = t.exp;
        r[gi] = 0.0;
        r
    };
    // Group terms with the same residual exponent.
    let mut groups: Vec<([f64; 4], Vec<&CondTerm>)> = Vec::new();
    for t in terms {
        let r = residual(t);
        match groups.iter_mut().find(|(k, _)| same4(k, &r)) {
            Some((_, v)) => v.push(t),
            None => groups.push((r, vec![t])),
        }
    }
    let term_psi = |t: &CondTerm| PsiTerm::new(t.mu, t.exp[gi], t.ln_alpha_pow as u8);
    let mut psi = PsiExpr::zero();
    let a = vec4(toll);
    let f0_at_one = f0.eval_raw(1.0);
    for (res, members) in &groups {
        let group = PsiExpr::new(members.iter().map(|t| term_psi(t)).collect());
        if group.is_zero() {
            continue;
        }
        if res.iter().all(|x| *x == 0.0) {
            check_floor(members, 0.0, g, &a, f0_at_one)?;
            psi = psi.add(&group);
            continue;
        }
        let (lo, hi) = residual_range(res, g);
        let round = |sign: RaySign| match sign {
            RaySign::NonPos if hi <= 0.0 => Some(0.0),
            RaySign::NonPos if hi <= 1.0 => Some(1.0),
            RaySign::NonNeg if lo >= 0.0 => Some(0.0),
            RaySign::NonNeg if lo >= -1.0 => Some(-1.0),
            _ => None,
        };
        if let Some(shift) = sign_on_ray(&group).and_then(round) {
            check_floor(members, shift, g, &a, f0_at_one)?;
            psi = psi.add(&group.shift(shift));
            continue;
        }
        for t in members {
            let sign = if t.mu < 0.0 { RaySign::NonPos } else { RaySign::NonNeg };
            let shift = round(sign).ok_or_else(|| {
                SynthError::NotReducible(format!(
                    "residual exponent with range [{lo}, {hi}] cannot be removed for a term of sign {}",
                    if t.mu < 0.0 { "-" } else { "+" }
                ))
            })?;
            check_floor(std::slice::from_ref(t), shift, g, &a, f0_at_one)?;
            psi = psi.add(&PsiExpr::new(vec![term_psi(t)]).shift(shift));
        }
    }
    if psi.is_zero() {
        return Err(SynthError::NotReducible("condition reduces to 0 ≥ 0".into()));
    }
    Ok((psi.simplify_divide()?, g))
}

/// For block terms sampled below 1, the exponent after rounding must still
/// dominate `a(n) + f(1)` at the affected integers `n`.
fn check_floor(members: &[&CondTerm], shift: f64, g: Basis, a: &[f64; 4], f0_one: f64) -> Result<(), SynthError> {
    for t in members {
        let Some(theta) = t.floor_theta else { continue };
        let gi = g as usize;
        let mut n = 2u64;
        while theta * (n as f64) < 1.0 {
            let nf = n as f64;
            let used = (t.exp[gi] + shift) * g.eval(nf);
            let need = LinLogF64 { c: *a }.eval(nf) + f0_one;
            if used < need - 1e-12 * need.abs().max(1.0) {
                return Err(SynthError::NotReducible(format!("block sample point below 1 at n = {n}")));
            }
            n += 1;
        }
    }
    Ok(())
}

fn substitute_alpha(terms: &[CondTerm]) -> Result<PsiExpr, SynthError> {
    let key = |t: &CondTerm| (t.n_pow, [0.0, t.exp[1], t.exp[2], t.exp[3]]);
    let (np, ek) = key(&terms[0]);
    if terms.iter().any(|t| {
        let (p, e) = key(t);
        p != np || !same4(&e, &ek)
    }) {
        return Err(SynthError::NotReducible("n-dependence does not factor out".into()));
    }
    let psi = PsiExpr::new(terms.iter().map(|t| PsiTerm::new(t.mu, t.exp[0], t.ln_alpha_pow as u8)).collect());
    if psi.is_zero() {
        return Err(SynthError::NotReducible("condition reduces to 0 ≥ 0".into()));
    }
    Ok(psi.simplify_divide()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    SimplifyDivide,
    EvalAtOne,
    StrictDecreasing,
    RecurseDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub expr: String,
    pub rule: Rule,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparabilityTrace {
    pub steps: Vec<TraceStep>,
    pub separable: bool,
    /// `psi` never becomes negative on `[1, ∞)`.
    pub never_negative: bool,
    pub depth: usize,
}

/// Step 4a: attempt to prove that `psi >= 0` exactly on an initial segment `[1, c*]`.
pub fn prove_separable(psi: &PsiExpr) -> SeparabilityTrace {
    let mut trace = SeparabilityTrace { steps: Vec::new(), separable: false, never_negative: false, depth: 0 };
    let mut cur = psi.clone();
    loop {
        let push = |trace: &mut SeparabilityTrace, e: &PsiExpr, rule, verdict: String| {
            trace.steps.push(TraceStep { expr: e.to_string(), rule, verdict })
        };
        let Ok(s) = cur.simplify_divide() else {
            push(&mut trace, &cur, Rule::SimplifyDivide, "identically zero".into());
            trace.separable = true;
            trace.never_negative = true;
            return trace;
        };
        if s != cur {
            push(&mut trace, &s, Rule::SimplifyDivide, format!("divided by c^{}", cur.terms()[0].nu));
        }
        let v = s.at_one();
        let scale: f64 = s.terms().iter().map(|t| t.mu.abs()).sum();
        if v < -1e-12 * scale {
            push(&mut trace, &s, Rule::EvalAtOne, format!("value {v} < 0 at c = 1: FAIL"));
            return trace;
        }
        push(&mut trace, &s, Rule::EvalAtOne, format!("value {} ≥ 0 at c = 1", fmt_num(v)));
        let moving: Vec<&PsiTerm> = s.terms().iter().filter(|t| !(t.nu == 0.0 && t.xi == 0)).collect();
        if moving.is_empty() {
            push(&mut trace, &s, Rule::StrictDecreasing, "constant, never negative".into());
            trace.separable = true;
            trace.never_negative = true;
            return trace;
        }
        if moving.iter().all(|t| t.mu < 0.0) {
            push(&mut trace, &s, Rule::StrictDecreasing, "all non-constant coefficients negative".into());
            trace.separable = true;
            return trace;
        }
        let d = s.derive();
        if sign_on_ray(&d) == Some(RaySign::NonPos) {
            push(&mut trace, &d, Rule::StrictDecreasing, "derivative certified nonpositive on [1, ∞)".into());
            trace.separable = true;
            return trace;
        }
        push(&mut trace, &d, Rule::RecurseDerivative, "recurse on the derivative".into());
        trace.depth += 1;
        cur = d;
    }
}

/// Step 4b: the largest `c` with `psi(c) >= 0`, found by doubling then bisection.
pub fn find_cstar(psi: &PsiExpr, trace: &SeparabilityTrace, rel_tol: f64) -> f64 {
    if trace.never_negative {
        return CSTAR_CAP;
    }
    let ok = |c: f64| psi.eval_scaled(c) >= 0.0;
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > CSTAR_CAP {
            return CSTAR_CAP;
        }
    }
    for _ in 0..CSTAR_MAX_ITERS {
        if hi - lo <= rel_tol * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `alpha = base^(1 / per(n*))`; `per = Const` means `alpha = base`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaForm {
    pub base: f64,
    #[serde(serialize_with = "ser_basis")]
    pub per: Basis,
    pub closed_form: String,
    pub value: Option<f64>,
}

fn ser_basis<S: serde::Serializer>(b: &Basis, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(b.symbol())
}

fn per_text(per: Basis) -> &'static str {
    match per {
        Basis::Const => "",
        Basis::N => "n*",
        Basis::LnN => "ln(n*)",
        Basis::NLnN => "(n*·ln(n*))",
    }
}

impl AlphaForm {
    pub fn new(base: f64, per: Basis, nstar: Option<u64>) -> Self {
        let closed_form = match per {
            Basis::Const => fmt_num(base),
            _ => format!("{}^(1/{})", fmt_num(base), per_text(per)),
        };
        let mut a = AlphaForm { base, per, closed_form, value: None };
        a.value = nstar.map(|n| a.ln_alpha(n).exp());
        a
    }

    pub fn ln_alpha(&self, nstar: u64) -> f64 {
        self.base.ln() / self.per.eval(nstar as f64)
    }

    /// Parses `x`, `x^(1/nstar)`, `x^(1/ln(nstar))` or `x^(1/(nstar*ln(nstar)))`.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let t = t.replace("n*", "nstar");
        let bad = || SynthError::BadAlpha(text.to_string());
        let (base, per) = match t.split_once('^') {
            None => (t.as_str(), Basis::Const),
            Some((b, rest)) => {
                let per = match rest {
                    "(1/nstar)" => Basis::N,
                    "(1/ln(nstar))" => Basis::LnN,
                    "(1/(nstar*ln(nstar)))" | "(1/(nstar·ln(nstar)))" => Basis::NLnN,
                    _ => return Err(bad()),
                };
                (b, per)
            }
        };
        let base: f64 = base.parse().map_err(|_| bad())?;
        if !(base > 1.0) || !base.is_finite() {
            return Err(bad());
        }
        Ok(AlphaForm::new(base, per, None))
    }
}

/// Step 5: the largest `alpha` with `alpha^g(n*) <= c*`.
pub fn solve_alpha(cstar: f64, g: Basis, nstar: NStar) -> Result<AlphaForm, SynthError> {
    if !(cstar > 1.0) {
        return Err(SynthError::TrivialBound(format!("c* = {cstar} ≤ 1")));
    }
    Ok(AlphaForm::new(cstar, g, nstar.concrete()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Bound,
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrrBound {
    pub name: String,
    pub f: String,
    pub kappa: String,
    pub nstar: String,
    #[serde(rename = "B_used")]
    pub b_used: Option<u32>,
    pub strategy: Option<String>,
    pub condition: Option<String>,
    pub strengthened: Option<String>,
    pub psi: Option<String>,
    pub cstar: Option<f64>,
    pub alpha: Option<AlphaForm>,
    pub bound_value: Option<f64>,
    pub bound_formula: String,
    /// `e` when the bound reads `n*^(-e)`.
    pub nstar_exponent: Option<f64>,
    pub trace: Vec<TraceStep>,
    pub failures: Vec<String>,
    pub status: Status,
    #[serde(skip)]
    pub psi_expr: Option<PsiExpr>,
    #[serde(skip)]
    pub f_expr: LinLogExpr,
    #[serde(skip)]
    pub separability: Option<SeparabilityTrace>,
}

impl PrrBound {
    fn trivial(spec: &PrrSpec, failures: Vec<String>) -> Self {
        PrrBound {
            name: spec.name.clone(),
            f: spec.f.to_string(),
            kappa: spec.kappa.to_string(),
            nstar: spec.nstar.to_string(),
            b_used: None,
            strategy: None,
            condition: gen_condition(spec).ok().map(|c| c.to_string()),
            strengthened: None,
            psi: None,
            cstar: None,
            alpha: None,
            bound_value: Some(1.0),
            bound_formula: "1".into(),
            nstar_exponent: None,
            trace: Vec::new(),
            failures,
            status: Status::Trivial,
            psi_expr: None,
            f_expr: spec.f.clone(),
            separability: None,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.status == Status::Trivial
    }
}

/// Options for [`derive_bound`].
#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Overrides the block count in the spec; `Some(0)` means automatic.
    pub blocks: Option<u32>,
    pub rel_tol: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { blocks: None, rel_tol: CSTAR_REL_TOL }
    }
}

struct Attempt {
    strengthened: ConditionExpr,
    psi: PsiExpr,
    g: Basis,
    trace: SeparabilityTrace,
    cstar: f64,
}

fn attempt(cond: &ConditionExpr, blocks: u32, rel_tol: f64) -> Result<Attempt, String> {
    let strengthened = overapprox_sums(cond, blocks).map_err(|e| e.to_string())?;
    let (psi, g) = substitute_simplify(&strengthened).map_err(|e| e.to_string())?;
    let trace = prove_separable(&psi);
    if !trace.separable {
        return Err(format!("could not prove separability of {psi}"));
    }
    let cstar = find_cstar(&psi, &trace, rel_tol);
    Ok(Attempt { strengthened, psi, g, trace, cstar })
}

fn quotient_text(d: &LinLogExpr, g: Basis) -> (String, Option<f64>) {
    use Basis::*;
    let sym = |b: Basis| -> &'static str {
        match (g, b) {
            (Const, Const) | (N, N) | (NLnN, NLnN) | (LnN, LnN) => "",
            (Const, LnN) => "ln(n*)",
            (Const, N) => "n*",
            (Const, NLnN) => "n*·ln(n*)",
            (N, Const) => "1/n*",
            (N, LnN) => "ln(n*)/n*",
            (N, NLnN) => "ln(n*)",
            (LnN, Const) => "1/ln(n*)",
            (LnN, N) => "n*/ln(n*)",
            (LnN, NLnN) => "n*",
            (NLnN, Const) => "1/(n*·ln(n*))",
            (NLnN, LnN) => "1/n*",
            (NLnN, N) => "1/ln(n*)",
        }
    };
    if d.is_zero() {
        return ("0".into(), Some(0.0));
    }
    let mut out = String::new();
    for (k, (b, c)) in d.terms().collect::<Vec<_>>().into_iter().rev().enumerate() {
        let neg = c.is_negative();
        out.push_str(match (k, neg) {
            (0, true) => "-",
            (0, false) => "",
            (_, true) => " - ",
            (_, false) => " + ",
        });
        let mag = fmt_rational(&c.abs());
        match sym(b) {
            "" => out.push_str(&mag),
            s if c.abs().is_one() => out.push_str(s),
            s => out.push_str(&format!("{mag}·{s}")),
        }
    }
    let constant = if d.is_only(g) { Some(rat_to_f64(&d.coeff(g))) } else { None };
    (out, constant)
}

/// Evaluates `alpha^(f(n*) - kappa(n*))` in the log domain.
pub fn eval_bound(alpha: &AlphaForm, f: &LinLogExpr, kappa: &LinLogExpr, nstar: u64) -> Result<f64, SynthError> {
    let n = nstar as f64;
    let (fv, kv) = (f.eval(n)?, kappa.eval(n)?);
    if kv < fv - 1e-9 * fv.abs().max(1.0) {
        return Err(SynthError::KappaBelowF { kappa: kv, f: fv });
    }
    Ok(((fv - kv).min(0.0) * alpha.ln_alpha(nstar)).exp())
}

/// Runs the whole pipeline. Failure at any step yields the trivial bound 1.
pub fn derive_bound(spec: &PrrSpec, opts: &SynthOptions) -> PrrBound {
    let cond = match gen_condition(spec) {
        Ok(c) => c,
        Err(e) => return PrrBound::trivial(spec, vec![e.to_string()]),
    };
    let blocks = opts.blocks.unwrap_or(spec.blocks);
    let schedule: Vec<u32> = if blocks == 0 { AUTO_BLOCKS.to_vec() } else { vec![blocks] };
    let mut failures = Vec::new();
    let mut last: Option<Attempt> = None;
    for &b in &schedule {
        let at = match attempt(&cond, b, opts.rel_tol) {
            Ok(at) => at,
            Err(e) => {
                failures.push(format!("B = {b}: {e}"));
                continue;
            }
        };
        let uses_blocks = matches!(at.strengthened, ConditionExpr::Closed { strategy: Strategy::Blocks(_), .. });
        let alpha = match solve_alpha(at.cstar, at.g, spec.nstar) {
            Ok(a) => a,
            Err(e) => {
                failures.push(format!("B = {b}: {e}"));
                last = Some(at);
                continue;
            }
        };
        // Numeric guard: the original condition must hold on a prefix of sizes.
        let guard_n = spec.nstar.concrete().unwrap_or(500).min(2000);
        let guard_alpha = AlphaForm::new(alpha.base, alpha.per, Some(guard_n));
        match verify_condition_numeric(spec, &guard_alpha, guard_n, guard_n) {
            Ok(v) if v.holds => {}
            Ok(v) => {
                failures.push(format!("numeric guard violated at n = {:?}", v.first_violation));
                continue;
            }
            Err(e) => {
                failures.push(format!("numeric guard: {e}"));
                continue;
            }
        }
        let d = &spec.f - &spec.kappa;
        let (q, constant) = quotient_text(&d, alpha.per);
        let base = fmt_num(alpha.base);
        let mut formula = format!("{base}^({q})");
        let mut nstar_exponent = None;
        if alpha.per == Basis::Const && d.is_only(Basis::LnN) && !d.is_zero() {
            let e = -rat_to_f64(&d.coeff(Basis::LnN)) * alpha.base.ln();
            nstar_exponent = Some(e);
            formula = format!("{formula} = n*^(-{})", fmt_num(e));
        }
        let bound_value = match spec.nstar {
            NStar::Concrete(n) => eval_bound(&alpha, &spec.f, &spec.kappa, n).ok(),
            NStar::Symbolic => constant.map(|k| (k.min(0.0) * alpha.base.ln()).exp()),
        };
        return PrrBound {
            name: spec.name.clone(),
            f: spec.f.to_string(),
            kappa: spec.kappa.to_string(),
            nstar: spec.nstar.to_string(),
            b_used: uses_blocks.then_some(b),
            strategy: match &at.strengthened {
                ConditionExpr::Closed { strategy, .. } => Some(strategy.to_string()),
                _ => None,
            },
            condition: Some(cond.to_string()),
            strengthened: Some(at.strengthened.to_string()),
            psi: Some(at.psi.to_string()),
            cstar: Some(at.cstar),
            alpha: Some(alpha),
            bound_value,
            bound_formula: formula,
            nstar_exponent,
            trace: at.trace.steps.clone(),
            failures,
            status: Status::Bound,
            psi_expr: Some(at.psi),
            f_expr: spec.f.clone(),
            separability: Some(at.trace),
        };
    }
    let mut out = PrrBound::trivial(spec, failures);
    if let Some(at) = last {
        out.psi = Some(at.psi.to_string());
        out.cstar = Some(at.cstar);
        out.trace = at.trace.steps.clone();
        out.psi_expr = Some(at.psi);
        out.separability = Some(at.trace);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub holds: bool,
    pub first_violation: Option<u64>,
    pub n_max: u64,
    /// Smallest `ln(lhs) - ln(rhs)` seen.
    pub min_log_margin: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Checks the original condition at every `2 <= n <= n_max` by exact summation over the child distribution.
pub fn verify_condition_numeric(spec: &PrrSpec, alpha: &AlphaForm, nstar: u64, n_max: u64) -> Result<VerifyOutcome, SynthError> {
    if n_max > VERIFY_MAX_N {
        return Err(SynthError::TooLarge(n_max));
    }
    let mut out = VerifyOutcome { holds: true, first_violation: None, n_max, min_log_margin: f64::INFINITY };
    if n_max < 2 {
        return Ok(out);
    }
    let la = alpha.ln_alpha(nstar.max(1));
    let (f, toll) = (LinLogF64::from(&spec.f), LinLogF64::from(&spec.toll));
    let lexp: Vec<f64> = (0..=n_max).map(|i| if i < 2 { 0.0 } else { f.eval(i as f64) * la }).collect();
    if lexp.iter().any(|v| !v.is_finite()) {
        return Err(SynthError::Overflow("alpha^f(n) leaves the log-domain range".into()));
    }
    let margin_at = |n: usize, log_e: f64| {
        let lhs = lexp[n];
        let rhs = toll.eval(n as f64) * la + log_e;
        lhs - rhs
    };
    let margins: Vec<f64> = match spec.shape.half_weight() {
        Some(_) => {
            let gamma = gamma_f64(&spec.shape);
            let mut prefix = vec![f64::NEG_INFINITY; n_max as usize + 1];
            for i in 1..=n_max as usize {
                prefix[i] = log_add(prefix[i - 1], lexp[i - 1]);
            }
            let range = |lo: usize, hi: usize| log_sub(prefix[hi], prefix[lo]);
            (2..=n_max as usize)
                .map(|n| {
                    let ln_n = (n as f64).ln();
                    let half = log_add(range(n.div_ceil(2), n), range(n / 2, n));
                    let uni = prefix[n];
                    let mut log_e = f64::NEG_INFINITY;
                    if gamma > 0.0 {
                        log_e = log_add(log_e, gamma.ln() + half);
                    }
                    if gamma < 1.0 {
                        log_e = log_add(log_e, (1.0 - gamma).ln() + uni);
                    }
                    margin_at(n, log_e - ln_n)
                })
                .collect()
        }
        None => (2..=n_max as usize)
            .into_par_iter()
            .map(|n| {
                let m = (0..n).map(|i| lexp[i] + lexp[n - 1 - i]).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|i| (lexp[i] + lexp[n - 1 - i] - m).exp()).sum();
                margin_at(n, m + s.ln() - (n as f64).ln())
            })
            .collect(),
    };
    for (k, m) in margins.iter().enumerate() {
        let n = k as u64 + 2;
        let scale = lexp[n as usize].abs().max(1.0);
        out.min_log_margin = out.min_log_margin.min(*m);
        if *m < -1e-12 * scale && out.first_violation.is_none() {
            out.holds = false;
            out.first_violation = Some(n);
        }
    }
    Ok(out)
}

/// Convenience: the separability grid check used by tests and reports.
/// Returns true when `psi >= 0` on `[1, c*]` and `psi < 0` on `(c*, 4c*]`.
pub fn separability_grid_check(psi: &PsiExpr, cstar: f64, points: usize) -> bool {
    let tol = |c: f64| 1e-9 * psi.terms().iter().map(|t| t.mu.abs()).sum::<f64>().max(1.0) * c.powf(psi.terms().iter().map(|t| t.nu).fold(0.0, f64::max)).max(1.0);
    let below = (0..points).all(|k| {
        let c = 1.0 + (cstar - 1.0) * k as f64 / (points - 1) as f64;
        psi.eval(c).is_ok_and(|v| v >= -tol(c))
    });
    let above = (1..=points).all(|k| {
        let c = cstar + 3.0 * cstar * k as f64 / points as f64;
        c <= cstar * (1.0 + 1e-5) || psi.eval_scaled(c) < 0.0
    });
    below && above
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prr_model::RecursionShape;

    fn spec(toll: &str, shape: RecursionShape, f: &str, kappa: &str) -> PrrSpec {
        PrrSpec {
            name: "t".into(),
            toll: LinLogExpr::parse(toll).unwrap(),
            shape,
            f: LinLogExpr::parse(f).unwrap(),
            kappa: LinLogExpr::parse(kappa).unwrap(),
            nstar: NStar::Symbolic,
            blocks: 0,
        }
    }

    #[test]
    fn condition_text() {
        let qs = spec("n - 1", RecursionShape::HalfSplit, "5*n", "12*n");
        let c = gen_condition(&qs).unwrap();
        assert_eq!(
            c.to_string(),
            "α^(5*n) ≥ α^(n - 1)·(1/n)·(Σ_{i=⌈n/2⌉}^{n-1} α^(5*i) + Σ_{i=⌊n/2⌋}^{n-1} α^(5*i))"
        );
        let l1 = spec("n", RecursionShape::Uniform, "5*n", "13*n");
        assert_eq!(gen_condition(&l1).unwrap().to_string(), "α^(5*n) ≥ α^(n)·(1/n)·(Σ_{i=0}^{n-1} α^(5*i))");
        let qsort = spec("n - 1", RecursionShape::TwoCallSplit, "9*n*ln(n)", "11*n*ln(n)");
        assert_eq!(gen_condition(&qsort), Err(SynthError::UnsupportedShape("twocall_split")));
    }

    #[test]
    fn integral_text_and_value() {
        let (text, eval) = integral_bound(&LinLogExpr::parse("5*n").unwrap()).unwrap();
        assert_eq!(text, "(α^(5(r+1)) − α^(5l))/(5·ln α)");
        let alpha: f64 = 1.07;
        let sum: f64 = (3..=9).map(|i| alpha.powi(5 * i)).sum();
        assert!(eval(alpha, 3.0, 9.0) >= sum);
        assert!(integral_bound(&LinLogExpr::parse("n*ln(n)").unwrap()).is_none());
    }

    #[test]
    fn quickselect_psi() {
        let qs = spec("n - 1", RecursionShape::HalfSplit, "5*n", "12*n");
        let strong = overapprox_sums(&gen_condition(&qs).unwrap(), 0).unwrap();
        let (psi, g) = substitute_simplify(&strong).unwrap();
        assert_eq!(g, Basis::N);
        assert_eq!(psi, PsiExpr::parse("5*c^1.5*ln(c) - 2*c^2.5 + 2").unwrap());
        let trace = prove_separable(&psi);
        assert!(trace.separable);
        let cstar = find_cstar(&psi, &trace, CSTAR_REL_TOL);
        assert!((cstar - 2.74).abs() < 0.01, "{cstar}");
    }

    #[test]
    fn strengthened_matches_printed_form() {
        // alpha^{5n} >= alpha^{n-1} (2/n) (alpha^{5n} - alpha^{2.5n}) / (5 ln alpha), scaled by 5 n ln alpha.
        let qs = spec("n - 1", RecursionShape::HalfSplit, "5*n", "12*n");
        let ConditionExpr::Closed { terms, .. } = overapprox_sums(&gen_condition(&qs).unwrap(), 0).unwrap() else {
            panic!()
        };
        for (alpha, n) in [(1.01f64, 7.0f64), (1.2, 3.0), (1.003, 40.0)] {
            let la = alpha.ln();
            let closed: f64 = terms
                .iter()
                .map(|t| {
                    let (l, s) = t.log_eval(alpha, n);
                    s * l.exp()
                })
                .sum();
            let printed = alpha.powf(5.0 * n)
                - alpha.powf(n - 1.0) * (2.0 / n) * (alpha.powf(5.0 * n) - alpha.powf(2.5 * n)) / (5.0 * la);
            assert!((closed - printed * 5.0 * n * la).abs() < 1e-9 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn separability_examples() {
        let t = prove_separable(&PsiExpr::parse("1 - c").unwrap());
        assert!(t.separable);
        assert_eq!(find_cstar(&PsiExpr::parse("1 - c").unwrap(), &t, 1e-9), 1.0);
        assert!(!prove_separable(&PsiExpr::parse("c - 2").unwrap()).separable);
        let p = PsiExpr::parse("2 - c").unwrap();
        let c = find_cstar(&p, &prove_separable(&p), 1e-9);
        assert!((c - 2.0).abs() < 1e-8);
        let p1 = PsiExpr::parse("7.5*ln(c) + 5 - 5*c").unwrap();
        let c = find_cstar(&p1, &prove_separable(&p1), 1e-9);
        assert!(c > 2.1 && c < 2.2, "{c}");
        let tr = prove_separable(&PsiExpr::parse("5*c^1.5*ln(c) - 2*c^2.5 + 2").unwrap());
        let last = &tr.steps.last().unwrap();
        assert_eq!(last.rule, Rule::StrictDecreasing);
        assert!(tr.steps.iter().any(|s| s.expr == PsiExpr::parse("7.5*c^-1 - 5").unwrap().to_string()
            || s.expr == PsiExpr::parse("7.5 - 5*c").unwrap().to_string()));
    }

    #[test]
    fn alpha_forms() {
        let a = solve_alpha(2.74, Basis::N, NStar::Concrete(100)).unwrap();
        assert!((a.value.unwrap() - 2.74f64.powf(0.01)).abs() < 1e-15);
        let a = solve_alpha(2.3, Basis::N, NStar::Symbolic).unwrap();
        assert_eq!(a.closed_form, "2.3^(1/n*)");
        assert!(a.value.is_none());
        assert!(matches!(solve_alpha(1.0, Basis::N, NStar::Symbolic), Err(SynthError::TrivialBound(_))));
        assert_eq!(AlphaForm::parse("2.3^(1/nstar)").unwrap().per, Basis::N);
        assert_eq!(AlphaForm::parse("3.0").unwrap().per, Basis::Const);
        assert!(AlphaForm::parse("0.5").is_err());
    }

    #[test]
    fn eval_bound_examples() {
        let alpha = AlphaForm::new(2.3, Basis::N, None);
        let f = LinLogExpr::parse("9*n*ln(n)").unwrap();
        let kappa = LinLogExpr::parse("11*n*ln(n) + 12*n").unwrap();
        for n in [10u64, 100, 1000] {
            let want = 2.3f64.powf(-2.0 * (n as f64).ln() - 12.0);
            let got = eval_bound(&alpha, &f, &kappa, n).unwrap();
            assert!((got / want - 1.0).abs() < 1e-10);
        }
        assert_eq!(eval_bound(&alpha, &f, &f, 50).unwrap(), 1.0);
        assert!(matches!(eval_bound(&alpha, &kappa, &f, 50), Err(SynthError::KappaBelowF { .. })));
    }

    #[test]
    fn verify_examples() {
        let mut qsort = spec("n - 1", RecursionShape::TwoCallSplit, "9*n*ln(n)", "11*n*ln(n)");
        qsort.nstar = NStar::Concrete(200);
        let a = AlphaForm::parse("2.3^(1/nstar)").unwrap();
        assert!(verify_condition_numeric(&qsort, &a, 200, 200).unwrap().holds);
        let tiny = AlphaForm::new(1.0001, Basis::Const, None);
        assert!(verify_condition_numeric(&qsort, &tiny, 8, 8).unwrap().holds);
        let big = AlphaForm::new(3.0, Basis::Const, None);
        let v = verify_condition_numeric(&qsort, &big, 200, 200).unwrap();
        assert!(!v.holds && v.first_violation.is_some());
        assert!(verify_condition_numeric(&qsort, &big, 200, 1).unwrap().holds);
        let qs = spec("n - 1", RecursionShape::HalfSplit, "5*n", "12*n");
        let a = AlphaForm::new(2.74, Basis::N, None);
        assert!(verify_condition_numeric(&qs, &a, 50, 50).unwrap().holds);
    }

    #[test]
    fn derive_quickselect() {
        let qs = spec("n - 1", RecursionShape::HalfSplit, "5*n", "12*n");
        let b = derive_bound(&qs, &SynthOptions::default());
        assert_eq!(b.status, Status::Bound, "{:?}", b.failures);
        assert!(b.bound_value.unwrap() < 9e-4);
        assert_eq!(b.bound_formula, format!("{}^(-7)", fmt_num(b.cstar.unwrap())));
    }

    #[test]
    fn derive_randomsearch() {
        let rs = spec("1", RecursionShape::HalfSplit, "5*ln(n)", "11*ln(n)");
        let b = derive_bound(&rs, &SynthOptions::default());
        assert_eq!(b.status, Status::Bound, "{:?}", b.failures);
        let e = b.nstar_exponent.unwrap();
        assert!((e - 8.24).abs() < 0.1, "{e}");
    }

    #[test]
    fn l1diameter_psi() {
        let l1 = spec("n", RecursionShape::Uniform, "5*n", "13*n");
        let strong = overapprox_sums(&gen_condition(&l1).unwrap(), 0).unwrap();
        let (psi, _) = substitute_simplify(&strong).unwrap();
        assert_eq!(psi, PsiExpr::parse("5*c^4*ln(c) - c^5 + 1").unwrap());
    }

    #[test]
    fn l2diameter_blocks() {
        let l2 = spec("n*ln(n)", RecursionShape::Uniform, "3.5*n*ln(n)", "20*n*ln(n)");
        let b = derive_bound(&l2, &SynthOptions::default());
        assert_eq!(b.status, Status::Bound, "{:?}", b.failures);
        assert_eq!(b.b_used, Some(4), "{:?}", b.failures);
        let c = b.cstar.unwrap();
        assert!((c - 1.98).abs() < 0.02, "{c} {:?}", b.psi);
    }

    #[test]
    fn twocall_is_trivial() {
        let qsort = spec("n - 1", RecursionShape::TwoCallSplit, "9*n*ln(n)", "11*n*ln(n)");
        assert!(derive_bound(&qsort, &SynthOptions::default()).is_trivial());
    }
}
