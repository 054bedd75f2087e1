//! Probabilistic recurrence relations and their stack-machine semantics.
//!
//! A recurrence `T(n) = a(n) + T(h(n))` (or `a(n) + T(h1) + T(h2)` for the
//! two-call shape) is executed as a Markov chain over a stack of pending
//! instance sizes; the accumulated toll at termination is the sampled cost.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::expr::{parse_rational, rat_to_f64, Basis, ExprError, LinLogExpr, LinLogF64};

/// Largest `n*` accepted by [`exact_tail`].
pub const EXACT_MAX_N: u64 = 14;
/// Defensive bound on chain transitions per trial.
pub const STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrrError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("chain is already terminal")]
    TerminalState,
    #[error("trial exceeded {STEP_CAP} transitions")]
    RuntimeCapExceeded,
    #[error("exact tail supports n* <= {EXACT_MAX_N}, got {0}")]
    TooLarge(u64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// How a call of size `n` spawns its children.
#[derive(Debug, Clone, PartialEq)]
pub enum RecursionShape {
    /// One child, uniform on `{0..n-1}`.
    Uniform,
    /// One child drawn from `{ceil(n/2)..n-1} + {floor(n/2)..n-1}` (as a multiset).
    HalfSplit,
    /// `HalfSplit` with probability `gamma`, else `Uniform`.
    Mixed(BigRational),
    /// Two children `(i, n-1-i)` with `i` uniform on `{0..n-1}`.
    TwoCallSplit,
}

impl RecursionShape {
    /// Weight of the half-split part, `None` for the two-call shape.
    pub fn half_weight(&self) -> Option<BigRational> {
        match self {
            RecursionShape::Uniform => Some(BigRational::zero()),
            RecursionShape::HalfSplit => Some(BigRational::one()),
            RecursionShape::Mixed(g) => Some(g.clone()),
            RecursionShape::TwoCallSplit => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RecursionShape::Uniform => "uniform",
            RecursionShape::HalfSplit => "halfsplit",
            RecursionShape::Mixed(_) => "mixed",
            RecursionShape::TwoCallSplit => "twocall_split",
        }
    }
}

/// Problem size at which the bound is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NStar {
    Concrete(u64),
    Symbolic,
}

impl NStar {
    pub fn concrete(self) -> Option<u64> {
        match self {
            NStar::Concrete(n) => Some(n),
            NStar::Symbolic => None,
        }
    }
}

impl fmt::Display for NStar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NStar::Concrete(n) => write!(f, "{n}"),
            NStar::Symbolic => f.write_str("symbolic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrrSpec {
    pub name: String,
    pub toll: LinLogExpr,
    pub shape: RecursionShape,
    pub f: LinLogExpr,
    pub kappa: LinLogExpr,
    pub nstar: NStar,
    /// Block count for the partition strategy; 0 selects automatically.
    pub blocks: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrrFile {
    prr: PrrSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrrSection {
    name: String,
    toll: String,
    shape: String,
    gamma: Option<Scalar>,
    f: String,
    kappa: String,
    nstar: Scalar,
    #[serde(rename = "B", default)]
    blocks: u32,
}

/// 1-based line of `key = ...` in a TOML source, for error messages.
pub(crate) fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// TOML scalar that may be written as a number or a quoted literal.
#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
pub(crate) enum Scalar {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Scalar {
    pub(crate) fn to_rational(&self) -> Option<BigRational> {
        match self {
            Scalar::Int(i) => Some(BigRational::from_integer(BigInt::from(*i))),
            Scalar::Float(x) => parse_rational(&format!("{x}")),
            Scalar::Str(s) => parse_rational(s),
        }
    }
}

fn expr_field(src: &str, key: &str, text: &str) -> Result<LinLogExpr, PrrError> {
    LinLogExpr::parse(text).map_err(|e| {
        let line = line_of(src, key).map_or(String::new(), |l| format!("line {l}: "));
        PrrError::Syntax(format!("{line}{key}: {e}"))
    })
}

/// True when `e(n) >= 0` for every real `n >= 1`.
///
/// Checks a dense grid plus the sign of the dominant term; exact for the
/// four-element basis since each pair of basis functions crosses at most once
/// beyond the grid.
pub(crate) fn nonneg_on_ray(e: &LinLogExpr) -> bool {
    if let Some(top) = e.top_basis() {
        if e.coeff(top).is_negative() {
            return false;
        }
    }
    let fe = LinLogF64::from(e);
    let grid = (1..=2000).map(|k| 1.0 + (k - 1) as f64 * 0.01).chain((0..400).map(|k| 21.0 * 1.1f64.powi(k)));
    grid.take_while(|n| n.is_finite()).all(|n| fe.eval(n) >= -1e-9 * (1.0 + n * n.ln().max(1.0)))
}

impl PrrSpec {
    pub fn parse(src: &str) -> Result<PrrSpec, PrrError> {
        let file: PrrFile = toml::from_str(src).map_err(|e| PrrError::Syntax(e.to_string()))?;
        let s = file.prr;
        let toll = expr_field(src, "toll", &s.toll)?;
        let f = expr_field(src, "f", &s.f)?;
        let kappa = expr_field(src, "kappa", &s.kappa)?;
        let gamma = match &s.gamma {
            None => None,
            Some(v) => Some(v.to_rational().ok_or_else(|| {
                PrrError::Syntax(format!("line {}: gamma is not a number", line_of(src, "gamma").unwrap_or(0)))
            })?),
        };
        let shape = match (s.shape.as_str(), gamma) {
            ("uniform", None) => RecursionShape::Uniform,
            ("halfsplit", None) => RecursionShape::HalfSplit,
            ("twocall_split", None) => RecursionShape::TwoCallSplit,
            ("mixed", Some(g)) => RecursionShape::Mixed(g),
            ("mixed", None) => return Err(PrrError::Syntax("shape \"mixed\" requires gamma".into())),
            ("uniform" | "halfsplit" | "twocall_split", Some(_)) => {
                return Err(PrrError::Syntax(format!("gamma is only allowed with shape \"mixed\", not {:?}", s.shape)))
            }
            (other, _) => return Err(PrrError::Syntax(format!("unknown shape {other:?}"))),
        };
        let nstar = match &s.nstar {
            Scalar::Int(n) if *n >= 1 => NStar::Concrete(*n as u64),
            Scalar::Str(t) if t == "symbolic" => NStar::Symbolic,
            _ => return Err(PrrError::Syntax("nstar must be a positive integer or \"symbolic\"".into())),
        };
        let spec = PrrSpec { name: s.name, toll, shape, f, kappa, nstar, blocks: s.blocks };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PrrError> {
        let bad = |m: String| Err(PrrError::InvariantViolation(m));
        if let RecursionShape::Mixed(g) = &self.shape {
            if g.is_negative() || *g > BigRational::one() {
                return bad(format!("gamma = {g} is outside [0, 1]"));
            }
        }
        if !nonneg_on_ray(&self.toll) {
            return bad(format!("toll {} is negative for some n >= 1", self.toll));
        }
        if !nonneg_on_ray(&self.f) {
            return bad(format!("f = {} is negative for some n >= 1", self.f));
        }
        self.f.leading_term().map_err(|e| PrrError::InvariantViolation(format!("f: {e}")))?;
        let gap = &self.kappa - &self.f;
        match self.nstar {
            NStar::Concrete(n) => {
                let (k, fv) = (self.kappa.eval(n as f64)?, self.f.eval(n as f64)?);
                if k < fv - 1e-9 * fv.abs().max(1.0) {
                    return bad(format!("kappa(n*) = {k} is below f(n*) = {fv}"));
                }
            }
            NStar::Symbolic => {
                if !nonneg_on_ray(&gap) {
                    return bad(format!("kappa - f = {gap} is negative for large n*"));
                }
            }
        }
        Ok(())
    }

    pub fn with_nstar(&self, nstar: NStar) -> PrrSpec {
        PrrSpec { nstar, ..self.clone() }
    }
}

/// Child sizes produced by one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Children {
    One(u64),
    Two(u64, u64),
}

impl Children {
    pub fn sizes(&self) -> impl Iterator<Item = u64> {
        let (a, b) = match *self {
            Children::One(a) => (Some(a), None),
            Children::Two(a, b) => (Some(a), Some(b)),
        };
        a.into_iter().chain(b)
    }
}

fn ratio(p: u64, q: u64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn single_child_mass(half: &BigRational, n: u64) -> BTreeMap<u64, BigRational> {
    let mut out: BTreeMap<u64, BigRational> = BTreeMap::new();
    let uni = BigRational::one() - half;
    if !uni.is_zero() {
        for h in 0..n {
            *out.entry(h).or_insert_with(BigRational::zero) += &uni * ratio(1, n);
        }
    }
    if !half.is_zero() {
        for lo in [n.div_ceil(2), n / 2] {
            for h in lo..n {
                *out.entry(h).or_insert_with(BigRational::zero) += half * ratio(1, n);
            }
        }
    }
    out.retain(|_, p| !p.is_zero());
    out
}

/// Exact distribution of the children of a call of size `n >= 2`.
pub fn child_distribution(shape: &RecursionShape, n: u64) -> Result<Vec<(Children, BigRational)>, PrrError> {
    if n < 2 {
        return Err(PrrError::Domain(format!("child distribution needs n >= 2, got {n}")));
    }
    Ok(match shape.half_weight() {
        Some(half) => single_child_mass(&half, n).into_iter().map(|(h, p)| (Children::One(h), p)).collect(),
        None => (0..n).map(|i| (Children::Two(i, n - 1 - i), ratio(1, n))).collect(),
    })
}

/// Samples the children of a call of size `n >= 2`.
pub fn sample_children<R: Rng + ?Sized>(shape: &RecursionShape, gamma: f64, n: u64, rng: &mut R) -> Children {
    let half_split = |rng: &mut R| {
        let u = rng.gen_range(0..n);
        let short = n / 2;
        if u < short {
            n.div_ceil(2) + u
        } else {
            short + (u - short)
        }
    };
    match shape {
        RecursionShape::Uniform => Children::One(rng.gen_range(0..n)),
        RecursionShape::HalfSplit => Children::One(half_split(rng)),
        RecursionShape::Mixed(_) => {
            if rng.gen::<f64>() < gamma {
                Children::One(half_split(rng))
            } else {
                Children::One(rng.gen_range(0..n))
            }
        }
        RecursionShape::TwoCallSplit => {
            let i = rng.gen_range(0..n);
            Children::Two(i, n - 1 - i)
        }
    }
}

/// A state of the stack chain. The top of the stack is the last element.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub pending: Vec<u64>,
    pub cost: f64,
}

impl ChainState {
    pub fn initial(nstar: u64) -> Self {
        ChainState { pending: vec![nstar], cost: 0.0 }
    }

    pub fn depth(&self) -> usize {
        self.pending.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Applies one transition with the children already drawn.
///
/// A top element of size at most 1 is popped at no cost (`children` is
/// ignored). Otherwise the toll is charged and positive-size children are
/// pushed, the first child ending on top.
pub fn step_with(state: &ChainState, spec: &PrrSpec, children: Children) -> Result<ChainState, PrrError> {
    let mut next = state.clone();
    let n = next.pending.pop().ok_or(PrrError::TerminalState)?;
    if n <= 1 {
        return Ok(next);
    }
    next.cost += spec.toll.eval(n as f64)?;
    let sizes: Vec<u64> = children.sizes().collect();
    next.pending.extend(sizes.into_iter().rev().filter(|&h| h >= 1));
    Ok(next)
}

/// One transition of the chain.
pub fn step<R: Rng + ?Sized>(state: &ChainState, spec: &PrrSpec, rng: &mut R) -> Result<ChainState, PrrError> {
    let &n = state.pending.last().ok_or(PrrError::TerminalState)?;
    if n <= 1 {
        return step_with(state, spec, Children::One(0));
    }
    let gamma = gamma_f64(&spec.shape);
    step_with(state, spec, sample_children(&spec.shape, gamma, n, rng))
}

pub(crate) fn gamma_f64(shape: &RecursionShape) -> f64 {
    shape.half_weight().map_or(0.0, |g| rat_to_f64(&g))
}

/// Precomputed data for repeated trials of one spec.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    shape: RecursionShape,
    gamma: f64,
    toll: LinLogF64,
}

impl TrialRunner {
    pub fn new(spec: &PrrSpec) -> Self {
        TrialRunner { shape: spec.shape.clone(), gamma: gamma_f64(&spec.shape), toll: LinLogF64::from(&spec.toll) }
    }

    /// Runs the chain from `n*` to termination and returns the total cost.
    ///
    /// Children of size 0 or 1 are never pushed; they would be popped at no
    /// cost, so the cost distribution is unchanged.
    pub fn run<R: Rng + ?Sized>(&self, nstar: u64, rng: &mut R) -> Result<f64, PrrError> {
        let mut stack: Vec<u64> = Vec::with_capacity(64);
        if nstar > 1 {
            stack.push(nstar);
        }
        let mut cost = 0.0;
        let mut steps = 0u64;
        while let Some(n) = stack.pop() {
            steps += 1;
            if steps > STEP_CAP {
                return Err(PrrError::RuntimeCapExceeded);
            }
            cost += self.toll.eval(n as f64);
            match sample_children(&self.shape, self.gamma, n, rng) {
                Children::One(h) => {
                    if h > 1 {
                        stack.push(h);
                    }
                }
                Children::Two(a, b) => {
                    if b > 1 {
                        stack.push(b);
                    }
                    if a > 1 {
                        stack.push(a);
                    }
                }
            }
        }
        Ok(cost)
    }
}

/// Total cost of one run from `n*`.
pub fn run_trial<R: Rng + ?Sized>(spec: &PrrSpec, nstar: u64, rng: &mut R) -> Result<f64, PrrError> {
    TrialRunner::new(spec).run(nstar, rng)
}

/// Costs are compared with this slack so that sums of tolls that equal
/// `kappa` mathematically are not lost to rounding.
pub fn reaches(cost: f64, kappa: f64) -> bool {
    cost >= kappa - 1e-9 * kappa.abs().max(1.0)
}

const COST_SCALE: f64 = 1e9;

fn cost_key(c: f64) -> i64 {
    (c * COST_SCALE).round() as i64
}

/// Exact distribution of the total cost from `n`, keyed by cost in units of 1e-9.
pub fn cost_distribution(spec: &PrrSpec, nstar: u64) -> Result<BTreeMap<i64, BigRational>, PrrError> {
    if nstar > EXACT_MAX_N {
        return Err(PrrError::TooLarge(nstar));
    }
    let point = |k: i64| BTreeMap::from([(k, BigRational::one())]);
    let mut dists: Vec<BTreeMap<i64, BigRational>> = vec![point(0), point(0)];
    for n in 2..=nstar.max(1) {
        let toll = cost_key(spec.toll.eval(n as f64)?);
        let mut acc: BTreeMap<i64, BigRational> = BTreeMap::new();
        for (ch, p) in child_distribution(&spec.shape, n)? {
            let combined = match ch {
                Children::One(h) => dists[h as usize].clone(),
                Children::Two(a, b) => convolve(&dists[a as usize], &dists[b as usize]),
            };
            for (k, q) in combined {
                *acc.entry(k + toll).or_insert_with(BigRational::zero) += &p * q;
            }
        }
        dists.push(acc);
    }
    Ok(dists.swap_remove(nstar as usize))
}

fn convolve(a: &BTreeMap<i64, BigRational>, b: &BTreeMap<i64, BigRational>) -> BTreeMap<i64, BigRational> {
    let mut out: BTreeMap<i64, BigRational> = BTreeMap::new();
    for (ka, pa) in a {
        for (kb, pb) in b {
            *out.entry(ka + kb).or_insert_with(BigRational::zero) += pa * pb;
        }
    }
    out
}

/// Exact `Pr[C >= kappa]` for `n* <= 14`.
pub fn exact_tail(spec: &PrrSpec, nstar: u64, kappa: f64) -> Result<BigRational, PrrError> {
    let dist = cost_distribution(spec, nstar)?;
    Ok(dist
        .into_iter()
        .filter(|(k, _)| reaches(*k as f64 / COST_SCALE, kappa))
        .fold(BigRational::zero(), |acc, (_, p)| acc + p))
}

/// Leading basis of `f`, used as the substitution variable.
pub fn growth_basis(spec: &PrrSpec) -> Result<Basis, PrrError> {
    Ok(spec.f.leading_term()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const QUICKSELECT: &str = r#"
[prr]
name = "QuickSelect"
toll = "n - 1"
shape = "halfsplit"
f = "5*n"
kappa = "12*n"
nstar = "symbolic"
"#;

    fn quicksort() -> PrrSpec {
        PrrSpec {
            name: "QuickSort".into(),
            toll: LinLogExpr::parse("n - 1").unwrap(),
            shape: RecursionShape::TwoCallSplit,
            f: LinLogExpr::parse("9*n*ln(n)").unwrap(),
            kappa: LinLogExpr::parse("11*n*ln(n) + 12*n").unwrap(),
            nstar: NStar::Concrete(3),
            blocks: 0,
        }
    }

    #[test]
    fn parses_examples() {
        let s = PrrSpec::parse(QUICKSELECT).unwrap();
        assert_eq!(s.shape, RecursionShape::HalfSplit);
        assert_eq!(s.nstar, NStar::Symbolic);
        let l1 = QUICKSELECT.replace("n - 1", "n").replace("halfsplit", "uniform");
        assert_eq!(PrrSpec::parse(&l1).unwrap().shape, RecursionShape::Uniform);
        let low = QUICKSELECT.replace("12*n", "3*n");
        assert!(matches!(PrrSpec::parse(&low), Err(PrrError::InvariantViolation(_))));
        let neg = QUICKSELECT.replace("n - 1", "1 - n");
        assert!(matches!(PrrSpec::parse(&neg), Err(PrrError::InvariantViolation(_))));
        let mixed = QUICKSELECT.replace("halfsplit\"", "mixed\"\ngamma = 1.5");
        assert!(matches!(PrrSpec::parse(&mixed), Err(PrrError::InvariantViolation(_))));
        let mixed = QUICKSELECT.replace("halfsplit\"", "mixed\"\ngamma = \"1/3\"");
        assert_eq!(PrrSpec::parse(&mixed).unwrap().shape, RecursionShape::Mixed(ratio(1, 3)));
    }

    #[test]
    fn reports_line_numbers() {
        let bad = QUICKSELECT.replace("5*n", "5*m");
        match PrrSpec::parse(&bad) {
            Err(PrrError::Syntax(m)) => assert!(m.contains("line 6"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PrrSpec::parse("[prr\nname="), Err(PrrError::Syntax(_))));
    }

    #[test]
    fn child_distribution_examples() {
        let d = child_distribution(&RecursionShape::HalfSplit, 2).unwrap();
        assert_eq!(d, vec![(Children::One(1), ratio(1, 1))]);
        let d = child_distribution(&RecursionShape::HalfSplit, 5).unwrap();
        assert_eq!(
            d,
            vec![(Children::One(2), ratio(1, 5)), (Children::One(3), ratio(2, 5)), (Children::One(4), ratio(2, 5))]
        );
        let d = child_distribution(&RecursionShape::TwoCallSplit, 3).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d[1], (Children::Two(1, 1), ratio(1, 3)));
        assert!(child_distribution(&RecursionShape::Uniform, 1).is_err());
    }

    #[test]
    fn step_examples() {
        let qs = PrrSpec::parse(QUICKSELECT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = step(&ChainState::initial(1), &qs, &mut rng).unwrap();
        assert!(s.is_terminal() && s.cost == 0.0);
        let s1 = step(&ChainState::initial(2), &qs, &mut rng).unwrap();
        assert_eq!((s1.pending.clone(), s1.cost), (vec![1], 1.0));
        let s2 = step(&s1, &qs, &mut rng).unwrap();
        assert_eq!((s2.pending.clone(), s2.cost), (vec![], 1.0));
        assert_eq!(step(&s2, &qs, &mut rng), Err(PrrError::TerminalState));
        let s = step_with(&ChainState::initial(3), &quicksort(), Children::Two(1, 1)).unwrap();
        assert_eq!((s.depth(), s.cost), (2, 2.0));
    }

    #[test]
    fn trial_examples() {
        let qs = PrrSpec::parse(QUICKSELECT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(run_trial(&qs, 1, &mut rng).unwrap(), 0.0);
        assert_eq!(run_trial(&qs, 2, &mut rng).unwrap(), 1.0);
        for _ in 0..50 {
            let c = run_trial(&quicksort(), 3, &mut rng).unwrap();
            assert!(c == 2.0 || c == 3.0);
        }
    }

    #[test]
    fn exact_tail_examples() {
        let qs = PrrSpec::parse(QUICKSELECT).unwrap();
        assert_eq!(exact_tail(&qs, 2, 1.0).unwrap(), ratio(1, 1));
        assert_eq!(exact_tail(&qs, 2, 1.5).unwrap(), ratio(0, 1));
        assert_eq!(exact_tail(&quicksort(), 3, 3.0).unwrap(), ratio(2, 3));
        assert_eq!(exact_tail(&quicksort(), 3, 2.0).unwrap(), ratio(1, 1));
        assert_eq!(exact_tail(&qs, 15, 1.0), Err(PrrError::TooLarge(15)));
    }
}
