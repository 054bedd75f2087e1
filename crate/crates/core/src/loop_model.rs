//! Single probabilistic while loops with polyhedral guards and incremental updates.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::expr::{fmt_rational, parse_rational, rat_to_f64};
use crate::prr_model::{line_of, Scalar};
use crate::simplex::{self, Cmp, Lp, LpResult};

/// Default iteration cap per simulated run.
pub const DEFAULT_CAP: u64 = 100_000_000;
/// Largest number of violated-constraint combinations checked by LP for coverage.
const COVERAGE_LP_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("bad distribution: {0}")]
    BadDistribution(String),
    #[error("non-incremental assignment: {0}")]
    NonIncremental(String),
    #[error("no branch covers the state {0}")]
    NoBranchCovers(String),
    #[error("run exceeded {0} iterations")]
    CapExceeded(u64),
}

/// `a · x <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinIneq {
    pub a: Vec<BigRational>,
    pub b: BigRational,
}

impl LinIneq {
    pub fn holds(&self, x: &[f64]) -> bool {
        let lhs: f64 = self.a.iter().zip(x).map(|(a, v)| rat_to_f64(a) * v).sum();
        let b = rat_to_f64(&self.b);
        lhs <= b + 1e-9 * b.abs().max(1.0)
    }

    fn fmt_with(&self, vars: &[String]) -> String {
        let lhs = fmt_linear(&self.a, &BigRational::zero(), vars);
        format!("{lhs} <= {}", fmt_rational(&self.b))
    }
}

/// Formats `coeffs · vars + offset`.
pub fn fmt_linear(coeffs: &[BigRational], offset: &BigRational, vars: &[String]) -> String {
    let mut out = String::new();
    let mut push = |c: &BigRational, sym: Option<&str>| {
        if c.is_zero() {
            return;
        }
        let neg = c.is_negative();
        if out.is_empty() {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        let mag = c.abs();
        match sym {
            Some(s) if mag.is_one() => out.push_str(s),
            Some(s) => out.push_str(&format!("{}*{s}", fmt_rational(&mag))),
            None => out.push_str(&fmt_rational(&mag)),
        }
    };
    for (c, v) in coeffs.iter().zip(vars) {
        push(c, Some(v));
    }
    push(offset, None);
    if out.is_empty() {
        "0".into()
    } else {
        out
    }
}

/// Conjunction of inequalities; empty means the whole space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polyhedron {
    pub rows: Vec<LinIneq>,
}

impl Polyhedron {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.rows.iter().all(|r| r.holds(x))
    }
}

/// One guarded branch: a region (or everywhere) and a distribution over increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub region: Option<Polyhedron>,
    pub steps: Vec<(Vec<BigRational>, BigRational)>,
}

impl Branch {
    pub fn expected_delta(&self) -> Vec<BigRational> {
        let d = self.steps.first().map_or(0, |s| s.0.len());
        let mut e = vec![BigRational::zero(); d];
        for (delta, p) in &self.steps {
            for (ei, di) in e.iter_mut().zip(delta) {
                *ei += p * di;
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    pub name: String,
    pub vars: Vec<String>,
    pub guard: Polyhedron,
    pub init: Vec<BigRational>,
    pub branches: Vec<Branch>,
    /// Iteration thresholds to report, if the file lists any.
    pub kappas: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopFile {
    #[serde(rename = "loop")]
    header: LoopHeader,
    #[serde(rename = "branch", default)]
    branches: Vec<BranchFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopHeader {
    name: String,
    vars: Vec<String>,
    guard: Vec<String>,
    init: BTreeMap<String, Scalar>,
    #[serde(default)]
    kappas: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    region: Option<Vec<String>>,
    #[serde(rename = "step", default)]
    steps: Vec<StepFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    prob: Scalar,
    #[serde(default)]
    delta: BTreeMap<String, Scalar>,
    assign: Option<toml::Value>,
}

fn syntax(src: &str, key: &str, msg: String) -> LoopError {
    match line_of(src, key) {
        Some(l) => LoopError::Syntax(format!("line {l}: {msg}")),
        None => LoopError::Syntax(msg),
    }
}

/// Parses `sum of terms` where each term is `[number][*]var` or a number.
fn parse_affine(text: &str, vars: &[String]) -> Result<(Vec<BigRational>, BigRational), String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty expression".into());
    }
    let mut coeffs = vec![BigRational::zero(); vars.len()];
    let mut constant = BigRational::zero();
    let mut terms = Vec::new();
    let mut start = 0;
    let bytes = s.as_bytes();
    for i in 1..bytes.len() {
        if (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E' | b'*' | b'/') {
            terms.push(&s[start..i]);
            start = i;
        }
    }
    terms.push(&s[start..]);
    for term in terms {
        let (neg, body) = match term.as_bytes()[0] {
            b'-' => (true, &term[1..]),
            b'+' => (false, &term[1..]),
            _ => (false, term),
        };
        let mut coef = BigRational::one();
        let mut var = None;
        for part in body.split('*') {
            if let Some(k) = vars.iter().position(|v| v == part) {
                if var.replace(k).is_some() {
                    return Err(format!("non-linear term {term:?}"));
                }
            } else if let Some(c) = parse_rational(part) {
                coef *= c;
            } else {
                return Err(format!("unknown symbol {part:?}"));
            }
        }
        if neg {
            coef = -coef;
        }
        match var {
            Some(k) => coeffs[k] += coef,
            None => constant += coef,
        }
    }
    Ok((coeffs, constant))
}

/// Parses `lhs <= rhs` or `lhs >= rhs` into `a · x <= b`.
pub fn parse_ineq(text: &str, vars: &[String]) -> Result<LinIneq, String> {
    let (l, r, flip) = if let Some((l, r)) = text.split_once("<=") {
        (l, r, false)
    } else if let Some((l, r)) = text.split_once(">=") {
        (l, r, true)
    } else {
        return Err(format!("{text:?} is not of the form \"... <= ...\" or \"... >= ...\""));
    };
    let (la, lc) = parse_affine(l, vars)?;
    let (ra, rc) = parse_affine(r, vars)?;
    let mut a: Vec<BigRational> = la.iter().zip(&ra).map(|(x, y)| x - y).collect();
    let mut b = rc - lc;
    if flip {
        a = a.into_iter().map(|v| -v).collect();
        b = -b;
    }
    Ok(LinIneq { a, b })
}

fn parse_poly(src: &str, key: &str, rows: &[String], vars: &[String]) -> Result<Polyhedron, LoopError> {
    let rows = rows
        .iter()
        .map(|r| parse_ineq(r, vars).map_err(|e| syntax(src, key, format!("{key}: {e}"))))
        .collect::<Result<_, _>>()?;
    Ok(Polyhedron { rows })
}

impl LoopSpec {
    pub fn parse(src: &str) -> Result<LoopSpec, LoopError> {
        let file: LoopFile = toml::from_str(src).map_err(|e| LoopError::Syntax(e.to_string()))?;
        let h = file.header;
        if h.vars.is_empty() {
            return Err(syntax(src, "vars", "at least one variable is required".into()));
        }
        let vars = h.vars;
        let guard = parse_poly(src, "guard", &h.guard, &vars)?;
        let mut init = vec![BigRational::zero(); vars.len()];
        for (k, v) in &h.init {
            let i = vars.iter().position(|x| x == k).ok_or_else(|| syntax(src, "init", format!("unknown variable {k:?}")))?;
            init[i] = v.to_rational().ok_or_else(|| syntax(src, "init", format!("{k} is not a number")))?;
        }
        let mut branches = Vec::new();
        for (bi, b) in file.branches.into_iter().enumerate() {
            let region = match &b.region {
                Some(rows) => Some(parse_poly(src, "region", rows, &vars)?),
                None => None,
            };
            let mut steps = Vec::new();
            for s in b.steps {
                if s.assign.is_some() {
                    return Err(LoopError::NonIncremental(format!(
                        "branch {}: only increments x := x + delta are supported",
                        bi + 1
                    )));
                }
                let p = s.prob.to_rational().ok_or_else(|| syntax(src, "prob", "prob is not a number".into()))?;
                let mut delta = vec![BigRational::zero(); vars.len()];
                for (k, v) in &s.delta {
                    let i = vars.iter().position(|x| x == k).ok_or_else(|| syntax(src, "delta", format!("unknown variable {k:?}")))?;
                    delta[i] = v.to_rational().ok_or_else(|| syntax(src, "delta", format!("{k} is not a number")))?;
                }
                steps.push((delta, p));
            }
            branches.push(Branch { region, steps });
        }
        let spec = LoopSpec { name: h.name, vars, guard, init, branches, kappas: h.kappas };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        if self.branches.is_empty() {
            return Err(LoopError::NoBranchCovers("the loop has no branches".into()));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.steps.is_empty() {
                return Err(LoopError::BadDistribution(format!("branch {} has no steps", i + 1)));
            }
            if let Some((_, p)) = b.steps.iter().find(|(_, p)| !p.is_positive()) {
                return Err(LoopError::BadDistribution(format!("branch {}: probability {} is not positive", i + 1, fmt_rational(p))));
            }
            let total: BigRational = b.steps.iter().map(|(_, p)| p.clone()).sum();
            if !total.is_one() {
                return Err(LoopError::BadDistribution(format!(
                    "branch {}: probabilities sum to {}, not 1",
                    i + 1,
                    fmt_rational(&total)
                )));
            }
        }
        self.check_coverage()
    }

    pub fn init_f64(&self) -> Vec<f64> {
        self.init.iter().map(rat_to_f64).collect()
    }

    fn fmt_state(&self, x: &[f64]) -> String {
        let parts: Vec<String> = self.vars.iter().zip(x).map(|(v, x)| format!("{v}={x}")).collect();
        format!("{{{}}}", parts.join(", "))
    }

    /// Whether `G ∩ region` has a point, decided by LP.
    pub fn branch_nonempty(&self, branch: &Branch) -> bool {
        let mut rows = self.guard.rows.clone();
        if let Some(r) = &branch.region {
            rows.extend(r.rows.iter().cloned());
        }
        poly_feasible(&rows, self.vars.len())
    }

    /// Every guard point must lie in some branch region.
    fn check_coverage(&self) -> Result<(), LoopError> {
        if self.branches.iter().any(|b| b.region.is_none()) {
            return Ok(());
        }
        let regions: Vec<&Polyhedron> = self.branches.iter().filter_map(|b| b.region.as_ref()).collect();
        if regions.iter().any(|r| r.rows.is_empty()) {
            return Ok(());
        }
        let combos: usize = regions.iter().map(|r| r.rows.len()).product();
        if combos <= COVERAGE_LP_LIMIT {
            // G minus the union is empty iff every choice of one violated row per region is infeasible.
            let mut idx = vec![0usize; regions.len()];
            loop {
                let violated: Vec<&LinIneq> = idx.iter().zip(&regions).map(|(&k, r)| &r.rows[k]).collect();
                if let Some(x) = strict_witness(&self.guard.rows, &violated, self.vars.len()) {
                    return Err(LoopError::NoBranchCovers(format!("{} (no region contains it)", self.fmt_state(&x))));
                }
                let mut k = 0;
                while k < idx.len() {
                    idx[k] += 1;
                    if idx[k] < regions[k].rows.len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == idx.len() {
                    return Ok(());
                }
            }
        }
        // Too many combinations: sample lattice points around the initial state.
        let x0 = self.init_f64();
        let d = x0.len();
        let mut x = vec![0.0; d];
        let radius = if d <= 2 { 30 } else { 4 };
        let side = (2 * radius + 1) as usize;
        for code in 0..side.pow(d as u32) {
            let mut c = code;
            for i in 0..d {
                x[i] = x0[i] + (c % side) as f64 - radius as f64;
                c /= side;
            }
            if self.guard.contains(&x) && !regions.iter().any(|r| r.contains(&x)) {
                return Err(LoopError::NoBranchCovers(self.fmt_state(&x)));
            }
        }
        Ok(())
    }

    /// The branch taken at `x`: first in file order whose region contains it.
    pub fn branch_at(&self, x: &[f64]) -> Option<usize> {
        self.branches.iter().position(|b| b.region.as_ref().map_or(true, |r| r.contains(x)))
    }

    /// Pushforward of each branch's increments through `eta`, merged and sorted by value.
    pub fn branch_delta_projection(&self, eta: &[BigRational]) -> Vec<Vec<(BigRational, BigRational)>> {
        self.branches
            .iter()
            .map(|b| {
                let mut m: BTreeMap<BigRational, BigRational> = BTreeMap::new();
                for (delta, p) in &b.steps {
                    let v: BigRational = eta.iter().zip(delta).map(|(a, d)| a * d).sum();
                    *m.entry(v).or_insert_with(BigRational::zero) += p;
                }
                m.into_iter().collect()
            })
            .collect()
    }
}

fn rows_lp(rows: &[LinIneq], d: usize, extra: usize) -> Lp {
    let mut lp = Lp::new(d + extra);
    for j in 0..d {
        lp.free[j] = true;
    }
    for r in rows {
        let mut a = r.a.clone();
        a.resize(d + extra, BigRational::zero());
        lp.add_row(a, Cmp::Le, r.b.clone());
    }
    lp
}

pub(crate) fn poly_feasible(rows: &[LinIneq], d: usize) -> bool {
    !matches!(simplex::solve(&rows_lp(rows, d, 0)), LpResult::Infeasible)
}

/// A point of `rows` strictly violating every row in `violated`, if one exists.
fn strict_witness(rows: &[LinIneq], violated: &[&LinIneq], d: usize) -> Option<Vec<f64>> {
    // maximize t subject to rows, a·x - t >= b for each violated row, t <= 1.
    let mut lp = rows_lp(rows, d, 1);
    let one = BigRational::one();
    for v in violated {
        let mut a = v.a.clone();
        a.push(-one.clone());
        lp.add_row(a, Cmp::Ge, v.b.clone());
    }
    let mut t = vec![BigRational::zero(); d + 1];
    t[d] = one.clone();
    lp.add_row(t.clone(), Cmp::Le, one);
    lp.objective = t.into_iter().map(|v| -v).collect();
    match simplex::solve(&lp) {
        LpResult::Optimal { x, .. } if x[d].is_positive() => Some(x[..d].iter().map(rat_to_f64).collect()),
        _ => None,
    }
}

/// Result of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub iterations: u64,
    pub final_state: Vec<f64>,
}

/// Floating-point form of a spec for fast simulation.
#[derive(Debug, Clone)]
pub struct LoopSim {
    guard: Vec<(Vec<f64>, f64)>,
    regions: Vec<Option<Vec<(Vec<f64>, f64)>>>,
    cumulative: Vec<Vec<f64>>,
    deltas: Vec<Vec<Vec<f64>>>,
    init: Vec<f64>,
}

fn rows_f64(p: &Polyhedron) -> Vec<(Vec<f64>, f64)> {
    p.rows.iter().map(|r| (r.a.iter().map(rat_to_f64).collect(), rat_to_f64(&r.b))).collect()
}

fn inside(rows: &[(Vec<f64>, f64)], x: &[f64]) -> bool {
    rows.iter().all(|(a, b)| a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= b + 1e-9 * b.abs().max(1.0))
}

impl LoopSim {
    pub fn new(spec: &LoopSpec) -> Self {
        let mut cumulative = Vec::new();
        let mut deltas = Vec::new();
        for b in &spec.branches {
            let mut acc = BigRational::zero();
            let mut cum = Vec::new();
            let mut ds = Vec::new();
            for (d, p) in &b.steps {
                acc += p;
                cum.push(rat_to_f64(&acc));
                ds.push(d.iter().map(rat_to_f64).collect());
            }
            *cum.last_mut().unwrap() = 1.0;
            cumulative.push(cum);
            deltas.push(ds);
        }
        LoopSim {
            guard: rows_f64(&spec.guard),
            regions: spec.branches.iter().map(|b| b.region.as_ref().map(rows_f64)).collect(),
            cumulative,
            deltas,
            init: spec.init_f64(),
        }
    }

    /// Runs from the initial state; `draw(branch, cumulative)` picks a step index.
    pub fn run_with<F>(&self, cap: u64, mut draw: F) -> Result<LoopTrace, LoopError>
    where
        F: FnMut(usize, &[f64]) -> usize,
    {
        let mut x = self.init.clone();
        let mut t = 0u64;
        while inside(&self.guard, &x) {
            if t >= cap {
                return Err(LoopError::CapExceeded(cap));
            }
            let b = self
                .regions
                .iter()
                .position(|r| r.as_ref().map_or(true, |r| inside(r, &x)))
                .ok_or_else(|| LoopError::NoBranchCovers(format!("{x:?}")))?;
            let k = draw(b, &self.cumulative[b]);
            for (xi, di) in x.iter_mut().zip(&self.deltas[b][k]) {
                *xi += di;
            }
            t += 1;
        }
        Ok(LoopTrace { iterations: t, final_state: x })
    }

    pub fn run<R: Rng + ?Sized>(&self, cap: u64, rng: &mut R) -> Result<LoopTrace, LoopError> {
        self.run_with(cap, |_, cum| {
            if cum.len() == 1 {
                return 0;
            }
            let u: f64 = rng.gen();
            cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
        })
    }
}

/// One run of the loop from its initial state.
pub fn run_trial<R: Rng + ?Sized>(spec: &LoopSpec, rng: &mut R, cap: u64) -> Result<LoopTrace, LoopError> {
    LoopSim::new(spec).run(cap, rng)
}

impl fmt::Display for LoopSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g: Vec<String> = self.guard.rows.iter().map(|r| r.fmt_with(&self.vars)).collect();
        write!(f, "while {} ({} branches)", g.join(" and "), self.branches.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) const RDWALK1: &str = r#"
[loop]
name = "rdwalk1"
vars = ["x"]
guard = ["x >= 0"]
init = { x = 10 }

[[branch]]
[[branch.step]]
prob = "3/4"
delta = { x = -1 }
[[branch.step]]
prob = 0.25
delta = { x = 1 }
"#;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn parse_rdwalk1() {
        let s = LoopSpec::parse(RDWALK1).unwrap();
        assert_eq!(s.guard.rows, vec![LinIneq { a: vec![q(-1, 1)], b: q(0, 1) }]);
        assert_eq!(s.branches[0].steps[0].1, q(3, 4));
        assert_eq!(s.branches[0].expected_delta(), vec![q(-1, 2)]);
    }

    #[test]
    fn rejects_bad_files() {
        let bad = RDWALK1.replace("prob = 0.25", "prob = 0.2").replace("\"3/4\"", "0.7");
        assert!(matches!(LoopSpec::parse(&bad), Err(LoopError::BadDistribution(_))));
        let assign = RDWALK1.replace("delta = { x = 1 }", "assign = { x = 0 }");
        assert!(matches!(LoopSpec::parse(&assign), Err(LoopError::NonIncremental(_))));
        let unknown = RDWALK1.replace("delta = { x = 1 }", "delta = { y = 1 }");
        assert!(matches!(LoopSpec::parse(&unknown), Err(LoopError::Syntax(m)) if m.contains("line")));
        assert!(matches!(LoopSpec::parse("[loop]\nname = 1"), Err(LoopError::Syntax(_))));
    }

    #[test]
    fn inequality_parsing() {
        let vars = vec!["x".to_string(), "y".to_string()];
        let r = parse_ineq("2*x - 3/2*y + 1 >= y", &vars).unwrap();
        assert_eq!(r, LinIneq { a: vec![q(-2, 1), q(5, 2)], b: q(1, 1) });
        assert!(parse_ineq("x*y <= 1", &vars).is_err());
        assert!(parse_ineq("x < 1", &vars).is_err());
    }

    #[test]
    fn coverage() {
        let src = r#"
[loop]
name = "two"
vars = ["x", "y"]
guard = ["x >= 0", "y >= 0"]
init = { x = 3, y = 2 }
[[branch]]
region = ["x >= y"]
[[branch.step]]
prob = 1
delta = { x = -1 }
[[branch]]
region = ["y >= x + 1"]
[[branch.step]]
prob = 1
delta = { y = -1 }
"#;
        // The strip y - 1 < x < y is uncovered (e.g. x = 0.5, y = 1).
        assert!(matches!(LoopSpec::parse(src), Err(LoopError::NoBranchCovers(_))));
        let ok = src.replace("y >= x + 1", "y >= x");
        assert!(LoopSpec::parse(&ok).is_ok());
    }

    #[test]
    fn forced_and_deterministic_runs() {
        let mut s = LoopSpec::parse(RDWALK1).unwrap();
        s.init = vec![q(0, 1)];
        let t = LoopSim::new(&s).run_with(100, |_, _| 0).unwrap();
        assert_eq!((t.iterations, t.final_state), (1, vec![-1.0]));
        let cd = RDWALK1.replace("prob = \"3/4\"", "prob = 1").replace(
            "[[branch.step]]\nprob = 0.25\ndelta = { x = 1 }\n",
            "",
        );
        let mut cd = LoopSpec::parse(&cd).unwrap();
        cd.init = vec![q(5, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(run_trial(&cd, &mut rng, 100).unwrap().iterations, 6);
        assert_eq!(run_trial(&cd, &mut rng, 3), Err(LoopError::CapExceeded(3)));
    }

    #[test]
    fn projections() {
        let s = LoopSpec::parse(RDWALK1).unwrap();
        let p = s.branch_delta_projection(&[q(2, 1)]);
        assert_eq!(p, vec![vec![(q(-2, 1), q(3, 4)), (q(2, 1), q(1, 4))]]);
    }

    #[test]
    fn mean_hitting_time() {
        let s = LoopSpec::parse(RDWALK1).unwrap();
        let sim = LoopSim::new(&s);
        let trials = 200_000u64;
        let mut total = 0u64;
        for i in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            rng.set_stream(i);
            total += sim.run(DEFAULT_CAP, &mut rng).unwrap().iterations;
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - 22.0).abs() < 0.15, "{mean}");
    }
}
