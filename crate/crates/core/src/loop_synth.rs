//! Tail bounds on the iteration count of a probabilistic loop.
//!
//! A linear ranking map `eta` is found by LP, then `beta` and `alpha` are
//! chosen so that `beta * E[alpha^(eta(next) - eta(now))] <= 1` on every
//! branch, giving `Pr[T >= k] <= alpha^(eta(init) - K) * beta^(-k)`.

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{fmt_rational, rat_to_f64};
use crate::loop_model::{fmt_linear, LoopError, LoopSpec};
use crate::simplex::{self, Cmp, Lp, LpResult};

/// Upper end of the `beta` search.
pub const BETA_MAX: f64 = 1_048_576.0; // 2^20
const BETA_MIN: f64 = 1.0 + 1e-6;
/// Relative precision of the `beta` binary search.
pub const BETA_REL_TOL: f64 = 1e-9;
/// Bound on `|eta|` coefficients in the LP.
const COEFF_BOX: i64 = 1_000_000;
/// Slack allowed on the supermartingale condition in the emitted result.
pub const A3_TOL: f64 = 1e-9;
const GUARD_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopSynthError {
    #[error("no linear ranking map exists: {0}")]
    Infeasible(String),
    #[error("residual check failed: {0}")]
    ResidualCheckFailed(String),
    #[error(transparent)]
    Model(#[from] LoopError),
}

/// `eta(x) = coeffs · x + offset`, with Farkas multipliers proving `eta >= 0` on the guard.
#[derive(Debug, Clone, PartialEq)]
pub struct RsmMap {
    pub coeffs: Vec<BigRational>,
    pub offset: BigRational,
    pub k: BigRational,
    pub farkas: Vec<BigRational>,
}

impl RsmMap {
    pub fn eval(&self, x: &[BigRational]) -> BigRational {
        self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum::<BigRational>() + &self.offset
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, v)| rat_to_f64(a) * v).sum::<f64>() + rat_to_f64(&self.offset)
    }

    pub fn display(&self, vars: &[String]) -> String {
        fmt_linear(&self.coeffs, &self.offset, vars)
    }
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(v.into())
}

/// Minimizes `eta(init)` over linear maps that are nonnegative on the guard
/// and decrease by at least 1 in expectation on every reachable branch.
pub fn synthesize_rsm(spec: &LoopSpec) -> Result<RsmMap, LoopSynthError> {
    let d = spec.vars.len();
    let m = spec.guard.rows.len();
    // Variables: c (d, free), c0 (free), lambda (m, >= 0).
    let n = d + 1 + m;
    let mut lp = Lp::new(n);
    for j in 0..=d {
        lp.free[j] = true;
    }
    for i in 0..d {
        // c_i + sum_k lambda_k A_ki = 0
        let mut row = vec![BigRational::zero(); n];
        row[i] = int(1);
        for (k, g) in spec.guard.rows.iter().enumerate() {
            row[d + 1 + k] = g.a[i].clone();
        }
        lp.add_row(row, Cmp::Eq, BigRational::zero());
    }
    // lambda · b - c0 <= 0
    let mut row = vec![BigRational::zero(); n];
    row[d] = int(-1);
    for (k, g) in spec.guard.rows.iter().enumerate() {
        row[d + 1 + k] = g.b.clone();
    }
    lp.add_row(row, Cmp::Le, BigRational::zero());
    let mut any_branch = false;
    for b in &spec.branches {
        if !spec.branch_nonempty(b) {
            continue;
        }
        any_branch = true;
        let mut row = vec![BigRational::zero(); n];
        for (i, e) in b.expected_delta().into_iter().enumerate() {
            row[i] = e;
        }
        lp.add_row(row, Cmp::Le, int(-1));
    }
    if !any_branch {
        return Err(LoopSynthError::Infeasible("the guard is empty".into()));
    }
    for j in 0..=d {
        let mut row = vec![BigRational::zero(); n];
        row[j] = int(1);
        lp.add_row(row.clone(), Cmp::Le, int(COEFF_BOX));
        lp.add_row(row, Cmp::Ge, int(-COEFF_BOX));
    }
    for (i, v) in spec.init.iter().enumerate() {
        lp.objective[i] = v.clone();
    }
    lp.objective[d] = int(1);
    match simplex::solve(&lp) {
        LpResult::Optimal { x, .. } => {
            let coeffs = x[..d].to_vec();
            let mut eta = RsmMap { coeffs, offset: x[d].clone(), k: BigRational::zero(), farkas: x[d + 1..].to_vec() };
            eta.k = min_step(spec, &eta);
            Ok(eta)
        }
        LpResult::Infeasible => Err(LoopSynthError::Infeasible(
            "no linear map is nonnegative on the guard and decreases by 1 in expectation".into(),
        )),
        LpResult::Unbounded => Err(LoopSynthError::Infeasible("LP is unbounded".into())),
    }
}

/// `min(0, min over support of eta · delta)`.
fn min_step(spec: &LoopSpec, eta: &RsmMap) -> BigRational {
    spec.branch_delta_projection(&eta.coeffs)
        .iter()
        .zip(&spec.branches)
        .filter(|(_, b)| spec.branch_nonempty(b))
        .flat_map(|(p, _)| p.iter().map(|(v, _)| v.clone()))
        .fold(BigRational::zero(), |a, v| if v < a { v } else { a })
}

/// A branch's projected increments `(value, prob)` in floating point.
pub type Projection = Vec<(f64, f64)>;

fn log_g(p: &Projection, t: f64) -> f64 {
    let m = p.iter().map(|(v, _)| v * t).fold(f64::NEG_INFINITY, f64::max);
    m + p.iter().map(|(v, q)| q * (v * t - m).exp()).sum::<f64>().ln()
}

/// Derivative of `g` at `t`, scaled by `exp(-max(v t))` (sign only matters).
fn dg_sign(p: &Projection, t: f64) -> f64 {
    let m = p.iter().map(|(v, _)| v * t).fold(f64::NEG_INFINITY, f64::max);
    p.iter().map(|(v, q)| q * v * (v * t - m).exp()).sum()
}

/// `ln alpha` minimizing `g`, or infinity if `g` decreases forever.
fn argmin_t(p: &Projection) -> f64 {
    if p.iter().all(|(v, _)| *v <= 0.0) {
        return f64::INFINITY;
    }
    let mut hi = 1.0;
    while dg_sign(p, hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dg_sign(p, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `inf g` over `alpha > 1`.
pub fn g_min(p: &Projection) -> f64 {
    let t = argmin_t(p);
    if t.is_finite() {
        log_g(p, t).exp()
    } else {
        p.iter().filter(|(v, _)| *v == 0.0).map(|(_, q)| q).sum()
    }
}

/// Smallest `alpha > 1` with `beta * g_b(alpha) <= 1` on every branch, if any.
pub fn min_alpha_for_beta(branches: &[Projection], beta: f64) -> Option<f64> {
    let lb = beta.ln();
    let mut t_best: f64 = 0.0;
    for p in branches {
        let tm = argmin_t(p);
        let feasible = |t: f64| lb + log_g(p, t) <= 0.0;
        let hi = if tm.is_finite() {
            if !feasible(tm) {
                return None;
            }
            tm
        } else {
            let mut h = 1.0;
            while !feasible(h) {
                h *= 2.0;
                if h > 1e6 {
                    return None;
                }
            }
            h
        };
        let (mut lo, mut hi) = (0.0, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        t_best = t_best.max(hi);
    }
    let ok = branches.iter().all(|p| lb + log_g(p, t_best) <= 1e-12);
    ok.then(|| t_best.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaAlpha {
    pub beta: f64,
    pub alpha: f64,
    /// `beta` hit the search cap; the loop is effectively deterministic.
    pub capped: bool,
}

/// Largest feasible `beta` by binary search, with its minimal `alpha`.
pub fn search_beta_alpha(branches: &[Projection], rel_tol: f64) -> Result<BetaAlpha, LoopSynthError> {
    let worst = branches.iter().map(g_min).fold(0.0, f64::max);
    let cap = if worst > 0.0 { (1.0 / worst).min(BETA_MAX) } else { BETA_MAX };
    if let Some(alpha) = min_alpha_for_beta(branches, cap) {
        return Ok(BetaAlpha { beta: cap, alpha, capped: cap == BETA_MAX });
    }
    if min_alpha_for_beta(branches, BETA_MIN).is_none() {
        return Err(LoopSynthError::Infeasible(format!("no beta above {BETA_MIN} is feasible")));
    }
    let (mut lo, mut hi) = (BETA_MIN, cap);
    while hi - lo > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if min_alpha_for_beta(branches, mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = min_alpha_for_beta(branches, lo).expect("lower end is feasible");
    Ok(BetaAlpha { beta: lo, alpha, capped: false })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// `max_b beta * g_b(alpha)`.
    pub a3_max: f64,
    pub farkas_certificate: bool,
    pub sampled_guard_points: usize,
    pub eta_nonneg_on_samples: bool,
    pub k_lower_bounds_steps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub kappa: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaReport {
    pub display: String,
    pub coeffs: Vec<String>,
    pub offset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopBound {
    pub name: String,
    pub eta: EtaReport,
    #[serde(rename = "K")]
    pub k: f64,
    pub eta_init: f64,
    pub alpha: f64,
    pub beta: f64,
    pub beta_capped: bool,
    pub bound_formula: String,
    pub evaluations: Vec<Evaluation>,
    pub residuals: Residuals,
    pub assumption: &'static str,
    pub status: &'static str,
    #[serde(skip)]
    pub rsm: RsmMap,
    #[serde(skip)]
    pub projections: Vec<Projection>,
}

impl LoopBound {
    /// `min(1, alpha^(eta(init) - K) * beta^(-kappa))`.
    pub fn at(&self, kappa: f64) -> f64 {
        ((self.eta_init - self.k) * self.alpha.ln() - kappa * self.beta.ln()).exp().min(1.0)
    }
}

/// Per-branch projections of the reachable branches.
pub fn projections(spec: &LoopSpec, eta: &RsmMap) -> Vec<Projection> {
    spec.branch_delta_projection(&eta.coeffs)
        .into_iter()
        .zip(&spec.branches)
        .filter(|(_, b)| spec.branch_nonempty(b))
        .map(|(p, _)| p.iter().map(|(v, q)| (rat_to_f64(v), rat_to_f64(q))).collect())
        .collect()
}

fn check_residuals(spec: &LoopSpec, eta: &RsmMap, ba: &BetaAlpha, proj: &[Projection]) -> Result<Residuals, LoopSynthError> {
    let fail = |m: String| Err(LoopSynthError::ResidualCheckFailed(m));
    let a3_max = proj.iter().map(|p| ba.beta * log_g(p, ba.alpha.ln()).exp()).fold(0.0, f64::max);
    if a3_max > 1.0 + A3_TOL {
        return fail(format!("beta * E[alpha^delta] = {a3_max} > 1"));
    }
    // Farkas: c = -A^T lambda, lambda >= 0, lambda · b <= c0.
    let d = spec.vars.len();
    let mut farkas = eta.farkas.iter().all(|l| !l.is_negative());
    for i in 0..d {
        let s: BigRational = spec.guard.rows.iter().zip(&eta.farkas).map(|(g, l)| &g.a[i] * l).sum();
        farkas &= (&eta.coeffs[i] + s).is_zero();
    }
    let lb: BigRational = spec.guard.rows.iter().zip(&eta.farkas).map(|(g, l)| &g.b * l).sum();
    farkas &= lb <= eta.offset;
    if !farkas {
        return fail("Farkas certificate does not prove eta >= 0 on the guard".into());
    }
    let steps: Vec<Vec<f64>> = spec
        .branches
        .iter()
        .flat_map(|b| b.steps.iter().map(|(d, _)| d.iter().map(rat_to_f64).collect()))
        .collect();
    let k = rat_to_f64(&eta.k);
    let x0 = spec.init_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut found, mut nonneg, mut k_ok) = (0, true, true);
    for _ in 0..200 * GUARD_SAMPLES {
        if found == GUARD_SAMPLES {
            break;
        }
        let scale = 10f64.powi(rng.gen_range(0..4));
        let x: Vec<f64> = x0.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
        if !spec.guard.contains(&x) {
            continue;
        }
        found += 1;
        let e = eta.eval_f64(&x);
        let tol = 1e-9 * e.abs().max(1.0);
        nonneg &= e >= -tol;
        for dlt in &steps {
            let next: Vec<f64> = x.iter().zip(dlt).map(|(a, b)| a + b).collect();
            k_ok &= eta.eval_f64(&next) >= k - tol;
        }
    }
    if !nonneg {
        return fail("eta is negative at a sampled guard point".into());
    }
    if !k_ok {
        return fail("a step from a sampled guard point goes below K".into());
    }
    Ok(Residuals { a3_max, farkas_certificate: true, sampled_guard_points: found, eta_nonneg_on_samples: nonneg, k_lower_bounds_steps: k_ok })
}

/// Full pipeline: ranking map, `beta`/`alpha` search, residual checks, evaluations.
pub fn derive_loop_bound(spec: &LoopSpec, kappas: &[f64], rel_tol: f64) -> Result<LoopBound, LoopSynthError> {
    let eta = synthesize_rsm(spec)?;
    let proj = projections(spec, &eta);
    let ba = search_beta_alpha(&proj, rel_tol)?;
    let residuals = check_residuals(spec, &eta, &ba, &proj)?;
    let eta_init = rat_to_f64(&eta.eval(&spec.init));
    let k = rat_to_f64(&eta.k);
    let exponent = &eta.eval(&spec.init) - &eta.k;
    let bound_formula = format!("{:.6}^({}) * {:.6}^(-kappa)", ba.alpha, fmt_rational(&exponent), ba.beta);
    let mut out = LoopBound {
        name: spec.name.clone(),
        eta: EtaReport {
            display: eta.display(&spec.vars),
            coeffs: eta.coeffs.iter().map(fmt_rational).collect(),
            offset: fmt_rational(&eta.offset),
        },
        k,
        eta_init,
        alpha: ba.alpha,
        beta: ba.beta,
        beta_capped: ba.capped,
        bound_formula,
        evaluations: Vec::new(),
        residuals,
        assumption: "the loop terminates almost surely",
        status: "BOUND",
        rsm: eta,
        projections: proj,
    };
    out.evaluations = kappas.iter().map(|&kappa| Evaluation { kappa, bound: out.at(kappa) }).collect();
    Ok(out)
}

/// `beta` for a symmetric two-point projection `{-a: p, +a: q}`.
pub fn beta_closed_form(p: f64, q: f64) -> f64 {
    1.0 / (2.0 * (p * q).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RDWALK1: &str = r#"
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
prob = "1/4"
delta = { x = 1 }
"#;

    fn walk(p: &str, q: &str, step: i64) -> String {
        RDWALK1
            .replace("\"3/4\"", &format!("\"{p}\""))
            .replace("\"1/4\"", &format!("\"{q}\""))
            .replace("x = -1", &format!("x = -{step}"))
            .replace("x = 1 }", &format!("x = {step} }}"))
    }

    #[test]
    fn rdwalk1_rsm() {
        let s = LoopSpec::parse(RDWALK1).unwrap();
        let eta = synthesize_rsm(&s).unwrap();
        assert_eq!(eta.display(&s.vars), "2*x");
        assert_eq!(eta.k, int(-2));
    }

    #[test]
    fn countdown_and_zero_drift() {
        let cd = RDWALK1.replace("prob = \"3/4\"", "prob = 1").replace("[[branch.step]]\nprob = \"1/4\"\ndelta = { x = 1 }\n", "");
        let s = LoopSpec::parse(&cd).unwrap();
        let eta = synthesize_rsm(&s).unwrap();
        assert_eq!(eta.display(&s.vars), "x");
        assert_eq!(eta.k, int(-1));
        let zd = walk("1/2", "1/2", 1);
        assert!(matches!(synthesize_rsm(&LoopSpec::parse(&zd).unwrap()), Err(LoopSynthError::Infeasible(_))));
    }

    #[test]
    fn alpha_for_beta() {
        let p = vec![(-2.0, 0.75), (2.0, 0.25)];
        let a = min_alpha_for_beta(&[p.clone()], 1.1547).unwrap();
        assert!((a - 1.316).abs() < 2e-3, "{a}");
        let r = 1.1547 * (0.75 * a.powf(-2.0) + 0.25 * a.powf(2.0));
        assert!((r - 1.0).abs() < 1e-3);
        assert!(min_alpha_for_beta(&[p], 2.0).is_none());
        let a = min_alpha_for_beta(&[vec![(-1.0, 1.0)]], 1.5).unwrap();
        assert!((a - 1.5).abs() < 1e-12);
    }

    #[test]
    fn beta_identity() {
        for (p, q, s, want) in [("3/4", "1/4", 1, 1.1547), ("7/8", "1/8", 2, 1.511), ("15/16", "1/16", 1, 2.065)] {
            let spec = LoopSpec::parse(&walk(p, q, s)).unwrap();
            let b = derive_loop_bound(&spec, &[], BETA_REL_TOL).unwrap();
            let pf: f64 = crate::expr::parse_rational(p).map(|r| rat_to_f64(&r)).unwrap();
            let closed = beta_closed_form(pf, 1.0 - pf);
            assert!((b.beta / closed - 1.0).abs() < 1e-6);
            assert!((b.beta / want - 1.0).abs() < 1e-3, "{} vs {want}", b.beta);
            assert!(b.residuals.a3_max <= 1.0 + A3_TOL);
        }
    }

    #[test]
    fn countdown_capped() {
        let cd = RDWALK1.replace("prob = \"3/4\"", "prob = 1").replace("[[branch.step]]\nprob = \"1/4\"\ndelta = { x = 1 }\n", "").replace("x = 10", "x = 5");
        let b = derive_loop_bound(&LoopSpec::parse(&cd).unwrap(), &[10.0, 0.0], BETA_REL_TOL).unwrap();
        assert!(b.beta_capped);
        assert_eq!(b.beta, BETA_MAX);
        assert!((b.alpha / BETA_MAX - 1.0).abs() < 1e-9);
        assert!(b.evaluations[0].bound < 1e-3);
        assert_eq!(b.evaluations[1].bound, 1.0);
    }

    #[test]
    fn rdwalk1_bound_formula() {
        let b = derive_loop_bound(&LoopSpec::parse(RDWALK1).unwrap(), &[220.0], BETA_REL_TOL).unwrap();
        let want = b.alpha.powi(22) * b.beta.powi(-220);
        assert!((b.evaluations[0].bound / want - 1.0).abs() < 1e-9);
    }
}
