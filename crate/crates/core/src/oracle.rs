//! Monte-Carlo tail estimates and dominance checks against derived bounds.
//!
//! Trial `i` draws from `ChaCha8Rng::seed_from_u64(seed)` with stream `i`, so
//! results do not depend on how rayon schedules the work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::loop_model::{LoopError, LoopSim, LoopSpec};
use crate::prr_model::{reaches, PrrError, PrrSpec, TrialRunner};

/// One-sided 99% normal quantile.
const Z99: f64 = 2.326_347_874_040_840_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("no reference value for ({0}, {1})")]
    UnknownReference(String, String),
    #[error(transparent)]
    Prr(#[from] PrrError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub kappa: f64,
    pub trials: u64,
    pub hits: u64,
    pub point: f64,
    pub wilson_upper_99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub estimates: Vec<TailEstimate>,
    /// Trials stopped by the iteration cap; never counted as hits.
    pub cap_exceeded: u64,
}

/// Upper end of the one-sided 99% Wilson score interval.
pub fn wilson_upper_99(hits: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = Z99 * Z99;
    let center = p + z2 / (2.0 * n);
    let half = Z99 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + half) / (1.0 + z2 / n)).clamp(p, 1.0)
}

fn rng_for(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs `trials` samples in parallel; `sample` returns `None` for a capped run.
fn count_hits<F, H>(trials: u64, kappas: &[f64], sample: F, hit: H) -> Result<(Vec<u64>, u64), OracleError>
where
    F: Fn(u64) -> Result<Option<f64>, OracleError> + Sync,
    H: Fn(f64, f64) -> bool + Sync,
{
    let k = kappas.len();
    (0..trials)
        .into_par_iter()
        .try_fold(
            || (vec![0u64; k], 0u64),
            |(mut hits, mut capped), i| {
                match sample(i)? {
                    Some(v) => {
                        for (h, &kappa) in hits.iter_mut().zip(kappas) {
                            *h += hit(v, kappa) as u64;
                        }
                    }
                    None => capped += 1,
                }
                Ok((hits, capped))
            },
        )
        .try_reduce(
            || (vec![0u64; k], 0u64),
            |(mut a, ca), (b, cb)| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok((a, ca + cb))
            },
        )
}

fn estimates(kappas: &[f64], trials: u64, hits: Vec<u64>) -> Vec<TailEstimate> {
    kappas
        .iter()
        .zip(hits)
        .map(|(&kappa, h)| TailEstimate {
            kappa,
            trials,
            hits: h,
            point: h as f64 / trials as f64,
            wilson_upper_99: wilson_upper_99(h, trials),
        })
        .collect()
}

/// Empirical `Pr[T(n*) >= kappa]` for each `kappa`, from one shared set of runs.
pub fn estimate_prr_tail(spec: &PrrSpec, nstar: u64, kappas: &[f64], trials: u64, seed: u64) -> Result<TailReport, OracleError> {
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let runner = TrialRunner::new(spec);
    let sample = |i| match runner.run(nstar, &mut rng_for(seed, i)) {
        Ok(c) => Ok(Some(c)),
        Err(PrrError::RuntimeCapExceeded) => Ok(None),
        Err(e) => Err(OracleError::from(e)),
    };
    let (hits, cap_exceeded) = count_hits(trials, kappas, sample, reaches)?;
    Ok(TailReport { estimates: estimates(kappas, trials, hits), cap_exceeded })
}

/// Empirical `Pr[T >= kappa]` for the iteration count of a loop.
pub fn estimate_loop_tail(spec: &LoopSpec, kappas: &[f64], trials: u64, seed: u64, cap: u64) -> Result<TailReport, OracleError> {
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let sim = LoopSim::new(spec);
    let sample = |i| match sim.run(cap, &mut rng_for(seed, i)) {
        Ok(t) => Ok(Some(t.iterations as f64)),
        Err(LoopError::CapExceeded(_)) => Ok(None),
        Err(e) => Err(OracleError::from(e)),
    };
    let (hits, cap_exceeded) = count_hits(trials, kappas, sample, |t, k| t >= k)?;
    Ok(TailReport { estimates: estimates(kappas, trials, hits), cap_exceeded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceRow {
    pub kappa: f64,
    pub bound: f64,
    pub empirical: f64,
    pub wilson_upper_99: f64,
    pub verdict: Verdict,
}

/// Compares each bound with its estimate: FAIL if the point estimate exceeds
/// it, WARN if only the 99% upper limit does.
pub fn check_dominance(bounds: &[f64], estimates: &[TailEstimate]) -> Vec<DominanceRow> {
    bounds
        .iter()
        .zip(estimates)
        .map(|(&bound, e)| {
            let verdict = if e.point > bound {
                Verdict::Fail
            } else if e.wilson_upper_99 > bound {
                Verdict::Warn
            } else {
                Verdict::Pass
            };
            DominanceRow { kappa: e.kappa, bound, empirical: e.point, wilson_upper_99: e.wilson_upper_99, verdict }
        })
        .collect()
}

/// Writes rows as CSV with columns `kappa,bound,empirical,wilson_upper_99,verdict`.
pub fn dominance_csv(rows: &[DominanceRow]) -> String {
    let mut out = String::from("kappa,bound,empirical,wilson_upper_99,verdict\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e},{:e},{}\n", r.kappa, r.bound, r.empirical, r.wilson_upper_99, r.verdict.as_str()));
    }
    out
}

fn normalize_tail(tail: &str) -> String {
    let t: String = tail.chars().filter(|c| !c.is_whitespace() && !"*·()".contains(*c)).collect();
    t.replace("nstar", "n")
}

/// Reference tail bounds obtained with Karp's method, stored as constants.
pub fn karp_reference(name: &str, tail: &str) -> Result<f64, OracleError> {
    let t = normalize_tail(tail);
    let key = name.to_ascii_lowercase();
    let lookup = |table: &[(&str, f64)]| table.iter().find(|(k, _)| normalize_tail(k) == t).map(|(_, v)| *v);
    let q = 0.75f64;
    let h = 0.5f64;
    let ln43 = (4.0f64 / 3.0).ln();
    let found = match key.as_str() {
        "quickselect" => lookup(&[
            ("24n", q.powi(20)),
            ("17n", q.powi(13)),
            ("15n", q.powi(11)),
            ("12n", q.powi(8)),
            ("11n", q.powi(7)),
            ("8n", q.powi(4)),
            ("6n", q.powi(2)),
        ]),
        "randomsearch" => lookup(&[
            ("11ln(n)", q.powf(11.0 - 1.0 / ln43)),
            ("10ln(n)", q.powf(10.0 - 1.0 / ln43)),
            ("8ln(n)", q.powf(8.0 - 1.0 / ln43)),
            ("7ln(n)", q.powf(7.0 - 1.0 / ln43)),
            ("5ln(n)", q.powf(5.0 - 1.0 / ln43)),
        ]),
        "l1diameter" => lookup(&[
            ("13n", h.powi(11)),
            ("11n", h.powi(9)),
            ("9n", h.powi(7)),
            ("7n", h.powi(5)),
            ("5n", h.powi(3)),
        ]),
        "l2diameter" => lookup(&[
            ("20nln(n)", h.powi(18)),
            ("15nln(n)", h.powi(13)),
            ("13.5nln(n)", h.powf(11.5)),
            ("9nln(n)", h.powi(7)),
            ("8nln(n)", h.powi(6)),
        ]),
        "quicksort" => lookup(&[("10nln(n)", (-4.0f64).exp())]),
        _ => None,
    };
    found.ok_or_else(|| OracleError::UnknownReference(name.to_string(), tail.to_string()))
}
