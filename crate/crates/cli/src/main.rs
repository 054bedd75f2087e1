use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use supbound::expr::LinLogExpr;
use supbound::loop_model::{LoopSpec, DEFAULT_CAP};
use supbound::loop_synth::{derive_loop_bound, LoopSynthError, BETA_REL_TOL};
use supbound::oracle::{check_dominance, dominance_csv, estimate_loop_tail, estimate_prr_tail, DominanceRow, Verdict};
use supbound::prr_model::{NStar, PrrSpec};
use supbound::prr_synth::{derive_bound, eval_bound, verify_condition_numeric, AlphaForm, PrrBound, SynthOptions, CSTAR_REL_TOL};

/// Exponential-supermartingale tail bounds for probabilistic loops and recurrences.
#[derive(Parser)]
#[command(name = "supbound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a spec file, detecting whether it describes a loop or a recurrence.
    Analyze(Opts),
    /// Synthesize a tail bound for a recurrence.
    AnalyzePrr(Opts),
    /// Synthesize a tail bound on the iteration count of a loop.
    AnalyzeLoop(Opts),
    /// Compare a synthesized bound with Monte-Carlo tail estimates (CSV).
    Simulate(Opts),
    /// Check the recurrence condition numerically for a given alpha.
    Verify(Opts),
    /// Analyze every spec file in a directory and print a JSON summary.
    Report(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Spec file (or directory for `report`).
    input: PathBuf,
    /// Number of blocks for the partition strategy; 0 selects it automatically.
    #[arg(long = "B")]
    blocks: Option<u32>,
    /// Relative tolerance of the c* bisection (recurrences) or beta search (loops).
    #[arg(long)]
    tol: Option<f64>,
    /// Monte-Carlo trials [default: 100000 for recurrences, 1000000 for loops].
    #[arg(long)]
    trials: Option<u64>,
    /// Base seed; trial i uses stream i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Thresholds: expressions in n for recurrences ("12*n"), iteration counts for loops. Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    kappa: Vec<String>,
    /// Instance size n*, overriding the spec.
    #[arg(long)]
    nstar: Option<u64>,
    /// Largest n checked by `verify` [default: n*].
    #[arg(long)]
    nmax: Option<u64>,
    /// Alpha for `verify`: "3.0", "2.3^(1/nstar)", "2.3^(1/ln(nstar))" or "2.3^(1/(nstar*ln(nstar)))".
    #[arg(long)]
    alpha: Option<String>,
    /// Iteration cap per simulated loop run.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the CSV table here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum Kind {
    Prr(PrrSpec),
    Loop(LoopSpec),
}

fn load(path: &Path) -> Result<Kind> {
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let section = src.lines().map(str::trim).find(|l| l.starts_with('['));
    match section {
        Some("[prr]") => Ok(Kind::Prr(PrrSpec::parse(&src).with_context(|| path.display().to_string())?)),
        Some("[loop]") => Ok(Kind::Loop(LoopSpec::parse(&src).with_context(|| path.display().to_string())?)),
        _ => bail!("{}: expected a [prr] or [loop] section", path.display()),
    }
}

fn emit(text: &str, path: &Option<PathBuf>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn prr_spec(mut spec: PrrSpec, o: &Opts) -> Result<PrrSpec> {
    if let Some(n) = o.nstar {
        if n == 0 {
            bail!("--nstar must be at least 1");
        }
        spec.nstar = NStar::Concrete(n);
    }
    if let Some(b) = o.blocks {
        spec.blocks = b;
    }
    if let [k] = o.kappa.as_slice() {
        spec.kappa = LinLogExpr::parse(k).with_context(|| format!("--kappa {k:?}"))?;
    } else if o.kappa.len() > 1 {
        bail!("analyze takes a single --kappa for recurrences");
    }
    spec.validate()?;
    Ok(spec)
}

fn synth_options(o: &Opts) -> SynthOptions {
    SynthOptions { blocks: None, rel_tol: o.tol.unwrap_or(CSTAR_REL_TOL) }
}

fn analyze_prr(spec: PrrSpec, o: &Opts) -> Result<u8> {
    let spec = prr_spec(spec, o)?;
    let bound = derive_bound(&spec, &synth_options(o));
    emit(&to_json(&bound)?, &o.json)?;
    if bound.is_trivial() {
        eprintln!("trivial bound: {}", bound.failures.join("; "));
        return Ok(2);
    }
    Ok(0)
}

fn loop_kappas(spec: &LoopSpec, o: &Opts) -> Result<Vec<f64>> {
    if !o.kappa.is_empty() {
        return o.kappa.iter().map(|k| k.trim().parse::<f64>().with_context(|| format!("--kappa {k:?} is not a number"))).collect();
    }
    if !spec.kappas.is_empty() {
        return Ok(spec.kappas.clone());
    }
    Ok(vec![10.0, 20.0, 40.0])
}

#[derive(Serialize)]
struct LoopEvaluation {
    kappa: f64,
    bound: f64,
    empirical: Option<f64>,
    ci_upper: Option<f64>,
    verdict: Option<Verdict>,
}

#[derive(Serialize)]
struct Infeasible<'a> {
    name: &'a str,
    status: &'static str,
    reason: String,
}

fn analyze_loop(spec: LoopSpec, o: &Opts) -> Result<u8> {
    let kappas = loop_kappas(&spec, o)?;
    let bound = match derive_loop_bound(&spec, &kappas, o.tol.unwrap_or(BETA_REL_TOL)) {
        Ok(b) => b,
        Err(LoopSynthError::Infeasible(reason)) => {
            eprintln!("infeasible: {reason}");
            emit(&to_json(&Infeasible { name: &spec.name, status: "INFEASIBLE", reason })?, &o.json)?;
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    let trials = o.trials.unwrap_or(1_000_000);
    let (rows, cap_exceeded) = if trials > 0 {
        let tail = estimate_loop_tail(&spec, &kappas, trials, o.seed, o.cap)?;
        let bounds: Vec<f64> = kappas.iter().map(|&k| bound.at(k)).collect();
        (Some(check_dominance(&bounds, &tail.estimates)), tail.cap_exceeded)
    } else {
        (None, 0)
    };
    let evaluations: Vec<LoopEvaluation> = bound
        .evaluations
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let row = rows.as_ref().map(|r| &r[i]);
            LoopEvaluation {
                kappa: e.kappa,
                bound: e.bound,
                empirical: row.map(|r| r.empirical),
                ci_upper: row.map(|r| r.wilson_upper_99),
                verdict: row.map(|r| r.verdict),
            }
        })
        .collect();
    let mut report = serde_json::to_value(&bound)?;
    report["evaluations"] = serde_json::to_value(&evaluations)?;
    report["trials"] = trials.into();
    report["cap_exceeded"] = cap_exceeded.into();
    emit(&to_json(&report)?, &o.json)?;
    Ok(0)
}

fn simulate(kind: Kind, o: &Opts) -> Result<u8> {
    if o.trials == Some(0) {
        bail!("usage: --trials must be at least 1");
    }
    let (rows, cap_exceeded): (Vec<DominanceRow>, u64) = match kind {
        Kind::Prr(spec) => {
            let kappa_texts = o.kappa.clone();
            let mut base = o.clone();
            base.kappa.clear();
            let spec = prr_spec(spec, &base)?;
            let n = spec.nstar.concrete().context("simulate needs a concrete n*: pass --nstar")?;
            let kappas: Vec<LinLogExpr> = if kappa_texts.is_empty() {
                vec![spec.kappa.clone()]
            } else {
                kappa_texts.iter().map(|k| LinLogExpr::parse(k).with_context(|| format!("--kappa {k:?}"))).collect::<Result<_>>()?
            };
            let values: Vec<f64> = kappas.iter().map(|k| k.eval(n as f64)).collect::<Result<_, _>>()?;
            let bound = derive_bound(&spec, &synth_options(o));
            let bounds: Vec<f64> = kappas
                .iter()
                .map(|k| match &bound.alpha {
                    Some(a) => eval_bound(a, &spec.f, k, n).unwrap_or(1.0),
                    None => 1.0,
                })
                .collect();
            let tail = estimate_prr_tail(&spec, n, &values, o.trials.unwrap_or(100_000), o.seed)?;
            (check_dominance(&bounds, &tail.estimates), tail.cap_exceeded)
        }
        Kind::Loop(spec) => {
            let kappas = loop_kappas(&spec, o)?;
            let bounds: Vec<f64> = match derive_loop_bound(&spec, &kappas, o.tol.unwrap_or(BETA_REL_TOL)) {
                Ok(b) => kappas.iter().map(|&k| b.at(k)).collect(),
                Err(LoopSynthError::Infeasible(_)) => vec![1.0; kappas.len()],
                Err(e) => return Err(e.into()),
            };
            let tail = estimate_loop_tail(&spec, &kappas, o.trials.unwrap_or(1_000_000), o.seed, o.cap)?;
            (check_dominance(&bounds, &tail.estimates), tail.cap_exceeded)
        }
    };
    if cap_exceeded > 0 {
        eprintln!("{cap_exceeded} trials hit the cap and were not counted");
    }
    emit(&dominance_csv(&rows), &o.csv)?;
    Ok(if rows.iter().any(|r| r.verdict == Verdict::Fail) { 2 } else { 0 })
}

fn verify(kind: Kind, o: &Opts) -> Result<u8> {
    let Kind::Prr(spec) = kind else { bail!("verify applies to recurrences only") };
    let text = o.alpha.as_deref().context("verify needs --alpha")?;
    let alpha = AlphaForm::parse(text)?;
    let nstar = o.nstar.or(spec.nstar.concrete());
    let nmax = o.nmax.or(nstar).context("verify needs --nmax or a concrete n*")?;
    let outcome = verify_condition_numeric(&spec, &alpha, nstar.unwrap_or(nmax), nmax)?;
    if let Some(p) = &o.json {
        fs::write(p, to_json(&outcome)?)?;
    }
    match outcome.first_violation {
        None => {
            println!("HOLDS for all 2 <= n <= {nmax} (min log margin {:.6e})", outcome.min_log_margin);
            Ok(0)
        }
        Some(n) => {
            println!("VIOLATED at n = {n}");
            Ok(2)
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum Entry {
    Prr(Box<PrrBound>),
    Loop(Box<supbound::loop_synth::LoopBound>),
    Failed { file: String, error: String },
}

fn report(o: &Opts) -> Result<u8> {
    let mut files: Vec<PathBuf> = fs::read_dir(&o.input)
        .with_context(|| format!("reading {}", o.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let entry = match load(&f) {
            Ok(Kind::Prr(spec)) => Entry::Prr(Box::new(derive_bound(&spec, &synth_options(o)))),
            Ok(Kind::Loop(spec)) => {
                let kappas = loop_kappas(&spec, o)?;
                match derive_loop_bound(&spec, &kappas, o.tol.unwrap_or(BETA_REL_TOL)) {
                    Ok(b) => Entry::Loop(Box::new(b)),
                    Err(e) => Entry::Failed { file: f.display().to_string(), error: e.to_string() },
                }
            }
            Err(e) => Entry::Failed { file: f.display().to_string(), error: format!("{e:#}") },
        };
        out.push(entry);
    }
    emit(&to_json(&out)?, &o.json)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(o) => match load(&o.input)? {
            Kind::Prr(s) => analyze_prr(s, &o),
            Kind::Loop(s) => analyze_loop(s, &o),
        },
        Command::AnalyzePrr(o) => match load(&o.input)? {
            Kind::Prr(s) => analyze_prr(s, &o),
            Kind::Loop(_) => bail!("{} describes a loop; use analyze-loop", o.input.display()),
        },
        Command::AnalyzeLoop(o) => match load(&o.input)? {
            Kind::Loop(s) => analyze_loop(s, &o),
            Kind::Prr(_) => bail!("{} describes a recurrence; use analyze-prr", o.input.display()),
        },
        Command::Simulate(o) => simulate(load(&o.input)?, &o),
        Command::Verify(o) => verify(load(&o.input)?, &o),
        Command::Report(o) => report(&o),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
