use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;

use supbound::expr::{Basis, LinLogExpr, PsiExpr, PsiTerm};
use supbound::loop_model::{LoopSpec, DEFAULT_CAP};
use supbound::loop_synth::{derive_loop_bound, BETA_REL_TOL};
use supbound::oracle::{estimate_loop_tail, estimate_prr_tail, wilson_upper_99};
use supbound::prr_model::{exact_tail, PrrSpec};
use supbound::prr_synth::{eval_bound, AlphaForm};

fn linlog() -> impl Strategy<Value = LinLogExpr> {
    (-20i64..20, -20i64..20, 1i64..20, -20i64..20, 1i64..5).prop_map(|(a, b, c, d, q)| {
        let mut e = LinLogExpr::zero();
        for (basis, k) in Basis::ALL.into_iter().zip([a, b, c, d]) {
            e.add_term(basis, BigRational::new(k.into(), q.into()));
        }
        e
    })
}

fn prr_spec(shape: &str, f: &str) -> PrrSpec {
    PrrSpec::parse(&format!(
        "[prr]\nname = \"p\"\ntoll = \"n - 1\"\nshape = \"{shape}\"\nf = \"{f}\"\nkappa = \"{f}\"\nnstar = 10\n"
    ))
    .unwrap()
}

fn walk(p16: u32, step: u32) -> LoopSpec {
    LoopSpec::parse(&format!(
        "[loop]\nname = \"w\"\nvars = [\"x\"]\nguard = [\"x >= 0\"]\ninit = {{ x = 10 }}\n\n\
         [[branch]]\n[[branch.step]]\nprob = \"{p16}/16\"\ndelta = {{ x = -{step} }}\n\
         [[branch.step]]\nprob = \"{}/16\"\ndelta = {{ x = {step} }}\n",
        16 - p16
    ))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linlog_display_roundtrip(e in linlog()) {
        let back = LinLogExpr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn psi_shift_scales_terms(mu in -4.0..4.0f64, nu in -2.0..3.0f64, xi in 0u8..2, a in -2.0..2.0f64, c in 1.1..5.0f64) {
        let p = PsiExpr::new(vec![PsiTerm::new(mu, nu, xi), PsiTerm::new(1.0, 0.0, 0)]);
        let lhs = p.shift(a).eval(c).unwrap();
        let rhs = c.powf(a) * p.eval(c).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn eval_bound_decreases_in_kappa(base in 1.01..10.0f64, k in 0.0..20.0f64, dk in 0.1..5.0f64, nstar in 2u64..5000) {
        let alpha = AlphaForm::parse(&format!("{base}^(1/nstar)")).unwrap();
        let f = LinLogExpr::parse("5*n").unwrap();
        let lo = LinLogExpr::parse(&format!("{}*n", 5.0 + k)).unwrap();
        let hi = LinLogExpr::parse(&format!("{}*n", 5.0 + k + dk)).unwrap();
        let (a, b) = (eval_bound(&alpha, &f, &lo, nstar).unwrap(), eval_bound(&alpha, &f, &hi, nstar).unwrap());
        prop_assert!(b < a || (a == 0.0 && b == 0.0), "{a} {b}");
    }

    #[test]
    fn wilson_bounds_point(trials in 1u64..100_000, frac in 0.0..=1.0f64) {
        let hits = ((trials as f64) * frac).floor() as u64;
        let u = wilson_upper_99(hits, trials);
        prop_assert!(u >= hits as f64 / trials as f64 - 1e-12 && u <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prr_tails_are_monotone(shape in prop_oneof![Just("uniform"), Just("halfsplit"), Just("twocall_split")], nstar in 2u64..40, seed in 0u64..1000) {
        let spec = prr_spec(shape, "3*n");
        let kappas: Vec<f64> = (0..8).map(|i| (i * nstar) as f64).collect();
        let rep = estimate_prr_tail(&spec, nstar, &kappas, 2000, seed).unwrap();
        prop_assert!(rep.estimates.windows(2).all(|w| w[1].point <= w[0].point));
        prop_assert_eq!(rep.clone(), estimate_prr_tail(&spec, nstar, &kappas, 2000, seed).unwrap());
    }

    #[test]
    fn exact_tails_are_monotone(shape in prop_oneof![Just("uniform"), Just("halfsplit"), Just("twocall_split")], nstar in 2u64..9) {
        let spec = prr_spec(shape, "3*n");
        let tails: Vec<f64> = (0..30).map(|k| exact_tail(&spec, nstar, k as f64).unwrap().to_f64().unwrap()).collect();
        prop_assert!((tails[0] - 1.0).abs() < 1e-12);
        prop_assert!(tails.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn symmetric_walk_beta(p16 in 9u32..16, step in 1u32..4) {
        let spec = walk(p16, step);
        let b = derive_loop_bound(&spec, &[], BETA_REL_TOL).unwrap();
        let (p, q) = (p16 as f64 / 16.0, 1.0 - p16 as f64 / 16.0);
        let closed = 1.0 / (2.0 * (p * q).sqrt());
        prop_assert!(((b.beta - closed) / closed).abs() < 1e-6, "{} vs {closed}", b.beta);
        prop_assert!(b.residuals.a3_max <= 1.0 + 1e-9);
        prop_assert!(b.alpha > 1.0);
    }

    #[test]
    fn loop_tail_below_bound(p16 in 10u32..16, seed in 0u64..1000) {
        let spec = walk(p16, 1);
        let kappas = [10.0, 20.0, 40.0, 80.0];
        let b = derive_loop_bound(&spec, &kappas, BETA_REL_TOL).unwrap();
        let rep = estimate_loop_tail(&spec, &kappas, 4000, seed, DEFAULT_CAP).unwrap();
        prop_assert!(rep.estimates.windows(2).all(|w| w[1].point <= w[0].point));
        for e in &rep.estimates {
            // Bounds are proven; allow only sampling noise above them.
            let bound = b.at(e.kappa);
            let slack = 4.0 * (bound * (1.0 - bound) / 4000.0).sqrt() + 1.0 / 4000.0;
            prop_assert!(e.point <= bound + slack, "kappa {}: {} > {bound}", e.kappa, e.point);
        }
    }
}
