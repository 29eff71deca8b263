//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line, then exits non-zero on any failure.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};

use stabopt_core::certify::{check_wdot_negative, lmi_matrix, w_min_bruteforce, w_min_closed_form};
use stabopt_core::fault::FaultScenario;
use stabopt_core::lure::DEFAULT_XI;
use stabopt_core::optimize::{
    check_derivatives, verify_theorem2, HullParams, IpmOptions, SolveStatus, TscopfOptions, Variant,
};
use stabopt_core::pipeline::{
    assess_dispatch, certify_scenario, invariance_runs, random_w_min_agreement, run_opf, run_tscopf, taylor_fidelity,
    verify_case, Certified, OpfRun, TscopfRun, VerifyOptions,
};
use stabopt_core::simulate::{SimOptions, Verdict};
use stabopt_core::{PowerCase, ScenarioSpec};

use common::{fixture, FIXTURES};

const SEED: u64 = 42;

struct Study {
    name: &'static str,
    case: PowerCase,
    spec: ScenarioSpec,
    cz: Certified,
    certify_s: f64,
    opf: OpfRun,
    runs: Vec<TscopfRun>,
}

impl Study {
    fn run(&self, v: Variant) -> &TscopfRun {
        self.runs.iter().find(|r| r.problem.variant == v).unwrap()
    }
}

fn study(name: &'static str, scenario: &str) -> Study {
    let (case, spec) = fixture(name, scenario);
    let t = Instant::now();
    let cz = certify_scenario(&case, &spec, DEFAULT_XI).expect("certificate");
    let certify_s = t.elapsed().as_secs_f64();
    let opf = run_opf(&case, &IpmOptions::default()).unwrap();
    let runs = [Variant::Inner, Variant::Concave, Variant::Hull]
        .into_iter()
        .map(|variant| {
            let o = TscopfOptions { variant, ..Default::default() };
            run_tscopf(&case, &spec, &cz.cert, &o, Some(&opf.warm), None).unwrap()
        })
        .collect();
    Study { name, case, spec, cz, certify_s, opf, runs }
}

/// Largest eigenvalue by a dense eigensolver, confirmed by a Cholesky
/// factorization of `-F - tol·I`.
fn independent_margin(f: &DMatrix<f64>, tol: f64) -> (f64, bool) {
    let eig = SymmetricEigen::new(f.clone()).eigenvalues.max();
    let shifted = -f - DMatrix::identity(f.nrows(), f.nrows()) * tol;
    (eig, shifted.cholesky().is_some())
}

fn criterion_1(studies: &[Study]) -> (bool, String) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in studies {
        let (sys, cert) = (&s.cz.sys, &s.cz.cert);
        let f = lmi_matrix(&sys.a, &sys.b, &sys.c, &s.cz.sectors, &cert.p, &cert.tau);
        let (eig, chol) = independent_margin(&f, 1e-8);
        let wdot = check_wdot_negative(cert, sys, 10_000, SEED);
        ok &= cert.lmi_margin <= -1e-8 && eig <= -1e-8 && chol && wdot.samples == 10_000 && wdot.nonnegative == 0;
        parts.push(format!("{} margin {:.2e} (eig {:.2e}) Ẇ≥0 {}/{}", s.name, cert.lmi_margin, eig, wdot.nonnegative, wdot.samples));
    }
    let total = t.elapsed().as_secs_f64() + studies.iter().map(|s| s.certify_s).sum::<f64>();
    ok &= total < 60.0;
    (ok, format!("{}; {total:.2} s", parts.join(", ")))
}

fn criterion_2(studies: &[Study]) -> (bool, String) {
    let t = Instant::now();
    let random = random_w_min_agreement(50, SEED).unwrap();
    let mut fixture_err: f64 = 0.0;
    for s in studies {
        let inner = s.run(Variant::Inner);
        for sys in [s.cz.sys.clone(), inner.problem.system_at(&inner.solution.x)] {
            let a = w_min_closed_form(&s.cz.cert, &sys).unwrap().w_min;
            let b = w_min_bruteforce(&s.cz.cert, &sys).unwrap();
            fixture_err = fixture_err.max((a - b).abs() / b.abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (random <= 1e-6 && fixture_err <= 1e-6 && secs < 10.0, format!("random rel err {random:.1e}, fixtures {fixture_err:.1e}; {secs:.2} s"))
}

fn criterion_3(studies: &[Study]) -> (bool, String) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in studies {
        let inner = s.run(Variant::Inner);
        let sys = inner.problem.system_at(&inner.solution.x);
        let post = inner.problem.layout.post_state(&inner.solution.x);
        let runs = invariance_runs(&s.cz.cert, &sys, &s.cz.scenario, &post, 20, SEED, SimOptions::default()).unwrap();
        let good = runs.iter().filter(|r| r.increases == 0 && !r.left_polytope && r.verdict == Verdict::Stable).count();
        ok &= runs.len() == 20 && good == 20;
        parts.push(format!("{} {good}/20", s.name));
    }
    let secs = t.elapsed().as_secs_f64();
    (ok && secs < 120.0, format!("{}; {secs:.2} s", parts.join(", ")))
}

fn criterion_4(studies: &[Study]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in studies {
        let tf = taylor_fidelity(&s.cz.scenario, &s.opf.warm.state, 3, 0.1).unwrap();
        let ratio = tf.ratio.unwrap_or(f64::NAN);
        ok &= tf.angle_error <= 1e-3 && tf.speed_error <= 1e-3 && (12.0..=20.0).contains(&ratio);
        parts.push(format!("{} δ {:.1e} ω {:.1e} ratio {ratio:.1}", s.name, tf.angle_error, tf.speed_error));
    }
    (ok, parts.join(", "))
}

fn criterion_5(studies: &[Study]) -> (bool, String) {
    let mut params: Vec<HullParams> = studies.iter().flat_map(|s| s.run(Variant::Hull).problem.hull.clone()).collect();
    for (lo, hi) in [(-1.0, 1.0), (-0.3, 2.5), (-2.0 * std::f64::consts::PI, 0.4), (0.0, 0.0)] {
        params.push(HullParams::new(lo, hi, std::f64::consts::PI, 0.7).unwrap());
    }
    let reports: Vec<_> = params.iter().map(|p| verify_theorem2(p, 10_000, SEED)).collect();
    let hull_v: usize = reports.iter().map(|r| r.hull_violations).sum();
    let inner_v: usize = reports.iter().map(|r| r.inner_violations).sum();
    let coef = reports.iter().map(|r| r.worst_coefficient_excess).fold(0.0, f64::max);
    let combos: usize = reports.iter().map(|r| r.combinations.len()).sum();
    let ok = reports.iter().all(|r| r.passed(1e-9));
    (ok, format!("{} intervals, ψ⊄Ψ {hull_v}, inner⊄ψ {inner_v}, {combos} combinations, worst coefficient excess {coef:.1e}", params.len()))
}

fn criterion_6(studies: &[Study]) -> (bool, String) {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for s in studies {
        for r in &s.runs {
            let t1 = &r.theorem1;
            count += 1;
            ok &= r.solution.status == SolveStatus::Optimal && t1.min_slack <= 1e-5 * t1.w_min;
            worst = worst.max(t1.min_slack / t1.w_min);
        }
    }
    (ok, format!("{count} optima, worst min slack / W^min {worst:.1e}"))
}

fn criterion_7(studies: &[Study]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in studies.iter().filter(|s| s.name != "three_bus") {
        let t = Instant::now();
        let fresh = study(s.name, FIXTURES.iter().find(|f| f.0 == s.name).unwrap().1);
        let fs = FaultScenario::new(&fresh.case, &fresh.spec).unwrap();
        let inner = fresh.run(Variant::Inner);
        let opf_v = assess_dispatch(&fresh.case, &fs, &fresh.opf.warm, SimOptions::default()).unwrap().verdict;
        let ts_v = assess_dispatch(&fresh.case, &fs, &inner.dispatch(), SimOptions::default()).unwrap().verdict;
        let secs = t.elapsed().as_secs_f64();
        let opf_cost = stabopt_core::optimize::generation_cost(&fresh.case, &fresh.opf.warm.p_gen);
        let cost = inner.cost(&fresh.case);
        ok &= opf_v == Verdict::Unstable && ts_v == Verdict::Stable && cost >= opf_cost && secs < 60.0;
        parts.push(format!(
            "{} OPF {opf_v:?} ({opf_cost:.4}) / TSCOPF {ts_v:?} ({cost:.4}, +{:.2}%) {secs:.2} s",
            s.name,
            100.0 * (cost - opf_cost) / opf_cost
        ));
    }
    (ok, parts.join(", "))
}

fn criterion_8(studies: &[Study]) -> (bool, String) {
    let mut ok = true;
    let mut worst_fd: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for s in studies {
        let d = check_derivatives(&s.opf.problem.nlp, &s.opf.solution.x, 20, 1e-2, SEED);
        worst_fd = worst_fd.max(d.max_error);
        for r in &s.runs {
            let d = check_derivatives(&r.problem.nlp, &r.solution.x, 20, 1e-2, SEED);
            worst_fd = worst_fd.max(d.max_error);
        }
        for sol in std::iter::once(&s.opf.solution).chain(s.runs.iter().flat_map(|r| [&r.raw, &r.solution])) {
            if sol.status == SolveStatus::Optimal {
                worst_kkt = worst_kkt.max(sol.kkt_residual);
            }
        }
    }
    ok &= worst_fd <= 1e-6 && worst_kkt <= 1e-6;
    let (case, spec) = fixture("two_bus", "two_bus_line2");
    let opts = VerifyOptions { seed: SEED, ..Default::default() };
    let a = serde_json::to_string(&verify_case(&case, &spec, &opts).unwrap().0).unwrap();
    let b = serde_json::to_string(&verify_case(&case, &spec, &opts).unwrap().0).unwrap();
    ok &= a == b;
    (ok, format!("worst derivative error {worst_fd:.1e}, worst KKT residual {worst_kkt:.1e}, reports identical: {}", a == b))
}

fn main() {
    let studies: Vec<Study> = FIXTURES.iter().map(|(c, s)| study(c, s)).collect();
    let criteria: [(&str, fn(&[Study]) -> (bool, String)); 8] = [
        ("certificate soundness", criterion_1),
        ("invariant level oracle", criterion_2),
        ("trajectory invariance", criterion_3),
        ("Taylor fidelity", criterion_4),
        ("hull geometry", criterion_5),
        ("level binding", criterion_6),
        ("end-to-end stability", criterion_7),
        ("solver correctness", criterion_8),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check(&studies);
        failed += usize::from(!ok);
        println!("criterion {} {} {name}: {detail}", k + 1, if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
