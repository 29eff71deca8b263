mod common;

use stabopt_core::fault::FaultScenario;
use stabopt_core::lure::DEFAULT_XI;
use stabopt_core::optimize::{build_tscopf, generation_cost, IpmOptions, SolveStatus, TscopfOptions, Variant};
use stabopt_core::pipeline::{certify_scenario, run_opf, run_tscopf, stability_threshold, verify_case, VerifyOptions};
use stabopt_core::simulate::SimOptions;
use stabopt_core::Error;

use common::{fixture, FIXTURES};

#[test]
fn opf_puts_the_load_on_the_cheap_generator() {
    let (case, _) = fixture("two_bus", "two_bus_line2");
    let opf = run_opf(&case, &IpmOptions::default()).unwrap();
    assert_eq!(opf.solution.status, SolveStatus::Optimal);
    let p = &opf.warm.p_gen;
    assert!(p[0].abs() < 1e-6, "{p:?}");
    assert!((p[1] - case.loads[0].p).abs() < 1e-6, "{p:?}");
    assert!((opf.solution.objective - generation_cost(&case, p)).abs() < 1e-9);
}

#[test]
fn vanishing_disturbance_reproduces_the_opf() {
    let (case, spec) = fixture("two_bus", "two_bus_null");
    let cz = certify_scenario(&case, &spec, DEFAULT_XI).unwrap();
    let opf = run_opf(&case, &IpmOptions::default()).unwrap();
    let run = run_tscopf(&case, &spec, &cz.cert, &TscopfOptions::default(), Some(&opf.warm), None).unwrap();
    assert!(run.problem.restores);
    assert_eq!(run.solution.status, SolveStatus::Optimal);
    assert!(run.problem.energy(&run.solution.x).abs() < 1e-12);
    let (a, b) = (run.cost(&case), generation_cost(&case, &opf.warm.p_gen));
    assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
}

#[test]
fn certificate_for_another_network_is_rejected() {
    let (case2, spec2) = fixture("two_bus", "two_bus_line2");
    let (case3, spec3) = fixture("three_bus", "three_bus_fault3");
    let cert = certify_scenario(&case2, &spec2, DEFAULT_XI).unwrap().cert;
    let err = build_tscopf(&case3, &spec3, &cert, &TscopfOptions::default(), None).err().unwrap();
    assert!(matches!(err, Error::HashMismatch));

    let mut tampered = cert.clone();
    tampered.system_hash.replace_range(0..1, if tampered.system_hash.starts_with('0') { "1" } else { "0" });
    let err = build_tscopf(&case2, &spec2, &tampered, &TscopfOptions::default(), None).err().unwrap();
    assert_eq!(err.to_string(), "certificate/topology hash mismatch");
}

#[test]
fn two_bus_dispatch_stays_below_the_simulated_limit() {
    let (case, spec) = fixture("two_bus", "two_bus_line2");
    let cz = certify_scenario(&case, &spec, DEFAULT_XI).unwrap();
    let fs = FaultScenario::new(&case, &spec).unwrap();
    let limit = stability_threshold(&case, &fs, 1, 0.5, case.loads[0].p, 1e-3, SimOptions::default()).unwrap();
    assert!(limit.unstable_at.is_some());
    assert!(limit.threshold < case.loads[0].p);
    for variant in Variant::ALL {
        let o = TscopfOptions { variant, ..Default::default() };
        let run = run_tscopf(&case, &spec, &cz.cert, &o, None, None).unwrap();
        let p2 = run.dispatch().p_gen[1];
        assert!(p2 <= limit.threshold, "{variant}: {p2} > {}", limit.threshold);
    }
}

#[test]
fn constrained_costs_are_ordered_by_feasible_set() {
    for (c, s) in FIXTURES {
        let (case, spec) = fixture(c, s);
        let cz = certify_scenario(&case, &spec, DEFAULT_XI).unwrap();
        let opf = run_opf(&case, &IpmOptions::default()).unwrap();
        let f = |variant| {
            let o = TscopfOptions { variant, ..Default::default() };
            let run = run_tscopf(&case, &spec, &cz.cert, &o, Some(&opf.warm), None).unwrap();
            assert_eq!(run.solution.status, SolveStatus::Optimal, "{c} {variant}");
            (run.solution.objective, run.cost(&case))
        };
        let (inner, concave, hull) = (f(Variant::Inner), f(Variant::Concave), f(Variant::Hull));
        let tol = 1e-6 * (1.0 + inner.0.abs());
        assert!(inner.0 >= concave.0 - tol && concave.0 >= hull.0 - tol, "{c}: {inner:?} {concave:?} {hull:?}");
        let opf_cost = generation_cost(&case, &opf.warm.p_gen);
        for cost in [inner.1, concave.1, hull.1] {
            assert!(cost >= opf_cost - tol, "{c}: {cost} < {opf_cost}");
        }
    }
}

#[test]
fn multistart_is_no_worse_than_the_warm_start() {
    let (case, spec) = fixture("nine_bus", "nine_bus_line27");
    let cz = certify_scenario(&case, &spec, DEFAULT_XI).unwrap();
    let single = run_tscopf(&case, &spec, &cz.cert, &TscopfOptions::default(), None, None).unwrap();
    let multi = run_tscopf(&case, &spec, &cz.cert, &TscopfOptions::default(), None, Some(42)).unwrap();
    assert_eq!(multi.solution.status, SolveStatus::Optimal);
    assert!(multi.raw.objective <= single.raw.objective + 1e-9);
}

#[test]
fn verification_reports_are_deterministic() {
    let (case, spec) = fixture("three_bus", "three_bus_fault3");
    let opts = VerifyOptions { samples: 2000, invariance_states: 4, ..Default::default() };
    let (a, _) = verify_case(&case, &spec, &opts).unwrap();
    let (b, _) = verify_case(&case, &spec, &opts).unwrap();
    assert!(a.passed);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
