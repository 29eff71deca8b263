use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stabopt_bench::{study, STUDIES};
use stabopt_core::certify::{solve_lmi, w_min_closed_form};
use stabopt_core::lure::DEFAULT_XI;
use stabopt_core::optimize::{IpmOptions, TscopfOptions};
use stabopt_core::pipeline::{assess_dispatch, certify_scenario, run_opf, run_tscopf};
use stabopt_core::simulate::SimOptions;

fn certificate(c: &mut Criterion) {
    let mut g = c.benchmark_group("certificate");
    for (case, scenario) in STUDIES {
        let (pc, spec) = study(case, scenario);
        let cz = certify_scenario(&pc, &spec, DEFAULT_XI).unwrap();
        g.bench_function(format!("lmi/{case}"), |b| b.iter(|| solve_lmi(black_box(&cz.sys), &cz.sectors).unwrap()));
        g.bench_function(format!("w_min/{case}"), |b| {
            b.iter(|| w_min_closed_form(black_box(&cz.cert), &cz.sys).unwrap())
        });
    }
    g.finish();
}

fn dispatch(c: &mut Criterion) {
    let mut g = c.benchmark_group("dispatch");
    g.sample_size(10);
    for (case, scenario) in STUDIES {
        let (pc, spec) = study(case, scenario);
        let cz = certify_scenario(&pc, &spec, DEFAULT_XI).unwrap();
        let opf = run_opf(&pc, &IpmOptions::default()).unwrap();
        let opts = TscopfOptions::default();
        g.bench_function(format!("opf/{case}"), |b| b.iter(|| run_opf(black_box(&pc), &IpmOptions::default()).unwrap()));
        g.bench_function(format!("tscopf/{case}"), |b| {
            b.iter(|| run_tscopf(black_box(&pc), &spec, &cz.cert, &opts, Some(&opf.warm), None).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    for (case, scenario) in STUDIES {
        let (pc, spec) = study(case, scenario);
        let cz = certify_scenario(&pc, &spec, DEFAULT_XI).unwrap();
        let opf = run_opf(&pc, &IpmOptions::default()).unwrap();
        g.bench_function(format!("fault_20s/{case}"), |b| {
            b.iter(|| assess_dispatch(black_box(&pc), &cz.scenario, &opf.warm, SimOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, certificate, dispatch, simulation);
criterion_main!(benches);
