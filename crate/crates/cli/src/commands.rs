use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use stabopt_core::certify::{check_wdot_negative, w_min_closed_form};
use stabopt_core::optimize::{generation_cost, SolveStatus};
use stabopt_core::pipeline::{
    assess_dispatch, certified_with, certify_scenario, dispatch_from_summary, run_opf, run_tscopf, tscopf_outcome,
    verify_case, Certified, OpfOutcome, Report, SolveSummary, VerifyOptions,
};
use stabopt_core::powerflow::{flat_start, generator_outputs, solve_pf_from, PfOptions};
use stabopt_core::simulate::{angle_plot_svg, trajectory_csv, w_along};
use stabopt_core::{build_admittance, Injections, NetworkVariant};

use crate::config::{Format, RunConfig};
use crate::{Failure, Source};

type Timing = BTreeMap<String, f64>;

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Writes the report (or its CSV table) to `--out`, else to stdout.
fn emit<T: Serialize>(cfg: &RunConfig, command: &str, result: T, timing: Timing, csv: Option<String>) -> Result<(), Failure> {
    let (content, ext) = match (cfg.format, csv) {
        (Format::Csv, Some(table)) => (table, "csv"),
        _ => (Report::new(command, &cfg.case, result, timing).to_json()? + "\n", "json"),
    };
    match &cfg.out {
        Some(dir) => write_file(dir, &format!("{command}.{ext}"), &content),
        None => match std::io::stdout().lock().write_all(content.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    }
}

fn dispatch_csv(s: &SolveSummary) -> String {
    let mut out = String::from("bus,p,q,v\n");
    for d in &s.dispatch {
        let _ = writeln!(out, "{},{},{},{}", d.bus, d.p, d.q, d.v);
    }
    out
}

fn certified(cfg: &RunConfig) -> Result<Certified, Failure> {
    Ok(match &cfg.certificate {
        Some(c) => certified_with(&cfg.case, cfg.spec(), cfg.xi, c.clone())?,
        None => certify_scenario(&cfg.case, cfg.spec(), cfg.xi)?,
    })
}

fn lap(timing: &mut Timing, key: &str, t: &mut Instant) {
    timing.insert(key.into(), t.elapsed().as_secs_f64());
    *t = Instant::now();
}

pub fn cmd_pf(cfg: &RunConfig) -> Result<(), Failure> {
    let case = &cfg.case;
    let t = Instant::now();
    let y = build_admittance(case, NetworkVariant::Base, None)?;
    let p = case.nominal_dispatch();
    let inj = Injections::from_dispatch(case, &p, &vec![0.0; p.len()]);
    let pf = solve_pf_from(case, &inj, &y, flat_start(case), PfOptions::default())?;
    let (p_gen, q_gen) = generator_outputs(case, &pf.state, &y);
    eprintln!("power flow converged in {} iterations, max residual {:.3e}", pf.iterations, pf.max_residual);
    let buses: Vec<_> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| json!({ "bus": b.id, "v": pf.state.v[i], "theta": pf.state.theta[i] }))
        .collect();
    let gens: Vec<_> = case
        .generators
        .iter()
        .enumerate()
        .map(|(k, g)| json!({ "bus": case.buses[g.bus].id, "p": p_gen[k], "q": q_gen[k] }))
        .collect();
    let mut csv = String::from("bus,v,theta\n");
    for (i, b) in case.buses.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", b.id, pf.state.v[i], pf.state.theta[i]);
    }
    let result = json!({
        "iterations": pf.iterations,
        "max_residual": pf.max_residual,
        "buses": buses,
        "generators": gens,
    });
    emit(cfg, "pf", result, Timing::from([("solve".into(), t.elapsed().as_secs_f64())]), Some(csv))
}

pub fn cmd_opf(cfg: &RunConfig) -> Result<(), Failure> {
    let t = Instant::now();
    let opf = run_opf(&cfg.case, &cfg.tscopf.ipm)?;
    let summary = opf.summary(&cfg.case);
    eprintln!("optimal power flow: {:?}, cost {:.6}", summary.status, summary.cost);
    let status = summary.status;
    let csv = dispatch_csv(&summary);
    let timing = Timing::from([("solve".into(), t.elapsed().as_secs_f64())]);
    emit(cfg, "opf", OpfOutcome { solve: summary, verdict: None }, timing, Some(csv))?;
    match status {
        SolveStatus::Optimal => Ok(()),
        s => Err(Failure::Solver(format!("optimal power flow ended with status {s:?}"))),
    }
}

pub fn cmd_certify(cfg: &RunConfig, samples: usize) -> Result<(), Failure> {
    let t = Instant::now();
    let cz = certified(cfg)?;
    let solve_s = t.elapsed().as_secs_f64();
    let wdot = check_wdot_negative(&cz.cert, &cz.sys, samples, cfg.seed);
    let level = w_min_closed_form(&cz.cert, &cz.sys)?;
    eprintln!(
        "lmi_margin {:.3e}, lambda_min(P) {:.3e}, nonnegative Wdot samples {}/{}",
        cz.cert.lmi_margin, cz.cert.lambda_min_p, wdot.nonnegative, wdot.samples
    );
    if let Some(dir) = &cfg.out {
        write_file(dir, "certificate.json", &cz.cert.to_json()?)?;
    }
    let result = json!({
        "lmi_margin": cz.cert.lmi_margin,
        "lmi_margin_recomputed": cz.cert.recompute_margin(&cz.sys),
        "lambda_min_p": cz.cert.lambda_min_p,
        "tau": cz.cert.tau,
        "gamma": cz.sectors.gamma,
        "beta": cz.sectors.beta,
        "system_hash": cz.cert.system_hash,
        "w_min_flat": level.w_min,
        "wdot": wdot,
    });
    let csv = format!("lmi_margin,lambda_min_p,samples,nonnegative\n{},{},{},{}\n", cz.cert.lmi_margin, cz.cert.lambda_min_p, wdot.samples, wdot.nonnegative);
    let timing = Timing::from([("lmi".into(), solve_s), ("total".into(), t.elapsed().as_secs_f64())]);
    emit(cfg, "certify", result, timing, Some(csv))?;
    if wdot.nonnegative > 0 {
        return Err(Failure::Verification(format!("{} sampled states with nonnegative Wdot", wdot.nonnegative)));
    }
    Ok(())
}

pub fn cmd_tscopf(cfg: &RunConfig) -> Result<(), Failure> {
    let mut timing = Timing::new();
    let mut t = Instant::now();
    let case = &cfg.case;
    let cz = certified(cfg)?;
    lap(&mut timing, "certificate", &mut t);
    let opf = run_opf(case, &cfg.tscopf.ipm)?;
    lap(&mut timing, "opf", &mut t);
    let seed = cfg.multistart.then_some(cfg.seed);
    let run = run_tscopf(case, cfg.spec(), &cz.cert, &cfg.tscopf, Some(&opf.warm), seed)?;
    lap(&mut timing, "tscopf", &mut t);
    let optimal = run.solution.status == SolveStatus::Optimal;
    let verdict = if optimal {
        Some(assess_dispatch(case, &cz.scenario, &run.dispatch(), cfg.sim)?.verdict)
    } else {
        None
    };
    lap(&mut timing, "simulate", &mut t);
    let out = tscopf_outcome(case, &run, generation_cost(case, &opf.warm.p_gen), verdict);
    eprintln!(
        "{} variant: {:?}, objective {:.6}, cost {:.6} (OPF {:.6}, {:+.2}%), verdict {:?}",
        out.variant, out.solve.status, out.solve.objective, out.solve.cost, out.opf_cost, out.cost_increase_pct, out.verdict
    );
    let csv = dispatch_csv(&out.solve);
    emit(cfg, "tscopf", out, timing, Some(csv))?;
    if !optimal {
        return Err(Failure::Solver(format!("constrained dispatch ended with status {:?}", run.solution.status)));
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, source: Source, file: Option<&Path>) -> Result<(), Failure> {
    let mut timing = Timing::new();
    let mut t = Instant::now();
    let case = &cfg.case;
    let spec = cfg.spec();
    let scenario = stabopt_core::fault::FaultScenario::new(case, spec)?;
    let mut cz = None;
    let (label, dispatch) = match (file, source) {
        (Some(path), _) => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let summary: SolveSummary = serde_json::from_value(v["result"]["solve"].clone())
                .map_err(|e| Failure::Input(format!("{}: not an opf or tscopf report: {e}", path.display())))?;
            (path.display().to_string(), dispatch_from_summary(case, &scenario.y_pre, &summary)?)
        }
        (None, Source::Nominal) => {
            let y = &scenario.y_pre;
            let p = case.nominal_dispatch();
            let inj = Injections::from_dispatch(case, &p, &vec![0.0; p.len()]);
            let state = solve_pf_from(case, &inj, y, flat_start(case), PfOptions::default())?.state;
            let (p_gen, q_gen) = generator_outputs(case, &state, y);
            ("nominal".into(), stabopt_core::optimize::WarmStart { objective: generation_cost(case, &p_gen), p_gen, q_gen, state })
        }
        (None, Source::Opf) => ("opf".into(), run_opf(case, &cfg.tscopf.ipm)?.warm),
        (None, Source::Tscopf) => {
            let c = certified(cfg)?;
            let opf = run_opf(case, &cfg.tscopf.ipm)?;
            let run = run_tscopf(case, spec, &c.cert, &cfg.tscopf, Some(&opf.warm), None)?;
            if run.solution.status != SolveStatus::Optimal {
                return Err(Failure::Solver(format!("constrained dispatch ended with status {:?}", run.solution.status)));
            }
            cz = Some(c);
            ("tscopf".into(), run.dispatch())
        }
    };
    lap(&mut timing, "dispatch", &mut t);
    let mut a = assess_dispatch(case, &scenario, &dispatch, cfg.sim)?;
    lap(&mut timing, "simulate", &mut t);

    // Lyapunov values along the run when the post-fault equilibrium exists.
    let mut w_increases = None;
    if let Some(post) = &a.post {
        if cz.is_none() {
            cz = certified(cfg).ok();
        }
        if let Some(c) = &cz {
            let sys = c.sys.with_equilibrium(post);
            w_increases = Some(w_along(&mut a.trajectory, &c.cert, &sys, 1e-9).increases.len());
        }
    }
    eprintln!("{label} dispatch: {:?}", a.verdict);
    let csv = trajectory_csv(&a.trajectory, case, &scenario.model);
    if let Some(dir) = &cfg.out {
        write_file(dir, "trajectory.csv", &csv)?;
        let reference = case.slack();
        let title = format!("{}: {label} dispatch, {:?}", case.name, a.verdict);
        write_file(dir, "angles.svg", &angle_plot_svg(&a.trajectory, case, reference, &title))?;
    }
    let result = json!({
        "source": label,
        "dispatch": dispatch.p_gen,
        "cost": generation_cost(case, &dispatch.p_gen),
        "verdict": a.verdict,
        "post_fault_equilibrium": a.post.is_some(),
        "diverged": a.trajectory.diverged,
        "samples": a.trajectory.len(),
        "t_end": a.trajectory.t.last().copied().unwrap_or(0.0),
        "w_increases": w_increases,
    });
    emit(cfg, "simulate", result, timing, Some(csv))
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), Failure> {
    let t = Instant::now();
    let opts = VerifyOptions {
        seed: cfg.seed,
        xi: cfg.xi,
        sim: cfg.sim,
        tscopf: cfg.tscopf.clone(),
        certificate: cfg.certificate.clone(),
        ..VerifyOptions::default()
    };
    let (report, mut timing) = verify_case(&cfg.case, cfg.spec(), &opts)?;
    timing.insert("total".into(), t.elapsed().as_secs_f64());
    for c in &report.checks {
        eprintln!("{:<18} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    eprintln!(
        "OPF {:?} cost {:.6}; TSCOPF ({}) {:?} cost {:.6}",
        report.opf.verdict, report.opf.solve.cost, report.tscopf[0].variant, report.tscopf[0].verdict, report.tscopf[0].solve.cost
    );
    let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let mut csv = String::from("check,passed\n");
    for c in &report.checks {
        let _ = writeln!(csv, "{},{}", c.name, c.passed);
    }
    emit(cfg, "verify", report, timing, Some(csv))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}
