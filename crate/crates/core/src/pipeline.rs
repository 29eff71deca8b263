//! End-to-end studies built from the other modules: certification of a
//! scenario, optimal and stability-constrained dispatch, simulation
//! verdicts, and the verification battery. Report types serialize to the
//! versioned JSON consumed by the command-line tool.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::certify::{
    check_wdot_negative, solve_lmi, w_min_bruteforce, w_min_bruteforce_rows, w_min_closed_form, w_min_rows, w_value,
    QuadraticCertificate,
};
use crate::error::{Error, Result};
use crate::fault::{taylor_cleared, FaultScenario};
use crate::gridcase::{PowerCase, ScenarioSpec};
use crate::lure::{build_lure, design_sectors, LureSystem, SectorBounds};
use crate::optimize::{
    build_opf, build_tscopf, check_derivatives, generation_cost, multistart, polish_w_min, solve_nlp,
    verify_epsilon_insensitivity, verify_theorem1, verify_theorem2, IpmOptions, OpfProblem, OptSolution, SolveStatus,
    Theorem1Report, TscopfOptions, TscopfProblem, Variant, WarmStart,
};
use crate::powerflow::{injection_p, injection_q, solve_pf, solve_pf_from, Injections, PfOptions, SteadyState};
use crate::simulate::{
    assess_stability, assess_without_equilibrium, integrate, w_along, AnglePolytope, Phase, SimOptions, Trajectory,
    TransientSetup, Verdict,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Final-window length used for stability verdicts, in seconds.
pub const VERDICT_WINDOW: f64 = 1.0;

/// Versioned report envelope. Wall-clock times live in `timing` only, so
/// two runs with identical inputs agree on everything else byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub command: String,
    pub case: String,
    pub result: T,
    pub timing: BTreeMap<String, f64>,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, case: &PowerCase, result: T, timing: BTreeMap<String, f64>) -> Self {
        Report { schema_version: SCHEMA_VERSION, command: command.into(), case: case.name.clone(), result, timing }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Post-fault Lur'e structure of a scenario with its certificate.
#[derive(Debug, Clone)]
pub struct Certified {
    pub scenario: FaultScenario,
    pub sys: LureSystem,
    pub sectors: SectorBounds,
    pub cert: QuadraticCertificate,
}

/// Builds the post-fault Lur'e system, designs sectors with slope floor
/// `xi` and solves the LMI.
pub fn certify_scenario(case: &PowerCase, spec: &ScenarioSpec, xi: f64) -> Result<Certified> {
    let scenario = FaultScenario::new(case, spec)?;
    let sys = build_lure(case, &SteadyState::flat(case.n_bus()), &scenario.y_post)?;
    let sectors = design_sectors(case, &sys, xi)?;
    let cert = solve_lmi(&sys, &sectors)?;
    Ok(Certified { scenario, sys, sectors, cert })
}

/// Attaches a cached certificate to a scenario after checking that it was
/// computed for this post-fault structure and still satisfies the LMI.
pub fn certified_with(case: &PowerCase, spec: &ScenarioSpec, xi: f64, cert: QuadraticCertificate) -> Result<Certified> {
    let scenario = FaultScenario::new(case, spec)?;
    let sys = build_lure(case, &SteadyState::flat(case.n_bus()), &scenario.y_post)?;
    let sectors = design_sectors(case, &sys, xi)?;
    cert.check_system(&sys)?;
    let margin = cert.recompute_margin(&sys);
    if !(margin <= -cert.tol_lmi) {
        return Err(Error::Infeasible { margin });
    }
    Ok(Certified { scenario, sys, sectors, cert })
}

/// Simulated response of one dispatch to the scenario's fault.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub verdict: Verdict,
    pub pre: SteadyState,
    /// Post-fault equilibrium, when the post-fault power flow has one.
    pub post: Option<SteadyState>,
    pub trajectory: Trajectory,
}

/// Solves the pre-fault power flow of a dispatch, finds the post-fault
/// equilibrium with the same injections, simulates the fault and classifies
/// the response.
pub fn assess_dispatch(case: &PowerCase, scenario: &FaultScenario, dispatch: &WarmStart, sim: SimOptions) -> Result<Assessment> {
    let inj = Injections::from_dispatch(case, &dispatch.p_gen, &dispatch.q_gen);
    let pre = solve_pf_from(case, &inj, &scenario.y_pre, dispatch.state.clone(), PfOptions::default())?.state;
    let n = case.n_bus();
    let held = Injections {
        p: (0..n).map(|i| injection_p(&pre, &scenario.y_pre, i)).collect(),
        q: (0..n).map(|i| injection_q(&pre, &scenario.y_pre, i)).collect(),
    };
    match solve_pf_from(case, &held, &scenario.y_post, pre.clone(), PfOptions::default()) {
        Ok(post) => {
            let sys = build_lure(case, &post.state, &scenario.y_post)?;
            let trajectory = integrate(&scenario.transient_setup(&pre, Some(&post.state)), sim)?;
            let verdict = assess_stability(&trajectory, Some(&sys), VERDICT_WINDOW);
            Ok(Assessment { verdict, pre, post: Some(post.state), trajectory })
        }
        Err(_) => {
            let trajectory = integrate(&scenario.transient_setup(&pre, None), sim)?;
            let verdict = assess_without_equilibrium(&trajectory, &AnglePolytope::from_network(&scenario.y_post));
            Ok(Assessment { verdict, pre, post: None, trajectory })
        }
    }
}

/// Dispatch of a solve summary, with its power flow solved from the
/// reported generator voltages.
pub fn dispatch_from_summary(case: &PowerCase, y: &crate::gridcase::AdmittanceMatrix, s: &SolveSummary) -> Result<WarmStart> {
    let mut p_gen = case.nominal_dispatch();
    let mut q_gen = vec![0.0; p_gen.len()];
    let mut hint = crate::powerflow::flat_start(case);
    for d in &s.dispatch {
        let i = case.bus_index(d.bus)?;
        let k = case.generator_index_at(i).ok_or_else(|| Error::Scenario(format!("bus {} has no generator", d.bus)))?;
        p_gen[k] = d.p;
        q_gen[k] = d.q;
        hint.v[i] = d.v;
    }
    let inj = Injections::from_dispatch(case, &p_gen, &q_gen);
    let state = solve_pf_from(case, &inj, y, hint, PfOptions::default())?.state;
    Ok(WarmStart { objective: generation_cost(case, &p_gen), p_gen, q_gen, state })
}

/// The nominal dispatch with generator `k` moved to `p`, at its power flow.
fn dispatch_with(case: &PowerCase, y: &crate::gridcase::AdmittanceMatrix, k: usize, p: f64) -> Result<WarmStart> {
    let mut p_gen = case.nominal_dispatch();
    p_gen[k] = p;
    let q_gen = vec![0.0; p_gen.len()];
    let state = solve_pf(case, &Injections::from_dispatch(case, &p_gen, &q_gen), y)?;
    Ok(WarmStart { objective: generation_cost(case, &p_gen), p_gen, q_gen, state })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub generator: usize,
    /// Largest output found Stable.
    pub threshold: f64,
    /// Smallest output found not Stable, if any in range.
    pub unstable_at: Option<f64>,
    pub evaluations: usize,
}

/// Bisection on the output of generator `k` for the largest dispatch whose
/// simulated response is Stable. Requires `lo` to be Stable.
pub fn stability_threshold(
    case: &PowerCase,
    scenario: &FaultScenario,
    k: usize,
    lo: f64,
    hi: f64,
    tol: f64,
    sim: SimOptions,
) -> Result<ThresholdReport> {
    let stable = |p: f64| -> bool {
        dispatch_with(case, &scenario.y_pre, k, p)
            .and_then(|d| assess_dispatch(case, scenario, &d, sim))
            .is_ok_and(|a| a.verdict == Verdict::Stable)
    };
    if !stable(lo) {
        return Err(Error::Option(format!("dispatch {lo} of generator {k} is not stable")));
    }
    let mut evaluations = 2;
    if stable(hi) {
        return Ok(ThresholdReport { generator: k, threshold: hi, unstable_at: None, evaluations });
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let m = 0.5 * (a + b);
        evaluations += 1;
        if stable(m) {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(ThresholdReport { generator: k, threshold: a, unstable_at: Some(b), evaluations })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorDispatch {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    /// Voltage magnitude at the generator bus.
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    pub objective: f64,
    /// Generation cost of the dispatch.
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub dispatch: Vec<GeneratorDispatch>,
}

fn summarize(case: &PowerCase, sol: &OptSolution, d: &WarmStart) -> SolveSummary {
    SolveSummary {
        status: sol.status,
        objective: sol.objective,
        cost: generation_cost(case, &d.p_gen),
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        dispatch: case
            .generators
            .iter()
            .zip(d.p_gen.iter().zip(&d.q_gen))
            .map(|(g, (&p, &q))| GeneratorDispatch { bus: case.buses[g.bus].id, p, q, v: d.state.v[g.bus] })
            .collect(),
    }
}

pub struct OpfRun {
    pub problem: OpfProblem,
    pub solution: OptSolution,
    /// The solution as a starting point for the constrained problem.
    pub warm: WarmStart,
}

impl OpfRun {
    pub fn summary(&self, case: &PowerCase) -> SolveSummary {
        summarize(case, &self.solution, &self.warm)
    }
}

pub fn run_opf(case: &PowerCase, ipm: &IpmOptions) -> Result<OpfRun> {
    let problem = build_opf(case)?;
    let solution = solve_nlp(&problem.nlp, ipm);
    let warm = problem.warm_start(case, &solution);
    Ok(OpfRun { problem, solution, warm })
}

pub struct TscopfRun {
    pub problem: TscopfProblem,
    /// Solver output before the level polish.
    pub raw: OptSolution,
    pub solution: OptSolution,
    pub theorem1: Theorem1Report,
}

impl TscopfRun {
    pub fn dispatch(&self) -> WarmStart {
        let x = &self.solution.x;
        let p_gen = self.problem.layout.dispatch(x);
        WarmStart {
            objective: self.solution.objective,
            q_gen: self.problem.layout.reactive(x),
            state: self.problem.layout.pre_state(x),
            p_gen,
        }
    }

    pub fn cost(&self, case: &PowerCase) -> f64 {
        generation_cost(case, &self.problem.layout.dispatch(&self.solution.x))
    }

    /// Inequality rows within `tol` of activity at the polished solution.
    pub fn binding(&self, tol: f64) -> Vec<String> {
        let x = &self.solution.x;
        self.problem.nlp.ineq.iter().filter(|r| r.f.value(x) >= -tol).map(|r| r.name.clone()).collect()
    }
}

/// Builds and solves the constrained dispatch. With `starts_seed` the warm,
/// flat and perturbed starts are solved in parallel and the best kept.
pub fn run_tscopf(
    case: &PowerCase,
    spec: &ScenarioSpec,
    cert: &QuadraticCertificate,
    opts: &TscopfOptions,
    warm: Option<&WarmStart>,
    starts_seed: Option<u64>,
) -> Result<TscopfRun> {
    let problem = build_tscopf(case, spec, cert, opts, warm)?;
    let raw = match starts_seed {
        Some(seed) => multistart(&problem.nlp, &problem.default_starts(seed), &opts.ipm).0,
        None => solve_nlp(&problem.nlp, &opts.ipm),
    };
    let solution = if raw.status == SolveStatus::Optimal { polish_w_min(&problem, &raw) } else { raw.clone() };
    let theorem1 = verify_theorem1(&solution, &problem, 1e-5);
    Ok(TscopfRun { problem, raw, solution, theorem1 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpfOutcome {
    pub solve: SolveSummary,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TscopfOutcome {
    pub variant: Variant,
    pub cleared: String,
    pub epsilon: f64,
    pub solve: SolveSummary,
    /// KKT residual of the solver iterate before the level polish.
    pub kkt_residual_unpolished: f64,
    pub opf_cost: f64,
    pub cost_increase_pct: f64,
    pub w_min: f64,
    pub energy: f64,
    pub binding: Vec<String>,
    pub theorem1: Theorem1Report,
    /// Angle-limit intervals clamped into the hull domain.
    pub clamped_intervals: usize,
    pub verdict: Option<Verdict>,
}

pub fn tscopf_outcome(case: &PowerCase, run: &TscopfRun, opf_cost: f64, verdict: Option<Verdict>) -> TscopfOutcome {
    let p = &run.problem;
    let d = run.dispatch();
    let cost = generation_cost(case, &d.p_gen);
    TscopfOutcome {
        variant: p.variant,
        cleared: format!("{:?}", p.cleared).to_lowercase(),
        epsilon: p.epsilon,
        solve: summarize(case, &run.solution, &d),
        kkt_residual_unpolished: run.raw.kkt_residual,
        opf_cost,
        cost_increase_pct: 100.0 * (cost - opf_cost) / opf_cost.abs().max(1e-12),
        w_min: p.w_min(&run.solution.x),
        energy: p.energy(&run.solution.x),
        binding: run.binding(1e-6),
        theorem1: run.theorem1.clone(),
        clamped_intervals: p.clamped,
        verdict,
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte-Carlo samples for the derivative-sign and hull checks.
    pub samples: usize,
    pub invariance_states: usize,
    pub random_instances: usize,
    pub xi: f64,
    pub taylor_order: usize,
    pub taylor_tc: f64,
    pub derivative_points: usize,
    pub sim: SimOptions,
    pub tscopf: TscopfOptions,
    /// Cached certificate to use instead of solving the LMI.
    pub certificate: Option<QuadraticCertificate>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 42,
            samples: 10_000,
            invariance_states: 20,
            random_instances: 50,
            xi: crate::lure::DEFAULT_XI,
            taylor_order: 3,
            taylor_tc: 0.1,
            derivative_points: 20,
            sim: SimOptions::default(),
            tscopf: TscopfOptions::default(),
            certificate: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub opf: OpfOutcome,
    pub tscopf: Vec<TscopfOutcome>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `W^min` closed form against the KKT oracle on random SPD instances.
pub fn random_w_min_agreement(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let dim = rng.gen_range(2..=8);
        let rows = rng.gen_range(1..=4);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let p = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.1;
        let c = DMatrix::from_fn(rows, dim, |_, _| rng.gen_range(-1.0..1.0));
        let half: Vec<f64> = (0..rows).map(|_| rng.gen_range(0.5..std::f64::consts::PI)).collect();
        let centers: Vec<f64> = half.iter().map(|h| rng.gen_range(-0.9..0.9) * h).collect();
        let closed = w_min_rows(&p, &c, &centers, &half)?.w_min;
        let brute = w_min_bruteforce_rows(&p, &c, &centers, &half)?;
        worst = worst.max(rel_err(closed, brute));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceRun {
    pub w0_ratio: f64,
    pub increases: usize,
    pub left_polytope: bool,
    pub verdict: Verdict,
}

/// Post-fault runs from random states with `W(x₀) ≤ 0.99·W^min`.
pub fn invariance_runs(
    cert: &QuadraticCertificate,
    sys: &LureSystem,
    scenario: &FaultScenario,
    post: &SteadyState,
    n: usize,
    seed: u64,
    sim: SimOptions,
) -> Result<Vec<InvarianceRun>> {
    let level = w_min_closed_form(cert, sys)?.w_min;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|_| {
            let u = DVector::from_fn(sys.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let r: f64 = 0.99 * rng.gen_range(0.05..1.0);
            let x = &u * (r * level / w_value(cert, &u)).sqrt();
            (r, x)
        })
        .collect();
    let phase = Phase::around(scenario.y_post.clone(), post);
    starts
        .par_iter()
        .map(|(r, x)| {
            let (delta0, omega0) = sys.full_from_state(x);
            let setup = TransientSetup {
                model: scenario.model.clone(),
                fault: None,
                post: phase.clone(),
                t_clear: 0.0,
                delta0,
                omega0,
            };
            let mut traj = integrate(&setup, sim)?;
            let wa = w_along(&mut traj, cert, sys, 1e-9);
            Ok(InvarianceRun {
                w0_ratio: *r,
                increases: wa.increases.len(),
                left_polytope: wa.left_polytope,
                verdict: assess_stability(&traj, Some(sys), VERDICT_WINDOW),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorFidelity {
    pub t_clear: f64,
    pub order: usize,
    pub angle_error: f64,
    pub speed_error: f64,
    pub angle_error_half: f64,
    pub speed_error_half: f64,
    /// Error at `t_c` over error at `t_c / 2`; `None` without a disturbance.
    pub ratio: Option<f64>,
}

/// Series fault-cleared state against an RK4 fault-on integration with a
/// 10 µs step, at `t_c` and `t_c / 2`.
pub fn taylor_fidelity(scenario: &FaultScenario, pre: &SteadyState, order: usize, tc: f64) -> Result<TaylorFidelity> {
    let errors = |t: f64| -> Result<(f64, f64)> {
        let mut setup = scenario.transient_setup(pre, None);
        setup.t_clear = t;
        let traj = integrate(&setup, SimOptions { horizon: t, step: 1e-5, ..SimOptions::default() })?;
        let k = traj.clear_index().min(traj.len() - 1);
        let (d, dw) = taylor_cleared(scenario, &pre.v, &pre.theta, order, t);
        let de = traj.delta[k].iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let we = traj.omega[k].iter().zip(&dw).map(|(a, b)| (a - 1.0 - b).abs()).fold(0.0, f64::max);
        Ok((de, we))
    };
    let (angle_error, speed_error) = errors(tc)?;
    let (angle_error_half, speed_error_half) = errors(0.5 * tc)?;
    let full = angle_error.max(speed_error);
    let half = angle_error_half.max(speed_error_half);
    let ratio = (half > 1e-13).then(|| full / half);
    Ok(TaylorFidelity { t_clear: tc, order, angle_error, speed_error, angle_error_half, speed_error_half, ratio })
}

/// Runs every verification check on one case and scenario. Returns the
/// report and per-check wall times.
pub fn verify_case(
    case: &PowerCase,
    spec: &ScenarioSpec,
    opts: &VerifyOptions,
) -> Result<(VerifyReport, BTreeMap<String, f64>)> {
    let mut timing = BTreeMap::new();
    let mut checks = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |timing: &mut BTreeMap<String, f64>, name: &str| {
        timing.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let cz = match &opts.certificate {
        Some(c) => certified_with(case, spec, opts.xi, c.clone())?,
        None => certify_scenario(case, spec, opts.xi)?,
    };
    let wdot = check_wdot_negative(&cz.cert, &cz.sys, opts.samples, opts.seed);
    let margin = cz.cert.recompute_margin(&cz.sys);
    checks.push(Check {
        name: "certificate".into(),
        passed: cz.cert.lmi_margin <= -cz.cert.tol_lmi && margin <= -cz.cert.tol_lmi && wdot.nonnegative == 0 && wdot.samples == opts.samples,
        details: json!({
            "lmi_margin": cz.cert.lmi_margin,
            "lmi_margin_recomputed": margin,
            "lambda_min_p": cz.cert.lambda_min_p,
            "wdot": wdot,
        }),
    });
    lap(&mut timing, "certificate");

    let opf = run_opf(case, &opts.tscopf.ipm)?;
    if opf.solution.status != SolveStatus::Optimal {
        return Err(Error::Option(format!("optimal power flow ended with status {:?}", opf.solution.status)));
    }
    let opf_cost = generation_cost(case, &opf.warm.p_gen);
    let opf_verdict = assess_dispatch(case, &cz.scenario, &opf.warm, opts.sim).map(|a| a.verdict).ok();
    lap(&mut timing, "opf");

    let variants = [Variant::Inner, Variant::Concave, Variant::Hull, Variant::Grid];
    let runs: Vec<TscopfRun> = variants
        .par_iter()
        .map(|&v| {
            let o = TscopfOptions { variant: v, ..opts.tscopf.clone() };
            run_tscopf(case, spec, &cz.cert, &o, Some(&opf.warm), None)
        })
        .collect::<Result<_>>()?;
    let inner = &runs[0];
    let inner_verdict = if inner.solution.status == SolveStatus::Optimal {
        assess_dispatch(case, &cz.scenario, &inner.dispatch(), opts.sim).map(|a| a.verdict).ok()
    } else {
        None
    };
    let outcomes: Vec<TscopfOutcome> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| tscopf_outcome(case, r, opf_cost, if k == 0 { inner_verdict } else { None }))
        .collect();
    lap(&mut timing, "tscopf");

    // Level oracle at the certified flat system and at the constrained optimum.
    let sys_opt = inner.problem.system_at(&inner.solution.x);
    let mut fixture_err: f64 = 0.0;
    for sys in [&cz.sys, &sys_opt] {
        let closed = w_min_closed_form(&cz.cert, sys)?.w_min;
        fixture_err = fixture_err.max(rel_err(closed, w_min_bruteforce(&cz.cert, sys)?));
    }
    let random_err = random_w_min_agreement(opts.random_instances, opts.seed)?;
    checks.push(Check {
        name: "w-min-oracle".into(),
        passed: fixture_err <= 1e-6 && random_err <= 1e-6,
        details: json!({ "fixture_rel_error": fixture_err, "random_instances": opts.random_instances, "random_rel_error": random_err }),
    });
    lap(&mut timing, "w-min-oracle");

    let post = inner.problem.layout.post_state(&inner.solution.x);
    let inv = invariance_runs(&cz.cert, &sys_opt, &cz.scenario, &post, opts.invariance_states, opts.seed, opts.sim)?;
    checks.push(Check {
        name: "invariance".into(),
        passed: inv.iter().all(|r| r.increases == 0 && !r.left_polytope && r.verdict == Verdict::Stable),
        details: json!({ "runs": inv }),
    });
    lap(&mut timing, "invariance");

    let tf = taylor_fidelity(&cz.scenario, &opf.warm.state, opts.taylor_order, opts.taylor_tc)?;
    checks.push(Check {
        name: "taylor-fidelity".into(),
        passed: tf.angle_error <= 1e-3 && tf.speed_error <= 1e-3 && tf.ratio.map_or(true, |r| (12.0..=20.0).contains(&r)),
        details: serde_json::to_value(&tf)?,
    });
    lap(&mut timing, "taylor-fidelity");

    let t2: Vec<_> = inner.problem.hull.iter().map(|p| verify_theorem2(p, opts.samples, opts.seed)).collect();
    checks.push(Check {
        name: "theorem-2".into(),
        passed: t2.iter().all(|r| r.passed(1e-9)),
        details: json!({ "rows": t2 }),
    });
    lap(&mut timing, "theorem-2");

    let certified = &runs[..3];
    checks.push(Check {
        name: "theorem-1".into(),
        passed: certified.iter().all(|r| r.solution.status == SolveStatus::Optimal && r.theorem1.binding),
        details: json!(runs
            .iter()
            .map(|r| json!({ "variant": r.problem.variant, "status": r.solution.status, "report": r.theorem1 }))
            .collect::<Vec<_>>()),
    });

    let cost = |r: &TscopfRun| r.cost(case);
    let (f_inner, f_concave, f_hull) = (runs[0].solution.objective, runs[1].solution.objective, runs[2].solution.objective);
    let tol = |f: f64| 1e-6 * (1.0 + f.abs());
    let ordered = f_inner >= f_concave - tol(f_concave)
        && f_concave >= f_hull - tol(f_hull)
        && certified.iter().all(|r| cost(r) >= opf_cost - tol(opf_cost));
    checks.push(Check {
        name: "variant-ordering".into(),
        passed: certified.iter().all(|r| r.solution.status == SolveStatus::Optimal) && ordered,
        details: json!({
            "objective": { "inner": f_inner, "concave": f_concave, "hull": f_hull, "grid": runs[3].solution.objective },
            "cost": { "opf": opf_cost, "inner": cost(&runs[0]), "concave": cost(&runs[1]), "hull": cost(&runs[2]), "grid": cost(&runs[3]) },
        }),
    });

    let inner_cost = cost(inner);
    let restores = inner.problem.restores && spec.fault_type == crate::gridcase::FaultType::None;
    checks.push(Check {
        name: "end-to-end".into(),
        passed: inner_verdict == Some(Verdict::Stable) && inner_cost >= opf_cost - tol(opf_cost),
        details: json!({
            "opf_verdict": opf_verdict,
            "tscopf_verdict": inner_verdict,
            "opf_cost": opf_cost,
            "tscopf_cost": inner_cost,
            "cost_increase_pct": outcomes[0].cost_increase_pct,
            "costs_equal": (inner_cost - opf_cost).abs() <= tol(opf_cost),
            "vanishing_disturbance": restores,
        }),
    });
    lap(&mut timing, "theorem-1");

    let eps = verify_epsilon_insensitivity(case, spec, &cz.cert, &opts.tscopf, &opf.warm)?;
    checks.push(Check {
        name: "epsilon".into(),
        passed: eps.shrinks && eps.status.iter().all(|s| *s == SolveStatus::Optimal),
        details: serde_json::to_value(&eps)?,
    });
    lap(&mut timing, "epsilon");

    let deriv = check_derivatives(&inner.problem.nlp, &inner.solution.x, opts.derivative_points, 1e-2, opts.seed);
    let kkt: Vec<f64> = std::iter::once(&opf.solution)
        .chain(runs.iter().map(|r| &r.solution))
        .filter(|s| s.status == SolveStatus::Optimal)
        .map(|s| s.kkt_residual)
        .collect();
    let worst_kkt = kkt.iter().copied().fold(0.0, f64::max);
    checks.push(Check {
        name: "solver".into(),
        passed: deriv.max_error <= 1e-6 && worst_kkt <= 1e-6,
        details: json!({ "derivatives": deriv, "optimal_solves": kkt.len(), "worst_kkt_residual": worst_kkt }),
    });
    lap(&mut timing, "solver");

    let report = VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        opf: OpfOutcome { solve: opf.summary(case), verdict: opf_verdict },
        tscopf: outcomes,
    };
    Ok((report, timing))
}
