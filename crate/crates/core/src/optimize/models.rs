//! Dispatch models: the plain optimal power flow and its transient-stability
//! constrained extension.
//!
//! Variable layout (pre-fault, then post-fault, then stability):
//!
//! ```text
//! p^G, q^G, V, θ            pre-fault dispatch and state
//! V' (load buses), θ' (non-reference buses), q^G', p^G'_slack
//! x(t_c)                    fault-cleared state in Lur'e coordinates
//! w                         invariant level, scaled by `w_scale`
//! ```
//!
//! Generator-bus voltages are held through the fault (`V'_i = V_i`) and only
//! the slack generator re-dispatches after clearing. When the post-fault
//! network equals the pre-fault one the post-fault block aliases the
//! pre-fault variables.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hull::{grid_hull_constraints, hull_constraints, inner_constraints, row_lambdas, HullParams, LinearBound};
use super::ipm::{solve_nlp, IpmOptions, OptSolution, SolveStatus};
use super::{Block, NlpProblem, Row, Smooth};
use crate::ad::{Dual2, Real};
use crate::certify::QuadraticCertificate;
use crate::error::{Error, Result};
use crate::fault::{closed_form_cleared, taylor_cleared, FaultScenario};
use crate::gridcase::{pair_ratings, AdmittanceMatrix, BusKind, PowerCase, ScenarioSpec};
use crate::lure::{build_lure, LureSystem};
use crate::powerflow::{flat_start, generator_outputs, solve_pf, solve_pf_from, Injections, PfOptions, SteadyState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Exact per-row level bounds `λ(X ∓ Δl)²`.
    Concave,
    /// Convex hull chords over the angle-limit interval.
    Hull,
    /// Midpoint tangents, strictly inside the exact bounds.
    Inner,
    /// Hull chords over the full polytope width, `λπ(π ± 2(θ'_ij + α_ij))`.
    Grid,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Concave, Variant::Hull, Variant::Inner, Variant::Grid];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Concave => "concave",
            Variant::Hull => "hull",
            Variant::Inner => "inner",
            Variant::Grid => "grid",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Option(format!("unknown variant {s:?} (concave, hull, inner, grid)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum ClearedModel {
    Taylor(usize),
    ClosedForm,
}

impl Default for ClearedModel {
    fn default() -> Self {
        ClearedModel::Taylor(3)
    }
}

/// Variable indices of a dispatch problem.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Layout {
    pub pg: Vec<usize>,
    pub qg: Vec<usize>,
    pub v: Vec<usize>,
    pub theta: Vec<usize>,
    pub v_post: Vec<usize>,
    pub theta_post: Vec<usize>,
    pub qg_post: Vec<usize>,
    pub pslack_post: Option<usize>,
    pub x_tc: Vec<usize>,
    pub w: Option<usize>,
}

impl Layout {
    fn pick(idx: &[usize], x: &[f64]) -> Vec<f64> {
        idx.iter().map(|&k| x[k]).collect()
    }

    pub fn dispatch(&self, x: &[f64]) -> Vec<f64> {
        Self::pick(&self.pg, x)
    }

    pub fn reactive(&self, x: &[f64]) -> Vec<f64> {
        Self::pick(&self.qg, x)
    }

    pub fn pre_state(&self, x: &[f64]) -> SteadyState {
        SteadyState { v: Self::pick(&self.v, x), theta: Self::pick(&self.theta, x) }
    }

    pub fn post_state(&self, x: &[f64]) -> SteadyState {
        SteadyState { v: Self::pick(&self.v_post, x), theta: Self::pick(&self.theta_post, x) }
    }

    pub fn x_tc(&self, x: &[f64]) -> Vec<f64> {
        Self::pick(&self.x_tc, x)
    }
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x0: Vec<f64>,
    eq: Vec<Row>,
    ineq: Vec<Row>,
}

impl Builder {
    fn var(&mut self, name: String, lo: f64, hi: f64, x0: f64) -> usize {
        self.names.push(name);
        self.lower.push(lo);
        self.upper.push(hi);
        self.x0.push(x0);
        self.names.len() - 1
    }

    fn eq(&mut self, name: String, block: Block, f: Smooth) -> usize {
        self.eq.push(Row { name, block, f });
        self.eq.len() - 1
    }

    fn le(&mut self, name: String, block: Block, f: Smooth) -> usize {
        self.ineq.push(Row { name, block, f });
        self.ineq.len() - 1
    }

    fn finish(self, objective: Smooth) -> NlpProblem {
        NlpProblem {
            var_names: self.names,
            lower: self.lower,
            upper: self.upper,
            x0: self.x0,
            objective,
            eq: self.eq,
            ineq: self.ineq,
        }
    }
}

/// Active and reactive balance rows of one network.
#[allow(clippy::too_many_arguments)]
fn add_balance(
    b: &mut Builder,
    case: &PowerCase,
    y: &Arc<AdmittanceMatrix>,
    v: &[usize],
    th: &[usize],
    p_gen: &[usize],
    q_gen: &[usize],
    block: Block,
    tag: &str,
) {
    let n = case.n_bus();
    for i in 0..n {
        let buses: Vec<usize> = std::iter::once(i).chain(y.neighbors(i).iter().copied()).collect();
        let gens: Vec<usize> = (0..case.generators.len()).filter(|&k| case.generators[k].bus == i).collect();
        let nb = buses.len();
        let ng = gens.len();
        for reactive in [false, true] {
            let mut vars: Vec<usize> = buses.iter().map(|&j| v[j]).collect();
            vars.extend(buses.iter().map(|&j| th[j]));
            let gen_vars = if reactive { q_gen } else { p_gen };
            vars.extend(gens.iter().map(|&k| gen_vars[k]));
            let load = if reactive { case.load_q(i) } else { case.load_p(i) };
            let (y, buses) = (Arc::clone(y), buses.clone());
            let f = move |a: &[Dual2]| {
                let mut vf = vec![Dual2::constant(0.0); n];
                let mut tf = vec![Dual2::constant(0.0); n];
                for (k, &j) in buses.iter().enumerate() {
                    vf[j] = a[k].clone();
                    tf[j] = a[nb + k].clone();
                }
                let inj = if reactive {
                    crate::powerflow::q_injection(&vf, &tf, &y, i)
                } else {
                    crate::powerflow::p_injection(&vf, &tf, &y, i)
                };
                let gen = a[2 * nb..2 * nb + ng].iter().fold(Dual2::constant(0.0), |acc, g| acc + g.clone());
                inj - gen + load
            };
            let kind = if reactive { "q" } else { "p" };
            b.eq(format!("{kind}-balance{tag}[{i}]"), block, Smooth::new(vars, f));
        }
    }
}

/// Line (apparent-power proxy) and angle-difference limits of one network.
#[allow(clippy::too_many_arguments)]
fn add_limits(
    b: &mut Builder,
    case: &PowerCase,
    y: &AdmittanceMatrix,
    v: &[usize],
    th: &[usize],
    skip: Option<usize>,
    tag: &str,
) {
    for ((i, j), rating) in pair_ratings(case, skip) {
        let yabs = y.abs(i, j);
        if yabs == 0.0 || !rating.is_finite() {
            continue;
        }
        let k = yabs * yabs / (rating * rating);
        b.le(
            format!("line{tag}[{i}-{j}]"),
            Block::LineLimits,
            Smooth::new(vec![v[i], v[j]], move |a| (a[0].clone() * a[1].clone()).square() * k - 1.0),
        );
    }
    let lim = &case.limits;
    for (i, j) in y.edges() {
        b.le(
            format!("angle-max{tag}[{i}-{j}]"),
            Block::AngleLimits,
            Smooth::linear(vec![(th[i], 1.0), (th[j], -1.0)], -lim.angle_diff_max),
        );
        b.le(
            format!("angle-min{tag}[{i}-{j}]"),
            Block::AngleLimits,
            Smooth::linear(vec![(th[i], -1.0), (th[j], 1.0)], lim.angle_diff_min),
        );
    }
}

fn add_gen_limit(b: &mut Builder, name: &str, var: usize, lo: f64, hi: f64) {
    if lo.is_finite() {
        b.le(format!("{name}-min"), Block::GeneratorLimits, Smooth::linear(vec![(var, -1.0)], lo));
    }
    if hi.is_finite() {
        b.le(format!("{name}-max"), Block::GeneratorLimits, Smooth::linear(vec![(var, 1.0)], -hi));
    }
}

fn cost(case: &PowerCase, pg: &[usize]) -> (Vec<usize>, Vec<(f64, f64)>) {
    let coef = case.generators.iter().map(|g| (g.cost_quadratic, g.cost_linear)).collect();
    (pg.to_vec(), coef)
}

fn cost_expr(a: &[Dual2], coef: &[(f64, f64)]) -> Dual2 {
    a.iter().zip(coef).fold(Dual2::constant(0.0), |acc, (p, &(q, l))| acc + p.square() * q + p.clone() * l)
}

/// Generation cost `Σ a₁ p² + a₂ p`.
pub fn generation_cost(case: &PowerCase, p_gen: &[f64]) -> f64 {
    case.generators.iter().zip(p_gen).map(|(g, &p)| g.cost_quadratic * p * p + g.cost_linear * p).sum()
}

/// A starting point: the power flow at the nominal dispatch, or a flat
/// state if it does not converge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmStart {
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub state: SteadyState,
    pub objective: f64,
}

impl WarmStart {
    pub fn nominal(case: &PowerCase, y: &AdmittanceMatrix) -> Self {
        let p = case.nominal_dispatch();
        let q = vec![0.0; p.len()];
        match solve_pf(case, &Injections::from_dispatch(case, &p, &q), y) {
            Ok(state) => {
                let (p_gen, q_gen) = generator_outputs(case, &state, y);
                WarmStart { objective: generation_cost(case, &p_gen), p_gen, q_gen, state }
            }
            Err(_) => WarmStart { objective: generation_cost(case, &p), p_gen: p, q_gen: q, state: flat_start(case) },
        }
    }

    pub fn flat(case: &PowerCase) -> Self {
        let p = case.nominal_dispatch();
        WarmStart {
            objective: generation_cost(case, &p),
            q_gen: vec![0.0; p.len()],
            p_gen: p,
            state: flat_start(case),
        }
    }
}

/// A plain optimal power flow.
#[derive(Clone)]
pub struct OpfProblem {
    pub nlp: NlpProblem,
    pub layout: Layout,
}

impl OpfProblem {
    pub fn warm_start(&self, case: &PowerCase, sol: &OptSolution) -> WarmStart {
        let p_gen = self.layout.dispatch(&sol.x);
        WarmStart {
            objective: generation_cost(case, &p_gen),
            p_gen,
            q_gen: self.layout.reactive(&sol.x),
            state: self.layout.pre_state(&sol.x),
        }
    }
}

fn pre_fault_block(b: &mut Builder, case: &PowerCase, y: &Arc<AdmittanceMatrix>, start: &WarmStart) -> Layout {
    let n = case.n_bus();
    let lim = &case.limits;
    let mut layout = Layout::default();
    for k in 0..case.generators.len() {
        layout.pg.push(b.var(format!("pg[{k}]"), f64::NEG_INFINITY, f64::INFINITY, start.p_gen[k]));
    }
    for k in 0..case.generators.len() {
        layout.qg.push(b.var(format!("qg[{k}]"), f64::NEG_INFINITY, f64::INFINITY, start.q_gen[k]));
    }
    let inf = case.infinite_bus();
    for i in 0..n {
        let (lo, hi) = if Some(i) == inf { (f64::NEG_INFINITY, f64::INFINITY) } else { (lim.v_min, lim.v_max) };
        layout.v.push(b.var(format!("v[{i}]"), lo, hi, start.state.v[i].clamp(lim.v_min, lim.v_max)));
    }
    for i in 0..n {
        layout.theta.push(b.var(format!("theta[{i}]"), f64::NEG_INFINITY, f64::INFINITY, start.state.theta[i]));
    }
    let slack = case.slack();
    b.eq("theta-ref".into(), Block::Reference, Smooth::linear(vec![(layout.theta[slack], 1.0)], 0.0));
    if let Some(i) = inf {
        let vs = case.generator_at(i).map_or(1.0, |g| g.v_set);
        b.eq("v-infinite".into(), Block::Reference, Smooth::linear(vec![(layout.v[i], 1.0)], -vs));
    }
    add_balance(b, case, y, &layout.v, &layout.theta, &layout.pg, &layout.qg, Block::PowerFlowPre, "");
    add_limits(b, case, y, &layout.v, &layout.theta, None, "");
    for (k, g) in case.generators.iter().enumerate() {
        add_gen_limit(b, &format!("pg[{k}]"), layout.pg[k], g.p_min, g.p_max);
        add_gen_limit(b, &format!("qg[{k}]"), layout.qg[k], g.q_min, g.q_max);
    }
    layout
}

/// Optimal power flow over `(p^G, q^G, V, θ)`: pre-fault balance, line and
/// angle limits, voltage bounds and generator limits.
pub fn build_opf(case: &PowerCase) -> Result<OpfProblem> {
    let y = Arc::new(crate::gridcase::build_admittance(case, crate::gridcase::NetworkVariant::Base, None)?);
    let start = WarmStart::nominal(case, &y);
    build_opf_from(case, &y, &start)
}

pub(crate) fn build_opf_from(case: &PowerCase, y: &Arc<AdmittanceMatrix>, start: &WarmStart) -> Result<OpfProblem> {
    let mut b = Builder::default();
    let layout = pre_fault_block(&mut b, case, y, start);
    let (vars, coef) = cost(case, &layout.pg);
    let objective = Smooth::new(vars, move |a| cost_expr(a, &coef));
    Ok(OpfProblem { nlp: b.finish(objective), layout })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TscopfOptions {
    pub variant: Variant,
    pub cleared: ClearedModel,
    /// `ε = epsilon_rel · max(1, |f_OPF|)` unless `epsilon` is given.
    pub epsilon_rel: f64,
    pub epsilon: Option<f64>,
    pub ipm: IpmOptions,
}

impl Default for TscopfOptions {
    fn default() -> Self {
        TscopfOptions {
            variant: Variant::Inner,
            cleared: ClearedModel::default(),
            epsilon_rel: 1e-4,
            epsilon: None,
            ipm: IpmOptions::default(),
        }
    }
}

/// Which inequality row bounds the level through which output.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WminRow {
    pub row: usize,
    pub output: usize,
}

#[derive(Clone)]
pub struct TscopfProblem {
    pub nlp: NlpProblem,
    pub layout: Layout,
    pub variant: Variant,
    pub cleared: ClearedModel,
    pub epsilon: f64,
    /// The objective of the OPF used to scale `ε` and warm start.
    pub opf_objective: f64,
    /// `W^min = w · w_scale`.
    pub w_scale: f64,
    pub lambdas: Vec<f64>,
    pub hull: Vec<HullParams>,
    /// Hull intervals that had to be clamped into `[-2Δl, 2Δl]`.
    pub clamped: usize,
    pub w_rows: Vec<WminRow>,
    pub energy_row: usize,
    pub restores: bool,
    pub sys: LureSystem,
    pub scenario: Arc<FaultScenario>,
    pub cert: QuadraticCertificate,
}

impl TscopfProblem {
    pub fn w_min(&self, x: &[f64]) -> f64 {
        self.layout.w.map_or(0.0, |k| x[k] * self.w_scale)
    }

    /// `W(x(t_c))` at a solution vector.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let xt = nalgebra::DVector::from_vec(self.layout.x_tc(x));
        xt.dot(&(&self.cert.p * &xt))
    }

    /// Upper bounds on `W^min` implied by each level row at `x`.
    pub fn w_bounds(&self, x: &[f64]) -> Vec<f64> {
        let w = self.w_min(x);
        self.w_rows.iter().map(|r| w - self.nlp.ineq[r.row].f.value(x) * self.w_scale).collect()
    }

    /// Lur'e system around the post-fault equilibrium of `x`.
    pub fn system_at(&self, x: &[f64]) -> LureSystem {
        self.sys.with_equilibrium(&self.layout.post_state(x))
    }
}

/// Transient-stability constrained OPF for `spec`, certified by `cert`.
///
/// `warm` is an OPF solution used as the starting point and to scale `ε`;
/// when absent the OPF is solved first.
pub fn build_tscopf(
    case: &PowerCase,
    spec: &ScenarioSpec,
    cert: &QuadraticCertificate,
    opts: &TscopfOptions,
    warm: Option<&WarmStart>,
) -> Result<TscopfProblem> {
    let scenario = Arc::new(FaultScenario::new(case, spec)?);
    let n = case.n_bus();
    let sys = build_lure(case, &SteadyState::flat(n), &scenario.y_post)?;
    cert.check_system(&sys)?;
    if let ClearedModel::Taylor(order) = opts.cleared {
        if !(1..=crate::fault::MAX_TAYLOR_ORDER).contains(&order) {
            return Err(Error::Option(format!("Taylor order must be in 1..={}", crate::fault::MAX_TAYLOR_ORDER)));
        }
    }
    let tc = scenario.t_clear;
    if !(tc.is_finite() && tc <= crate::fault::MAX_SERIES_CLEARING_TIME) {
        return Err(Error::ClearingTime(tc));
    }

    let y_pre = Arc::new(scenario.y_pre.clone());
    let y_post = Arc::new(scenario.y_post.clone());
    let owned;
    let warm = match warm {
        Some(w) => w,
        None => {
            let opf = build_opf_from(case, &y_pre, &WarmStart::nominal(case, &y_pre))?;
            let sol = solve_nlp(&opf.nlp, &opts.ipm);
            owned = if sol.status == SolveStatus::Optimal {
                opf.warm_start(case, &sol)
            } else {
                WarmStart::nominal(case, &y_pre)
            };
            &owned
        }
    };
    let epsilon = opts.epsilon.unwrap_or(opts.epsilon_rel * warm.objective.abs().max(1.0));

    let mut b = Builder::default();
    let mut layout = pre_fault_block(&mut b, case, &y_pre, warm);
    let restores = scenario.y_post.max_abs_diff(&scenario.y_pre) == 0.0;
    let lim = &case.limits;
    let slack = case.slack();
    let slack_gen = case.generator_index_at(slack);

    // Post-fault starting point.
    let pre = &warm.state;
    let post0 = if restores {
        pre.clone()
    } else {
        let inj = Injections {
            p: (0..n).map(|i| crate::powerflow::injection_p(pre, &y_pre, i)).collect(),
            q: (0..n).map(|i| crate::powerflow::injection_q(pre, &y_pre, i)).collect(),
        };
        solve_pf_from(case, &inj, &y_post, pre.clone(), PfOptions::default()).map(|r| r.state).unwrap_or(pre.clone())
    };

    if restores {
        layout.v_post = layout.v.clone();
        layout.theta_post = layout.theta.clone();
        layout.qg_post = layout.qg.clone();
    } else {
        for i in 0..n {
            let k = if case.is_pv(i) {
                layout.v[i]
            } else {
                b.var(format!("v_post[{i}]"), lim.v_min, lim.v_max, post0.v[i].clamp(lim.v_min, lim.v_max))
            };
            layout.v_post.push(k);
        }
        for i in 0..n {
            let k = if i == slack {
                layout.theta[i]
            } else {
                b.var(format!("theta_post[{i}]"), f64::NEG_INFINITY, f64::INFINITY, post0.theta[i])
            };
            layout.theta_post.push(k);
        }
        let (p_post0, q_post0) = generator_outputs(case, &post0, &y_post);
        for (k, g) in case.generators.iter().enumerate() {
            let q = b.var(format!("qg_post[{k}]"), f64::NEG_INFINITY, f64::INFINITY, q_post0[k]);
            add_gen_limit(&mut b, &format!("qg_post[{k}]"), q, g.q_min, g.q_max);
            layout.qg_post.push(q);
        }
        let mut p_post = layout.pg.clone();
        if let Some(k) = slack_gen {
            let g = &case.generators[k];
            let v = b.var(format!("pg_post[{k}]"), f64::NEG_INFINITY, f64::INFINITY, p_post0[k]);
            if case.buses[slack].kind != BusKind::Infinite {
                add_gen_limit(&mut b, &format!("pg_post[{k}]"), v, g.p_min, g.p_max);
            }
            p_post[k] = v;
            layout.pslack_post = Some(v);
        }
        let (vp, tp, qp) = (layout.v_post.clone(), layout.theta_post.clone(), layout.qg_post.clone());
        add_balance(&mut b, case, &y_post, &vp, &tp, &p_post, &qp, Block::PowerFlowPost, "-post");
        add_limits(&mut b, case, &y_post, &vp, &tp, spec.faulted_branch, "-post");
    }

    // Fault-cleared state.
    let sys0 = sys.with_equilibrium(&post0);
    let x_tc0 = {
        let (delta, dw) = cleared::<f64>(&scenario, opts.cleared, &pre.v, &pre.theta, tc);
        let omega: Vec<f64> = dw.iter().map(|w| 1.0 + w).collect();
        sys0.state_from_full(&delta, &omega)
    };
    let r = sys.reference;
    let na = sys.n_angles();
    for k in 0..sys.dim() {
        layout.x_tc.push(b.var(format!("x_tc[{k}]"), f64::NEG_INFINITY, f64::INFINITY, x_tc0[k]));
    }
    for k in 0..sys.dim() {
        let mut vars: Vec<usize> = layout.v.clone();
        vars.extend(&layout.theta);
        vars.push(layout.x_tc[k]);
        let angle = if k < na { Some(sys.angle_buses[k]) } else { None };
        if let Some(bus) = angle {
            vars.push(layout.theta_post[bus]);
            vars.push(layout.theta_post[r]);
        }
        let (sc, model) = (Arc::clone(&scenario), opts.cleared);
        let f = move |a: &[Dual2]| {
            let (delta, dw) = cleared(&sc, model, &a[..n], &a[n..2 * n], tc);
            let xk = a[2 * n].clone();
            match angle {
                Some(bus) => {
                    let th = a[2 * n + 1].clone() - a[2 * n + 2].clone();
                    xk - (delta[bus].clone() - delta[r].clone() - th)
                }
                None => xk - dw[k - na].clone(),
            }
        };
        b.eq(format!("x_tc[{k}]"), Block::FaultCleared, Smooth::new(vars, f));
    }

    // Level bounds.
    let lambdas = row_lambdas(cert, &sys)?;
    let w_scale = lambdas.iter().fold(f64::INFINITY, |a, &l| a.min(l)) * PI * PI;
    let mut hull = Vec::with_capacity(lambdas.len());
    let mut clamped = 0;
    for (nl, &lambda) in sys.nonlinearities.iter().zip(&lambdas) {
        let lo = -2.0 * (lim.angle_diff_max + nl.alpha);
        let hi = -2.0 * (lim.angle_diff_min + nl.alpha);
        let (p, changed) = HullParams::clamped(lo, hi, PI, lambda);
        if changed {
            log::warn!("level interval of output {}-{} clamped to [{}, {}]", nl.from, nl.to, p.x_lo, p.x_hi);
            clamped += 1;
        }
        hull.push(p);
    }
    let w0_bounds: Vec<f64> = sys
        .nonlinearities
        .iter()
        .zip(&hull)
        .map(|(nl, p)| {
            let x = -2.0 * (post0.theta[nl.from] - post0.theta[nl.to] + nl.alpha);
            level_bounds(opts.variant, p, x).into_iter().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let w0 = w0_bounds.iter().fold(f64::INFINITY, |a, &b| a.min(b)).max(1e-6 * w_scale) / w_scale;
    let w = b.var("w_min".into(), 0.0, f64::INFINITY, w0);
    layout.w = Some(w);

    let grid = grid_hull_constraints(cert, &sys)?;
    let mut w_rows = Vec::new();
    for (k, nl) in sys.nonlinearities.iter().enumerate() {
        let vars = vec![w, layout.theta_post[nl.from], layout.theta_post[nl.to]];
        for side in 0..2 {
            let (p, alpha, g, variant) = (hull[k], nl.alpha, grid[k], opts.variant);
            let f = move |a: &[Dual2]| {
                let bound = if variant == Variant::Grid {
                    let [b0, b1] = g.bounds(a[1].clone(), a[2].clone());
                    if side == 0 {
                        b0
                    } else {
                        b1
                    }
                } else {
                    let x = (a[1].clone() - a[2].clone() + alpha) * -2.0;
                    level_bound_expr(variant, &p, x, side)
                };
                a[0].clone() - bound / w_scale
            };
            let row = b.le(format!("w-bound[{k}.{side}]"), Block::Hull, Smooth::new(vars.clone(), f));
            w_rows.push(WminRow { row, output: k });
        }
    }

    let p_mat = cert.p.clone();
    let mut vars = layout.x_tc.clone();
    vars.push(w);
    let dim = sys.dim();
    let energy_row = b.le(
        "energy-cap".into(),
        Block::EnergyCap,
        Smooth::new(vars, move |a| {
            let mut acc = Dual2::constant(0.0);
            for i in 0..dim {
                for j in 0..dim {
                    if p_mat[(i, j)] != 0.0 {
                        acc = acc + a[i].clone() * a[j].clone() * p_mat[(i, j)];
                    }
                }
            }
            acc / w_scale - a[dim].clone()
        }),
    );

    let (mut vars, coef) = cost(case, &layout.pg);
    vars.push(w);
    let ng = coef.len();
    let objective = Smooth::new(vars, move |a| cost_expr(&a[..ng], &coef) - a[ng].clone() * epsilon);

    Ok(TscopfProblem {
        nlp: b.finish(objective),
        layout,
        variant: opts.variant,
        cleared: opts.cleared,
        epsilon,
        opf_objective: warm.objective,
        w_scale,
        lambdas,
        hull,
        clamped,
        w_rows,
        energy_row,
        restores,
        sys,
        scenario,
        cert: cert.clone(),
    })
}

fn cleared<T: Real>(sc: &FaultScenario, model: ClearedModel, v: &[T], theta: &[T], tc: f64) -> (Vec<T>, Vec<T>) {
    match model {
        ClearedModel::Taylor(order) => taylor_cleared(sc, v, theta, order, tc),
        ClearedModel::ClosedForm => closed_form_cleared(sc, v, theta, tc),
    }
}

fn variant_lines(variant: Variant, p: &HullParams) -> Option<[LinearBound; 2]> {
    match variant {
        Variant::Hull => Some(hull_constraints(p)),
        Variant::Inner => Some(inner_constraints(p)),
        Variant::Grid => Some(hull_constraints(&HullParams { x_lo: -PI, x_hi: PI, ..*p })),
        Variant::Concave => None,
    }
}

fn level_bound_expr(variant: Variant, p: &HullParams, x: Dual2, side: usize) -> Dual2 {
    match variant_lines(variant, p) {
        Some(lines) => lines[side].eval(x),
        None => p.psi(x)[side].clone(),
    }
}

/// The variant's two bounds on `W^min` at output center `x`.
pub fn level_bounds(variant: Variant, p: &HullParams, x: f64) -> [f64; 2] {
    match variant_lines(variant, p) {
        Some([a, b]) => [a.eval(x), b.eval(x)],
        None => p.psi(x),
    }
}
