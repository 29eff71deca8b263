//! Fault scenarios and the fault-cleared state.
//!
//! During `[0, t_c)` the network is `Y''` with voltages frozen at their
//! pre-fault values and, at overridden buses, zero net injection. The state
//! at clearing is approximated either by fixed third-order closed forms in
//! the factor `K_i`, or by a Taylor series of arbitrary order built from
//! power-series arithmetic on the fault-on vector field.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::gridcase::{build_admittance, AdmittanceMatrix, BusKind, DeltaReference, NetworkVariant, PowerCase, ScenarioSpec};
use crate::lure::LureSystem;
use crate::powerflow::{p_injection, SteadyState};
use crate::simulate::{Phase, SwingModel, TransientSetup};

/// Largest clearing time accepted by the series approximations.
pub const MAX_SERIES_CLEARING_TIME: f64 = 0.3;
pub const MAX_TAYLOR_ORDER: usize = 4;

#[derive(Debug, Clone)]
pub struct FaultScenario {
    pub spec: ScenarioSpec,
    pub t_clear: f64,
    pub fault_bus: Option<usize>,
    pub y_pre: AdmittanceMatrix,
    pub y_fault: AdmittanceMatrix,
    pub y_post: AdmittanceMatrix,
    /// Buses with zero net injection while the fault is on.
    pub overridden: Vec<bool>,
    pub model: SwingModel,
}

impl FaultScenario {
    pub fn new(case: &PowerCase, spec: &ScenarioSpec) -> Result<Self> {
        let fault_bus = spec.check(case)?;
        let t_clear = spec.clearing_time();
        if !(t_clear > 0.0) {
            return Err(Error::Scenario("t_clear must be positive".into()));
        }
        Ok(FaultScenario {
            spec: spec.clone(),
            t_clear,
            fault_bus,
            y_pre: build_admittance(case, NetworkVariant::Base, None)?,
            y_fault: build_admittance(case, NetworkVariant::Faulted, Some(spec))?,
            y_post: build_admittance(case, NetworkVariant::PostFault, Some(spec))?,
            overridden: spec.overridden_buses(case)?,
            model: SwingModel::new(case),
        })
    }

    /// Network the admittance change `ΔY = Y'' - Y_ref` is measured from.
    pub fn reference_network(&self) -> &AdmittanceMatrix {
        match self.spec.delta_reference {
            DeltaReference::PreFault => &self.y_pre,
            DeltaReference::PostFault => &self.y_post,
        }
    }

    pub fn delta_g(&self, i: usize, j: usize) -> f64 {
        self.y_fault.g(i, j) - self.reference_network().g(i, j)
    }

    pub fn delta_b(&self, i: usize, j: usize) -> f64 {
        self.y_fault.b(i, j) - self.reference_network().b(i, j)
    }

    /// The fault-on and post-fault networks coincide.
    pub fn is_self_clearing(&self) -> bool {
        self.y_fault.max_abs_diff(&self.y_post) == 0.0
    }

    /// Net injection held during the fault, given pre-fault `(V, θ)`.
    pub fn fault_on_injection<T: Real>(&self, v: &[T], theta: &[T], i: usize) -> T {
        if self.overridden[i] {
            T::zero()
        } else {
            p_injection(v, theta, &self.y_pre, i)
        }
    }

    /// Transient setup starting from the pre-fault equilibrium.
    ///
    /// `post_eq` sets the post-fault voltages and injections; without it the
    /// pre-fault voltages and injections are kept after clearing.
    pub fn transient_setup(&self, pre_eq: &SteadyState, post_eq: Option<&SteadyState>) -> TransientSetup {
        let n = pre_eq.len();
        let fault = Phase {
            y: self.y_fault.clone(),
            v: pre_eq.v.clone(),
            p: (0..n).map(|i| self.fault_on_injection(&pre_eq.v, &pre_eq.theta, i)).collect(),
        };
        let post = match post_eq {
            Some(eq) => Phase::around(self.y_post.clone(), eq),
            None => Phase {
                y: self.y_post.clone(),
                v: pre_eq.v.clone(),
                p: (0..n).map(|i| p_injection(&pre_eq.v, &pre_eq.theta, &self.y_pre, i)).collect(),
            },
        };
        TransientSetup {
            omega0: vec![1.0; self.model.speed_buses.len()],
            model: self.model.clone(),
            fault: Some(fault),
            post,
            t_clear: self.t_clear,
            delta0: pre_eq.theta.clone(),
        }
    }
}

/// `K_i = V_i Σ_j V_j (ΔB_ij sin θ_ij + ΔG_ij cos θ_ij)` with `ΔY = Y_a - Y_b`.
pub fn k_factor_between<T: Real>(v: &[T], theta: &[T], y_a: &AdmittanceMatrix, y_b: &AdmittanceMatrix, i: usize) -> T {
    let mut acc = T::zero();
    for j in 0..y_a.dim() {
        let dg = y_a.g(i, j) - y_b.g(i, j);
        let db = y_a.b(i, j) - y_b.b(i, j);
        if dg == 0.0 && db == 0.0 {
            continue;
        }
        let (s, c) = (theta[i].clone() - theta[j].clone()).sin_cos();
        acc = acc + v[j].clone() * (s * db + c * dg);
    }
    acc * v[i].clone()
}

pub fn k_factor(pre_eq: &SteadyState, scenario: &FaultScenario, i: usize) -> f64 {
    k_factor_between(&pre_eq.v, &pre_eq.theta, &scenario.y_fault, scenario.reference_network(), i)
}

/// Forcing `u_i` of the swing equation at bus `i` while the fault is on,
/// measured at the pre-fault equilibrium: `m_i ω̇_i = u_i` (generators),
/// `d_i δ̇_i = u_i` (loads). It is `-K_i`, minus the lost net injection at
/// overridden buses.
pub fn disturbance_term(pre_eq: &SteadyState, scenario: &FaultScenario, i: usize) -> f64 {
    disturbance(scenario, &pre_eq.v, &pre_eq.theta, i)
}

/// [`disturbance_term`] at an arbitrary pre-fault state, generic over the
/// scalar.
pub fn disturbance<T: Real>(scenario: &FaultScenario, v: &[T], theta: &[T], i: usize) -> T {
    let k = k_factor_between(v, theta, &scenario.y_fault, scenario.reference_network(), i);
    if scenario.overridden[i] {
        -k - p_injection(v, theta, &scenario.y_pre, i)
    } else {
        -k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "snake_case")]
pub enum ClearedMethod {
    ClosedForm,
    GeneralTaylor(usize),
}

impl std::fmt::Display for ClearedMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClearedMethod::ClosedForm => write!(f, "closed-form"),
            ClearedMethod::GeneralTaylor(n) => write!(f, "general-taylor-{n}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultClearedState {
    /// `[δ(t_c) - θ'; ω(t_c) - 1]` in Lur'e coordinates of the post-fault system.
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    /// Absolute speeds of the generator-kind buses.
    pub omega: Vec<f64>,
    pub method: ClearedMethod,
    pub t_clear: f64,
}

impl FaultClearedState {
    pub fn x_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

fn guard(t_clear: f64) -> Result<()> {
    if !(t_clear.is_finite() && t_clear <= MAX_SERIES_CLEARING_TIME) {
        return Err(Error::ClearingTime(t_clear));
    }
    Ok(())
}

/// Third-order closed forms in `K_i`, with `K_i` taken as `-u_i` so that
/// injection overrides enter the same way as the admittance change:
///
/// ```text
/// δ_i = θ_i - d_i t²/(2 m_i) K_i                 generators
/// δ_i = θ_i - (2 + t²)/(2 d_i) K_i               loads
/// ω_i = 1 + (d_i t²/(2 m_i²) - t/m_i) K_i
/// ```
pub fn fault_cleared_closed(pre_eq: &SteadyState, scenario: &FaultScenario, sys: &LureSystem) -> Result<FaultClearedState> {
    fault_cleared_closed_at(pre_eq, scenario, sys, scenario.t_clear)
}

pub fn fault_cleared_closed_at(
    pre_eq: &SteadyState,
    scenario: &FaultScenario,
    sys: &LureSystem,
    tc: f64,
) -> Result<FaultClearedState> {
    guard(tc)?;
    let (delta, dw) = closed_form_cleared(scenario, &pre_eq.v, &pre_eq.theta, tc);
    let omega = dw.iter().map(|w| 1.0 + w).collect();
    Ok(assemble(sys, delta, omega, ClearedMethod::ClosedForm, tc))
}

/// `δ(t_c)`, `ω(t_c) - 1` from the closed forms, generic over the scalar.
pub fn closed_form_cleared<T: Real>(scenario: &FaultScenario, v: &[T], theta: &[T], tc: f64) -> (Vec<T>, Vec<T>) {
    let model = &scenario.model;
    let mut delta = theta.to_vec();
    let mut omega = Vec::with_capacity(model.speed_buses.len());
    for i in 0..theta.len() {
        let (m, d) = (model.inertia[i], model.damping[i]);
        match model.kinds[i] {
            BusKind::Infinite => {}
            BusKind::Generator => {
                let k = -disturbance(scenario, v, theta, i);
                delta[i] = delta[i].clone() - k.clone() * (d * tc * tc / (2.0 * m));
                omega.push(k * (d * tc * tc / (2.0 * m * m) - tc / m));
            }
            BusKind::Load => {
                let k = -disturbance(scenario, v, theta, i);
                delta[i] = delta[i].clone() - k * ((2.0 + tc * tc) / (2.0 * d));
            }
        }
    }
    (delta, omega)
}

fn assemble(sys: &LureSystem, delta: Vec<f64>, omega: Vec<f64>, method: ClearedMethod, tc: f64) -> FaultClearedState {
    let x = sys.state_from_full(&delta, &omega);
    FaultClearedState { x: x.iter().copied().collect(), delta, omega, method, t_clear: tc }
}

/// Taylor coefficients of the fault-on trajectory about `t = 0`.
#[derive(Debug, Clone)]
pub struct FaultOnSeries<T> {
    /// `delta[i][n]`: coefficient of `tⁿ` in `δ_i(t)`.
    pub delta: Vec<Vec<T>>,
    /// Coefficients of `ω_g(t) - 1`, generator-kind buses in index order.
    pub omega: Vec<Vec<T>>,
}

impl<T: Real> FaultOnSeries<T> {
    /// Evaluates the truncated series at `t`.
    pub fn eval(&self, t: f64) -> (Vec<T>, Vec<T>) {
        let horner = |c: &Vec<T>| c.iter().rev().fold(T::zero(), |acc, a| acc * t + a.clone());
        (self.delta.iter().map(horner).collect(), self.omega.iter().map(horner).collect())
    }
}

/// Power-series solution of the fault-on swing equations up to `tᴺ`,
/// starting from the pre-fault equilibrium `(V, θ)` with `ω = 1`.
///
/// `sin`/`cos` of each angle difference `u = δ_i - δ_j` follow from
/// `s' = c u'`, `c' = -s u'`:
/// `s_n = (1/n) Σ_k k u_k c_{n-k}`, `c_n = -(1/n) Σ_k k u_k s_{n-k}`.
pub fn fault_on_series<T: Real>(scenario: &FaultScenario, v: &[T], theta: &[T], order: usize) -> FaultOnSeries<T> {
    let model = &scenario.model;
    let y = &scenario.y_fault;
    let n_bus = v.len();
    let edges = y.edges();
    let p_on: Vec<T> = (0..n_bus).map(|i| scenario.fault_on_injection(v, theta, i)).collect();

    let mut delta: Vec<Vec<T>> = theta.iter().map(|t| vec![t.clone()]).collect();
    let mut omega: Vec<Vec<T>> = model.speed_buses.iter().map(|_| vec![T::zero()]).collect();
    let mut sin_s: Vec<Vec<T>> = vec![Vec::with_capacity(order); edges.len()];
    let mut cos_s: Vec<Vec<T>> = vec![Vec::with_capacity(order); edges.len()];

    for n in 0..order {
        for (e, &(i, j)) in edges.iter().enumerate() {
            if n == 0 {
                let (s, c) = (theta[i].clone() - theta[j].clone()).sin_cos();
                sin_s[e].push(s);
                cos_s[e].push(c);
                continue;
            }
            let mut s = T::zero();
            let mut c = T::zero();
            for k in 1..=n {
                let uk = (delta[i][k].clone() - delta[j][k].clone()) * k as f64;
                s = s + uk.clone() * cos_s[e][n - k].clone();
                c = c - uk * sin_s[e][n - k].clone();
            }
            sin_s[e].push(s / n as f64);
            cos_s[e].push(c / n as f64);
        }
        // n-th coefficient of the electrical power at every bus
        let mut p: Vec<T> = (0..n_bus)
            .map(|i| if n == 0 { v[i].clone() * v[i].clone() * y.g(i, i) } else { T::zero() })
            .collect();
        for (e, &(i, j)) in edges.iter().enumerate() {
            let vv = v[i].clone() * v[j].clone();
            let (s, c) = (&sin_s[e][n], &cos_s[e][n]);
            p[i] = p[i].clone() + vv.clone() * (c.clone() * y.g(i, j) + s.clone() * y.b(i, j));
            p[j] = p[j].clone() + vv * (c.clone() * y.g(j, i) - s.clone() * y.b(j, i));
        }
        let mut g = 0;
        for i in 0..n_bus {
            let mut f = -p[i].clone();
            if n == 0 {
                f = f + p_on[i].clone();
            }
            let next = (n + 1) as f64;
            match model.kinds[i] {
                BusKind::Infinite => delta[i].push(T::zero()),
                BusKind::Load => delta[i].push(f / (model.damping[i] * next)),
                BusKind::Generator => {
                    let w = omega[g][n].clone();
                    delta[i].push(w.clone() / next);
                    omega[g].push((f - w * model.damping[i]) / (model.inertia[i] * next));
                    g += 1;
                }
            }
        }
    }
    FaultOnSeries { delta, omega }
}

/// `δ(t_c)`, `ω(t_c) - 1` from the order-`N` series, generic over the scalar.
pub fn taylor_cleared<T: Real>(scenario: &FaultScenario, v: &[T], theta: &[T], order: usize, tc: f64) -> (Vec<T>, Vec<T>) {
    fault_on_series(scenario, v, theta, order).eval(tc)
}

pub fn fault_cleared_taylor(
    pre_eq: &SteadyState,
    scenario: &FaultScenario,
    sys: &LureSystem,
    order: usize,
) -> Result<FaultClearedState> {
    fault_cleared_taylor_at(pre_eq, scenario, sys, order, scenario.t_clear)
}

pub fn fault_cleared_taylor_at(
    pre_eq: &SteadyState,
    scenario: &FaultScenario,
    sys: &LureSystem,
    order: usize,
    tc: f64,
) -> Result<FaultClearedState> {
    guard(tc)?;
    if !(1..=MAX_TAYLOR_ORDER).contains(&order) {
        return Err(Error::Option(format!("Taylor order must be in 1..={MAX_TAYLOR_ORDER}, got {order}")));
    }
    let (delta, dw) = taylor_cleared(scenario, &pre_eq.v, &pre_eq.theta, order, tc);
    let omega = dw.iter().map(|w| 1.0 + w).collect();
    Ok(assemble(sys, delta, omega, ClearedMethod::GeneralTaylor(order), tc))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::gridcase::FaultType;
    use crate::lure::build_lure;
    use crate::powerflow::{solve_pf, Injections};
    use crate::simulate::{integrate, SimOptions};

    const THREE_BUS: &str = r#"{
        "buses": [
            {"id": 1, "kind": "generator"},
            {"id": 2, "kind": "load", "damping": 8.0},
            {"id": 3, "kind": "load", "damping": 6.0}
        ],
        "branches": [
            {"from": 1, "to": 2, "g": 0.5, "b": -6.0},
            {"from": 2, "to": 3, "g": 0.4, "b": -5.0},
            {"from": 1, "to": 3, "g": 0.3, "b": -4.0},
            {"from": 1, "to": 3, "g": 0.3, "b": -4.0}
        ],
        "generators": [
            {"bus": 1, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 1, "cost_linear": 1,
             "inertia": 0.5, "damping": 1.2}
        ],
        "loads": [{"bus": 2, "p": 0.6, "q": 0.2}, {"bus": 3, "p": 0.5, "q": 0.1}],
        "limits": {"v_min": 0.9, "v_max": 1.1, "angle_diff_min": -1, "angle_diff_max": 1}
    }"#;

    fn three_bus() -> (PowerCase, SteadyState) {
        let case = PowerCase::from_json_str(THREE_BUS).unwrap();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let inj = Injections::from_dispatch(&case, &[1.2], &[0.0]);
        let eq = solve_pf(&case, &inj, &y).unwrap();
        (case, eq)
    }

    fn scenario(fault_type: FaultType, branch: Option<usize>, bus: Option<usize>, tc: f64) -> ScenarioSpec {
        let mut s = ScenarioSpec::null(tc);
        s.fault_type = fault_type;
        s.faulted_branch = branch;
        s.fault_bus = bus;
        s.fault_admittance.b = -3.0;
        s.injection_override = Default::default();
        s
    }

    fn post_system(case: &PowerCase, fs: &FaultScenario, pre: &SteadyState) -> (SteadyState, LureSystem) {
        let n = case.n_bus();
        let inj = Injections {
            p: (0..n).map(|i| p_injection(&pre.v, &pre.theta, &fs.y_pre, i)).collect(),
            q: (0..n).map(|i| crate::powerflow::q_injection(&pre.v, &pre.theta, &fs.y_pre, i)).collect(),
        };
        let post = solve_pf(case, &inj, &fs.y_post).unwrap();
        let sys = build_lure(case, &post, &fs.y_post).unwrap();
        (post, sys)
    }

    fn simulate_to_clearing(fs: &FaultScenario, pre: &SteadyState, tc: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
        let mut setup = fs.transient_setup(pre, None);
        setup.t_clear = tc;
        let traj = integrate(&setup, SimOptions { horizon: tc, step: h, ..Default::default() }).unwrap();
        (traj.delta.last().unwrap().clone(), traj.omega.last().unwrap().clone())
    }

    #[test]
    fn k_factor_hand_values() {
        let z = Complex64::new(0.0, 0.0);
        let y = AdmittanceMatrix::from_dense(2, vec![z; 4]).unwrap();
        let db = AdmittanceMatrix::from_dense(2, vec![z, Complex64::new(0.0, -5.0), Complex64::new(0.0, -5.0), z]).unwrap();
        let dg = AdmittanceMatrix::from_dense(2, vec![z, Complex64::new(-5.0, 0.0), Complex64::new(-5.0, 0.0), z]).unwrap();
        let v = [1.0, 1.0];
        let th = [0.0, 0.0];
        assert_eq!(k_factor_between(&v, &th, &y, &y, 0), 0.0);
        assert_eq!(k_factor_between(&v, &th, &db, &y, 0), 0.0);
        assert_eq!(k_factor_between(&v, &th, &dg, &y, 0), -5.0);
    }

    #[test]
    fn k_factor_matches_term_by_term_sum() {
        let (case, eq) = three_bus();
        let mut spec = scenario(FaultType::BusLtg, Some(2), Some(3), 0.1);
        spec.fault_admittance.g = 0.7;
        for reference in [DeltaReference::PreFault, DeltaReference::PostFault] {
            spec.delta_reference = reference;
            let fs = FaultScenario::new(&case, &spec).unwrap();
            let yr = fs.reference_network();
            for i in 0..3 {
                let mut oracle = 0.0;
                for j in 0..3 {
                    let d = fs.y_fault.get(i, j) - yr.get(i, j);
                    let t = eq.theta[i] - eq.theta[j];
                    oracle += eq.v[i] * eq.v[j] * (d.im * t.sin() + d.re * t.cos());
                }
                assert!((k_factor(&eq, &fs, i) - oracle).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_trivial_cases() {
        let (case, eq) = three_bus();
        let fs = FaultScenario::new(&case, &ScenarioSpec::null(0.1)).unwrap();
        let sys = build_lure(&case, &eq, &fs.y_post).unwrap();
        let c = fault_cleared_closed(&eq, &fs, &sys).unwrap();
        assert!(c.x.iter().all(|v| v.abs() < 1e-12));
        let t = fault_cleared_taylor(&eq, &fs, &sys, 3).unwrap();
        assert!(t.x.iter().all(|v| v.abs() < 1e-12));

        let fs = FaultScenario::new(&case, &scenario(FaultType::BusLtg, None, Some(2), 0.1)).unwrap();
        let (_, sys) = post_system(&case, &fs, &eq);
        let c0 = fault_cleared_closed_at(&eq, &fs, &sys, 0.0).unwrap();
        assert_eq!(c0.delta[0], eq.theta[0]);
        assert_eq!(c0.omega[0], 1.0);
        assert!(matches!(fault_cleared_closed_at(&eq, &fs, &sys, 0.31), Err(Error::ClearingTime(_))));
        assert!(fault_cleared_taylor(&eq, &fs, &sys, 5).is_err());
        assert!(fault_cleared_taylor(&eq, &fs, &sys, 0).is_err());
    }

    #[test]
    fn first_order_speed_matches_closed_form_leading_term() {
        let (case, eq) = three_bus();
        let fs = FaultScenario::new(&case, &scenario(FaultType::BusLtg, None, Some(1), 0.1)).unwrap();
        let (_, sys) = post_system(&case, &fs, &eq);
        let k = -disturbance_term(&eq, &fs, 0);
        assert!(k.abs() > 0.1);
        let t1 = fault_cleared_taylor(&eq, &fs, &sys, 1).unwrap();
        assert!((t1.omega[0] - 1.0 - (-0.1 / 0.5 * k)).abs() < 1e-14);
        let series = fault_on_series(&fs, &eq.v, &eq.theta, 3);
        assert!((series.omega[0][1] - (-k / 0.5)).abs() < 1e-14);
    }

    #[test]
    fn third_order_series_tracks_simulation() {
        let (case, eq) = three_bus();
        let fs = FaultScenario::new(&case, &scenario(FaultType::BusLtg, Some(2), Some(3), 0.1)).unwrap();
        let (_, sys) = post_system(&case, &fs, &eq);
        let err = |tc: f64| {
            let (d, w) = simulate_to_clearing(&fs, &eq, tc, 1e-5);
            let t = fault_cleared_taylor_at(&eq, &fs, &sys, 3, tc).unwrap();
            let de = d.iter().zip(&t.delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let we = w.iter().zip(&t.omega).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            (de, we)
        };
        let (d1, _) = err(0.1);
        let (d2, _) = err(0.05);
        assert!(d1 <= 1e-3, "{d1}");
        let ratio = d1 / d2;
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn series_coefficients_satisfy_the_ode() {
        // the order-N polynomial matches the simulated derivative at t = 0
        let (case, eq) = three_bus();
        let fs = FaultScenario::new(&case, &scenario(FaultType::MidpointLtg, Some(0), None, 0.1)).unwrap();
        let s = fault_on_series(&fs, &eq.v, &eq.theta, 4);
        let setup = fs.transient_setup(&eq, None);
        let ph = setup.fault.as_ref().unwrap();
        let (dd, dw) = fs.model.rhs(&ph.y, &ph.v, &ph.p, &eq.theta, &[1.0]);
        for i in 0..3 {
            assert!((s.delta[i][1] - dd[i]).abs() < 1e-12);
        }
        assert!((s.omega[0][1] - dw[0]).abs() < 1e-12);
    }
}
