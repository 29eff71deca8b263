//! Steady-state AC power flow: injections, residuals, Jacobian and a damped
//! Newton solver.
//!
//! Generator and infinite buses are PV (voltage held at the generator's
//! `v_set`), load buses are PQ. The slack bus fixes the angle reference and
//! absorbs the active mismatch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::gridcase::{AdmittanceMatrix, PowerCase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SteadyState {
    pub fn flat(n: usize) -> Self {
        SteadyState { v: vec![1.0; n], theta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Net specified injections per bus (`p^G - p^L`, `q^G - q^L`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections { p: vec![0.0; n], q: vec![0.0; n] }
    }

    /// Injections from a generator dispatch and the case's loads.
    pub fn from_dispatch(case: &PowerCase, p_gen: &[f64], q_gen: &[f64]) -> Self {
        let (p, q) = case.net_injections(p_gen, q_gen);
        Injections { p, q }
    }
}

/// `g_i^p = V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)`, generic over the
/// scalar type.
pub fn p_injection<T: Real>(v: &[T], theta: &[T], y: &AdmittanceMatrix, i: usize) -> T {
    let mut acc = v[i].clone() * y.g(i, i);
    for &j in y.neighbors(i) {
        let (s, c) = (theta[i].clone() - theta[j].clone()).sin_cos();
        acc = acc + v[j].clone() * (c * y.g(i, j) + s * y.b(i, j));
    }
    acc * v[i].clone()
}

/// `g_i^q = V_i Σ_j V_j (G_ij sin θ_ij - B_ij cos θ_ij)`.
pub fn q_injection<T: Real>(v: &[T], theta: &[T], y: &AdmittanceMatrix, i: usize) -> T {
    let mut acc = v[i].clone() * (-y.b(i, i));
    for &j in y.neighbors(i) {
        let (s, c) = (theta[i].clone() - theta[j].clone()).sin_cos();
        acc = acc + v[j].clone() * (s * y.g(i, j) - c * y.b(i, j));
    }
    acc * v[i].clone()
}

pub fn injection_p(state: &SteadyState, y: &AdmittanceMatrix, i: usize) -> f64 {
    p_injection(&state.v, &state.theta, y, i)
}

pub fn injection_q(state: &SteadyState, y: &AdmittanceMatrix, i: usize) -> f64 {
    q_injection(&state.v, &state.theta, y, i)
}

/// Same quantity as [`injection_p`] via `V_i Σ_j V_j |Y_ij| sin(θ_ij + α_ij)`.
///
/// With `α = arctan(G/B)` the identity needs `B_ij > 0`; for the remaining
/// sign the magnitude is negated.
pub fn injection_p_polar(state: &SteadyState, y: &AdmittanceMatrix, i: usize) -> f64 {
    let n = y.dim();
    let mut acc = 0.0;
    for j in 0..n {
        let yij = y.get(i, j);
        if yij.norm() == 0.0 {
            continue;
        }
        let th = state.theta[i] - state.theta[j];
        let term = if yij.im == 0.0 {
            yij.re * th.cos()
        } else {
            yij.norm() * yij.im.signum() * (th + (yij.re / yij.im).atan()).sin()
        };
        acc += state.v[j] * term;
    }
    state.v[i] * acc
}

/// Apparent-power proxy `|Y_ij|² V_i² V_j²` of the edge between `i` and `j`.
pub fn line_flow_sq(state: &SteadyState, y: &AdmittanceMatrix, i: usize, j: usize) -> f64 {
    let m = y.abs(i, j);
    m * m * state.v[i] * state.v[i] * state.v[j] * state.v[j]
}

/// Unknown layout of the Newton system: angles of non-slack buses followed by
/// magnitudes of PQ buses.
#[derive(Debug, Clone)]
pub struct PfLayout {
    pub angle_buses: Vec<usize>,
    pub pq_buses: Vec<usize>,
}

impl PfLayout {
    pub fn new(case: &PowerCase) -> Self {
        let slack = case.slack();
        PfLayout {
            angle_buses: (0..case.n_bus()).filter(|&i| i != slack).collect(),
            pq_buses: (0..case.n_bus()).filter(|&i| !case.is_pv(i)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.angle_buses.len() + self.pq_buses.len()
    }
}

/// Mismatch `specified - computed`: active rows for all non-slack buses,
/// reactive rows for load buses.
pub fn pf_residual(
    state: &SteadyState,
    case: &PowerCase,
    y: &AdmittanceMatrix,
    inj: &Injections,
) -> Vec<f64> {
    let layout = PfLayout::new(case);
    let mut r = Vec::with_capacity(layout.dim());
    for &i in &layout.angle_buses {
        r.push(inj.p[i] - injection_p(state, y, i));
    }
    for &i in &layout.pq_buses {
        r.push(inj.q[i] - injection_q(state, y, i));
    }
    r
}

/// Jacobian of [`pf_residual`] with respect to `(θ_angle_buses, V_pq_buses)`.
pub fn pf_jacobian(state: &SteadyState, case: &PowerCase, y: &AdmittanceMatrix) -> DMatrix<f64> {
    let layout = PfLayout::new(case);
    let n = case.n_bus();
    // full dP/dθ, dP/dV, dQ/dθ, dQ/dV
    let mut dp_dth = DMatrix::zeros(n, n);
    let mut dp_dv = DMatrix::zeros(n, n);
    let mut dq_dth = DMatrix::zeros(n, n);
    let mut dq_dv = DMatrix::zeros(n, n);
    let (v, th) = (&state.v, &state.theta);
    for i in 0..n {
        let mut p_off = 0.0;
        let mut q_off = 0.0;
        for &j in y.neighbors(i) {
            let (s, c) = (th[i] - th[j]).sin_cos();
            let (g, b) = (y.g(i, j), y.b(i, j));
            let a = g * c + b * s;
            let bb = g * s - b * c;
            dp_dth[(i, j)] = v[i] * v[j] * bb;
            dq_dth[(i, j)] = -v[i] * v[j] * a;
            dp_dv[(i, j)] = v[i] * a;
            dq_dv[(i, j)] = v[i] * bb;
            p_off += v[j] * a;
            q_off += v[j] * bb;
        }
        dp_dth[(i, i)] = -v[i] * q_off;
        dq_dth[(i, i)] = v[i] * p_off;
        dp_dv[(i, i)] = p_off + 2.0 * v[i] * y.g(i, i);
        dq_dv[(i, i)] = q_off - 2.0 * v[i] * y.b(i, i);
    }
    let na = layout.angle_buses.len();
    let mut jac = DMatrix::zeros(layout.dim(), layout.dim());
    let rows: Vec<(usize, bool)> = layout
        .angle_buses
        .iter()
        .map(|&i| (i, true))
        .chain(layout.pq_buses.iter().map(|&i| (i, false)))
        .collect();
    for (r, &(i, is_p)) in rows.iter().enumerate() {
        for (c, &k) in layout.angle_buses.iter().enumerate() {
            jac[(r, c)] = -if is_p { dp_dth[(i, k)] } else { dq_dth[(i, k)] };
        }
        for (c, &k) in layout.pq_buses.iter().enumerate() {
            jac[(r, na + c)] = -if is_p { dp_dv[(i, k)] } else { dq_dv[(i, k)] };
        }
    }
    jac
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions { tol: 1e-8, max_iter: 50, max_halvings: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct PfReport {
    pub state: SteadyState,
    pub iterations: usize,
    pub max_residual: f64,
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Flat start: `θ = 0`, PQ magnitudes 1, PV magnitudes at the setpoint.
pub fn flat_start(case: &PowerCase) -> SteadyState {
    let mut s = SteadyState::flat(case.n_bus());
    for i in 0..case.n_bus() {
        if let Some(g) = case.generator_at(i) {
            s.v[i] = g.v_set;
        }
    }
    s
}

pub fn solve_pf(case: &PowerCase, inj: &Injections, y: &AdmittanceMatrix) -> Result<SteadyState> {
    Ok(solve_pf_from(case, inj, y, flat_start(case), PfOptions::default())?.state)
}

/// Damped Newton iteration from a given start.
pub fn solve_pf_from(
    case: &PowerCase,
    inj: &Injections,
    y: &AdmittanceMatrix,
    start: SteadyState,
    opts: PfOptions,
) -> Result<PfReport> {
    let n = case.n_bus();
    if inj.p.len() != n || inj.q.len() != n || start.len() != n || y.dim() != n {
        return Err(Error::Dimension("injection/state/admittance sizes differ from bus count".into()));
    }
    let layout = PfLayout::new(case);
    let na = layout.angle_buses.len();
    let mut state = start;
    let mut r = pf_residual(&state, case, y, inj);
    let mut norm = max_abs(&r);
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence { iterations, residual: norm });
        }
        iterations += 1;
        let jac = pf_jacobian(&state, case, y);
        let step = jac
            .lu()
            .solve(&(-DVector::from_vec(r.clone())))
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(Error::SingularJacobian)?;
        let mut t = 1.0;
        let mut halvings = 0;
        loop {
            let mut trial = state.clone();
            for (c, &k) in layout.angle_buses.iter().enumerate() {
                trial.theta[k] += t * step[c];
            }
            for (c, &k) in layout.pq_buses.iter().enumerate() {
                trial.v[k] += t * step[na + c];
            }
            let rt = pf_residual(&trial, case, y, inj);
            let nt = max_abs(&rt);
            if nt < norm || halvings == opts.max_halvings {
                state = trial;
                r = rt;
                norm = nt;
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
    }
    Ok(PfReport { state, iterations, max_residual: norm })
}

/// Generator outputs implied by a solved state: every generator's `p`
/// (slack computed, others as dispatched) and `q` from the reactive balance.
pub fn generator_outputs(
    case: &PowerCase,
    state: &SteadyState,
    y: &AdmittanceMatrix,
) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::with_capacity(case.generators.len());
    let mut q = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let i = g.bus;
        p.push(injection_p(state, y, i) + case.load_p(i));
        q.push(injection_q(state, y, i) + case.load_q(i));
    }
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridcase::{build_admittance, NetworkVariant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus_case(b: f64) -> PowerCase {
        let text = format!(
            r#"{{
            "buses": [{{"id": 1, "kind": "infinite"}}, {{"id": 2, "kind": "load", "damping": 1}}],
            "branches": [{{"from": 1, "to": 2, "g": 0.0, "b": {b}}}],
            "generators": [{{"bus": 1, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 0, "cost_linear": 1}}],
            "loads": [{{"bus": 2, "p": 0.5, "q": 0.0}}],
            "limits": {{"v_min": 0.9, "v_max": 1.1, "angle_diff_min": -1, "angle_diff_max": 1}}
        }}"#
        );
        PowerCase::from_json_str(&text).unwrap()
    }

    fn three_bus() -> PowerCase {
        PowerCase::from_json_str(
            r#"{
            "buses": [{"id": 1, "kind": "generator"}, {"id": 2, "kind": "load"}, {"id": 3, "kind": "load"}],
            "branches": [
                {"from": 1, "to": 2, "g": 0.99, "b": -9.9},
                {"from": 2, "to": 3, "g": 0.5, "b": -4.8},
                {"from": 1, "to": 3, "g": 0.4, "b": -6.0}
            ],
            "generators": [{"bus": 1, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 1, "cost_linear": 1, "inertia": 1, "damping": 1}],
            "loads": [{"bus": 2, "p": 0.8, "q": 0.2, "damping": 1}, {"bus": 3, "p": 0.5, "q": 0.1, "damping": 1}],
            "limits": {"v_min": 0.9, "v_max": 1.1, "angle_diff_min": -1, "angle_diff_max": 1}
        }"#,
        )
        .unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> SteadyState {
        SteadyState {
            v: (0..n).map(|_| rng.gen_range(0.9..1.1)).collect(),
            theta: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        }
    }

    #[test]
    fn single_line_flow_closed_form() {
        let case = two_bus_case(-10.0);
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let flat = SteadyState::flat(2);
        assert!(injection_p(&flat, &y, 0).abs() < 1e-15);
        let s = SteadyState { v: vec![1.0, 1.0], theta: vec![0.05f64.asin(), 0.0] };
        assert!((injection_p(&s, &y, 0) - 0.5).abs() < 1e-12);
        assert!((injection_p_polar(&s, &y, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reactive_two_bus_hand_value() {
        let case = two_bus_case(-10.0);
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let s = SteadyState { v: vec![1.05, 0.95], theta: vec![0.0, 0.0] };
        // q_1 = V1 (V1 (-B11) + V2 (-B12)) = 1.05 (1.05*10 - 0.95*10)
        assert!((injection_q(&s, &y, 0) - 1.05).abs() < 1e-12);
        assert_eq!(injection_q(&s, &AdmittanceMatrix::zeros(2), 0), 0.0);
    }

    #[test]
    fn injections_match_term_by_term_sum() {
        let case = three_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_state(&mut rng, 3);
            for i in 0..3 {
                let mut p = 0.0;
                let mut q = 0.0;
                for j in 0..3 {
                    let yij = y.get(i, j);
                    let t = s.theta[i] - s.theta[j];
                    p += s.v[i] * s.v[j] * (yij.re * t.cos() + yij.im * t.sin());
                    q += s.v[i] * s.v[j] * (yij.re * t.sin() - yij.im * t.cos());
                }
                assert!((injection_p(&s, &y, i) - p).abs() < 1e-12);
                assert!((injection_q(&s, &y, i) - q).abs() < 1e-12);
                assert!((injection_p_polar(&s, &y, i) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let case = three_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let inj = Injections::zeros(3);
        let layout = PfLayout::new(&case);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = random_state(&mut rng, 3);
            let jac = pf_jacobian(&s, &case, &y);
            let h = 1e-6;
            for (c, (k, is_th)) in layout
                .angle_buses
                .iter()
                .map(|&k| (k, true))
                .chain(layout.pq_buses.iter().map(|&k| (k, false)))
                .enumerate()
            {
                let mut a = s.clone();
                let mut b = s.clone();
                if is_th {
                    a.theta[k] += h;
                    b.theta[k] -= h;
                } else {
                    a.v[k] += h;
                    b.v[k] -= h;
                }
                let ra = pf_residual(&a, &case, &y, &inj);
                let rb = pf_residual(&b, &case, &y, &inj);
                for r in 0..layout.dim() {
                    let fd = (ra[r] - rb[r]) / (2.0 * h);
                    let scale = jac[(r, c)].abs().max(1.0);
                    assert!((fd - jac[(r, c)]).abs() / scale < 1e-6);
                }
            }
        }
    }

    #[test]
    fn zero_injections_converge_immediately() {
        let case = three_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let nolosses = AdmittanceMatrix::zeros(3);
        let r = solve_pf_from(&case, &Injections::zeros(3), &nolosses, flat_start(&case), PfOptions::default())
            .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.state, SteadyState::flat(3));
        // with a lossy network but no shunts the flat state also balances
        let r = solve_pf_from(&case, &Injections::zeros(3), &y, flat_start(&case), PfOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn two_bus_angle_closed_form() {
        let case = two_bus_case(-10.0);
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let mut inj = Injections::zeros(2);
        inj.p[1] = -0.5;
        // V2 = 1 requires the line charging term 10 (1 - cos θ) at bus 2
        let th = 0.05f64.asin();
        inj.q[1] = 10.0 - 10.0 * th.cos();
        let s = solve_pf(&case, &inj, &y).unwrap();
        assert!((s.theta[0] - s.theta[1] - th).abs() < 1e-9);
        assert!((s.v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_bus_matches_reduced_bisection_solve() {
        // lossless variant: PQ bus voltages pinned by choosing q so that a
        // two-unknown angle problem remains, solved by nested bisection
        let text = r#"{
            "buses": [{"id": 1, "kind": "generator"}, {"id": 2, "kind": "generator"}, {"id": 3, "kind": "generator"}],
            "branches": [
                {"from": 1, "to": 2, "g": 0.0, "b": -10.0},
                {"from": 2, "to": 3, "g": 0.0, "b": -5.0},
                {"from": 1, "to": 3, "g": 0.0, "b": -8.0}
            ],
            "generators": [
                {"bus": 1, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 1, "cost_linear": 1, "inertia": 1, "damping": 1},
                {"bus": 2, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 1, "cost_linear": 1, "inertia": 1, "damping": 1},
                {"bus": 3, "p_min": 0, "p_max": 5, "q_min": -5, "q_max": 5, "cost_quadratic": 1, "cost_linear": 1, "inertia": 1, "damping": 1}
            ],
            "limits": {"v_min": 0.9, "v_max": 1.1, "angle_diff_min": -1, "angle_diff_max": 1}
        }"#;
        let case = PowerCase::from_json_str(text).unwrap();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let mut inj = Injections::zeros(3);
        inj.p[1] = 0.6;
        inj.p[2] = -1.1;
        let s = solve_pf(&case, &inj, &y).unwrap();
        // P2(t2,t3) = 10 sin t2 + 5 sin(t2-t3), P3 = 8 sin t3 + 5 sin(t3-t2)
        let p2 = |a: f64, b: f64| 10.0 * a.sin() + 5.0 * (a - b).sin();
        let p3 = |a: f64, b: f64| 8.0 * b.sin() + 5.0 * (b - a).sin();
        let bisect = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        // for fixed t3, P2 is increasing in t2 on the relevant range
        let t2_of = |b: f64| bisect(&|a| p2(a, b) - 0.6, -1.0, 1.0);
        let t3 = bisect(&|b| p3(t2_of(b), b) + 1.1, -1.0, 1.0);
        let t2 = t2_of(t3);
        assert!((s.theta[1] - t2).abs() < 1e-8);
        assert!((s.theta[2] - t3).abs() < 1e-8);
        let r = pf_residual(&s, &case, &y, &inj);
        assert!(max_abs(&r) < 1e-8);
    }

    #[test]
    fn lossy_three_bus_solution_is_a_fixed_point() {
        let case = three_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let inj = Injections::from_dispatch(&case, &[0.0], &[0.0]);
        let s = solve_pf(&case, &inj, &y).unwrap();
        assert!(max_abs(&pf_residual(&s, &case, &y, &inj)) < 1e-8);
        let again = solve_pf_from(&case, &inj, &y, s, PfOptions::default()).unwrap();
        assert!(again.iterations <= 1);
        let (p, _) = generator_outputs(&case, &again.state, &y);
        // slack covers load plus (positive) losses
        assert!(p[0] > 1.3);
    }

    #[test]
    fn lossless_injections_sum_to_zero() {
        let case = two_bus_case(-7.0);
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = random_state(&mut rng, 2);
            let total: f64 = (0..2).map(|i| injection_p(&s, &y, i)).sum();
            assert!(total.abs() < 1e-10);
        }
    }

    #[test]
    fn line_flow_uses_admittance_magnitude() {
        let case = three_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let s = SteadyState { v: vec![1.0, 1.1, 0.9], theta: vec![0.0; 3] };
        let expect = (0.99f64.powi(2) + 9.9f64.powi(2)) * 1.21;
        assert!((line_flow_sq(&s, &y, 0, 1) - expect).abs() < 1e-12);
    }
}
