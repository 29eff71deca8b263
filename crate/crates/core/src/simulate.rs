//! Fixed-step RK4 integration of the network-preserving swing equations
//! through fault-on and post-fault phases.
//!
//! ```text
//! δ̇_i = ω_i - 1                          generator buses
//! d_i δ̇_i = p_i - g_i^p(V, δ, Y)           load buses
//! m_i ω̇_i = p_i - g_i^p(V, δ, Y) - d_i (ω_i - 1)
//! ```
//!
//! `p_i` is the net specified injection of the active phase; infinite buses
//! keep their angle. Voltages are held at the phase's constant values.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::certify::{w_value, QuadraticCertificate};
use crate::error::{Error, Result};
use crate::gridcase::{AdmittanceMatrix, BusKind, PowerCase};
use crate::lure::{bus_damping, LureSystem};
use crate::powerflow::{p_injection, SteadyState};

/// Per-bus dynamic parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwingModel {
    pub kinds: Vec<BusKind>,
    /// Inertia (generator buses) or zero.
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    /// Generator-kind buses in index order; the speed vector follows it.
    pub speed_buses: Vec<usize>,
}

impl SwingModel {
    pub fn new(case: &PowerCase) -> Self {
        let n = case.n_bus();
        let kinds: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
        let inertia = (0..n)
            .map(|i| match kinds[i] {
                BusKind::Generator => case.generator_at(i).map_or(0.0, |g| g.inertia),
                _ => 0.0,
            })
            .collect();
        let damping = (0..n).map(|i| bus_damping(case, i)).collect();
        let speed_buses = (0..n).filter(|&i| kinds[i] == BusKind::Generator).collect();
        SwingModel { kinds, inertia, damping, speed_buses }
    }

    pub fn n_bus(&self) -> usize {
        self.kinds.len()
    }

    /// Time derivative of `(δ, ω)`.
    pub fn rhs(
        &self,
        y: &AdmittanceMatrix,
        v: &[f64],
        p_spec: &[f64],
        delta: &[f64],
        omega: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bus();
        let mut dd = vec![0.0; n];
        let mut dw = vec![0.0; self.speed_buses.len()];
        let mut g = 0;
        for i in 0..n {
            match self.kinds[i] {
                BusKind::Infinite => {}
                BusKind::Load => dd[i] = (p_spec[i] - p_injection(v, delta, y, i)) / self.damping[i],
                BusKind::Generator => {
                    let w = omega[g] - 1.0;
                    dd[i] = w;
                    dw[g] = (p_spec[i] - p_injection(v, delta, y, i) - self.damping[i] * w) / self.inertia[i];
                    g += 1;
                }
            }
        }
        (dd, dw)
    }
}

/// `rhs` of the swing equations for a case and network.
pub fn rhs(
    case: &PowerCase,
    y: &AdmittanceMatrix,
    v: &[f64],
    p_spec: &[f64],
    delta: &[f64],
    omega: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    SwingModel::new(case).rhs(y, v, p_spec, delta, omega)
}

/// Network, voltages and injections of one phase.
#[derive(Debug, Clone)]
pub struct Phase {
    pub y: AdmittanceMatrix,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl Phase {
    /// Phase whose injections make `eq` an equilibrium of `y`.
    pub fn around(y: AdmittanceMatrix, eq: &SteadyState) -> Phase {
        let p = (0..y.dim()).map(|i| p_injection(&eq.v, &eq.theta, &y, i)).collect();
        Phase { y, v: eq.v.clone(), p }
    }
}

#[derive(Debug, Clone)]
pub struct TransientSetup {
    pub model: SwingModel,
    /// Fault-on phase on `[0, t_clear)`; `None` starts directly post-fault.
    pub fault: Option<Phase>,
    pub post: Phase,
    pub t_clear: f64,
    pub delta0: Vec<f64>,
    pub omega0: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: f64,
    /// Pairwise angle separation treated as loss of synchronism.
    pub divergence: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { horizon: 20.0, step: 1e-3, divergence: 10.0 * std::f64::consts::PI }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub t_clear: f64,
    /// Set when the run stopped on the divergence threshold.
    pub diverged: bool,
    #[serde(default)]
    pub w: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the first sample at or after `t_clear`.
    pub fn clear_index(&self) -> usize {
        self.t.iter().position(|&t| t >= self.t_clear - 1e-12).unwrap_or(self.t.len())
    }
}

fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

fn rk4_step(model: &SwingModel, ph: &Phase, delta: &mut Vec<f64>, omega: &mut Vec<f64>, h: f64) {
    let f = |d: &[f64], w: &[f64]| model.rhs(&ph.y, &ph.v, &ph.p, d, w);
    let (k1d, k1w) = f(delta, omega);
    let (k2d, k2w) = f(&axpy(delta, 0.5 * h, &k1d), &axpy(omega, 0.5 * h, &k1w));
    let (k3d, k3w) = f(&axpy(delta, 0.5 * h, &k2d), &axpy(omega, 0.5 * h, &k2w));
    let (k4d, k4w) = f(&axpy(delta, h, &k3d), &axpy(omega, h, &k3w));
    for i in 0..delta.len() {
        delta[i] += h / 6.0 * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i]);
    }
    for i in 0..omega.len() {
        omega[i] += h / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
    }
}

fn max_separation(delta: &[f64]) -> f64 {
    let (lo, hi) = delta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    hi - lo
}

/// RK4 with step sizes adjusted per phase so that a step ends exactly on
/// `t_clear` and on the horizon.
pub fn integrate(setup: &TransientSetup, opts: SimOptions) -> Result<Trajectory> {
    if !(opts.step > 0.0) || !(opts.horizon > 0.0) {
        return Err(Error::Option("step and horizon must be positive".into()));
    }
    let t_clear = if setup.fault.is_some() { setup.t_clear } else { 0.0 };
    if opts.horizon < t_clear {
        return Err(Error::Option("horizon ends before the fault clears".into()));
    }
    let mut delta = setup.delta0.clone();
    let mut omega = setup.omega0.clone();
    let mut traj = Trajectory {
        t: vec![0.0],
        delta: vec![delta.clone()],
        omega: vec![omega.clone()],
        t_clear,
        diverged: false,
        w: None,
    };
    let mut t0 = 0.0;
    let mut phases: Vec<(&Phase, f64)> = Vec::new();
    if let Some(f) = &setup.fault {
        if t_clear > 0.0 {
            phases.push((f, t_clear));
        }
    }
    phases.push((&setup.post, opts.horizon));
    for (ph, t_end) in phases {
        let span = t_end - t0;
        if span <= 0.0 {
            continue;
        }
        let steps = (span / opts.step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for k in 1..=steps {
            rk4_step(&setup.model, ph, &mut delta, &mut omega, h);
            let t = if k == steps { t_end } else { t0 + k as f64 * h };
            traj.t.push(t);
            traj.delta.push(delta.clone());
            traj.omega.push(omega.clone());
            if max_separation(&delta) > opts.divergence || delta.iter().any(|d| !d.is_finite()) {
                traj.diverged = true;
                return Ok(traj);
            }
        }
        t0 = t_end;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

/// Stability verdict of a post-fault trajectory.
///
/// Stable: stays in the polytope after clearing, ends with
/// `‖x‖∞ < quiescence` over the final `window` seconds, and the second half
/// of the window is no larger than the first. Unstable: leaves the polytope
/// or diverges. Without a post-fault equilibrium only divergence is judged.
pub fn assess_stability(traj: &Trajectory, sys: Option<&LureSystem>, window: f64) -> Verdict {
    assess_stability_with(traj, sys, window, 1e-2)
}

pub fn assess_stability_with(traj: &Trajectory, sys: Option<&LureSystem>, window: f64, quiescence: f64) -> Verdict {
    if traj.diverged {
        return Verdict::Unstable;
    }
    let Some(sys) = sys else {
        return Verdict::Inconclusive;
    };
    let start = traj.clear_index();
    let t_end = *traj.t.last().unwrap_or(&0.0);
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    let mut covered = false;
    for k in start..traj.len() {
        let x = sys.state_from_full(&traj.delta[k], &traj.omega[k]);
        if !sys.in_polytope(&x) {
            return Verdict::Unstable;
        }
        let t = traj.t[k];
        if t >= t_end - window {
            covered = true;
            let norm = x.amax();
            if t < t_end - 0.5 * window {
                first = first.max(norm);
            } else {
                second = second.max(norm);
            }
        }
    }
    if covered && first.max(second) < quiescence && second <= first {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    }
}

/// Equilibrium-free form of the polytope: `|δ_i - δ_j + α_ij| ≤ π` over the
/// directed edges of a network.
#[derive(Debug, Clone)]
pub struct AnglePolytope {
    pub edges: Vec<(usize, usize, f64)>,
}

impl AnglePolytope {
    pub fn from_network(y: &AdmittanceMatrix) -> Self {
        let mut edges = Vec::new();
        for (i, j) in y.edges() {
            let alpha = y.alpha(i, j);
            edges.push((i, j, alpha));
            if alpha != 0.0 {
                edges.push((j, i, alpha));
            }
        }
        AnglePolytope { edges }
    }

    pub fn contains(&self, delta: &[f64]) -> bool {
        self.edges.iter().all(|&(i, j, a)| (delta[i] - delta[j] + a).abs() <= std::f64::consts::PI)
    }
}

/// Verdict when the post-fault network has no equilibrium to converge to:
/// Unstable once the trajectory slips out of the polytope or diverges.
pub fn assess_without_equilibrium(traj: &Trajectory, polytope: &AnglePolytope) -> Verdict {
    if traj.diverged || (traj.clear_index()..traj.len()).any(|k| !polytope.contains(&traj.delta[k])) {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WAlong {
    pub w: Vec<f64>,
    /// Sample indices (post-clearing, inside the polytope) where `W` rose by
    /// more than the tolerance, with the increase.
    pub increases: Vec<(usize, f64)>,
    pub left_polytope: bool,
}

/// Lyapunov values along a trajectory, flagging increases above `tol`.
pub fn w_along(traj: &mut Trajectory, cert: &QuadraticCertificate, sys: &LureSystem, tol: f64) -> WAlong {
    let start = traj.clear_index();
    let mut out = WAlong { w: Vec::with_capacity(traj.len()), increases: Vec::new(), left_polytope: false };
    let mut prev: Option<f64> = None;
    for k in 0..traj.len() {
        let x = sys.state_from_full(&traj.delta[k], &traj.omega[k]);
        let w = w_value(cert, &x);
        out.w.push(w);
        if k < start {
            continue;
        }
        if !sys.in_polytope(&x) {
            out.left_polytope = true;
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            if w > p + tol {
                out.increases.push((k, w - p));
            }
        }
        prev = Some(w);
    }
    traj.w = Some(out.w.clone());
    out
}

/// Lur'e state along the trajectory.
pub fn lure_states(traj: &Trajectory, sys: &LureSystem) -> Vec<DVector<f64>> {
    (0..traj.len()).map(|k| sys.state_from_full(&traj.delta[k], &traj.omega[k])).collect()
}

/// CSV with columns `t, delta_<id>..., omega_<id>..., [W]`.
pub fn trajectory_csv(traj: &Trajectory, case: &PowerCase, model: &SwingModel) -> String {
    let mut s = String::from("t");
    for b in &case.buses {
        let _ = write!(s, ",delta_{}", b.id);
    }
    for &i in &model.speed_buses {
        let _ = write!(s, ",omega_{}", case.buses[i].id);
    }
    if traj.w.is_some() {
        s.push_str(",W");
    }
    s.push('\n');
    for k in 0..traj.len() {
        let _ = write!(s, "{:.6}", traj.t[k]);
        for d in &traj.delta[k] {
            let _ = write!(s, ",{d:.9}");
        }
        for w in &traj.omega[k] {
            let _ = write!(s, ",{w:.9}");
        }
        if let Some(w) = &traj.w {
            let _ = write!(s, ",{:.9e}", w[k]);
        }
        s.push('\n');
    }
    s
}

/// Static SVG of bus angles relative to `reference` over time.
pub fn angle_plot_svg(traj: &Trajectory, case: &PowerCase, reference: usize, title: &str) -> String {
    const W: f64 = 800.0;
    const H: f64 = 480.0;
    const M: f64 = 56.0;
    const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
    let n = case.n_bus();
    let stride = (traj.len() / 2000).max(1);
    let rel = |k: usize, i: usize| traj.delta[k][i] - traj.delta[k][reference];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..traj.len() {
        for i in 0..n {
            lo = lo.min(rel(k, i));
            hi = hi.max(rel(k, i));
        }
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let t_end = traj.t.last().copied().unwrap_or(1.0).max(1e-9);
    let px = |t: f64| M + (W - 2.0 * M) * t / t_end;
    let py = |v: f64| H - M - (H - 2.0 * M) * (v - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        title,
        H - M,
        W - M,
        H - M,
        H - M
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">t (s), 0 to {t_end:.2}</text>",
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">angle (rad), {lo:.2} to {hi:.2}</text>",
        H / 2.0,
        H / 2.0
    );
    let tc = px(traj.t_clear);
    let _ = writeln!(s, "<line x1=\"{tc:.1}\" y1=\"{M}\" x2=\"{tc:.1}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>", H - M);
    for i in 0..n {
        if i == reference {
            continue;
        }
        let mut pts = String::new();
        for k in (0..traj.len()).step_by(stride) {
            let _ = write!(pts, "{:.1},{:.1} ", px(traj.t[k]), py(rel(k, i)));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"><title>bus {}</title></polyline>",
            COLORS[i % COLORS.len()],
            pts.trim_end(),
            case.buses[i].id
        );
    }
    s.push_str("</svg>\n");
    s
}
