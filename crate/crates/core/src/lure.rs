//! Lur'e form `ẋ = Ax + Bφ(Cx)` of the network-preserving swing dynamics
//! around a post-fault equilibrium, with sector design.
//!
//! State layout: angles of every bus except the angle reference `r`, measured
//! relative to `r` and to the equilibrium (`x_i = (δ_i - δ_r) - (θ'_i - θ'_r)`,
//! generator buses first, then load buses), followed by the speed deviations
//! `ω_i - 1` of all generator-kind buses. With an infinite reference bus this
//! is exactly `[δ - θ'; ω - 1]` over the dynamic buses; otherwise the
//! rotational common mode, which no quadratic certificate can contract, is
//! factored out.
//!
//! Each network edge carries one nonlinearity
//! `φ_k(y) = κ_k (sin(y + θ'_ij + α_ij) - sin(θ'_ij + α_ij))`
//! with `y = δ_ij - θ'_ij`. A lossless edge is odd in its direction and
//! enters both end buses; a lossy edge is split into two directed entries,
//! one per end bus.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gridcase::{AdmittanceMatrix, BusKind, PowerCase};
use crate::linalg::{deserialize_matrix, serialize_matrix};
use crate::powerflow::SteadyState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    /// The output is `δ_from - δ_to` relative to equilibrium.
    pub from: usize,
    pub to: usize,
    /// Lossless edge entering both buses with opposite signs.
    pub two_sided: bool,
    /// `|Y'_ij|`.
    pub y_abs: f64,
    pub alpha: f64,
    /// `V'_from V'_to |Y'_ij|`.
    pub kappa: f64,
    /// Equilibrium angle difference `θ'_from - θ'_to`.
    pub theta: f64,
}

impl Nonlinearity {
    /// Phase offset `θ'_ij + α_ij`.
    pub fn offset(&self) -> f64 {
        self.theta + self.alpha
    }

    pub fn eval(&self, y: f64) -> f64 {
        let c = self.offset();
        self.kappa * ((y + c).sin() - c.sin())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolytopeKind {
    /// `-π - 2(θ' + α) <= y <= π - 2(θ' + α)`, the zeros of `φ`.
    #[default]
    Shifted,
    /// `-π <= y <= π`.
    Symmetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LureSystem {
    pub reference: usize,
    pub reference_is_infinite: bool,
    /// Bus of each angle state.
    pub angle_buses: Vec<usize>,
    /// Bus of each speed state.
    pub speed_buses: Vec<usize>,
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub a: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub b: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub c: DMatrix<f64>,
    pub nonlinearities: Vec<Nonlinearity>,
    /// Post-fault equilibrium voltages and angles over all buses.
    pub v_eq: Vec<f64>,
    pub theta_eq: Vec<f64>,
    pub polytope: PolytopeKind,
    /// Inertia and damping of each speed state, damping of each load state.
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
}

/// Damping of a dynamic bus: governor damping for generators, frequency
/// coefficient for loads.
pub fn bus_damping(case: &PowerCase, i: usize) -> f64 {
    match case.buses[i].kind {
        BusKind::Generator => case.generator_at(i).map_or(0.0, |g| g.damping),
        BusKind::Load => case.load_damping(i),
        BusKind::Infinite => 0.0,
    }
}

/// Builds the Lur'e system of the post-fault network `y_post` around
/// `post_eq`.
pub fn build_lure(case: &PowerCase, post_eq: &SteadyState, y_post: &AdmittanceMatrix) -> Result<LureSystem> {
    let n = case.n_bus();
    if post_eq.len() != n || y_post.dim() != n {
        return Err(Error::Dimension(format!(
            "case has {n} buses, equilibrium {} and admittance {}",
            post_eq.len(),
            y_post.dim()
        )));
    }
    let gens: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Generator).collect();
    if gens.is_empty() {
        return Err(Error::Dynamics("no generator bus carries swing dynamics".into()));
    }
    let r = case.slack();
    let reference_is_infinite = case.buses[r].kind == BusKind::Infinite;
    let loads: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Load).collect();
    let angle_buses: Vec<usize> = gens.iter().copied().filter(|&i| i != r).chain(loads.iter().copied()).collect();
    let speed_buses = gens.clone();
    let na = angle_buses.len();
    let dim = na + speed_buses.len();

    let mut angle_idx = vec![None; n];
    for (k, &i) in angle_buses.iter().enumerate() {
        angle_idx[i] = Some(k);
    }
    let mut speed_idx = vec![None; n];
    for (k, &i) in speed_buses.iter().enumerate() {
        speed_idx[i] = Some(na + k);
    }

    let mut inertia = Vec::new();
    let mut damping = Vec::new();
    for &i in &speed_buses {
        let g = case.generator_at(i).expect("generator bus has a generator");
        if !(g.inertia > 0.0 && g.damping > 0.0) {
            return Err(Error::Dynamics(format!("generator at bus {} has zero inertia or damping", case.buses[i].id)));
        }
        inertia.push(g.inertia);
        damping.push(g.damping);
    }
    for &i in &loads {
        let d = bus_damping(case, i);
        if !(d > 0.0) {
            return Err(Error::Dynamics(format!("load bus {} has zero damping", case.buses[i].id)));
        }
    }

    let mut nonlinearities = Vec::new();
    for (i, j) in y_post.edges() {
        let (g, bij) = (y_post.g(i, j), y_post.b(i, j));
        if !(bij > 0.0) {
            return Err(Error::Dynamics(format!(
                "edge {}-{} is not inductive; the sector design needs B_ij > 0",
                case.buses[i].id, case.buses[j].id
            )));
        }
        let y_abs = y_post.abs(i, j);
        let alpha = y_post.alpha(i, j);
        let mk = |from: usize, to: usize, two_sided: bool| Nonlinearity {
            from,
            to,
            two_sided,
            y_abs,
            alpha,
            kappa: post_eq.v[from] * post_eq.v[to] * y_abs,
            theta: post_eq.theta[from] - post_eq.theta[to],
        };
        if g == 0.0 {
            nonlinearities.push(mk(i, j, true));
        } else {
            nonlinearities.push(mk(i, j, false));
            nonlinearities.push(mk(j, i, false));
        }
    }
    let m = nonlinearities.len();

    let mut a = DMatrix::zeros(dim, dim);
    for &i in &gens {
        if let Some(row) = angle_idx[i] {
            a[(row, speed_idx[i].unwrap())] = 1.0;
        }
    }
    if !reference_is_infinite {
        let col = speed_idx[r].unwrap();
        for row in 0..na {
            a[(row, col)] -= 1.0;
        }
    }
    for (k, &i) in speed_buses.iter().enumerate() {
        let _ = i;
        a[(na + k, na + k)] = -damping[k] / inertia[k];
    }

    let mut b = DMatrix::zeros(dim, m);
    let mut c = DMatrix::zeros(m, dim);
    for (k, nl) in nonlinearities.iter().enumerate() {
        let mut touch = vec![(nl.from, -1.0)];
        if nl.two_sided {
            touch.push((nl.to, 1.0));
        }
        for (bus, sign) in touch {
            match case.buses[bus].kind {
                BusKind::Load => b[(angle_idx[bus].unwrap(), k)] += sign / bus_damping(case, bus),
                BusKind::Generator => {
                    let row = speed_idx[bus].unwrap();
                    b[(row, k)] += sign / inertia[row - na];
                }
                BusKind::Infinite => {}
            }
        }
        if let Some(col) = angle_idx[nl.from] {
            c[(k, col)] += 1.0;
        }
        if let Some(col) = angle_idx[nl.to] {
            c[(k, col)] -= 1.0;
        }
    }
    let mut load_damping: Vec<f64> = loads.iter().map(|&i| bus_damping(case, i)).collect();
    let mut all_damping = damping;
    all_damping.append(&mut load_damping);

    Ok(LureSystem {
        reference: r,
        reference_is_infinite,
        angle_buses,
        speed_buses,
        a,
        b,
        c,
        nonlinearities,
        v_eq: post_eq.v.clone(),
        theta_eq: post_eq.theta.clone(),
        polytope: PolytopeKind::Shifted,
        inertia,
        damping: all_damping,
    })
}

impl LureSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.nonlinearities.len()
    }

    pub fn n_angles(&self) -> usize {
        self.angle_buses.len()
    }

    /// Same structure around a different equilibrium.
    pub fn with_equilibrium(&self, eq: &SteadyState) -> LureSystem {
        let mut s = self.clone();
        for nl in s.nonlinearities.iter_mut() {
            nl.kappa = eq.v[nl.from] * eq.v[nl.to] * nl.y_abs;
            nl.theta = eq.theta[nl.from] - eq.theta[nl.to];
        }
        s.v_eq = eq.v.clone();
        s.theta_eq = eq.theta.clone();
        s
    }

    pub fn with_polytope(mut self, kind: PolytopeKind) -> LureSystem {
        self.polytope = kind;
        self
    }

    pub fn phi_eval(&self, k: usize, y: f64) -> f64 {
        self.nonlinearities[k].eval(y)
    }

    pub fn outputs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    pub fn phi(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().enumerate().map(|(k, &yk)| self.phi_eval(k, yk)))
    }

    /// `Ax + Bφ(Cx)`.
    pub fn field(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * self.phi(&self.outputs(x))
    }

    /// Per-output bounds `[y̲_k, ȳ_k]` of the trajectory polytope.
    pub fn polytope_bounds(&self) -> Vec<(f64, f64)> {
        self.nonlinearities
            .iter()
            .map(|nl| match self.polytope {
                PolytopeKind::Shifted => {
                    let c = nl.offset();
                    (-PI - 2.0 * c, PI - 2.0 * c)
                }
                PolytopeKind::Symmetric => (-PI, PI),
            })
            .collect()
    }

    pub fn in_polytope(&self, x: &DVector<f64>) -> bool {
        let y = self.outputs(x);
        self.polytope_bounds().iter().zip(y.iter()).all(|(&(lo, hi), &yk)| yk >= lo && yk <= hi)
    }

    /// Lur'e state from full bus angles and absolute generator speeds.
    pub fn state_from_full(&self, delta: &[f64], omega: &[f64]) -> DVector<f64> {
        let r = self.reference;
        let mut x = DVector::zeros(self.dim());
        for (k, &i) in self.angle_buses.iter().enumerate() {
            x[k] = (delta[i] - delta[r]) - (self.theta_eq[i] - self.theta_eq[r]);
        }
        let na = self.n_angles();
        for k in 0..self.speed_buses.len() {
            x[na + k] = omega[k] - 1.0;
        }
        x
    }

    /// Full bus angles and absolute speeds for a Lur'e state, with the
    /// reference bus at its equilibrium angle.
    pub fn full_from_state(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut delta = self.theta_eq.clone();
        for (k, &i) in self.angle_buses.iter().enumerate() {
            delta[i] += x[k];
        }
        let na = self.n_angles();
        let omega = (0..self.speed_buses.len()).map(|k| 1.0 + x[na + k]).collect();
        (delta, omega)
    }

    /// SHA-256 over the θ'-independent structure (A, B, C, edge list) and the
    /// sector slopes, hex encoded.
    pub fn structure_hash(&self, sectors: &SectorBounds) -> String {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        put(self.dim() as f64);
        put(self.n_outputs() as f64);
        for m in [&self.a, &self.b, &self.c] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    put(m[(i, j)]);
                }
            }
        }
        for nl in &self.nonlinearities {
            put(nl.from as f64);
            put(nl.to as f64);
            put(nl.y_abs);
            put(nl.alpha);
        }
        for (&g, &b) in sectors.gamma.iter().zip(&sectors.beta) {
            put(g);
            put(b);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub const DEFAULT_XI: f64 = 1e-3;

/// `β_k = V̄² |Y'_ij|`, `γ_k = ξ`: valid for every post-fault equilibrium
/// with voltages below `V̄`.
pub fn design_sectors(case: &PowerCase, sys: &LureSystem, xi: f64) -> Result<SectorBounds> {
    let vmax2 = case.limits.v_max * case.limits.v_max;
    let beta: Vec<f64> = sys.nonlinearities.iter().map(|nl| vmax2 * nl.y_abs).collect();
    if !(xi > 0.0) || beta.iter().any(|&b| xi >= b) {
        return Err(Error::Option(format!("ξ = {xi} must lie in (0, min β)")));
    }
    Ok(SectorBounds { gamma: vec![xi; beta.len()], beta })
}

/// Width of the band next to each polytope edge where the slope `φ(y)/y`
/// drops below `γ`.
pub fn sector_edge_band(nl: &Nonlinearity, gamma: f64, edge: f64) -> f64 {
    2.0 * gamma * edge.abs() / (nl.kappa * nl.offset().cos())
}
