//! Bounds on the invariant level as a function of the output center `X`.
//!
//! With `λ = 1/(C_iᵀP⁻¹C_i)` the exact level of one output row is
//! `ψ(X) = λ min{(X - Δl)², (X + Δl)²}`, concave-constrained. Its convex
//! hull over `[X̲, X̄]` is cut out by the two chords through `(0, λΔl²)`
//! and the endpoint values; the inner variant uses the tangents at the
//! interval midpoints `X̄/2`, `X̲/2` instead.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::certify::QuadraticCertificate;
use crate::error::{Error, Result};
use crate::lure::LureSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullParams {
    pub x_lo: f64,
    pub x_hi: f64,
    pub delta_l: f64,
    pub lambda: f64,
}

/// `W ≤ slope·X + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBound {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearBound {
    pub fn eval<T: Real>(&self, x: T) -> T {
        x * self.slope + self.intercept
    }
}

impl HullParams {
    pub fn new(x_lo: f64, x_hi: f64, delta_l: f64, lambda: f64) -> Result<Self> {
        let p = HullParams { x_lo, x_hi, delta_l, lambda };
        if !(-2.0 * delta_l <= x_lo && x_lo <= 0.0 && 0.0 <= x_hi && x_hi <= 2.0 * delta_l && lambda > 0.0) {
            return Err(Error::Option(format!("hull parameters outside their domain: {p:?}")));
        }
        Ok(p)
    }

    /// Clamps `[lo, hi]` into `[-2Δl, 2Δl]` and widens it to contain 0.
    /// Returns the parameters and whether clamping changed the interval.
    pub fn clamped(lo: f64, hi: f64, delta_l: f64, lambda: f64) -> (Self, bool) {
        let x_lo = lo.clamp(-2.0 * delta_l, 0.0);
        let x_hi = hi.clamp(0.0, 2.0 * delta_l);
        let changed = x_lo != lo.min(0.0) || x_hi != hi.max(0.0);
        (HullParams { x_lo, x_hi, delta_l, lambda }, changed)
    }

    /// Exact bound `ψ(X)`.
    pub fn psi<T: Real>(&self, x: T) -> [T; 2] {
        [(x.clone() - self.delta_l).square() * self.lambda, (x + self.delta_l).square() * self.lambda]
    }

    pub fn psi_value(&self, x: f64) -> f64 {
        let [a, b] = self.psi(x);
        a.min(b)
    }
}

/// The two chords of the convex hull.
pub fn hull_constraints(p: &HullParams) -> [LinearBound; 2] {
    let dl2 = p.delta_l * p.delta_l;
    [
        LinearBound { slope: p.lambda * (p.x_hi - 2.0 * p.delta_l), intercept: p.lambda * dl2 },
        LinearBound { slope: p.lambda * (p.x_lo + 2.0 * p.delta_l), intercept: p.lambda * dl2 },
    ]
}

/// Tangents of the two parabolas at `X̄/2` and `X̲/2`.
pub fn inner_constraints(p: &HullParams) -> [LinearBound; 2] {
    let [a, b] = hull_constraints(p);
    [
        LinearBound { slope: a.slope, intercept: a.intercept - p.lambda * p.x_hi * p.x_hi / 4.0 },
        LinearBound { slope: b.slope, intercept: b.intercept - p.lambda * p.x_lo * p.x_lo / 4.0 },
    ]
}

/// Grid form of the hull bound for one output row:
/// `W ≤ λπ(π + 2(θ'_ij + α_ij))` and `W ≤ λπ(π - 2(θ'_ij + α_ij))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHullRow {
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub lambda: f64,
}

impl GridHullRow {
    pub fn bounds<T: Real>(&self, theta_from: T, theta_to: T) -> [T; 2] {
        let c = theta_from - theta_to + self.alpha;
        [(c.clone() * 2.0 + PI) * (PI * self.lambda), (-c * 2.0 + PI) * (PI * self.lambda)]
    }
}

/// `λ_i = 1/(C_iᵀP⁻¹C_i)` for every output row.
pub fn row_lambdas(cert: &QuadraticCertificate, sys: &LureSystem) -> Result<Vec<f64>> {
    let pinv = cert.p.clone().cholesky().ok_or_else(|| Error::Option("P is not positive definite".into()))?.inverse();
    Ok((0..sys.c.nrows())
        .map(|i| {
            let ci = sys.c.row(i).transpose();
            1.0 / ci.dot(&(&pinv * &ci))
        })
        .collect())
}

pub fn grid_hull_constraints(cert: &QuadraticCertificate, sys: &LureSystem) -> Result<Vec<GridHullRow>> {
    let lambdas = row_lambdas(cert, sys)?;
    Ok(sys
        .nonlinearities
        .iter()
        .zip(lambdas)
        .map(|(nl, lambda)| GridHullRow { from: nl.from, to: nl.to, alpha: nl.alpha, lambda })
        .collect())
}

/// A point of the hull boundary written as `c·a + (1-c)·b` with `a, b ∈ ψ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexCombination {
    pub edge: usize,
    pub point: [f64; 2],
    pub anchors: [[f64; 2]; 2],
    pub coefficient: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub samples: usize,
    /// ψ-feasible samples outside the hull.
    pub hull_violations: usize,
    /// Inner-feasible samples outside ψ.
    pub inner_violations: usize,
    pub vertices: Vec<[f64; 2]>,
    pub combinations: Vec<VertexCombination>,
    /// Largest distance of a coefficient outside `[0, 1]`.
    pub worst_coefficient_excess: f64,
    pub worst_residual: f64,
}

impl Theorem2Report {
    pub fn passed(&self, tol: f64) -> bool {
        self.hull_violations == 0
            && self.inner_violations == 0
            && self.worst_coefficient_excess <= tol
            && self.worst_residual <= tol
    }
}

fn intersect(a: LinearBound, b: LinearBound) -> Option<[f64; 2]> {
    let ds = a.slope - b.slope;
    if ds.abs() < 1e-300 {
        return None;
    }
    let x = (b.intercept - a.intercept) / ds;
    Some([x, a.eval(x)])
}

/// Coefficient `c` with `p ≈ c·a + (1-c)·b` and the reconstruction error.
fn combination(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let d = [a[0] - b[0], a[1] - b[1]];
    let nn = d[0] * d[0] + d[1] * d[1];
    let c = if nn == 0.0 { 1.0 } else { ((p[0] - b[0]) * d[0] + (p[1] - b[1]) * d[1]) / nn };
    let r = [c * a[0] + (1.0 - c) * b[0] - p[0], c * a[1] + (1.0 - c) * b[1] - p[1]];
    (c, r[0].hypot(r[1]))
}

/// Sampled containment checks and the edge-by-edge convex-combination
/// construction of the hull from points of ψ.
pub fn verify_theorem2(p: &HullParams, n_samples: usize, seed: u64) -> Theorem2Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hull = hull_constraints(p);
    let inner = inner_constraints(p);
    let tol = 1e-12 * (1.0 + p.lambda * p.delta_l * p.delta_l);
    let mut hull_violations = 0;
    let mut inner_violations = 0;
    for _ in 0..n_samples {
        let x = if p.x_hi > p.x_lo { rng.gen_range(p.x_lo..=p.x_hi) } else { p.x_lo };
        let w = rng.gen::<f64>() * p.psi_value(x);
        if hull.iter().any(|b| w > b.eval(x) + tol) {
            hull_violations += 1;
        }
        let cap = inner[0].eval(x).min(inner[1].eval(x));
        if cap >= 0.0 {
            let w = rng.gen::<f64>() * cap;
            if w > p.psi_value(x) + tol {
                inner_violations += 1;
            }
        }
    }

    // Vertices from pairwise intersections of adjacent edges.
    let floor = LinearBound { slope: 0.0, intercept: 0.0 };
    let top = intersect(hull[0], hull[1]).unwrap_or([0.0, p.lambda * p.delta_l * p.delta_l]);
    let right_top = [p.x_hi, hull[0].eval(p.x_hi)];
    let left_top = [p.x_lo, hull[1].eval(p.x_lo)];
    let right_bottom = [p.x_hi, floor.eval(p.x_hi)];
    let left_bottom = [p.x_lo, floor.eval(p.x_lo)];
    let vertices = vec![top, right_top, left_top, right_bottom, left_bottom];

    // ψ anchors of each edge.
    let s1 = [0.0, p.lambda * p.delta_l * p.delta_l];
    let s2 = [p.x_hi, p.lambda * (p.x_hi - p.delta_l).powi(2)];
    let s3 = [p.x_lo, p.lambda * (p.x_lo + p.delta_l).powi(2)];
    let edges: [([f64; 2], [f64; 2], [f64; 2], [f64; 2]); 5] = [
        (top, right_top, s1, s2),
        (top, left_top, s1, s3),
        (left_top, left_bottom, s3, [p.x_lo, 0.0]),
        (right_top, right_bottom, s2, [p.x_hi, 0.0]),
        (left_bottom, right_bottom, [p.x_lo, 0.0], [p.x_hi, 0.0]),
    ];
    let mut combinations = Vec::new();
    for (e, &(v0, v1, a, b)) in edges.iter().enumerate() {
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let point = [v0[0] + t * (v1[0] - v0[0]), v0[1] + t * (v1[1] - v0[1])];
            let (coefficient, residual) = combination(point, a, b);
            combinations.push(VertexCombination { edge: e + 1, point, anchors: [a, b], coefficient, residual });
        }
    }
    let worst_coefficient_excess = combinations
        .iter()
        .map(|c| (-c.coefficient).max(c.coefficient - 1.0).max(0.0))
        .fold(0.0, f64::max);
    let worst_residual = combinations.iter().map(|c| c.residual).fold(0.0, f64::max);
    Theorem2Report {
        samples: n_samples,
        hull_violations,
        inner_violations,
        vertices,
        combinations,
        worst_coefficient_excess,
        worst_residual,
    }
}
