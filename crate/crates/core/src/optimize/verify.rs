//! Post-solve checks: level-bound binding, ε sensitivity, derivative
//! agreement, and a multistart driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ipm::{kkt_residual, solve_from, IpmOptions, OptSolution, SolveStatus};
use super::models::{build_tscopf, generation_cost, TscopfOptions, TscopfProblem, WarmStart};
use super::{Block, NlpProblem};
use crate::certify::QuadraticCertificate;
use crate::error::Result;
use crate::gridcase::{PowerCase, ScenarioSpec};

/// Raises the level variable to the smallest of its upper bounds, which is
/// the exact optimum of the inner level problem at the solution's
/// equilibrium. The energy cap stays satisfied since the level only grows
/// (or shrinks by at most the solver's bound violation).
pub fn polish_w_min(prob: &TscopfProblem, sol: &OptSolution) -> OptSolution {
    let Some(w) = prob.layout.w else { return sol.clone() };
    let mut out = sol.clone();
    let level = prob.w_bounds(&sol.x).into_iter().fold(f64::INFINITY, f64::min);
    out.x[w] = level / prob.w_scale;
    out.objective = prob.nlp.objective.value(&out.x);
    out.kkt_residual = kkt_residual(&prob.nlp, &out.x, &out.lambda, &out.mu, &out.mu_lower, &out.mu_upper);
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub w_min: f64,
    /// `bound - W^min` of every level row, in level units.
    pub slacks: Vec<(String, f64)>,
    pub min_slack: f64,
    /// The smallest bound, i.e. the inner level optimum over the variant's
    /// bounding set.
    pub lower_level: f64,
    pub energy: f64,
    pub binding: bool,
    pub kkt_residual: f64,
}

/// Checks that at least one level bound is active: `min slack ≤ tol·W^min`.
pub fn verify_theorem1(sol: &OptSolution, prob: &TscopfProblem, tol_rel: f64) -> Theorem1Report {
    let w_min = prob.w_min(&sol.x);
    let bounds = prob.w_bounds(&sol.x);
    let slacks: Vec<(String, f64)> =
        prob.w_rows.iter().zip(&bounds).map(|(r, b)| (prob.nlp.ineq[r.row].name.clone(), b - w_min)).collect();
    let min_slack = slacks.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let lower_level = bounds.iter().copied().fold(f64::INFINITY, f64::min);
    Theorem1Report {
        w_min,
        min_slack,
        lower_level,
        energy: prob.energy(&sol.x),
        binding: min_slack.abs() <= tol_rel * w_min.abs(),
        slacks,
        kkt_residual: sol.kkt_residual,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilons: Vec<f64>,
    pub status: Vec<SolveStatus>,
    /// Generation cost at each solution.
    pub costs: Vec<f64>,
    pub dispatches: Vec<Vec<f64>>,
    /// Distance of each solution from the one with the smallest ε: cost
    /// difference and largest dispatch difference.
    pub cost_spread: Vec<f64>,
    pub dispatch_spread: Vec<f64>,
    pub shrinks: bool,
}

/// Solves with `ε ∈ {1e-3, 1e-4, 1e-5}·max(1, |f_OPF|)` and reports how far
/// each solution moves from the smallest-ε one.
pub fn verify_epsilon_insensitivity(
    case: &PowerCase,
    spec: &ScenarioSpec,
    cert: &QuadraticCertificate,
    opts: &TscopfOptions,
    warm: &WarmStart,
) -> Result<EpsilonReport> {
    let rels = [1e-3, 1e-4, 1e-5];
    let scale = warm.objective.abs().max(1.0);
    let runs: Vec<Result<(f64, OptSolution, Vec<f64>)>> = rels
        .par_iter()
        .map(|&rel| {
            let o = TscopfOptions { epsilon: Some(rel * scale), ..opts.clone() };
            let prob = build_tscopf(case, spec, cert, &o, Some(warm))?;
            let sol = solve_from(&prob.nlp, &prob.nlp.x0, &o.ipm);
            let d = prob.layout.dispatch(&sol.x);
            Ok((rel * scale, sol, d))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = runs.iter().map(|r| generation_cost(case, &r.2)).collect();
    let last = runs.len() - 1;
    let cost_spread: Vec<f64> = costs.iter().map(|c| (c - costs[last]).abs()).collect();
    let dispatch_spread: Vec<f64> = runs
        .iter()
        .map(|r| r.2.iter().zip(&runs[last].2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let tol = 1e-6 * (1.0 + costs[last].abs());
    let shrinks = cost_spread.windows(2).all(|w| w[1] <= w[0] + tol);
    Ok(EpsilonReport {
        epsilons: runs.iter().map(|r| r.0).collect(),
        status: runs.iter().map(|r| r.1.status).collect(),
        costs,
        dispatches: runs.into_iter().map(|r| r.2).collect(),
        cost_spread,
        dispatch_spread,
        shrinks,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub points: usize,
    /// Worst relative gradient error per constraint block, plus the
    /// objective under `None`.
    pub worst: Vec<(Option<Block>, f64)>,
    pub max_error: f64,
}

/// Compares exact gradients with central differences at `n_points` points
/// drawn around `center`. The error of one entry is
/// `|exact - fd| / max(1, |fd|)`.
pub fn check_derivatives(p: &NlpProblem, center: &[f64], n_points: usize, radius: f64, seed: u64) -> DerivativeReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(Option<Block>, f64)> = std::iter::once(None).chain(p.blocks().into_iter().map(Some)).map(|b| (b, 0.0)).collect();
    for _ in 0..n_points {
        let x: Vec<f64> = center
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let v = c + radius * rng.gen_range(-1.0..1.0);
                v.clamp(p.lower[k].max(v.min(p.lower[k] + 1e-3)), p.upper[k].min(v.max(p.upper[k] - 1e-3)))
            })
            .collect();
        let rows = std::iter::once((None, &p.objective)).chain(p.eq.iter().chain(&p.ineq).map(|r| (Some(r.block), &r.f)));
        for (block, f) in rows {
            let e = f.eval2(&x);
            for &k in &f.vars {
                let exact: f64 = e.grad.iter().filter(|g| g.0 == k).map(|g| g.1).sum();
                let h = 1e-6 * (1.0 + x[k].abs());
                let mut a = x.clone();
                let mut b = x.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (f.value(&a) - f.value(&b)) / (2.0 * h);
                let err = (exact - fd).abs() / fd.abs().max(1.0);
                if let Some(slot) = worst.iter_mut().find(|w| w.0 == block) {
                    slot.1 = f64::max(slot.1, err);
                }
            }
        }
    }
    let max_error = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    DerivativeReport { points: n_points, worst, max_error }
}

/// Solves from every start in parallel and keeps the best optimal solution
/// (lowest objective, earliest start on ties). Falls back to the first
/// start's result when none is optimal.
pub fn multistart(p: &NlpProblem, starts: &[Vec<f64>], opts: &IpmOptions) -> (OptSolution, Vec<OptSolution>) {
    let all: Vec<OptSolution> = starts.par_iter().map(|x0| solve_from(p, x0, opts)).collect();
    let best = all
        .iter()
        .filter(|s| s.status == SolveStatus::Optimal)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .unwrap_or(&all[0])
        .clone();
    (best, all)
}

impl TscopfProblem {
    /// Warm start, flat voltage profile, and a seeded perturbation of the
    /// warm start.
    pub fn default_starts(&self, seed: u64) -> Vec<Vec<f64>> {
        let x0 = self.nlp.x0.clone();
        let mut flat = x0.clone();
        for &k in self.layout.v.iter().chain(&self.layout.v_post) {
            flat[k] = 1.0_f64.clamp(self.nlp.lower[k], self.nlp.upper[k]);
        }
        for &k in self.layout.theta.iter().chain(&self.layout.theta_post) {
            flat[k] = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbed = x0
            .iter()
            .enumerate()
            .map(|(k, &v)| (v + 0.02 * rng.gen_range(-1.0..1.0)).clamp(self.nlp.lower[k], self.nlp.upper[k]))
            .collect();
        vec![x0, flat, perturbed]
    }
}
