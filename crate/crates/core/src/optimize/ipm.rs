use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NlpProblem, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpmOptions {
    pub feastol: f64,
    pub gradtol: f64,
    pub comptol: f64,
    pub costtol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Centering parameter.
    pub sigma: f64,
    pub z0: f64,
    pub alpha_min: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            feastol: 1e-6,
            gradtol: 1e-6,
            comptol: 1e-6,
            costtol: 1e-6,
            max_iter: 300,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
            alpha_min: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows.
    pub lambda: Vec<f64>,
    /// Multipliers of the inequality rows.
    pub mu: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    /// `max(feasibility, stationarity, complementarity)`, each scaled as in
    /// [`kkt_residual`].
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub time_s: f64,
}

/// Inequalities seen by the solver: user rows followed by finite bounds.
enum Ineq<'a> {
    Row(&'a Row),
    Lower(usize, f64),
    Upper(usize, f64),
}

struct Expanded<'a> {
    items: Vec<Ineq<'a>>,
    n_rows: usize,
    lower: Vec<usize>,
    upper: Vec<usize>,
}

fn expand(p: &NlpProblem) -> Expanded<'_> {
    let mut items: Vec<Ineq> = p.ineq.iter().map(Ineq::Row).collect();
    let n_rows = items.len();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for k in 0..p.n_vars() {
        if p.lower[k].is_finite() {
            lower.push(items.len());
            items.push(Ineq::Lower(k, p.lower[k]));
        }
        if p.upper[k].is_finite() {
            upper.push(items.len());
            items.push(Ineq::Upper(k, p.upper[k]));
        }
    }
    Expanded { items, n_rows, lower, upper }
}

struct Point {
    f: f64,
    /// Hessians of the objective, equality rows and inequality rows.
    hf: Vec<(usize, usize, f64)>,
    heq: Vec<Vec<(usize, usize, f64)>>,
    hiq: Vec<Vec<(usize, usize, f64)>>,
    df: DVector<f64>,
    g: DVector<f64>,
    dg: DMatrix<f64>,
    h: DVector<f64>,
    dh: DMatrix<f64>,
}

fn evaluate(p: &NlpProblem, ex: &Expanded, x: &[f64]) -> Point {
    let n = p.n_vars();
    let of = p.objective.eval2(x);
    let mut df = DVector::zeros(n);
    for &(k, v) in &of.grad {
        df[k] += v;
    }
    let mut g = DVector::zeros(p.eq.len());
    let mut dg = DMatrix::zeros(n, p.eq.len());
    let mut heq = Vec::with_capacity(p.eq.len());
    for (r, row) in p.eq.iter().enumerate() {
        let e = row.f.eval2(x);
        g[r] = e.value;
        for &(k, v) in &e.grad {
            dg[(k, r)] += v;
        }
        heq.push(e.hess);
    }
    let mut hiq = Vec::with_capacity(ex.n_rows);
    let mut h = DVector::zeros(ex.items.len());
    let mut dh = DMatrix::zeros(n, ex.items.len());
    for (r, item) in ex.items.iter().enumerate() {
        match item {
            Ineq::Row(row) => {
                let e = row.f.eval2(x);
                h[r] = e.value;
                for &(k, v) in &e.grad {
                    dh[(k, r)] += v;
                }
                hiq.push(e.hess);
            }
            Ineq::Lower(k, lb) => {
                h[r] = lb - x[*k];
                dh[(*k, r)] = -1.0;
            }
            Ineq::Upper(k, ub) => {
                h[r] = x[*k] - ub;
                dh[(*k, r)] = 1.0;
            }
        }
    }
    Point { f: of.value, hf: of.hess, heq, hiq, df, g, dg, h, dh }
}

/// Hessian of the Lagrangian `f + λᵀg + μᵀh`.
fn lagrangian_hessian(n: usize, pt: &Point, lam: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut add = |entries: &[(usize, usize, f64)], w: f64| {
        if w != 0.0 {
            for &(a, b, v) in entries {
                m[(a, b)] += w * v;
            }
        }
    };
    add(&pt.hf, 1.0);
    for (r, h) in pt.heq.iter().enumerate() {
        add(h, lam[r]);
    }
    for (r, h) in pt.hiq.iter().enumerate() {
        add(h, mu[r]);
    }
    m
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

fn norm_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

/// Scaled first-order optimality measure at `(x, λ, μ)` with complementarity
/// measured against the true slacks `-h`.
///
/// ```text
/// feasibility     max(‖g‖∞, max(h, 0)) / (1 + ‖x‖∞)
/// stationarity    ‖∇f + ∇gλ + ∇hμ‖∞ / (1 + max(‖λ‖∞, ‖μ‖∞))
/// complementarity Σ μ_i |h_i| / (1 + ‖x‖∞)
/// ```
pub fn kkt_residual(p: &NlpProblem, x: &[f64], lambda: &[f64], mu: &[f64], mu_lower: &[f64], mu_upper: &[f64]) -> f64 {
    let ex = expand(p);
    let pt = evaluate(p, &ex, x);
    let mut mu_all = DVector::zeros(ex.items.len());
    for (r, &m) in mu.iter().enumerate() {
        mu_all[r] = m;
    }
    for (c, &r) in ex.lower.iter().enumerate() {
        mu_all[r] = mu_lower[c];
    }
    for (c, &r) in ex.upper.iter().enumerate() {
        mu_all[r] = mu_upper[c];
    }
    let lam = DVector::from_column_slice(lambda);
    let z = pt.h.map(|v| (-v).max(0.0));
    measures(&pt, x, &lam, &mu_all, &z).0
}

/// `(kkt, feas, grad, comp)`.
fn measures(pt: &Point, x: &[f64], lam: &DVector<f64>, mu: &DVector<f64>, z: &DVector<f64>) -> (f64, f64, f64, f64) {
    let xn = norm_slice(x);
    let hmax = pt.h.iter().fold(0.0, |a: f64, &b| a.max(b));
    let feas = inf_norm(&pt.g).max(hmax) / (1.0 + xn.max(inf_norm(z)));
    let lx = &pt.df + &pt.dg * lam + &pt.dh * mu;
    let grad = inf_norm(&lx) / (1.0 + inf_norm(lam).max(inf_norm(mu)));
    let comp = z.dot(mu).abs() / (1.0 + xn);
    (feas.max(grad).max(comp), feas, grad, comp)
}

/// Solves the problem from `problem.x0`.
pub fn solve_nlp(problem: &NlpProblem, opts: &IpmOptions) -> OptSolution {
    solve_from(problem, &problem.x0, opts)
}

pub(crate) fn solve_from(problem: &NlpProblem, x0: &[f64], opts: &IpmOptions) -> OptSolution {
    let start = Instant::now();
    let ex = expand(problem);
    let n = problem.n_vars();
    let neq = problem.eq.len();
    let niq = ex.items.len();
    let mut x = x0.to_vec();
    let mut pt = evaluate(problem, &ex, &x);

    let mut gamma = 1.0;
    let mut z = DVector::from_element(niq, opts.z0);
    let mut mu = DVector::from_element(niq, opts.z0);
    for r in 0..niq {
        if pt.h[r] < -opts.z0 {
            z[r] = -pt.h[r];
        }
        if gamma / z[r] > opts.z0 {
            mu[r] = gamma / z[r];
        }
    }
    let mut lam = DVector::zeros(neq);
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    let mut f_prev = pt.f;

    while iterations < opts.max_iter {
        iterations += 1;
        let lxx = lagrangian_hessian(n, &pt, &lam, &mu);
        let lx = &pt.df + &pt.dg * &lam + &pt.dh * &mu;
        let zinv = z.map(|v| 1.0 / v);
        // dh · diag(μ/z) · dhᵀ
        let mut dh_scaled = pt.dh.clone();
        for r in 0..niq {
            let s = mu[r] * zinv[r];
            dh_scaled.column_mut(r).scale_mut(s);
        }
        let m = &lxx + &dh_scaled * pt.dh.transpose();
        let rhs_h = DVector::from_iterator(niq, (0..niq).map(|r| zinv[r] * (mu[r] * pt.h[r] + gamma)));
        let nvec = &lx + &pt.dh * rhs_h;

        let dim = n + neq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&m);
        kkt.view_mut((0, n), (n, neq)).copy_from(&pt.dg);
        kkt.view_mut((n, 0), (neq, n)).copy_from(&pt.dg.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&nvec));
        rhs.rows_mut(n, neq).copy_from(&(-&pt.g));
        let sol = solve_kkt(kkt, &rhs, n);
        let Some(sol) = sol else {
            status = SolveStatus::Infeasible;
            break;
        };
        let dx = sol.rows(0, n).into_owned();
        let dlam = sol.rows(n, neq).into_owned();
        let dz = -&pt.h - &z - pt.dh.transpose() * &dx;
        let dmu = DVector::from_iterator(niq, (0..niq).map(|r| -mu[r] + zinv[r] * (gamma - mu[r] * dz[r])));

        let ratio = |v: &DVector<f64>, d: &DVector<f64>| {
            (0..v.len()).filter(|&r| d[r] < 0.0).map(|r| v[r] / -d[r]).fold(f64::INFINITY, f64::min)
        };
        let alpha_p = (opts.xi * ratio(&z, &dz)).min(1.0);
        let alpha_d = (opts.xi * ratio(&mu, &dmu)).min(1.0);

        for k in 0..n {
            x[k] += alpha_p * dx[k];
        }
        z += alpha_p * &dz;
        lam += alpha_d * &dlam;
        mu += alpha_d * &dmu;
        if niq > 0 {
            gamma = opts.sigma * z.dot(&mu) / niq as f64;
        }
        pt = evaluate(problem, &ex, &x);

        let (_, feas, grad, comp) = measures(&pt, &x, &lam, &mu, &z);
        let cost = (pt.f - f_prev).abs() / (1.0 + f_prev.abs());
        f_prev = pt.f;
        log::trace!("ipm {iterations}: f={:.8e} feas={feas:.2e} grad={grad:.2e} comp={comp:.2e}", pt.f);
        if !x.iter().all(|v| v.is_finite()) || !pt.f.is_finite() {
            status = SolveStatus::Infeasible;
            break;
        }
        if feas < opts.feastol && grad < opts.gradtol && comp < opts.comptol && cost < opts.costtol {
            status = SolveStatus::Optimal;
            break;
        }
        if alpha_p < opts.alpha_min || alpha_d < opts.alpha_min || gamma < f64::EPSILON || gamma > 1.0 / f64::EPSILON
        {
            status = SolveStatus::Infeasible;
            break;
        }
    }

    let mu_rows: Vec<f64> = (0..ex.n_rows).map(|r| mu[r]).collect();
    let mu_lower: Vec<f64> = ex.lower.iter().map(|&r| mu[r]).collect();
    let mu_upper: Vec<f64> = ex.upper.iter().map(|&r| mu[r]).collect();
    let lambda: Vec<f64> = lam.iter().copied().collect();
    let kkt = kkt_residual(problem, &x, &lambda, &mu_rows, &mu_lower, &mu_upper);
    if status == SolveStatus::Optimal && kkt > opts.feastol.max(opts.gradtol).max(opts.comptol) {
        status = SolveStatus::IterationLimit;
    }
    OptSolution {
        objective: pt.f,
        x,
        lambda,
        mu: mu_rows,
        mu_lower,
        mu_upper,
        kkt_residual: kkt,
        status,
        iterations,
        time_s: start.elapsed().as_secs_f64(),
    }
}

/// LU solve of the reduced Newton system, regularizing the Hessian block when
/// it is singular.
fn solve_kkt(kkt: DMatrix<f64>, rhs: &DVector<f64>, n: usize) -> Option<DVector<f64>> {
    let mut reg = 0.0;
    for _ in 0..6 {
        let mut k = kkt.clone();
        for i in 0..n {
            k[(i, i)] += reg;
        }
        if let Some(s) = k.lu().solve(rhs) {
            if s.iter().all(|v| v.is_finite()) {
                return Some(s);
            }
        }
        reg = if reg == 0.0 { 1e-10 } else { reg * 100.0 };
    }
    None
}
