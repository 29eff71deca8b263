//! Smooth nonlinear programming and the dispatch models built on it.
//!
//! An [`NlpProblem`] is a list of scalar functions of small variable subsets.
//! Each function is written against [`Dual2`], so one closure yields the
//! value, gradient and Hessian; derivatives are exact, never differenced.
//! [`solve_nlp`] is a primal-dual interior-point method in the style of
//! MIPS: slack variables for inequalities, a centered Newton step on the
//! perturbed KKT conditions and fraction-to-boundary step lengths.

mod hull;
mod ipm;
mod models;
mod verify;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{Dual2, Real};

pub use hull::{
    grid_hull_constraints, hull_constraints, inner_constraints, row_lambdas, verify_theorem2, GridHullRow,
    HullParams, LinearBound, Theorem2Report, VertexCombination,
};
pub use ipm::{kkt_residual, solve_nlp, IpmOptions, OptSolution, SolveStatus};
pub use models::{
    build_opf, build_tscopf, generation_cost, level_bounds, ClearedModel, Layout, OpfProblem, TscopfOptions,
    TscopfProblem, Variant, WarmStart, WminRow,
};
pub use verify::{
    check_derivatives, multistart, polish_w_min, verify_epsilon_insensitivity, verify_theorem1, DerivativeReport,
    EpsilonReport, Theorem1Report,
};

/// Constraint families, used for reporting and derivative checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Reference,
    PowerFlowPre,
    PowerFlowPost,
    LineLimits,
    AngleLimits,
    GeneratorLimits,
    FaultCleared,
    EnergyCap,
    Hull,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

pub type ScalarFn = Arc<dyn Fn(&[Dual2]) -> Dual2 + Send + Sync>;

/// A twice-differentiable function of the variables listed in `vars`.
#[derive(Clone)]
pub struct Smooth {
    pub vars: Vec<usize>,
    pub f: ScalarFn,
}

/// Value, sparse gradient and sparse (lower-and-upper) Hessian.
pub struct Eval2 {
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
    pub hess: Vec<(usize, usize, f64)>,
}

impl Smooth {
    pub fn new(vars: Vec<usize>, f: impl Fn(&[Dual2]) -> Dual2 + Send + Sync + 'static) -> Self {
        Smooth { vars, f: Arc::new(f) }
    }

    /// `Σ coef·x[var] + constant`.
    pub fn linear(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        let coef: Vec<f64> = terms.iter().map(|t| t.1).collect();
        Smooth::new(terms.iter().map(|t| t.0).collect(), move |x| {
            x.iter().zip(&coef).fold(Dual2::constant(constant), |acc, (xi, &c)| acc + xi.clone() * c)
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let args: Vec<Dual2> = self.vars.iter().map(|&k| Dual2::constant(x[k])).collect();
        (self.f)(&args).value()
    }

    pub fn eval2(&self, x: &[f64]) -> Eval2 {
        let local: Vec<f64> = self.vars.iter().map(|&k| x[k]).collect();
        let d = (self.f)(&Dual2::seed(&local));
        let n = local.len();
        let g = d.grad(n);
        let mut grad = Vec::with_capacity(n);
        let mut hess = Vec::new();
        for a in 0..n {
            if g[a] != 0.0 {
                grad.push((self.vars[a], g[a]));
            }
            for b in 0..n {
                let h = d.hess(a, b);
                if h != 0.0 {
                    hess.push((self.vars[a], self.vars[b], h));
                }
            }
        }
        Eval2 { value: d.value(), grad, hess }
    }
}

/// One named scalar constraint: `f(x) = 0` or `f(x) ≤ 0`.
#[derive(Clone)]
pub struct Row {
    pub name: String,
    pub block: Block,
    pub f: Smooth,
}

/// `min f(x)` s.t. `g(x) = 0`, `h(x) ≤ 0`, `lower ≤ x ≤ upper`.
#[derive(Clone)]
pub struct NlpProblem {
    pub var_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    pub objective: Smooth,
    pub eq: Vec<Row>,
    pub ineq: Vec<Row>,
}

impl NlpProblem {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    /// Largest violation of equalities, inequalities and bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.eq {
            worst = worst.max(r.f.value(x).abs());
        }
        for r in &self.ineq {
            worst = worst.max(r.f.value(x));
        }
        for (k, &xk) in x.iter().enumerate() {
            worst = worst.max(self.lower[k] - xk).max(xk - self.upper[k]);
        }
        worst
    }

    pub fn blocks(&self) -> Vec<Block> {
        let mut b: Vec<Block> = self.eq.iter().chain(&self.ineq).map(|r| r.block).collect();
        b.sort();
        b.dedup();
        b
    }
}
