//! Dense log-det barrier method for small linear matrix inequality problems
//!
//! ```text
//! minimize cᵀv  subject to  S_b(v) = F_b0 + Σ_i v_i F_bi ≻ 0  for every block b.
//! ```
//!
//! Each barrier subproblem `η cᵀv - Σ_b log det S_b(v)` is minimized by
//! damped Newton steps; the line search keeps every block Cholesky-factorable.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub f0: DMatrix<f64>,
    /// Sparse list of `(variable, coefficient matrix)`.
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineBlock {
    pub fn new(f0: DMatrix<f64>) -> Self {
        AffineBlock { f0, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn eval(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.f0.clone();
        for (i, f) in &self.terms {
            s += f * v[*i];
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub cost: DVector<f64>,
    pub blocks: Vec<AffineBlock>,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Stop when the duality-gap bound `ν/η` falls below this.
    pub gap_tol: f64,
    pub eta0: f64,
    pub eta_factor: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions { gap_tol: 1e-9, eta0: 1.0, eta_factor: 8.0, max_newton: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierResult {
    pub v: DVector<f64>,
    pub objective: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

fn chol(s: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(s)
}

impl LmiProblem {
    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    /// Barrier parameter `ν = Σ_b dim(S_b)`.
    pub fn nu(&self) -> f64 {
        self.blocks.iter().map(|b| b.dim()).sum::<usize>() as f64
    }

    pub fn strictly_feasible(&self, v: &DVector<f64>) -> bool {
        self.blocks.iter().all(|b| chol(b.eval(v)).is_some())
    }

    /// `η cᵀv - Σ log det S_b(v)`, or `None` outside the domain.
    fn barrier(&self, eta: f64, v: &DVector<f64>) -> Option<f64> {
        let mut f = eta * self.cost.dot(v);
        for b in &self.blocks {
            let c = chol(b.eval(v))?;
            f -= 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(f)
    }

    fn newton_system(&self, eta: f64, v: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_vars();
        let mut g = &self.cost * eta;
        let mut h = DMatrix::zeros(n, n);
        for b in &self.blocks {
            let sinv = chol(b.eval(v)).expect("iterate stays interior").inverse();
            let w: Vec<(usize, DMatrix<f64>)> = b.terms.iter().map(|(i, f)| (*i, &sinv * f)).collect();
            for (a, (i, wi)) in w.iter().enumerate() {
                g[*i] -= wi.trace();
                for (j, wj) in w.iter().skip(a) {
                    // tr(Wi Wj) without forming the product
                    let t = wi.component_mul(&wj.transpose()).sum();
                    h[(*i, *j)] += t;
                    if i != j {
                        h[(*j, *i)] += t;
                    }
                }
            }
        }
        (g, h)
    }

    /// Runs the barrier method from a strictly feasible point.
    pub fn solve(&self, v0: DVector<f64>, opts: BarrierOptions) -> Result<BarrierResult> {
        if !self.strictly_feasible(&v0) {
            return Err(Error::Option("barrier start is not strictly feasible".into()));
        }
        let nu = self.nu();
        let mut v = v0;
        let mut eta = opts.eta0;
        let mut steps = 0;
        loop {
            // centering
            loop {
                if steps >= opts.max_newton {
                    return Ok(BarrierResult { objective: self.cost.dot(&v), v, newton_steps: steps, converged: false });
                }
                let (g, mut h) = self.newton_system(eta, &v);
                let scale = h.diagonal().amax().max(1.0);
                let dv = loop {
                    if let Some(c) = chol(h.clone()) {
                        break -c.solve(&g);
                    }
                    for k in 0..h.nrows() {
                        h[(k, k)] += 1e-12 * scale;
                    }
                };
                let decrement = -g.dot(&dv);
                steps += 1;
                if decrement / 2.0 < 1e-10 {
                    break;
                }
                let f0 = self.barrier(eta, &v).expect("interior");
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let trial = &v + &dv * t;
                    if let Some(ft) = self.barrier(eta, &trial) {
                        if ft <= f0 - 0.25 * t * decrement {
                            v = trial;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            if nu / eta < opts.gap_tol {
                return Ok(BarrierResult { objective: self.cost.dot(&v), v, newton_steps: steps, converged: true });
            }
            eta *= opts.eta_factor;
        }
    }
}
