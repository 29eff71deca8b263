//! Circle-criterion quadratic Lyapunov certificates and invariant levels.
//!
//! For `ẋ = Ax + Bφ(Cx)` with each `φ_k` in the sector `[γ_k, β_k]`, a pair
//! `(P ≻ 0, τ ≥ 0)` with
//!
//! ```text
//! F(P, τ) = [ AᵀP + PA - Cᵀ diag(τγβ) C    PB + ½ Cᵀ diag(τ(γ+β)) ]  ≺ 0
//!           [ ·                            -diag(τ)              ]
//! ```
//!
//! makes `W(x) = xᵀPx` strictly decrease wherever the sector condition holds:
//! `Ẇ = zᵀFz + Σ τ_k (φ_k - γ_k y_k)(φ_k - β_k y_k)` with `z = [x; φ]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{deserialize_matrix, lambda_max, lambda_min, serialize_matrix, symmetrize};
use crate::lure::{sector_edge_band, LureSystem, SectorBounds};
use crate::sdp::{AffineBlock, BarrierOptions, LmiProblem};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticCertificate {
    #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")]
    pub p: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda_min_p: f64,
    pub lmi_margin: f64,
    pub mu: f64,
    pub tol_lmi: f64,
    /// Structure hash of the certified Lur'e system and sectors.
    pub system_hash: String,
}

#[derive(Debug, Clone, Copy)]
pub struct LmiOptions {
    /// Floor on `λ_min(P)`.
    pub mu: f64,
    /// Required strict margin: `λ_max(F) <= -tol_lmi`.
    pub tol_lmi: f64,
    pub barrier: BarrierOptions,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions { mu: 1e-6, tol_lmi: 1e-8, barrier: BarrierOptions { gap_tol: 1e-7, ..Default::default() } }
    }
}

/// The LMI block matrix `F(P, τ)`.
pub fn lmi_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sectors: &SectorBounds,
    p: &DMatrix<f64>,
    tau: &[f64],
) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut f = DMatrix::zeros(n + m, n + m);
    let mut top = a.transpose() * p + p * a;
    let w_quad = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        (0..m).map(|k| tau[k] * sectors.gamma[k] * sectors.beta[k]),
    ));
    top -= c.transpose() * w_quad * c;
    let w_cross = DMatrix::from_diagonal(&DVector::from_iterator(
        m,
        (0..m).map(|k| 0.5 * tau[k] * (sectors.gamma[k] + sectors.beta[k])),
    ));
    let cross = p * b + c.transpose() * w_cross;
    f.view_mut((0, 0), (n, n)).copy_from(&top);
    f.view_mut((0, n), (n, m)).copy_from(&cross);
    f.view_mut((n, 0), (m, n)).copy_from(&cross.transpose());
    for k in 0..m {
        f[(n + k, n + k)] = -tau[k];
    }
    symmetrize(&mut f);
    f
}

fn sym_basis(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// Core LMI solve on raw matrices; see [`solve_lmi`].
pub fn solve_lmi_matrices(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sectors: &SectorBounds,
    opts: &LmiOptions,
) -> Result<(DMatrix<f64>, Vec<f64>, f64)> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || c.nrows() != m || c.ncols() != n {
        return Err(Error::Dimension("A, B, C shapes are inconsistent".into()));
    }
    if sectors.gamma.len() != m || sectors.beta.len() != m {
        return Err(Error::Dimension("sector count differs from the number of outputs".into()));
    }
    if sectors.gamma.iter().zip(&sectors.beta).any(|(g, b)| !(g < b)) {
        return Err(Error::Option("sector bounds need γ_k < β_k".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let np = pairs.len();
    let nv = np + m + 1;
    let t_var = nv - 1;
    let zero_tau = vec![0.0; m];
    let zero_p = DMatrix::zeros(n, n);

    let mut lmi = AffineBlock::new(DMatrix::zeros(n + m, n + m));
    let mut lower = AffineBlock::new(-DMatrix::identity(n, n) * opts.mu);
    let mut upper = AffineBlock::new(DMatrix::identity(n, n));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let e = sym_basis(n, i, j);
        lmi.terms.push((k, -lmi_matrix(a, b, c, sectors, &e, &zero_tau)));
        lower.terms.push((k, e.clone()));
        upper.terms.push((k, -e));
    }
    let mut taus = AffineBlock::new(DMatrix::zeros(m, m));
    for k in 0..m {
        let mut unit = zero_tau.clone();
        unit[k] = 1.0;
        lmi.terms.push((np + k, -lmi_matrix(a, b, c, sectors, &zero_p, &unit)));
        let mut e = DMatrix::zeros(m, m);
        e[(k, k)] = 1.0;
        taus.terms.push((np + k, e));
    }
    lmi.terms.push((t_var, DMatrix::identity(n + m, n + m)));

    let mut cost = DVector::zeros(nv);
    cost[t_var] = 1.0;
    let mut blocks = vec![lmi, lower, upper];
    if m > 0 {
        blocks.push(taus);
    }
    let problem = LmiProblem { cost, blocks };

    let p0 = DMatrix::identity(n, n) * 0.5;
    let tau0 = vec![1.0; m];
    let mut v0 = DVector::zeros(nv);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        v0[k] = p0[(i, j)];
    }
    for k in 0..m {
        v0[np + k] = tau0[k];
    }
    v0[t_var] = lambda_max(&lmi_matrix(a, b, c, sectors, &p0, &tau0)) + 1.0;

    let res = problem.solve(v0, opts.barrier)?;
    let mut p = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        p[(i, j)] = res.v[k];
        p[(j, i)] = res.v[k];
    }
    let tau: Vec<f64> = (0..m).map(|k| res.v[np + k]).collect();
    let margin = lambda_max(&lmi_matrix(a, b, c, sectors, &p, &tau));
    if margin > -opts.tol_lmi {
        return Err(if res.converged { Error::Infeasible { margin } } else { Error::MaxIterations { margin } });
    }
    Ok((p, tau, margin))
}

/// Solves the circle-criterion LMI for a Lur'e system and its sectors.
pub fn solve_lmi(sys: &LureSystem, sectors: &SectorBounds) -> Result<QuadraticCertificate> {
    solve_lmi_with(sys, sectors, &LmiOptions::default())
}

pub fn solve_lmi_with(sys: &LureSystem, sectors: &SectorBounds, opts: &LmiOptions) -> Result<QuadraticCertificate> {
    let (p, tau, margin) = solve_lmi_matrices(&sys.a, &sys.b, &sys.c, sectors, opts)?;
    Ok(QuadraticCertificate {
        lambda_min_p: lambda_min(&p),
        p,
        tau,
        gamma: sectors.gamma.clone(),
        beta: sectors.beta.clone(),
        lmi_margin: margin,
        mu: opts.mu,
        tol_lmi: opts.tol_lmi,
        system_hash: sys.structure_hash(sectors),
    })
}

impl QuadraticCertificate {
    pub fn sectors(&self) -> SectorBounds {
        SectorBounds { gamma: self.gamma.clone(), beta: self.beta.clone() }
    }

    /// Margin recomputed from `(P, τ)` with a symmetric eigensolver.
    pub fn recompute_margin(&self, sys: &LureSystem) -> f64 {
        lambda_max(&lmi_matrix(&sys.a, &sys.b, &sys.c, &self.sectors(), &self.p, &self.tau))
    }

    /// `(cP, cτ)`, feasible whenever `(P, τ)` is.
    pub fn scaled(&self, c: f64) -> QuadraticCertificate {
        let mut s = self.clone();
        s.p *= c;
        s.tau.iter_mut().for_each(|t| *t *= c);
        s.lambda_min_p *= c;
        s.lmi_margin *= c;
        s
    }

    /// Checks that this certificate was computed for `sys`.
    pub fn check_system(&self, sys: &LureSystem) -> Result<()> {
        if self.p.nrows() != sys.dim() || sys.structure_hash(&self.sectors()) != self.system_hash {
            return Err(Error::HashMismatch);
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn w_value(cert: &QuadraticCertificate, x: &DVector<f64>) -> f64 {
    x.dot(&(&cert.p * x))
}

/// `Ẇ = ẋᵀPx + xᵀPẋ` along `ẋ = Ax + Bφ(Cx)`.
pub fn wdot_value(cert: &QuadraticCertificate, sys: &LureSystem, x: &DVector<f64>) -> f64 {
    2.0 * x.dot(&(&cert.p * sys.field(x)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WdotReport {
    pub samples: usize,
    pub nonnegative: usize,
    pub worst_wdot: f64,
    pub worst_x: Vec<f64>,
    /// Draws discarded for leaving the polytope or the sector.
    pub rejected: usize,
    /// Draws that fell in the sector-contact bands near polytope edges.
    pub edge_contacts: usize,
}

/// Does every output satisfy `(φ - γy)(φ - βy) <= 0`?
pub fn sector_respected(sys: &LureSystem, sectors: &SectorBounds, x: &DVector<f64>) -> bool {
    let y = sys.outputs(x);
    (0..y.len()).all(|k| {
        let p = sys.phi_eval(k, y[k]);
        (p - sectors.gamma[k] * y[k]) * (p - sectors.beta[k] * y[k]) <= 0.0
    })
}

/// Samples states in `𝒫 \ {0}` that respect the sector condition and
/// evaluates `Ẇ` at each.
///
/// Draws are `ρ u` with `ρ` uniform in `(0, 1]` and `u` uniform in a box of
/// half-width `π` (angles) and `speed_box` (speeds), so both the
/// neighbourhood of the origin and the polytope faces are visited.
pub fn check_wdot_negative(
    cert: &QuadraticCertificate,
    sys: &LureSystem,
    n_samples: usize,
    seed: u64,
) -> WdotReport {
    check_wdot_negative_box(cert, sys, n_samples, seed, 2.0)
}

pub fn check_wdot_negative_box(
    cert: &QuadraticCertificate,
    sys: &LureSystem,
    n_samples: usize,
    seed: u64,
    speed_box: f64,
) -> WdotReport {
    let sectors = cert.sectors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = sys.n_angles();
    let bounds = sys.polytope_bounds();
    let mut report = WdotReport {
        samples: 0,
        nonnegative: 0,
        worst_wdot: f64::NEG_INFINITY,
        worst_x: Vec::new(),
        rejected: 0,
        edge_contacts: 0,
    };
    let max_draws = n_samples.saturating_mul(1000).max(1000);
    let mut draws = 0;
    while report.samples < n_samples && draws < max_draws {
        draws += 1;
        let rho: f64 = 1.0 - rng.gen::<f64>();
        let x = DVector::from_fn(sys.dim(), |i, _| {
            let half = if i < na { std::f64::consts::PI } else { speed_box };
            rho * rng.gen_range(-half..half)
        });
        if x.amax() == 0.0 || !sys.in_polytope(&x) {
            report.rejected += 1;
            continue;
        }
        let y = sys.outputs(&x);
        let near_edge = sys.nonlinearities.iter().enumerate().any(|(k, nl)| {
            let (lo, hi) = bounds[k];
            y[k] - lo < sector_edge_band(nl, sectors.gamma[k], lo) || hi - y[k] < sector_edge_band(nl, sectors.gamma[k], hi)
        });
        if near_edge {
            report.edge_contacts += 1;
        }
        if !sector_respected(sys, &sectors, &x) {
            report.rejected += 1;
            continue;
        }
        report.samples += 1;
        let wd = wdot_value(cert, sys, &x);
        if wd >= 0.0 {
            report.nonnegative += 1;
        }
        if wd > report.worst_wdot {
            report.worst_wdot = wd;
            report.worst_x = x.iter().copied().collect();
        }
    }
    report
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantLevel {
    pub w_min: f64,
    /// Output row attaining the minimum.
    pub argmin: usize,
    pub per_row: Vec<f64>,
    /// Minimizer of `W` on the binding face of each row.
    pub minimizers: Vec<Vec<f64>>,
}

/// `W_i = min{(X_i + Δl_i)², (X_i - Δl_i)²} / (C_iᵀ P⁻¹ C_i)` with the face
/// minimizer `x̂ = y P⁻¹C_i / (C_iᵀP⁻¹C_i)`.
///
/// `centers[i]` is `C_iᵀx*` and `half_widths[i]` is `Δl_i`: the faces of row
/// `i` sit at `y = X_i ± Δl_i` in deviation coordinates.
pub fn w_min_rows(p: &DMatrix<f64>, c: &DMatrix<f64>, centers: &[f64], half_widths: &[f64]) -> Result<InvariantLevel> {
    let pinv = p.clone().cholesky().ok_or_else(|| Error::Option("P is not positive definite".into()))?.inverse();
    let mut per_row = Vec::with_capacity(c.nrows());
    let mut minimizers = Vec::with_capacity(c.nrows());
    for i in 0..c.nrows() {
        let ci = c.row(i).transpose();
        let pc = &pinv * &ci;
        let q = ci.dot(&pc);
        let (up, down) = (centers[i] + half_widths[i], centers[i] - half_widths[i]);
        let y = if up * up <= down * down { up } else { down };
        per_row.push(y * y / q);
        minimizers.push((pc * (y / q)).iter().copied().collect());
    }
    let (argmin, &w_min) = per_row
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Dimension("no output rows".into()))?;
    Ok(InvariantLevel { w_min, argmin, per_row, minimizers })
}

/// Row centers and half widths of the system's polytope.
pub fn polytope_geometry(sys: &LureSystem) -> (Vec<f64>, Vec<f64>) {
    sys.polytope_bounds().iter().map(|&(lo, hi)| (0.5 * (lo + hi), 0.5 * (hi - lo))).unzip()
}

/// Invariant level of the certificate within the system's polytope.
pub fn w_min_closed_form(cert: &QuadraticCertificate, sys: &LureSystem) -> Result<InvariantLevel> {
    let (centers, half) = polytope_geometry(sys);
    w_min_rows(&cert.p, &sys.c, &centers, &half)
}

/// Independent oracle: minimizes `xᵀPx` on each face `C_iᵀx = y` by solving
/// the KKT system `[2P C_i; C_iᵀ 0][x; ν] = [0; y]`.
pub fn w_min_bruteforce_rows(p: &DMatrix<f64>, c: &DMatrix<f64>, centers: &[f64], half_widths: &[f64]) -> Result<f64> {
    let n = p.nrows();
    let mut best = f64::INFINITY;
    for i in 0..c.nrows() {
        let mut k = DMatrix::zeros(n + 1, n + 1);
        k.view_mut((0, 0), (n, n)).copy_from(&(p * 2.0));
        for j in 0..n {
            k[(j, n)] = c[(i, j)];
            k[(n, j)] = c[(i, j)];
        }
        let lu = k.lu();
        for y in [centers[i] + half_widths[i], centers[i] - half_widths[i]] {
            let mut rhs = DVector::zeros(n + 1);
            rhs[n] = y;
            let sol = lu.solve(&rhs).ok_or(Error::SingularKkt)?;
            let x = sol.rows(0, n).into_owned();
            let w = x.dot(&(p * &x));
            if !w.is_finite() {
                return Err(Error::SingularKkt);
            }
            best = best.min(w);
        }
    }
    Ok(best)
}

pub fn w_min_bruteforce(cert: &QuadraticCertificate, sys: &LureSystem) -> Result<f64> {
    let (centers, half) = polytope_geometry(sys);
    w_min_bruteforce_rows(&cert.p, &sys.c, &centers, &half)
}

/// `x ∈ 𝒫` and `W(x) <= W^min`.
pub fn invariant_set_contains(
    cert: &QuadraticCertificate,
    level: &InvariantLevel,
    sys: &LureSystem,
    x: &DVector<f64>,
) -> bool {
    sys.in_polytope(x) && w_value(cert, x) <= level.w_min
}
