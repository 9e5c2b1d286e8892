//! Penalized, sum-to-zero constrained quadratic solver.
//!
//! Minimizes `½γᵀΨγ − ψᵀγ + λ Σ_k w_k|γ_k|` subject to `cᵀγ = 0` by
//! coordinate descent on an augmented Lagrangian, followed by an exact
//! solve on the active set. Every returned solution carries an explicit
//! KKT residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correction::QuadraticPieces;
use crate::error::{dim_err, Result, TarcoError};
use crate::linalg::inf_norm;
use crate::tree::{AggregationMatrix, TaxTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// `w_k = |L_k|^α`.
    WeightedL1 { alpha: f64 },
    /// `Σ_m ‖γ_{Desc(m)}‖₁`, i.e. `w_k` = number of ancestors-or-self of `k`.
    Descendant,
    /// Unit weights on a design without tree structure.
    Flat,
}

impl PenaltyKind {
    pub fn name(&self) -> String {
        match self {
            Self::WeightedL1 { alpha } => format!("wl1(alpha={alpha})"),
            Self::Descendant => "desc".to_string(),
            Self::Flat => "l1".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, tree: &TaxTree) -> Self {
        Self {
            kind,
            weights: penalty_weights(kind, tree).iter().copied().collect(),
        }
    }

    pub fn flat(dim: usize) -> Self {
        Self {
            kind: PenaltyKind::Flat,
            weights: vec![1.0; dim],
        }
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn value(&self, gamma: &DVector<f64>) -> f64 {
        gamma
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * g.abs())
            .sum()
    }
}

pub fn penalty_weights(kind: PenaltyKind, tree: &TaxTree) -> DVector<f64> {
    let t = tree.n_nodes();
    match kind {
        PenaltyKind::WeightedL1 { alpha } => {
            DVector::from_fn(t, |k, _| (tree.leaf_count(k) as f64).powf(alpha))
        }
        PenaltyKind::Descendant => DVector::from_fn(t, |k, _| tree.lineage(k).len() as f64),
        PenaltyKind::Flat => DVector::from_element(t, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Augmented-Lagrangian penalty relative to `tr Ψ / ‖c‖²`.
    pub rho: f64,
    /// Inner sweeps stop when no coordinate moves more than this (scaled).
    pub tol: f64,
    /// Budget of coordinate sweeps.
    pub max_iter: usize,
    /// KKT tolerance relative to the problem scale.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-10,
            max_iter: 20000,
            kkt_tol: 1e-8,
        }
    }
}

/// Node-level solution with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub gamma: DVector<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The objective is unbounded below at this λ; `gamma` is then the last
    /// iterate along a certified recession direction.
    pub unbounded: bool,
}

/// A quadratic with its constraint, factorized once for repeated solves.
#[derive(Debug, Clone)]
pub struct Problem {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    constraint: Option<DVector<f64>>,
    scale: f64,
    /// Orthonormal basis of the numerical null space of Ψ, if any.
    null_basis: Option<DMatrix<f64>>,
}

impl Problem {
    pub fn new(q: &QuadraticPieces, constraint: Option<&DVector<f64>>) -> Result<Self> {
        let t = q.dim();
        if q.gram.shape() != (t, t) {
            return Err(dim_err(
                "solver gram",
                format!("{t}x{t}"),
                format!("{}x{}", q.gram.nrows(), q.gram.ncols()),
            ));
        }
        if let Some(c) = constraint {
            if c.len() != t {
                return Err(dim_err("solver constraint", t, c.len()));
            }
        }
        let scale = q.gram.amax().max(q.cross.amax()).max(1.0);
        let eig = q.gram.clone().symmetric_eigen();
        let min_eig = if t == 0 { 0.0 } else { eig.eigenvalues.min() };
        let top = if t == 0 { 0.0 } else { eig.eigenvalues.max() };
        let null: Vec<usize> = (0..t)
            .filter(|&k| eig.eigenvalues[k] <= NULL_TOL * top.max(f64::MIN_POSITIVE))
            .collect();
        let null_basis = (!null.is_empty()).then(|| eig.eigenvectors.select_columns(&null));
        if min_eig < -1e-8 * scale {
            return Err(TarcoError::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self {
            gram: q.gram.clone(),
            cross: q.cross.clone(),
            constraint: constraint.cloned(),
            scale,
            null_basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DVector<f64> {
        &self.cross
    }

    pub fn constraint(&self) -> Option<&DVector<f64>> {
        self.constraint.as_ref()
    }

    pub fn objective(&self, gamma: &DVector<f64>, lambda: f64, weights: &DVector<f64>) -> f64 {
        let pen: f64 = gamma
            .iter()
            .zip(weights.iter())
            .map(|(g, w)| w * g.abs())
            .sum();
        0.5 * gamma.dot(&(&self.gram * gamma)) - self.cross.dot(gamma) + lambda * pen
    }

    /// Smallest λ at which `γ = 0` is optimal.
    pub fn lambda_max(&self, weights: &DVector<f64>) -> f64 {
        match &self.constraint {
            None => self
                .cross
                .iter()
                .zip(weights.iter())
                .fold(0.0f64, |m, (p, w)| m.max(p.abs() / w)),
            Some(c) => {
                let mut lines = Vec::with_capacity(2 * self.dim());
                for k in 0..self.dim() {
                    let (a, b) = (self.cross[k] / weights[k], c[k] / weights[k]);
                    lines.push((a, -b));
                    lines.push((-a, b));
                }
                minimize_envelope(&lines).1.max(0.0)
            }
        }
    }

    /// ℓ∞ KKT residual of `gamma` at level λ, minimized over the multiplier.
    pub fn kkt_residual(
        &self,
        gamma: &DVector<f64>,
        lambda: f64,
        weights: &DVector<f64>,
    ) -> (f64, f64) {
        let grad = &self.gram * gamma - &self.cross;
        let t = self.dim();
        let zero = DVector::zeros(t);
        let c = self.constraint.as_ref().unwrap_or(&zero);
        let mut lines = Vec::with_capacity(2 * t + 1);
        lines.push((0.0, 0.0));
        for k in 0..t {
            let thr = lambda * weights[k];
            if gamma[k] != 0.0 {
                let a = grad[k] + thr * gamma[k].signum();
                lines.push((a, c[k]));
                lines.push((-a, -c[k]));
            } else {
                lines.push((grad[k] - thr, c[k]));
                lines.push((-grad[k] - thr, -c[k]));
            }
        }
        if self.constraint.is_none() {
            let v = lines.iter().fold(0.0f64, |m, l| m.max(l.0));
            return (v, 0.0);
        }
        let (mu, v) = minimize_envelope(&lines);
        (v.max(0.0), mu)
    }

    /// Solves the equality-constrained stationarity system on `support`
    /// with the signs of `start`, taking the solution nearest to `start`
    /// (and multiplier `mu`), which also covers singular reduced systems.
    fn polish(
        &self,
        support: &[usize],
        start: &DVector<f64>,
        mu: f64,
        lambda: f64,
        weights: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let t = self.dim();
        let mut gamma = DVector::zeros(t);
        if support.is_empty() {
            return Some(gamma);
        }
        let s = support.len();
        let m = if self.constraint.is_some() { s + 1 } else { s };
        let mut sys = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        let mut x0 = DVector::zeros(m);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                sys[(a, b)] = self.gram[(i, j)];
            }
            rhs[a] = self.cross[i] - lambda * weights[i] * start[i].signum();
            x0[a] = start[i];
        }
        if let Some(c) = &self.constraint {
            for (a, &i) in support.iter().enumerate() {
                sys[(a, s)] = c[i];
                sys[(s, a)] = c[i];
            }
            x0[s] = mu;
        }
        let resid = &rhs - &sys * &x0;
        let svd = sys.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let x = x0 + svd.solve(&resid, cutoff).ok()?;
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (a, &i) in support.iter().enumerate() {
            gamma[i] = x[a];
        }
        Some(gamma)
    }

    fn certify(
        &self,
        gamma: DVector<f64>,
        lambda: f64,
        weights: &DVector<f64>,
        iterations: usize,
        tol: f64,
    ) -> Solution {
        let (kkt, mu) = self.kkt_residual(&gamma, lambda, weights);
        Solution {
            objective: self.objective(&gamma, lambda, weights),
            gamma,
            lambda,
            kkt_residual: kkt,
            multiplier: mu,
            iterations,
            converged: kkt <= tol,
            unbounded: false,
        }
    }

    fn unbounded_at(&self, gamma: DVector<f64>, lambda: f64, iterations: usize) -> Solution {
        Solution {
            gamma,
            lambda,
            objective: f64::NEG_INFINITY,
            kkt_residual: f64::INFINITY,
            multiplier: 0.0,
            iterations,
            converged: false,
            unbounded: true,
        }
    }

    /// True if the part of `d` in `null(Ψ) ∩ c⊥` decreases the penalized
    /// linear term, which certifies that the objective is unbounded below.
    fn is_recession_direction(
        &self,
        d: &DVector<f64>,
        lambda: f64,
        weights: &DVector<f64>,
    ) -> bool {
        let Some(basis) = &self.null_basis else {
            return false;
        };
        let mut dn = basis * basis.tr_mul(d);
        if let Some(c) = &self.constraint {
            let cn = basis * basis.tr_mul(c);
            let cc = cn.norm_squared();
            if cc > 1e-20 * c.norm_squared() {
                dn -= &cn * (c.dot(&dn) / cc);
            }
        }
        let norm = dn.norm();
        if norm <= 1e-8 * d.norm() || norm == 0.0 {
            return false;
        }
        let dn = dn / norm;
        let pen: f64 = dn
            .iter()
            .zip(weights.iter())
            .map(|(x, w)| w * x.abs())
            .sum();
        self.cross.dot(&dn) - lambda * pen > 1e-10 * self.scale
    }

    /// Restores `cᵀγ = 0` by a correction confined to the support.
    fn restore_feasibility(&self, gamma: &mut DVector<f64>) {
        let Some(c) = &self.constraint else { return };
        let viol = c.dot(gamma);
        let norm2: f64 = gamma
            .iter()
            .zip(c.iter())
            .filter(|(g, _)| **g != 0.0)
            .map(|(_, ci)| ci * ci)
            .sum();
        if viol != 0.0 && norm2 > 0.0 {
            for (g, ci) in gamma.iter_mut().zip(c.iter()) {
                if *g != 0.0 {
                    *g -= ci * viol / norm2;
                }
            }
        }
    }

    /// Sign-consistent coordinate descent on the augmented Lagrangian
    /// `f(γ) + μcᵀγ + ρ/2 (cᵀγ)²`, with multiplier updates between sweeps
    /// and an exact solve on the detected support.
    pub fn solve(
        &self,
        weights: &DVector<f64>,
        lambda: f64,
        warm_start: Option<&DVector<f64>>,
        opts: &SolverOptions,
    ) -> Result<Solution> {
        let t = self.dim();
        if weights.len() != t {
            return Err(dim_err("penalty weights", t, weights.len()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(TarcoError::Validation(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(TarcoError::Validation(
                "penalty weights must be positive".into(),
            ));
        }
        let tol = opts.kkt_tol * self.scale;
        if t == 0 {
            return Ok(self.certify(DVector::zeros(0), lambda, weights, 0, tol));
        }
        if lambda > 0.0 && lambda >= self.lambda_max(weights) {
            let zero = self.certify(DVector::zeros(t), lambda, weights, 0, tol);
            if zero.converged {
                return Ok(zero);
            }
        }
        let mut gamma = match warm_start {
            Some(ws) if ws.len() != t => return Err(dim_err("warm start", t, ws.len())),
            Some(ws) => ws.clone(),
            None => DVector::zeros(t),
        };
        self.restore_feasibility(&mut gamma);
        let cand = self.certify(gamma.clone(), lambda, weights, 0, tol);
        if cand.converged {
            return Ok(cand);
        }
        let mut best = cand;

        let zero = DVector::zeros(t);
        let c = self.constraint.as_ref().unwrap_or(&zero);
        let c_norm2 = c.norm_squared();
        let rho = if c_norm2 > 0.0 {
            opts.rho * self.gram.trace().max(f64::MIN_POSITIVE) / c_norm2
        } else {
            0.0
        };
        let diag: Vec<f64> = (0..t)
            .map(|k| self.gram[(k, k)] + rho * c[k] * c[k])
            .collect();
        let mut mu = best.multiplier;
        let mut q = &self.gram * &gamma;
        let mut s = c.dot(&gamma);
        let mut sweeps = 0;
        let mut last_pattern: Vec<(usize, bool)> = Vec::new();

        let mut outer = 0;
        let mut previous = gamma.clone();
        while sweeps < opts.max_iter {
            outer += 1;
            // inner minimization at fixed μ, in bounded chunks
            let mut inner_done = false;
            for _ in 0..INNER_SWEEPS {
                sweeps += 1;
                let mut change = 0.0f64;
                for k in 0..t {
                    if diag[k] <= 0.0 {
                        continue;
                    }
                    let g = q[k] - self.cross[k] + c[k] * (mu + rho * s);
                    let z = gamma[k] - g / diag[k];
                    let thr = lambda * weights[k] / diag[k];
                    let next = if z.abs() > thr {
                        z - thr.copysign(z)
                    } else {
                        0.0
                    };
                    let delta = next - gamma[k];
                    if delta != 0.0 {
                        q.axpy(delta, &self.gram.column(k), 1.0);
                        s += c[k] * delta;
                        gamma[k] = next;
                        change = change.max(delta.abs() * diag[k].sqrt());
                    }
                }
                if change <= opts.tol * self.scale.sqrt() || sweeps >= opts.max_iter {
                    inner_done = true;
                    break;
                }
            }
            if inner_done {
                mu += rho * s;
            }
            let step = &gamma - &previous;
            if !inner_done && self.is_recession_direction(&step, lambda, weights) {
                log::debug!("objective unbounded below at lambda={lambda:e}");
                return Ok(self.unbounded_at(gamma, lambda, sweeps));
            }
            previous.copy_from(&gamma);

            let support: Vec<usize> = (0..t).filter(|&k| gamma[k] != 0.0).collect();
            let pattern: Vec<(usize, bool)> =
                support.iter().map(|&k| (k, gamma[k] > 0.0)).collect();
            if pattern != last_pattern || outer % 10 == 0 {
                if let Some(exact) = self.polish(&support, &gamma, mu + rho * s, lambda, weights) {
                    let sol = self.certify(exact, lambda, weights, sweeps, tol);
                    if sol.converged {
                        return Ok(sol);
                    }
                    if sol.kkt_residual < best.kkt_residual {
                        best = sol;
                    }
                }
                last_pattern = pattern;
                let mut feas = gamma.clone();
                self.restore_feasibility(&mut feas);
                let sol = self.certify(feas, lambda, weights, sweeps, tol);
                if sol.converged {
                    return Ok(sol);
                }
                if sol.kkt_residual < best.kkt_residual {
                    best = sol;
                }
            }
        }
        best.iterations = sweeps;
        log::debug!(
            "solver did not certify at lambda={lambda:e}: kkt residual {:e}",
            best.kkt_residual
        );
        Ok(best)
    }
}

/// Relative eigenvalue level below which a direction counts as flat.
const NULL_TOL: f64 = 1e-10;

/// Coordinate sweeps between multiplier updates and polish attempts.
const INNER_SWEEPS: usize = 25;

/// Minimizes the upper envelope `max_i (α_i + β_i μ)` over μ, returning
/// `(μ*, value)`. Assumes the envelope is bounded below (slopes of both
/// signs, or all flat).
fn minimize_envelope(lines: &[(f64, f64)]) -> (f64, f64) {
    let eval = |mu: f64| {
        lines
            .iter()
            .fold(f64::NEG_INFINITY, |m, &(a, b)| m.max(a + b * mu))
    };
    let mut sorted: Vec<(f64, f64)> = lines.to_vec();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1).then(y.0.total_cmp(&x.0)));
    sorted.dedup_by(|next, prev| next.1 == prev.1);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for l in sorted {
        while hull.len() >= 2 {
            let (l1, l2) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // l2 is dominated if l1 and l meet left of (or at) l1 ∩ l2
            if (l1.0 - l.0) * (l2.1 - l1.1) <= (l1.0 - l2.0) * (l.1 - l1.1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    let cross = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0) / (b.1 - a.1);
    let Some(j) = hull.iter().position(|l| l.1 >= 0.0) else {
        return (0.0, eval(0.0));
    };
    let mu = if j > 0 {
        cross(hull[j - 1], hull[j])
    } else if hull[j].1 == 0.0 && hull.len() > 1 {
        cross(hull[0], hull[1])
    } else {
        0.0
    };
    (mu, eval(mu))
}

pub fn lambda_max(
    q: &QuadraticPieces,
    constraint: Option<&DVector<f64>>,
    weights: &DVector<f64>,
) -> Result<f64> {
    Ok(Problem::new(q, constraint)?.lambda_max(weights))
}

pub fn solve_tarco(
    q: &QuadraticPieces,
    constraint: Option<&DVector<f64>>,
    spec: &PenaltySpec,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<Solution> {
    Problem::new(q, constraint)?.solve(&spec.weight_vector(), lambda, warm_start, opts)
}

/// `n` log-spaced values from `lmax` down to `ratio · lmax`.
pub fn default_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lmax
            } else {
                (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(TarcoError::Validation("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(TarcoError::Validation(
            "lambda grid values must be finite and nonnegative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(TarcoError::Validation(
            "lambda grid must be strictly descending".into(),
        ));
    }
    Ok(())
}

/// Warm-started path over a strictly descending grid. Once the objective
/// is unbounded below, the remaining (smaller) λ are marked unbounded.
pub fn solve_path(
    problem: &Problem,
    weights: &DVector<f64>,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<Solution>> {
    check_grid(grid)?;
    let mut out: Vec<Solution> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        // unbounded at λ implies unbounded at every smaller λ
        if let Some(prev) = out.last().filter(|s| s.unbounded) {
            let mut next = prev.clone();
            next.lambda = lambda;
            next.iterations = 0;
            out.push(next);
            continue;
        }
        let warm = out.last().map(|s| s.gamma.clone());
        out.push(problem.solve(weights, lambda, warm.as_ref(), opts)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub label: String,
    pub value: f64,
}

/// A fit at one λ on both node and leaf scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub lambda: f64,
    pub penalty: PenaltySpec,
    pub gamma: Vec<Coefficient>,
    pub beta: Vec<Coefficient>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn coefficients(labels: &[String], v: &DVector<f64>) -> Vec<Coefficient> {
    labels
        .iter()
        .zip(v.iter())
        .map(|(l, &x)| Coefficient {
            label: l.clone(),
            value: if x == 0.0 { 0.0 } else { x },
        })
        .collect()
}

impl FitResult {
    pub fn from_tree(
        method: &str,
        sol: &Solution,
        spec: &PenaltySpec,
        tree: &TaxTree,
        agg: &AggregationMatrix,
    ) -> Result<Self> {
        let beta = agg.expand(&sol.gamma)?;
        Ok(Self::from_parts(
            method,
            sol,
            spec,
            tree.labels(),
            tree.leaf_labels(),
            &beta,
        ))
    }

    pub fn from_parts(
        method: &str,
        sol: &Solution,
        spec: &PenaltySpec,
        node_labels: &[String],
        leaf_labels: &[String],
        beta: &DVector<f64>,
    ) -> Self {
        Self {
            method: method.to_string(),
            lambda: sol.lambda,
            penalty: spec.clone(),
            gamma: coefficients(node_labels, &sol.gamma),
            beta: coefficients(leaf_labels, beta),
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            multiplier: sol.multiplier,
            iterations: sol.iterations,
            converged: sol.converged,
        }
    }

    pub fn gamma_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.gamma.len(), self.gamma.iter().map(|c| c.value))
    }

    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.beta.len(), self.beta.iter().map(|c| c.value))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn gamma_csv(&self) -> String {
        coef_csv("node", &self.gamma)
    }

    pub fn beta_csv(&self) -> String {
        coef_csv("taxon", &self.beta)
    }
}

fn coef_csv(key: &str, coefs: &[Coefficient]) -> String {
    let mut out = format!("{key},value\n");
    for c in coefs {
        out.push_str(&crate::io::csv_field(&c.label));
        out.push(',');
        out.push_str(&crate::io::fmt_f64(c.value));
        out.push('\n');
    }
    out
}

/// `max_k |γ_k|`; handy for zero-fit checks.
pub fn max_abs(v: &DVector<f64>) -> f64 {
    inf_norm(v)
}
